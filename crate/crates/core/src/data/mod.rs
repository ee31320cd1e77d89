//! Trial records, covariate schemas, subgroup lattices and external manifests.

mod lattice;
mod manifest;
mod trial;

pub use lattice::{enumerate_lattice, SubgroupLattice};
pub use manifest::{
    ci_to_variance, load_manifest, parse_manifest, variance_to_ci, ExternalManifest,
    ManifestEntry, MarginalSubgroup, Z_975,
};
pub use trial::{infer_schema, load_trial, read_trial, write_trial};

use crate::error::{Error, Result};

/// A categorical covariate and its ordered level labels. Level `0` is the reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Covariate {
    pub name: String,
    pub levels: Vec<String>,
}

impl Covariate {
    pub fn new(name: impl Into<String>, levels: &[&str]) -> Self {
        Self {
            name: name.into(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateSchema {
    covariates: Vec<Covariate>,
}

impl CovariateSchema {
    pub fn new(covariates: Vec<Covariate>) -> Result<Self> {
        if covariates.is_empty() {
            return Err(Error::Schema("at least one covariate is required".into()));
        }
        for (i, c) in covariates.iter().enumerate() {
            if c.name.is_empty() || c.name == "outcome" || c.name == "treatment" {
                return Err(Error::Schema(format!("invalid covariate name `{}`", c.name)));
            }
            if covariates[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate covariate `{}`", c.name)));
            }
            if c.levels.is_empty() {
                return Err(Error::TooFewLevels(c.name.clone()));
            }
            for (j, l) in c.levels.iter().enumerate() {
                if l.is_empty() || c.levels[..j].contains(l) {
                    return Err(Error::Schema(format!(
                        "covariate `{}` has an empty or repeated level `{l}`",
                        c.name
                    )));
                }
            }
        }
        Ok(Self { covariates })
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.covariates.iter().map(|c| c.levels.len()).collect()
    }

    /// Human-readable label for a full covariate profile, e.g. `sex=F;race=White`.
    pub fn profile_label(&self, profile: &[usize]) -> String {
        self.covariates
            .iter()
            .zip(profile)
            .map(|(c, &l)| format!("{}={}", c.name, c.levels[l]))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// One trial participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub outcome: f64,
    /// Level index per schema covariate.
    pub covariates: Vec<usize>,
    pub treated: bool,
}

/// Validated individual-level internal trial data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    schema: CovariateSchema,
    records: Vec<Record>,
}

impl TrialDataset {
    pub fn new(schema: CovariateSchema, records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Config("a trial dataset needs at least one record".into()));
        }
        let counts = schema.level_counts();
        for (i, r) in records.iter().enumerate() {
            if !r.outcome.is_finite() {
                return Err(Error::BadOutcome {
                    row: i + 1,
                    value: r.outcome.to_string(),
                });
            }
            if r.covariates.len() != counts.len() {
                return Err(Error::Dimension(format!(
                    "record {} has {} covariates, schema has {}",
                    i + 1,
                    r.covariates.len(),
                    counts.len()
                )));
            }
            for (j, (&level, &k)) in r.covariates.iter().zip(&counts).enumerate() {
                if level >= k {
                    return Err(Error::UnmappedLevel {
                        row: i + 1,
                        covariate: schema.covariates[j].name.clone(),
                        level: level.to_string(),
                    });
                }
            }
        }
        Ok(Self { schema, records })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.outcome).collect()
    }
}

/// True fine-grained and marginal internal CATEs; only known in simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalTargets {
    pub tau: Vec<f64>,
    pub gamma: Vec<f64>,
}
