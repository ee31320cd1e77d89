//! Runs the estimator suite on one dataset and manifest.

use std::fmt;
use std::str::FromStr;

use crate::comparators::{fit_empirical_bayes, fit_generalized_ridge, ComparatorResult};
use crate::data::{enumerate_lattice, ExternalManifest, TrialDataset};
use crate::design::{
    build_constraints, build_design, build_weights, ConstraintSystem, DesignSystem, WeightMatrix,
    WeightScheme,
};
use crate::error::{Error, Result};
use crate::estimators::{fit_constrained, fit_unconstrained, FitResult, SubgroupEstimate};
use crate::shrinkage::{fit_james_stein, JamesSteinResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Unconstrained,
    Constrained,
    JamesStein,
    EmpiricalBayes,
    GeneralizedRidge,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Unconstrained,
        Estimator::Constrained,
        Estimator::JamesStein,
        Estimator::EmpiricalBayes,
        Estimator::GeneralizedRidge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Unconstrained => "unconstrained",
            Estimator::Constrained => "constrained",
            Estimator::JamesStein => "james_stein",
            Estimator::EmpiricalBayes => "empirical_bayes",
            Estimator::GeneralizedRidge => "generalized_ridge",
        }
    }

    /// Reconstructed comparators are flagged as such in reports.
    pub fn is_reconstruction(self) -> bool {
        matches!(self, Estimator::EmpiricalBayes | Estimator::GeneralizedRidge)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unconstrained" | "uc" => Ok(Estimator::Unconstrained),
            "constrained" | "c" => Ok(Estimator::Constrained),
            "james_stein" | "js" => Ok(Estimator::JamesStein),
            "empirical_bayes" | "eb" => Ok(Estimator::EmpiricalBayes),
            "generalized_ridge" | "ridge" | "gr" => Ok(Estimator::GeneralizedRidge),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Every estimator fitted to one dataset.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub design: DesignSystem,
    pub constraints: ConstraintSystem,
    pub weights: WeightMatrix,
    pub unconstrained: FitResult,
    pub constrained: FitResult,
    pub james_stein: JamesSteinResult,
    pub empirical_bayes: Option<ComparatorResult>,
    pub generalized_ridge: Option<ComparatorResult>,
}

impl Analysis {
    pub fn estimator(&self, est: Estimator) -> Option<&dyn SubgroupEstimate> {
        Some(match est {
            Estimator::Unconstrained => &self.unconstrained,
            Estimator::Constrained => &self.constrained,
            Estimator::JamesStein => &self.james_stein,
            Estimator::EmpiricalBayes => self.empirical_bayes.as_ref()?,
            Estimator::GeneralizedRidge => self.generalized_ridge.as_ref()?,
        })
    }
}

/// Fits the unconstrained, constrained and James–Stein estimators, plus the
/// comparators listed in `comparators`.
pub fn analyze(
    data: &TrialDataset,
    manifest: &ExternalManifest,
    scheme: &WeightScheme,
    comparators: &[Estimator],
) -> Result<Analysis> {
    let lattice = enumerate_lattice(data.schema())?;
    let design = build_design(data, &lattice)?;
    let constraints = build_constraints(&design, manifest)?;
    let weights = build_weights(scheme, data, &lattice)?;
    let y = data.outcomes();
    let unconstrained = fit_unconstrained(&design, &y)?;
    let constrained = fit_constrained(&unconstrained, &constraints, &design)?;
    let james_stein = fit_james_stein(&unconstrained, &constrained, &constraints, &design, &weights)?;
    let empirical_bayes = if comparators.contains(&Estimator::EmpiricalBayes) {
        Some(fit_empirical_bayes(
            &unconstrained,
            &constrained,
            &constraints,
            &design,
        )?)
    } else {
        None
    };
    let generalized_ridge = if comparators.contains(&Estimator::GeneralizedRidge) {
        Some(fit_generalized_ridge(&design, &y, &constraints, manifest)?)
    } else {
        None
    };
    Ok(Analysis {
        design,
        constraints,
        weights,
        unconstrained,
        constrained,
        james_stein,
        empirical_bayes,
        generalized_ridge,
    })
}
