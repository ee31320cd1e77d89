use std::fmt::Write as _;
use std::path::Path;

use super::CovariateSchema;
use crate::error::{Error, Result};

/// Upper 97.5% standard normal quantile used to invert published 95% intervals.
pub const Z_975: f64 = 1.959963984540054;

/// A coarsened subgroup fixing the levels of some covariates. An empty
/// constraint list denotes the whole population (an ATE entry).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarginalSubgroup {
    /// `(covariate index, level index)`, sorted by covariate index.
    pub constraints: Vec<(usize, usize)>,
    pub label: String,
}

impl MarginalSubgroup {
    pub fn new(mut constraints: Vec<(usize, usize)>, schema: &CovariateSchema) -> Result<Self> {
        constraints.sort_unstable();
        for w in constraints.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Manifest(format!(
                    "covariate `{}` constrained twice in one subgroup",
                    schema.covariates()[w[0].0].name
                )));
            }
        }
        for &(c, l) in &constraints {
            let cov = schema
                .covariates()
                .get(c)
                .ok_or_else(|| Error::Manifest(format!("covariate index {c} out of range")))?;
            if l >= cov.levels.len() {
                return Err(Error::Manifest(format!(
                    "level index {l} out of range for `{}`",
                    cov.name
                )));
            }
        }
        let label = if constraints.is_empty() {
            "all".to_string()
        } else {
            constraints
                .iter()
                .map(|&(c, l)| {
                    let cov = &schema.covariates()[c];
                    format!("{}={}", cov.name, cov.levels[l])
                })
                .collect::<Vec<_>>()
                .join(",")
        };
        Ok(Self { constraints, label })
    }

    pub fn is_ate(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Fixed level of covariate `c`, if constrained.
    pub fn level_of(&self, c: usize) -> Option<usize> {
        self.constraints
            .iter()
            .find(|(ci, _)| *ci == c)
            .map(|(_, l)| *l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub subgroup: MarginalSubgroup,
    pub estimate: f64,
    pub variance: f64,
}

/// External marginal-subgroup CATE estimates with their variances.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalManifest {
    entries: Vec<ManifestEntry>,
    pub source_label: String,
}

impl ExternalManifest {
    pub fn new(
        entries: Vec<ManifestEntry>,
        source_label: impl Into<String>,
        schema: &CovariateSchema,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Manifest("at least one entry is required".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if !e.estimate.is_finite() {
                return Err(Error::Manifest(format!(
                    "estimate for `{}` is not finite",
                    e.subgroup.label
                )));
            }
            if !(e.variance.is_finite() && e.variance >= 0.0) {
                return Err(Error::Manifest(format!(
                    "variance for `{}` must be finite and nonnegative",
                    e.subgroup.label
                )));
            }
            if e.subgroup.constraints.len() == schema.len() {
                return Err(Error::NotCoarser(e.subgroup.label.clone()));
            }
            if entries[..i]
                .iter()
                .any(|o| o.subgroup.constraints == e.subgroup.constraints)
            {
                return Err(Error::DuplicateSubgroup(e.subgroup.label.clone()));
            }
        }
        Ok(Self {
            entries,
            source_label: source_label.into(),
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn q(&self) -> usize {
        self.entries.len()
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.estimate).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.variance).collect()
    }

    /// Same subgroups and variances with replaced point estimates.
    pub fn with_estimates(&self, estimates: &[f64]) -> Result<Self> {
        if estimates.len() != self.q() {
            return Err(Error::Dimension(format!(
                "{} estimates for a manifest with {} entries",
                estimates.len(),
                self.q()
            )));
        }
        let mut out = self.clone();
        for (e, &v) in out.entries.iter_mut().zip(estimates) {
            e.estimate = v;
        }
        Ok(out)
    }

    /// Serializes to the text format `parse_manifest` accepts, using variances.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "source: {}", self.source_label);
        for e in &self.entries {
            let _ = writeln!(s);
            let _ = writeln!(s, "subgroup: {}", e.subgroup.label);
            let _ = writeln!(s, "estimate: {:?}", e.estimate);
            let _ = writeln!(s, "variance: {:?}", e.variance);
        }
        s
    }
}

/// Variance implied by a symmetric normal 95% interval.
pub fn ci_to_variance(lower: f64, upper: f64) -> f64 {
    let se = (upper - lower) / (2.0 * Z_975);
    se * se
}

pub fn variance_to_ci(estimate: f64, variance: f64) -> (f64, f64) {
    let half = Z_975 * variance.sqrt();
    (estimate - half, estimate + half)
}

pub fn load_manifest(path: impl AsRef<Path>, schema: &CovariateSchema) -> Result<ExternalManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, schema)
}

#[derive(Default)]
struct PendingEntry {
    line: usize,
    subgroup: Option<MarginalSubgroup>,
    estimate: Option<f64>,
    variance: Option<f64>,
    ci: Option<(f64, f64)>,
}

impl PendingEntry {
    fn finish(self) -> Result<ManifestEntry> {
        let subgroup = self.subgroup.expect("entries start at a subgroup line");
        let estimate = self.estimate.ok_or_else(|| Error::ManifestSyntax {
            line: self.line,
            message: format!("entry `{}` has no estimate", subgroup.label),
        })?;
        let variance = match (self.variance, self.ci) {
            (Some(v), None) => v,
            (None, Some((lo, hi))) => {
                if hi < lo {
                    return Err(Error::InvertedInterval(subgroup.label));
                }
                ci_to_variance(lo, hi)
            }
            _ => {
                return Err(Error::ManifestSyntax {
                    line: self.line,
                    message: format!(
                        "entry `{}` needs exactly one of `variance` or `ci95`",
                        subgroup.label
                    ),
                })
            }
        };
        Ok(ManifestEntry {
            subgroup,
            estimate,
            variance,
        })
    }
}

fn parse_real(value: &str, line: usize) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::ManifestSyntax {
            line,
            message: format!("`{value}` is not a finite number"),
        })
}

fn parse_subgroup(value: &str, schema: &CovariateSchema, line: usize) -> Result<MarginalSubgroup> {
    let value = value.trim();
    if value.is_empty() || value == "all" || value == "*" {
        return MarginalSubgroup::new(Vec::new(), schema);
    }
    let mut constraints = Vec::new();
    for part in value.split(',') {
        let (name, level) = part.split_once('=').ok_or_else(|| Error::ManifestSyntax {
            line,
            message: format!("expected `<covariate>=<level>`, got `{part}`"),
        })?;
        let (name, level) = (name.trim(), level.trim());
        let c = schema.position(name).ok_or_else(|| Error::ManifestSyntax {
            line,
            message: format!("unknown covariate `{name}`"),
        })?;
        let l = schema.covariates()[c]
            .level_index(level)
            .ok_or_else(|| Error::ManifestSyntax {
                line,
                message: format!("unknown level `{level}` for covariate `{name}`"),
            })?;
        constraints.push((c, l));
    }
    MarginalSubgroup::new(constraints, schema).map_err(|e| Error::ManifestSyntax {
        line,
        message: e.to_string(),
    })
}

/// Parses the `key: value` manifest format.
///
/// ```text
/// source: STEP 1
///
/// subgroup: race=White
/// estimate: -13.1
/// ci95: -14.1, -12.0
/// ```
///
/// Each `subgroup:` line opens a new entry; `#` starts a comment.
pub fn parse_manifest(text: &str, schema: &CovariateSchema) -> Result<ExternalManifest> {
    let mut source = String::new();
    let mut entries = Vec::new();
    let mut pending: Option<PendingEntry> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| Error::ManifestSyntax {
            line: line_no,
            message: format!("expected `key: value`, got `{line}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key == "subgroup" {
            if let Some(p) = pending.take() {
                entries.push(p.finish()?);
            }
            pending = Some(PendingEntry {
                line: line_no,
                subgroup: Some(parse_subgroup(value, schema, line_no)?),
                ..Default::default()
            });
            continue;
        }
        if key == "source" {
            source = value.to_string();
            continue;
        }
        let entry = pending.as_mut().ok_or_else(|| Error::ManifestSyntax {
            line: line_no,
            message: format!("`{key}` appears before any `subgroup`"),
        })?;
        let duplicate = || Error::ManifestSyntax {
            line: line_no,
            message: format!("`{key}` given twice for one entry"),
        };
        match key {
            "estimate" => {
                if entry.estimate.replace(parse_real(value, line_no)?).is_some() {
                    return Err(duplicate());
                }
            }
            "variance" => {
                if entry.variance.replace(parse_real(value, line_no)?).is_some() {
                    return Err(duplicate());
                }
            }
            "ci95" => {
                let (lo, hi) = value.split_once(',').ok_or_else(|| Error::ManifestSyntax {
                    line: line_no,
                    message: "ci95 expects `<low>,<high>`".into(),
                })?;
                let bounds = (parse_real(lo, line_no)?, parse_real(hi, line_no)?);
                if entry.ci.replace(bounds).is_some() {
                    return Err(duplicate());
                }
            }
            other => {
                return Err(Error::ManifestSyntax {
                    line: line_no,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
    }
    if let Some(p) = pending.take() {
        entries.push(p.finish()?);
    }
    ExternalManifest::new(entries, source, schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Covariate;
    use approx::assert_relative_eq;

    fn schema() -> CovariateSchema {
        CovariateSchema::new(vec![
            Covariate::new("sex", &["F", "M"]),
            Covariate::new("race", &["Asian", "White"]),
        ])
        .unwrap()
    }

    #[test]
    fn published_intervals_invert_to_variances() {
        let text = "source: STEP 1\nsubgroup: race=White\nestimate: -13.1\nci95: -14.1, -12.0\n";
        let m = parse_manifest(text, &schema()).unwrap();
        assert_eq!(m.q(), 1);
        assert_eq!(m.source_label, "STEP 1");
        let e = &m.entries()[0];
        assert_eq!(e.estimate, -13.1);
        assert_relative_eq!(e.variance, 0.2870, epsilon = 5e-5);

        let text = "subgroup: race=White\nestimate: -7.22\nci95: -8.61,-5.82\n";
        let m = parse_manifest(text, &schema()).unwrap();
        let oracle = ((-5.82f64 + 8.61) / (2.0 * 1.959963984540054)).powi(2);
        assert_relative_eq!(m.entries()[0].variance, oracle, epsilon = 1e-12);
        assert!((m.entries()[0].variance - 0.507).abs() < 1e-3);
    }

    #[test]
    fn duplicate_subgroup_rejected() {
        let text = "subgroup: sex=F\nestimate: 1\nvariance: 0.1\n\
                    subgroup: sex=F\nestimate: 2\nvariance: 0.1\n";
        let err = parse_manifest(text, &schema()).unwrap_err();
        assert!(err.to_string().contains("duplicate subgroup"));
    }

    #[test]
    fn inverted_interval_rejected() {
        let text = "subgroup: sex=F\nestimate: 1\nci95: 2, 1\n";
        assert!(matches!(
            parse_manifest(text, &schema()),
            Err(Error::InvertedInterval(_))
        ));
    }

    #[test]
    fn full_profile_is_not_coarser() {
        let text = "subgroup: sex=F,race=White\nestimate: 1\nvariance: 0.1\n";
        assert!(matches!(
            parse_manifest(text, &schema()),
            Err(Error::NotCoarser(_))
        ));
    }

    #[test]
    fn exactly_one_of_variance_or_ci() {
        let both = "subgroup: sex=F\nestimate: 1\nvariance: 0.1\nci95: 0,2\n";
        assert!(parse_manifest(both, &schema()).is_err());
        let neither = "subgroup: sex=F\nestimate: 1\n";
        assert!(parse_manifest(neither, &schema()).is_err());
    }

    #[test]
    fn ate_entry_and_text_round_trip() {
        let text = "source: x\nsubgroup: all\nestimate: -2.5\nvariance: 0.01\n\
                    subgroup: race=Asian\nestimate: 0.125\nvariance: 0\n";
        let m = parse_manifest(text, &schema()).unwrap();
        assert!(m.entries()[0].subgroup.is_ate());
        let again = parse_manifest(&m.to_text(), &schema()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn unknown_level_is_syntax_error() {
        let text = "subgroup: race=Martian\nestimate: 1\nvariance: 1\n";
        assert!(matches!(
            parse_manifest(text, &schema()),
            Err(Error::ManifestSyntax { line: 1, .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn ci_inversion_round_trips(est in -50.0f64..50.0, lo_off in 0.001f64..20.0, hi_off in 0.001f64..20.0) {
            // symmetric intervals are the only ones that survive the inversion
            let half = 0.5 * (lo_off + hi_off);
            let (lo, hi) = (est - half, est + half);
            let v = ci_to_variance(lo, hi);
            let (lo2, hi2) = variance_to_ci(est, v);
            proptest::prop_assert!((lo2 - lo).abs() <= 1e-9 * lo.abs().max(1.0));
            proptest::prop_assert!((hi2 - hi).abs() <= 1e-9 * hi.abs().max(1.0));
        }
    }
}
