use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::data::{
    Covariate, CovariateSchema, ExternalManifest, InternalTargets, ManifestEntry,
    MarginalSubgroup, Record, TrialDataset,
};
use crate::error::{Error, Result};

/// Two-binary-moderator potential-outcome model
/// `Y(a) = c₀ + c₁X₁ + c₂X₂ + c₁₂X₁X₂ + ε_(a)` with `c = η` (control) or `ζ` (treated).
#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub n: usize,
    pub p1: f64,
    pub p2: f64,
    pub eta: [f64; 4],
    pub zeta: [f64; 4],
    pub sigma0: f64,
    pub sigma1: f64,
    pub treat_prob: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        let eta = [-2.0, 1.0, 1.0, 0.5];
        let effect = [2.0, 1.0, 1.0, 0.5];
        let mut zeta = eta;
        for (z, e) in zeta.iter_mut().zip(effect) {
            *z += e;
        }
        Self {
            n: 500,
            p1: 0.5,
            p2: 0.5,
            eta,
            zeta,
            sigma0: 1.0,
            sigma1: 2.0,
            treat_prob: 0.5,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        prob("p1", self.p1)?;
        prob("p2", self.p2)?;
        prob("treat_prob", self.treat_prob)?;
        if self.n < 20 {
            return Err(Error::Config(format!("n must be at least 20, got {}", self.n)));
        }
        for (name, s) in [("sigma0", self.sigma0), ("sigma1", self.sigma1)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if self.eta.iter().chain(&self.zeta).any(|v| !v.is_finite()) {
            return Err(Error::Config("outcome coefficients must be finite".into()));
        }
        Ok(())
    }

    fn effect(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.zeta[i] - self.eta[i])
    }
}

/// Schema of simulated data: `x1, x2 ∈ {0, 1}`.
pub fn dgp_schema() -> CovariateSchema {
    CovariateSchema::new(vec![
        Covariate::new("x1", &["0", "1"]),
        Covariate::new("x2", &["0", "1"]),
    ])
    .expect("static schema is valid")
}

/// True subgroup CATEs in lattice order `(0,0),(0,1),(1,0),(1,1)` and the
/// marginal CATEs for `X₁=0, X₁=1, X₂=0`.
pub fn true_effects(cfg: &DgpConfig) -> Result<InternalTargets> {
    let d = cfg.effect();
    let tau_at = |x1: f64, x2: f64| d[0] + d[1] * x1 + d[2] * x2 + d[3] * x1 * x2;
    let tau = vec![tau_at(0.0, 0.0), tau_at(0.0, 1.0), tau_at(1.0, 0.0), tau_at(1.0, 1.0)];
    let over_x2 = |x1: f64| (1.0 - cfg.p2) * tau_at(x1, 0.0) + cfg.p2 * tau_at(x1, 1.0);
    let gamma = vec![
        over_x2(0.0),
        over_x2(1.0),
        (1.0 - cfg.p1) * tau_at(0.0, 0.0) + cfg.p1 * tau_at(1.0, 0.0),
    ];
    if gamma.contains(&0.0) {
        return Err(Error::Config(
            "zero marginal CATE: the relative incompatibility index is undefined".into(),
        ));
    }
    Ok(InternalTargets { tau, gamma })
}

/// Identifies one replication's random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicationSeed {
    pub base_seed: u64,
    pub e_index: u32,
    pub replication: u32,
}

impl ReplicationSeed {
    /// Counter-based generator: the key comes from the base seed, the stream
    /// from `(e_index, replication)`, so streams never overlap.
    pub fn rng(self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.base_seed);
        rng.set_stream((u64::from(self.e_index) << 32) | u64::from(self.replication));
        rng
    }
}

pub fn generate_replication(cfg: &DgpConfig, seed: ReplicationSeed) -> Result<TrialDataset> {
    cfg.validate()?;
    let mut rng = seed.rng();
    let records = (0..cfg.n)
        .map(|_| {
            let x1 = rng.random::<f64>() < cfg.p1;
            let x2 = rng.random::<f64>() < cfg.p2;
            let treated = rng.random::<f64>() < cfg.treat_prob;
            let z: f64 = rng.sample(StandardNormal);
            let (c, sigma) = if treated {
                (&cfg.zeta, cfg.sigma1)
            } else {
                (&cfg.eta, cfg.sigma0)
            };
            let (a, b) = (x1 as u8 as f64, x2 as u8 as f64);
            let mean = c[0] + c[1] * a + c[2] * b + c[3] * a * b;
            Record {
                outcome: mean + sigma * z,
                covariates: vec![x1 as usize, x2 as usize],
                treated,
            }
        })
        .collect();
    TrialDataset::new(dgp_schema(), records)
}

/// External estimates `γ̂_E = (1 + e)·γ_I` for `X₁=0, X₁=1, X₂=0`.
pub fn synthetic_manifest(
    targets: &InternalTargets,
    e: f64,
    external_variance: f64,
) -> Result<ExternalManifest> {
    if targets.gamma.len() != 3 {
        return Err(Error::Dimension(format!(
            "expected 3 marginal targets, got {}",
            targets.gamma.len()
        )));
    }
    let schema = dgp_schema();
    let subgroups = [vec![(0, 0)], vec![(0, 1)], vec![(1, 0)]];
    let entries = subgroups
        .into_iter()
        .zip(&targets.gamma)
        .map(|(c, &g)| {
            Ok(ManifestEntry {
                subgroup: MarginalSubgroup::new(c, &schema)?,
                estimate: (1.0 + e) * g,
                variance: external_variance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ExternalManifest::new(entries, format!("synthetic e={e}"), &schema)
}
