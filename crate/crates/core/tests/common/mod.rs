#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use subgroup_shrink::data::{
    Covariate, CovariateSchema, ExternalManifest, ManifestEntry, MarginalSubgroup, Record,
    TrialDataset,
};

pub fn two_binary_schema() -> CovariateSchema {
    CovariateSchema::new(vec![
        Covariate::new("x1", &["0", "1"]),
        Covariate::new("x2", &["0", "1"]),
    ])
    .unwrap()
}

/// Random two-binary dataset with at least two units in every cell and arm.
pub fn random_dataset(seed: u64, n: usize) -> TrialDataset {
    assert!(n >= 16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let effects: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
    let base: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let (cell, treated) = if i < 16 {
            (i / 4, i % 2 == 0)
        } else {
            (rng.random_range(0..4), rng.random_bool(0.5))
        };
        let noise: f64 = rng.sample(StandardNormal);
        let sd = if treated { 1.5 } else { 0.7 };
        let mean = base[cell] + if treated { effects[cell] } else { 0.0 };
        records.push(Record {
            outcome: mean + sd * noise,
            covariates: vec![cell / 2, cell % 2],
            treated,
        });
    }
    TrialDataset::new(two_binary_schema(), records).unwrap()
}

/// Manifest on `x1=0`, `x1=1`, `x2=0` with the given estimates.
pub fn three_margin_manifest(estimates: [f64; 3], variance: f64) -> ExternalManifest {
    let schema = two_binary_schema();
    let entries = [vec![(0, 0)], vec![(0, 1)], vec![(1, 0)]]
        .into_iter()
        .zip(estimates)
        .map(|(c, estimate)| ManifestEntry {
            subgroup: MarginalSubgroup::new(c, &schema).unwrap(),
            estimate,
            variance,
        })
        .collect();
    ExternalManifest::new(entries, "test", &schema).unwrap()
}

pub fn ate_manifest(estimate: f64, variance: f64) -> ExternalManifest {
    let schema = two_binary_schema();
    let entries = vec![ManifestEntry {
        subgroup: MarginalSubgroup::new(vec![], &schema).unwrap(),
        estimate,
        variance,
    }];
    ExternalManifest::new(entries, "test", &schema).unwrap()
}

pub struct CellStats {
    pub n1: usize,
    pub n0: usize,
    pub diff: f64,
    pub neyman_variance: f64,
}

/// Stratified difference in means and Neyman variance per lattice cell,
/// cells ordered with the last covariate fastest.
pub fn cell_stats(data: &TrialDataset) -> Vec<CellStats> {
    let mut groups: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![], vec![]); 4];
    for r in data.records() {
        let cell = r.covariates[0] * 2 + r.covariates[1];
        if r.treated {
            groups[cell].0.push(r.outcome);
        } else {
            groups[cell].1.push(r.outcome);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    groups
        .iter()
        .map(|(t, c)| CellStats {
            n1: t.len(),
            n0: c.len(),
            diff: mean(t) - mean(c),
            neyman_variance: var(t) / t.len() as f64 + var(c) / c.len() as f64,
        })
        .collect()
}

/// Plug-in Jacobian written out entry by entry.
pub fn jacobian_oracle(
    nu: f64,
    n: f64,
    delta: &DVector<f64>,
    l: &DMatrix<f64>,
    w: &[f64],
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> DMatrix<f64> {
    let p = delta.len();
    let (g, q) = (l.nrows(), c.nrows());
    let mut gamma = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            for k in 0..g {
                gamma[i][j] += w[k] * l[(k, i)] * l[(k, j)];
            }
        }
    }
    let mut bc = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            for k in 0..q {
                bc[i][j] += b[(i, k)] * c[(k, j)];
            }
        }
    }
    let mut d = 0.0;
    for i in 0..p {
        for j in 0..p {
            d += delta[i] * gamma[i][j] * delta[j];
        }
    }
    // row vector Δᵀ Γ BC
    let mut row = vec![0.0; p];
    for j in 0..p {
        for k in 0..p {
            let mut gbc = 0.0;
            for m in 0..p {
                gbc += gamma[k][m] * bc[m][j];
            }
            row[j] += delta[k] * gbc;
        }
    }
    DMatrix::from_fn(p, p, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - nu / (n * d) * bc[i][j] + 2.0 * nu / (n * d * d) * delta[i] * row[j]
    })
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
