//! Saturated centered design, residualized interaction design, CATE map,
//! constraint matrix and target-risk weights.

use nalgebra::{DMatrix, DVector};

use crate::data::{ExternalManifest, MarginalSubgroup, SubgroupLattice, TrialDataset};
use crate::error::{Error, Result};
use crate::linalg::{self, FullRankQr};

/// Relative tolerance for the annihilator check `HᵀK = 0`.
const ANNIHILATOR_TOL: f64 = 1e-10;
const CONSTRAINT_TOL: f64 = 1e-8;

/// One regressor of the saturated expansion: a product of centered dummies,
/// one per listed `(covariate, non-reference level)`. The empty term is the intercept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term(pub Vec<(usize, usize)>);

impl Term {
    /// Evaluates the term with each covariate's centered dummy; covariates the
    /// lookup maps to `None` make the whole term vanish.
    fn eval(&self, means: &[Vec<f64>], level_of: impl Fn(usize) -> Option<usize>) -> f64 {
        self.0.iter().fold(1.0, |acc, &(c, l)| match level_of(c) {
            Some(x) => acc * ((x == l) as u8 as f64 - means[c][l]),
            None => 0.0,
        })
    }
}

/// Terms ordered by interaction degree, then covariate subset, then levels.
/// For two binary covariates this is `1, X1, X2, X1·X2`.
pub fn expansion_terms(level_counts: &[usize]) -> Vec<Term> {
    let m = level_counts.len();
    let mut terms = Vec::new();
    for degree in 0..=m {
        for subset in combinations(m, degree) {
            let mut levels = vec![1usize; degree];
            'odometer: loop {
                terms.push(Term(subset.iter().copied().zip(levels.iter().copied()).collect()));
                // advance over non-reference levels, last position fastest
                let mut pos = degree;
                loop {
                    if pos == 0 {
                        break 'odometer;
                    }
                    pos -= 1;
                    levels[pos] += 1;
                    if levels[pos] < level_counts[subset[pos]] {
                        break;
                    }
                    levels[pos] = 1;
                }
            }
        }
    }
    terms
}

fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, k, &mut Vec::new(), &mut out);
    out
}

/// All matrices derived from the internal trial.
#[derive(Debug, Clone)]
pub struct DesignSystem {
    pub h: DMatrix<f64>,
    pub da_h: DMatrix<f64>,
    /// `M·D_A·H` with `M` the annihilator of `H`.
    pub k: DMatrix<f64>,
    /// Maps treatment-heterogeneity coefficients to subgroup CATEs.
    pub l: DMatrix<f64>,
    /// Empirical frequency of each level, per covariate.
    pub covariate_means: Vec<Vec<f64>>,
    pub terms: Vec<Term>,
    pub subgroup_labels: Vec<String>,
    /// Fine subgroup index of each record.
    pub subgroup_of: Vec<usize>,
    pub subgroup_counts: Vec<usize>,
    pub treated: Vec<bool>,
    pub(crate) k_qr: FullRankQr,
    pub(crate) joint_qr: FullRankQr,
}

impl DesignSystem {
    pub fn p(&self) -> usize {
        self.terms.len()
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn g(&self) -> usize {
        self.l.nrows()
    }

    /// `[H, D_A·H]`.
    pub fn joint_design(&self) -> DMatrix<f64> {
        let (n, p) = self.h.shape();
        let mut x = DMatrix::zeros(n, 2 * p);
        x.columns_mut(0, p).copy_from(&self.h);
        x.columns_mut(p, p).copy_from(&self.da_h);
        x
    }

    /// Solves `(KᵀK) x = rhs`.
    pub fn gram_solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.k_qr.gram_solve(rhs)
    }

    /// Expansion row of a (possibly partial) covariate profile: unconstrained
    /// covariates zero every term they appear in.
    pub fn expansion_row(&self, level_of: impl Fn(usize) -> Option<usize> + Copy) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| t.eval(&self.covariate_means, level_of))
            .collect()
    }

    pub fn constraint_row(&self, subgroup: &MarginalSubgroup) -> Vec<f64> {
        self.expansion_row(|c| subgroup.level_of(c))
    }
}

pub fn build_design(data: &TrialDataset, lattice: &SubgroupLattice) -> Result<DesignSystem> {
    let schema = data.schema();
    if lattice.level_counts() != schema.level_counts().as_slice() {
        return Err(Error::Dimension("lattice does not match the dataset schema".into()));
    }
    let n = data.n();
    let g = lattice.len();
    let labels: Vec<String> = lattice
        .profiles()
        .iter()
        .map(|p| schema.profile_label(p))
        .collect();

    let mut subgroup_of = Vec::with_capacity(n);
    let mut arm_counts = vec![[0usize; 2]; g];
    for r in data.records() {
        let idx = lattice
            .index_of(&r.covariates)
            .expect("records were validated against the schema");
        subgroup_of.push(idx);
        arm_counts[idx][r.treated as usize] += 1;
    }
    for (idx, counts) in arm_counts.iter().enumerate() {
        for (arm, name) in [(0, "control"), (1, "treated")] {
            if counts[arm] == 0 {
                return Err(Error::Unidentified {
                    subgroup: labels[idx].clone(),
                    arm: name,
                });
            }
        }
    }

    let counts = schema.level_counts();
    let mut means: Vec<Vec<f64>> = counts.iter().map(|&k| vec![0.0; k]).collect();
    for r in data.records() {
        for (c, &l) in r.covariates.iter().enumerate() {
            means[c][l] += 1.0;
        }
    }
    for m in means.iter_mut() {
        for v in m.iter_mut() {
            *v /= n as f64;
        }
    }

    let terms = expansion_terms(&counts);
    let p = terms.len();
    debug_assert_eq!(p, g);

    let h = DMatrix::from_fn(n, p, |i, j| {
        let rec = &data.records()[i];
        terms[j].eval(&means, |c| Some(rec.covariates[c]))
    });
    let mut da_h = h.clone();
    for (i, r) in data.records().iter().enumerate() {
        if !r.treated {
            da_h.row_mut(i).fill(0.0);
        }
    }
    let l = DMatrix::from_fn(g, p, |gi, j| {
        let profile = &lattice.profiles()[gi];
        terms[j].eval(&means, |c| Some(profile[c]))
    });

    let h_qr = FullRankQr::new(&h, "HᵀH")?;
    let k = h_qr.residualize(&da_h);
    let scale = h.norm() * da_h.norm();
    let cross = linalg::max_abs(&h.tr_mul(&k));
    if cross > ANNIHILATOR_TOL * scale.max(1.0) {
        return Err(Error::Invariant(format!(
            "residualized design is not orthogonal to H (max |HᵀK| = {cross:e})"
        )));
    }
    let k_qr = FullRankQr::new(&k, "KᵀK")?;

    let mut joint = DMatrix::zeros(n, 2 * p);
    joint.columns_mut(0, p).copy_from(&h);
    joint.columns_mut(p, p).copy_from(&da_h);
    let joint_qr = FullRankQr::new(&joint, "joint design [H, D_A·H]")?;

    let mut subgroup_counts = vec![0usize; g];
    for &s in &subgroup_of {
        subgroup_counts[s] += 1;
    }

    Ok(DesignSystem {
        h,
        da_h,
        k,
        l,
        covariate_means: means,
        terms,
        subgroup_labels: labels,
        subgroup_of,
        subgroup_counts,
        treated: data.records().iter().map(|r| r.treated).collect(),
        k_qr,
        joint_qr,
    })
}

/// Linear restrictions `C·β = γ̂_E` and the Lagrange map `B`.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    pub c: DMatrix<f64>,
    /// `(KᵀK)⁻¹Cᵀ[C(KᵀK)⁻¹Cᵀ]⁻¹`, so that `C·B = I_q`.
    pub b: DMatrix<f64>,
    pub gamma_hat: DVector<f64>,
    pub gamma_variance: DVector<f64>,
    pub labels: Vec<String>,
}

impl ConstraintSystem {
    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    /// `B·C`, the oblique projection removed by the constrained fit.
    pub fn bc(&self) -> DMatrix<f64> {
        &self.b * &self.c
    }
}

pub fn build_constraints(
    design: &DesignSystem,
    manifest: &ExternalManifest,
) -> Result<ConstraintSystem> {
    let p = design.p();
    let q = manifest.q();
    if q >= p {
        return Err(Error::TooManyConstraints { q, p });
    }
    let mut c = DMatrix::zeros(q, p);
    for (row, entry) in manifest.entries().iter().enumerate() {
        for (j, v) in design.constraint_row(&entry.subgroup).into_iter().enumerate() {
            c[(row, j)] = v;
        }
    }
    constraint_system_from(
        design,
        c,
        DVector::from_vec(manifest.estimates()),
        DVector::from_vec(manifest.variances()),
        manifest
            .entries()
            .iter()
            .map(|e| e.subgroup.label.clone())
            .collect(),
    )
}

/// Builds the constraint system for an arbitrary full-row-rank `C`.
pub fn constraint_system_from(
    design: &DesignSystem,
    c: DMatrix<f64>,
    gamma_hat: DVector<f64>,
    gamma_variance: DVector<f64>,
    labels: Vec<String>,
) -> Result<ConstraintSystem> {
    let (q, p) = c.shape();
    if p != design.p() || gamma_hat.len() != q || gamma_variance.len() != q {
        return Err(Error::Dimension(format!(
            "constraint matrix is {q}x{p}, design has p = {}, {} estimates",
            design.p(),
            gamma_hat.len()
        )));
    }
    if q >= p {
        return Err(Error::TooManyConstraints { q, p });
    }
    let r = linalg::rank(&c);
    if r < q {
        return Err(Error::RankDeficient(format!(
            "constraint matrix has rank {r} < q = {q}"
        )));
    }
    let x = design.gram_solve(&c.transpose());
    let s = &c * &x;
    let b = linalg::solve_square(&linalg::symmetrize(&s), &x.transpose(), "C(KᵀK)⁻¹Cᵀ")?
        .transpose();
    let identity_gap = linalg::max_abs(&(&c * &b - DMatrix::identity(q, q)));
    if identity_gap > CONSTRAINT_TOL {
        return Err(Error::Invariant(format!(
            "C·B deviates from the identity by {identity_gap:e}"
        )));
    }
    Ok(ConstraintSystem {
        c,
        b,
        gamma_hat,
        gamma_variance,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightScheme {
    Prevalence,
    Uniform,
    Custom(Vec<f64>),
}

impl WeightScheme {
    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::Prevalence => "prevalence",
            WeightScheme::Uniform => "uniform",
            WeightScheme::Custom(_) => "custom",
        }
    }
}

/// Diagonal of the target-risk weight matrix `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub diagonal: DVector<f64>,
    pub scheme: WeightScheme,
}

impl WeightMatrix {
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diagonal)
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    pub fn positive_entries(&self) -> usize {
        self.diagonal.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            diagonal: &self.diagonal * factor,
            scheme: WeightScheme::Custom((&self.diagonal * factor).iter().copied().collect()),
        }
    }

    /// `xᵀWx` for a length-G vector.
    pub fn quadratic(&self, x: &DVector<f64>) -> f64 {
        x.iter().zip(self.diagonal.iter()).map(|(v, w)| w * v * v).sum()
    }
}

pub fn build_weights(
    scheme: &WeightScheme,
    data: &TrialDataset,
    lattice: &SubgroupLattice,
) -> Result<WeightMatrix> {
    let g = lattice.len();
    let diagonal = match scheme {
        WeightScheme::Prevalence => {
            let mut counts = vec![0.0; g];
            for r in data.records() {
                let idx = lattice
                    .index_of(&r.covariates)
                    .ok_or_else(|| Error::Dimension("record outside the lattice".into()))?;
                counts[idx] += 1.0;
            }
            let n = data.n() as f64;
            DVector::from_iterator(g, counts.into_iter().map(|c| c / n))
        }
        WeightScheme::Uniform => DVector::from_element(g, 1.0),
        WeightScheme::Custom(values) => {
            if values.len() != g {
                return Err(Error::Weights(format!(
                    "expected {g} custom weights, got {}",
                    values.len()
                )));
            }
            if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Weights(format!(
                    "weights must be finite and nonnegative, got {bad}"
                )));
            }
            DVector::from_column_slice(values)
        }
    };
    Ok(WeightMatrix {
        diagonal,
        scheme: scheme.clone(),
    })
}
