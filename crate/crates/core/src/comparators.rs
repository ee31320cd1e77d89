//! Benchmark shrinkage estimators. Both are reconstructions from one-line
//! descriptions: a matrix-weighted empirical-Bayes average and an
//! external-variance-penalized generalized ridge fit. Neither depends on `W`.

use nalgebra::{DMatrix, DVector};

use crate::data::ExternalManifest;
use crate::design::{ConstraintSystem, DesignSystem};
use crate::error::{Error, Result};
use crate::estimators::{cate_covariance, fit_unconstrained, sandwich, FitKind, FitResult, SubgroupEstimate};
use crate::linalg;

const EB_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparatorKind {
    EmpiricalBayes,
    GeneralizedRidge,
}

#[derive(Debug, Clone)]
pub struct ComparatorResult {
    pub kind: ComparatorKind,
    pub beta: DVector<f64>,
    pub tau: DVector<f64>,
    pub var_beta: DMatrix<f64>,
    pub var_tau: DMatrix<f64>,
    /// EB: the `p×p` weight `Â` on the unconstrained fit. Ridge: the `q×q` penalty `Λ`.
    pub weight_or_penalty: DMatrix<f64>,
}

impl SubgroupEstimate for ComparatorResult {
    fn tau(&self) -> &DVector<f64> {
        &self.tau
    }
    fn var_tau(&self) -> &DMatrix<f64> {
        &self.var_tau
    }
}

/// `β̂_eb = Â β̂_uc + (I − Â) β̂_c` with `Â = D̂ (D̂ + V̂)⁻¹`, `D̂ = Δ̂Δ̂ᵀ` and
/// `V̂ = BC Var̂(β̂_uc) (BC)ᵀ`, the sampling variance of `Δ̂`. Under the
/// model-based variance this is exactly `Var̂(β̂_uc) − Var̂(β̂_c)`.
pub fn fit_empirical_bayes(
    uc: &FitResult,
    c: &FitResult,
    cs: &ConstraintSystem,
    design: &DesignSystem,
) -> Result<ComparatorResult> {
    if uc.kind != FitKind::Unconstrained || c.kind != FitKind::Constrained {
        return Err(Error::Config(
            "empirical Bayes needs an unconstrained and a constrained fit".into(),
        ));
    }
    let p = uc.beta.len();
    let delta = &uc.beta - &c.beta;
    let signal = &delta * delta.transpose();
    let bc = cs.bc();
    let excess = linalg::project_psd(&(&bc * &uc.var_beta * bc.transpose()));
    let mut total = &signal + &excess;
    let ridge = EB_RIDGE * total.trace() / p as f64;
    for j in 0..p {
        total[(j, j)] += ridge;
    }
    // Â = D (D+V)⁻¹  ⇔  (D+V)ᵀ Âᵀ = Dᵀ, both symmetric
    let weight = total
        .lu()
        .solve(&signal)
        .filter(|w| w.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::RankDeficient("D̂ + V̂ after ridge regularization".into()))?
        .transpose();

    let identity = DMatrix::<f64>::identity(p, p);
    let beta = &weight * &uc.beta + (&identity - &weight) * &c.beta;
    // delta method with Â held fixed: ∂β̂_eb/∂β̂_uc = I − (I − Â)BC
    let jac = &identity - (&identity - &weight) * &bc;
    let var_beta = linalg::repair_psd(&(&jac * &uc.var_beta * jac.transpose()), "Var(β̂_eb)")?;
    let tau = &design.l * &beta;
    let var_tau = cate_covariance(&design.l, &var_beta);
    Ok(ComparatorResult {
        kind: ComparatorKind::EmpiricalBayes,
        beta,
        tau,
        var_beta,
        var_tau,
        weight_or_penalty: weight,
    })
}

/// Penalized least squares
/// `‖Y − Hα − D_A Hβ‖² + (Cβ − γ̂_E)ᵀ Λ (Cβ − γ̂_E)` with
/// `Λ = diag(σ̂²_ε / Var̂(γ̂_E))`, solved as an augmented least-squares problem
/// in the residualized design.
pub fn fit_generalized_ridge(
    design: &DesignSystem,
    y: &[f64],
    cs: &ConstraintSystem,
    manifest: &ExternalManifest,
) -> Result<ComparatorResult> {
    let q = cs.q();
    let p = design.p();
    if manifest.q() != q {
        return Err(Error::Dimension(format!(
            "manifest has {} entries, constraint system {q}",
            manifest.q()
        )));
    }
    let ext_var = DVector::from_vec(manifest.variances());
    if let Some(bad) = ext_var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Config(format!(
            "generalized ridge needs positive external variances (got {bad}); use the constrained estimator instead"
        )));
    }
    let uc = fit_unconstrained(design, y)?;
    let joint = uc.joint().expect("unconstrained fits carry joint diagnostics");
    let n = design.n();
    let sigma2 = joint.residuals.norm_squared() / n as f64;
    let penalty = ext_var.map(|v| sigma2 / v);
    let root = penalty.map(f64::sqrt);

    // the nuisance block profiles out to ‖MY − Kβ‖²; KᵀM = Kᵀ, so Y can stand in for MY
    let yv = DVector::from_column_slice(y);
    let mut aug = DMatrix::zeros(n + q, p);
    aug.rows_mut(0, n).copy_from(&design.k);
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(0, n).copy_from(&yv);
    for s in 0..q {
        for j in 0..p {
            aug[(n + s, j)] = root[s] * cs.c[(s, j)];
        }
        rhs[n + s] = root[s] * cs.gamma_hat[s];
    }
    let qr = linalg::FullRankQr::new(&aug, "augmented ridge design")?;
    let beta = qr.least_squares_vec(&rhs);

    // β̂ = (KᵀK + CᵀΛC)⁻¹(KᵀY + CᵀΛγ̂): HC2 meat for Y plus the external sampling variance
    let k_part = qr.gram_solve(&design.k.transpose());
    let mut var_beta = sandwich(&k_part, &joint.hc2_weights());
    let ext_map = qr.gram_solve(&(cs.c.transpose() * DMatrix::from_diagonal(&penalty)));
    var_beta += sandwich(&ext_map, &ext_var);
    let var_beta = linalg::repair_psd(&var_beta, "Var(β̂_gr)")?;

    let tau = &design.l * &beta;
    let var_tau = cate_covariance(&design.l, &var_beta);
    Ok(ComparatorResult {
        kind: ComparatorKind::GeneralizedRidge,
        beta,
        tau,
        var_beta,
        var_tau,
        weight_or_penalty: DMatrix::from_diagonal(&penalty),
    })
}
