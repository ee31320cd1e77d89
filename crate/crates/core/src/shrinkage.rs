//! Positive-part James–Stein shrinkage of the unconstrained fit toward the
//! constrained fit, with its piecewise analytic variance and Wald intervals.

use nalgebra::{DMatrix, DVector};

use crate::design::{ConstraintSystem, DesignSystem, WeightMatrix};
use crate::error::{Error, Result};
use crate::estimators::{cate_covariance, FitKind, FitResult, SubgroupEstimate};
use crate::linalg;
use crate::normal;

/// Non-fatal conditions attached to a shrinkage fit.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// `tr(P̂) - 2‖P̂‖ ≤ 0`: no admissible shrinkage, the unconstrained fit is returned.
    InfeasibleNu { nu: f64 },
}

impl Warning {
    pub fn code(&self) -> &'static str {
        match self {
            Warning::InfeasibleNu { .. } => "INFEASIBLE_NU",
        }
    }
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::InfeasibleNu { nu } => write!(
                f,
                "tuning parameter nu = {nu:.6e} is not positive; falling back to the unconstrained estimator"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tuning {
    pub nu: f64,
    /// `W L Σ̂_uc Cᵀ Bᵀ Lᵀ`.
    pub p_hat: DMatrix<f64>,
    pub trace: f64,
    pub spectral_norm: f64,
    /// `tr(P̂)/‖P̂‖ > 2`.
    pub feasible: bool,
}

impl Tuning {
    pub fn from_p_hat(p_hat: DMatrix<f64>) -> Self {
        let trace = p_hat.trace();
        let spectral_norm = linalg::spectral_norm(&p_hat);
        let nu = trace - 2.0 * spectral_norm;
        let feasible = spectral_norm > 0.0 && trace / spectral_norm > 2.0;
        Self {
            nu,
            p_hat,
            trace,
            spectral_norm,
            feasible,
        }
    }
}

pub fn tune_nu(
    uc: &FitResult,
    cs: &ConstraintSystem,
    design: &DesignSystem,
    w: &WeightMatrix,
) -> Result<Tuning> {
    check_weights(w, design)?;
    let l = &design.l;
    let p_hat = w.matrix() * l * &uc.sigma_uc * cs.c.transpose() * cs.b.transpose() * l.transpose();
    Ok(Tuning::from_p_hat(p_hat))
}

fn check_weights(w: &WeightMatrix, design: &DesignSystem) -> Result<()> {
    if w.len() != design.g() {
        return Err(Error::Dimension(format!(
            "{} weights for {} subgroups",
            w.len(),
            design.g()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceBranch {
    /// `ω̂⁺ = 0`: the constrained covariance.
    Constrained,
    /// Taylor-expansion sandwich `n⁻¹ Ĝ Σ̂_uc Ĝᵀ`.
    Taylor,
    /// Infeasible tuning: the unconstrained HC2 covariance.
    Unconstrained,
}

impl VarianceBranch {
    pub fn name(self) -> &'static str {
        match self {
            VarianceBranch::Constrained => "constrained",
            VarianceBranch::Taylor => "taylor",
            VarianceBranch::Unconstrained => "unconstrained",
        }
    }
}

#[derive(Debug, Clone)]
pub struct JamesSteinResult {
    pub beta: DVector<f64>,
    pub tau: DVector<f64>,
    /// `1 - ν/quad_form`; `1` when tuning is infeasible.
    pub omega_raw: f64,
    pub omega: f64,
    pub nu: f64,
    /// `n (τ̂_uc − τ̂_c)ᵀ W (τ̂_uc − τ̂_c)`.
    pub quad_form: f64,
    pub var_beta: DMatrix<f64>,
    pub var_tau: DMatrix<f64>,
    pub variance_branch: VarianceBranch,
    pub p_hat: DMatrix<f64>,
    pub feasible: bool,
    /// `β̂_uc − β̂_c`.
    pub delta: DVector<f64>,
    /// `LᵀWL`.
    pub gamma_mat: DMatrix<f64>,
    /// Plug-in Jacobian, present on the Taylor branch.
    pub jacobian: Option<DMatrix<f64>>,
    pub warnings: Vec<Warning>,
}

impl SubgroupEstimate for JamesSteinResult {
    fn tau(&self) -> &DVector<f64> {
        &self.tau
    }
    fn var_tau(&self) -> &DMatrix<f64> {
        &self.var_tau
    }
}

/// Tunes `ν` from `w` and shrinks. The same weight matrix drives both steps.
pub fn fit_james_stein(
    uc: &FitResult,
    c: &FitResult,
    cs: &ConstraintSystem,
    design: &DesignSystem,
    w: &WeightMatrix,
) -> Result<JamesSteinResult> {
    let tuning = tune_nu(uc, cs, design, w)?;
    shrink(uc, c, cs, design, w, &tuning)
}

/// Shrinkage step for a given tuning.
pub fn shrink(
    uc: &FitResult,
    c: &FitResult,
    cs: &ConstraintSystem,
    design: &DesignSystem,
    w: &WeightMatrix,
    tuning: &Tuning,
) -> Result<JamesSteinResult> {
    check_weights(w, design)?;
    if uc.kind != FitKind::Unconstrained || c.kind != FitKind::Constrained {
        return Err(Error::Config(
            "shrinkage needs an unconstrained and a constrained fit".into(),
        ));
    }
    let p = design.p();
    if uc.beta.len() != p || c.beta.len() != p || cs.c.ncols() != p {
        return Err(Error::Dimension("fits and design disagree on p".into()));
    }
    let n = uc.n as f64;
    let nu = tuning.nu;
    let delta = &uc.beta - &c.beta;
    let gamma_mat = design.l.transpose() * w.matrix() * &design.l;
    let quad_form = n * w.quadratic(&(&uc.tau - &c.tau));

    let mut warnings = Vec::new();
    let (omega_raw, omega) = if nu <= 0.0 {
        warnings.push(Warning::InfeasibleNu { nu });
        (1.0, 1.0)
    } else {
        // quad_form = 0 gives -inf, clipped to 0 below
        let raw = 1.0 - nu / quad_form;
        (raw, raw.max(0.0))
    };

    let (beta, tau) = if omega == 1.0 {
        (uc.beta.clone(), uc.tau.clone())
    } else if omega == 0.0 {
        (c.beta.clone(), c.tau.clone())
    } else {
        let beta = &uc.beta * omega + &c.beta * (1.0 - omega);
        let tau = &design.l * &beta;
        (beta, tau)
    };

    let mut result = JamesSteinResult {
        beta,
        tau,
        omega_raw,
        omega,
        nu,
        quad_form,
        var_beta: DMatrix::zeros(p, p),
        var_tau: DMatrix::zeros(design.g(), design.g()),
        variance_branch: VarianceBranch::Unconstrained,
        p_hat: tuning.p_hat.clone(),
        feasible: tuning.feasible && nu > 0.0,
        delta,
        gamma_mat,
        jacobian: None,
        warnings,
    };
    let (var_beta, branch, jacobian) = js_variance(&result, uc, c, cs)?;
    result.var_tau = cate_covariance(&design.l, &var_beta);
    result.var_beta = var_beta;
    result.variance_branch = branch;
    result.jacobian = jacobian;
    Ok(result)
}

/// `Ĝ = I − (ν/(n d))·BC + (2ν/(n d²))·ΔΔᵀΓ·BC` with `d = ΔᵀΓΔ`.
pub fn taylor_jacobian(
    nu: f64,
    n: f64,
    delta: &DVector<f64>,
    gamma_mat: &DMatrix<f64>,
    bc: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = delta.len();
    let d = (delta.transpose() * gamma_mat * delta)[(0, 0)];
    if !(d > 0.0) {
        return Err(Error::Invariant(format!(
            "ΔᵀΓΔ = {d:e} on the Taylor variance branch"
        )));
    }
    let first = bc * (nu / (n * d));
    let second = delta * (delta.transpose() * gamma_mat * bc) * (2.0 * nu / (n * d * d));
    Ok(DMatrix::identity(p, p) - first + second)
}

/// Piecewise covariance of `β̂_js⁺`.
pub fn js_variance(
    js: &JamesSteinResult,
    uc: &FitResult,
    c: &FitResult,
    cs: &ConstraintSystem,
) -> Result<(DMatrix<f64>, VarianceBranch, Option<DMatrix<f64>>)> {
    if js.nu <= 0.0 {
        return Ok((uc.var_beta.clone(), VarianceBranch::Unconstrained, None));
    }
    if js.quad_form <= js.nu {
        return Ok((c.var_beta.clone(), VarianceBranch::Constrained, None));
    }
    let n = uc.n as f64;
    let g = taylor_jacobian(js.nu, n, &js.delta, &js.gamma_mat, &cs.bc())?;
    let var = linalg::repair_psd(&(&g * &uc.sigma_uc * g.transpose() / n), "Var(β̂_js)")?;
    Ok((var, VarianceBranch::Taylor, Some(g)))
}

/// Per-subgroup Wald intervals `τ_g ± z_{1−α/2} √V_gg`.
pub fn wald_ci(tau: &DVector<f64>, var_tau: &DMatrix<f64>, alpha: f64) -> Result<Vec<(f64, f64)>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if var_tau.nrows() != tau.len() || var_tau.ncols() != tau.len() {
        return Err(Error::Dimension("covariance does not match the estimate".into()));
    }
    let z = normal::quantile(1.0 - alpha / 2.0);
    tau.iter()
        .enumerate()
        .map(|(g, &t)| {
            let v = var_tau[(g, g)];
            if v < -linalg::PSD_TOL {
                return Err(Error::NotPsd(format!("subgroup {g} variance {v:e}")));
            }
            let half = z * v.max(0.0).sqrt();
            Ok((t - half, t + half))
        })
        .collect()
}
