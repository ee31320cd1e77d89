//! Saturated OLS with HC2 sandwich variance, and the constrained
//! least-squares estimator that reproduces external marginal estimates.

use nalgebra::{DMatrix, DVector};

use crate::design::{ConstraintSystem, DesignSystem};
use crate::error::{Error, Result};
use crate::linalg;
use crate::normal;

const LEVERAGE_CEILING: f64 = 1.0 - 1e-12;
const ROUTE_AGREEMENT_TOL: f64 = 1e-10;
const CONSTRAINT_TOL: f64 = 1e-8;

/// Anything that yields subgroup CATEs with a covariance matrix.
pub trait SubgroupEstimate {
    fn tau(&self) -> &DVector<f64>;
    fn var_tau(&self) -> &DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    Unconstrained,
    Constrained,
}

/// Residual diagnostics of the joint regression on `[H, D_A·H]`.
#[derive(Debug, Clone)]
pub struct JointFit {
    /// Nuisance (covariate-stratum) coefficients.
    pub alpha: DVector<f64>,
    pub residuals: DVector<f64>,
    pub leverage: DVector<f64>,
}

impl JointFit {
    /// HC2 diagonal `ε̂ᵢ² / (1 − hᵢᵢ)`.
    pub fn hc2_weights(&self) -> DVector<f64> {
        self.residuals
            .zip_map(&self.leverage, |e, h| e * e / (1.0 - h))
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub kind: FitKind,
    pub beta: DVector<f64>,
    pub tau: DVector<f64>,
    /// Finite-sample covariance of `beta`.
    pub var_beta: DMatrix<f64>,
    /// `L · var_beta · Lᵀ`.
    pub var_tau: DMatrix<f64>,
    /// `n · Var̂(β̂_uc)`, carried by both fits.
    pub sigma_uc: DMatrix<f64>,
    pub n: usize,
    pub(crate) joint: Option<JointFit>,
}

impl FitResult {
    pub fn joint(&self) -> Option<&JointFit> {
        self.joint.as_ref()
    }
}

impl SubgroupEstimate for FitResult {
    fn tau(&self) -> &DVector<f64> {
        &self.tau
    }
    fn var_tau(&self) -> &DMatrix<f64> {
        &self.var_tau
    }
}

pub(crate) fn cate_covariance(l: &DMatrix<f64>, var_beta: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrize(&(l * var_beta * l.transpose()))
}

/// Sandwich `A · diag(w) · Aᵀ` formed as `(A√w)(A√w)ᵀ`.
pub(crate) fn sandwich(a: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = a.clone();
    for (mut col, w) in scaled.column_iter_mut().zip(weights.iter()) {
        col *= w.sqrt();
    }
    &scaled * scaled.transpose()
}

/// Joint regression on `[H, D_A·H]`: nuisance coefficients, residuals and HC2 leverage.
pub fn joint_fit(design: &DesignSystem, y: &DVector<f64>) -> Result<(JointFit, DVector<f64>)> {
    if y.len() != design.n() {
        return Err(Error::Dimension(format!(
            "{} outcomes for a design with {} records",
            y.len(),
            design.n()
        )));
    }
    let p = design.p();
    let theta = design.joint_qr.least_squares_vec(y);
    let fitted = design.joint_design() * &theta;
    let residuals = y - fitted;
    let leverage = design.joint_qr.leverages();
    if let Some(i) = leverage.iter().position(|&h| h >= LEVERAGE_CEILING) {
        return Err(Error::DegenerateLeverage(i + 1));
    }
    let alpha = theta.rows(0, p).into_owned();
    let beta = theta.rows(p, p).into_owned();
    Ok((
        JointFit {
            alpha,
            residuals,
            leverage,
        },
        beta,
    ))
}

pub fn fit_unconstrained(design: &DesignSystem, y: &[f64]) -> Result<FitResult> {
    let y = DVector::from_column_slice(y);
    let (joint, beta_joint) = joint_fit(design, &y)?;

    // closed form through the residualized design
    let k_pinv = design.k_qr.pseudo_inverse();
    let beta = &k_pinv * &y;
    let scale = 1.0 + beta_joint.amax() + y.amax();
    let gap = (&beta - &beta_joint).amax();
    if gap > ROUTE_AGREEMENT_TOL * scale {
        return Err(Error::Invariant(format!(
            "residualized and joint coefficient routes disagree by {gap:e}"
        )));
    }

    let var_beta = linalg::repair_psd(&sandwich(&k_pinv, &joint.hc2_weights()), "Var(β̂_uc)")?;
    let n = design.n();
    let sigma_uc = &var_beta * n as f64;
    let tau = &design.l * &beta;
    let var_tau = cate_covariance(&design.l, &var_beta);
    Ok(FitResult {
        kind: FitKind::Unconstrained,
        beta,
        tau,
        var_beta,
        var_tau,
        sigma_uc,
        n,
        joint: Some(joint),
    })
}

pub fn fit_constrained(
    uc: &FitResult,
    cs: &ConstraintSystem,
    design: &DesignSystem,
) -> Result<FitResult> {
    let p = design.p();
    if uc.kind != FitKind::Unconstrained {
        return Err(Error::Config("fit_constrained expects an unconstrained fit".into()));
    }
    if uc.beta.len() != p || cs.c.ncols() != p || cs.b.nrows() != p {
        return Err(Error::Dimension(format!(
            "design p = {p}, fit has {}, constraints have {} columns",
            uc.beta.len(),
            cs.c.ncols()
        )));
    }
    let gap = &cs.gamma_hat - &cs.c * &uc.beta;
    let beta = &uc.beta + &cs.b * gap;

    let residual = (&cs.c * &beta - &cs.gamma_hat).amax();
    let scale = 1.0 + cs.gamma_hat.amax();
    if residual > CONSTRAINT_TOL * scale {
        return Err(Error::Invariant(format!(
            "constrained fit misses the restrictions by {residual:e}"
        )));
    }

    let projector = DMatrix::identity(p, p) - cs.bc();
    let n = uc.n as f64;
    let var_beta = linalg::repair_psd(
        &(&projector * &uc.sigma_uc * projector.transpose() / n),
        "Var(β̂_c)",
    )?;
    let tau = &design.l * &beta;
    let var_tau = cate_covariance(&design.l, &var_beta);
    Ok(FitResult {
        kind: FitKind::Constrained,
        beta,
        tau,
        var_beta,
        var_tau,
        sigma_uc: uc.sigma_uc.clone(),
        n: uc.n,
        joint: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contrast {
    pub estimate: f64,
    pub variance: f64,
    /// Two-sided normal p-value for a zero contrast.
    pub p_value: f64,
}

/// Linear contrast `aᵀτ̂` of subgroup CATEs.
pub fn contrast<E: SubgroupEstimate + ?Sized>(fit: &E, a: &[f64]) -> Result<Contrast> {
    let tau = fit.tau();
    if a.len() != tau.len() {
        return Err(Error::Dimension(format!(
            "contrast has {} entries, estimate has {} subgroups",
            a.len(),
            tau.len()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("contrast weights must be finite".into()));
    }
    let a = DVector::from_column_slice(a);
    let estimate = a.dot(tau);
    let variance = (a.transpose() * fit.var_tau() * &a)[(0, 0)].max(0.0);
    let p_value = if variance > 0.0 {
        normal::two_sided_p(estimate / variance.sqrt())
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(Contrast {
        estimate,
        variance,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{enumerate_lattice, Covariate, CovariateSchema, Record, TrialDataset};
    use crate::design::{build_design, constraint_system_from};
    use approx::assert_relative_eq;

    fn schema() -> CovariateSchema {
        CovariateSchema::new(vec![
            Covariate::new("x1", &["0", "1"]),
            Covariate::new("x2", &["0", "1"]),
        ])
        .unwrap()
    }

    /// Two units per (subgroup, arm) cell, n = 16, hand-set outcomes.
    fn dataset(ys: &[f64]) -> TrialDataset {
        let mut recs = Vec::new();
        let mut k = 0;
        for x1 in 0..2 {
            for x2 in 0..2 {
                for t in [false, true] {
                    for _ in 0..2 {
                        recs.push(Record {
                            outcome: ys[k],
                            covariates: vec![x1, x2],
                            treated: t,
                        });
                        k += 1;
                    }
                }
            }
        }
        TrialDataset::new(schema(), recs).unwrap()
    }

    fn ys() -> Vec<f64> {
        vec![
            1.0, 1.4, 2.5, 3.1, -0.5, 0.1, 3.0, 2.2, 0.25, 0.5, 4.0, 5.5, 1.75, 1.0, -2.0, -1.0,
        ]
    }

    #[test]
    fn zero_outcomes_give_zero_fit() {
        let data = dataset(&[0.0; 16]);
        let lat = enumerate_lattice(data.schema()).unwrap();
        let d = build_design(&data, &lat).unwrap();
        let fit = fit_unconstrained(&d, &data.outcomes()).unwrap();
        assert!(fit.beta.iter().all(|v| v.abs() < 1e-14));
        assert!(fit.tau.iter().all(|v| v.abs() < 1e-14));
        assert!(fit.var_beta.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn hc2_matches_textbook_oracle() {
        let data = dataset(&ys());
        let lat = enumerate_lattice(data.schema()).unwrap();
        let d = build_design(&data, &lat).unwrap();
        let fit = fit_unconstrained(&d, &data.outcomes()).unwrap();

        // textbook HC2 on the full joint regression with dense inverses;
        // the β block of the full sandwich equals the residualized sandwich
        let x = d.joint_design();
        let y = DVector::from_vec(data.outcomes());
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let hat = &x * &xtx_inv * x.transpose();
        let e = &y - &hat * &y;
        let n = x.nrows();
        let mut meat = DMatrix::zeros(n, n);
        for i in 0..n {
            meat[(i, i)] = e[i] * e[i] / (1.0 - hat[(i, i)]);
        }
        let full = &xtx_inv * x.transpose() * meat * &x * &xtx_inv;
        let block = full.view((4, 4), (4, 4)).into_owned();
        assert_relative_eq!(fit.var_beta, block, epsilon = 1e-10);
        assert_relative_eq!(fit.sigma_uc, block * n as f64, epsilon = 1e-9);
        let alpha = (&xtx_inv * x.transpose() * &y).rows(0, 4).into_owned();
        assert_relative_eq!(fit.joint().unwrap().alpha, alpha, epsilon = 1e-10);
    }

    #[test]
    fn single_cell_leverage_is_degenerate() {
        let mut recs = dataset(&ys()).records().to_vec();
        recs.remove(0); // subgroup (0,0) control arm now holds one unit
        let data = TrialDataset::new(schema(), recs).unwrap();
        let lat = enumerate_lattice(data.schema()).unwrap();
        let d = build_design(&data, &lat).unwrap();
        assert!(matches!(
            fit_unconstrained(&d, &data.outcomes()),
            Err(Error::DegenerateLeverage(1))
        ));
    }

    fn constrained_setup() -> (DesignSystem, FitResult, ConstraintSystem) {
        let data = dataset(&ys());
        let lat = enumerate_lattice(data.schema()).unwrap();
        let d = build_design(&data, &lat).unwrap();
        let uc = fit_unconstrained(&d, &data.outcomes()).unwrap();
        let c = DMatrix::from_row_slice(3, 4, &[
            1.0, -0.5, 0.0, 0.0, //
            1.0, 0.5, 0.0, 0.0, //
            1.0, 0.0, -0.5, 0.0,
        ]);
        let cs = constraint_system_from(
            &d,
            c,
            DVector::from_vec(vec![1.0, 2.0, 0.5]),
            DVector::from_element(3, 1e-4),
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        (d, uc, cs)
    }

    #[test]
    fn constrained_fit_satisfies_restrictions() {
        let (d, uc, cs) = constrained_setup();
        let fit = fit_constrained(&uc, &cs, &d).unwrap();
        assert_relative_eq!(&cs.c * &fit.beta, cs.gamma_hat.clone(), epsilon = 1e-8);
        assert_eq!(fit.kind, FitKind::Constrained);
    }

    #[test]
    fn zero_correction_keeps_unconstrained() {
        let (d, uc, mut cs) = constrained_setup();
        cs.gamma_hat = &cs.c * &uc.beta;
        let fit = fit_constrained(&uc, &cs, &d).unwrap();
        assert_relative_eq!(fit.beta, uc.beta, epsilon = 1e-14);
    }

    #[test]
    fn correction_is_linear_in_residual() {
        let (d, uc, mut cs) = constrained_setup();
        let delta = 0.37;
        cs.gamma_hat = &cs.c * &uc.beta;
        cs.gamma_hat[0] += delta;
        let fit = fit_constrained(&uc, &cs, &d).unwrap();
        let expected = cs.b.column(0) * delta;
        assert_relative_eq!(&fit.beta - &uc.beta, expected, epsilon = 1e-12);
    }

    #[test]
    fn constrained_variance_shrinks_under_model_based_covariance() {
        // with Σ ∝ (KᵀK)⁻¹ the constrained covariance is Σ minus a PSD term
        let (d, mut uc, cs) = constrained_setup();
        let p = d.p();
        let gram_inv = d.gram_solve(&DMatrix::identity(p, p));
        uc.sigma_uc = &gram_inv * 2.0 * uc.n as f64;
        uc.var_beta = &gram_inv * 2.0;
        let fit = fit_constrained(&uc, &cs, &d).unwrap();
        for j in 0..p {
            assert!(fit.var_beta[(j, j)] <= uc.var_beta[(j, j)] + 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let (d, uc, mut cs) = constrained_setup();
        cs.c = DMatrix::zeros(3, 5);
        assert!(matches!(fit_constrained(&uc, &cs, &d), Err(Error::Dimension(_))));
    }

    #[test]
    fn contrasts() {
        let (d, uc, _) = constrained_setup();
        let e1 = [1.0, 0.0, 0.0, 0.0];
        let c = contrast(&uc, &e1).unwrap();
        assert_eq!(c.estimate, uc.tau[0]);
        assert_relative_eq!(c.variance, uc.var_tau[(0, 0)]);

        let zero = contrast(&uc, &[0.0; 4]).unwrap();
        assert_eq!((zero.estimate, zero.variance, zero.p_value), (0.0, 0.0, 1.0));

        let diff = contrast(&uc, &[1.0, -1.0, 0.0, 0.0]).unwrap();
        let v = &uc.var_tau;
        let hand = v[(0, 0)] + v[(1, 1)] - 2.0 * v[(0, 1)];
        assert_relative_eq!(diff.variance, hand, epsilon = 1e-14);
        assert_relative_eq!(diff.estimate, uc.tau[0] - uc.tau[1], epsilon = 1e-14);
        assert!(diff.p_value > 0.0 && diff.p_value <= 1.0);
        assert!(contrast(&uc, &[1.0; 3]).is_err());
        let _ = d;
    }
}
