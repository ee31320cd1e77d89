mod common;

use nalgebra::DMatrix;

use common::{random_dataset, three_margin_manifest};
use subgroup_shrink::comparators::{fit_empirical_bayes, fit_generalized_ridge};
use subgroup_shrink::data::{enumerate_lattice, ExternalManifest, TrialDataset};
use subgroup_shrink::design::{build_constraints, build_design, WeightScheme};
use subgroup_shrink::estimators::{fit_constrained, fit_unconstrained};
use subgroup_shrink::pipeline::{analyze, Estimator};

fn fits(
    data: &TrialDataset,
    manifest: &ExternalManifest,
) -> (
    subgroup_shrink::design::DesignSystem,
    subgroup_shrink::design::ConstraintSystem,
    subgroup_shrink::estimators::FitResult,
    subgroup_shrink::estimators::FitResult,
) {
    let lat = enumerate_lattice(data.schema()).unwrap();
    let design = build_design(data, &lat).unwrap();
    let cs = build_constraints(&design, manifest).unwrap();
    let uc = fit_unconstrained(&design, &data.outcomes()).unwrap();
    let c = fit_constrained(&uc, &cs, &design).unwrap();
    (design, cs, uc, c)
}

#[test]
fn eb_without_incompatibility_is_the_constrained_fit() {
    let data = random_dataset(1, 120);
    let (design, cs, uc, _) = fits(&data, &three_margin_manifest([0.0; 3], 1e-4));
    let own = &cs.c * &uc.beta;
    let (design2, cs2, uc2, c2) = fits(&data, &three_margin_manifest([own[0], own[1], own[2]], 1e-4));
    let _ = (design, cs);
    let eb = fit_empirical_bayes(&uc2, &c2, &cs2, &design2).unwrap();
    assert!(eb.weight_or_penalty.amax() < 1e-8);
    assert!((&eb.beta - &c2.beta).amax() < 1e-10);
}

#[test]
fn eb_without_sampling_noise_follows_the_unconstrained_fit() {
    let data = random_dataset(2, 150);
    let (design, cs, mut uc, c) = fits(&data, &three_margin_manifest([2.0, -1.0, 0.5], 1e-4));
    uc.var_beta = DMatrix::zeros(4, 4);
    let eb = fit_empirical_bayes(&uc, &c, &cs, &design).unwrap();
    // Â is the projection onto span(Δ̂)
    let delta = &uc.beta - &c.beta;
    let proj = &delta * delta.transpose() / delta.norm_squared();
    assert!((&eb.weight_or_penalty - &proj).amax() < 1e-6);
    assert!((&eb.beta - &uc.beta).amax() < 1e-6 * (1.0 + uc.beta.amax()));
}

#[test]
fn eb_shrinks_part_of_the_way() {
    for seed in 0..20 {
        let data = random_dataset(seed + 40, 150);
        let (design, cs, uc, c) = fits(&data, &three_margin_manifest([1.0, 0.5, 0.0], 1e-4));
        let eb = fit_empirical_bayes(&uc, &c, &cs, &design).unwrap();
        let delta = &uc.beta - &c.beta;
        let kept = (&eb.beta - &c.beta).dot(&delta) / delta.norm_squared();
        assert!((0.0..=1.0).contains(&kept), "seed {seed}: {kept}");
    }
}

#[test]
fn ridge_interpolates_between_constrained_and_unconstrained() {
    let data = random_dataset(3, 180);
    let y = data.outcomes();
    let (design, cs, uc, c) = fits(&data, &three_margin_manifest([2.0, -1.0, 0.5], 1e-8));
    let tight = fit_generalized_ridge(&design, &y, &cs, &three_margin_manifest([2.0, -1.0, 0.5], 1e-8)).unwrap();
    assert!((&tight.beta - &c.beta).amax() < 1e-3);

    let loose_manifest = three_margin_manifest([2.0, -1.0, 0.5], 1e12);
    let cs_loose = build_constraints(&design, &loose_manifest).unwrap();
    let loose = fit_generalized_ridge(&design, &y, &cs_loose, &loose_manifest).unwrap();
    assert!((&loose.beta - &uc.beta).amax() < 1e-8);
    assert!((&loose.var_beta - &uc.var_beta).amax() < 1e-8);
}

#[test]
fn ridge_rejects_zero_external_variance() {
    let data = random_dataset(4, 100);
    let m = three_margin_manifest([0.0; 3], 0.0);
    let (design, cs, _, _) = fits(&data, &m);
    assert!(fit_generalized_ridge(&design, &data.outcomes(), &cs, &m).is_err());
}

#[test]
fn comparators_do_not_depend_on_the_weights() {
    for seed in 0..10 {
        let data = random_dataset(seed + 90, 130);
        let m = three_margin_manifest([1.5, 0.2, -0.4], 1e-3);
        let comps = [Estimator::EmpiricalBayes, Estimator::GeneralizedRidge];
        let a = analyze(&data, &m, &WeightScheme::Prevalence, &comps).unwrap();
        let b = analyze(&data, &m, &WeightScheme::Uniform, &comps).unwrap();
        let c = analyze(&data, &m, &WeightScheme::Custom(vec![4.0, 1.0, 1.0, 0.5]), &comps).unwrap();
        for other in [&b, &c] {
            assert_eq!(a.empirical_bayes.as_ref().unwrap().tau, other.empirical_bayes.as_ref().unwrap().tau);
            assert_eq!(a.generalized_ridge.as_ref().unwrap().tau, other.generalized_ridge.as_ref().unwrap().tau);
        }
    }
}
