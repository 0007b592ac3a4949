use latinev::harness::estimators::{gcomp, psm, DEFAULT_CALIPER};
use latinev::harness::logo::grouped_sample;
use latinev::harness::{logo_task, substream_seed, LearnerKind, LogoConfig};
use latinev::simgen::{generate, Case, GenSpec};

#[test]
fn psm_error_at_least_gcomp_under_confounding() {
    let (mut psm_err, mut gcomp_err) = (0.0, 0.0);
    for run in 0..30 {
        let spec = GenSpec { rho: Some(0.5), ..GenSpec::new(Case::Correlated, 6, 3000, substream_seed(21, run)) };
        let (s, truth) = generate(&spec).unwrap();
        for f in 0..6 {
            gcomp_err += (gcomp(&s, f).unwrap() - truth.effects[f]).abs();
            psm_err += (psm(&s, f, DEFAULT_CALIPER).unwrap().estimate - truth.effects[f]).abs();
        }
    }
    assert!(psm_err >= gcomp_err);
}

#[test]
fn eps_sq_feature_lowers_logo_error() {
    // the per-group estimate is too noisy to help below a few thousand units
    for learner in [LearnerKind::Logistic, LearnerKind::Forest] {
        let (mut with, mut without) = (0.0, 0.0);
        for run in 0..30 {
            let s = grouped_sample(4, 8, 8000, substream_seed(22, run)).unwrap();
            let seed = substream_seed(23, run);
            with += logo_task(&s, &LogoConfig::new(learner, true, seed)).unwrap().mean_mse;
            without += logo_task(&s, &LogoConfig::new(learner, false, seed)).unwrap().mean_mse;
        }
        assert!(with <= without, "{learner}: {with} > {without}");
    }
}
