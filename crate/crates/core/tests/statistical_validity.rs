//! Statistical validity of the certification pipeline: the probability
//! that the Clopper-Pearson bound overshoots the true class probability
//! stays within the confidence level.

use aniscert_core::distributions::{AnisoParams, NoiseSpec};
use aniscert_core::oracle::{analytic_gaussian_pa, LinearModel};
use aniscert_core::smoothing::{classify_samples, ClassifierHandle};
use aniscert_core::stats::lower_conf_bound;

#[test]
fn bound_rarely_exceeds_true_probability() {
    // Halfspace placed so the analytic smoothed probability is 0.8.
    let inv = aniscert_core::cert_math::inverse_normal_cdf::<f64>(0.8).unwrap();
    let model = LinearModel::new(vec![1.0, 0.0], 0.0).unwrap();
    let x = vec![inv, 0.3];
    let params = AnisoParams::isotropic(2).unwrap();
    let spec = NoiseSpec::gaussian(1.0).unwrap();
    let p_true = analytic_gaussian_pa(&model, &x, &params, 1.0).unwrap();
    assert!((p_true - 0.8).abs() < 1e-12);

    let f = ClassifierHandle::Linear { model };
    let alpha = 0.001_f64;
    let runs = 1000;
    let n = 500u64;
    let mut overshoots = 0u64;
    for run in 0..runs {
        let tally = classify_samples(&f, &x, &params, &spec, n, 50_000 + run, 1).unwrap();
        let p_hat: f64 = lower_conf_bound(tally.counts[1], n, 1.0 - alpha).unwrap();
        if p_hat > p_true {
            overshoots += 1;
        }
    }
    let rate = overshoots as f64 / runs as f64;
    let sigma_hat = (alpha * (1.0 - alpha) / runs as f64).sqrt();
    let limit = alpha + 3.0 * sigma_hat;
    assert!(
        rate <= limit,
        "bound exceeded the true p in {overshoots}/{runs} runs (limit {limit:.5})"
    );
}
