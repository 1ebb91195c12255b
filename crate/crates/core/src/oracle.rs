//! Independent closed-form and brute-force oracles. These validate the
//! engine from the outside: smoothed halfspaces have an exact analytic
//! form, small certified regions can be swept exhaustively, and volumes
//! can be estimated by rejection sampling. The verification suite bundles
//! the checks the `verify` command runs before anything else is trusted.

use crate::cert_math::{
    in_certified_region, lebesgue_measure, normal_cdf, radius_binary, CertMathError, Norm,
};
use crate::distributions::{AnisoParams, DistError, NoiseSpec};
use crate::rng::{derive_seed, rng_from_seed};
use crate::smoothing::{
    classify_samples, Classifier, ClassifierHandle, FnClassifier, SmoothingError,
};
use crate::stats::lower_conf_bound;
use rand::Rng as _;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("weight vector must be nonzero")]
    ZeroWeights,
    #[error("oracle search limited to d <= 3, got {0}")]
    DimensionTooLarge(usize),
    #[error("operation requires diagonal anisotropic parameters")]
    NonDiagonal,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    CertMath(#[from] CertMathError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
}

/// Binary halfspace classifier, the verification vehicle: under Gaussian
/// smoothing its class probabilities are exactly normal CDFs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn new(w: Vec<f64>, b: f64) -> Result<Self, OracleError> {
        if w.iter().all(|&v| v == 0.0) {
            return Err(OracleError::ZeroWeights);
        }
        Ok(Self { w, b })
    }

    pub fn decision(&self, z: &[f64]) -> f64 {
        self.w.iter().zip(z).map(|(wi, zi)| wi * zi).sum::<f64>() + self.b
    }

    /// Class 1 on the positive side, class 0 otherwise.
    pub fn classify(&self, z: &[f64]) -> usize {
        usize::from(self.decision(z) > 0.0)
    }
}

/// Exact probability that the smoothed halfspace outputs class 1:
/// P(w.(x + eps (.) sigma + mu) + b > 0) = Phi((w.(x+mu)+b) / (lambda ||w (.) sigma||_2))
/// for isotropic Gaussian eps with standard deviation lambda.
pub fn analytic_gaussian_pa(
    model: &LinearModel,
    x: &[f64],
    params: &AnisoParams<f64>,
    lambda: f64,
) -> Result<f64, OracleError> {
    if !params.is_diagonal() {
        return Err(OracleError::NonDiagonal);
    }
    if x.len() != model.w.len() || x.len() != params.dim() {
        return Err(OracleError::DimensionMismatch {
            expected: model.w.len(),
            got: x.len(),
        });
    }
    let m: f64 = model
        .w
        .iter()
        .zip(x.iter().zip(params.mu()))
        .map(|(wi, (xi, mi))| wi * (xi + mi))
        .sum::<f64>()
        + model.b;
    let scale: f64 = model
        .w
        .iter()
        .zip(params.sigma())
        .map(|(wi, si)| (wi * si) * (wi * si))
        .sum::<f64>()
        .sqrt()
        * lambda;
    if scale == 0.0 {
        return Err(OracleError::ZeroWeights);
    }
    Ok(normal_cdf(m / scale))
}

/// Distance from x to the analytic decision flip of the smoothed
/// halfspace, measured in the sigma-scaled norm. For Gaussian-l2 this is
/// exactly the certified base radius at the analytic p_A.
pub fn analytic_flip_distance(
    model: &LinearModel,
    x: &[f64],
    params: &AnisoParams<f64>,
    lambda: f64,
) -> Result<f64, OracleError> {
    if !params.is_diagonal() {
        return Err(OracleError::NonDiagonal);
    }
    let m: f64 = model
        .w
        .iter()
        .zip(x.iter().zip(params.mu()))
        .map(|(wi, (xi, mi))| wi * (xi + mi))
        .sum::<f64>()
        + model.b;
    let ws: f64 = model
        .w
        .iter()
        .zip(params.sigma())
        .map(|(wi, si)| (wi * si) * (wi * si))
        .sum::<f64>()
        .sqrt();
    let _ = lambda;
    Ok(m.abs() / ws)
}

/// Exhaustive grid scan of the certified super-ellipsoid for a point
/// where the analytically smoothed prediction flips away from the clean
/// prediction. Returns the first flipping delta, or `None` when the
/// region is clean (what a sound certificate requires).
pub fn grid_flip_search(
    model: &LinearModel,
    x: &[f64],
    params: &AnisoParams<f64>,
    norm: Norm,
    base_radius: f64,
    grid_density: usize,
) -> Result<Option<Vec<f64>>, OracleError> {
    let d = x.len();
    if d > 3 {
        return Err(OracleError::DimensionTooLarge(d));
    }
    if !params.is_diagonal() {
        return Err(OracleError::NonDiagonal);
    }
    if d != params.dim() || d != model.w.len() {
        return Err(OracleError::DimensionMismatch {
            expected: params.dim(),
            got: d,
        });
    }
    if base_radius == 0.0 {
        return Ok(None);
    }
    // Clean prediction sign; the smoothed argmax flips strictly when the
    // shifted margin changes sign.
    let m0: f64 = model
        .w
        .iter()
        .zip(x.iter().zip(params.mu()))
        .map(|(wi, (xi, mi))| wi * (xi + mi))
        .sum::<f64>()
        + model.b;
    let clean_positive = m0 > 0.0;
    let steps = grid_density.max(2);
    let mut idx = vec![0usize; d];
    let mut delta_scaled = vec![0.0; d];
    let mut delta = vec![0.0; d];
    loop {
        for j in 0..d {
            let t = idx[j] as f64 / (steps - 1) as f64;
            delta_scaled[j] = (2.0 * t - 1.0) * base_radius;
        }
        if norm.of_vec(&delta_scaled) <= base_radius {
            for j in 0..d {
                delta[j] = delta_scaled[j] * params.sigma()[j];
            }
            let w_delta: f64 = model.w.iter().zip(&delta).map(|(wi, di)| wi * di).sum();
            let m = m0 + w_delta;
            let flipped = if clean_positive { m < 0.0 } else { m > 0.0 };
            if flipped {
                return Ok(Some(delta));
            }
        }
        // Odometer increment over the grid.
        let mut j = 0;
        loop {
            idx[j] += 1;
            if idx[j] < steps {
                break;
            }
            idx[j] = 0;
            j += 1;
            if j == d {
                return Ok(None);
            }
        }
    }
}

/// Rejection-sampling volume estimate of the certified super-ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McVolume {
    pub estimate: f64,
    pub std_error: f64,
    pub hit_rate: f64,
}

/// Monte-Carlo volume of S(d,p) inside the bounding box
/// prod [-sigma_i R, sigma_i R]. `norm_p` may be +inf (the box itself).
pub fn mc_volume(
    params: &AnisoParams<f64>,
    norm_p: f64,
    base_radius: f64,
    d: usize,
    samples: u64,
    seed: u64,
) -> Result<McVolume, OracleError> {
    if d > 3 {
        return Err(OracleError::DimensionTooLarge(d));
    }
    if !params.is_diagonal() {
        return Err(OracleError::NonDiagonal);
    }
    if params.dim() != d {
        return Err(OracleError::DimensionMismatch {
            expected: params.dim(),
            got: d,
        });
    }
    if base_radius == 0.0 {
        return Ok(McVolume {
            estimate: 0.0,
            std_error: 0.0,
            hit_rate: 0.0,
        });
    }
    let mut rng = rng_from_seed(seed);
    let half: Vec<f64> = params.sigma().iter().map(|s| s * base_radius).collect();
    let box_volume: f64 = half.iter().map(|h| 2.0 * h).product();
    let mut hits = 0u64;
    for _ in 0..samples {
        let mut acc = 0.0;
        let mut inside = true;
        for hj in &half {
            let u = rng.gen_range(-hj..=*hj);
            if norm_p.is_finite() {
                acc += (u.abs() / hj).powf(norm_p);
                if acc > 1.0 {
                    inside = false;
                    break;
                }
            }
        }
        if inside {
            hits += 1;
        }
    }
    let rate = hits as f64 / samples as f64;
    Ok(McVolume {
        estimate: box_volume * rate,
        std_error: box_volume * (rate * (1.0 - rate) / samples as f64).sqrt(),
        hit_rate: rate,
    })
}

/// One entry of the verification report.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn report(name: &str, started: Instant, passed: bool, detail: String) -> CheckReport {
    CheckReport {
        name: name.to_string(),
        passed,
        detail,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn random_params(d: usize, rng: &mut crate::rng::Rng) -> AnisoParams<f64> {
    let sigma: Vec<f64> = (0..d).map(|_| rng.gen_range(0.3..2.5)).collect();
    let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
    AnisoParams::diagonal(sigma, mu).unwrap()
}

fn random_spec(rng: &mut crate::rng::Rng, d: usize) -> NoiseSpec<f64> {
    let lambda = rng.gen_range(0.5..1.5);
    match rng.gen_range(0..5) {
        0 => NoiseSpec::gaussian(lambda).unwrap(),
        1 => NoiseSpec::laplace(lambda).unwrap(),
        2 => NoiseSpec::exp_linf(lambda).unwrap(),
        3 => NoiseSpec::uniform_linf(lambda).unwrap(),
        _ => NoiseSpec::power_law_linf(lambda, d as f64 + rng.gen_range(2.0..5.0)).unwrap(),
    }
}

/// Count tally mismatches between certifying f under (sigma, mu) noise
/// and certifying the transformed classifier f'(z) = f(z (.) sigma + mu')
/// with mu' = mu + x - sigma (.) x under isotropic noise, same seed.
/// `negate_sigma_in_transform` deliberately breaks the transform; the
/// mutation tests use it to prove the check has teeth.
pub fn equivalence_mismatches(
    instances: usize,
    draws: u64,
    seed: u64,
    negate_sigma_in_transform: bool,
) -> Result<usize, OracleError> {
    let mut rng = rng_from_seed(seed);
    let mut mismatches = 0;
    for inst in 0..instances {
        let d = rng.gen_range(2..6);
        let spec = random_spec(&mut rng, d);
        let params = random_params(d, &mut rng);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let k = rng.gen_range(2..5);
        let anchors: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..k).collect();
        let f = ClassifierHandle::lookup(anchors, labels).unwrap();

        let run_seed = derive_seed(seed, inst as u64);
        let aniso = classify_samples(&f, &x, &params, &spec, draws, run_seed, 1)?;

        // f'(z) = f(sigma (.) z + mu'), mu' = mu + x - sigma (.) x.
        let sigma: Vec<f64> = params
            .sigma()
            .iter()
            .map(|&s| if negate_sigma_in_transform { -s } else { s })
            .collect();
        let mu_prime: Vec<f64> = params
            .mu()
            .iter()
            .zip(x.iter().zip(params.sigma()))
            .map(|(m, (xi, s))| m + xi - s * xi)
            .collect();
        let f_ref = &f;
        let transformed = FnClassifier {
            num_classes: k,
            f: move |z: &[f64]| {
                let mapped: Vec<f64> = z
                    .iter()
                    .zip(sigma.iter().zip(&mu_prime))
                    .map(|(zi, (s, m))| s * zi + m)
                    .collect();
                f_ref.classify(&mapped).expect("lookup cannot fail")
            },
        };
        let identity = AnisoParams::isotropic(d)?;
        let iso = classify_samples(&transformed, &x, &identity, &spec, draws, run_seed, 1)?;
        if aniso.counts != iso.counts {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

/// Transformation equivalence: anisotropic tallies equal isotropic
/// tallies of the transformed classifier, draw by draw.
pub fn check_transformation_equivalence(instances: usize, draws: u64, seed: u64) -> CheckReport {
    let t = Instant::now();
    match equivalence_mismatches(instances, draws, seed, false) {
        Ok(0) => report(
            "transformation_equivalence",
            t,
            true,
            format!("{instances} instances x {draws} draws, 0 mismatches"),
        ),
        Ok(m) => report(
            "transformation_equivalence",
            t,
            false,
            format!("{m} of {instances} instances mismatched"),
        ),
        Err(e) => report("transformation_equivalence", t, false, e.to_string()),
    }
}

/// Gaussian-l2 halfspace tightness: the certified base radius at the
/// analytic p_A equals the true flip distance, the certified region holds
/// no flip, and a 5% inflation exposes one.
pub fn check_linear_tightness(instances: usize, grid_density: usize, seed: u64) -> CheckReport {
    let t = Instant::now();
    let mut rng = rng_from_seed(seed);
    let lambda = 1.0;
    let spec = NoiseSpec::gaussian(lambda).unwrap();
    let mut worst_rel = 0.0_f64;
    let mut done = 0;
    while done < instances {
        let d = rng.gen_range(2..4);
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if w.iter().all(|&v| v.abs() < 1e-3) {
            continue;
        }
        let model = LinearModel::new(w, rng.gen_range(-0.5..0.5)).unwrap();
        let params = random_params(d, &mut rng);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p1 = match analytic_gaussian_pa(&model, &x, &params, lambda) {
            Ok(p) => p,
            Err(e) => return report("linear_tightness", t, false, e.to_string()),
        };
        let p_a = p1.max(1.0 - p1);
        if !(0.55..0.999).contains(&p_a) {
            continue;
        }
        done += 1;
        let base_radius = radius_binary(&spec, Norm::L2, d, p_a).unwrap().unwrap();
        let flip = analytic_flip_distance(&model, &x, &params, lambda).unwrap();
        let rel = ((base_radius - flip) / flip).abs();
        worst_rel = worst_rel.max(rel);
        if rel > 1e-6 {
            return report(
                "linear_tightness",
                t,
                false,
                format!("radius {base_radius} vs flip distance {flip} (rel {rel:.3e})"),
            );
        }
        match grid_flip_search(&model, &x, &params, Norm::L2, base_radius, grid_density) {
            Ok(None) => {}
            Ok(Some(delta)) => {
                return report(
                    "linear_tightness",
                    t,
                    false,
                    format!("flip found inside the certified region at {delta:?}"),
                )
            }
            Err(e) => return report("linear_tightness", t, false, e.to_string()),
        }
        match grid_flip_search(
            &model,
            &x,
            &params,
            Norm::L2,
            base_radius * 1.05,
            grid_density,
        ) {
            Ok(Some(_)) => {}
            Ok(None) => {
                return report(
                    "linear_tightness",
                    t,
                    false,
                    "no flip found in the 1.05x inflated region".to_string(),
                )
            }
            Err(e) => return report("linear_tightness", t, false, e.to_string()),
        }
    }
    report(
        "linear_tightness",
        t,
        true,
        format!("{instances} instances, worst radius/flip rel err {worst_rel:.3e}"),
    )
}

/// Monte-Carlo frequency of the smoothed halfspace matches the analytic
/// probability within 3 standard errors.
pub fn check_analytic_vs_monte_carlo(instances: usize, n: u64, seed: u64) -> CheckReport {
    let t = Instant::now();
    let mut rng = rng_from_seed(seed);
    let lambda = 1.0;
    let spec = NoiseSpec::gaussian(lambda).unwrap();
    for inst in 0..instances {
        let d = rng.gen_range(2..5);
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = match LinearModel::new(w, rng.gen_range(-0.3..0.3)) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let params = random_params(d, &mut rng);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = analytic_gaussian_pa(&model, &x, &params, lambda).unwrap();
        let f = ClassifierHandle::Linear { model };
        let tally = match classify_samples(
            &f,
            &x,
            &params,
            &spec,
            n,
            derive_seed(seed, 7000 + inst as u64),
            1,
        ) {
            Ok(c) => c,
            Err(e) => return report("analytic_vs_monte_carlo", t, false, e.to_string()),
        };
        let p_hat = tally.counts[1] as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
        if (p_hat - p).abs() > 3.0 * se {
            return report(
                "analytic_vs_monte_carlo",
                t,
                false,
                format!("instance {inst}: |{p_hat} - {p}| > 3 se ({se:.2e})"),
            );
        }
    }
    report(
        "analytic_vs_monte_carlo",
        t,
        true,
        format!("{instances} instances within 3 se"),
    )
}

/// Closed-form Lebesgue measure against rejection sampling, including the
/// p -> inf box limit.
pub fn check_volume_consistency(samples: u64, seed: u64) -> CheckReport {
    let t = Instant::now();
    let sigma_sets: [Vec<f64>; 3] = [vec![1.3], vec![0.7, 1.9], vec![0.5, 1.0, 2.0]];
    let mut details = Vec::new();
    for sigma in &sigma_sets {
        let d = sigma.len();
        let params = AnisoParams::diagonal(sigma.clone(), vec![0.0; d]).unwrap();
        for p in [1.0, 2.0, 64.0] {
            let base_radius = 0.9;
            let exact = lebesgue_measure(&params, p, base_radius, d)
                .unwrap()
                .measure;
            let mc = match mc_volume(
                &params,
                p,
                base_radius,
                d,
                samples,
                derive_seed(seed, (d * 100) as u64 + p as u64),
            ) {
                Ok(v) => v,
                Err(e) => return report("volume_consistency", t, false, e.to_string()),
            };
            let rel = ((mc.estimate - exact) / exact).abs();
            details.push(format!(
                "d={d} p={p}: exact {exact:.6} mc {:.6} se {:.2e} rel {rel:.4}",
                mc.estimate, mc.std_error
            ));
            if rel > 0.02 {
                return report(
                    "volume_consistency",
                    t,
                    false,
                    format!(
                        "d={d} p={p}: rel deviation {rel:.4} > 2%; {}",
                        details.join("; ")
                    ),
                );
            }
        }
        // Exact box formula at p = inf.
        let exact_box = lebesgue_measure(&params, f64::INFINITY, 0.9, d)
            .unwrap()
            .measure;
        let want: f64 = sigma.iter().map(|s| 2.0 * s * 0.9).product();
        if ((exact_box - want) / want).abs() > 1e-12 {
            return report(
                "volume_consistency",
                t,
                false,
                format!("box formula mismatch at d={d}: {exact_box} vs {want}"),
            );
        }
    }
    // The unit-disc case: area pi.
    let disc = AnisoParams::isotropic(2).unwrap();
    let mc = mc_volume(&disc, 2.0, 1.0, 2, samples, derive_seed(seed, 424242)).unwrap();
    let rel = ((mc.estimate - std::f64::consts::PI) / std::f64::consts::PI).abs();
    if rel > 0.02 {
        return report(
            "volume_consistency",
            t,
            false,
            format!("unit disc: {} vs pi (rel {rel:.4})", mc.estimate),
        );
    }
    details.push(format!(
        "unit disc {:.6} se {:.2e}",
        mc.estimate, mc.std_error
    ));
    report("volume_consistency", t, true, details.join("; "))
}

/// Clopper-Pearson spot checks: the unanimous closed form and the
/// tail-mass equation at the returned bound.
pub fn check_clopper_pearson() -> CheckReport {
    let t = Instant::now();
    for n in [10u64, 100, 1000] {
        let alpha = 0.001_f64;
        let got: f64 = match lower_conf_bound(n, n, 1.0 - alpha) {
            Ok(v) => v,
            Err(e) => return report("clopper_pearson", t, false, e.to_string()),
        };
        let want = alpha.powf(1.0 / n as f64);
        if (got - want).abs() > 1e-10 {
            return report(
                "clopper_pearson",
                t,
                false,
                format!("k=n={n}: {got} vs closed form {want}"),
            );
        }
    }
    let p: f64 = lower_conf_bound(50, 100, 0.999).unwrap();
    let tail = crate::stats::binomial_tail_ge(50, 100, p);
    if (tail - 0.001).abs() > 1e-8 {
        return report(
            "clopper_pearson",
            t,
            false,
            format!("tail at bound {p} is {tail}, want 0.001"),
        );
    }
    report(
        "clopper_pearson",
        t,
        true,
        "closed form and tail equation hold".into(),
    )
}

/// Radius formula spot values from the closed forms.
pub fn check_radius_spot_values() -> CheckReport {
    let t = Instant::now();
    let lap = NoiseSpec::laplace(1.0).unwrap();
    let r: f64 = radius_binary(&lap, Norm::L1, 4, 0.75).unwrap().unwrap();
    if (r - std::f64::consts::LN_2).abs() > 1e-10 {
        return report(
            "radius_spot_values",
            t,
            false,
            format!("laplace l1 at 0.75: {r}"),
        );
    }
    let g = NoiseSpec::gaussian(1.0).unwrap();
    if radius_binary(&g, Norm::L2, 4, 0.5).unwrap() != Some(0.0) {
        return report(
            "radius_spot_values",
            t,
            false,
            "gaussian l2 at 1/2 not zero".into(),
        );
    }
    let u = NoiseSpec::uniform_linf(2.5).unwrap();
    let r: f64 = radius_binary(&u, Norm::L1, 4, 1.0).unwrap().unwrap();
    if (r - 2.5).abs() > 1e-12 {
        return report(
            "radius_spot_values",
            t,
            false,
            format!("uniform l1 at 1: {r}"),
        );
    }
    report(
        "radius_spot_values",
        t,
        true,
        "ln 2, zero and lambda spot values hold".into(),
    )
}

/// Certified region consistency: every point of the min(sigma) R ball
/// lies inside the region (random sampling over parameters and points).
pub fn check_region_radius_consistency(pairs: usize, seed: u64) -> CheckReport {
    let t = Instant::now();
    let mut rng = rng_from_seed(seed);
    for _ in 0..pairs {
        let d = rng.gen_range(1..8);
        let sigma: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..4.0)).collect();
        let params = AnisoParams::diagonal(sigma, vec![0.0; d]).unwrap();
        let base_radius = rng.gen_range(0.0..2.0);
        let norm = match rng.gen_range(0..3) {
            0 => Norm::L1,
            1 => Norm::L2,
            _ => Norm::Linf,
        };
        let rr = params.min_sigma() * base_radius;
        let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nv = norm.of_vec(&raw);
        if nv == 0.0 {
            continue;
        }
        let scale = rr * rng.gen::<f64>() / nv;
        let delta: Vec<f64> = raw.iter().map(|v| v * scale).collect();
        match in_certified_region(&delta, &params, norm, base_radius) {
            Ok(true) => {}
            Ok(false) => {
                return report(
                    "region_radius_consistency",
                    t,
                    false,
                    format!("delta inside min-sigma ball rejected: {delta:?}"),
                )
            }
            Err(e) => return report("region_radius_consistency", t, false, e.to_string()),
        }
    }
    report(
        "region_radius_consistency",
        t,
        true,
        format!("{pairs} random pairs hold"),
    )
}

/// The full verification suite in dependency order. Oracle checks run
/// before anything downstream is trusted.
pub fn run_verification_suite(seed: u64) -> Vec<CheckReport> {
    vec![
        check_clopper_pearson(),
        check_radius_spot_values(),
        check_transformation_equivalence(100, 200, derive_seed(seed, 1)),
        check_linear_tightness(50, 80, derive_seed(seed, 2)),
        check_analytic_vs_monte_carlo(50, 100_000, derive_seed(seed, 3)),
        check_volume_consistency(1_000_000, derive_seed(seed, 4)),
        check_region_radius_consistency(10_000, derive_seed(seed, 5)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_validation() {
        assert!(LinearModel::new(vec![0.0, 0.0], 1.0).is_err());
        let m = LinearModel::new(vec![1.0, -1.0], 0.5).unwrap();
        assert_eq!(m.classify(&[1.0, 0.0]), 1);
        assert_eq!(m.classify(&[0.0, 1.0]), 0);
    }

    #[test]
    fn analytic_pa_examples() {
        let m = LinearModel::new(vec![1.0, 0.0], 0.0).unwrap();
        let iso = AnisoParams::isotropic(2).unwrap();
        // Boundary point: exactly 1/2.
        assert_eq!(
            analytic_gaussian_pa(&m, &[0.0, 3.0], &iso, 1.0).unwrap(),
            0.5
        );
        // Unit margin: Phi(1).
        let p = analytic_gaussian_pa(&m, &[1.0, 0.0], &iso, 1.0).unwrap();
        assert!((p - 0.8413447460685429).abs() < 1e-12);
        // Scaling sigma by k divides the argument by k.
        let scaled = AnisoParams::diagonal(vec![2.0, 2.0], vec![0.0; 2]).unwrap();
        let p2 = analytic_gaussian_pa(&m, &[1.0, 0.0], &scaled, 1.0).unwrap();
        assert!((p2 - normal_cdf(0.5_f64)).abs() < 1e-12);
    }

    #[test]
    fn flip_search_examples() {
        let m = LinearModel::new(vec![1.0, 0.0], 0.0).unwrap();
        let params = AnisoParams::diagonal(vec![1.0, 2.0], vec![0.0; 2]).unwrap();
        let x = [0.8, 0.0];
        // Flip distance in the scaled norm is |margin| / ||w . sigma||.
        let flip = analytic_flip_distance(&m, &x, &params, 1.0).unwrap();
        assert!((flip - 0.8).abs() < 1e-12);
        // No flip inside the exact region, one inside the inflated region.
        assert!(grid_flip_search(&m, &x, &params, Norm::L2, flip, 101)
            .unwrap()
            .is_none());
        assert!(
            grid_flip_search(&m, &x, &params, Norm::L2, flip * 1.05, 101)
                .unwrap()
                .is_some()
        );
        // Zero radius is trivially clean.
        assert!(grid_flip_search(&m, &x, &params, Norm::L2, 0.0, 50)
            .unwrap()
            .is_none());
        assert!(grid_flip_search(
            &m,
            &[0.0; 4],
            &AnisoParams::isotropic(4).unwrap(),
            Norm::L2,
            1.0,
            10
        )
        .is_err());
    }

    #[test]
    fn mc_volume_examples() {
        let disc = AnisoParams::isotropic(2).unwrap();
        let v = mc_volume(&disc, 2.0, 1.0, 2, 200_000, 5).unwrap();
        assert!((v.estimate - std::f64::consts::PI).abs() / std::f64::consts::PI < 0.02);
        assert!(v.std_error > 0.0);

        // p = 64 approximates the box: sigma (1,2), R 1 has volume near 8.
        let p = AnisoParams::diagonal(vec![1.0, 2.0], vec![0.0; 2]).unwrap();
        let v = mc_volume(&p, 64.0, 1.0, 2, 200_000, 6).unwrap();
        assert!((v.estimate - 8.0).abs() / 8.0 < 0.02);

        let z = mc_volume(&disc, 2.0, 0.0, 2, 1000, 7).unwrap();
        assert_eq!(z.estimate, 0.0);
    }

    #[test]
    fn equivalence_holds_and_mutation_breaks_it() {
        assert_eq!(equivalence_mismatches(30, 150, 99, false).unwrap(), 0);
        // Injected sigma-sign bug must be caught.
        assert!(equivalence_mismatches(30, 150, 99, true).unwrap() > 0);
    }

    #[test]
    fn suite_checks_pass_quickly() {
        // Small parameters here; the full-size suite runs in `verify` and
        // in the acceptance tests.
        assert!(check_clopper_pearson().passed);
        assert!(check_radius_spot_values().passed);
        let eq = check_transformation_equivalence(20, 100, 1);
        assert!(eq.passed, "{}", eq.detail);
        let lt = check_linear_tightness(10, 60, 2);
        assert!(lt.passed, "{}", lt.detail);
        let vol = check_volume_consistency(100_000, 3);
        assert!(vol.passed, "{}", vol.detail);
        assert!(
            vol.detail.contains("se"),
            "volume report must include standard errors"
        );
        let rc = check_region_radius_consistency(1000, 4);
        assert!(rc.passed, "{}", rc.detail);
    }
}
