//! The five isotropic noise families and the anisotropic transform
//! applied on top of them.
//!
//! Sampling always draws the isotropic vector first and then applies the
//! linear transform, so two runs with the same seed see identical base
//! noise regardless of the anisotropic parameters. That property is what
//! the transformation-equivalence checks in `oracle` rely on.

use crate::linalg::{LinalgError, Matrix};
use crate::real::Real;
use crate::rng::Rng;
use crate::stats::reg_inc_beta;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Smallest admissible variance multiplier; anything below is rejected at
/// construction so log-space geometric means stay finite.
pub const SIGMA_MIN: f64 = 1e-12;
/// Condition-number ceiling for a general covariance matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// General (non-diagonal) covariance is a small-dimension verification
/// feature only.
pub const MAX_FULL_SIGMA_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistError {
    #[error("scale lambda must be positive, got {0}")]
    InvalidLambda(f64),
    #[error("power-law exponent must be present for PowerLawLinf and absent otherwise")]
    ExponentPresence,
    #[error("power-law exponent must be positive, got {0}")]
    InvalidExponent(f64),
    #[error("power-law exponent a={a} must exceed the dimension d={d}")]
    ExponentTooSmall { a: f64, d: usize },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("sigma[{index}] = {value} is below the minimum {SIGMA_MIN}")]
    SigmaTooSmall { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("general covariance is limited to d <= {MAX_FULL_SIGMA_DIM}, got {0}")]
    FullSigmaTooLarge(usize),
    #[error("covariance condition number {0:.3e} exceeds {MAX_CONDITION:.0e}")]
    IllConditioned(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The isotropic noise family of Table-1 randomized smoothing methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
    ExpLinf,
    UniformLinf,
    PowerLawLinf,
}

impl std::fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Laplace => "laplace",
            NoiseFamily::ExpLinf => "exp_linf",
            NoiseFamily::UniformLinf => "uniform_linf",
            NoiseFamily::PowerLawLinf => "power_law_linf",
        };
        f.write_str(s)
    }
}

/// Noise family plus its scalar scale (and power-law exponent).
///
/// `lambda` is the scale in the density exponent; for Gaussian it is the
/// per-coordinate standard deviation, for Laplace the per-coordinate
/// scale (variance 2 lambda^2), for the linf families the scale of the
/// linf-radius law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec<R: Real> {
    family: NoiseFamily,
    lambda: R,
    power_exponent: Option<R>,
}

impl<R: Real> NoiseSpec<R> {
    pub fn new(
        family: NoiseFamily,
        lambda: R,
        power_exponent: Option<R>,
    ) -> Result<Self, DistError> {
        if !(lambda > R::zero()) || !lambda.is_finite() {
            return Err(DistError::InvalidLambda(lambda.as_f64()));
        }
        match (family, power_exponent) {
            (NoiseFamily::PowerLawLinf, Some(a)) => {
                if !(a > R::zero()) || !a.is_finite() {
                    return Err(DistError::InvalidExponent(a.as_f64()));
                }
            }
            (NoiseFamily::PowerLawLinf, None) => return Err(DistError::ExponentPresence),
            (_, Some(_)) => return Err(DistError::ExponentPresence),
            (_, None) => {}
        }
        Ok(Self {
            family,
            lambda,
            power_exponent,
        })
    }

    pub fn gaussian(lambda: R) -> Result<Self, DistError> {
        Self::new(NoiseFamily::Gaussian, lambda, None)
    }

    pub fn laplace(lambda: R) -> Result<Self, DistError> {
        Self::new(NoiseFamily::Laplace, lambda, None)
    }

    pub fn exp_linf(lambda: R) -> Result<Self, DistError> {
        Self::new(NoiseFamily::ExpLinf, lambda, None)
    }

    pub fn uniform_linf(lambda: R) -> Result<Self, DistError> {
        Self::new(NoiseFamily::UniformLinf, lambda, None)
    }

    pub fn power_law_linf(lambda: R, a: R) -> Result<Self, DistError> {
        Self::new(NoiseFamily::PowerLawLinf, lambda, Some(a))
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn lambda(&self) -> R {
        self.lambda
    }

    pub fn power_exponent(&self) -> Option<R> {
        self.power_exponent
    }
}

/// Per-dimension variance multipliers and mean offsets (diagonal case),
/// optionally a small general covariance matrix for verification work.
#[derive(Debug, Clone, PartialEq)]
pub struct AnisoParams<R: Real> {
    sigma: Vec<R>,
    mu: Vec<R>,
    full_sigma: Option<Matrix<R>>,
}

impl<R: Real> AnisoParams<R> {
    /// Diagonal covariance diag(sigma) with mean offset mu.
    pub fn diagonal(sigma: Vec<R>, mu: Vec<R>) -> Result<Self, DistError> {
        if sigma.is_empty() {
            return Err(DistError::ZeroDimension);
        }
        if sigma.len() != mu.len() {
            return Err(DistError::DimensionMismatch {
                expected: sigma.len(),
                got: mu.len(),
            });
        }
        let floor = R::of(SIGMA_MIN);
        for (i, &s) in sigma.iter().enumerate() {
            if !(s >= floor) || !s.is_finite() {
                return Err(DistError::SigmaTooSmall {
                    index: i,
                    value: s.as_f64(),
                });
            }
        }
        Ok(Self {
            sigma,
            mu,
            full_sigma: None,
        })
    }

    /// All-ones sigma, zero mu: the isotropic degenerate.
    pub fn isotropic(d: usize) -> Result<Self, DistError> {
        Self::diagonal(vec![R::one(); d], vec![R::zero(); d])
    }

    /// General invertible covariance. Restricted to small dimensions and
    /// rejected when the estimated 1-norm condition number exceeds
    /// [`MAX_CONDITION`].
    pub fn with_full_sigma(full: Matrix<R>, mu: Vec<R>) -> Result<Self, DistError> {
        let d = full.dim();
        if d == 0 {
            return Err(DistError::ZeroDimension);
        }
        if d > MAX_FULL_SIGMA_DIM {
            return Err(DistError::FullSigmaTooLarge(d));
        }
        if mu.len() != d {
            return Err(DistError::DimensionMismatch {
                expected: d,
                got: mu.len(),
            });
        }
        let cond = full.condition_1()?;
        if !(cond.as_f64() <= MAX_CONDITION) {
            return Err(DistError::IllConditioned(cond.as_f64()));
        }
        let sigma = (0..d).map(|i| full.get(i, i)).collect();
        Ok(Self {
            sigma,
            mu,
            full_sigma: Some(full),
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[R] {
        &self.sigma
    }

    pub fn mu(&self) -> &[R] {
        &self.mu
    }

    pub fn full_sigma(&self) -> Option<&Matrix<R>> {
        self.full_sigma.as_ref()
    }

    pub fn is_diagonal(&self) -> bool {
        self.full_sigma.is_none()
    }

    pub fn min_sigma(&self) -> R {
        self.sigma.iter().copied().fold(R::infinity(), R::min)
    }

    /// Geometric mean of sigma, evaluated in log space.
    pub fn geo_mean_sigma(&self) -> R {
        let d = R::of(self.sigma.len() as f64);
        let log_sum: R = self
            .sigma
            .iter()
            .map(|s| s.ln())
            .fold(R::zero(), |a, b| a + b);
        (log_sum / d).exp()
    }
}

/// Draw one uniform direction on the linf unit sphere.
fn linf_direction<R: Real>(d: usize, rng: &mut Rng) -> Vec<R> {
    loop {
        let u: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let m = u.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        if m > 0.0 {
            return u.into_iter().map(|v| R::of(v / m)).collect();
        }
    }
}

/// Inverse-CDF draw of the power-law linf radius.
///
/// The scaled radius s = r/lambda has density proportional to
/// s^(d-1) (1+s)^(-a); its CDF is the regularized incomplete beta
/// I_{s/(1+s)}(d, a-d), which is bisected to invert.
fn power_law_radius(d: usize, a: f64, lambda: f64, rng: &mut Rng) -> f64 {
    let u: f64 = rng.gen();
    let aa = d as f64;
    let bb = a - d as f64;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if reg_inc_beta(aa, bb, mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let x = 0.5 * (lo + hi);
    // Guard the open end; x -> 1 means an astronomically large radius.
    let x = x.min(1.0 - 1e-15);
    lambda * x / (1.0 - x)
}

/// One i.i.d. vector from the family's isotropic density.
pub fn sample_isotropic<R: Real>(
    spec: &NoiseSpec<R>,
    d: usize,
    rng: &mut Rng,
) -> Result<Vec<R>, DistError> {
    if d == 0 {
        return Err(DistError::ZeroDimension);
    }
    let lambda = spec.lambda.as_f64();
    let out = match spec.family {
        NoiseFamily::Gaussian => (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                R::of(lambda * z)
            })
            .collect(),
        NoiseFamily::Laplace => (0..d)
            .map(|_| {
                // Inverse CDF of the double exponential.
                let u: f64 = rng.gen();
                let s = u - 0.5;
                let mag = (1.0 - 2.0 * s.abs()).max(f64::MIN_POSITIVE);
                R::of(-lambda * s.signum() * mag.ln())
            })
            .collect(),
        NoiseFamily::UniformLinf => (0..d)
            .map(|_| R::of(lambda * (rng.gen::<f64>() * 2.0 - 1.0)))
            .collect(),
        NoiseFamily::ExpLinf => {
            // The linf radius of exp(-||z/lambda||_inf) is Gamma(d, lambda).
            let gamma = rand_distr::Gamma::new(d as f64, lambda)
                .expect("d >= 1 and lambda > 0 were validated");
            let r: f64 = gamma.sample(rng);
            let dir = linf_direction::<R>(d, rng);
            dir.into_iter().map(|t| t * R::of(r)).collect()
        }
        NoiseFamily::PowerLawLinf => {
            let a = spec
                .power_exponent
                .expect("validated at construction")
                .as_f64();
            if a <= d as f64 {
                return Err(DistError::ExponentTooSmall { a, d });
            }
            let r = power_law_radius(d, a, lambda, rng);
            let dir = linf_direction::<R>(d, rng);
            dir.into_iter().map(|t| t * R::of(r)).collect()
        }
    };
    Ok(out)
}

/// Apply the anisotropic transform: diagonal case sigma (.) eps + mu,
/// general case Sigma eps + mu.
pub fn to_anisotropic<R: Real>(eps: &[R], params: &AnisoParams<R>) -> Result<Vec<R>, DistError> {
    if eps.len() != params.dim() {
        return Err(DistError::DimensionMismatch {
            expected: params.dim(),
            got: eps.len(),
        });
    }
    match &params.full_sigma {
        None => Ok(eps
            .iter()
            .zip(params.sigma.iter())
            .zip(params.mu.iter())
            .map(|((&e, &s), &m)| e * s + m)
            .collect()),
        Some(full) => {
            let mut v = full.mul_vec(eps)?;
            for (vi, &m) in v.iter_mut().zip(params.mu.iter()) {
                *vi += m;
            }
            Ok(v)
        }
    }
}

/// Composition of [`sample_isotropic`] and [`to_anisotropic`] under one
/// generator state.
pub fn sample_anisotropic<R: Real>(
    spec: &NoiseSpec<R>,
    params: &AnisoParams<R>,
    rng: &mut Rng,
) -> Result<Vec<R>, DistError> {
    let eps = sample_isotropic(spec, params.dim(), rng)?;
    to_anisotropic(&eps, params)
}
