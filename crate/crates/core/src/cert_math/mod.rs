//! Closed-form certified radii (isotropic and anisotropic), the ALM
//! metric, region membership, and the volume of the certified
//! super-ellipsoid.
//!
//! The anisotropic certificate is obtained from the isotropic radius by a
//! change of variables: the region is ||Sigma^-1 delta||_p <= R, the
//! worst-direction radius is min(sigma) R and the volume-normalized size
//! (ALM) is geomean(sigma) R.

pub mod special;

use crate::distributions::{AnisoParams, NoiseFamily, NoiseSpec};
use crate::linalg::LinalgError;
use crate::real::Real;

pub use special::{
    erf, erfc, gamma_function, inverse_normal_cdf, ln_gamma, normal_cdf, normal_pdf, SpecialError,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CertMathError {
    #[error("probability {0} outside [0,1]")]
    ProbabilityOutOfRange(f64),
    #[error("probability bounds violate p_b_upper <= p_a_lower: p_a={p_a}, p_b={p_b}")]
    BoundsOutOfOrder { p_a: f64, p_b: f64 },
    #[error("no radius formula for family {family} under the {norm} threat model")]
    UnsupportedPair { family: NoiseFamily, norm: Norm },
    #[error("power-law radius requires exponent a > d, got a={a}, d={d}")]
    ExponentTooSmall { a: f64, d: usize },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("multiclass bounds are only supported for Gaussian noise under l2")]
    UnsupportedMulticlass,
    #[error("operation requires diagonal anisotropic parameters")]
    NonDiagonal,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("norm exponent p must be positive, got {0}")]
    InvalidNormExponent(f64),
    #[error("base radius must be nonnegative, got {0}")]
    NegativeRadius(f64),
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Threat-model norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    /// The exponent as a scalar; Linf maps to +inf.
    pub fn p<R: Real>(self) -> R {
        match self {
            Norm::L1 => R::one(),
            Norm::L2 => R::of(2.0),
            Norm::Linf => R::infinity(),
        }
    }

    pub fn of_vec<R: Real>(self, v: &[R]) -> R {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).fold(R::zero(), |a, b| a + b),
            Norm::L2 => v
                .iter()
                .map(|x| *x * *x)
                .fold(R::zero(), |a, b| a + b)
                .sqrt(),
            Norm::Linf => v.iter().map(|x| x.abs()).fold(R::zero(), R::max),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

/// Lower bound on the top-class probability plus the optional upper bound
/// on the runner-up; the binary case leaves the runner-up implicit
/// (p_b_upper = 1 - p_a_lower).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbBounds<R: Real> {
    p_a_lower: R,
    p_b_upper: Option<R>,
}

impl<R: Real> ProbBounds<R> {
    pub fn new(p_a_lower: R, p_b_upper: Option<R>) -> Result<Self, CertMathError> {
        if !(p_a_lower >= R::zero() && p_a_lower <= R::one()) {
            return Err(CertMathError::ProbabilityOutOfRange(p_a_lower.as_f64()));
        }
        if let Some(p_b) = p_b_upper {
            if !(p_b >= R::zero() && p_b <= R::one()) {
                return Err(CertMathError::ProbabilityOutOfRange(p_b.as_f64()));
            }
            if p_b > p_a_lower {
                return Err(CertMathError::BoundsOutOfOrder {
                    p_a: p_a_lower.as_f64(),
                    p_b: p_b.as_f64(),
                });
            }
        }
        Ok(Self {
            p_a_lower,
            p_b_upper,
        })
    }

    pub fn binary(p_a_lower: R) -> Result<Self, CertMathError> {
        Self::new(p_a_lower, None)
    }

    pub fn p_a_lower(&self) -> R {
        self.p_a_lower
    }

    pub fn p_b_upper(&self) -> Option<R> {
        self.p_b_upper
    }
}

/// The anisotropic certificate: worst-direction radius min(sigma) R, the
/// ALM geomean(sigma) R, and the underlying isotropic radius R.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate<R: Real> {
    pub radius: R,
    pub alm: R,
    pub base_radius: R,
    pub norm: Norm,
}

/// Binary-case isotropic certified radius for one (family, norm) pair.
///
/// `Ok(None)` is the distinguished "not certifiable" outcome for
/// p_a_lower < 1/2; exactly 1/2 yields a zero radius.
pub fn radius_binary<R: Real>(
    spec: &NoiseSpec<R>,
    norm: Norm,
    d: usize,
    p_a_lower: R,
) -> Result<Option<R>, CertMathError> {
    if d == 0 {
        return Err(CertMathError::ZeroDimension);
    }
    let one = R::one();
    let half = R::of(0.5);
    if !(p_a_lower >= R::zero() && p_a_lower <= one) {
        return Err(CertMathError::ProbabilityOutOfRange(p_a_lower.as_f64()));
    }
    let lambda = spec.lambda();
    let p = p_a_lower;
    let two = R::of(2.0);
    let df = R::of(d as f64);

    // Validate the (family, norm) pair and the power-law exponent before
    // deciding certifiability, so unsupported requests always error.
    let a_exp = match (spec.family(), norm) {
        (NoiseFamily::PowerLawLinf, Norm::L1) => {
            let a = spec.power_exponent().expect("validated at construction");
            if a <= df {
                return Err(CertMathError::ExponentTooSmall { a: a.as_f64(), d });
            }
            Some(a)
        }
        (NoiseFamily::Gaussian, _)
        | (NoiseFamily::Laplace, Norm::L1)
        | (NoiseFamily::ExpLinf, Norm::L1)
        | (NoiseFamily::ExpLinf, Norm::Linf)
        | (NoiseFamily::UniformLinf, Norm::L1)
        | (NoiseFamily::UniformLinf, Norm::Linf) => None,
        (family, norm) => return Err(CertMathError::UnsupportedPair { family, norm }),
    };

    if p < half {
        return Ok(None);
    }
    if p == half {
        return Ok(Some(R::zero()));
    }

    let r = match (spec.family(), norm) {
        (NoiseFamily::Gaussian, Norm::L1) | (NoiseFamily::Gaussian, Norm::L2) => {
            if p == one {
                R::infinity()
            } else {
                lambda * inverse_normal_cdf(p)?
            }
        }
        (NoiseFamily::Gaussian, Norm::Linf) => {
            if p == one {
                R::infinity()
            } else {
                lambda * inverse_normal_cdf(p)? / df.sqrt()
            }
        }
        (NoiseFamily::Laplace, Norm::L1) => {
            if p == one {
                R::infinity()
            } else {
                -lambda * (two * (one - p)).ln()
            }
        }
        (NoiseFamily::ExpLinf, Norm::L1) => two * df * lambda * (p - half),
        (NoiseFamily::ExpLinf, Norm::Linf) => {
            if p == one {
                R::infinity()
            } else {
                lambda * (one / (two * (one - p))).ln()
            }
        }
        (NoiseFamily::UniformLinf, Norm::L1) => two * lambda * (p - half),
        (NoiseFamily::UniformLinf, Norm::Linf) => {
            let root = (R::of(1.5) - p).powf(one / df);
            two * lambda * (one - root)
        }
        (NoiseFamily::PowerLawLinf, Norm::L1) => {
            let a = a_exp.expect("checked above");
            two * df * lambda / (a - df) * (p - half)
        }
        _ => unreachable!("pair validated above"),
    };
    Ok(Some(r.max(R::zero())))
}

/// Multiclass Gaussian l2 radius: (lambda/2)(Phi^-1(p_a) - Phi^-1(p_b)),
/// clamped at zero.
pub fn radius_gaussian_multiclass<R: Real>(
    lambda: R,
    bounds: &ProbBounds<R>,
) -> Result<R, CertMathError> {
    let p_a = bounds.p_a_lower();
    let p_b = bounds.p_b_upper().unwrap_or_else(|| R::one() - p_a);
    let one = R::one();
    let qa = if p_a == one {
        R::infinity()
    } else if p_a == R::zero() {
        R::neg_infinity()
    } else {
        inverse_normal_cdf(p_a)?
    };
    let qb = if p_b == R::zero() {
        R::neg_infinity()
    } else if p_b == one {
        R::infinity()
    } else {
        inverse_normal_cdf(p_b)?
    };
    let r = if qa == qb {
        R::zero()
    } else {
        lambda * R::of(0.5) * (qa - qb)
    };
    Ok(r.max(R::zero()))
}

/// Full anisotropic certificate for diagonal parameters.
///
/// The isotropic formula is evaluated at the anisotropic probability
/// bounds; the worst-direction radius scales by min(sigma) and the ALM by
/// the geometric mean of sigma (computed in log space). Multiclass bounds
/// (explicit p_b_upper) are honored on the Gaussian l2 path only.
pub fn certificate<R: Real>(
    spec: &NoiseSpec<R>,
    norm: Norm,
    d: usize,
    bounds: &ProbBounds<R>,
    params: &AnisoParams<R>,
) -> Result<Option<Certificate<R>>, CertMathError> {
    if !params.is_diagonal() {
        return Err(CertMathError::NonDiagonal);
    }
    if params.dim() != d {
        return Err(CertMathError::DimensionMismatch {
            expected: d,
            got: params.dim(),
        });
    }
    let base = match bounds.p_b_upper() {
        Some(_) => {
            if spec.family() != NoiseFamily::Gaussian || norm != Norm::L2 {
                return Err(CertMathError::UnsupportedMulticlass);
            }
            Some(radius_gaussian_multiclass(spec.lambda(), bounds)?)
        }
        None => radius_binary(spec, norm, d, bounds.p_a_lower())?,
    };
    Ok(base.map(|base_radius| Certificate {
        radius: params.min_sigma() * base_radius,
        alm: params.geo_mean_sigma() * base_radius,
        base_radius,
        norm,
    }))
}

/// Membership test for the certified region ||Sigma^-1 delta||_p <= R
/// (diagonal case: ||delta (/) sigma||_p <= R, boundary included).
pub fn in_certified_region<R: Real>(
    delta: &[R],
    params: &AnisoParams<R>,
    norm: Norm,
    base_radius: R,
) -> Result<bool, CertMathError> {
    if delta.len() != params.dim() {
        return Err(CertMathError::DimensionMismatch {
            expected: params.dim(),
            got: delta.len(),
        });
    }
    if base_radius < R::zero() {
        return Err(CertMathError::NegativeRadius(base_radius.as_f64()));
    }
    let scaled = match params.full_sigma() {
        None => delta
            .iter()
            .zip(params.sigma().iter())
            .map(|(&d, &s)| d / s)
            .collect::<Vec<R>>(),
        // No explicit inverse: solve Sigma y = delta.
        Some(full) => full.lu()?.solve(delta)?,
    };
    Ok(norm.of_vec(&scaled) <= base_radius)
}

/// Volume of the certified super-ellipsoid and its natural log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LebesgueMeasure<R: Real> {
    pub measure: R,
    pub log_measure: R,
}

/// Lebesgue measure of S(d,p) = { delta : sum |delta_i/(sigma_i R)|^p <= 1 }:
/// (2 R Gamma(1+1/p))^d prod(sigma) / Gamma(1+d/p).
///
/// Evaluated in log space throughout (mandatory for d > 30); `measure`
/// overflows to +inf when the volume exceeds the scalar range. `norm_p`
/// may be +inf, in which case the region is the axis-aligned box with
/// volume (2R)^d prod(sigma).
pub fn lebesgue_measure<R: Real>(
    params: &AnisoParams<R>,
    norm_p: R,
    base_radius: R,
    d: usize,
) -> Result<LebesgueMeasure<R>, CertMathError> {
    if d == 0 {
        return Err(CertMathError::ZeroDimension);
    }
    if params.dim() != d {
        return Err(CertMathError::DimensionMismatch {
            expected: d,
            got: params.dim(),
        });
    }
    if !(norm_p > R::zero()) {
        return Err(CertMathError::InvalidNormExponent(norm_p.as_f64()));
    }
    if base_radius < R::zero() {
        return Err(CertMathError::NegativeRadius(base_radius.as_f64()));
    }
    if base_radius == R::zero() {
        return Ok(LebesgueMeasure {
            measure: R::zero(),
            log_measure: R::neg_infinity(),
        });
    }
    let df = R::of(d as f64);
    let log_sigma_sum: R = params
        .sigma()
        .iter()
        .map(|s| s.ln())
        .fold(R::zero(), |a, b| a + b);
    let (ln_g1, ln_gd) = if norm_p.is_infinite() {
        (R::zero(), R::zero())
    } else {
        (
            ln_gamma(R::one() + R::one() / norm_p)?,
            ln_gamma(R::one() + df / norm_p)?,
        )
    };
    let log_measure = df * ((R::of(2.0) * base_radius).ln() + ln_g1) + log_sigma_sum - ln_gd;
    Ok(LebesgueMeasure {
        measure: log_measure.exp(),
        log_measure,
    })
}
