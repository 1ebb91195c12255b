//! Exact binomial machinery for the certification algorithms: the
//! one-sided Clopper-Pearson lower confidence bound and the exact
//! binomial hypothesis test.

use crate::cert_math::special::ln_gamma;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("confidence {0} outside the open interval (0,1)")]
    InvalidConfidence(f64),
    #[error("null probability {0} outside the open interval (0,1)")]
    InvalidNullProbability(f64),
    #[error("invalid counts: k={k} out of n={n}")]
    InvalidCounts { k: u64, n: u64 },
    #[error("tally is empty")]
    EmptyTally,
}

/// Per-class prediction counts from one sampling pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTally {
    pub counts: Vec<u64>,
    pub n: u64,
}

impl CountTally {
    pub fn new(counts: Vec<u64>) -> Result<Self, StatsError> {
        let n = counts.iter().sum();
        if n == 0 {
            return Err(StatsError::EmptyTally);
        }
        Ok(Self { counts, n })
    }

    /// Index of the largest count; ties break to the lowest class index.
    pub fn top_class(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }

    pub fn merge(&mut self, other: &CountTally) {
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n += other.n;
    }
}

const BETACF_MAX_ITER: usize = 300;

/// Continued fraction for the incomplete beta (modified Lentz).
fn betacf<R: Real>(a: R, b: R, x: R) -> R {
    let one = R::one();
    let two = R::of(2.0);
    let fpmin = R::of(1e-300);
    let eps = R::epsilon() * R::of(4.0);

    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < fpmin {
        d = fpmin;
    }
    d = one / d;
    let mut h = d;
    for m in 1..=BETACF_MAX_ITER {
        let mf = R::of(m as f64);
        let m2 = two * mf;
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < fpmin {
            d = fpmin;
        }
        c = one + aa / c;
        if c.abs() < fpmin {
            c = fpmin;
        }
        d = one / d;
        h = h * d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < fpmin {
            d = fpmin;
        }
        c = one + aa / c;
        if c.abs() < fpmin {
            c = fpmin;
        }
        d = one / d;
        let del = d * c;
        h *= del;
        if (del - one).abs() < eps {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b) for a, b > 0.
pub fn reg_inc_beta<R: Real>(a: R, b: R, x: R) -> R {
    if x <= R::zero() {
        return R::zero();
    }
    if x >= R::one() {
        return R::one();
    }
    let ln_bt = ln_gamma(a + b).expect("a+b > 0")
        - ln_gamma(a).expect("a > 0")
        - ln_gamma(b).expect("b > 0")
        + a * x.ln()
        + b * (R::one() - x).ln();
    let bt = ln_bt.exp();
    if x < (a + R::one()) / (a + b + R::of(2.0)) {
        bt * betacf(a, b, x) / a
    } else {
        R::one() - bt * betacf(b, a, R::one() - x) / b
    }
}

/// Upper binomial tail P(X >= k) for X ~ Binomial(n, p).
pub fn binomial_tail_ge<R: Real>(k: u64, n: u64, p: R) -> R {
    if k == 0 {
        R::one()
    } else {
        reg_inc_beta(R::of(k as f64), R::of((n - k + 1) as f64), p)
    }
}

/// Lower binomial tail P(X <= k) for X ~ Binomial(n, p).
pub fn binomial_tail_le<R: Real>(k: u64, n: u64, p: R) -> R {
    if k >= n {
        R::one()
    } else {
        R::one() - reg_inc_beta(R::of((k + 1) as f64), R::of((n - k) as f64), p)
    }
}

const BISECT_MAX_ITER: usize = 200;
const BISECT_TOL: f64 = 1e-14;

/// One-sided Clopper-Pearson lower confidence bound.
///
/// Returns the p such that the Binomial(n, p) upper tail at k equals
/// alpha = 1 - confidence, i.e. the alpha-quantile of Beta(k, n-k+1),
/// found by bisection on the regularized incomplete beta. k = 0 maps to 0.
pub fn lower_conf_bound<R: Real>(k: u64, n: u64, confidence: R) -> Result<R, StatsError> {
    let cf = confidence.as_f64();
    if !(cf > 0.0 && cf < 1.0) {
        return Err(StatsError::InvalidConfidence(cf));
    }
    if n == 0 || k > n {
        return Err(StatsError::InvalidCounts { k, n });
    }
    if k == 0 {
        return Ok(R::zero());
    }
    let alpha = R::one() - confidence;
    let a = R::of(k as f64);
    let b = R::of((n - k + 1) as f64);
    let mut lo = R::zero();
    let mut hi = R::one();
    let tol = R::of(BISECT_TOL);
    for _ in 0..BISECT_MAX_ITER {
        let mid = (lo + hi) * R::of(0.5);
        if reg_inc_beta(a, b, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < tol {
            break;
        }
    }
    Ok((lo + hi) * R::of(0.5))
}

/// Two-sided exact binomial test p-value against success probability p0
/// (doubled smaller tail, clamped at 1).
pub fn binomial_p_value<R: Real>(k: u64, n: u64, p0: R) -> Result<R, StatsError> {
    let p = p0.as_f64();
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::InvalidNullProbability(p));
    }
    if n == 0 || k > n {
        return Err(StatsError::InvalidCounts { k, n });
    }
    let ge = binomial_tail_ge(k, n, p0);
    let le = binomial_tail_le(k, n, p0);
    Ok((R::of(2.0) * ge.min(le)).min(R::one()))
}

/// One-sided (upper tail) exact binomial test p-value.
pub fn binomial_p_value_one_sided<R: Real>(k: u64, n: u64, p0: R) -> Result<R, StatsError> {
    let p = p0.as_f64();
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::InvalidNullProbability(p));
    }
    if n == 0 || k > n {
        return Err(StatsError::InvalidCounts { k, n });
    }
    Ok(binomial_tail_ge(k, n, p0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::Distribution;

    /// Direct binomial upper-tail sum, independent of the beta route.
    fn tail_ge_by_sum(k: u64, n: u64, p: f64) -> f64 {
        let ln_fact = |m: u64| ln_gamma::<f64>(m as f64 + 1.0).unwrap();
        (k..=n)
            .map(|j| {
                let ln_c = ln_fact(n) - ln_fact(j) - ln_fact(n - j);
                (ln_c + j as f64 * p.ln() + (n - j) as f64 * (1.0 - p).ln()).exp()
            })
            .sum()
    }

    fn cp_by_tail_inversion(k: u64, n: u64, alpha: f64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if tail_ge_by_sum(k, n, mid) < alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn reg_inc_beta_reference_values() {
        // mpmath, 22 digits.
        let cases = [
            (2.0, 3.0, 0.5, 0.6875),
            (4.5, 1.2, 0.3, 0.006326822734908464),
            (0.5, 0.5, 0.25, 1.0 / 3.0),
            (50.0, 51.0, 0.358, 0.0025035110234706077),
            (10.0, 1.0, 0.9, 0.3486784401),
            (200.0, 300.0, 0.42, 0.8196010664172665),
        ];
        for (a, b, x, want) in cases {
            let got = reg_inc_beta::<f64>(a, b, x);
            assert!(
                ((got - want) / want).abs() < 1e-12,
                "I_{x}({a},{b}) = {got}, want {want}"
            );
        }
        assert_eq!(reg_inc_beta::<f64>(2.0, 3.0, 0.0), 0.0);
        assert_eq!(reg_inc_beta::<f64>(2.0, 3.0, 1.0), 1.0);
    }

    #[test]
    fn lower_conf_bound_edge_cases() {
        assert_eq!(lower_conf_bound::<f64>(0, 100, 0.999).unwrap(), 0.0);
        assert!(lower_conf_bound::<f64>(5, 4, 0.9).is_err());
        assert!(lower_conf_bound::<f64>(1, 10, 0.0).is_err());
        assert!(lower_conf_bound::<f64>(1, 10, 1.0).is_err());
        assert!(lower_conf_bound::<f64>(0, 0, 0.9).is_err());
    }

    #[test]
    fn lower_conf_bound_unanimous_closed_form() {
        // Beta(n, 1) quantile at alpha is alpha^(1/n).
        for n in [10u64, 100, 1000] {
            let alpha = 0.001_f64;
            let got = lower_conf_bound::<f64>(n, n, 1.0 - alpha).unwrap();
            let want = alpha.powf(1.0 / n as f64);
            assert!(
                (got - want).abs() < 1e-10,
                "k=n={n}: got {got}, want {want}"
            );
        }
        let got = lower_conf_bound::<f64>(100, 100, 0.999).unwrap();
        assert!((got - 0.933_254_300_796_991).abs() < 1e-10);
    }

    #[test]
    fn lower_conf_bound_tail_equation() {
        // At the returned bound the upper tail mass equals alpha.
        let p = lower_conf_bound::<f64>(50, 100, 0.999).unwrap();
        let tail = tail_ge_by_sum(50, 100, p);
        assert!(
            (tail - 0.001).abs() < 1e-8,
            "tail at bound = {tail}, bound = {p}"
        );
        assert!((p - 0.3447980064253178).abs() < 1e-9);
    }

    #[test]
    fn lower_conf_bound_matches_tail_inversion_up_to_n50() {
        let alpha = 0.05_f64;
        for n in 1..=50u64 {
            for k in 0..=n {
                let got = lower_conf_bound::<f64>(k, n, 1.0 - alpha).unwrap();
                let want = cp_by_tail_inversion(k, n, alpha);
                assert!(
                    (got - want).abs() < 1e-8,
                    "k={k} n={n}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn coverage_simulation() {
        // P(bound > true p) must stay below alpha (plus sampling slack).
        let alpha = 0.05_f64;
        let trials = 100_000;
        let (n, p_true) = (200u64, 0.7_f64);
        let binom = rand_distr::Binomial::new(n, p_true).unwrap();
        let mut rng = crate::rng::rng_from_seed(20260810);
        let mut violations = 0u64;
        for _ in 0..trials {
            let k = binom.sample(&mut rng);
            if lower_conf_bound::<f64>(k, n, 1.0 - alpha).unwrap() > p_true {
                violations += 1;
            }
        }
        let rate = violations as f64 / trials as f64;
        let limit = alpha + 3.0 * (alpha / trials as f64).sqrt();
        assert!(rate <= limit, "violation rate {rate} > {limit}");
    }

    #[test]
    fn binomial_p_value_reference_values() {
        assert!((binomial_p_value::<f64>(10, 20, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!((binomial_p_value::<f64>(10, 10, 0.5).unwrap() - 0.001953125).abs() < 1e-12);
        assert!((binomial_p_value::<f64>(9, 10, 0.5).unwrap() - 0.021484375).abs() < 1e-12);
        assert!((binomial_p_value::<f64>(11, 20, 0.5).unwrap() - 0.823802947998047).abs() < 1e-10);
        assert!((binomial_p_value::<f64>(20, 20, 0.5).unwrap() - 1.9073486328125e-6).abs() < 1e-16);
        // Asymmetric null.
        assert!((binomial_p_value::<f64>(8, 10, 0.3).unwrap() - 0.0031807728).abs() < 1e-10);
        assert!(binomial_p_value::<f64>(1, 10, 0.0).is_err());
        assert!(binomial_p_value::<f64>(1, 10, 1.0).is_err());
    }

    #[test]
    fn one_sided_variant_is_upper_tail() {
        let got = binomial_p_value_one_sided::<f64>(9, 10, 0.5).unwrap();
        assert!((got - 0.0107421875).abs() < 1e-12);
    }

    #[test]
    fn tally_top_class_breaks_ties_low() {
        let t = CountTally::new(vec![3, 5, 5, 1]).unwrap();
        assert_eq!(t.top_class(), 1);
        assert_eq!(t.n, 14);
        assert!(CountTally::new(vec![0, 0]).is_err());
    }

    proptest! {
        #[test]
        fn bound_monotone_in_k(n in 1u64..400, conf in 0.5f64..0.9999) {
            let mut prev = -1.0;
            let mut rng = crate::rng::rng_from_seed(n);
            for _ in 0..8 {
                let k = rng.gen_range(0..=n);
                let b = lower_conf_bound::<f64>(k, n, conf).unwrap();
                // also spot-check monotonicity against k-1
                if k > 0 {
                    let b_prev = lower_conf_bound::<f64>(k - 1, n, conf).unwrap();
                    prop_assert!(b_prev <= b + 1e-12);
                }
                prop_assert!((0.0..=1.0).contains(&b));
                let _ = prev;
                prev = b;
            }
        }

        #[test]
        fn bound_monotone_in_alpha(n in 1u64..300, k_frac in 0.0f64..=1.0) {
            let k = ((n as f64) * k_frac).round() as u64;
            let b_tight = lower_conf_bound::<f64>(k, n, 0.999).unwrap();
            let b_loose = lower_conf_bound::<f64>(k, n, 0.9).unwrap();
            // Looser confidence (larger alpha) gives a bound at least as large.
            prop_assert!(b_loose >= b_tight - 1e-12);
        }
    }
}
