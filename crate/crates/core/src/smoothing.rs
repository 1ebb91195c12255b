//! The smoothed-classifier engine: Monte-Carlo class tallies, the
//! certification procedure (select the top class on fresh draws, bound
//! its probability with Clopper-Pearson, convert to an anisotropic
//! certificate) and the abstaining prediction procedure.
//!
//! Noise parameters are generated exactly once per certified input, from
//! the clean input only; the perturbed points the guarantee speaks about
//! never reach the generator. Sampling is partitioned into fixed-size
//! chunks with per-chunk derived streams, so tallies are identical for
//! any worker count.

use crate::cert_math::{certificate, CertMathError, Certificate, Norm, ProbBounds};
use crate::distributions::{sample_anisotropic, AnisoParams, DistError, NoiseSpec};
use crate::nn::{Network, NnError, Tensor};
use crate::npg::{NpgError, ParamGenerator};
use crate::oracle::LinearModel;
use crate::rng::{chunk_rng, derive_seed};
use crate::stats::{
    binomial_p_value, binomial_p_value_one_sided, lower_conf_bound, CountTally, StatsError,
};
use rayon::prelude::*;

/// Fixed sampling chunk; the partition (not the worker count) defines the
/// random streams.
pub const CHUNK_SIZE: u64 = 4096;

const PHASE_SELECT: u64 = 0x5e1ec7;
const PHASE_ESTIMATE: u64 = 0xe57103;
const PHASE_PREDICT: u64 = 0x9ced1c;
const EXAMPLE_TAG: u64 = 0xeaa017;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("classifier failed: {0}")]
pub struct ClassifierError(pub String);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SmoothingError {
    #[error("alpha {0} outside the open interval (0,1)")]
    InvalidAlpha(f64),
    #[error("sample count must be at least 1")]
    ZeroSamples,
    #[error("input length {got} does not match parameter dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset slices have mismatched lengths")]
    MisalignedDataset,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    CertMath(#[from] CertMathError),
    #[error(transparent)]
    Npg(#[from] NpgError),
}

/// Deterministic base classifier: same input, same class index.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;
    fn classify(&self, x: &[f64]) -> Result<usize, ClassifierError>;
}

/// Adapter for closures, mainly used by verification harnesses.
pub struct FnClassifier<F> {
    pub num_classes: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> usize + Sync> Classifier for FnClassifier<F> {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn classify(&self, x: &[f64]) -> Result<usize, ClassifierError> {
        Ok((self.f)(x))
    }
}

/// The built-in pluggable base classifiers.
#[derive(Debug, Clone)]
pub enum ClassifierHandle {
    /// Neural network; class = argmax of the final layer, ties to the
    /// lowest index.
    Nn {
        network: Network,
        num_classes: usize,
    },
    /// Binary halfspace: class 1 where w.z + b > 0.
    Linear { model: LinearModel },
    /// Nearest-anchor table lookup.
    Lookup {
        anchors: Vec<Vec<f64>>,
        labels: Vec<usize>,
        num_classes: usize,
    },
}

impl ClassifierHandle {
    pub fn from_network(network: Network) -> Result<Self, ClassifierError> {
        let num_classes = network
            .output_dim()
            .ok_or_else(|| ClassifierError("network has no parameterized layer".into()))?;
        Ok(Self::Nn {
            network,
            num_classes,
        })
    }

    pub fn lookup(anchors: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, ClassifierError> {
        if anchors.is_empty() || anchors.len() != labels.len() {
            return Err(ClassifierError(
                "lookup table must be nonempty and aligned".into(),
            ));
        }
        let d = anchors[0].len();
        if anchors.iter().any(|a| a.len() != d) {
            return Err(ClassifierError(
                "lookup anchors must share one dimension".into(),
            ));
        }
        let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
        Ok(Self::Lookup {
            anchors,
            labels,
            num_classes,
        })
    }
}

impl Classifier for ClassifierHandle {
    fn num_classes(&self) -> usize {
        match self {
            ClassifierHandle::Nn { num_classes, .. } => *num_classes,
            ClassifierHandle::Linear { .. } => 2,
            ClassifierHandle::Lookup { num_classes, .. } => *num_classes,
        }
    }

    fn classify(&self, x: &[f64]) -> Result<usize, ClassifierError> {
        match self {
            ClassifierHandle::Nn { network, .. } => {
                let t = Tensor::new(vec![1, x.len()], x.to_vec())
                    .map_err(|e: NnError| ClassifierError(e.to_string()))?;
                let out = network
                    .forward(&t)
                    .map_err(|e| ClassifierError(e.to_string()))?;
                let mut best = 0;
                for (j, &v) in out.data.iter().enumerate() {
                    if v > out.data[best] {
                        best = j;
                    }
                }
                Ok(best)
            }
            ClassifierHandle::Linear { model } => Ok(model.classify(x)),
            ClassifierHandle::Lookup {
                anchors, labels, ..
            } => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, a) in anchors.iter().enumerate() {
                    let d: f64 = a.iter().zip(x).map(|(ai, xi)| (ai - xi) * (ai - xi)).sum();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                Ok(labels[best])
            }
        }
    }
}

/// Monte-Carlo and confidence knobs of the engine. Defaults follow the
/// usual certification settings: alpha 0.001, 100 selection draws,
/// 100000 estimation draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    pub workers: usize,
    /// Use the one-sided upper-tail binomial test in `predict`.
    pub one_sided_predict: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n0: 100,
            n: 100_000,
            alpha: 0.001,
            workers: 1,
            one_sided_predict: false,
        }
    }
}

impl EngineConfig {
    fn validate(&self) -> Result<(), SmoothingError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SmoothingError::InvalidAlpha(self.alpha));
        }
        if self.n0 == 0 || self.n == 0 {
            return Err(SmoothingError::ZeroSamples);
        }
        Ok(())
    }
}

/// Outcome of one certification.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Certified {
        class: usize,
        p_a_lower: f64,
        certificate: Certificate<f64>,
    },
    Abstain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertResult {
    pub verdict: Verdict,
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
}

impl CertResult {
    pub fn certified(&self) -> Option<(usize, f64, &Certificate<f64>)> {
        match &self.verdict {
            Verdict::Certified {
                class,
                p_a_lower,
                certificate,
            } => Some((*class, *p_a_lower, certificate)),
            Verdict::Abstain => None,
        }
    }
}

fn tally_chunk<C: Classifier>(
    f: &C,
    x: &[f64],
    params: &AnisoParams<f64>,
    spec: &NoiseSpec<f64>,
    len: u64,
    seed: u64,
    chunk_index: u64,
) -> Result<Vec<u64>, SmoothingError> {
    let mut rng = chunk_rng(seed, chunk_index);
    let mut counts = vec![0u64; f.num_classes()];
    let mut point = vec![0.0; x.len()];
    for _ in 0..len {
        let noise = sample_anisotropic(spec, params, &mut rng)?;
        for (p, (&xi, ni)) in point.iter_mut().zip(x.iter().zip(noise)) {
            *p = xi + ni;
        }
        let class = f.classify(&point)?;
        if class >= counts.len() {
            return Err(
                ClassifierError(format!("class {class} out of {} classes", counts.len())).into(),
            );
        }
        counts[class] += 1;
    }
    Ok(counts)
}

/// Tally the base classifier over n anisotropic noise draws around x.
///
/// The partition into [`CHUNK_SIZE`] chunks with per-chunk derived
/// streams makes the result a pure function of (inputs, seed): any number
/// of workers accumulates the same integer counts.
pub fn classify_samples<C: Classifier>(
    f: &C,
    x: &[f64],
    params: &AnisoParams<f64>,
    spec: &NoiseSpec<f64>,
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<CountTally, SmoothingError> {
    if n == 0 {
        return Err(SmoothingError::ZeroSamples);
    }
    if x.len() != params.dim() {
        return Err(SmoothingError::DimensionMismatch {
            expected: params.dim(),
            got: x.len(),
        });
    }
    let chunks = n.div_ceil(CHUNK_SIZE);
    let chunk_len = |i: u64| (n - i * CHUNK_SIZE).min(CHUNK_SIZE);
    let per_chunk: Vec<Vec<u64>> = if workers <= 1 || chunks == 1 {
        (0..chunks)
            .map(|i| tally_chunk(f, x, params, spec, chunk_len(i), seed, i))
            .collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| ClassifierError(format!("worker pool: {e}")))?;
        pool.install(|| {
            (0..chunks)
                .into_par_iter()
                .map(|i| tally_chunk(f, x, params, spec, chunk_len(i), seed, i))
                .collect::<Result<_, _>>()
        })?
    };
    let mut counts = vec![0u64; f.num_classes()];
    for c in per_chunk {
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
    }
    Ok(CountTally::new(counts)?)
}

/// Certification: generate the noise parameters once from the clean x,
/// pick the top class on n0 selection draws, bound its probability on n
/// fresh estimation draws, and certify when the bound clears 1/2.
pub fn certify<C: Classifier, G: ParamGenerator>(
    f: &C,
    gen: &G,
    x: &[f64],
    spec: &NoiseSpec<f64>,
    norm: Norm,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<CertResult, SmoothingError> {
    cfg.validate()?;
    let params = gen.params_for(x)?;
    let selection = classify_samples(
        f,
        x,
        &params,
        spec,
        cfg.n0,
        derive_seed(seed, PHASE_SELECT),
        cfg.workers,
    )?;
    let top = selection.top_class();
    let estimation = classify_samples(
        f,
        x,
        &params,
        spec,
        cfg.n,
        derive_seed(seed, PHASE_ESTIMATE),
        cfg.workers,
    )?;
    let p_lower: f64 = lower_conf_bound(estimation.counts[top], cfg.n, 1.0 - cfg.alpha)?;
    let verdict = if p_lower > 0.5 {
        let bounds = ProbBounds::binary(p_lower)?;
        let cert = certificate(spec, norm, x.len(), &bounds, &params)?
            .expect("p > 1/2 always yields a certificate");
        Verdict::Certified {
            class: top,
            p_a_lower: p_lower,
            certificate: cert,
        }
    } else {
        Verdict::Abstain
    };
    Ok(CertResult {
        verdict,
        n0: cfg.n0,
        n: cfg.n,
        alpha: cfg.alpha,
    })
}

/// Outcome of the abstaining prediction procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub predicted: Option<usize>,
    pub top_class: usize,
    pub top_count: u64,
    pub p_value: f64,
}

/// Prediction: top class over n draws, kept only when the binomial test
/// rejects p = 1/2 at level alpha.
pub fn predict<C: Classifier, G: ParamGenerator>(
    f: &C,
    gen: &G,
    x: &[f64],
    spec: &NoiseSpec<f64>,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<Prediction, SmoothingError> {
    cfg.validate()?;
    let params = gen.params_for(x)?;
    let tally = classify_samples(
        f,
        x,
        &params,
        spec,
        cfg.n,
        derive_seed(seed, PHASE_PREDICT),
        cfg.workers,
    )?;
    let top = tally.top_class();
    let k = tally.counts[top];
    let p_value: f64 = if cfg.one_sided_predict {
        binomial_p_value_one_sided(k, cfg.n, 0.5)?
    } else {
        binomial_p_value(k, cfg.n, 0.5)?
    };
    let predicted = if p_value <= cfg.alpha {
        Some(top)
    } else {
        None
    };
    Ok(Prediction {
        predicted,
        top_class: top,
        top_count: k,
        p_value,
    })
}

/// Per-example campaign outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleOutcome {
    pub example_id: usize,
    pub true_label: usize,
    pub result: CertResult,
}

/// Certify a dataset example by example. Each example gets its own
/// derived seed, so outcomes do not depend on evaluation order or on
/// `max_examples`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_campaign<C: Classifier, G: ParamGenerator>(
    xs: &[Vec<f64>],
    ys: &[usize],
    f: &C,
    gen: &G,
    spec: &NoiseSpec<f64>,
    norm: Norm,
    cfg: &EngineConfig,
    master_seed: u64,
    max_examples: Option<usize>,
) -> Result<Vec<ExampleOutcome>, SmoothingError> {
    if xs.len() != ys.len() {
        return Err(SmoothingError::MisalignedDataset);
    }
    let limit = max_examples.unwrap_or(xs.len()).min(xs.len());
    let mut out = Vec::with_capacity(limit);
    for i in 0..limit {
        let seed = derive_seed(master_seed, EXAMPLE_TAG ^ (i as u64));
        let result = certify(f, gen, &xs[i], spec, norm, cfg, seed)?;
        out.push(ExampleOutcome {
            example_id: i,
            true_label: ys[i],
            result,
        });
    }
    Ok(out)
}

/// One threshold of the certified-accuracy curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub acc_radius: f64,
    pub acc_alm: f64,
}

/// Certified accuracy at each threshold r: the fraction of examples
/// certified for the correct class with radius (resp. ALM) at least r.
/// Abstentions and wrong-class certificates count as failures everywhere.
pub fn accuracy_curves(outcomes: &[ExampleOutcome], thresholds: &[f64]) -> Vec<CurvePoint> {
    let n = outcomes.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&threshold| {
            let mut by_radius = 0usize;
            let mut by_alm = 0usize;
            for o in outcomes {
                if let Some((class, _, cert)) = o.result.certified() {
                    if class == o.true_label {
                        if cert.radius >= threshold {
                            by_radius += 1;
                        }
                        if cert.alm >= threshold {
                            by_alm += 1;
                        }
                    }
                }
            }
            CurvePoint {
                threshold,
                acc_radius: by_radius as f64 / n,
                acc_alm: by_alm as f64 / n,
            }
        })
        .collect()
}

/// The largest finite ALM among correct certifications, used to scale
/// threshold grids.
pub fn max_observed_alm(outcomes: &[ExampleOutcome]) -> f64 {
    outcomes
        .iter()
        .filter_map(|o| o.result.certified())
        .map(|(_, _, c)| c.alm)
        .filter(|a| a.is_finite())
        .fold(0.0, f64::max)
}
