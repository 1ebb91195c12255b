//! Noise-parameter generators: the closed-form spatial pattern, the
//! constant-input dataset-wise generator, and the input-dependent
//! cascaded certification-wise generator, plus their joint training loss.
//!
//! All generators emit diagonal `AnisoParams`. Variance maps go through a
//! positivity transform sigma = floor + gamma (tanh(z)+1)/2 so a scale can
//! never be negative or collapse below `SIGMA_FLOOR`; mean maps use the
//! signed gamma tanh(z).

use crate::cert_math::Norm;
use crate::distributions::{sample_isotropic, AnisoParams, DistError, NoiseSpec};
use crate::nn::io::{save_network, Tokens};
use crate::nn::{
    adam_step, softmax_cross_entropy, AdamConfig, AdamState, Layer, Network, NnError, Tensor,
};
use crate::real::Real;
use crate::rng::{derive_seed, rng_from_seed};
use rand::seq::SliceRandom;

/// Hard lower bound on every generated variance multiplier.
pub const SIGMA_FLOOR: f64 = 1e-3;
/// Length of the all-ones constant input of the dataset-wise generator.
pub const CONSTANT_INPUT_LEN: usize = 32;
/// Temperature of the differentiable soft minimum.
pub const SOFTMIN_TAU: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NpgError {
    #[error("iota must be positive, got {0}")]
    InvalidIota(f64),
    #[error("kappa must be nonnegative, got {0}")]
    InvalidKappa(f64),
    #[error("target mean must be positive, got {0}")]
    InvalidTargetMean(f64),
    #[error("pattern grid must be nonempty")]
    EmptyGrid,
    #[error("gamma must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("certification-wise generation requires the input x")]
    MissingInput,
    #[error("input length {got} does not match generator dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("batch must be nonempty and aligned with its labels")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Spatial variance pattern sigma(a,b) = kappa ||(a,b)||_p^2 + iota with
/// pixel coordinates centered on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternSpec<R: Real> {
    pub norm: Norm,
    pub kappa: R,
    pub iota: R,
    pub height: usize,
    pub width: usize,
    pub target_mean: Option<R>,
}

impl<R: Real> PatternSpec<R> {
    pub fn new(
        norm: Norm,
        kappa: R,
        iota: R,
        height: usize,
        width: usize,
        target_mean: Option<R>,
    ) -> Result<Self, NpgError> {
        if !(iota > R::zero()) {
            return Err(NpgError::InvalidIota(iota.as_f64()));
        }
        if kappa < R::zero() {
            return Err(NpgError::InvalidKappa(kappa.as_f64()));
        }
        if height * width == 0 {
            return Err(NpgError::EmptyGrid);
        }
        if let Some(t) = target_mean {
            if !(t > R::zero()) {
                return Err(NpgError::InvalidTargetMean(t.as_f64()));
            }
        }
        Ok(Self {
            norm,
            kappa,
            iota,
            height,
            width,
            target_mean,
        })
    }

    /// Constant map: the isotropic degenerate sigma = iota everywhere.
    pub fn isotropic(height: usize, width: usize, iota: R) -> Result<Self, NpgError> {
        Self::new(Norm::L2, R::zero(), iota, height, width, None)
    }
}

/// Row-major H x W variance map for the pattern. The center pixel sits at
/// integer offsets (0,0), so sigma there is exactly iota; a set
/// `target_mean` rescales the whole map multiplicatively.
pub fn pattern_sigma<R: Real>(spec: &PatternSpec<R>) -> Result<Vec<R>, NpgError> {
    let (h, w) = (spec.height, spec.width);
    let mut map = Vec::with_capacity(h * w);
    for row in 0..h {
        let a = R::of(row as f64 - (h / 2) as f64);
        for col in 0..w {
            let b = R::of(col as f64 - (w / 2) as f64);
            let dist = spec.norm.of_vec(&[a, b]);
            map.push(spec.kappa * dist * dist + spec.iota);
        }
    }
    if let Some(target) = spec.target_mean {
        let mean: R = map.iter().copied().fold(R::zero(), |x, y| x + y) / R::of(map.len() as f64);
        let scale = target / mean;
        for s in &mut map {
            *s *= scale;
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpgKind {
    Pattern,
    DatasetWise,
    CertificationWise,
}

impl std::fmt::Display for NpgKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NpgKind::Pattern => "pattern",
            NpgKind::DatasetWise => "dataset_wise",
            NpgKind::CertificationWise => "certification_wise",
        })
    }
}

/// One of the three noise-parameter generators.
#[derive(Debug, Clone, PartialEq)]
pub struct NpgModel {
    pub kind: NpgKind,
    pub gamma: f64,
    pub pattern: Option<PatternSpec<f64>>,
    pub mu_net: Option<Network>,
    pub sigma_net: Option<Network>,
    dim: usize,
    height: usize,
    width: usize,
}

impl NpgModel {
    pub fn pattern(spec: PatternSpec<f64>) -> Self {
        Self {
            kind: NpgKind::Pattern,
            gamma: 1.0,
            dim: spec.height * spec.width,
            height: spec.height,
            width: spec.width,
            pattern: Some(spec),
            mu_net: None,
            sigma_net: None,
        }
    }

    /// Constant-input generator: two 5-layer MLPs (first four linear
    /// layers followed by activations) mapping an all-ones vector to the
    /// mu and sigma maps.
    pub fn dataset_wise(
        dim: usize,
        gamma: f64,
        hidden: usize,
        rng: &mut crate::rng::Rng,
    ) -> Result<Self, NpgError> {
        if !(gamma > 0.0) {
            return Err(NpgError::InvalidGamma(gamma));
        }
        if dim == 0 {
            return Err(NpgError::EmptyGrid);
        }
        let mlp = |rng: &mut crate::rng::Rng| {
            Network::new(vec![
                Layer::dense(CONSTANT_INPUT_LEN, hidden, rng),
                Layer::LeakyRelu { slope: 0.01 },
                Layer::dense(hidden, hidden, rng),
                Layer::LeakyRelu { slope: 0.01 },
                Layer::dense(hidden, hidden, rng),
                Layer::LeakyRelu { slope: 0.01 },
                Layer::dense(hidden, hidden, rng),
                Layer::LeakyRelu { slope: 0.01 },
                Layer::dense(hidden, dim, rng),
            ])
        };
        Ok(Self {
            kind: NpgKind::DatasetWise,
            gamma,
            pattern: None,
            mu_net: Some(mlp(rng)),
            sigma_net: Some(mlp(rng)),
            dim,
            height: dim,
            width: 1,
        })
    }

    /// Cascaded input-dependent generator: the mu net reads x, the sigma
    /// net reads x + mu. Each net is a 4-conv dense block (16 channels,
    /// skip concatenation between consecutive layers).
    pub fn certification_wise(
        height: usize,
        width: usize,
        gamma: f64,
        rng: &mut crate::rng::Rng,
    ) -> Result<Self, NpgError> {
        if !(gamma > 0.0) {
            return Err(NpgError::InvalidGamma(gamma));
        }
        if height * width == 0 {
            return Err(NpgError::EmptyGrid);
        }
        let block = |rng: &mut crate::rng::Rng| {
            Network::new(vec![
                Layer::conv2d(1, 16, 3, rng),
                Layer::LeakyRelu { slope: 0.01 },
                Layer::SkipConcat,
                Layer::conv2d(17, 16, 3, rng),
                Layer::LeakyRelu { slope: 0.01 },
                Layer::SkipConcat,
                Layer::conv2d(17, 16, 3, rng),
                Layer::LeakyRelu { slope: 0.01 },
                Layer::SkipConcat,
                Layer::conv2d(17, 1, 3, rng),
            ])
        };
        Ok(Self {
            kind: NpgKind::CertificationWise,
            gamma,
            pattern: None,
            mu_net: Some(block(rng)),
            sigma_net: Some(block(rng)),
            dim: height * width,
            height,
            width,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn sigma_from_raw(&self, z: f64) -> f64 {
        SIGMA_FLOOR + self.gamma * (z.tanh() + 1.0) * 0.5
    }

    fn mu_from_raw(&self, z: f64) -> f64 {
        self.gamma * z.tanh()
    }

    /// Produce the anisotropic parameters. Pattern and dataset-wise kinds
    /// ignore `x`; the certification-wise kind requires it and reads the
    /// clean input only.
    pub fn generate_params(&self, x: Option<&[f64]>) -> Result<AnisoParams<f64>, NpgError> {
        match self.kind {
            NpgKind::Pattern => {
                let spec = self.pattern.as_ref().expect("pattern kind carries a spec");
                let sigma: Vec<f64> = pattern_sigma(spec)?
                    .into_iter()
                    .map(|s| s.max(SIGMA_FLOOR))
                    .collect();
                let mu = vec![0.0; sigma.len()];
                Ok(AnisoParams::diagonal(sigma, mu)?)
            }
            NpgKind::DatasetWise => {
                let ones = Tensor::new(vec![1, CONSTANT_INPUT_LEN], vec![1.0; CONSTANT_INPUT_LEN])?;
                let mu_raw = self.mu_net.as_ref().expect("nets present").forward(&ones)?;
                let sigma_raw = self
                    .sigma_net
                    .as_ref()
                    .expect("nets present")
                    .forward(&ones)?;
                let mu = mu_raw.data.iter().map(|&z| self.mu_from_raw(z)).collect();
                let sigma = sigma_raw
                    .data
                    .iter()
                    .map(|&z| self.sigma_from_raw(z))
                    .collect();
                Ok(AnisoParams::diagonal(sigma, mu)?)
            }
            NpgKind::CertificationWise => {
                let x = x.ok_or(NpgError::MissingInput)?;
                if x.len() != self.dim {
                    return Err(NpgError::DimensionMismatch {
                        expected: self.dim,
                        got: x.len(),
                    });
                }
                let xt = Tensor::new(vec![1, 1, self.height, self.width], x.to_vec())?;
                let mu_raw = self.mu_net.as_ref().expect("nets present").forward(&xt)?;
                let mu: Vec<f64> = mu_raw.data.iter().map(|&z| self.mu_from_raw(z)).collect();
                let shifted: Vec<f64> = x.iter().zip(&mu).map(|(a, m)| a + m).collect();
                let st = Tensor::new(vec![1, 1, self.height, self.width], shifted)?;
                let sigma_raw = self
                    .sigma_net
                    .as_ref()
                    .expect("nets present")
                    .forward(&st)?;
                let sigma = sigma_raw
                    .data
                    .iter()
                    .map(|&z| self.sigma_from_raw(z))
                    .collect();
                Ok(AnisoParams::diagonal(sigma, mu)?)
            }
        }
    }

    /// Hard (min, mean) of the generated sigma values, for reporting.
    /// Certification-wise generators are probed on up to 256 inputs.
    pub fn sigma_summary(&self, xs: &[Vec<f64>]) -> Result<(f64, f64), NpgError> {
        let mut min = f64::INFINITY;
        let mut mean_acc = 0.0;
        let mut count = 0usize;
        let probe: Vec<Option<&[f64]>> = match self.kind {
            NpgKind::CertificationWise => xs.iter().take(256).map(|v| Some(v.as_slice())).collect(),
            _ => vec![xs.first().map(|v| v.as_slice())],
        };
        for x in probe {
            let params = self.generate_params(x)?;
            for &s in params.sigma() {
                min = min.min(s);
            }
            mean_acc += params.sigma().iter().sum::<f64>() / params.sigma().len() as f64;
            count += 1;
        }
        Ok((min, mean_acc / count.max(1) as f64))
    }
}

/// Source of anisotropic parameters for the smoothing engine. The engine
/// calls this exactly once per certified input, with the clean input.
pub trait ParamGenerator: Sync {
    fn params_for(&self, x: &[f64]) -> Result<AnisoParams<f64>, NpgError>;
}

impl ParamGenerator for NpgModel {
    fn params_for(&self, x: &[f64]) -> Result<AnisoParams<f64>, NpgError> {
        self.generate_params(Some(x))
    }
}

/// Which variance statistic the loss maximizes: the mean targets the ALM,
/// the (soft) min targets the certified radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    MeanSigma,
    MinSigma,
}

/// Differentiable soft minimum and its gradient weights.
fn softmin(sigma: &[f64]) -> (f64, Vec<f64>) {
    let tau = SOFTMIN_TAU;
    let smin = sigma.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = sigma.iter().map(|&s| (-(s - smin) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    let value = smin - tau * z.ln();
    let weights = exps.into_iter().map(|e| e / z).collect();
    (value, weights)
}

/// Joint training loss: minus the variance term plus the mean softmax
/// cross-entropy of the classifier on x + eps (.) sigma + mu, one noise
/// draw per example per step. Gradients accumulate into the classifier
/// and into both generator nets (when the kind has them); the same seed
/// replays the same noise, so the loss is deterministic in (params, seed).
pub fn npg_loss(
    model: &mut NpgModel,
    classifier: &mut Network,
    xs: &[Vec<f64>],
    ys: &[usize],
    spec: &NoiseSpec<f64>,
    variant: LossVariant,
    seed: u64,
) -> Result<f64, NpgError> {
    let b = xs.len();
    if b == 0 || ys.len() != b {
        return Err(NpgError::EmptyBatch);
    }
    let dim = model.dim();
    for x in xs {
        if x.len() != dim {
            return Err(NpgError::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
    }
    let mut rng = rng_from_seed(seed);
    let eps: Vec<Vec<f64>> = (0..b)
        .map(|_| sample_isotropic(spec, dim, &mut rng))
        .collect::<Result<_, _>>()?;

    // Forward the generators, keeping traces for the backward pass.
    enum GenState {
        Fixed,
        Shared {
            mu_trace: crate::nn::Trace,
            sigma_trace: crate::nn::Trace,
        },
        PerExample {
            mu_trace: crate::nn::Trace,
            sigma_trace: crate::nn::Trace,
        },
    }
    let (sigma_rows, mu_rows, gen_state): (Vec<Vec<f64>>, Vec<Vec<f64>>, GenState) =
        match model.kind {
            NpgKind::Pattern => {
                let params = model.generate_params(None)?;
                (
                    vec![params.sigma().to_vec(); b],
                    vec![params.mu().to_vec(); b],
                    GenState::Fixed,
                )
            }
            NpgKind::DatasetWise => {
                let ones = Tensor::new(vec![1, CONSTANT_INPUT_LEN], vec![1.0; CONSTANT_INPUT_LEN])?;
                let mu_trace = model.mu_net.as_ref().unwrap().forward_trace(&ones)?;
                let sigma_trace = model.sigma_net.as_ref().unwrap().forward_trace(&ones)?;
                let mu: Vec<f64> = mu_trace
                    .output()
                    .data
                    .iter()
                    .map(|&z| model.mu_from_raw(z))
                    .collect();
                let sigma: Vec<f64> = sigma_trace
                    .output()
                    .data
                    .iter()
                    .map(|&z| model.sigma_from_raw(z))
                    .collect();
                (
                    vec![sigma; b],
                    vec![mu; b],
                    GenState::Shared {
                        mu_trace,
                        sigma_trace,
                    },
                )
            }
            NpgKind::CertificationWise => {
                let (h, w) = model.spatial();
                let flat: Vec<f64> = xs.iter().flatten().copied().collect();
                let xt = Tensor::new(vec![b, 1, h, w], flat)?;
                let mu_trace = model.mu_net.as_ref().unwrap().forward_trace(&xt)?;
                let mu_all: Vec<f64> = mu_trace
                    .output()
                    .data
                    .iter()
                    .map(|&z| model.mu_from_raw(z))
                    .collect();
                let shifted: Vec<f64> = xt.data.iter().zip(&mu_all).map(|(x, m)| x + m).collect();
                let st = Tensor::new(vec![b, 1, h, w], shifted)?;
                let sigma_trace = model.sigma_net.as_ref().unwrap().forward_trace(&st)?;
                let sigma_all: Vec<f64> = sigma_trace
                    .output()
                    .data
                    .iter()
                    .map(|&z| model.sigma_from_raw(z))
                    .collect();
                let sig_rows = sigma_all.chunks(dim).map(|c| c.to_vec()).collect();
                let mu_rows = mu_all.chunks(dim).map(|c| c.to_vec()).collect();
                (
                    sig_rows,
                    mu_rows,
                    GenState::PerExample {
                        mu_trace,
                        sigma_trace,
                    },
                )
            }
        };

    // Noisy batch through the classifier.
    let mut z = Vec::with_capacity(b * dim);
    for i in 0..b {
        for j in 0..dim {
            z.push(xs[i][j] + eps[i][j] * sigma_rows[i][j] + mu_rows[i][j]);
        }
    }
    let zt = Tensor::new(vec![b, dim], z)?;
    let cls_trace = classifier.forward_trace(&zt)?;
    let (ce, dlogits) = softmax_cross_entropy(cls_trace.output(), ys)?;
    let dz = classifier.backward(&cls_trace, &dlogits)?;

    // Variance term and its gradient with respect to sigma.
    let bf = b as f64;
    let mut loss_var = 0.0;
    let mut dsigma = vec![0.0; b * dim];
    for i in 0..b {
        match variant {
            LossVariant::MeanSigma => {
                let mean = sigma_rows[i].iter().sum::<f64>() / dim as f64;
                loss_var -= mean / bf;
                for j in 0..dim {
                    dsigma[i * dim + j] = -1.0 / (bf * dim as f64);
                }
            }
            LossVariant::MinSigma => {
                let (value, weights) = softmin(&sigma_rows[i]);
                loss_var -= value / bf;
                for j in 0..dim {
                    dsigma[i * dim + j] = -weights[j] / bf;
                }
            }
        }
    }
    // Smoothing-loss path: z depends on sigma through eps and on mu directly.
    for i in 0..b {
        for j in 0..dim {
            dsigma[i * dim + j] += dz.data[i * dim + j] * eps[i][j];
        }
    }

    match gen_state {
        GenState::Fixed => {}
        GenState::Shared {
            mu_trace,
            sigma_trace,
        } => {
            // Sigma and mu are shared across the batch: aggregate first.
            let sraw = &sigma_trace.output().data;
            let mraw = &mu_trace.output().data;
            let mut dsig_raw = vec![0.0; dim];
            let mut dmu_raw = vec![0.0; dim];
            for j in 0..dim {
                let mut acc_s = 0.0;
                let mut acc_m = 0.0;
                for i in 0..b {
                    acc_s += dsigma[i * dim + j];
                    acc_m += dz.data[i * dim + j];
                }
                let t = sraw[j].tanh();
                dsig_raw[j] = acc_s * model.gamma * (1.0 - t * t) * 0.5;
                let tm = mraw[j].tanh();
                dmu_raw[j] = acc_m * model.gamma * (1.0 - tm * tm);
            }
            let g_sigma = Tensor::new(vec![1, dim], dsig_raw)?;
            model
                .sigma_net
                .as_mut()
                .unwrap()
                .backward(&sigma_trace, &g_sigma)?;
            let g_mu = Tensor::new(vec![1, dim], dmu_raw)?;
            model.mu_net.as_mut().unwrap().backward(&mu_trace, &g_mu)?;
        }
        GenState::PerExample {
            mu_trace,
            sigma_trace,
        } => {
            let (h, w) = model.spatial();
            let sraw = &sigma_trace.output().data;
            let mut dsig_raw = vec![0.0; b * dim];
            for k in 0..b * dim {
                let t = sraw[k].tanh();
                dsig_raw[k] = dsigma[k] * model.gamma * (1.0 - t * t) * 0.5;
            }
            let g_sigma = Tensor::new(vec![b, 1, h, w], dsig_raw)?;
            // The input gradient of the sigma net flows into mu (cascade).
            let d_shift = model
                .sigma_net
                .as_mut()
                .unwrap()
                .backward(&sigma_trace, &g_sigma)?;
            let mraw = &mu_trace.output().data;
            let mut dmu_raw = vec![0.0; b * dim];
            for k in 0..b * dim {
                let total = dz.data[k] + d_shift.data[k];
                let tm = mraw[k].tanh();
                dmu_raw[k] = total * model.gamma * (1.0 - tm * tm);
            }
            let g_mu = Tensor::new(vec![b, 1, h, w], dmu_raw)?;
            model.mu_net.as_mut().unwrap().backward(&mu_trace, &g_mu)?;
        }
    }

    Ok(loss_var + ce)
}

/// Training knobs for the joint loop.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub variant: LossVariant,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            adam: AdamConfig::default(),
            variant: LossVariant::MeanSigma,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainReport {
    pub final_loss: f64,
    pub clean_accuracy: f64,
    pub min_sigma: f64,
    pub mean_sigma: f64,
}

/// Fraction of examples whose clean (noise-free) argmax matches the label.
pub fn clean_accuracy(classifier: &Network, xs: &[Vec<f64>], ys: &[usize]) -> Result<f64, NnError> {
    let mut correct = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        let t = Tensor::new(vec![1, x.len()], x.clone())?;
        let out = classifier.forward(&t)?;
        let mut best = 0;
        for (j, &v) in out.data.iter().enumerate() {
            if v > out.data[best] {
                best = j;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / xs.len().max(1) as f64)
}

const SHUFFLE_TAG: u64 = 0x7a1e;

/// Joint NPG + classifier training; returns summary metrics.
pub fn train_joint(
    model: &mut NpgModel,
    classifier: &mut Network,
    xs: &[Vec<f64>],
    ys: &[usize],
    spec: &NoiseSpec<f64>,
    cfg: &TrainConfig,
) -> Result<TrainReport, NpgError> {
    train_joint_with(model, classifier, xs, ys, spec, cfg, |_, _, _| {})
}

/// [`train_joint`] with an after-epoch hook (checkpointing, progress).
pub fn train_joint_with<F>(
    model: &mut NpgModel,
    classifier: &mut Network,
    xs: &[Vec<f64>],
    ys: &[usize],
    spec: &NoiseSpec<f64>,
    cfg: &TrainConfig,
    mut after_epoch: F,
) -> Result<TrainReport, NpgError>
where
    F: FnMut(usize, &NpgModel, &Network),
{
    if xs.is_empty() || ys.len() != xs.len() {
        return Err(NpgError::EmptyBatch);
    }
    let mut cls_state = AdamState::for_network(classifier);
    let mut mu_state = model.mu_net.as_ref().map(AdamState::for_network);
    let mut sigma_state = model.sigma_net.as_ref().map(AdamState::for_network);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut shuffle_rng = rng_from_seed(derive_seed(cfg.seed, SHUFFLE_TAG));
    let mut loss = 0.0;
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            classifier.zero_grads();
            if let Some(n) = model.mu_net.as_mut() {
                n.zero_grads();
            }
            if let Some(n) = model.sigma_net.as_mut() {
                n.zero_grads();
            }
            loss = npg_loss(
                model,
                classifier,
                &bx,
                &by,
                spec,
                cfg.variant,
                derive_seed(cfg.seed, 1 + step),
            )?;
            adam_step(classifier, &mut cls_state, &cfg.adam);
            if let (Some(net), Some(state)) = (model.mu_net.as_mut(), mu_state.as_mut()) {
                adam_step(net, state, &cfg.adam);
            }
            if let (Some(net), Some(state)) = (model.sigma_net.as_mut(), sigma_state.as_mut()) {
                adam_step(net, state, &cfg.adam);
            }
            step += 1;
        }
        after_epoch(epoch, model, classifier);
    }
    let (min_sigma, mean_sigma) = model.sigma_summary(xs)?;
    Ok(TrainReport {
        final_loss: loss,
        clean_accuracy: clean_accuracy(classifier, xs, ys)?,
        min_sigma,
        mean_sigma,
    })
}

pub const NPG_MAGIC: &str = "aniscert-npg";
pub const NPG_VERSION: &str = "v1";

/// Write an NPG checkpoint: kind tag and gamma in the header, then any
/// embedded networks in the shared network format.
pub fn save_npg<W: std::io::Write>(model: &NpgModel, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{NPG_MAGIC} {NPG_VERSION}")?;
    writeln!(w, "kind {}", model.kind)?;
    writeln!(w, "gamma {:.16e}", model.gamma)?;
    writeln!(w, "shape {} {}", model.height, model.width)?;
    if let Some(p) = &model.pattern {
        let tm = match p.target_mean {
            Some(t) => format!("{t:.16e}"),
            None => "none".to_string(),
        };
        writeln!(
            w,
            "pattern {} {:.16e} {:.16e} {tm}",
            p.norm, p.kappa, p.iota
        )?;
    }
    if let Some(net) = &model.mu_net {
        writeln!(w, "net mu")?;
        save_network(net, w)?;
    }
    if let Some(net) = &model.sigma_net {
        writeln!(w, "net sigma")?;
        save_network(net, w)?;
    }
    Ok(())
}

pub fn load_npg<R: std::io::BufRead>(r: &mut R) -> Result<NpgModel, NpgError> {
    let mut tok = Tokens::from_reader(r)?;
    load_npg_tokens(&mut tok)
}

fn load_npg_tokens(tok: &mut Tokens) -> Result<NpgModel, NpgError> {
    tok.expect(NPG_MAGIC)?;
    tok.expect(NPG_VERSION)?;
    tok.expect("kind")?;
    let kind = match tok.next()? {
        "pattern" => NpgKind::Pattern,
        "dataset_wise" => NpgKind::DatasetWise,
        "certification_wise" => NpgKind::CertificationWise,
        other => return Err(NnError::Parse(format!("unknown npg kind '{other}'")).into()),
    };
    tok.expect("gamma")?;
    let gamma = tok.next_f64()?;
    tok.expect("shape")?;
    let height = tok.next_usize()?;
    let width = tok.next_usize()?;
    let mut pattern = None;
    let mut mu_net = None;
    let mut sigma_net = None;
    while let Ok(t) = tok.next().map(str::to_owned) {
        match t.as_str() {
            "pattern" => {
                let norm = match tok.next()? {
                    "l1" => Norm::L1,
                    "l2" => Norm::L2,
                    "linf" => Norm::Linf,
                    other => return Err(NnError::Parse(format!("unknown norm '{other}'")).into()),
                };
                let kappa = tok.next_f64()?;
                let iota = tok.next_f64()?;
                let tm = tok.next()?;
                let target_mean = if tm == "none" {
                    None
                } else {
                    Some(
                        tm.parse::<f64>()
                            .map_err(|_| NnError::Parse(format!("bad target mean '{tm}'")))?,
                    )
                };
                pattern = Some(PatternSpec::new(
                    norm,
                    kappa,
                    iota,
                    height,
                    width,
                    target_mean,
                )?);
            }
            "net" => {
                let which = tok.next()?.to_owned();
                let net = crate::nn::io::load_network_tokens(tok)?;
                match which.as_str() {
                    "mu" => mu_net = Some(net),
                    "sigma" => sigma_net = Some(net),
                    other => {
                        return Err(NnError::Parse(format!("unknown net tag '{other}'")).into())
                    }
                }
            }
            other => return Err(NnError::Parse(format!("unexpected token '{other}'")).into()),
        }
    }
    match kind {
        NpgKind::Pattern if pattern.is_none() => {
            Err(NnError::Parse("pattern checkpoint missing its spec".into()).into())
        }
        NpgKind::DatasetWise | NpgKind::CertificationWise
            if mu_net.is_none() || sigma_net.is_none() =>
        {
            Err(NnError::Parse("generator checkpoint missing nets".into()).into())
        }
        _ => Ok(NpgModel {
            kind,
            gamma,
            pattern,
            mu_net,
            sigma_net,
            dim: height * width,
            height,
            width,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn pattern_constant_when_kappa_zero() {
        let spec = PatternSpec::new(Norm::L2, 0.0, 0.7, 5, 5, None).unwrap();
        let map = pattern_sigma(&spec).unwrap();
        assert!(map.iter().all(|&s| s == 0.7));
    }

    #[test]
    fn pattern_center_is_iota() {
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            for (h, w) in [(5, 5), (28, 28), (4, 6)] {
                let spec = PatternSpec::new(norm, 2.3, 0.41, h, w, None).unwrap();
                let map = pattern_sigma(&spec).unwrap();
                assert_eq!(map[(h / 2) * w + w / 2], 0.41);
            }
        }
    }

    #[test]
    fn pattern_linf_formula_value() {
        // kappa = iota = 1, pixel at offsets (1,2) under linf: max(1,2)^2 + 1.
        let spec = PatternSpec::new(Norm::Linf, 1.0, 1.0, 7, 7, None).unwrap();
        let map = pattern_sigma(&spec).unwrap();
        let (row, col) = (3 + 1, 3 + 2);
        assert_eq!(map[row * 7 + col], 5.0);
    }

    #[test]
    fn pattern_monotone_in_distance() {
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            let spec = PatternSpec::new(norm, 0.8, 0.3, 28, 28, None).unwrap();
            let map = pattern_sigma(&spec).unwrap();
            let mut by_dist: Vec<(f64, f64)> = Vec::with_capacity(784);
            for row in 0..28 {
                for col in 0..28 {
                    let a = row as f64 - 14.0;
                    let b = col as f64 - 14.0;
                    by_dist.push((norm.of_vec(&[a, b]), map[row * 28 + col]));
                }
            }
            by_dist.sort_by(|x, y| x.0.total_cmp(&y.0));
            for pair in by_dist.windows(2) {
                assert!(
                    pair[1].1 >= pair[0].1 - 1e-12,
                    "pattern not monotone under {norm}"
                );
            }
        }
    }

    #[test]
    fn pattern_target_mean_normalization() {
        let spec = PatternSpec::new(Norm::L2, 1.0, 1.0, 14, 14, Some(1.0)).unwrap();
        let map = pattern_sigma(&spec).unwrap();
        let mean: f64 = map.iter().sum::<f64>() / map.len() as f64;
        assert!((mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pattern_validation() {
        assert!(PatternSpec::new(Norm::L2, 1.0, 0.0, 4, 4, None).is_err());
        assert!(PatternSpec::new(Norm::L2, -1.0, 1.0, 4, 4, None).is_err());
        assert!(PatternSpec::new(Norm::L2, 1.0, 1.0, 0, 4, None).is_err());
        assert!(PatternSpec::new(Norm::L2, 1.0, 1.0, 4, 4, Some(0.0)).is_err());
    }

    #[test]
    fn generate_pattern_delegates() {
        let spec = PatternSpec::new(Norm::L1, 0.5, 0.2, 6, 6, None).unwrap();
        let model = NpgModel::pattern(spec);
        let params = model.generate_params(None).unwrap();
        let direct = pattern_sigma(&spec).unwrap();
        assert_eq!(params.sigma(), &direct[..]);
        assert!(params.mu().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn dataset_wise_ignores_input() {
        let mut rng = rng_from_seed(31);
        let model = NpgModel::dataset_wise(10, 1.5, 16, &mut rng).unwrap();
        let a = model.generate_params(Some(&[0.1; 10])).unwrap();
        let b = model.generate_params(Some(&[0.9; 10])).unwrap();
        let c = model.generate_params(None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(a
            .sigma()
            .iter()
            .all(|&s| (SIGMA_FLOOR..=1.5 + SIGMA_FLOOR).contains(&s)));
        assert!(a.mu().iter().all(|&m| m.abs() <= 1.5));
    }

    #[test]
    fn certification_wise_depends_on_input() {
        let mut rng = rng_from_seed(32);
        let model = NpgModel::certification_wise(3, 4, 1.0, &mut rng).unwrap();
        let x1 = vec![0.2; 12];
        let mut x2 = x1.clone();
        x2[5] = 0.9;
        let a = model.generate_params(Some(&x1)).unwrap();
        let a_again = model.generate_params(Some(&x1)).unwrap();
        let b = model.generate_params(Some(&x2)).unwrap();
        assert_eq!(a, a_again);
        assert_ne!(a, b);
        assert!(matches!(
            model.generate_params(None),
            Err(NpgError::MissingInput)
        ));
        assert!(model.generate_params(Some(&[0.0; 5])).is_err());
        assert!(a.sigma().iter().all(|&s| s >= SIGMA_FLOOR));
    }

    #[test]
    fn isotropic_pattern_loss_reduces_to_noisy_cross_entropy() {
        // sigma frozen at one, mu zero: the loss is CE plus the constant
        // variance term -mean(sigma) = -1.
        let mut rng = rng_from_seed(40);
        let mut classifier = Network::new(vec![
            Layer::dense(4, 8, &mut rng),
            Layer::Tanh,
            Layer::dense(8, 3, &mut rng),
        ]);
        let mut model = NpgModel::pattern(PatternSpec::isotropic(4, 1, 1.0).unwrap());
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..4).map(|j| (i * 4 + j) as f64 / 20.0).collect())
            .collect();
        let ys = vec![0, 1, 2, 0, 1];
        let spec = NoiseSpec::gaussian(0.7).unwrap();
        let seed = 999;
        let loss = npg_loss(
            &mut model,
            &mut classifier,
            &xs,
            &ys,
            &spec,
            LossVariant::MeanSigma,
            seed,
        )
        .unwrap();

        // Reproduce the noisy CE with the same draws.
        let mut rng2 = rng_from_seed(seed);
        let mut z = Vec::new();
        for x in &xs {
            let eps = sample_isotropic(&spec, 4, &mut rng2).unwrap();
            for j in 0..4 {
                z.push(x[j] + eps[j]);
            }
        }
        let zt = Tensor::new(vec![5, 4], z).unwrap();
        let logits = classifier.forward(&zt).unwrap();
        let (ce, _) = softmax_cross_entropy(&logits, &ys).unwrap();
        assert!(
            (loss - (ce - 1.0)).abs() < 1e-12,
            "loss {loss} vs ce-1 {}",
            ce - 1.0
        );
    }

    #[test]
    fn pure_variance_objective_pushes_sigma_up() {
        // With a classifier whose output ignores its input, the CE path
        // contributes no gradient; a MeanSigma step must raise mean sigma.
        let mut rng = rng_from_seed(41);
        let mut model = NpgModel::dataset_wise(6, 1.0, 12, &mut rng).unwrap();
        let zero_dense = Layer::Dense {
            weight: Tensor::zeros(vec![3, 6]).with_grad(),
            bias: Tensor::zeros(vec![3]).with_grad(),
        };
        let mut classifier = Network::new(vec![zero_dense]);
        let before = model.sigma_summary(&[vec![0.0; 6]]).unwrap().1;
        let xs = vec![vec![0.1; 6]; 4];
        let ys = vec![0, 1, 2, 0];
        let spec = NoiseSpec::gaussian(1.0).unwrap();
        let mut mu_state = AdamState::for_network(model.mu_net.as_ref().unwrap());
        let mut sig_state = AdamState::for_network(model.sigma_net.as_ref().unwrap());
        let adam = AdamConfig::default();
        for step in 0..20 {
            model.mu_net.as_mut().unwrap().zero_grads();
            model.sigma_net.as_mut().unwrap().zero_grads();
            classifier.zero_grads();
            npg_loss(
                &mut model,
                &mut classifier,
                &xs,
                &ys,
                &spec,
                LossVariant::MeanSigma,
                step,
            )
            .unwrap();
            adam_step(model.mu_net.as_mut().unwrap(), &mut mu_state, &adam);
            adam_step(model.sigma_net.as_mut().unwrap(), &mut sig_state, &adam);
        }
        let after = model.sigma_summary(&[vec![0.0; 6]]).unwrap().1;
        assert!(
            after > before,
            "mean sigma did not grow: {before} -> {after}"
        );
    }

    fn npg_loss_value(
        model: &mut NpgModel,
        classifier: &mut Network,
        xs: &[Vec<f64>],
        ys: &[usize],
        spec: &NoiseSpec<f64>,
        variant: LossVariant,
        seed: u64,
    ) -> f64 {
        classifier.zero_grads();
        if let Some(n) = model.mu_net.as_mut() {
            n.zero_grads();
        }
        if let Some(n) = model.sigma_net.as_mut() {
            n.zero_grads();
        }
        npg_loss(model, classifier, xs, ys, spec, variant, seed).unwrap()
    }

    fn fd_check_generator_grads(mut model: NpgModel, variant: LossVariant, seed_base: u64) {
        let mut rng = rng_from_seed(seed_base);
        let dim = model.dim();
        let mut classifier = Network::new(vec![
            Layer::dense(dim, 5, &mut rng),
            Layer::Tanh,
            Layer::dense(5, 2, &mut rng),
        ]);
        use rand::Rng as _;
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let ys = vec![0, 1, 0];
        let spec = NoiseSpec::gaussian(0.8).unwrap();
        let seed = 1234 + seed_base;

        let _ = npg_loss_value(&mut model, &mut classifier, &xs, &ys, &spec, variant, seed);
        let h = 1e-5;
        for which in ["mu", "sigma"] {
            let grads: Vec<Vec<f64>> = {
                let net = if which == "mu" {
                    model.mu_net.as_ref().unwrap()
                } else {
                    model.sigma_net.as_ref().unwrap()
                };
                net.params()
                    .iter()
                    .map(|p| p.grad.as_ref().unwrap().clone())
                    .collect()
            };
            let n_tensors = grads.len();
            for ti in 0..n_tensors {
                let numel = grads[ti].len();
                let probes: Vec<usize> = if numel <= 6 {
                    (0..numel).collect()
                } else {
                    (0..6).map(|_| rng.gen_range(0..numel)).collect()
                };
                for j in probes {
                    let analytic = grads[ti][j];
                    let read = |m: &mut NpgModel, v: f64| {
                        let net = if which == "mu" {
                            m.mu_net.as_mut().unwrap()
                        } else {
                            m.sigma_net.as_mut().unwrap()
                        };
                        net.params_mut()[ti].data[j] = v;
                    };
                    let orig = {
                        let net = if which == "mu" {
                            model.mu_net.as_ref().unwrap()
                        } else {
                            model.sigma_net.as_ref().unwrap()
                        };
                        net.params()[ti].data[j]
                    };
                    read(&mut model, orig + h);
                    let up =
                        npg_loss_value(&mut model, &mut classifier, &xs, &ys, &spec, variant, seed);
                    read(&mut model, orig - h);
                    let down =
                        npg_loss_value(&mut model, &mut classifier, &xs, &ys, &spec, variant, seed);
                    read(&mut model, orig);
                    let fd = (up - down) / (2.0 * h);
                    let denom = analytic.abs().max(fd.abs()).max(1e-4);
                    assert!(
                        (analytic - fd).abs() / denom <= 1e-3,
                        "{which} tensor {ti} entry {j}: analytic {analytic}, fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn dataset_wise_loss_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(50);
        let model = NpgModel::dataset_wise(4, 1.2, 8, &mut rng).unwrap();
        fd_check_generator_grads(model, LossVariant::MeanSigma, 50);
    }

    #[test]
    fn certification_wise_loss_gradients_match_finite_differences() {
        // Two-pixel toy model: exercises the cascaded mu -> sigma path.
        let mut rng = rng_from_seed(51);
        let model = NpgModel::certification_wise(1, 2, 1.0, &mut rng).unwrap();
        fd_check_generator_grads(model, LossVariant::MeanSigma, 51);
        let mut rng = rng_from_seed(52);
        let model = NpgModel::certification_wise(2, 2, 0.9, &mut rng).unwrap();
        fd_check_generator_grads(model, LossVariant::MinSigma, 52);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = rng_from_seed(60);
        for model in [
            NpgModel::pattern(PatternSpec::new(Norm::Linf, 0.4, 0.9, 4, 5, Some(1.0)).unwrap()),
            NpgModel::dataset_wise(6, 1.3, 8, &mut rng).unwrap(),
            NpgModel::certification_wise(3, 3, 1.0, &mut rng).unwrap(),
        ] {
            let mut buf = Vec::new();
            save_npg(&model, &mut buf).unwrap();
            let loaded = load_npg(&mut buf.as_slice()).unwrap();
            assert_eq!(loaded.kind, model.kind);
            assert_eq!(loaded.gamma, model.gamma);
            let x = vec![0.31; model.dim()];
            assert_eq!(
                model.generate_params(Some(&x)).unwrap(),
                loaded.generate_params(Some(&x)).unwrap()
            );
        }
    }

    #[test]
    fn checkpoint_rejects_wrong_magic() {
        let mut bad = "aniscert-net v1\nlayers 0\n".as_bytes();
        assert!(load_npg(&mut bad).is_err());
    }
}
