//! Finite-difference verification of every layer kind's backward pass,
//! plus the training-determinism invariant.

use aniscert_core::nn::{
    adam_step, softmax_cross_entropy, AdamConfig, AdamState, Layer, Network, Tensor,
};
use aniscert_core::rng::{rng_from_seed, Rng};
use rand::Rng as _;

const FD_H: f64 = 1e-4;
const REL_TOL: f64 = 1e-3;

fn rand_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.2..1.2)).collect()).unwrap()
}

/// Scalar loss: fixed random linear functional of the network output.
fn loss_of(net: &Network, input: &Tensor, coeffs: &[f64]) -> f64 {
    let out = net.forward(input).unwrap();
    out.data.iter().zip(coeffs).map(|(o, c)| o * c).sum()
}

/// True when some leaky-relu input sits within `margin` of its kink, where
/// central differences are invalid.
fn near_kink(net: &Network, input: &Tensor, margin: f64) -> bool {
    let trace = net.forward_trace(input).unwrap();
    for (i, layer) in net.layers.iter().enumerate() {
        if matches!(layer, Layer::LeakyRelu { .. })
            && trace.activations[i].data.iter().any(|x| x.abs() < margin)
        {
            return true;
        }
    }
    false
}

fn check_gradients(mut net: Network, input_shape: Vec<usize>, seed: u64) {
    let mut rng = rng_from_seed(seed.wrapping_mul(2654435761).wrapping_add(13));
    let mut input = rand_tensor(input_shape.clone(), &mut rng);
    for _ in 0..20 {
        if !near_kink(&net, &input, 20.0 * FD_H) {
            break;
        }
        input = rand_tensor(input_shape.clone(), &mut rng);
    }
    assert!(
        !near_kink(&net, &input, 10.0 * FD_H),
        "could not find a kink-free input"
    );

    let out_len = net.forward(&input).unwrap().numel();
    let coeffs: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // Analytic gradients.
    net.zero_grads();
    let trace = net.forward_trace(&input).unwrap();
    let gout = Tensor::new(trace.output().shape.clone(), coeffs.clone()).unwrap();
    let input_grad = net.backward(&trace, &gout).unwrap();

    let agree = |analytic: f64, fd: f64| {
        let denom = analytic.abs().max(fd.abs()).max(1e-4);
        (analytic - fd).abs() / denom <= REL_TOL
    };

    // Parameters: probe a sample of entries per tensor.
    let n_tensors = net.params().len();
    for ti in 0..n_tensors {
        let numel = net.params()[ti].numel();
        let probes: Vec<usize> = if numel <= 12 {
            (0..numel).collect()
        } else {
            (0..12).map(|_| rng.gen_range(0..numel)).collect()
        };
        for j in probes {
            let analytic = net.params()[ti].grad.as_ref().unwrap()[j];
            let orig = net.params()[ti].data[j];
            net.params_mut()[ti].data[j] = orig + FD_H;
            let up = loss_of(&net, &input, &coeffs);
            net.params_mut()[ti].data[j] = orig - FD_H;
            let down = loss_of(&net, &input, &coeffs);
            net.params_mut()[ti].data[j] = orig;
            let fd = (up - down) / (2.0 * FD_H);
            assert!(
                agree(analytic, fd),
                "seed {seed}: param tensor {ti} entry {j}: analytic {analytic}, fd {fd}"
            );
        }
    }

    // Input gradient.
    for j in 0..input.numel().min(16) {
        let orig = input.data[j];
        input.data[j] = orig + FD_H;
        let up = loss_of(&net, &input, &coeffs);
        input.data[j] = orig - FD_H;
        let down = loss_of(&net, &input, &coeffs);
        input.data[j] = orig;
        let fd = (up - down) / (2.0 * FD_H);
        assert!(
            agree(input_grad.data[j], fd),
            "seed {seed}: input entry {j}: analytic {}, fd {fd}",
            input_grad.data[j]
        );
    }
}

#[test]
fn mlp_layers_match_finite_differences() {
    for seed in 0..34u64 {
        let mut rng = rng_from_seed(seed);
        let net = Network::new(vec![
            Layer::dense(5, 7, &mut rng),
            Layer::LeakyRelu { slope: 0.01 },
            Layer::dense(7, 4, &mut rng),
            Layer::Tanh,
            Layer::dense(4, 3, &mut rng),
            Layer::Softmax,
        ]);
        check_gradients(net, vec![2, 5], seed);
    }
}

#[test]
fn conv_layers_match_finite_differences() {
    for seed in 0..33u64 {
        let mut rng = rng_from_seed(1000 + seed);
        let net = Network::new(vec![
            Layer::conv2d(2, 3, 3, &mut rng),
            Layer::LeakyRelu { slope: 0.01 },
            Layer::conv2d(3, 2, 3, &mut rng),
            Layer::AmplifiedTanh { gamma: 1.7 },
        ]);
        check_gradients(net, vec![2, 2, 4, 4], 1000 + seed);
    }
}

#[test]
fn dense_block_matches_finite_differences() {
    for seed in 0..33u64 {
        let mut rng = rng_from_seed(2000 + seed);
        let net = Network::new(vec![
            Layer::conv2d(1, 4, 3, &mut rng),
            Layer::LeakyRelu { slope: 0.01 },
            Layer::SkipConcat,
            Layer::conv2d(5, 1, 3, &mut rng),
            Layer::Tanh,
        ]);
        check_gradients(net, vec![1, 1, 4, 4], 2000 + seed);
    }
}

#[test]
fn training_trajectory_is_deterministic() {
    let run = || {
        let mut rng = rng_from_seed(99);
        let mut net = Network::new(vec![
            Layer::dense(4, 8, &mut rng),
            Layer::LeakyRelu { slope: 0.01 },
            Layer::dense(8, 3, &mut rng),
        ]);
        let mut state = AdamState::for_network(&net);
        let cfg = AdamConfig::default();
        for step in 0..25 {
            let x = rand_tensor(vec![6, 4], &mut rng);
            let labels: Vec<usize> = (0..6).map(|i| (i + step) % 3).collect();
            net.zero_grads();
            let trace = net.forward_trace(&x).unwrap();
            let (_, dlogits) = softmax_cross_entropy(trace.output(), &labels).unwrap();
            net.backward(&trace, &dlogits).unwrap();
            adam_step(&mut net, &mut state, &cfg);
        }
        net.params()
            .iter()
            .map(|p| p.data.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
