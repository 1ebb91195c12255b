//! Training sanity for the noise-parameter generators: on an easy
//! linearly separable task, maximizing mean sigma must grow the variance
//! map without giving up clean accuracy.

use aniscert_core::data_io::synth_gaussians;
use aniscert_core::distributions::NoiseSpec;
use aniscert_core::nn::{Layer, Network};
use aniscert_core::npg::{clean_accuracy, train_joint, LossVariant, NpgModel, TrainConfig};
use aniscert_core::rng::rng_from_seed;

#[test]
fn mean_sigma_training_grows_sigma_and_keeps_accuracy() {
    // Separable 2-D blobs; every third example is held out.
    let data = synth_gaussians(2, 2, 192, 2.0, 11).unwrap();
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    let mut held_x = Vec::new();
    let mut held_y = Vec::new();
    for (i, (x, &y)) in data.inputs.iter().zip(&data.labels).enumerate() {
        if i % 3 == 0 {
            held_x.push(x.clone());
            held_y.push(y);
        } else {
            train_x.push(x.clone());
            train_y.push(y);
        }
    }

    let mut rng = rng_from_seed(5);
    let mut classifier = Network::new(vec![
        Layer::dense(2, 16, &mut rng),
        Layer::LeakyRelu { slope: 0.01 },
        Layer::dense(16, 2, &mut rng),
    ]);
    let mut model = NpgModel::dataset_wise(2, 0.2, 32, &mut rng).unwrap();
    let before = model.sigma_summary(&train_x).unwrap().1;

    // 200 optimization steps: batch 64 over 256 examples, 50 epochs.
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 64,
        variant: LossVariant::MeanSigma,
        seed: 77,
        ..Default::default()
    };
    let spec = NoiseSpec::gaussian(0.3).unwrap();
    let report = train_joint(&mut model, &mut classifier, &train_x, &train_y, &spec, &cfg).unwrap();

    assert!(
        report.mean_sigma > before,
        "mean sigma did not increase: {before} -> {}",
        report.mean_sigma
    );
    let held_acc = clean_accuracy(&classifier, &held_x, &held_y).unwrap();
    assert!(
        held_acc >= 0.95,
        "held-out clean accuracy {held_acc} < 0.95"
    );
}
