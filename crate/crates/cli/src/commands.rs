//! The five subcommands: train, certify, predict, verify, pattern-dump.

use crate::config::{Config, DatasetSource};
use crate::{runtime, CliError};
use aniscert_core::data_io::{
    downsample_2x2, load_idx, outcome_to_record, synth_gaussians, write_curves, write_results,
    Dataset,
};
use aniscert_core::nn::io::{load_network_from_path, save_network_to_path};
use aniscert_core::nn::{AdamConfig, Layer, Network};
use aniscert_core::npg::{
    load_npg, pattern_sigma, save_npg, train_joint_with, NpgKind, NpgModel, PatternSpec,
    TrainConfig,
};
use aniscert_core::oracle::run_verification_suite;
use aniscert_core::rng::rng_from_seed;
use aniscert_core::smoothing::{
    accuracy_curves, evaluate_campaign, max_observed_alm, predict, ClassifierHandle, EngineConfig,
    ExampleOutcome,
};
use std::io::Write as _;
use std::path::Path;

fn load_dataset(cfg: &Config) -> Result<Dataset, CliError> {
    match cfg.dataset {
        DatasetSource::Synth => synth_gaussians(
            cfg.synth_d,
            cfg.synth_classes,
            cfg.synth_per_class,
            cfg.synth_separation,
            cfg.seed,
        )
        .map_err(runtime),
        DatasetSource::Idx => {
            let images = cfg.require(cfg.idx_images.as_ref(), "idx_images")?;
            let labels = cfg.require(cfg.idx_labels.as_ref(), "idx_labels")?;
            let ds = load_idx(&images, &labels).map_err(runtime)?;
            if cfg.downscale {
                let (h, w) = cfg.spatial_shape(ds.d)?;
                let down = downsample_2x2(&ds, h, w).map_err(runtime)?;
                Ok(down)
            } else {
                Ok(ds)
            }
        }
    }
}

fn build_npg(cfg: &Config, d: usize) -> Result<NpgModel, CliError> {
    if let Some(path) = &cfg.npg_in {
        let f = std::fs::File::open(path)
            .map_err(|e| CliError::Config(format!("npg_in {}: {e}", path.display())))?;
        let model = load_npg(&mut std::io::BufReader::new(f)).map_err(runtime)?;
        if model.dim() != d {
            return Err(CliError::Config(format!(
                "npg checkpoint dimension {} does not match dataset dimension {d}",
                model.dim()
            )));
        }
        return Ok(model);
    }
    match cfg.npg {
        NpgKind::Pattern => {
            let (h, w) = cfg.spatial_shape(d)?;
            let spec = PatternSpec::new(
                cfg.pattern_norm,
                cfg.pattern_kappa,
                cfg.pattern_iota,
                h,
                w,
                cfg.pattern_target_mean,
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(NpgModel::pattern(spec))
        }
        NpgKind::DatasetWise => {
            let mut rng = rng_from_seed(cfg.seed ^ 0xda7a);
            NpgModel::dataset_wise(d, cfg.gamma, 256, &mut rng)
                .map_err(|e| CliError::Config(e.to_string()))
        }
        NpgKind::CertificationWise => {
            let (h, w) = cfg.spatial_shape(d)?;
            let mut rng = rng_from_seed(cfg.seed ^ 0xce47);
            NpgModel::certification_wise(h, w, cfg.gamma, &mut rng)
                .map_err(|e| CliError::Config(e.to_string()))
        }
    }
}

fn load_classifier(cfg: &Config) -> Result<Network, CliError> {
    let path = cfg.require(cfg.classifier_in.as_ref(), "classifier_in")?;
    load_network_from_path(&path).map_err(runtime)
}

fn engine_config(cfg: &Config) -> EngineConfig {
    EngineConfig {
        n0: cfg.n0,
        n: cfg.n,
        alpha: cfg.alpha,
        workers: cfg.workers,
        one_sided_predict: cfg.one_sided_predict,
    }
}

/// Train the classifier (and the generator, when it has parameters)
/// jointly; prints one machine-readable TRAIN_SUMMARY line.
pub fn cmd_train(cfg: &Config) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let mut classifier = match &cfg.classifier_in {
        Some(path) => load_network_from_path(path).map_err(runtime)?,
        None => {
            let mut rng = rng_from_seed(cfg.seed ^ 0xc1a5);
            Network::new(vec![
                Layer::dense(data.d, cfg.hidden, &mut rng),
                Layer::LeakyRelu { slope: 0.01 },
                Layer::dense(cfg.hidden, data.num_classes, &mut rng),
            ])
        }
    };
    let mut model = build_npg(cfg, data.d)?;
    let spec = cfg.noise_spec()?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        variant: cfg.variant,
        seed: cfg.seed,
    };
    let every = cfg.checkpoint_every;
    let report = train_joint_with(
        &mut model,
        &mut classifier,
        &data.inputs,
        &data.labels,
        &spec,
        &train_cfg,
        |epoch, model, classifier| {
            if every > 0 && (epoch + 1) % every == 0 {
                let _ = checkpoint(cfg, model, classifier);
                println!("epoch {} checkpointed", epoch + 1);
            }
        },
    )
    .map_err(runtime)?;
    checkpoint(cfg, &model, &classifier)?;
    println!(
        "TRAIN_SUMMARY clean_acc={:.6} mean_sigma={:.6} min_sigma={:.6} loss={:.6}",
        report.clean_accuracy, report.mean_sigma, report.min_sigma, report.final_loss
    );
    Ok(())
}

fn checkpoint(cfg: &Config, model: &NpgModel, classifier: &Network) -> Result<(), CliError> {
    if let Some(path) = &cfg.classifier_out {
        save_network_to_path(classifier, path).map_err(runtime)?;
    }
    if let Some(path) = &cfg.npg_out {
        let f = std::fs::File::create(path)
            .map_err(|e| CliError::Runtime(format!("npg_out {}: {e}", path.display())))?;
        let mut w = std::io::BufWriter::new(f);
        save_npg(model, &mut w).map_err(runtime)?;
    }
    Ok(())
}

/// Threshold grid: 50 uniform points from 0 to the maximum observed ALM,
/// merged with the standard report points 0, 0.25, ..., 2.25 that fall in
/// range.
pub fn threshold_grid(outcomes: &[ExampleOutcome]) -> Vec<f64> {
    if outcomes.is_empty() {
        return Vec::new();
    }
    let max_alm = max_observed_alm(outcomes);
    let mut grid: Vec<f64> = if max_alm > 0.0 {
        (0..50).map(|i| max_alm * i as f64 / 49.0).collect()
    } else {
        vec![0.0]
    };
    let mut r = 0.0;
    while r <= 2.25 + 1e-12 {
        if r <= max_alm {
            grid.push(r);
        }
        r += 0.25;
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Certify the dataset and write the per-example results CSV plus the
/// accuracy-vs-threshold curve CSV.
pub fn cmd_certify(cfg: &Config) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let classifier = ClassifierHandle::from_network(load_classifier(cfg)?).map_err(runtime)?;
    let model = build_npg(cfg, data.d)?;
    if matches!(
        model.kind,
        NpgKind::DatasetWise | NpgKind::CertificationWise
    ) && cfg.npg_in.is_none()
    {
        return Err(CliError::Config(
            "certifying with an untrained generator; set key 'npg_in'".into(),
        ));
    }
    let spec = cfg.noise_spec()?;
    let engine = engine_config(cfg);
    let limit = cfg.max_examples;
    let outcomes = evaluate_campaign(
        &data.inputs,
        &data.labels,
        &classifier,
        &model,
        &spec,
        cfg.norm,
        &engine,
        cfg.seed,
        limit,
    )
    .map_err(runtime)?;

    let results_path = cfg.require(cfg.results_out.as_ref(), "results_out")?;
    let records: Vec<_> = outcomes
        .iter()
        .map(|o| outcome_to_record(o, cfg.seed))
        .collect();
    write_results(&records, &results_path).map_err(runtime)?;

    let curve_path = cfg.require(cfg.curve_out.as_ref(), "curve_out")?;
    let grid = threshold_grid(&outcomes);
    let curves = accuracy_curves(&outcomes, &grid);
    write_curves(&curves, &curve_path).map_err(runtime)?;

    let certified = outcomes
        .iter()
        .filter(|o| o.result.certified().is_some())
        .count();
    println!(
        "CERTIFY_SUMMARY examples={} certified={} results={} curve={}",
        outcomes.len(),
        certified,
        results_path.display(),
        curve_path.display()
    );
    Ok(())
}

pub const PREDICTIONS_HEADER: &str =
    "example_id,true_label,predicted,top_class,top_count,n,p_value,alpha,seed";

/// Predict with abstention over the dataset; writes one CSV row per
/// example (empty `predicted` on abstain).
pub fn cmd_predict(cfg: &Config) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let classifier = ClassifierHandle::from_network(load_classifier(cfg)?).map_err(runtime)?;
    let model = build_npg(cfg, data.d)?;
    let spec = cfg.noise_spec()?;
    let engine = engine_config(cfg);
    let path = cfg.require(cfg.predictions_out.as_ref(), "predictions_out")?;
    let f = std::fs::File::create(&path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "{PREDICTIONS_HEADER}").map_err(runtime)?;
    let limit = cfg.max_examples.unwrap_or(data.len()).min(data.len());
    let mut kept = 0usize;
    for i in 0..limit {
        let seed = aniscert_core::rng::derive_seed(cfg.seed, 0x9ae0 ^ (i as u64));
        let p =
            predict(&classifier, &model, &data.inputs[i], &spec, &engine, seed).map_err(runtime)?;
        if p.predicted.is_some() {
            kept += 1;
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{:.11e},{:.11e},{}",
            i,
            data.labels[i],
            p.predicted.map(|c| c.to_string()).unwrap_or_default(),
            p.top_class,
            p.top_count,
            engine.n,
            p.p_value,
            engine.alpha,
            cfg.seed
        )
        .map_err(runtime)?;
    }
    println!(
        "PREDICT_SUMMARY examples={limit} predicted={kept} out={}",
        path.display()
    );
    Ok(())
}

/// Run the oracle verification suite; one line per check, nonzero exit on
/// any failure.
pub fn cmd_verify(seed: u64) -> Result<(), CliError> {
    let reports = run_verification_suite(seed);
    let mut failed = 0usize;
    for r in &reports {
        println!(
            "VERIFY {:<30} {} ({:.2}s) {}",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.seconds,
            r.detail
        );
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Verification(failed));
    }
    Ok(())
}

/// Emit a pattern sigma map as CSV (one row per pixel row) for visual
/// inspection.
pub fn cmd_pattern_dump(cfg: &Config) -> Result<(), CliError> {
    let (h, w) = match (cfg.image_height, cfg.image_width) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(CliError::Config(
                "pattern-dump requires keys 'image_height' and 'image_width'".into(),
            ))
        }
    };
    let spec = PatternSpec::new(
        cfg.pattern_norm,
        cfg.pattern_kappa,
        cfg.pattern_iota,
        h,
        w,
        cfg.pattern_target_mean,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let map = pattern_sigma(&spec).map_err(runtime)?;
    let path = cfg.require(cfg.sigma_out.as_ref(), "sigma_out")?;
    write_sigma_csv(&map, h, w, &path)
}

fn write_sigma_csv(map: &[f64], h: usize, w: usize, path: &Path) -> Result<(), CliError> {
    let f = std::fs::File::create(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut out = std::io::BufWriter::new(f);
    for row in 0..h {
        let cells: Vec<String> = (0..w)
            .map(|col| format!("{:.11e}", map[row * w + col]))
            .collect();
        writeln!(out, "{}", cells.join(",")).map_err(runtime)?;
    }
    println!("PATTERN_DUMP rows={h} cols={w} out={}", path.display());
    Ok(())
}
