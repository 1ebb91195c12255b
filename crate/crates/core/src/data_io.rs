//! Dataset loading (big-endian IDX image/label files, synthetic
//! generators) and campaign result persistence as CSV.

use crate::rng::rng_from_seed;
use crate::smoothing::{CurvePoint, ExampleOutcome, Verdict};
use rand_distr::{Distribution, StandardNormal};
use std::io::{BufRead, Write};
use std::path::Path;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated at byte {offset}, needed {needed} more bytes")]
    Truncated {
        path: String,
        offset: usize,
        needed: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} out of {num_classes} classes at row {row}")]
    LabelOutOfRange {
        label: usize,
        num_classes: usize,
        row: usize,
    },
    #[error("input value {value} at row {row} outside [0,1]")]
    InputOutOfRange { value: f64, row: usize },
    #[error("per_class must be at least 1")]
    EmptyClass,
    #[error("separation must be positive, got {0}")]
    InvalidSeparation(f64),
    #[error("dataset is empty or misaligned")]
    Malformed,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: String,
        line: usize,
        reason: String,
    },
}

/// In-memory dataset: inputs in [0,1]^d with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub d: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(DataError::Malformed);
        }
        let d = inputs[0].len();
        for (row, x) in inputs.iter().enumerate() {
            if x.len() != d {
                return Err(DataError::Malformed);
            }
            for &v in x {
                if !(0.0..=1.0).contains(&v) {
                    return Err(DataError::InputOutOfRange { value: v, row });
                }
            }
        }
        for (row, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(DataError::LabelOutOfRange {
                    label: y,
                    num_classes,
                    row,
                });
            }
        }
        Ok(Self {
            inputs,
            labels,
            d,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

struct ByteReader {
    path: String,
    data: Vec<u8>,
    pos: usize,
}

impl ByteReader {
    fn open(path: &Path) -> Result<Self, DataError> {
        let data = std::fs::read(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self {
            path: path.display().to_string(),
            data,
            pos: 0,
        })
    }

    fn take(&mut self, n: usize) -> Result<&[u8], DataError> {
        if self.pos + n > self.data.len() {
            return Err(DataError::Truncated {
                path: self.path.clone(),
                offset: self.data.len(),
                needed: self.pos + n - self.data.len(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse a big-endian IDX image/label file pair; pixel bytes are scaled
/// by 1/255 into [0,1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let mut img = ByteReader::open(images_path)?;
    let magic = img.read_u32()?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: img.path.clone(),
            found: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let count = img.read_u32()? as usize;
    let rows = img.read_u32()? as usize;
    let cols = img.read_u32()? as usize;
    let d = rows * cols;
    let mut inputs = Vec::with_capacity(count);
    for _ in 0..count {
        let px = img.take(d)?;
        inputs.push(px.iter().map(|&b| b as f64 / 255.0).collect());
    }

    let mut lab = ByteReader::open(labels_path)?;
    let magic = lab.read_u32()?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: lab.path.clone(),
            found: magic,
            expected: LABELS_MAGIC,
        });
    }
    let lcount = lab.read_u32()? as usize;
    if lcount != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: lcount,
        });
    }
    let labels: Vec<usize> = lab.take(count)?.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(inputs, labels, num_classes)
}

/// Write a dataset as an IDX pair (pixels quantized to bytes).
pub fn write_idx(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<(), DataError> {
    assert_eq!(rows * cols, dataset.d, "spatial shape must match dimension");
    let io_err = |p: &Path, source| DataError::Io {
        path: p.display().to_string(),
        source,
    };
    let mut img = Vec::with_capacity(16 + dataset.len() * dataset.d);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for x in &dataset.inputs {
        for &v in x {
            img.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    std::fs::write(images_path, img).map_err(|e| io_err(images_path, e))?;

    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    lab.extend(dataset.labels.iter().map(|&y| y as u8));
    std::fs::write(labels_path, lab).map_err(|e| io_err(labels_path, e))
}

/// Average-pool 2x2 downscale (e.g. 28x28 images to 14x14) for fast
/// desk-scale training.
pub fn downsample_2x2(dataset: &Dataset, rows: usize, cols: usize) -> Result<Dataset, DataError> {
    if rows * cols != dataset.d || !rows.is_multiple_of(2) || !cols.is_multiple_of(2) {
        return Err(DataError::Malformed);
    }
    let (h, w) = (rows / 2, cols / 2);
    let inputs = dataset
        .inputs
        .iter()
        .map(|x| {
            let mut out = Vec::with_capacity(h * w);
            for r in 0..h {
                for c in 0..w {
                    let mut acc = 0.0;
                    for dr in 0..2 {
                        for dc in 0..2 {
                            acc += x[(2 * r + dr) * cols + 2 * c + dc];
                        }
                    }
                    out.push(acc / 4.0);
                }
            }
            out
        })
        .collect();
    Dataset::new(inputs, dataset.labels.clone(), dataset.num_classes)
}

/// Class-conditional Gaussian blobs clipped to [0,1]^d. Class means sit
/// on orthogonal directions around the cube center with pairwise distance
/// `separation`; the blob standard deviation is separation/10, so the
/// classes stay linearly separable at any scale.
pub fn synth_gaussians(
    d: usize,
    num_classes: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if per_class == 0 {
        return Err(DataError::EmptyClass);
    }
    if !(separation > 0.0) {
        return Err(DataError::InvalidSeparation(separation));
    }
    if d == 0 || num_classes == 0 {
        return Err(DataError::Malformed);
    }
    let mut rng = rng_from_seed(seed);
    // Orthonormal-ish class directions by Gram-Schmidt over seeded draws.
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    while dirs.len() < num_classes {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for u in &dirs {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= dot * ui;
            }
        }
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            dirs.push(v.into_iter().map(|a| a / norm).collect());
        } else if dirs.len() >= d {
            // More classes than dimensions: fall back to raw directions.
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            for a in &mut v {
                *a /= norm;
            }
            dirs.push(v);
        }
    }
    let radius = separation / std::f64::consts::SQRT_2;
    let std = separation / 10.0;
    let mut inputs = Vec::with_capacity(num_classes * per_class);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (c, dir) in dirs.iter().enumerate() {
        for _ in 0..per_class {
            let x: Vec<f64> = dir
                .iter()
                .map(|&di| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    (0.5 + radius * di + std * noise).clamp(0.0, 1.0)
                })
                .collect();
            inputs.push(x);
            labels.push(c);
        }
    }
    Dataset::new(inputs, labels, num_classes)
}

/// One row of the campaign results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub example_id: u64,
    pub true_label: usize,
    pub verdict: String,
    pub predicted: Option<usize>,
    pub p_a_lower: Option<f64>,
    pub base_radius: Option<f64>,
    pub radius: Option<f64>,
    pub alm: Option<f64>,
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    pub seed: u64,
}

pub const RESULTS_HEADER: &str =
    "example_id,true_label,verdict,predicted,p_a_lower,base_radius,radius,alm,n0,n,alpha,seed";

pub fn outcome_to_record(o: &ExampleOutcome, seed: u64) -> ResultRecord {
    let (verdict, predicted, p_a_lower, base_radius, radius, alm) = match &o.result.verdict {
        Verdict::Certified {
            class,
            p_a_lower,
            certificate,
        } => (
            "CERTIFIED".to_string(),
            Some(*class),
            Some(*p_a_lower),
            Some(certificate.base_radius),
            Some(certificate.radius),
            Some(certificate.alm),
        ),
        Verdict::Abstain => ("ABSTAIN".to_string(), None, None, None, None, None),
    };
    ResultRecord {
        example_id: o.example_id as u64,
        true_label: o.true_label,
        verdict,
        predicted,
        p_a_lower,
        base_radius,
        radius,
        alm,
        n0: o.result.n0,
        n: o.result.n,
        alpha: o.result.alpha,
        seed,
    }
}

fn fmt_f64(v: f64) -> String {
    // 12 significant digits; round-trips the values the schema cares about.
    format!("{v:.11e}")
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Write campaign records as CSV (header always present; an ABSTAIN row
/// leaves the certificate fields empty).
pub fn write_results(records: &[ResultRecord], path: &Path) -> Result<(), DataError> {
    let f = std::fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(f);
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    writeln!(w, "{RESULTS_HEADER}").map_err(io_err)?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.example_id,
            r.true_label,
            r.verdict,
            r.predicted.map(|p| p.to_string()).unwrap_or_default(),
            fmt_opt_f64(r.p_a_lower),
            fmt_opt_f64(r.base_radius),
            fmt_opt_f64(r.radius),
            fmt_opt_f64(r.alm),
            r.n0,
            r.n,
            fmt_f64(r.alpha),
            r.seed,
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    s: &str,
    path: &Path,
    line: usize,
    what: &str,
) -> Result<T, DataError> {
    s.parse().map_err(|_| DataError::MalformedRow {
        path: path.display().to_string(),
        line,
        reason: format!("bad {what}: '{s}'"),
    })
}

fn parse_opt<T: std::str::FromStr>(
    s: &str,
    path: &Path,
    line: usize,
    what: &str,
) -> Result<Option<T>, DataError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, path, line, what).map(Some)
    }
}

/// Read a results CSV written by [`write_results`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>, DataError> {
    let f = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(f);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if i == 0 {
            if line != RESULTS_HEADER {
                return Err(DataError::MalformedRow {
                    path: path.display().to_string(),
                    line: 1,
                    reason: "unexpected header".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 12 {
            return Err(DataError::MalformedRow {
                path: path.display().to_string(),
                line: i + 1,
                reason: format!("expected 12 columns, got {}", cols.len()),
            });
        }
        let ln = i + 1;
        out.push(ResultRecord {
            example_id: parse_field(cols[0], path, ln, "example_id")?,
            true_label: parse_field(cols[1], path, ln, "true_label")?,
            verdict: cols[2].to_string(),
            predicted: parse_opt(cols[3], path, ln, "predicted")?,
            p_a_lower: parse_opt(cols[4], path, ln, "p_a_lower")?,
            base_radius: parse_opt(cols[5], path, ln, "base_radius")?,
            radius: parse_opt(cols[6], path, ln, "radius")?,
            alm: parse_opt(cols[7], path, ln, "alm")?,
            n0: parse_field(cols[8], path, ln, "n0")?,
            n: parse_field(cols[9], path, ln, "n")?,
            alpha: parse_field(cols[10], path, ln, "alpha")?,
            seed: parse_field(cols[11], path, ln, "seed")?,
        });
    }
    Ok(out)
}

pub const CURVE_HEADER: &str = "threshold,acc_radius,acc_alm";

/// Write the accuracy-vs-threshold curves as CSV.
pub fn write_curves(points: &[CurvePoint], path: &Path) -> Result<(), DataError> {
    let f = std::fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(f);
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    writeln!(w, "{CURVE_HEADER}").map_err(io_err)?;
    for p in points {
        writeln!(
            w,
            "{},{},{}",
            fmt_f64(p.threshold),
            fmt_f64(p.acc_radius),
            fmt_f64(p.acc_alm)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothing::{CertResult, Verdict};

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn idx_round_trip_is_pixel_exact() {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..7 {
            inputs.push(
                (0..6)
                    .map(|j| ((i * 37 + j * 11) % 256) as f64 / 255.0)
                    .collect(),
            );
            labels.push(i % 3);
        }
        let ds = Dataset::new(inputs, labels, 3).unwrap();
        let dir = tmpdir();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        write_idx(&ds, 2, 3, &img, &lab).unwrap();
        let loaded = load_idx(&img, &lab).unwrap();
        assert_eq!(loaded, ds);
    }

    #[test]
    fn idx_swapped_arguments_fail_with_bad_magic() {
        let ds = Dataset::new(vec![vec![0.5; 4]; 2], vec![0, 1], 2).unwrap();
        let dir = tmpdir();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        write_idx(&ds, 2, 2, &img, &lab).unwrap();
        match load_idx(&lab, &img) {
            Err(DataError::BadMagic { expected, .. }) => assert_eq!(expected, IMAGES_MAGIC),
            other => panic!("expected bad magic, got {other:?}"),
        }
    }

    #[test]
    fn idx_truncation_reports_offset() {
        let ds = Dataset::new(vec![vec![0.5; 4]; 3], vec![0, 1, 0], 2).unwrap();
        let dir = tmpdir();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        write_idx(&ds, 2, 2, &img, &lab).unwrap();
        let bytes = std::fs::read(&img).unwrap();
        std::fs::write(&img, &bytes[..bytes.len() - 3]).unwrap();
        match load_idx(&img, &lab) {
            Err(DataError::Truncated { offset, needed, .. }) => {
                assert_eq!(offset, bytes.len() - 3);
                assert_eq!(needed, 3);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn idx_count_mismatch_detected() {
        let ds = Dataset::new(vec![vec![0.1; 4]; 3], vec![0, 1, 0], 2).unwrap();
        let dir = tmpdir();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        write_idx(&ds, 2, 2, &img, &lab).unwrap();
        // Rewrite the label file with a different count.
        let short = Dataset::new(vec![vec![0.1; 4]; 2], vec![0, 1], 2).unwrap();
        write_idx(&short, 2, 2, &dir.path().join("img2.idx"), &lab).unwrap();
        assert!(matches!(
            load_idx(&img, &lab),
            Err(DataError::CountMismatch { .. })
        ));
    }

    #[test]
    fn downsample_averages_quads() {
        let x: Vec<f64> = (0..16).map(|v| v as f64 / 255.0).collect();
        let ds = Dataset::new(vec![x], vec![0], 1).unwrap();
        let down = downsample_2x2(&ds, 4, 4).unwrap();
        assert_eq!(down.d, 4);
        // Top-left quad of row-major 4x4: values 0,1,4,5 -> mean 2.5/255.
        assert!((down.inputs[0][0] - 2.5 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn synth_gaussians_properties() {
        let ds = synth_gaussians(2, 2, 50, 10.0, 7).unwrap();
        assert_eq!(ds.len(), 100);
        assert!(ds
            .inputs
            .iter()
            .flatten()
            .all(|&v| (0.0..=1.0).contains(&v)));
        // Same seed reproduces the dataset exactly.
        assert_eq!(ds, synth_gaussians(2, 2, 50, 10.0, 7).unwrap());
        assert!(synth_gaussians(2, 2, 0, 1.0, 7).is_err());
        assert!(synth_gaussians(2, 2, 5, 0.0, 7).is_err());

        // Strong separation admits a perfect linear split along the
        // difference of class means.
        let mean = |c: usize| -> Vec<f64> {
            let rows: Vec<&Vec<f64>> = ds
                .inputs
                .iter()
                .zip(&ds.labels)
                .filter(|(_, &y)| y == c)
                .map(|(x, _)| x)
                .collect();
            (0..2)
                .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
                .collect()
        };
        let (m0, m1) = (mean(0), mean(1));
        let w: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
        let mid: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| (a + b) / 2.0).collect();
        let b: f64 = -w.iter().zip(&mid).map(|(wi, mi)| wi * mi).sum::<f64>();
        let correct = ds
            .inputs
            .iter()
            .zip(&ds.labels)
            .filter(|(x, &y)| {
                let s: f64 = w.iter().zip(x.iter()).map(|(wi, xi)| wi * xi).sum::<f64>() + b;
                (s > 0.0) == (y == 1)
            })
            .count();
        assert_eq!(
            correct,
            ds.len(),
            "linear split must be perfect at separation 10"
        );
    }

    #[test]
    fn results_round_trip_and_abstain_schema() {
        use crate::cert_math::{Certificate, Norm};
        let outcomes = [
            ExampleOutcome {
                example_id: 0,
                true_label: 1,
                result: CertResult {
                    verdict: Verdict::Certified {
                        class: 1,
                        p_a_lower: 0.987654321012,
                        certificate: Certificate {
                            radius: 1.234567890123,
                            alm: 2.345678901234,
                            base_radius: 1.34567890123,
                            norm: Norm::L2,
                        },
                    },
                    n0: 100,
                    n: 1000,
                    alpha: 0.001,
                },
            },
            ExampleOutcome {
                example_id: 1,
                true_label: 0,
                result: CertResult {
                    verdict: Verdict::Abstain,
                    n0: 100,
                    n: 1000,
                    alpha: 0.001,
                },
            },
        ];
        let records: Vec<ResultRecord> =
            outcomes.iter().map(|o| outcome_to_record(o, 42)).collect();
        let dir = tmpdir();
        let path = dir.path().join("results.csv");
        write_results(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RESULTS_HEADER);
        // The abstain row has empty certificate fields.
        assert!(lines[2].starts_with("1,0,ABSTAIN,,,,,"));

        let loaded = read_results(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].verdict, "CERTIFIED");
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(loaded[0].radius.unwrap(), 1.234567890123) < 1e-11);
        assert!(rel(loaded[0].alm.unwrap(), 2.345678901234) < 1e-11);
        assert_eq!(loaded[1].predicted, None);
        assert_eq!(loaded[1].radius, None);

        // Empty record list produces a header-only file.
        let empty = dir.path().join("empty.csv");
        write_results(&[], &empty).unwrap();
        assert_eq!(
            std::fs::read_to_string(&empty).unwrap(),
            format!("{RESULTS_HEADER}\n")
        );
        assert!(read_results(&empty).unwrap().is_empty());
    }

    #[test]
    fn results_golden_file() {
        // The schema is stable: byte-for-byte golden comparison.
        let records = vec![
            ResultRecord {
                example_id: 3,
                true_label: 7,
                verdict: "CERTIFIED".into(),
                predicted: Some(7),
                p_a_lower: Some(0.75),
                base_radius: Some(0.5),
                radius: Some(0.25),
                alm: Some(1.5),
                n0: 100,
                n: 1000,
                alpha: 0.001,
                seed: 42,
            },
            ResultRecord {
                example_id: 4,
                true_label: 2,
                verdict: "ABSTAIN".into(),
                predicted: None,
                p_a_lower: None,
                base_radius: None,
                radius: None,
                alm: None,
                n0: 100,
                n: 1000,
                alpha: 0.001,
                seed: 42,
            },
        ];
        let dir = tmpdir();
        let path = dir.path().join("golden.csv");
        write_results(&records, &path).unwrap();
        let got = std::fs::read_to_string(&path).unwrap();
        let want = "example_id,true_label,verdict,predicted,p_a_lower,base_radius,radius,alm,n0,n,alpha,seed\n\
            3,7,CERTIFIED,7,7.50000000000e-1,5.00000000000e-1,2.50000000000e-1,1.50000000000e0,100,1000,1.00000000000e-3,42\n\
            4,2,ABSTAIN,,,,,,100,1000,1.00000000000e-3,42\n";
        assert_eq!(got, want);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let dir = tmpdir();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, format!("{RESULTS_HEADER}\n1,2,CERTIFIED,oops\n")).unwrap();
        assert!(matches!(
            read_results(&path),
            Err(DataError::MalformedRow { line: 2, .. })
        ));
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(matches!(
            read_results(&path),
            Err(DataError::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn curve_csv_schema() {
        let dir = tmpdir();
        let path = dir.path().join("curve.csv");
        write_curves(
            &[CurvePoint {
                threshold: 0.0,
                acc_radius: 0.5,
                acc_alm: 0.75,
            }],
            &path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("threshold,acc_radius,acc_alm\n"));
        assert_eq!(text.lines().count(), 2);
    }
}
