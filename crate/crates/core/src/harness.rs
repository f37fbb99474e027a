//! Digits ingestion, train/test splitting, training runs and evaluation.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::learning::{spin_feature_map, BatchObjective, LabeledSample, Objective, Sample};
use crate::optim::{
    rgd, rtr, ArmijoParams, HessianChoice, IterationRecord, OptimizerReport, ProjectionSettings, ProjectorChoice,
    RgdOptions, RtrOptions, Termination, TrustRegionParams,
};
use crate::retraction::RetractionKind;
use crate::scalar::Scalar;
use crate::tree::DimensionTree;
use crate::ttn::TtnParam;

pub const METRICS_FILE: &str = "metrics.ndjson";
pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// First Armijo trial step of the digits runs. With α₀ = 1 every trial is
/// accepted at once and progress is slow.
pub const DIGITS_INITIAL_STEP: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// Headerless rows of pixel values followed by the class label.
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub format: DataFormat,
    pub pixel_divisor: f64,
    pub features: usize,
    pub classes: usize,
}

impl DatasetSpec {
    /// 8x8 images with pixel values in `0..=16` and ten classes.
    pub fn digits(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), format: DataFormat::Csv, pixel_divisor: 16.0, features: 64, classes: 10 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features == 0 || self.classes == 0 {
            return domain_err("feature and class counts must be positive");
        }
        if !(self.pixel_divisor > 0.0) {
            return domain_err("pixel divisor must be positive");
        }
        Ok(())
    }
}

/// Reads the dataset described by `spec`.
pub fn load_digits<T: Scalar>(spec: &DatasetSpec) -> Result<Vec<LabeledSample<T>>> {
    spec.validate()?;
    let file = File::open(&spec.path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", spec.path.display())))?;
    parse_digits(BufReader::new(file), spec)
}

/// Parses CSV rows; line numbers in errors are 1-based.
pub fn parse_digits<T: Scalar>(reader: impl Read, spec: &DatasetSpec) -> Result<Vec<LabeledSample<T>>> {
    spec.validate()?;
    let max_pixel = spec.pixel_divisor;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|f| f.trim().parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        if values.len() != spec.features + 1 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} values, found {}", spec.features + 1, values.len()),
            });
        }
        let label = values[spec.features];
        if label < 0 || label as usize >= spec.classes {
            return Err(Error::Data(format!("line {line_no}: label {label} outside 0..{}", spec.classes)));
        }
        let mut features = Vec::with_capacity(spec.features);
        for &p in &values[..spec.features] {
            if p < 0 || p as f64 > max_pixel {
                return Err(Error::Data(format!("line {line_no}: pixel {p} outside 0..={max_pixel}")));
            }
            features.push(spin_feature_map(T::of(p as f64 / spec.pixel_divisor)).to_vec());
        }
        let expected = (0..spec.classes).map(|c| if c == label as usize { T::one() } else { T::zero() }).collect();
        out.push(LabeledSample { sample: Sample::new(features), expected });
    }
    Ok(out)
}

/// Seeded shuffle, then the first `floor(fraction * N)` samples train.
pub fn split<S: Clone>(data: &[S], fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return domain_err(format!("train fraction must lie in (0, 1), got {fraction}"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fraction * data.len() as f64).floor() as usize;
    let train = idx[..n_train].iter().map(|&i| data[i].clone()).collect();
    let test = idx[n_train..].iter().map(|&i| data[i].clone()).collect();
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Rgd,
    Rtr,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Rgd => "rgd",
            OptimizerKind::Rtr => "rtr",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgd" => Ok(OptimizerKind::Rgd),
            "rtr" => Ok(OptimizerKind::Rtr),
            other => domain_err(format!("unknown optimizer {other:?} (expected rgd or rtr)")),
        }
    }
}

/// How the optimizers' common start point is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartPoint {
    /// [`TtnParam::random_orthogonal`] with the run seed.
    Random,
    /// Leading principal directions of the training data per node, seeded Gaussian root.
    Principal,
}

impl fmt::Display for StartPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StartPoint::Random => "random",
            StartPoint::Principal => "principal",
        })
    }
}

impl FromStr for StartPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(StartPoint::Random),
            "principal" => Ok(StartPoint::Principal),
            other => domain_err(format!("unknown start point {other:?} (expected random or principal)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub optimizer: OptimizerKind,
    /// Search direction for RGD. For RTR it must be absent or match the Hessian pairing.
    pub projector: Option<ProjectorChoice>,
    /// Model Hessian; RTR only.
    pub hessian: Option<HessianChoice>,
    pub retraction: RetractionKind,
    pub k_max: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub train_frac: f64,
    /// Directory for metrics, loss trace and checkpoint; nothing is written when absent.
    pub out: Option<PathBuf>,
    /// Wall-clock stamps in the metrics; off gives byte-reproducible streams.
    pub timing: bool,
    pub start: StartPoint,
    /// Root rescaling of the start point so that the RMS response norm over
    /// the training set equals this value. `None` keeps the raw start point.
    pub init_scale: Option<f64>,
    pub armijo: ArmijoParams,
    pub trust_region: TrustRegionParams,
    pub projection: ProjectionSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Rgd,
            projector: Some(ProjectorChoice::CartesianHorizontal),
            hessian: None,
            retraction: RetractionKind::Qr,
            k_max: 8,
            max_iter: 2000,
            tol: 1e-10,
            seed: 0,
            train_frac: 0.8,
            out: None,
            timing: true,
            start: StartPoint::Principal,
            init_scale: Some(1.0),
            armijo: ArmijoParams { initial_step: DIGITS_INITIAL_STEP, ..ArmijoParams::default() },
            trust_region: TrustRegionParams::default(),
            projection: ProjectionSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn rgd(projector: ProjectorChoice, retraction: RetractionKind) -> Self {
        Self { projector: Some(projector), retraction, ..Self::default() }
    }

    pub fn rtr(hessian: HessianChoice, retraction: RetractionKind) -> Self {
        Self { optimizer: OptimizerKind::Rtr, projector: None, hessian: Some(hessian), retraction, max_iter: 200, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.optimizer {
            OptimizerKind::Rgd => {
                if self.projector.is_none() {
                    return domain_err("rgd needs a projector");
                }
                if self.hessian.is_some() {
                    return domain_err("a Hessian choice only applies to rtr");
                }
            }
            OptimizerKind::Rtr => {
                let Some(h) = self.hessian else {
                    return domain_err("rtr needs a Hessian choice");
                };
                if let Some(p) = self.projector {
                    if p != h.gradient_projector() {
                        return domain_err(format!("Hessian {h} pairs with the {} projector, not {p}", h.gradient_projector()));
                    }
                }
            }
        }
        if self.k_max == 0 {
            return domain_err("k_max must be positive");
        }
        if !(self.tol >= 0.0) {
            return domain_err("tolerance must be non-negative");
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return domain_err("train fraction must lie in (0, 1)");
        }
        Ok(())
    }

    /// Run label used in logs, e.g. `rgd/cartesian/qr`.
    pub fn label(&self) -> String {
        match self.optimizer {
            OptimizerKind::Rgd => format!("rgd/{}/{}", self.projector.map_or("-", |p| p.name()), self.retraction),
            OptimizerKind::Rtr => format!("rtr/{}/{}", self.hessian.map_or("-", |h| h.name()), self.retraction),
        }
    }
}

/// Final line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub termination: String,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: OptimizerReport<f64>,
    pub summary: Summary,
    pub checkpoint: Option<PathBuf>,
}

/// Balanced tree over the leaves of `samples`, one leaf per feature.
pub fn tree_for<T: Scalar>(samples: &[LabeledSample<T>], k_max: usize) -> Result<DimensionTree> {
    let first = samples.first().ok_or_else(|| Error::Data("no samples".into()))?;
    let dims: Vec<usize> = first.sample.features.iter().map(Vec::len).collect();
    DimensionTree::build_balanced(&dims, first.expected.len(), k_max)
}

struct MetricsSink {
    out: Option<BufWriter<File>>,
    error: Option<std::io::Error>,
}

impl MetricsSink {
    fn write_line(&mut self, line: &str) {
        if let (Some(w), None) = (self.out.as_mut(), self.error.as_ref()) {
            if let Err(e) = writeln!(w, "{line}") {
                self.error = Some(e);
            }
        }
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        if let Some(mut w) = self.out.take() {
            w.flush()?;
        }
        Ok(())
    }
}

/// Runs the configured optimizer on the full-batch training loss.
///
/// Starts from `random_orthogonal(seed)`. With an output directory, the
/// metrics stream, the loss trace and the final checkpoint are written there.
/// Optimizer failures mid-run end up in the report's termination.
pub fn train(config: &RunConfig, train_set: &[LabeledSample<f64>], test_set: &[LabeledSample<f64>]) -> Result<TrainOutcome> {
    config.validate()?;
    let tree = Arc::new(tree_for(train_set, config.k_max)?);
    let objective = BatchObjective::l2(tree.clone(), train_set)?;
    let mut x0 = match config.start {
        StartPoint::Random => TtnParam::random_orthogonal(tree.clone(), config.seed),
        StartPoint::Principal => objective.principal_start(&mut ChaCha8Rng::seed_from_u64(config.seed))?,
    };
    if let Some(scale) = config.init_scale {
        rescale_root(&mut x0, &objective, scale)?;
    }

    if let Some(dir) = &config.out {
        fs::create_dir_all(dir)?;
    }
    let mut sink = MetricsSink {
        out: config.out.as_ref().map(|d| File::create(d.join(METRICS_FILE)).map(BufWriter::new)).transpose()?,
        error: None,
    };
    let label = config.label();
    let mut observer = |r: &IterationRecord| {
        log::debug!("{label} iter {} loss {:.6e} grad^2 {:.3e}", r.iter, r.loss, r.grad_norm_sq);
        match serde_json::to_string(r) {
            Ok(line) => sink.write_line(&line),
            Err(e) => sink.error = Some(e.into()),
        }
    };
    let report = match config.optimizer {
        OptimizerKind::Rgd => {
            let opts = RgdOptions {
                projector: config.projector.expect("validated"),
                retraction: config.retraction,
                tol: config.tol,
                max_iter: config.max_iter,
                armijo: config.armijo,
                projection: config.projection,
                timing: config.timing,
            };
            rgd(&objective, &x0, &opts, &mut observer)?
        }
        OptimizerKind::Rtr => {
            let opts = RtrOptions {
                hessian: config.hessian.expect("validated"),
                retraction: config.retraction,
                tol: config.tol,
                max_iter: config.max_iter,
                trust_region: config.trust_region,
                projection: config.projection,
                timing: config.timing,
            };
            rtr(&objective, &x0, &opts, &mut observer)?
        }
    };

    let train_acc = evaluate_batch(&report.x, &objective)?.accuracy;
    let test_acc = if test_set.is_empty() { None } else { Some(evaluate(&report.x, test_set)?.accuracy) };
    let summary = Summary { train_acc, test_acc, termination: report.termination.to_string() };
    match test_acc {
        Some(t) => log::info!("{label}: {} iterations, {}, train {train_acc:.4}, test {t:.4}", report.iterations(), summary.termination),
        None => log::info!("{label}: {} iterations, {}, train {train_acc:.4}", report.iterations(), summary.termination),
    }
    sink.write_line(&serde_json::to_string(&summary)?);
    sink.finish()?;

    let checkpoint = match &config.out {
        Some(dir) => {
            write_loss_csv(&dir.join(LOSS_FILE), &report.records)?;
            let path = dir.join(CHECKPOINT_FILE);
            report.x.save(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome { report, summary, checkpoint })
}

/// Scales the root block so that `sqrt(mean ||y_n||²)` equals `target`.
///
/// Orthogonality is unaffected since only the root changes.
pub fn rescale_root(x: &mut TtnParam<f64>, batch: &BatchObjective<f64>, target: f64) -> Result<()> {
    if !(target > 0.0) {
        return domain_err("initial response scale must be positive");
    }
    let y = batch.responses(x)?;
    let rms = (y.data().iter().map(|v| v * v).sum::<f64>() / y.rows() as f64).sqrt();
    if !(rms > 0.0 && rms.is_finite()) {
        return domain_err("start point gives vanishing responses");
    }
    let root = x.tree().root_block();
    let scaled = x.block(root).scale(target / rms);
    *x.block_mut(root) = scaled;
    Ok(())
}

fn write_loss_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iter,loss,grad_norm_sq,step_or_radius,elapsed_s")?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.iter, r.loss, r.grad_norm_sq, r.step_or_radius, r.elapsed_s)?;
    }
    w.flush()?;
    Ok(())
}

/// Accuracy and confusion counts (`confusion[true][predicted]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub confusion: Vec<Vec<usize>>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Classifies every sample by the largest response entry.
pub fn evaluate<T: Scalar>(x: &TtnParam<T>, data: &[LabeledSample<T>]) -> Result<Evaluation> {
    if data.is_empty() {
        return domain_err("nothing to evaluate");
    }
    let batch = BatchObjective::l2(x.tree().clone(), data)?;
    evaluate_batch(x, &batch)
}

fn evaluate_batch<T: Scalar>(x: &TtnParam<T>, batch: &BatchObjective<T>) -> Result<Evaluation> {
    let y = batch.responses(x)?;
    let targets = batch.targets();
    let k = y.cols();
    let mut confusion = vec![vec![0; k]; k];
    let mut row = vec![T::zero(); k];
    let mut expected = vec![T::zero(); k];
    for n in 0..y.rows() {
        for j in 0..k {
            row[j] = y.get(n, j);
            expected[j] = targets.get(n, j);
        }
        confusion[argmax(&expected)][argmax(&row)] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let total = y.rows();
    Ok(Evaluation { accuracy: correct as f64 / total as f64, correct, total, confusion })
}

/// Loads a checkpoint and evaluates it; the tree must match the data.
pub fn evaluate_checkpoint(path: impl AsRef<Path>, data: &[LabeledSample<f64>]) -> Result<Evaluation> {
    let x = TtnParam::<f64>::load(path)?;
    evaluate(&x, data)
}

/// Mean training loss at a parameter, for reporting.
pub fn training_loss(x: &TtnParam<f64>, data: &[LabeledSample<f64>]) -> Result<f64> {
    BatchObjective::l2(x.tree().clone(), data)?.value(x)
}

impl Termination {
    /// Whether a run ended without an error.
    pub fn is_success(&self) -> bool {
        !matches!(self, Termination::Error(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseTensor;

    fn spec() -> DatasetSpec {
        DatasetSpec::digits("unused")
    }

    fn row(pixels: &[i64], label: i64) -> String {
        let mut v: Vec<String> = pixels.iter().map(|p| p.to_string()).collect();
        v.push(label.to_string());
        v.join(",")
    }

    #[test]
    fn parses_rows() {
        let mut px = vec![0; 64];
        px[3] = 16;
        px[5] = 8;
        let text = format!("{}\n\n{}\n", row(&[0; 64], 0), row(&px, 9));
        let data: Vec<LabeledSample<f64>> = parse_digits(text.as_bytes(), &spec()).unwrap();
        assert_eq!(data.len(), 2);
        assert!(data[0].sample.features.iter().all(|f| f == &vec![1.0, 0.0]));
        assert_eq!(data[0].expected[0], 1.0);
        assert_eq!(data[0].expected.iter().sum::<f64>(), 1.0);
        let f = &data[1].sample.features[3];
        assert!(f[0].abs() < 1e-16 && f[1] == 1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((data[1].sample.features[5][0] - h).abs() < 1e-15);
        assert_eq!(data[1].expected[9], 1.0);
    }

    #[test]
    fn reports_bad_rows() {
        let good = row(&[0; 64], 1);
        let text = format!("{good}\n{good}\n1,2,x\n");
        match parse_digits::<f64>(text.as_bytes(), &spec()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = format!("{good}\n{}\n", row(&[0; 63], 1));
        assert!(matches!(parse_digits::<f64>(text.as_bytes(), &spec()), Err(Error::Parse { line: 2, .. })));
        let text = row(&[0; 64], 10);
        assert!(matches!(parse_digits::<f64>(text.as_bytes(), &spec()), Err(Error::Data(_))));
        let text = row(&[17; 64], 1);
        assert!(matches!(parse_digits::<f64>(text.as_bytes(), &spec()), Err(Error::Data(_))));
        let bad = DatasetSpec { pixel_divisor: 0.0, ..spec() };
        assert!(parse_digits::<f64>(good.as_bytes(), &bad).is_err());
        assert!(load_digits::<f64>(&DatasetSpec::digits("/nonexistent/digits.csv")).is_err());
    }

    #[test]
    fn split_rules() {
        let data: Vec<usize> = (0..1797).collect();
        let (a, b) = split(&data, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (1437, 360));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, data);
        assert_eq!(split(&data, 0.8, 3).unwrap(), (a.clone(), b));
        assert_ne!(split(&data, 0.8, 4).unwrap().0, a);
        let (c, d) = split(&[1, 2, 3, 4], 0.5, 0).unwrap();
        assert_eq!((c.len(), d.len()), (2, 2));
        assert!(split(&data, 1.0, 0).is_err());
        assert!(split(&data, 0.0, 0).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    fn synthetic(k: usize, per_class: usize) -> Vec<LabeledSample<f64>> {
        // two binary leaves encode the class index, K = 4
        (0..k * per_class)
            .map(|n| {
                let c = n % k;
                let features = vec![
                    if c & 1 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
                    if c & 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
                ];
                let expected = (0..k).map(|j| if j == c { 1.0 } else { 0.0 }).collect();
                LabeledSample { sample: Sample::new(features), expected }
            })
            .collect()
    }

    #[test]
    fn perfect_and_constant_models() {
        let data = synthetic(4, 5);
        let tree = Arc::new(tree_for(&data, 4).unwrap());
        // root block maps the leaf pair (a, b) to class a + 2b
        let perfect = DenseTensor::from_fn(&[2, 2, 4], |i| if i[0] + 2 * i[1] == i[2] { 1.0 } else { 0.0 }).unwrap();
        let x = TtnParam::new(tree.clone(), vec![perfect]).unwrap();
        let ev = evaluate(&x, &data).unwrap();
        assert_eq!(ev.accuracy, 1.0);
        assert_eq!(ev.confusion[2][2], 5);
        let constant = DenseTensor::from_fn(&[2, 2, 4], |_| 1.0).unwrap();
        let x = TtnParam::new(tree.clone(), vec![constant]).unwrap();
        let ev = evaluate(&x, &data).unwrap();
        assert!((ev.accuracy - 0.25).abs() < 1e-12);
        assert!(ev.confusion.iter().all(|r| r[1..].iter().all(|&c| c == 0)));
        let wrong = vec![LabeledSample { sample: Sample::new(vec![vec![1.0, 0.0]; 3]), expected: vec![1.0, 0.0, 0.0, 0.0] }];
        assert!(evaluate(&x, &wrong).is_err());
    }

    #[test]
    fn config_pairings() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig::rtr(HessianChoice::OrthHess, RetractionKind::Qr).validate().is_ok());
        assert!(RunConfig::rgd(ProjectorChoice::None, RetractionKind::Cayley).validate().is_ok());
        let mut c = RunConfig::rtr(HessianChoice::CartH, RetractionKind::Qr);
        c.projector = Some(ProjectorChoice::Tangent);
        assert!(c.validate().is_err());
        c.projector = Some(ProjectorChoice::CartesianHorizontal);
        assert!(c.validate().is_ok());
        c.hessian = None;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.hessian = Some(HessianChoice::CartH);
        assert!(c.validate().is_err());
        let c = RunConfig { train_frac: 1.0, ..RunConfig::default() };
        assert!(c.validate().is_err());
        assert_eq!(RunConfig::rtr(HessianChoice::CartH, RetractionKind::Polar).label(), "rtr/cart-h/polar");
        assert_eq!("RTR".parse::<OptimizerKind>().unwrap(), OptimizerKind::Rtr);
    }

    #[test]
    fn train_writes_outputs() {
        let data = synthetic(4, 6);
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig { k_max: 2, max_iter: 5, timing: false, out: Some(dir.path().to_path_buf()), ..RunConfig::default() };
        let out = train(&config, &data, &data).unwrap();
        let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let lines: Vec<&str> = metrics.lines().collect();
        assert_eq!(lines.len(), out.report.records.len() + 1);
        let summary: Summary = serde_json::from_str(lines.last().unwrap()).unwrap();
        assert_eq!(summary, out.summary);
        let csv = fs::read_to_string(dir.path().join(LOSS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), out.report.records.len() + 1);
        let x = TtnParam::<f64>::load(out.checkpoint.unwrap()).unwrap();
        assert_eq!(x.blocks(), out.report.x.blocks());
        let ev = evaluate_checkpoint(dir.path().join(CHECKPOINT_FILE), &data).unwrap();
        assert_eq!(ev.accuracy, summary.test_acc.unwrap());

        let config = RunConfig { k_max: 2, max_iter: 0, ..RunConfig::default() };
        let out = train(&config, &data, &[]).unwrap();
        assert_eq!(out.report.records.len(), 1);
        assert_eq!(out.summary.test_acc, None);
        assert!(out.checkpoint.is_none());
    }
}
