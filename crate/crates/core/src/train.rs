//! SGD training loop, step schedule, evaluation and the residual/plane ablation.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::data::{augment_rng, batches, Augment, Dataset};
use crate::error::{Error, Result};
use crate::kernels;
use crate::network::Network;
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    }

    pub fn of<T: Real>() -> Self {
        if T::BYTES == 8 {
            Precision::F64
        } else {
            Precision::F32
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" | "double" => Ok(Precision::F64),
            "f32" | "single" => Ok(Precision::F32),
            _ => Err(Error::Input(format!("unknown precision '{s}' (expected f64 or f32)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs per learning-rate plateau.
    pub lr_step: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
    pub augment: Augment,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(10)
    }
}

impl TrainConfig {
    /// The published schedule: 300 epochs, step every 30.
    pub fn full_schedule() -> Self {
        Self {
            base_lr: 0.1,
            lr_decay_factor: 10.0,
            lr_step: 30,
            weight_decay: 1e-4,
            momentum: 0.9,
            epochs: 300,
            batch_size: 128,
            seed: 0,
            precision: Precision::F64,
            augment: Augment::None,
        }
    }

    /// Short run; below 90 epochs the step is `ceil(epochs / 3)` so the three
    /// plateaus survive.
    pub fn desk(epochs: usize) -> Self {
        Self {
            epochs,
            lr_step: desk_lr_step(epochs),
            ..Self::full_schedule()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.lr_decay_factor.is_nan() || self.lr_decay_factor < 1.0 {
            return bad(format!("lr_decay_factor must be >= 1, got {}", self.lr_decay_factor));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.lr_step == 0 {
            return bad("lr_step must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        Ok(())
    }
}

pub fn desk_lr_step(epochs: usize) -> usize {
    if epochs < 90 {
        epochs.div_ceil(3).max(1)
    } else {
        30
    }
}

/// `base_lr * decay^(-floor(epoch / lr_step))`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = (epoch / cfg.lr_step) as i32;
    cfg.base_lr / cfg.lr_decay_factor.powi(drops)
}

/// One SGD step with momentum and coupled L2 decay:
/// `v <- mu v + (g + wd w)`, `w <- w - lr v`. Gradients are consumed.
pub fn sgd_step<T: Real>(params: &mut ParamStore<T>, cfg: &TrainConfig, lr: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::Usage(format!(
            "optimizer step before backward: no gradient for '{}'",
            p.path
        )));
    }
    let mu = T::from_f64(cfg.momentum);
    let lr = T::from_f64(lr);
    for p in params.iter_mut() {
        let wd = T::from_f64(if p.kind.decays() { cfg.weight_decay } else { 0.0 });
        let g = p.grad.take().expect("checked above");
        let v = p
            .velocity
            .get_or_insert_with(|| Tensor::zeros(p.value.shape()));
        for ((w, v), &g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *v = mu * *v + (g + wd * *w);
            *w -= lr * *v;
        }
    }
    Ok(())
}

/// Number of rows whose argmax (lowest index on ties) equals the label.
pub fn correct_count<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let classes = logits.shape().last().copied().unwrap_or(0);
    if classes == 0 {
        return 0;
    }
    logits
        .data()
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy_from_logits<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    correct_count(logits, labels) as f64 / labels.len() as f64
}

/// Eval-mode mean cross-entropy and top-1 accuracy over the whole dataset.
pub fn evaluate<T: Real>(net: &Network<T>, ds: &Dataset) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, labels) = ds.batch::<T>(chunk, None);
        let logits = net.predict(&x)?;
        let (l, _) = kernels::softmax_cross_entropy(&logits, &labels)?;
        loss += l.as_f64() * chunk.len() as f64;
        correct += correct_count(&logits, &labels);
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_acc,test_acc,seconds";

impl EpochRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.epoch, self.lr, self.train_loss, self.train_acc, self.test_acc, self.seconds
        )
    }

    /// Everything except wall time, for reproducibility comparisons.
    pub fn same_numbers(&self, other: &EpochRow) -> bool {
        self.epoch == other.epoch
            && self.lr.to_bits() == other.lr.to_bits()
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.train_acc.to_bits() == other.train_acc.to_bits()
            && self.test_acc.to_bits() == other.test_acc.to_bits()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rows: Vec<EpochRow>,
}

impl RunMetrics {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.csv());
        }
        s
    }

    /// Parse the CSV written by [`RunMetrics::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(METRICS_HEADER) {
            return Err(Error::Input(format!("metrics header must be '{METRICS_HEADER}'")));
        }
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let num = |i: usize| -> Result<f64> {
                    f.get(i)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Input(format!("bad metrics row '{l}'")))
                };
                Ok(EpochRow {
                    epoch: num(0)? as usize,
                    lr: num(1)?,
                    train_loss: num(2)?,
                    train_acc: num(3)?,
                    test_acc: num(4)?,
                    seconds: num(5)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    pub fn same_numbers(&self, other: &RunMetrics) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.same_numbers(b))
    }
}

/// Structured end-of-run document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub spec: ArchSpec,
    pub config: TrainConfig,
    pub num_params: usize,
    pub final_test_acc: f64,
    pub best_test_acc: f64,
    pub final_train_loss: f64,
    pub epochs_completed: usize,
}

impl RunSummary {
    pub fn new(spec: &ArchSpec, cfg: &TrainConfig, num_params: usize, m: &RunMetrics) -> Self {
        let last = m.last();
        Self {
            spec: spec.clone(),
            config: cfg.clone(),
            num_params,
            final_test_acc: last.map_or(0.0, |r| r.test_acc),
            best_test_acc: m.rows.iter().map(|r| r.test_acc).fold(0.0, f64::max),
            final_train_loss: last.map_or(f64::NAN, |r| r.train_loss),
            epochs_completed: last.map_or(0, |r| r.epoch + 1),
        }
    }
}

/// A network plus the optimizer position within a run.
#[derive(Clone, Debug)]
pub struct Trainer<T: Real = f64> {
    net: Network<T>,
    cfg: TrainConfig,
    next_epoch: usize,
    metrics: RunMetrics,
}

impl<T: Real> Trainer<T> {
    /// Fresh network initialised from `cfg.seed`.
    pub fn new(spec: &ArchSpec, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = Network::build(spec, cfg.seed)?;
        Ok(Self::resume(net, cfg, 0))
    }

    /// Continue from `net` (e.g. a loaded checkpoint) at `next_epoch`.
    pub fn resume(net: Network<T>, cfg: TrainConfig, next_epoch: usize) -> Self {
        Self {
            net,
            cfg,
            next_epoch,
            metrics: RunMetrics::default(),
        }
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn into_network(self) -> Network<T> {
        self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    /// Rows produced by this trainer (not including epochs before a resume).
    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn is_done(&self) -> bool {
        self.next_epoch >= self.cfg.epochs
    }

    fn check_geometry(&self, ds: &Dataset) -> Result<()> {
        let s = self.net.spec();
        let want = [s.input_channels, s.input_height, s.input_width];
        if ds.image_shape() != want {
            return Err(Error::Input(format!(
                "dataset images are {:?} but the architecture expects {:?}",
                ds.image_shape(),
                want
            )));
        }
        if let Some(&l) = ds.labels().iter().find(|&&l| l >= s.num_classes) {
            return Err(Error::Input(format!(
                "label {l} does not fit a {}-class head",
                s.num_classes
            )));
        }
        Ok(())
    }

    /// Train one epoch, then evaluate on `test`.
    pub fn run_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<EpochRow> {
        self.check_geometry(train)?;
        self.check_geometry(test)?;
        let start = Instant::now();
        let epoch = self.next_epoch;
        let lr = lr_at(&self.cfg, epoch);
        let order = batches(train.len(), self.cfg.batch_size, self.cfg.seed, epoch)?;
        let mut rng = augment_rng(self.cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (bi, idx) in order.iter().enumerate() {
            let (x, labels) = train.batch::<T>(idx, Some((&self.cfg.augment, &mut rng)));
            let (loss, logits) = self.net.loss_and_grads(x, &labels)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    value: loss,
                });
            }
            sgd_step(self.net.params_mut(), &self.cfg, lr)?;
            loss_sum += loss * idx.len() as f64;
            correct += correct_count(&logits, &labels);
        }
        let n = train.len().max(1) as f64;
        let (_, test_acc) = evaluate(&self.net, test)?;
        let row = EpochRow {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.metrics.rows.push(row.clone());
        self.next_epoch += 1;
        Ok(row)
    }

    /// Run the remaining epochs, calling `on_epoch` after each.
    pub fn run(
        &mut self,
        train: &Dataset,
        test: &Dataset,
        mut on_epoch: impl FnMut(&Self, &EpochRow) -> Result<()>,
    ) -> Result<&RunMetrics> {
        while !self.is_done() {
            let row = self.run_epoch(train, test)?;
            on_epoch(self, &row)?;
        }
        Ok(&self.metrics)
    }
}

/// Train `spec` with `cfg` from scratch.
pub fn train<T: Real>(
    spec: &ArchSpec,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<Trainer<T>> {
    let mut t = Trainer::new(spec, cfg.clone())?;
    t.run(train_ds, test_ds, |_, _| Ok(()))?;
    Ok(t)
}

/// The residual and plane variants of `spec`, built from the same initial
/// weights, ready to train on the same batch stream.
pub fn ablation_pair<T: Real>(spec: &ArchSpec, cfg: &TrainConfig) -> Result<(Trainer<T>, Trainer<T>)> {
    let residual = Trainer::<T>::new(&spec.clone().residual(), cfg.clone())?;
    let mut plane_net = Network::build(&spec.clone().plane(), cfg.seed)?;
    plane_net.copy_state_from(residual.network())?;
    Ok((residual, Trainer::resume(plane_net, cfg.clone(), 0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub residual: RunMetrics,
    pub plane: RunMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub spec: ArchSpec,
    pub residual_params: usize,
    pub plane_params: usize,
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    fn finals(&self, pick: impl Fn(&AblationRun) -> &RunMetrics) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| pick(r).last().map_or(0.0, |x| x.test_acc))
            .collect()
    }

    pub fn residual_final(&self) -> Vec<f64> {
        self.finals(|r| &r.residual)
    }

    pub fn plane_final(&self) -> Vec<f64> {
        self.finals(|r| &r.plane)
    }

    pub fn residual_median(&self) -> f64 {
        median(&self.residual_final())
    }

    pub fn plane_median(&self) -> f64 {
        median(&self.plane_final())
    }

    pub fn residual_not_worse(&self) -> bool {
        self.residual_median() >= self.plane_median()
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Train both variants for every seed; each pair runs concurrently.
pub fn ablate<T: Real>(
    spec: &ArchSpec,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Input("ablation needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    let mut counts = (0, 0);
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let (mut r, mut p) = ablation_pair::<T>(spec, &cfg)?;
        counts = (r.network().num_params(), p.network().num_params());
        let (a, b) = rayon::join(
            || r.run(train_ds, test_ds, |_, _| Ok(())).cloned(),
            || p.run(train_ds, test_ds, |_, _| Ok(())).cloned(),
        );
        runs.push(AblationRun {
            seed,
            residual: a?,
            plane: b?,
        });
    }
    Ok(AblationReport {
        spec: spec.clone().residual(),
        residual_params: counts.0,
        plane_params: counts.1,
        runs,
    })
}
