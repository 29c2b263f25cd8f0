//! Losses, Adam, class weighting, early stopping, random hyperparameter
//! search, metrics, and the epoch loop.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::{Mode, Param};
use crate::models::{Head, ModelGraph};
use crate::rng::{rng_from, subseed};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// A validation loss must beat the best by more than this to count as an
/// improvement.
pub const IMPROVEMENT_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be finite and >= 0"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be >= 2"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy on logits via the stable form
/// `max(z,0) - z*y + log(1 + exp(-|z|))`; terms with target 1 are scaled
/// by `positive_weight`. Returns (loss, dloss/dlogits).
pub fn bce_with_logits(
    logits: &Tensor,
    targets: &[f64],
    positive_weight: f64,
) -> Result<(f64, Tensor)> {
    let n = logits.len();
    if n == 0 || targets.len() != n {
        return Err(Error::shape("bce: logits/targets length mismatch"));
    }
    if positive_weight <= 0.0 {
        return Err(Error::config("positive_weight must be > 0"));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    for i in 0..n {
        let y = targets[i];
        if y != 0.0 && y != 1.0 {
            return Err(Error::Data(format!("bce: non-binary target {}", y)));
        }
        let z = logits.data()[i];
        let w = if y == 1.0 { positive_weight } else { 1.0 };
        loss += w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
        let sig = if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        };
        grad.data_mut()[i] = w * (sig - y) / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Class-weighted mean negative log-probability of the true class over
/// `[N, K]` logits. Gradient per row is `(softmax - onehot) * w_y / N`.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    targets: &[usize],
    class_weights: &[f64],
) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 {
        return Err(Error::shape("sce expects [N, K] logits"));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if targets.len() != n {
        return Err(Error::shape("sce: targets length mismatch"));
    }
    if class_weights.len() != k {
        return Err(Error::shape("sce: class_weights length != K"));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[n, k]);
    for i in 0..n {
        let y = targets[i];
        if y >= k {
            return Err(Error::Data(format!("sce: target {} out of range [0, {})", y, k)));
        }
        let row = &logits.data()[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&z| (z - m).exp()).sum();
        let log_z = m + sum_exp.ln();
        let w = class_weights[y];
        loss += w * (log_z - row[y]);
        for j in 0..k {
            let p = (row[j] - m).exp() / sum_exp;
            let onehot = if j == y { 1.0 } else { 0.0 };
            grad.data_mut()[i * k + j] = w * (p - onehot) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Inverse-frequency, mean-normalized class weights:
/// `w_c = N / (K * count_c)`. Every class in `[0, k)` must be present.
pub fn class_weights(labels: &[usize], k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::config("class_weights: need K >= 2"));
    }
    let mut counts = vec![0usize; k];
    for &c in labels {
        if c >= k {
            return Err(Error::Data(format!("label {} out of range [0, {})", c, k)));
        }
        counts[c] += 1;
    }
    let n = labels.len();
    counts
        .iter()
        .enumerate()
        .map(|(c, &count)| {
            if count == 0 {
                Err(Error::Data(format!("class {} absent from labels", c)))
            } else {
                Ok(n as f64 / (k as f64 * count as f64))
            }
        })
        .collect()
}

/// Per-parameter first/second-moment accumulators; lazily shaped on the
/// first step.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update over every parameter, consuming the gradients stored in
/// each [`Param`].
pub fn adam_step(params: &mut [&mut Param], state: &mut AdamState, lr: f64) -> Result<()> {
    if state.t == 0 && state.m.is_empty() {
        for p in params.iter() {
            state.m.push(Tensor::zeros(p.value.shape()));
            state.v.push(Tensor::zeros(p.value.shape()));
        }
    }
    if state.m.len() != params.len() {
        return Err(Error::State(format!(
            "adam state tracks {} params, got {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for (idx, p) in params.iter_mut().enumerate() {
        if p.grad.shape() != p.value.shape() || state.m[idx].shape() != p.value.shape() {
            return Err(Error::shape("adam: parameter/gradient shape mismatch"));
        }
        let n = p.value.len();
        for i in 0..n {
            let g = p.grad.data()[i];
            let m = ADAM_BETA1 * state.m[idx].data()[i] + (1.0 - ADAM_BETA1) * g;
            let v = ADAM_BETA2 * state.v[idx].data()[i] + (1.0 - ADAM_BETA2) * g * g;
            state.m[idx].data_mut()[i] = m;
            state.v[idx].data_mut()[i] = v;
            p.value.data_mut()[i] -= lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    /// `best_epoch` is 1-based.
    Stop { best_epoch: usize },
}

/// Stop once validation loss has gone `patience` consecutive epochs without
/// a strict improvement over the running best.
pub fn early_stopping_check(val_losses: &[f64], patience: usize) -> Result<StopDecision> {
    if val_losses.is_empty() {
        return Err(Error::State("early stopping needs >= 1 epoch".into()));
    }
    if patience == 0 {
        return Err(Error::config("patience must be >= 1"));
    }
    let mut best = 0usize;
    for (i, &loss) in val_losses.iter().enumerate().skip(1) {
        if val_losses[best] - loss > IMPROVEMENT_TOL {
            best = i;
        }
    }
    if val_losses.len() - 1 - best >= patience {
        Ok(StopDecision::Stop { best_epoch: best + 1 })
    } else {
        Ok(StopDecision::Continue)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[true][pred]` counts.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn confusion_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_kv(&self) -> String {
        format!(
            "accuracy = {:?}\nf1 = {:?}\nprecision = {:?}\nrecall = {:?}\n",
            self.accuracy, self.f1, self.precision, self.recall
        )
    }
}

/// Standard classification metrics. Binary (K = 2) scores the positive
/// class (index 1); K > 2 uses macro averaging. Zero-denominator precision
/// or recall is defined as 0.
pub fn compute_metrics(predictions: &[usize], labels: &[usize], k: usize) -> Result<Metrics> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Data("metrics: empty or mismatched inputs".into()));
    }
    if k < 2 {
        return Err(Error::config("metrics: need K >= 2"));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= k || y >= k {
            return Err(Error::Data(format!("metrics: class out of range [0, {})", k)));
        }
        confusion[y][p] += 1;
    }
    let n = predictions.len() as f64;
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / n;
    let per_class = |c: usize| -> (f64, f64, f64) {
        let tp = confusion[c][c] as f64;
        let fp: f64 = (0..k).filter(|&y| y != c).map(|y| confusion[y][c] as f64).sum();
        let fn_: f64 = (0..k).filter(|&p| p != c).map(|p| confusion[c][p] as f64).sum();
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        (precision, recall, f1)
    };
    let (precision, recall, f1) = if k == 2 {
        per_class(1)
    } else {
        let mut acc = (0.0, 0.0, 0.0);
        for c in 0..k {
            let (p, r, f) = per_class(c);
            acc = (acc.0 + p, acc.1 + r, acc.2 + f);
        }
        (acc.0 / k as f64, acc.1 / k as f64, acc.2 / k as f64)
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        confusion,
    })
}

/// Hard class decisions from raw head outputs: sigmoid logits threshold at
/// 0.5 probability (logit > 0), softmax takes the argmax (ties to the
/// lowest index).
pub fn predict_classes(outputs: &Tensor, head: &Head) -> Result<Vec<usize>> {
    if outputs.rank() != 2 {
        return Err(Error::shape("predict expects [N, D] outputs"));
    }
    let (n, d) = (outputs.shape()[0], outputs.shape()[1]);
    match head {
        Head::SigmoidBinary => {
            if d != 1 {
                return Err(Error::shape("sigmoid head emits one logit"));
            }
            Ok((0..n).map(|i| usize::from(outputs.data()[i] > 0.0)).collect())
        }
        Head::SoftmaxMulticlass(k) => {
            if d != *k {
                return Err(Error::shape("softmax head width mismatch"));
            }
            Ok((0..n)
                .map(|i| {
                    let row = &outputs.data()[i * d..(i + 1) * d];
                    let mut best = 0;
                    for j in 1..d {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect())
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metrics: Metrics,
}

#[derive(Clone, Debug, Default)]
pub struct EpochHistory {
    pub records: Vec<EpochRecord>,
}

impl EpochHistory {
    pub fn val_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_loss).collect()
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.val_losses().into_iter().reduce(f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc,val_precision,val_recall,val_f1\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                r.epoch,
                r.train_loss,
                r.val_loss,
                r.val_metrics.accuracy,
                r.val_metrics.precision,
                r.val_metrics.recall,
                r.val_metrics.f1
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// In-memory classification dataset: stacked inputs `[N, ...]` with class
/// indices.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape()[0] != labels.len() {
            return Err(Error::shape("dataset rows vs labels"));
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn gather(&self, idxs: &[usize]) -> (Tensor, Vec<usize>) {
        let per: usize = self.inputs.len() / self.inputs.shape()[0];
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = idxs.len();
        let mut data = Vec::with_capacity(idxs.len() * per);
        for &i in idxs {
            data.extend_from_slice(&self.inputs.data()[i * per..(i + 1) * per]);
        }
        (
            Tensor::new(shape, data).expect("gather preserves row size"),
            idxs.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

fn loss_and_grad(
    outputs: &Tensor,
    labels: &[usize],
    head: &Head,
    weights: &[f64],
) -> Result<(f64, Tensor)> {
    match head {
        Head::SigmoidBinary => {
            let targets: Vec<f64> = labels.iter().map(|&c| c as f64).collect();
            // positive class is scaled relative to the negative class
            let pw = weights[1] / weights[0];
            bce_with_logits(outputs, &targets, pw)
        }
        Head::SoftmaxMulticlass(_) => softmax_cross_entropy(outputs, labels, weights),
    }
}

fn eval_epoch(
    model: &mut ModelGraph,
    data: &Dataset,
    head: &Head,
    weights: &[f64],
    k: usize,
) -> Result<(f64, Metrics)> {
    let outputs = model.forward(&data.inputs, Mode::Eval)?;
    let (loss, _) = loss_and_grad(&outputs, &data.labels, head, weights)?;
    let preds = predict_classes(&outputs, head)?;
    let metrics = compute_metrics(&preds, &data.labels, k)?;
    Ok((loss, metrics))
}

/// Train until `max_epochs` or early stop; the model is left holding the
/// weights of the best validation epoch.
pub fn train_loop(
    model: &mut ModelGraph,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<EpochHistory> {
    config.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::Data("train_loop: need >= 2 train and >= 1 val samples".into()));
    }
    let head = model.head.clone();
    let k = match head {
        Head::SigmoidBinary => 2,
        Head::SoftmaxMulticlass(k) => k,
    };
    let weights = if config.class_weighting {
        class_weights(&train.labels, k)?
    } else {
        vec![1.0; k]
    };
    let mut shuffle_rng = rng_from(subseed(config.seed, "shuffle"));
    let mut adam = AdamState::new();
    let mut history = EpochHistory::default();
    let mut best: Option<(f64, Vec<(String, Tensor)>)> = None;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue; // batch statistics need >= 2 samples
            }
            let (inputs, labels) = train.gather(chunk);
            let outputs = model.forward(&inputs, Mode::Train)?;
            let (loss, grad) = loss_and_grad(&outputs, &labels, &head, &weights)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged: non-finite loss at epoch {}",
                    epoch
                )));
            }
            model.zero_grad();
            model.backward(&grad)?;
            adam_step(&mut model.params_mut(), &mut adam, config.learning_rate)?;
            epoch_loss += loss;
            n_batches += 1;
        }
        if n_batches == 0 {
            return Err(Error::Data("train_loop: no full batch of size >= 2".into()));
        }
        let train_loss = epoch_loss / n_batches as f64;
        let (val_loss, val_metrics) = eval_epoch(model, val, &head, &weights, k)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged: non-finite validation loss at epoch {}",
                epoch
            )));
        }
        let improved = match &best {
            None => true,
            Some((b, _)) => b - val_loss > IMPROVEMENT_TOL,
        };
        if improved {
            best = Some((val_loss, model.state_dict()));
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metrics,
        });
        if let StopDecision::Stop { .. } = early_stopping_check(&history.val_losses(), config.patience)? {
            break;
        }
    }
    if let Some((_, state)) = best {
        model.load_state_dict(&state)?;
    }
    Ok(history)
}

pub const SEARCH_BATCHES: [usize; 3] = [32, 64, 128];
pub const SEARCH_DROPOUTS: [f64; 3] = [0.3, 0.5, 0.7];
pub const SEARCH_LR_RANGE: (f64, f64) = (1e-4, 1e-2);

#[derive(Clone, Debug, PartialEq)]
pub struct TrialConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub config: TrialConfig,
    pub best_val_loss: f64,
}

/// Seeded trial configs: learning rate log-uniform over the grid range;
/// the 9 discrete (batch, dropout) combos are visited as a seeded
/// permutation and only repeat once all 9 have been used.
pub fn sample_search_space(n_trials: usize, seed: u64) -> Result<Vec<TrialConfig>> {
    if n_trials == 0 {
        return Err(Error::config("n_trials must be >= 1"));
    }
    let mut rng = rng_from(subseed(seed, "search"));
    let mut combos: Vec<(usize, f64)> = SEARCH_BATCHES
        .iter()
        .flat_map(|&b| SEARCH_DROPOUTS.iter().map(move |&d| (b, d)))
        .collect();
    let mut out = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        if trial % combos.len() == 0 {
            for i in (1..combos.len()).rev() {
                let j = rng.gen_range(0..=i);
                combos.swap(i, j);
            }
        }
        let (batch_size, dropout) = combos[trial % combos.len()];
        let u: f64 = rng.gen::<f64>();
        let (lo, hi) = SEARCH_LR_RANGE;
        let learning_rate = (lo.ln() + u * (hi.ln() - lo.ln())).exp();
        out.push(TrialConfig {
            learning_rate,
            batch_size,
            dropout,
        });
    }
    Ok(out)
}

/// Run every trial (optionally in parallel; trials are independent) and
/// rank ascending by best validation loss, ties broken by trial index.
pub fn random_search<F>(
    n_trials: usize,
    seed: u64,
    parallel: bool,
    run: F,
) -> Result<Vec<TrialResult>>
where
    F: Fn(usize, &TrialConfig) -> Result<f64> + Sync,
{
    let configs = sample_search_space(n_trials, seed)?;
    let mut results: Vec<TrialResult> = if parallel {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                Ok(TrialResult {
                    trial: i,
                    config: c.clone(),
                    best_val_loss: run(i, c)?,
                })
            })
            .collect::<Result<_>>()?
    } else {
        configs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Ok(TrialResult {
                    trial: i,
                    config: c.clone(),
                    best_val_loss: run(i, c)?,
                })
            })
            .collect::<Result<_>>()?
    };
    results.sort_by(|a, b| {
        a.best_val_loss
            .partial_cmp(&b.best_val_loss)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.trial.cmp(&b.trial))
    });
    Ok(results)
}
