//! Label expansion, losses and the optimisation loop.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{MomentAnnotation, Period};
use crate::error::{Error, Result};
use crate::evaluation;
use crate::model::{Model, Sample};
use crate::nn::{clip_grad_norm, Adam, AdamState, Grads, Params, Session, Var};
use crate::par::{self, Execution};

/// Clamp applied inside every logarithm of the losses.
pub const LOG_EPS: f64 = 1e-12;

/// Slack for IoU ties computed in floating point, e.g. `7 w / 10 w` vs `0.7`.
pub const IOU_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial rate; decays linearly per epoch to zero at the final epoch.
    pub learning_rate: f64,
    pub grad_clip: f64,
    /// Weight of the highlight loss.
    pub lambda_h: f64,
    pub seed: u64,
    pub expansion_iou_threshold: f64,
    /// Train each branch on its own endpoint loss instead of the fused scores.
    pub branch_losses: bool,
    /// Share of the training set held out for model selection. With 0 the
    /// training set itself is used.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            learning_rate: 0.0005,
            grad_clip: 1.0,
            lambda_h: 5.0,
            seed: 0,
            expansion_iou_threshold: 0.7,
            branch_losses: false,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !(self.grad_clip > 0.0) || !(self.lambda_h >= 0.0) {
            return Err(Error::validation("learning_rate and lambda_h must be non-negative, grad_clip positive"));
        }
        if !(self.expansion_iou_threshold > 0.0 && self.expansion_iou_threshold <= 1.0) {
            return Err(Error::validation("expansion_iou_threshold must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::validation("val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Learning rate of a 0-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let frac = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.learning_rate * (1.0 - frac)
    }
}

fn overlap_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = a.1.max(b.1) - a.0.min(b.0);
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Candidate endpoint sets: starts and ends of every snippet span whose
/// temporal IoU with the snippet-aligned ground truth reaches `threshold`
/// (within [`IOU_TOLERANCE`]). The exact ground-truth endpoints are always
/// included.
pub fn expand_labels(annotation: &MomentAnnotation, periods: &[Period], threshold: f64) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let n = periods.len();
    let gt = (periods[annotation.start_idx].start, periods[annotation.end_idx].end);
    let mut starts = BTreeSet::from([annotation.start_idx]);
    let mut ends = BTreeSet::from([annotation.end_idx]);
    for i in 0..n {
        for j in i..n {
            if overlap_iou((periods[i].start, periods[j].end), gt) >= threshold - IOU_TOLERANCE {
                starts.insert(i);
                ends.insert(j);
            }
        }
    }
    (starts, ends)
}

/// Replaces the candidate sets of an annotation with expanded ones.
pub fn apply_expansion(annotation: &mut MomentAnnotation, periods: &[Period], threshold: f64) {
    let (s, e) = expand_labels(annotation, periods, threshold);
    annotation.candidate_starts = s;
    annotation.candidate_ends = e;
}

fn check_candidates(len: usize, starts: &BTreeSet<usize>, ends: &BTreeSet<usize>) -> Result<()> {
    if starts.is_empty() || ends.is_empty() {
        return Err(Error::validation("empty candidate endpoint set"));
    }
    if starts.iter().chain(ends).any(|&i| i >= len) {
        return Err(Error::validation(format!("candidate index beyond {len} snippets")));
    }
    Ok(())
}

/// `-ln Σ_{i∈starts} p_start[i] - ln Σ_{i∈ends} p_end[i]` with the sums
/// clamped at [`LOG_EPS`].
pub fn vmr_loss(p_start: &[f64], p_end: &[f64], starts: &BTreeSet<usize>, ends: &BTreeSet<usize>) -> Result<f64> {
    check_candidates(p_start.len().min(p_end.len()), starts, ends)?;
    let ms: f64 = starts.iter().map(|&i| p_start[i]).sum();
    let me: f64 = ends.iter().map(|&i| p_end[i]).sum();
    Ok(-ms.max(LOG_EPS).ln() - me.max(LOG_EPS).ln())
}

/// Highlight labels: 1 from the earliest candidate start to the latest
/// candidate end, 0 elsewhere.
pub fn highlight_labels(len: usize, starts: &BTreeSet<usize>, ends: &BTreeSet<usize>) -> Vec<f64> {
    let lo = starts.first().copied().unwrap_or(0);
    let hi = ends.last().copied().unwrap_or(0);
    (0..len).map(|i| if lo <= i && i <= hi { 1.0 } else { 0.0 }).collect()
}

/// Mean binary cross-entropy over real snippets.
pub fn highlight_loss(h: &[f64], mask: &[bool], starts: &BTreeSet<usize>, ends: &BTreeSet<usize>) -> Result<f64> {
    check_candidates(h.len(), starts, ends)?;
    let y = highlight_labels(h.len(), starts, ends);
    let real = mask.iter().filter(|&&m| m).count();
    if real == 0 {
        return Err(Error::validation("no real snippets"));
    }
    let total: f64 = (0..h.len())
        .filter(|&i| mask[i])
        .map(|i| -(y[i] * h[i].max(LOG_EPS).ln() + (1.0 - y[i]) * (1.0 - h[i]).max(LOG_EPS).ln()))
        .sum();
    Ok(total / real as f64)
}

pub fn total_loss(vmr: f64, highlight: f64, lambda_h: f64) -> f64 {
    vmr + lambda_h * highlight
}

/// In-graph [`vmr_loss`] on `[1 × L]` score rows.
pub fn vmr_loss_var(s: &mut Session<'_>, p_start: Var, p_end: Var, starts: &BTreeSet<usize>, ends: &BTreeSet<usize>) -> Result<Var> {
    check_candidates(s.g.shape(p_start).1, starts, ends)?;
    let idx_s: Vec<usize> = starts.iter().copied().collect();
    let idx_e: Vec<usize> = ends.iter().copied().collect();
    let ms = s.g.select_sum(p_start, &idx_s);
    let me = s.g.select_sum(p_end, &idx_e);
    let ls = s.g.log_clamp(ms, LOG_EPS);
    let le = s.g.log_clamp(me, LOG_EPS);
    let sum = s.g.add(ls, le);
    Ok(s.g.scale(sum, -1.0))
}

/// In-graph [`highlight_loss`] on an `[L × 1]` column.
pub fn highlight_loss_var(s: &mut Session<'_>, h: Var, mask: &[bool], starts: &BTreeSet<usize>, ends: &BTreeSet<usize>) -> Result<Var> {
    let len = s.g.shape(h).0;
    check_candidates(len, starts, ends)?;
    let real = mask.iter().filter(|&&m| m).count();
    if real == 0 {
        return Err(Error::validation("no real snippets"));
    }
    let y = highlight_labels(len, starts, ends);
    let keep = |i: usize| if mask[i] { 1.0 } else { 0.0 };
    let pos = Array2::from_shape_fn((len, 1), |(i, _)| y[i] * keep(i));
    let neg = Array2::from_shape_fn((len, 1), |(i, _)| (1.0 - y[i]) * keep(i));
    let log_h = s.g.log_clamp(h, LOG_EPS);
    let one_minus = s.g.rsub_scalar(1.0, h);
    let log_1mh = s.g.log_clamp(one_minus, LOG_EPS);
    let a = s.g.mul_const(log_h, pos);
    let b = s.g.mul_const(log_1mh, neg);
    let both = s.g.add(a, b);
    let total = s.g.sum_all(both);
    Ok(s.g.scale(total, -1.0 / real as f64))
}

/// Full objective of one sample as a graph node.
pub fn sample_loss(
    model: &Model,
    s: &mut Session<'_>,
    sample: &Sample,
    cfg: &TrainConfig,
    alpha: f64,
) -> Result<Var> {
    let a = &sample.annotation;
    let out = model.forward(s, sample, alpha, cfg.branch_losses)?;
    let vmr = match (cfg.branch_losses, out.paragraph) {
        (true, Some(p)) => {
            let lv = vmr_loss_var(s, out.video.p_start, out.video.p_end, &a.candidate_starts, &a.candidate_ends)?;
            let lp = vmr_loss_var(s, p.p_start, p.p_end, &a.candidate_starts, &a.candidate_ends)?;
            s.g.add(lv, lp)
        }
        _ => vmr_loss_var(s, out.p_start, out.p_end, &a.candidate_starts, &a.candidate_ends)?,
    };
    let mut hl = highlight_loss_var(s, out.video.highlight, &sample.video.mask, &a.candidate_starts, &a.candidate_ends)?;
    if let Some(p) = out.paragraph {
        let hp = highlight_loss_var(s, p.highlight, &sample.video.mask, &a.candidate_starts, &a.candidate_ends)?;
        hl = s.g.add(hl, hp);
    }
    let weighted = s.g.scale(hl, cfg.lambda_h);
    Ok(s.g.add(vmr, weighted))
}

/// Deterministic 64-bit mix of a seed with stream indices.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        x ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(x << 6).wrapping_add(x >> 2);
        // splitmix64 finaliser
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

/// Mutable optimisation state; everything needed to resume a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: Params,
    pub adam: AdamState,
    /// Next epoch to run (0-based).
    pub epoch: usize,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
}

impl TrainState {
    pub fn new(params: Params) -> Self {
        let adam = AdamState::new(&params);
        TrainState { params, adam, epoch: 0, best_metric: None, best_epoch: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub train_miou: f64,
    pub train_iou_07: f64,
    pub val_miou: f64,
    pub best: bool,
}

/// Splits sample indices into `(train, validation)` deterministically.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let n_val = ((n as f64) * fraction).floor() as usize;
    if n_val == 0 || n_val >= n {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX])));
    let val = idx.split_off(n - n_val);
    let mut train = idx;
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

/// Runs the per-epoch optimisation for one model.
pub struct Trainer<'a> {
    pub model: &'a Model,
    pub config: TrainConfig,
    pub alpha: f64,
    pub execution: Execution,
    optimizer: Adam,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a Model, config: TrainConfig, alpha: f64) -> Result<Self> {
        config.validate()?;
        Ok(Trainer { model, config, alpha, execution: Execution::default(), optimizer: Adam::default() })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    /// Sum of per-sample losses and gradients over `batch`, accumulated in
    /// batch order whatever the execution mode.
    pub fn batch_gradients(&self, params: &Params, samples: &[Sample], batch: &[usize], epoch: usize) -> Result<(Vec<f64>, Grads)> {
        let per_sample = par::map(self.execution, batch, |&i| -> Result<(f64, Grads)> {
            let rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[epoch as u64, i as u64]));
            let mut s = Session::train(params, rng);
            let loss = sample_loss(self.model, &mut s, &samples[i], &self.config, self.alpha)?;
            let value = s.g.scalar(loss);
            Ok((value, s.backward(loss)))
        });
        let mut losses = Vec::with_capacity(batch.len());
        let mut total = Grads::zeros_like(params);
        for r in per_sample {
            let (l, g) = r?;
            losses.push(l);
            total.accumulate(&g);
        }
        Ok((losses, total))
    }

    /// One pass over `train` (indices into `samples`) in seeded order.
    pub fn run_epoch(&self, state: &mut TrainState, samples: &[Sample], train: &[usize]) -> Result<(f64, f64)> {
        let epoch = state.epoch;
        let lr = self.config.learning_rate_at(epoch);
        let mut order = train.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[epoch as u64, u64::MAX - 1])));
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(self.config.batch_size) {
            let (losses, mut grads) = self.batch_gradients(&state.params, samples, batch, epoch)?;
            let batch_loss = losses.iter().sum::<f64>() / batch.len() as f64;
            if !batch_loss.is_finite() || grads.iter().any(|(_, g)| g.iter().any(|x| !x.is_finite())) {
                let norms = state
                    .params
                    .norms()
                    .into_iter()
                    .map(|(n, v)| format!("{n}={v:.4e}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(Error::NonFinite { epoch, batch_ids: batch.iter().map(|&i| samples[i].id()).collect(), norms });
            }
            grads.scale(1.0 / batch.len() as f64);
            norm_sum += clip_grad_norm(&mut grads, self.config.grad_clip);
            self.optimizer.step(&mut state.params, &grads, &mut state.adam, lr);
            loss_sum += batch_loss;
            batches += 1;
        }
        state.epoch += 1;
        Ok((loss_sum / batches as f64, norm_sum / batches as f64))
    }
}

/// What the per-epoch callback wants next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Trains until `config.epochs` epochs have run (counting any already in
/// `state`) or the callback stops early. After every epoch the model is
/// scored on the training and validation indices; the callback sees the
/// state and the log line, with `log.best` marking a new best validation
/// mIoU.
pub fn fit(
    model: &Model,
    state: &mut TrainState,
    samples: &[Sample],
    config: &TrainConfig,
    alpha: f64,
    execution: Execution,
    mut on_epoch: impl FnMut(&TrainState, &EpochLog) -> Result<Control>,
) -> Result<Vec<EpochLog>> {
    let trainer = Trainer::new(model, *config, alpha)?.with_execution(execution);
    if samples.is_empty() {
        return Err(Error::validation("no training samples"));
    }
    let (train, val) = holdout_split(samples.len(), config.val_fraction, config.seed);
    let val = if val.is_empty() { train.clone() } else { val };
    let mut logs = Vec::new();
    while state.epoch < config.epochs {
        let epoch = state.epoch;
        let lr = config.learning_rate_at(epoch);
        let (loss, grad_norm) = trainer.run_epoch(state, samples, &train)?;
        let train_report = evaluation::evaluate_samples(model, &state.params, samples, &train, alpha, execution)?;
        let val_report = if val == train {
            train_report.clone()
        } else {
            evaluation::evaluate_samples(model, &state.params, samples, &val, alpha, execution)?
        };
        let best = state.best_metric.is_none_or(|b| val_report.miou > b);
        if best {
            state.best_metric = Some(val_report.miou);
            state.best_epoch = Some(epoch);
        }
        let log = EpochLog {
            epoch,
            learning_rate: lr,
            loss,
            grad_norm,
            train_miou: train_report.miou,
            train_iou_07: train_report.iou_at(0.7).unwrap_or(0.0),
            val_miou: val_report.miou,
            best,
        };
        log::info!(
            "epoch {epoch}: loss {loss:.4} lr {lr:.2e} train mIoU {:.2} IoU@0.7 {:.2} val mIoU {:.2}",
            log.train_miou,
            log.train_iou_07,
            log.val_miou
        );
        let control = on_epoch(state, &log)?;
        logs.push(log);
        if control == Control::Stop {
            break;
        }
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::uniform_periods;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    fn annotation(start: usize, end: usize, n: usize) -> (MomentAnnotation, Vec<Period>) {
        let periods = uniform_periods(n, n as f64);
        let a = MomentAnnotation::new(start as f64, (end + 1) as f64, &periods).unwrap();
        assert_eq!((a.start_idx, a.end_idx), (start, end));
        (a, periods)
    }

    /// Spans as integer snippet ranges; IoU = |∩| / |∪| in snippet counts.
    fn enumerate_oracle(start: usize, end: usize, n: usize, threshold: f64) -> (BTreeSet<usize>, BTreeSet<usize>) {
        let mut s = BTreeSet::new();
        let mut e = BTreeSet::new();
        for i in 0..n {
            for j in i..n {
                let inter = (j.min(end) + 1).saturating_sub(i.max(start));
                let union = j.max(end) + 1 - i.min(start);
                if inter as f64 / union as f64 >= threshold {
                    s.insert(i);
                    e.insert(j);
                }
            }
        }
        (s, e)
    }

    #[test]
    fn exact_threshold_keeps_ground_truth_only() {
        let (a, p) = annotation(2, 5, 8);
        assert_eq!(expand_labels(&a, &p, 1.0), (set(&[2]), set(&[5])));
    }

    #[test]
    fn expansion_matches_span_enumeration() {
        let (a, p) = annotation(2, 5, 8);
        let got = expand_labels(&a, &p, 0.7);
        assert_eq!(got, enumerate_oracle(2, 5, 8, 0.7));
        // Hand-checked: spans of length 4-5 around [2, 5] reach 0.7 or more.
        assert_eq!(got, (set(&[1, 2, 3]), set(&[4, 5, 6])));

        let (a, p) = annotation(0, 7, 8);
        let got = expand_labels(&a, &p, 0.7);
        assert_eq!(got, enumerate_oracle(0, 7, 8, 0.7));
        assert_eq!(got, (set(&[0, 1, 2]), set(&[5, 6, 7])));
    }

    #[test]
    fn vmr_loss_examples() {
        let u = vec![0.25; 4];
        assert_eq!(vmr_loss(&u, &u, &set(&[0, 1, 2, 3]), &set(&[0, 1, 2, 3])).unwrap(), 0.0);
        let l = vmr_loss(&u, &u, &set(&[1]), &set(&[2])).unwrap();
        assert!((l - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!((l - 2.7726).abs() < 1e-4);
        let peaked = vec![0.0, 1.0, 0.0, 0.0];
        assert_eq!(vmr_loss(&peaked, &peaked, &set(&[1]), &set(&[1])).unwrap(), 0.0);
        assert!(vmr_loss(&u, &u, &set(&[]), &set(&[1])).is_err());
        let zero = vec![0.0; 4];
        assert!((vmr_loss(&zero, &zero, &set(&[0]), &set(&[0])).unwrap() - 2.0 * -(1e-12f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn highlight_loss_examples() {
        let mask = [true, true, true, false];
        let half = [0.5, 0.5, 0.5, 0.0];
        let l = highlight_loss(&half, &mask, &set(&[1]), &set(&[1])).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let exact = [0.0, 1.0, 0.0, 0.0];
        assert!(highlight_loss(&exact, &mask, &set(&[1]), &set(&[1])).unwrap() < 1e-11);
        assert_eq!(highlight_labels(4, &set(&[0, 1]), &set(&[3])), vec![1.0; 4]);
        assert_eq!(highlight_labels(5, &set(&[1, 2]), &set(&[2, 3])), vec![0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.3, 0.7, 0.0), 1.3);
        assert_eq!(total_loss(1.0, 0.2, 5.0), 2.0);
        assert_eq!(total_loss(0.0, 0.0, 5.0), 0.0);
    }

    #[test]
    fn graph_losses_match_plain_versions() {
        let params = Params::new();
        let mut s = Session::eval(&params);
        let ps = vec![0.1, 0.6, 0.2, 0.1];
        let pe = vec![0.05, 0.15, 0.5, 0.3];
        let h = vec![0.2, 0.7, 0.9, 0.0];
        let mask = [true, true, true, false];
        let (cs, ce) = (set(&[1, 2]), set(&[2]));
        let ps_v = s.input(Array2::from_shape_vec((1, 4), ps.clone()).unwrap());
        let pe_v = s.input(Array2::from_shape_vec((1, 4), pe.clone()).unwrap());
        let h_v = s.input(Array2::from_shape_vec((4, 1), h.clone()).unwrap());
        let lv = vmr_loss_var(&mut s, ps_v, pe_v, &cs, &ce).unwrap();
        let lh = highlight_loss_var(&mut s, h_v, &mask, &cs, &ce).unwrap();
        assert!((s.g.scalar(lv) - vmr_loss(&ps, &pe, &cs, &ce).unwrap()).abs() < 1e-14);
        assert!((s.g.scalar(lh) - highlight_loss(&h, &mask, &cs, &ce).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn highlight_gradient_matches_finite_differences() {
        let mut params = Params::new();
        let id = params.insert("h", Array2::from_shape_vec((5, 1), vec![0.2, 0.7, 0.4, 0.9, 0.3]).unwrap());
        let mask = [true, true, true, true, false];
        let (cs, ce) = (set(&[1]), set(&[2, 3]));
        let mut s = Session::eval(&params);
        let h = s.param(id);
        let l = highlight_loss_var(&mut s, h, &mask, &cs, &ce).unwrap();
        let grads = s.backward(l);
        let g = grads.get(id).unwrap();
        let step = 1e-6;
        for i in 0..5 {
            let mut hv: Vec<f64> = params.get(id).iter().copied().collect();
            hv[i] += step;
            let up = highlight_loss(&hv, &mask, &cs, &ce).unwrap();
            hv[i] -= 2.0 * step;
            let down = highlight_loss(&hv, &mask, &cs, &ce).unwrap();
            assert!((g[[i, 0]] - (up - down) / (2.0 * step)).abs() <= 1e-4);
        }
    }

    #[test]
    fn schedule_decays_to_zero() {
        let cfg = TrainConfig { epochs: 5, learning_rate: 1.0, ..Default::default() };
        let lrs: Vec<f64> = (0..5).map(|e| cfg.learning_rate_at(e)).collect();
        assert_eq!(lrs, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn holdout_is_deterministic_and_disjoint() {
        let (t, v) = holdout_split(20, 0.25, 9);
        assert_eq!((t.len(), v.len()), (15, 5));
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(holdout_split(20, 0.25, 9), (t, v));
        assert_eq!(holdout_split(20, 0.0, 9).1.len(), 0);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0, 0]), derive_seed(1, &[0, 1]));
        assert_ne!(derive_seed(1, &[0]), derive_seed(2, &[0]));
        assert_eq!(derive_seed(5, &[3, 4]), derive_seed(5, &[3, 4]));
    }
}
