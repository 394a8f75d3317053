//! Projected-gradient unlearning.
//!
//! The forget set is pushed away from its labels with a reverse
//! cross-entropy plus an entropy term, while every layer's weight gradient
//! is stripped of its component inside the retain set's core gradient
//! space. Biases are never touched.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::linalg::Matrix;
use crate::nn::{log_softmax, lr_at, LayerMask, NetworkModel};
use crate::subspace::{accumulate_gram, eigenbasis, select_cgs, subtract_gram, Gamma, GramCache, Projector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlearnMode {
    #[default]
    DataRemoval,
    ClassRemoval,
    Depoison,
}

/// Sign convention of the entropy term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySign {
    /// `−log(1 − p_y + ε) − λ·H(p)`: λ > 0 raises output entropy.
    #[default]
    Prose,
    /// `−log(1 − p_y + ε) + λ·H(p)`, the formula read literally.
    AsPrinted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlearnConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub gamma: Gamma,
    pub lr_start: f64,
    pub lr_end: f64,
    pub max_epochs: usize,
    pub mode: UnlearnMode,
    pub layer_mask: LayerMask,
    /// Defaults to `min(|D_f|, 250)`.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub entropy_sign: EntropySign,
    /// When false every run lasts exactly `max_epochs`.
    pub early_stop: bool,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            epsilon: 1e-2,
            gamma: Gamma::Uniform(0.95),
            lr_start: 0.05,
            lr_end: 0.01,
            max_epochs: 100,
            mode: UnlearnMode::DataRemoval,
            layer_mask: LayerMask::all(),
            batch_size: None,
            seed: 0,
            entropy_sign: EntropySign::Prose,
            early_stop: true,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::validation("max_epochs must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if self.mode == UnlearnMode::Depoison && !(self.lambda < 0.0) {
            return Err(Error::validation("depoisoning needs lambda < 0"));
        }
        if !(self.lr_start >= 0.0 && self.lr_end >= 0.0) {
            return Err(Error::validation("learning rates must be non-negative"));
        }
        Gamma::for_layer(&self.gamma, 0).map(|_| ())
    }

    fn batch_size_for(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(n.min(250)).max(1)
    }

    fn lr(&self, epoch: usize) -> Result<f64> {
        if self.lr_start == 0.0 || self.lr_end == 0.0 {
            return Ok(0.0);
        }
        lr_at(epoch.min(self.max_epochs), self.max_epochs, self.lr_start, self.lr_end)
    }
}

/// Summed unlearning loss over a batch and its gradient with respect to
/// the logits.
///
/// Per sample: `−log(1 − p_y + ε) ∓ λ·H(p)` with `p = softmax(z)` and
/// `H(p) = −Σ p_c log p_c` (sign per [`EntropySign`]).
pub fn unlearn_loss(
    logits: &Matrix,
    labels: &[usize],
    lambda: f64,
    epsilon: f64,
    sign: EntropySign,
) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::validation("one label per logit row required"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::validation("epsilon must be positive"));
    }
    if !logits.is_finite() {
        return Err(Error::numerical("non-finite logits in unlearning loss"));
    }
    let classes = logits.cols();
    // coefficient of H(p) in the loss
    let h_coef = match sign {
        EntropySign::Prose => -lambda,
        EntropySign::AsPrinted => lambda,
    };
    let logp = log_softmax(logits);
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::validation(format!("label {y} outside [0, {classes})")));
        }
        let lp = logp.row(r);
        let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        let h: f64 = -p.iter().zip(lp).map(|(pc, lc)| pc * lc).sum::<f64>();
        let denom = 1.0 - p[y] + epsilon;
        total += -denom.ln() + h_coef * h;
        let g = grad.row_mut(r);
        for j in 0..classes {
            let delta = if j == y { 1.0 } else { 0.0 };
            // d/dz_j of −log(1 − p_y + ε) = p_y(δ_jy − p_j) / (1 − p_y + ε)
            let reverse_ce = p[y] * (delta - p[j]) / denom;
            // dH/dz_j = −p_j (log p_j + H)
            let entropy = -p[j] * (lp[j] + h);
            g[j] = reverse_ce + h_coef * entropy;
        }
    }
    if !total.is_finite() {
        return Err(Error::numerical("unlearning loss is not finite"));
    }
    Ok((total, grad))
}

/// One epoch's readout during unlearning. Accuracies are fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub acc_forget: f64,
    pub acc_val: f64,
}

/// Model and subspace after unlearning.
#[derive(Debug, Clone)]
pub struct UnlearnState {
    pub model: NetworkModel,
    pub retain_gram: GramCache,
    pub projector: Projector,
    /// History of the most recent round.
    pub history: Vec<EpochRecord>,
    /// Epoch count at which the early-stop rule fired, if it did.
    pub stopped_at: Option<usize>,
    /// Every id forgotten so far, across rounds.
    pub forgotten: BTreeSet<u64>,
    pub round: usize,
}

/// Whether unlearning should halt after the latest recorded epoch.
pub fn early_stop_check(history: &[EpochRecord], mode: UnlearnMode, classes: usize, max_epochs: usize) -> bool {
    let Some(last) = history.last() else {
        return false;
    };
    if history.len() >= max_epochs {
        return true;
    }
    criterion_met(last, mode, classes)
}

fn criterion_met(rec: &EpochRecord, mode: UnlearnMode, classes: usize) -> bool {
    match mode {
        UnlearnMode::DataRemoval => rec.acc_forget <= rec.acc_val,
        UnlearnMode::ClassRemoval | UnlearnMode::Depoison => rec.acc_forget <= 1.0 / classes as f64,
    }
}

/// One pass over the forget set with projected gradient steps.
pub fn pgu_epoch(
    model: &mut NetworkModel,
    projector: &Projector,
    forget: &Dataset,
    config: &UnlearnConfig,
    epoch: usize,
) -> Result<f64> {
    if forget.is_empty() {
        return Err(Error::validation("forget set is empty"));
    }
    if projector.layers.len() != model.num_projectable() {
        return Err(Error::validation("projector does not match the model's layers"));
    }
    let lr = config.lr(epoch)?;
    let batch_size = config.batch_size_for(forget.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch as u64);
    let mut order: Vec<usize> = (0..forget.len()).collect();
    order.shuffle(&mut rng);
    let head = model.num_projectable() - 1;
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let batch = forget.features().select_rows(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| forget.labels()[i]).collect();
        let trace = model.forward(&batch, true)?;
        let (loss, grad_logits) =
            unlearn_loss(&trace.logits, &labels, config.lambda, config.epsilon, config.entropy_sign)?;
        total += loss;
        let mut grads = model.backward(&trace, &grad_logits)?;
        for (i, (g, p)) in grads.layers.iter_mut().zip(&projector.layers).enumerate() {
            // In depoison mode the classifier head stays free so the
            // forget labels can be reassigned.
            if config.mode == UnlearnMode::Depoison && i == head {
                continue;
            }
            if config.layer_mask.contains(i) {
                g.weight = p.project(&g.weight)?;
            }
        }
        model.sgd_step(&grads, lr, &config.layer_mask, false)?;
    }
    Ok(total)
}

fn excluded_classes(forget: &Dataset, mode: UnlearnMode) -> BTreeSet<usize> {
    match mode {
        UnlearnMode::ClassRemoval => forget.labels().iter().copied().collect(),
        _ => BTreeSet::new(),
    }
}

/// Builds the projector from a retain Gram and runs epochs until the
/// early-stop rule fires.
fn run_epochs(
    mut model: NetworkModel,
    retain_gram: GramCache,
    forget: &Dataset,
    val: &Dataset,
    config: &UnlearnConfig,
    forgotten: BTreeSet<u64>,
    round: usize,
) -> Result<UnlearnState> {
    let projector = select_cgs(&eigenbasis(&retain_gram)?, &config.gamma)?;
    let classes = model.num_classes();
    let val_eval = val.without_classes(&excluded_classes(forget, config.mode));
    let mut history = Vec::new();
    let mut stopped_at = None;
    for epoch in 0..config.max_epochs {
        let loss = pgu_epoch(&mut model, &projector, forget, config, epoch)?;
        let acc_val = if val_eval.is_empty() { 0.0 } else { accuracy(&model, &val_eval)? };
        let rec = EpochRecord { epoch, loss, acc_forget: accuracy(&model, forget)?, acc_val };
        history.push(rec);
        if config.early_stop && criterion_met(&rec, config.mode, classes) {
            stopped_at = Some(epoch + 1);
            break;
        }
    }
    Ok(UnlearnState { model, retain_gram, projector, history, stopped_at, forgotten, round })
}

/// Full pipeline for one deletion request: forget Gram under the original
/// weights, Gram subtraction, subspace selection, projected epochs.
/// Retain samples are only seen through `full_gram`.
pub fn pgu_run(
    original: &NetworkModel,
    forget: &Dataset,
    full_gram: &GramCache,
    val: &Dataset,
    config: &UnlearnConfig,
) -> Result<UnlearnState> {
    config.validate()?;
    if forget.is_empty() {
        return Err(Error::validation("nothing to unlearn: forget set is empty"));
    }
    if config.mode == UnlearnMode::Depoison {
        return Err(Error::validation("use depoison_run for depoison mode"));
    }
    full_gram.check_model(original)?;
    let forget_gram = accumulate_gram(original, forget, config.batch_size_for(forget.len()))?;
    let retain_gram = subtract_gram(full_gram, &forget_gram)?;
    let forgotten = forget.ids().iter().copied().collect();
    run_epochs(original.clone(), retain_gram, forget, val, config, forgotten, 1)
}

/// Handles the next deletion request on top of an earlier unlearning
/// state. The new forget Gram is computed with the current weights and
/// subtracted from the carried retain Gram.
pub fn incremental_unlearn(
    state: &UnlearnState,
    next_forget: &Dataset,
    val: &Dataset,
    config: &UnlearnConfig,
) -> Result<UnlearnState> {
    config.validate()?;
    if next_forget.is_empty() {
        return Err(Error::validation("nothing to unlearn: forget batch is empty"));
    }
    if let Some(id) = next_forget.ids().iter().find(|id| state.forgotten.contains(id)) {
        return Err(Error::validation(format!("sample {id} was already forgotten")));
    }
    let mut carried = state.retain_gram.clone();
    carried.adopt(&state.model);
    let forget_gram = accumulate_gram(&state.model, next_forget, config.batch_size_for(next_forget.len()))?;
    let retain_gram = subtract_gram(&carried, &forget_gram)?;
    let mut forgotten = state.forgotten.clone();
    forgotten.extend(next_forget.ids().iter().copied());
    run_epochs(state.model.clone(), retain_gram, next_forget, val, config, forgotten, state.round + 1)
}

/// Depoisoning: same pipeline with `λ < 0` so the entropy term sharpens
/// predictions away from the poisoned labels, and the classifier head's
/// gradient left unprojected.
pub fn depoison_run(
    model: &NetworkModel,
    poisoned_forget: &Dataset,
    full_gram: &GramCache,
    val: &Dataset,
    config: &UnlearnConfig,
) -> Result<UnlearnState> {
    let config = UnlearnConfig { mode: UnlearnMode::Depoison, ..config.clone() };
    config.validate()?;
    if poisoned_forget.is_empty() {
        return Err(Error::validation("nothing to unlearn: forget set is empty"));
    }
    full_gram.check_model(model)?;
    let forget_gram = accumulate_gram(model, poisoned_forget, config.batch_size_for(poisoned_forget.len()))?;
    let retain_gram = subtract_gram(full_gram, &forget_gram)?;
    let forgotten = poisoned_forget.ids().iter().copied().collect();
    run_epochs(model.clone(), retain_gram, poisoned_forget, val, &config, forgotten, 1)
}

/// Deletes the output rows of `classes` from the final dense layer.
/// Returns the mapping from old class index to new (None when removed).
pub fn remove_class_rows(model: &NetworkModel, classes: &BTreeSet<usize>) -> Result<(NetworkModel, Vec<Option<usize>>)> {
    let mut out = model.clone();
    out.drop_output_rows(classes)?;
    let mut next = 0;
    let mapping = (0..model.num_classes())
        .map(|c| {
            if classes.contains(&c) {
                None
            } else {
                next += 1;
                Some(next - 1)
            }
        })
        .collect();
    Ok((out, mapping))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_closed_forms() {
        let z = Matrix::zeros(1, 2);
        let (l, _) = unlearn_loss(&z, &[0], 0.0, 0.01, EntropySign::Prose).unwrap();
        assert!((l - (-(0.51f64).ln())).abs() < 1e-12);
        assert!((l - 0.6733).abs() < 1e-4);
        for y in 0..2 {
            let (l, _) = unlearn_loss(&z, &[y], 0.2, 0.01, EntropySign::Prose).unwrap();
            assert!((l - (-(0.51f64).ln() - 0.2 * 2f64.ln())).abs() < 1e-12);
            assert!((l - 0.5347).abs() < 1e-4);
        }
        let (l, _) = unlearn_loss(&z, &[0], 0.2, 0.01, EntropySign::AsPrinted).unwrap();
        assert!((l - (-(0.51f64).ln() + 0.2 * 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_bad_inputs() {
        let z = Matrix::zeros(1, 2);
        assert!(unlearn_loss(&z, &[2], 0.2, 0.01, EntropySign::Prose).is_err());
        assert!(unlearn_loss(&z, &[0], 0.2, 0.0, EntropySign::Prose).is_err());
    }

    #[test]
    fn early_stop_rules() {
        let rec = |f, v| EpochRecord { epoch: 0, loss: 0.0, acc_forget: f, acc_val: v };
        assert!(!early_stop_check(&[rec(0.99, 0.90)], UnlearnMode::DataRemoval, 10, 100));
        assert!(early_stop_check(&[rec(0.89, 0.90)], UnlearnMode::DataRemoval, 10, 100));
        assert!(early_stop_check(&[rec(0.08, 0.90)], UnlearnMode::ClassRemoval, 10, 100));
        assert!(!early_stop_check(&[rec(0.5, 0.90)], UnlearnMode::Depoison, 10, 100));
        assert!(early_stop_check(&[rec(0.99, 0.90)], UnlearnMode::DataRemoval, 10, 1));
        assert!(!early_stop_check(&[], UnlearnMode::DataRemoval, 10, 1));
    }

    #[test]
    fn config_validation() {
        assert!(UnlearnConfig::default().validate().is_ok());
        let bad = UnlearnConfig { mode: UnlearnMode::Depoison, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = UnlearnConfig { epsilon: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = UnlearnConfig { max_epochs: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
