//! Readout functions: error rates, output entropies, ROC/AUC and a
//! shadow-model membership inference attack.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{argmax, init_model, softmax, train_ce, LayerSpec, NetworkModel, TrainConfig};

/// Fraction of samples whose argmax prediction matches the label.
pub fn accuracy(model: &NetworkModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::validation("accuracy of an empty dataset"));
    }
    let preds = model.predict(data.features())?;
    let right = preds.iter().zip(data.labels()).filter(|(p, y)| p == y).count();
    Ok(right as f64 / data.len() as f64)
}

/// Misclassification percentage, after dropping samples whose label is in
/// `exclude`.
pub fn error_rate(model: &NetworkModel, data: &Dataset, exclude: Option<&BTreeSet<usize>>) -> Result<f64> {
    let filtered;
    let data = match exclude {
        Some(classes) if !classes.is_empty() => {
            filtered = data.without_classes(classes);
            &filtered
        }
        _ => data,
    };
    if data.is_empty() {
        return Err(Error::validation("no samples left to evaluate"));
    }
    let preds = model.predict(data.features())?;
    let wrong = preds.iter().zip(data.labels()).filter(|(p, y)| p != y).count();
    Ok(100.0 * wrong as f64 / data.len() as f64)
}

/// Natural-log entropy of each row of a probability matrix.
pub fn row_entropies(probs: &Matrix) -> Vec<f64> {
    (0..probs.rows())
        .map(|r| -probs.row(r).iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
        .map(|h: f64| h.max(0.0))
        .collect()
}

/// `H(p) = −Σ p log p` of the model's softmax output per sample.
pub fn output_entropy(model: &NetworkModel, data: &Dataset) -> Result<Vec<f64>> {
    Ok(row_entropies(&softmax(&model.logits(data.features())?)))
}

/// Readouts for one model against the standard splits. Percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutReport {
    pub err_retain: Option<f64>,
    pub err_forget: Option<f64>,
    pub err_test: Option<f64>,
    /// Test error excluding forgotten classes (class removal only).
    pub err_retain_test: Option<f64>,
    pub entropy_forget: Vec<f64>,
    pub wall_time_s: f64,
    pub config_echo: serde_json::Value,
}

/// One attack example: softmax outputs followed by the one-hot label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSample {
    pub features: Vec<f64>,
    /// Seen in training (from a model trained on the full data).
    pub member: bool,
}

/// Attack features of `model` on `data`. Classes in `drop` are removed
/// from both halves, with the softmax taken over the remaining classes.
pub fn attack_features(model: &NetworkModel, data: &Dataset, drop: &BTreeSet<usize>, member: bool) -> Result<Vec<AttackSample>> {
    let logits = model.logits(data.features())?;
    let classes = model.num_classes();
    let keep: Vec<usize> = (0..classes).filter(|c| !drop.contains(c)).collect();
    let kept = Matrix::from_fn(logits.rows(), keep.len(), |r, c| logits.get(r, keep[c]));
    let probs = softmax(&kept);
    Ok((0..data.len())
        .map(|i| {
            let mut features = probs.row(i).to_vec();
            features.extend(keep.iter().map(|&c| if data.labels()[i] == c { 1.0 } else { 0.0 }));
            AttackSample { features, member }
        })
        .collect())
}

/// Threshold sweep and area under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (fpr, tpr) from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC by sweeping a threshold down through the distinct scores. Equal
/// scores form a single step, so ties contribute half credit.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::validation("one label per score required"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numerical("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::validation("ROC needs both positive and negative labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area in units of (1/neg)·(1/pos), kept integral
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = area2 as f64 / (2 * u128::from(pos) * u128::from(neg)) as f64;
    Ok(RocCurve { points, auc })
}

/// Binary F1 of `score >= threshold` predictions.
pub fn f1_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Threshold maximising F1, and that F1.
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates
        .into_iter()
        .map(|t| (t, f1_at(scores, labels, t)))
        .fold((f64::NEG_INFINITY, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// Logistic regression over attack features expanded with label
/// interactions: `[p, onehot, p ⊗ onehot]`, standardised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Decision threshold chosen for validation F1.
    pub threshold: f64,
    pub l2: f64,
    pub epochs: usize,
    pub val_f1: f64,
}

fn expand(x: &[f64]) -> Vec<f64> {
    let c = x.len() / 2;
    let (p, onehot) = x.split_at(c);
    let mut out = x.to_vec();
    for &h in onehot {
        out.extend(p.iter().map(|v| v * h));
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl AttackScorer {
    fn standardized(&self, x: &[f64]) -> Vec<f64> {
        expand(x).iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    /// Membership probability.
    pub fn score(&self, features: &[f64]) -> f64 {
        let z = self.standardized(features);
        sigmoid(self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn score_all(&self, samples: &[AttackSample]) -> Vec<f64> {
        samples.iter().map(|s| self.score(&s.features)).collect()
    }
}

const ATTACK_L2_GRID: [f64; 4] = [0.0, 1e-3, 1e-2, 1e-1];
const ATTACK_EPOCH_GRID: [usize; 3] = [100, 400, 1500];
const ATTACK_STEP: f64 = 0.5;

/// Fits the attacker by full-batch gradient descent on the mean logistic
/// loss; L2 strength and epoch count are picked by validation F1.
pub fn mia_train_attacker(train: &[AttackSample], val: &[AttackSample]) -> Result<AttackScorer> {
    let labels: Vec<bool> = train.iter().map(|s| s.member).collect();
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::validation("attacker training data must contain both classes"));
    }
    if val.is_empty() {
        return Err(Error::validation("attacker validation set is empty"));
    }
    let expanded: Vec<Vec<f64>> = train.iter().map(|s| expand(&s.features)).collect();
    let dim = expanded[0].len();
    if expanded.iter().any(|x| x.len() != dim) {
        return Err(Error::validation("attack samples differ in length"));
    }
    let n = expanded.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| expanded.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..dim)
        .map(|j| {
            let var = expanded.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 { var.sqrt() } else { 1.0 }
        })
        .collect();
    let z: Vec<Vec<f64>> =
        expanded.iter().map(|x| x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect()).collect();
    let val_labels: Vec<bool> = val.iter().map(|s| s.member).collect();

    let mut best: Option<AttackScorer> = None;
    for &l2 in &ATTACK_L2_GRID {
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut done = 0;
        for &epochs in &ATTACK_EPOCH_GRID {
            // continue descending from the previous grid point
            for _ in done..epochs {
                let mut gw = vec![0.0; dim];
                let mut gb = 0.0;
                for (x, &y) in z.iter().zip(&labels) {
                    let p = sigmoid(b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>());
                    let r = p - if y { 1.0 } else { 0.0 };
                    gb += r;
                    for (g, xv) in gw.iter_mut().zip(x) {
                        *g += r * xv;
                    }
                }
                for (wj, g) in w.iter_mut().zip(&gw) {
                    *wj -= ATTACK_STEP * (g / n + l2 * *wj);
                }
                b -= ATTACK_STEP * gb / n;
            }
            done = epochs;
            let mut cand = AttackScorer {
                weights: w.clone(),
                bias: b,
                mean: mean.clone(),
                scale: scale.clone(),
                threshold: 0.5,
                l2,
                epochs,
                val_f1: 0.0,
            };
            let (t, f1) = best_f1_threshold(&cand.score_all(val), &val_labels);
            cand.threshold = t;
            cand.val_f1 = f1;
            if best.as_ref().is_none_or(|b| f1 > b.val_f1) {
                best = Some(cand);
            }
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Shadow fleet sizes; positive and negative fleets share the grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiaGroups {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for MiaGroups {
    fn default() -> Self {
        MiaGroups { train: 8, val: 1, test: 1 }
    }
}

impl MiaGroups {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaConfig {
    pub k_pos: usize,
    pub k_neg: usize,
    #[serde(default)]
    pub groups: MiaGroups,
    pub seed: u64,
    /// Forgotten classes to strip from the attack features.
    #[serde(default)]
    pub drop_classes: BTreeSet<usize>,
}

impl MiaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_pos != self.k_neg || self.groups.total() != self.k_pos {
            return Err(Error::validation(format!(
                "group sizes {:?} must sum to k_pos = k_neg (got {} and {})",
                self.groups, self.k_pos, self.k_neg
            )));
        }
        if self.groups.train == 0 || self.groups.val == 0 || self.groups.test == 0 {
            return Err(Error::validation("every model group needs at least one model"));
        }
        Ok(())
    }

    pub fn positive_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(2 * i as u64)
    }

    pub fn negative_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(2 * i as u64 + 1)
    }
}

/// Attack datasets plus the held-out test models.
#[derive(Debug, Clone)]
pub struct MiaBuild {
    pub train: Vec<AttackSample>,
    pub val: Vec<AttackSample>,
    pub test: Vec<AttackSample>,
    /// Trained on the full data; the targets for unlearning.
    pub positive_test_models: Vec<NetworkModel>,
    pub negative_test_models: Vec<NetworkModel>,
}

/// Trains `jobs` models on a bounded pool of scoped threads. Results are
/// returned in job order regardless of scheduling.
fn train_fleet(
    jobs: Vec<(u64, &Dataset)>,
    specs: &[LayerSpec],
    train: &TrainConfig,
) -> Result<Vec<NetworkModel>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let fit = |(seed, data): (u64, &Dataset)| -> Result<NetworkModel> {
        let mut model = init_model(data.shape(), specs, seed)?;
        train_ce(&mut model, data, &TrainConfig { seed, ..*train })?;
        Ok(model)
    };
    if workers <= 1 {
        return jobs.into_iter().map(fit).collect();
    }
    let mut slots: Vec<Option<Result<NetworkModel>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = jobs.len().div_ceil(workers);
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .enumerate()
            .map(|(w, part)| {
                let part = part.to_vec();
                let fit = &fit;
                (w * chunk, scope.spawn(move || part.into_iter().map(fit).collect::<Vec<_>>()))
            })
            .collect();
        for (start, h) in handles {
            for (j, r) in h.join().expect("training worker panicked").into_iter().enumerate() {
                slots[start + j] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every job ran")).collect()
}

/// Trains the positive (full data) and negative (retain only) fleets and
/// extracts labelled attack samples on the forget set, split by model group.
pub fn mia_build(
    train_data: &Dataset,
    forget_ids: &[u64],
    specs: &[LayerSpec],
    train: &TrainConfig,
    cfg: &MiaConfig,
) -> Result<MiaBuild> {
    cfg.validate()?;
    let forget = train_data.select_ids(forget_ids)?;
    if forget.is_empty() {
        return Err(Error::validation("membership inference needs a non-empty forget set"));
    }
    let retain = train_data.without_ids(forget_ids);
    let mut jobs: Vec<(u64, &Dataset)> = (0..cfg.k_pos).map(|i| (cfg.positive_seed(i), train_data)).collect();
    jobs.extend((0..cfg.k_neg).map(|i| (cfg.negative_seed(i), &retain)));
    let mut models = train_fleet(jobs, specs, train)?;
    let negatives = models.split_off(cfg.k_pos);
    let positives = models;

    let g = cfg.groups;
    let extract = |range: std::ops::Range<usize>| -> Result<Vec<AttackSample>> {
        let mut out = Vec::new();
        for i in range {
            out.extend(attack_features(&positives[i], &forget, &cfg.drop_classes, true)?);
            out.extend(attack_features(&negatives[i], &forget, &cfg.drop_classes, false)?);
        }
        Ok(out)
    };
    let test_range = g.train + g.val..g.total();
    Ok(MiaBuild {
        train: extract(0..g.train)?,
        val: extract(g.train..g.train + g.val)?,
        test: extract(test_range.clone())?,
        positive_test_models: positives[test_range.clone()].to_vec(),
        negative_test_models: negatives[test_range].to_vec(),
    })
}

/// Scores and membership labels behind one ROC curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCurve {
    pub curve: RocCurve,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaEvaluation {
    /// Positive test models against negative test models.
    pub control: ScoredCurve,
    /// Unlearned models against negative test models.
    pub target: ScoredCurve,
}

fn scored_curve(
    scorer: &AttackScorer,
    members: &[NetworkModel],
    others: &[NetworkModel],
    forget: &Dataset,
    drop: &BTreeSet<usize>,
) -> Result<ScoredCurve> {
    let mut samples = Vec::new();
    for m in members {
        samples.extend(attack_features(m, forget, drop, true)?);
    }
    for m in others {
        samples.extend(attack_features(m, forget, drop, false)?);
    }
    let scores = scorer.score_all(&samples);
    let labels: Vec<bool> = samples.iter().map(|s| s.member).collect();
    Ok(ScoredCurve { curve: roc_auc(&scores, &labels)?, scores, labels })
}

/// Control curve (positive vs negative test models) and target curve
/// (unlearned vs negative test models), both balanced by construction.
pub fn mia_evaluate(
    scorer: &AttackScorer,
    positive_test: &[NetworkModel],
    unlearned: &[NetworkModel],
    negative_test: &[NetworkModel],
    forget: &Dataset,
    drop: &BTreeSet<usize>,
) -> Result<MiaEvaluation> {
    if positive_test.len() != negative_test.len() || unlearned.len() != negative_test.len() {
        return Err(Error::validation("model groups must have equal sizes"));
    }
    let neg: BTreeSet<[u8; 32]> = negative_test.iter().map(NetworkModel::fingerprint).collect();
    if positive_test.iter().chain(unlearned).any(|m| neg.contains(&m.fingerprint())) {
        return Err(Error::validation("a model appears in both the member and non-member groups"));
    }
    Ok(MiaEvaluation {
        control: scored_curve(scorer, positive_test, negative_test, forget, drop)?,
        target: scored_curve(scorer, unlearned, negative_test, forget, drop)?,
    })
}

/// Index of the largest softmax output per row (lowest index on ties).
pub fn predictions(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows()).map(|r| argmax(logits.row(r))).collect()
}
