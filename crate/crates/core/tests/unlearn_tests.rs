//! Unlearning loss, projected epochs and the run drivers.

#![allow(clippy::needless_range_loop)]

mod common;

use std::collections::BTreeSet;

use common::{random_matrix, rng, small_blobs};
use pgu_core::data::{Dataset, InputShape};
use pgu_core::nn::{init_model, mlp_specs, train_ce, NetworkModel, TrainConfig};
use pgu_core::subspace::{accumulate_gram, eigenbasis, select_cgs, subtract_gram, Gamma, Projector};
use pgu_core::unlearn::{
    depoison_run, incremental_unlearn, pgu_epoch, pgu_run, remove_class_rows, unlearn_loss, EntropySign, UnlearnConfig,
};
use pgu_core::{Error, Matrix};

/// Per-sample loss written out directly from its definition.
fn loss_oracle(z: &[f64], y: usize, lambda: f64, eps: f64, sign: EntropySign) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|v| v / s).collect();
    let h: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
    let s = match sign {
        EntropySign::Prose => -1.0,
        EntropySign::AsPrinted => 1.0,
    };
    -(1.0 - p[y] + eps).ln() + s * lambda * h
}

#[test]
fn loss_and_gradient_match_oracles() {
    for &classes in &[2usize, 10] {
        for &lambda in &[-0.5, 0.0, 0.2, 1.0] {
            for &sign in &[EntropySign::Prose, EntropySign::AsPrinted] {
                for seed in 0..20u64 {
                    let mut r = rng(seed * 31 + classes as u64);
                    let z = random_matrix(3, classes, &mut r).scale(2.0);
                    let labels: Vec<usize> = (0..3).map(|i| (i + seed as usize) % classes).collect();
                    let (loss, grad) = unlearn_loss(&z, &labels, lambda, 0.01, sign).unwrap();
                    let want: f64 = (0..3).map(|i| loss_oracle(z.row(i), labels[i], lambda, 0.01, sign)).sum();
                    assert!((loss - want).abs() < 1e-10);
                    let h = 1e-6;
                    for i in 0..3 {
                        for j in 0..classes {
                            let mut zp = z.row(i).to_vec();
                            zp[j] += h;
                            let mut zm = z.row(i).to_vec();
                            zm[j] -= h;
                            let fd = (loss_oracle(&zp, labels[i], lambda, 0.01, sign)
                                - loss_oracle(&zm, labels[i], lambda, 0.01, sign))
                                / (2.0 * h);
                            assert!(
                                (fd - grad.get(i, j)).abs() < 1e-6 * (1.0 + fd.abs()),
                                "C={classes} λ={lambda} seed {seed}: {fd} vs {}",
                                grad.get(i, j)
                            );
                        }
                    }
                }
            }
        }
    }
}

struct Fixture {
    model: NetworkModel,
    forget: Dataset,
    val: Dataset,
    retain: Dataset,
    full: pgu_core::subspace::GramCache,
}

fn fixture(seed: u64) -> Fixture {
    let splits = small_blobs(seed);
    let mut model = init_model(InputShape::Flat(4), &mlp_specs(4, 12, 3), seed).unwrap();
    train_ce(&mut model, &splits.train, &TrainConfig { epochs: 30, batch_size: 8, lr_start: 0.05, lr_end: 0.01, seed, shuffle: true })
        .unwrap();
    let ids: Vec<u64> = splits.train.ids().iter().copied().step_by(8).collect();
    let forget = splits.train.select_ids(&ids).unwrap();
    let retain = splits.train.without_ids(&ids);
    let full = accumulate_gram(&model, &splits.train, 64).unwrap();
    Fixture { model, forget, val: splits.val, retain, full }
}

fn retain_projector(f: &Fixture, gamma: f64) -> Projector {
    let fg = accumulate_gram(&f.model, &f.forget, 64).unwrap();
    let rg = subtract_gram(&f.full, &fg).unwrap();
    select_cgs(&eigenbasis(&rg).unwrap(), &Gamma::Uniform(gamma)).unwrap()
}

#[test]
fn weight_updates_are_orthogonal_to_the_retained_span() {
    let f = fixture(1);
    let proj = retain_projector(&f, 0.9);
    assert!(proj.ranks().iter().all(|&k| k > 0));
    let mut model = f.model.clone();
    let cfg = UnlearnConfig::default();
    for epoch in 0..3 {
        pgu_epoch(&mut model, &proj, &f.forget, &cfg, epoch).unwrap();
    }
    for (l, layer) in proj.layers.iter().enumerate() {
        let dw = model.params()[l].weight.sub(&f.model.params()[l].weight).unwrap();
        assert!(dw.frobenius() > 0.0);
        // rounding in W + ΔW is relative to the weights themselves
        let tol = 1e-12 * f.model.params()[l].weight.frobenius() * layer.k as f64;
        let leak = dw.matmul(&layer.m).unwrap().max_abs();
        assert!(leak <= tol.max(1e-10 * dw.frobenius()), "layer {l}: {leak:e} vs {:e}", dw.frobenius());
        // biases are left alone
        assert_eq!(model.params()[l].bias, f.model.params()[l].bias);
    }
}

#[test]
fn first_layer_retain_responses_move_at_most_by_the_discarded_spectrum() {
    let f = fixture(2);
    let fg = accumulate_gram(&f.model, &f.forget, 64).unwrap();
    let rg = subtract_gram(&f.full, &fg).unwrap();
    let basis = eigenbasis(&rg).unwrap();
    let proj = select_cgs(&basis, &Gamma::Uniform(0.8)).unwrap();
    let mut model = f.model.clone();
    for epoch in 0..2 {
        pgu_epoch(&mut model, &proj, &f.forget, &UnlearnConfig::default(), epoch).unwrap();
    }
    let dw = model.params()[0].weight.sub(&f.model.params()[0].weight).unwrap();
    let response = f.retain.features().matmul_t(&dw).unwrap();
    let k = proj.layers[0].k;
    let next_sigma = basis.layers[0].sigma.get(k).copied().unwrap_or(0.0);
    assert!(response.frobenius() <= dw.frobenius() * next_sigma * (1.0 + 1e-9));
    // the forget samples carry energy outside the span and do move
    let forget_response = f.forget.features().matmul_t(&dw).unwrap();
    assert!(forget_response.frobenius() > 0.0);
}

#[test]
fn zero_learning_rate_and_full_projector_leave_the_model_unchanged() {
    let f = fixture(3);
    let proj = retain_projector(&f, 0.9);
    let mut m = f.model.clone();
    pgu_epoch(&mut m, &proj, &f.forget, &UnlearnConfig { lr_start: 0.0, lr_end: 0.0, ..Default::default() }, 0).unwrap();
    assert_eq!(m, f.model);

    let full = Projector::from_bases(f.model.layer_dims().iter().map(|&d| Matrix::identity(d)).collect());
    let mut m = f.model.clone();
    pgu_epoch(&mut m, &full, &f.forget, &UnlearnConfig::default(), 0).unwrap();
    for (a, b) in m.params().iter().zip(f.model.params()) {
        assert!(a.weight.sub(&b.weight).unwrap().max_abs() < 1e-12);
    }
}

#[test]
fn runs_are_deterministic_and_stop_by_the_rule() {
    let f = fixture(4);
    let cfg = UnlearnConfig { gamma: Gamma::Uniform(0.9), ..Default::default() };
    let a = pgu_run(&f.model, &f.forget, &f.full, &f.val, &cfg).unwrap();
    let b = pgu_run(&f.model, &f.forget, &f.full, &f.val, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
    let last = a.history.last().unwrap();
    match a.stopped_at {
        Some(n) => {
            assert_eq!(n, a.history.len());
            assert!(last.acc_forget <= last.acc_val);
            assert!(a.history[..n - 1].iter().all(|r| r.acc_forget > r.acc_val));
        }
        None => assert_eq!(a.history.len(), cfg.max_epochs),
    }
    let fixed = UnlearnConfig { early_stop: false, max_epochs: 3, ..cfg };
    assert_eq!(pgu_run(&f.model, &f.forget, &f.full, &f.val, &fixed).unwrap().history.len(), 3);
}

#[test]
fn run_inputs_are_checked() {
    let f = fixture(5);
    let empty = f.forget.subset(&[]);
    assert!(matches!(pgu_run(&f.model, &empty, &f.full, &f.val, &UnlearnConfig::default()), Err(Error::Validation(_))));
    let mut other = f.model.clone();
    other.params_mut()[0].weight.set(0, 0, 42.0);
    assert!(matches!(pgu_run(&other, &f.forget, &f.full, &f.val, &UnlearnConfig::default()), Err(Error::Fingerprint(_))));
    // depoisoning refuses a non-negative lambda
    assert!(depoison_run(&f.model, &f.forget, &f.full, &f.val, &UnlearnConfig::default()).is_err());
}

#[test]
fn incremental_rounds_reject_repeats_and_track_forgotten_ids() {
    let f = fixture(6);
    let half = f.forget.len() / 2;
    let first = f.forget.subset(&(0..half).collect::<Vec<_>>());
    let second = f.forget.subset(&(half..f.forget.len()).collect::<Vec<_>>());
    let cfg = UnlearnConfig { max_epochs: 5, ..Default::default() };
    let s1 = pgu_run(&f.model, &first, &f.full, &f.val, &cfg).unwrap();
    assert!(incremental_unlearn(&s1, &first, &f.val, &cfg).is_err());
    assert!(incremental_unlearn(&s1, &f.forget.subset(&[]), &f.val, &cfg).is_err());
    let s2 = incremental_unlearn(&s1, &second, &f.val, &cfg).unwrap();
    assert_eq!(s2.round, 2);
    assert_eq!(s2.forgotten.len(), f.forget.len());
    assert_eq!(s2.retain_gram.fingerprint, s1.model.fingerprint());
    let count = s2.retain_gram.layers[0].patch_count;
    assert_eq!(count, (f.retain.len()) as u64);
}

#[test]
fn depoison_step_lowers_the_loss() {
    let f = fixture(7);
    // relabel the forget set so a low-entropy, label-avoiding solution exists
    let wrong: Vec<usize> = f.forget.labels().iter().map(|y| (y + 1) % 3).collect();
    let poisoned = f.forget.with_labels(wrong.clone()).unwrap();
    let cfg = UnlearnConfig { lambda: -0.2, lr_start: 1e-4, lr_end: 1e-4, max_epochs: 1, early_stop: false, ..Default::default() };
    let before = unlearn_loss(&f.model.logits(poisoned.features()).unwrap(), &wrong, -0.2, 0.01, EntropySign::Prose).unwrap().0;
    let full = accumulate_gram(&f.model, &f.forget.concat(&f.retain).unwrap(), 64).unwrap();
    let state = depoison_run(&f.model, &poisoned, &full, &f.val, &cfg).unwrap();
    let after = unlearn_loss(&state.model.logits(poisoned.features()).unwrap(), &wrong, -0.2, 0.01, EntropySign::Prose).unwrap().0;
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn removing_class_rows_keeps_the_other_logits() {
    let f = fixture(8);
    let drop: BTreeSet<usize> = [1].into();
    let (pruned, mapping) = remove_class_rows(&f.model, &drop).unwrap();
    assert_eq!(mapping, vec![Some(0), None, Some(1)]);
    let a = f.model.logits(f.val.features()).unwrap();
    let b = pruned.logits(f.val.features()).unwrap();
    for r in 0..a.rows() {
        assert_eq!(b.get(r, 0), a.get(r, 0));
        assert_eq!(b.get(r, 1), a.get(r, 2));
    }
    assert!(remove_class_rows(&f.model, &[7].into()).is_err());
}
