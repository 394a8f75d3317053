//! Eigensolver, patch unrolling, Gram accumulation and projection checked
//! against brute-force oracles and algebraic invariants.

mod common;

use common::{random_images, random_matrix, random_orthonormal, rng, small_blobs};
use pgu_core::data::InputShape;
use pgu_core::linalg::{im2col, im2row, row2im_add, sym_eig, ConvGeometry};
use pgu_core::nn::{init_model, mlp_specs, LayerSpec};
use pgu_core::subspace::{
    accumulate_gram, cgs_rank, eigenbasis, select_cgs, subtract_gram, Gamma, Projector, ProjectorLayer,
};
use pgu_core::Matrix;
use proptest::prelude::*;

fn psd(d: usize, rank: usize, seed: u64) -> Matrix {
    let a = random_matrix(rank, d, &mut rng(seed));
    a.t_matmul(&a).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigendecomposition_is_orthonormal_and_reconstructs(d in 1usize..12, rank in 1usize..14, seed in 0u64..1000) {
        let g = psd(d, rank, seed);
        let eig = sym_eig(&g).unwrap();
        let u = &eig.vectors;
        let utu = u.t_matmul(u).unwrap();
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((utu.get(i, j) - want).abs() < 1e-9);
            }
        }
        prop_assert!((eig.values.iter().sum::<f64>() - g.trace()).abs() <= 1e-9 * g.frobenius().max(1.0));
        prop_assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        let recon = u.matmul(&Matrix::from_diag(&eig.values)).unwrap().matmul_t(u).unwrap();
        prop_assert!(recon.sub(&g).unwrap().frobenius() <= 1e-8 * g.frobenius().max(1.0));
    }

    #[test]
    fn projection_is_orthogonal_idempotent_and_pythagorean(
        d in 2usize..12, k_frac in 0.0f64..=1.0, rows in 1usize..6, seed in 0u64..1000
    ) {
        let k = ((d as f64) * k_frac).round() as usize;
        let mut r = rng(seed);
        let m = random_orthonormal(d, k, &mut r);
        let layer = ProjectorLayer { m: m.clone(), k, gamma: 0.5 };
        let g = random_matrix(rows, d, &mut r);
        let p = layer.project(&g).unwrap();
        if k > 0 {
            prop_assert!(p.matmul(&m).unwrap().max_abs() <= 1e-10 * g.frobenius().max(1.0));
        }
        let pp = layer.project(&p).unwrap();
        prop_assert!(pp.sub(&p).unwrap().frobenius() <= 1e-10 * g.frobenius().max(1.0));
        let removed = g.sub(&p).unwrap();
        let lhs = g.frobenius().powi(2);
        let rhs = p.frobenius().powi(2) + removed.frobenius().powi(2);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(1.0));
        if k == d {
            prop_assert!(p.frobenius() <= 1e-10 * g.frobenius().max(1.0));
        }
    }

    #[test]
    fn cgs_rank_is_monotone_in_gamma(
        mut sigma in proptest::collection::vec(0.0f64..10.0, 1..20), a in 0.0f64..=1.0, b in 0.0f64..=1.0
    ) {
        sigma.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(cgs_rank(&sigma, lo) <= cgs_rank(&sigma, hi));
        let k = cgs_rank(&sigma, hi);
        let total: f64 = sigma.iter().sum();
        if total > 0.0 && hi > 0.0 {
            // k is the smallest prefix meeting the threshold
            prop_assert!(sigma[..k].iter().sum::<f64>() >= hi * total);
            prop_assert!(sigma[..k - 1].iter().sum::<f64>() < hi * total);
        }
    }

    #[test]
    fn im2col_matches_brute_force_and_preserves_sums(
        c in 1usize..3, h in 1usize..7, w in 1usize..7, kh in 1usize..4, kw in 1usize..4,
        sh in 1usize..3, sw in 1usize..3, ph in 0usize..2, pw in 0usize..2, seed in 0u64..1000
    ) {
        let geom = ConvGeometry { channels: c, height: h, width: w, kernel: (kh, kw), stride: (sh, sw), padding: (ph, pw) };
        prop_assume!(geom.validate().is_ok());
        let input: Vec<f64> = random_matrix(1, c * h * w, &mut rng(seed)).into_vec();
        let cols = im2col(&input, &geom).unwrap();
        let (oh, ow) = (geom.out_height(), geom.out_width());
        prop_assert_eq!(cols.shape(), (c * kh * kw, oh * ow));
        // brute-force padded lookup
        let at = |ch: usize, y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y as usize >= h || x as usize >= w { 0.0 } else { input[(ch * h + y as usize) * w + x as usize] }
        };
        for oy in 0..oh {
            for ox in 0..ow {
                let mut row = 0;
                for ch in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * sh + ky) as isize - ph as isize;
                            let x = (ox * sw + kx) as isize - pw as isize;
                            prop_assert_eq!(cols.get(row, oy * ow + ox), at(ch, y, x));
                            row += 1;
                        }
                    }
                }
            }
        }
        // each input value appears once per window covering it
        let ones = vec![1.0; c * h * w];
        let rows = im2row(&ones, &geom).unwrap();
        let mut cover = vec![0.0; c * h * w];
        row2im_add(&Matrix::from_fn(rows.rows(), rows.cols(), |_, _| 1.0), &geom, &mut cover);
        let total: f64 = im2row(&input, &geom).unwrap().as_slice().iter().sum();
        let weighted: f64 = input.iter().zip(&cover).map(|(a, b)| a * b).sum();
        prop_assert!((total - weighted).abs() < 1e-9);
    }
}

/// Hidden-layer inputs of an MLP by scalar loops: one vector per dense layer.
fn mlp_layer_inputs(model: &pgu_core::nn::NetworkModel, x: &[f64]) -> Vec<Vec<f64>> {
    let mut inputs = Vec::new();
    let mut a = x.to_vec();
    let mut p = 0;
    for spec in model.specs() {
        match spec {
            LayerSpec::Dense { output, .. } => {
                inputs.push(a.clone());
                let l = &model.params()[p];
                p += 1;
                a = (0..*output)
                    .map(|o| l.bias.as_ref().map_or(0.0, |b| b[o]) + (0..a.len()).map(|i| l.weight.get(o, i) * a[i]).sum::<f64>())
                    .collect();
            }
            LayerSpec::Relu => a.iter_mut().for_each(|v| *v = v.max(0.0)),
            _ => {}
        }
    }
    inputs
}

#[test]
fn mlp_gram_matches_outer_product_oracle() {
    let splits = small_blobs(2);
    let model = init_model(InputShape::Flat(4), &mlp_specs(4, 6, 3), 5).unwrap();
    let cache = accumulate_gram(&model, &splits.train, 13).unwrap();
    let mut oracle: Vec<Matrix> = model.layer_dims().iter().map(|&d| Matrix::zeros(d, d)).collect();
    for r in 0..splits.train.len() {
        for (l, v) in mlp_layer_inputs(&model, splits.train.features().row(r)).iter().enumerate() {
            for i in 0..v.len() {
                for j in 0..v.len() {
                    let cur = oracle[l].get(i, j);
                    oracle[l].set(i, j, cur + v[i] * v[j]);
                }
            }
        }
    }
    for (l, o) in oracle.iter().enumerate() {
        assert!(cache.layers[l].gram.sub(o).unwrap().max_abs() <= 1e-9 * o.max_abs());
        assert_eq!(cache.layers[l].patch_count, splits.train.len() as u64);
    }
}

#[test]
fn conv_first_layer_gram_sums_patch_outer_products() {
    let data = random_images(6, 6, 3, 8);
    let model = init_model(InputShape::Image { channels: 1, height: 6, width: 6 }, &pgu_core::nn::cnn_specs(6, 3), 1).unwrap();
    let cache = accumulate_gram(&model, &data, 4).unwrap();
    let geom = ConvGeometry { channels: 1, height: 6, width: 6, kernel: (3, 3), stride: (1, 1), padding: (1, 1) };
    let mut oracle = Matrix::zeros(9, 9);
    for r in 0..data.len() {
        let patches = im2row(data.features().row(r), &geom).unwrap();
        oracle.add_assign(&patches.t_matmul(&patches).unwrap()).unwrap();
    }
    assert!(cache.layers[0].gram.sub(&oracle).unwrap().max_abs() <= 1e-9 * oracle.max_abs());
    assert_eq!(cache.layers[0].patch_count, 6 * 36);
}

#[test]
fn gram_is_invariant_to_batch_size() {
    let splits = small_blobs(3);
    let model = init_model(InputShape::Flat(4), &mlp_specs(4, 8, 3), 2).unwrap();
    let a = accumulate_gram(&model, &splits.train, 7).unwrap();
    let b = accumulate_gram(&model, &splits.train, 250).unwrap();
    for (x, y) in a.layers.iter().zip(&b.layers) {
        assert!(x.gram.sub(&y.gram).unwrap().max_abs() <= 1e-10 * y.gram.max_abs());
    }
    let cnn = init_model(InputShape::Image { channels: 1, height: 6, width: 6 }, &pgu_core::nn::cnn_specs(6, 3), 2).unwrap();
    let imgs = random_images(9, 6, 3, 4);
    let a = accumulate_gram(&cnn, &imgs, 2).unwrap();
    let b = accumulate_gram(&cnn, &imgs, 250).unwrap();
    for (x, y) in a.layers.iter().zip(&b.layers) {
        assert!(x.gram.sub(&y.gram).unwrap().max_abs() <= 1e-10 * y.gram.max_abs().max(1e-300));
    }
}

#[test]
fn subtracted_gram_equals_retain_gram_and_spectra_agree() {
    for seed in 0..3 {
        let splits = small_blobs(seed);
        let model = init_model(InputShape::Flat(4), &mlp_specs(4, 8, 3), seed).unwrap();
        let forget_idx: Vec<usize> = (0..splits.train.len()).filter(|i| i % 5 == 0).collect();
        let retain_idx: Vec<usize> = (0..splits.train.len()).filter(|i| i % 5 != 0).collect();
        let full = accumulate_gram(&model, &splits.train, 11).unwrap();
        let forget = accumulate_gram(&model, &splits.train.subset(&forget_idx), 11).unwrap();
        let direct = accumulate_gram(&model, &splits.train.subset(&retain_idx), 11).unwrap();
        let sub = subtract_gram(&full, &forget).unwrap();
        for (s, d) in sub.layers.iter().zip(&direct.layers) {
            assert!(s.gram.sub(&d.gram).unwrap().max_abs() <= 1e-9 * d.gram.max_abs());
            assert_eq!(s.patch_count, d.patch_count);
        }
        let (bs, bd) = (eigenbasis(&sub).unwrap(), eigenbasis(&direct).unwrap());
        for (x, y) in bs.layers.iter().zip(&bd.layers) {
            let top = y.sigma[0];
            for (a, b) in x.sigma.iter().zip(&y.sigma) {
                assert!((a - b).abs() <= 1e-6 * top);
            }
        }
        // same selected ranks for a generic gamma
        let g = Gamma::Uniform(0.9);
        assert_eq!(select_cgs(&bs, &g).unwrap().ranks(), select_cgs(&bd, &g).unwrap().ranks());
    }
}

#[test]
fn retain_representations_lie_mostly_in_the_selected_span() {
    let splits = small_blobs(5);
    let model = init_model(InputShape::Flat(4), &mlp_specs(4, 8, 3), 4).unwrap();
    let cache = accumulate_gram(&model, &splits.train, 32).unwrap();
    let basis = eigenbasis(&cache).unwrap();
    let proj = select_cgs(&basis, &Gamma::Uniform(0.99)).unwrap();
    for (l, layer) in proj.layers.iter().enumerate() {
        // energy of the Gram outside the span is bounded by the discarded eigenvalues
        let g = &cache.layers[l].gram;
        let inside = layer.m.t_matmul(&g.matmul(&layer.m).unwrap()).unwrap().trace();
        let discarded: f64 = basis.layers[l].sigma[layer.k..].iter().map(|s| s * s).sum();
        assert!((g.trace() - inside - discarded).abs() <= 1e-7 * g.trace());
    }
    let full = Projector::from_bases(basis.layers.iter().map(|b| b.u.clone()).collect());
    assert_eq!(full.ranks(), model.layer_dims());
}
