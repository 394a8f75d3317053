//! Core gradient space construction.
//!
//! For every projectable layer the Gram matrix `R Rᵀ` of its input
//! representations is accumulated batch by batch. A deletion request
//! subtracts the forget set's Gram from the cached full Gram; the
//! eigenvectors of the result, truncated by a cumulative singular-value
//! threshold, span the retain set's core gradient space `M`. Unlearning
//! gradients are then replaced by `∇ − ∇·M·Mᵀ`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Matrix};
use crate::nn::NetworkModel;

/// Accumulated Gram of one layer's input representations.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGram {
    pub gram: Matrix,
    /// Number of representation vectors summed (samples, or patches for conv).
    pub patch_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramCache {
    pub layers: Vec<LayerGram>,
    /// Fingerprint of the weights that produced the activations.
    pub fingerprint: [u8; 32],
}

impl GramCache {
    pub fn zeros(model: &NetworkModel) -> Self {
        let layers = model
            .layer_dims()
            .into_iter()
            .map(|d| LayerGram { gram: Matrix::zeros(d, d), patch_count: 0 })
            .collect();
        Self { layers, fingerprint: model.fingerprint() }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.gram.rows()).collect()
    }

    pub fn check_model(&self, model: &NetworkModel) -> Result<()> {
        if self.fingerprint != model.fingerprint() {
            return Err(Error::Fingerprint(
                "gram cache was computed with different weights than this model".into(),
            ));
        }
        Ok(())
    }

    /// Re-stamps the cache as belonging to `model`. Used between incremental
    /// rounds, where the retain Gram from earlier weights stands in for the
    /// current weights.
    pub fn adopt(&mut self, model: &NetworkModel) {
        self.fingerprint = model.fingerprint();
    }

    /// Adds another cache computed with the same weights.
    pub fn merge(&mut self, other: &GramCache) -> Result<()> {
        if self.fingerprint != other.fingerprint || self.dims() != other.dims() {
            return Err(Error::Fingerprint("cannot merge caches from different weights".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.gram.add_assign(&b.gram)?;
            a.patch_count += b.patch_count;
        }
        Ok(())
    }
}

/// Sums `r·rᵀ` over every sample (dense) or patch (conv), `batch_size`
/// samples at a time.
pub fn accumulate_gram(model: &NetworkModel, data: &Dataset, batch_size: usize) -> Result<GramCache> {
    if batch_size == 0 {
        return Err(Error::validation("batch size must be at least 1"));
    }
    if data.shape() != model.input_shape() {
        return Err(Error::validation("dataset shape does not match the model input"));
    }
    let mut cache = GramCache::zeros(model);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let trace = model.forward(&data.features().select_rows(chunk), true)?;
        for (layer, reps) in cache.layers.iter_mut().zip(trace.captured.as_ref().expect("captured")) {
            reps.accumulate_row_gram(&mut layer.gram);
            layer.patch_count += reps.rows() as u64;
        }
    }
    Ok(cache)
}

/// `R_r R_rᵀ = R Rᵀ − R_f R_fᵀ`, layer by layer.
pub fn subtract_gram(full: &GramCache, forget: &GramCache) -> Result<GramCache> {
    if full.fingerprint != forget.fingerprint {
        return Err(Error::Fingerprint(
            "forget activations must come from the same weights that produced the cached full Gram".into(),
        ));
    }
    if full.dims() != forget.dims() {
        return Err(Error::validation(format!(
            "layer dimensions differ: {:?} vs {:?}",
            full.dims(),
            forget.dims()
        )));
    }
    let layers = full
        .layers
        .iter()
        .zip(&forget.layers)
        .enumerate()
        .map(|(i, (f, g))| {
            if g.patch_count > f.patch_count {
                return Err(Error::validation(format!(
                    "layer {i}: forget set has {} representations, full set only {}",
                    g.patch_count, f.patch_count
                )));
            }
            Ok(LayerGram { gram: f.gram.sub(&g.gram)?, patch_count: f.patch_count - g.patch_count })
        })
        .collect::<Result<_>>()?;
    Ok(GramCache { layers, fingerprint: full.fingerprint })
}

/// Eigenvectors and singular values of one layer's Gram.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBasis {
    pub u: Matrix,
    /// `sqrt(max(eigenvalue, 0))`, non-increasing.
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub layers: Vec<LayerBasis>,
}

pub fn layer_basis(gram: &Matrix) -> Result<LayerBasis> {
    let eig = sym_eig(gram)?;
    // Subtracted Grams can dip below zero in floating point.
    let sigma = eig.values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(LayerBasis { u: eig.vectors, sigma })
}

pub fn eigenbasis(cache: &GramCache) -> Result<EigenBasis> {
    let layers = cache.layers.iter().map(|l| layer_basis(&l.gram)).collect::<Result<_>>()?;
    Ok(EigenBasis { layers })
}

/// Threshold `γ^l`, either one value for all layers or one per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma {
    Uniform(f64),
    PerLayer(Vec<f64>),
}

impl Gamma {
    pub fn for_layer(&self, layer: usize) -> Result<f64> {
        let g = match self {
            Gamma::Uniform(g) => *g,
            Gamma::PerLayer(gs) => *gs
                .get(layer)
                .ok_or_else(|| Error::validation(format!("no gamma given for layer {layer}")))?,
        };
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::validation(format!("gamma {g} outside [0, 1]")));
        }
        Ok(g)
    }
}

/// Smallest `k` with `Σ_{i≤k} σ_i ≥ γ·Σ σ_i`; zero for `γ = 0` or an
/// all-zero spectrum.
pub fn cgs_rank(sigma: &[f64], gamma: f64) -> usize {
    let total: f64 = sigma.iter().sum();
    if gamma == 0.0 || total == 0.0 {
        return 0;
    }
    let target = gamma * total;
    let mut acc = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        acc += s;
        if acc >= target {
            return i + 1;
        }
    }
    sigma.len()
}

/// Orthonormal basis `M` (d×k) of one layer's core gradient space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorLayer {
    pub m: Matrix,
    pub k: usize,
    pub gamma: f64,
}

impl ProjectorLayer {
    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    /// `∇ − (∇·M)·Mᵀ`.
    pub fn project(&self, grad: &Matrix) -> Result<Matrix> {
        if grad.cols() != self.dim() {
            return Err(Error::validation(format!(
                "gradient has {} columns, subspace lives in dimension {}",
                grad.cols(),
                self.dim()
            )));
        }
        if self.k == 0 {
            return Ok(grad.clone());
        }
        let coords = grad.matmul(&self.m)?;
        grad.sub(&coords.matmul_t(&self.m)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub layers: Vec<ProjectorLayer>,
}

impl Projector {
    pub fn ranks(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.k).collect()
    }

    /// Projector from an explicit list of orthonormal bases.
    pub fn from_bases(bases: Vec<Matrix>) -> Self {
        let layers = bases.into_iter().map(|m| ProjectorLayer { k: m.cols(), m, gamma: f64::NAN }).collect();
        Projector { layers }
    }
}

/// Keeps the leading `k` eigenvectors of every layer per the γ criterion.
pub fn select_cgs(basis: &EigenBasis, gamma: &Gamma) -> Result<Projector> {
    let layers = basis
        .layers
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let g = gamma.for_layer(i)?;
            let k = cgs_rank(&b.sigma, g);
            Ok(ProjectorLayer { m: b.u.leading_columns(k), k, gamma: g })
        })
        .collect::<Result<_>>()?;
    Ok(Projector { layers })
}

/// Free-function form of [`ProjectorLayer::project`].
pub fn project_gradient(grad: &Matrix, layer: &ProjectorLayer) -> Result<Matrix> {
    layer.project(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, InputShape, LayerSpec};

    fn basis_from_sigma(sigma: Vec<f64>) -> EigenBasis {
        let d = sigma.len();
        EigenBasis { layers: vec![LayerBasis { u: Matrix::identity(d), sigma }] }
    }

    #[test]
    fn cgs_rank_examples() {
        assert_eq!(cgs_rank(&[10.0, 0.0, 0.0, 0.0], 0.9), 1);
        assert_eq!(cgs_rank(&[1.0, 1.0, 1.0, 1.0], 0.5), 2);
        assert_eq!(cgs_rank(&[3.0, 2.0, 1e-9, 0.0, 0.0], 1.0), 3);
        assert_eq!(cgs_rank(&[3.0, 2.0], 0.0), 0);
        assert_eq!(cgs_rank(&[0.0, 0.0], 0.9), 0);
    }

    #[test]
    fn select_rejects_gamma_out_of_range() {
        let b = basis_from_sigma(vec![1.0, 1.0]);
        assert!(matches!(select_cgs(&b, &Gamma::Uniform(1.5)), Err(Error::Validation(_))));
        assert!(matches!(select_cgs(&b, &Gamma::Uniform(-0.1)), Err(Error::Validation(_))));
        let p = select_cgs(&b, &Gamma::PerLayer(vec![0.5])).unwrap();
        assert_eq!(p.ranks(), vec![1]);
    }

    #[test]
    fn empty_and_complete_subspaces() {
        let g = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 - 5.0);
        let empty = ProjectorLayer { m: Matrix::zeros(4, 0), k: 0, gamma: 0.0 };
        assert_eq!(empty.project(&g).unwrap(), g);
        let full = ProjectorLayer { m: Matrix::identity(4), k: 4, gamma: 1.0 };
        assert!(full.project(&g).unwrap().max_abs() < 1e-12);
        let wrong = Matrix::zeros(3, 5);
        assert!(matches!(full.project(&wrong), Err(Error::Validation(_))));
    }

    #[test]
    fn single_sample_gram_is_outer_product() {
        let model = init_model(InputShape::Flat(2), &[LayerSpec::dense(2, 3)], 0).unwrap();
        let x = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let data = Dataset::new(x, vec![0], 3, vec![0], InputShape::Flat(2)).unwrap();
        let cache = accumulate_gram(&model, &data, 4).unwrap();
        assert_eq!(cache.layers[0].gram.as_slice(), &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(cache.layers[0].patch_count, 1);

        let basis = eigenbasis(&cache).unwrap();
        let s = &basis.layers[0].sigma;
        assert!((s[0] - 5f64.sqrt()).abs() < 1e-12 && s[1].abs() < 1e-7);
        let u0 = basis.layers[0].u.column(0);
        assert!((u0[0] * 2.0 - u0[1]).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_gives_zero_cache() {
        let model = init_model(InputShape::Flat(2), &[LayerSpec::dense(2, 3)], 0).unwrap();
        let data = Dataset::new(Matrix::zeros(0, 2), vec![], 3, vec![], InputShape::Flat(2)).unwrap();
        let cache = accumulate_gram(&model, &data, 4).unwrap();
        assert_eq!(cache, GramCache::zeros(&model));
        let basis = eigenbasis(&cache).unwrap();
        assert!(basis.layers[0].sigma.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn subtraction_checks_fingerprint_and_counts() {
        let a = init_model(InputShape::Flat(2), &[LayerSpec::dense(2, 3)], 0).unwrap();
        let b = init_model(InputShape::Flat(2), &[LayerSpec::dense(2, 3)], 1).unwrap();
        let mut full = GramCache::zeros(&a);
        assert!(matches!(subtract_gram(&full, &GramCache::zeros(&b)), Err(Error::Fingerprint(_))));
        let mut forget = GramCache::zeros(&a);
        forget.layers[0].patch_count = 1;
        assert!(matches!(subtract_gram(&full, &forget), Err(Error::Validation(_))));
        full.layers[0].patch_count = 3;
        full.layers[0].gram = Matrix::identity(2);
        let same = subtract_gram(&full, &GramCache::zeros(&a)).unwrap();
        assert_eq!(same.layers[0].gram, full.layers[0].gram);
        let zero = subtract_gram(&full, &full).unwrap();
        assert_eq!(zero.layers[0].gram.max_abs(), 0.0);
        assert_eq!(zero.layers[0].patch_count, 0);
    }
}
