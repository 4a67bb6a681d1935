//! Cross-modal knowledge interaction.
//!
//! A bank `B` of `K` learnable basis vectors in `R^d` is shared by both
//! modalities. A feature `f` attends over the bank with `z = softmax(B^T f)`
//! (raw inner products, not cosine) and is reconstructed as `B z`. The
//! reconstruction error of both modalities trains the bank, and gradients
//! also flow back into the features.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{dot, softmax_in_place, FeatureMatrix, FeatureVector};
use crate::rng::RngStream;
use crate::Modality;

/// `d x K` matrix stored column by column, so `b_k` is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBank {
    dim: usize,
    size: usize,
    columns: Vec<f64>,
}

impl KnowledgeBank {
    pub fn new(dim: usize, size: usize, columns: Vec<f64>) -> Result<Self> {
        if dim == 0 || size == 0 {
            return Err(Error::invalid("knowledge bank needs d >= 1 and K >= 1"));
        }
        if columns.len() != dim * size {
            return Err(Error::dim("knowledge bank", dim * size, columns.len()));
        }
        crate::numerics::ensure_finite(&columns, "knowledge bank")?;
        Ok(Self { dim, size, columns })
    }

    /// Entries uniform in `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn init(dim: usize, size: usize, rng: &mut RngStream) -> Self {
        assert!(dim >= 1 && size >= 1);
        let bound = 1.0 / libm::sqrt(dim as f64);
        let columns = (0..dim * size).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self { dim, size, columns }
    }

    pub fn from_columns<C: AsRef<[f64]>>(cols: &[C]) -> Result<Self> {
        let dim = cols.first().map_or(0, |c| c.as_ref().len());
        let mut data = Vec::with_capacity(dim * cols.len());
        for c in cols {
            if c.as_ref().len() != dim {
                return Err(Error::dim("bank column", dim, c.as_ref().len()));
            }
            data.extend_from_slice(c.as_ref());
        }
        Self::new(dim, cols.len(), data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.columns[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.columns
    }

    pub fn as_mut_vec(&mut self) -> &mut Vec<f64> {
        &mut self.columns
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.columns.chunks_exact(self.dim)
    }

    fn check_feature(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim {
            return Err(Error::dim("feature vs bank", self.dim, f.len()));
        }
        Ok(())
    }
}

/// Softmax attention of one feature over the bank columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(Vec<f64>);

impl AttentionWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0 && *w <= 1.0)) {
            return Err(Error::invalid("attention weights must lie in [0, 1]"));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("attention weights sum to {s}, expected 1")));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub value: FeatureVector,
    pub modality: Modality,
}

fn logits(bank: &KnowledgeBank, f: &[f64]) -> Vec<f64> {
    bank.columns().map(|b| dot(b, f)).collect()
}

pub fn attention_weights(bank: &KnowledgeBank, f: &[f64]) -> Result<AttentionWeights> {
    bank.check_feature(f)?;
    crate::numerics::ensure_finite(f, "feature")?;
    let mut z = logits(bank, f);
    softmax_in_place(&mut z);
    Ok(AttentionWeights(z))
}

fn combine(bank: &KnowledgeBank, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; bank.dim];
    for (b, &w) in bank.columns().zip(z) {
        for (o, v) in out.iter_mut().zip(b) {
            *o += w * v;
        }
    }
    out
}

pub fn reconstruct(bank: &KnowledgeBank, z: &AttentionWeights, modality: Modality) -> Result<Reconstruction> {
    if z.0.len() != bank.size {
        return Err(Error::dim("attention weights vs bank", bank.size, z.0.len()));
    }
    Ok(Reconstruction {
        value: FeatureVector::new(combine(bank, &z.0))?,
        modality,
    })
}

/// `(1/N) sum_i ||V_i - V^_i||^2 + ||T_i - T^_i||^2`.
pub fn recon_loss(
    image: &FeatureMatrix,
    image_recon: &FeatureMatrix,
    text: &FeatureMatrix,
    text_recon: &FeatureMatrix,
) -> Result<f64> {
    image.same_shape(image_recon, "reconstruction loss")?;
    image.same_shape(text, "reconstruction loss")?;
    image.same_shape(text_recon, "reconstruction loss")?;
    let sq = |a: &FeatureMatrix, b: &FeatureMatrix| -> f64 {
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    Ok((sq(image, image_recon) + sq(text, text_recon)) / image.rows() as f64)
}

/// Gradients of [`recon_loss`] w.r.t. `(V, V^, T, T^)`.
pub fn recon_loss_grads(
    image: &FeatureMatrix,
    image_recon: &FeatureMatrix,
    text: &FeatureMatrix,
    text_recon: &FeatureMatrix,
) -> Result<[FeatureMatrix; 4]> {
    image.same_shape(image_recon, "reconstruction loss")?;
    image.same_shape(text, "reconstruction loss")?;
    image.same_shape(text_recon, "reconstruction loss")?;
    let n = image.rows() as f64;
    let diff = |a: &FeatureMatrix, b: &FeatureMatrix| -> (FeatureMatrix, FeatureMatrix) {
        let mut ga = FeatureMatrix::zeros(a.rows(), a.cols());
        let mut gb = FeatureMatrix::zeros(a.rows(), a.cols());
        for ((x, y), (p, q)) in a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .zip(ga.as_mut_slice().iter_mut().zip(gb.as_mut_slice().iter_mut()))
        {
            *p = 2.0 * (x - y) / n;
            *q = -*p;
        }
        (ga, gb)
    };
    let (gv, gvr) = diff(image, image_recon);
    let (gt, gtr) = diff(text, text_recon);
    Ok([gv, gvr, gt, gtr])
}

/// Forward state of one feature's pass through the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct CmkiCache {
    input: Vec<f64>,
    weights: Vec<f64>,
}

impl CmkiCache {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Reconstruction of `f` together with the cache needed by [`cmki_backward`].
pub fn cmki_forward(bank: &KnowledgeBank, f: &[f64]) -> Result<(Vec<f64>, CmkiCache)> {
    bank.check_feature(f)?;
    let mut z = logits(bank, f);
    softmax_in_place(&mut z);
    let r = combine(bank, &z);
    Ok((
        r,
        CmkiCache {
            input: f.to_vec(),
            weights: z,
        },
    ))
}

/// Backward through `r = B softmax(B^T f)` for one feature. Accumulates into
/// `grad_bank` (same layout as the bank) and returns `dL/df`.
pub fn cmki_backward(
    bank: &KnowledgeBank,
    cache: &CmkiCache,
    grad_recon: &[f64],
    grad_bank: &mut [f64],
) -> Result<Vec<f64>> {
    if cache.input.len() != bank.dim || cache.weights.len() != bank.size {
        return Err(Error::Cache(format!(
            "cmki cache is {}x{} but bank is {}x{}",
            cache.input.len(),
            cache.weights.len(),
            bank.dim,
            bank.size
        )));
    }
    if grad_recon.len() != bank.dim {
        return Err(Error::dim("cmki upstream gradient", bank.dim, grad_recon.len()));
    }
    if grad_bank.len() != bank.columns.len() {
        return Err(Error::dim("bank gradient", bank.columns.len(), grad_bank.len()));
    }
    let z = &cache.weights;
    // dL/dz_k = b_k . g
    let dz: Vec<f64> = bank.columns().map(|b| dot(b, grad_recon)).collect();
    let zdz = dot(z, &dz);
    let mut grad_f = vec![0.0; bank.dim];
    for k in 0..bank.size {
        let da = z[k] * (dz[k] - zdz);
        let b = bank.column(k);
        let gb = &mut grad_bank[k * bank.dim..(k + 1) * bank.dim];
        for i in 0..bank.dim {
            // r = sum_k z_k b_k, logits a_k = b_k . f
            gb[i] += z[k] * grad_recon[i] + da * cache.input[i];
            grad_f[i] += da * b[i];
        }
    }
    Ok(grad_f)
}

/// Batch form of [`cmki_backward`]: returns `(dL/dB, dL/dF)`.
pub fn cmki_backward_batch(
    bank: &KnowledgeBank,
    caches: &[CmkiCache],
    upstream: &FeatureMatrix,
) -> Result<(Vec<f64>, FeatureMatrix)> {
    if caches.len() != upstream.rows() {
        return Err(Error::Cache(format!(
            "{} caches for {} upstream rows",
            caches.len(),
            upstream.rows()
        )));
    }
    let mut grad_bank = vec![0.0; bank.columns.len()];
    let mut grad_f = FeatureMatrix::zeros(upstream.rows(), bank.dim);
    for (i, cache) in caches.iter().enumerate() {
        let g = cmki_backward(bank, cache, upstream.row(i), &mut grad_bank)?;
        grad_f.row_mut(i).copy_from_slice(&g);
    }
    Ok((grad_bank, grad_f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, norm, FD_STEP};
    use proptest::prelude::*;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        diff / norm(a).max(norm(b)).max(1e-8)
    }

    fn identity2() -> KnowledgeBank {
        KnowledgeBank::from_columns(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()
    }

    #[test]
    fn single_basis_gives_unit_weight() {
        let bank = KnowledgeBank::from_columns(&[[0.3, -2.0, 5.0]]).unwrap();
        for f in [[1.0, 2.0, 3.0], [-100.0, 0.0, 7.0]] {
            assert_eq!(attention_weights(&bank, &f).unwrap().as_slice(), &[1.0]);
        }
    }

    #[test]
    fn identity_bank_attention_and_reconstruction() {
        let z = attention_weights(&identity2(), &[1.0, 0.0]).unwrap();
        assert!((z.as_slice()[0] - 0.731_058_578_630_004_9).abs() < 1e-6);
        assert!((z.as_slice()[1] - 0.268_941_421_369_995_1).abs() < 1e-6);
        let r = reconstruct(&identity2(), &z, Modality::Image).unwrap();
        assert!((r.value[0] - 0.731_058_578_630_004_9).abs() < 1e-6);
        assert!((r.value[1] - 0.268_941_421_369_995_1).abs() < 1e-6);
        assert_eq!(r.modality, Modality::Image);
    }

    #[test]
    fn large_scale_approaches_one_hot() {
        let bank = KnowledgeBank::from_columns(&[[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]]).unwrap();
        let z = attention_weights(&bank, &[1000.0, 1.0]).unwrap();
        assert!(z.as_slice()[0] > 1.0 - 1e-12);
    }

    #[test]
    fn one_hot_selects_column() {
        let bank = KnowledgeBank::from_columns(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let z = AttentionWeights::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(reconstruct(&bank, &z, Modality::Text).unwrap().value.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn equal_columns_reconstruct_to_column() {
        let bank = KnowledgeBank::from_columns(&[[0.5, -1.5], [0.5, -1.5], [0.5, -1.5]]).unwrap();
        let z = AttentionWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let r = reconstruct(&bank, &z, Modality::Text).unwrap();
        assert!((r.value[0] - 0.5).abs() < 1e-15 && (r.value[1] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        assert!(matches!(
            attention_weights(&identity2(), &[1.0, 2.0, 3.0]),
            Err(Error::Dimension { .. })
        ));
        let z = AttentionWeights::new(vec![1.0]).unwrap();
        assert!(matches!(
            reconstruct(&identity2(), &z, Modality::Image),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn recon_loss_examples() {
        let v = FeatureMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let z = FeatureMatrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let t = FeatureMatrix::from_rows(&[[0.3, 0.4]]).unwrap();
        assert_eq!(recon_loss(&v, &v, &t, &t).unwrap(), 0.0);
        assert_eq!(recon_loss(&v, &z, &t, &t).unwrap(), 1.0);

        let mut rng = RngStream::new(5, 5);
        let mut m = || FeatureMatrix::new(2, 3, (0..6).map(|_| rng.normal()).collect()).unwrap();
        let (a, b, c, d) = (m(), m(), m(), m());
        let mut naive = 0.0;
        for i in 0..2 {
            for j in 0..3 {
                naive += (a.get(i, j) - b.get(i, j)).powi(2) + (c.get(i, j) - d.get(i, j)).powi(2);
            }
        }
        assert!((recon_loss(&a, &b, &c, &d).unwrap() - naive / 2.0).abs() < 1e-12);
        let short = FeatureMatrix::zeros(1, 3);
        assert!(recon_loss(&a, &short, &c, &d).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let bank = KnowledgeBank::init(3, 4, &mut RngStream::new(1, 2));
        let (_, cache) = cmki_forward(&bank, &[0.5, -0.1, 0.2]).unwrap();
        let mut gb = vec![0.0; 12];
        let gf = cmki_backward(&bank, &cache, &[0.0; 3], &mut gb).unwrap();
        assert!(gf.iter().all(|&v| v == 0.0) && gb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_basis_gradient_is_linear_map_only() {
        let bank = KnowledgeBank::from_columns(&[[0.3, -0.7]]).unwrap();
        let (_, cache) = cmki_forward(&bank, &[1.0, 2.0]).unwrap();
        let mut gb = vec![0.0; 2];
        let gf = cmki_backward(&bank, &cache, &[0.4, 0.9], &mut gb).unwrap();
        assert!(gf.iter().all(|&v| v.abs() < 1e-15));
        assert!((gb[0] - 0.4).abs() < 1e-15 && (gb[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let bank = KnowledgeBank::init(3, 4, &mut RngStream::new(1, 2));
        let other = KnowledgeBank::init(3, 5, &mut RngStream::new(1, 2));
        let (_, cache) = cmki_forward(&other, &[0.5, -0.1, 0.2]).unwrap();
        let mut gb = vec![0.0; 12];
        assert!(matches!(
            cmki_backward(&bank, &cache, &[1.0; 3], &mut gb),
            Err(Error::Cache(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..60 {
            let mut rng = RngStream::new(seed, 31);
            let (d, k) = (2 + (seed as usize % 3), 1 + (seed as usize % 4));
            let bank = KnowledgeBank::init(d, k, &mut rng);
            let f: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let up: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let (_, cache) = cmki_forward(&bank, &f).unwrap();
            let mut gb = vec![0.0; d * k];
            let gf = cmki_backward(&bank, &cache, &up, &mut gb).unwrap();
            let mut analytic = gb;
            analytic.extend(gf);
            let mut flat = bank.as_slice().to_vec();
            flat.extend(&f);
            let numeric = finite_diff_grad(
                |x| {
                    let b = KnowledgeBank::new(d, k, x[..d * k].to_vec()).unwrap();
                    let (r, _) = cmki_forward(&b, &x[d * k..]).unwrap();
                    r.iter().zip(&up).map(|(a, b)| a * b).sum()
                },
                &flat,
                FD_STEP,
            )
            .unwrap();
            let e = rel_err(&analytic, &numeric);
            assert!(e <= 1e-4, "seed {seed}: {e}");
        }
    }

    #[test]
    fn shift_invariance_only_with_equal_inner_products() {
        // Columns share the same inner product with c = [0, 0, 1].
        let bank = KnowledgeBank::from_columns(&[[1.0, 0.0, 2.0], [0.0, 1.0, 2.0], [-1.0, 0.5, 2.0]]).unwrap();
        let f = [0.3, -0.2, 0.1];
        let shifted = [0.3, -0.2, 1.1];
        let a = attention_weights(&bank, &f).unwrap();
        let b = attention_weights(&bank, &shifted).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let moved = [1.3, -0.2, 0.1];
        let c = attention_weights(&bank, &moved).unwrap();
        assert!(a.as_slice().iter().zip(c.as_slice()).any(|(x, y)| (x - y).abs() > 1e-3));
    }

    proptest! {
        #[test]
        fn weights_are_a_distribution(
            cols in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 1..6),
            f in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let bank = KnowledgeBank::from_columns(&cols).unwrap();
            let z = attention_weights(&bank, &f).unwrap();
            prop_assert!((z.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(z.as_slice().iter().all(|&w| w > 0.0));
            let r = reconstruct(&bank, &z, Modality::Image).unwrap();
            let max_col = bank.columns().map(norm).fold(0.0, f64::max);
            prop_assert!(norm(&r.value) <= max_col + 1e-9);
        }

        #[test]
        fn recon_loss_zero_iff_exact(
            v in proptest::collection::vec(-2.0f64..2.0, 4),
            t in proptest::collection::vec(-2.0f64..2.0, 4),
            bump in 1e-3f64..1.0,
        ) {
            let v = FeatureMatrix::new(2, 2, v).unwrap();
            let t = FeatureMatrix::new(2, 2, t).unwrap();
            prop_assert!(recon_loss(&v, &v, &t, &t).unwrap().abs() <= 1e-12);
            let mut off = t.clone();
            off.as_mut_slice()[3] += bump;
            prop_assert!(recon_loss(&v, &v, &t, &off).unwrap() > 1e-12);
        }
    }
}
