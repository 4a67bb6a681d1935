//! Contrastive and reconstruction objectives with exact gradients.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cmki::{recon_loss, recon_loss_grads};
use crate::error::{Error, Result};
use crate::numerics::{dot, log_sum_exp, norm, FeatureMatrix};

pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLossWeights")]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLossWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
}

impl TryFrom<RawLossWeights> for LossWeights {
    type Error = Error;

    fn try_from(r: RawLossWeights) -> Result<Self> {
        LossWeights::new(r.alpha, r.beta, r.gamma)
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(alloc::format!("loss weight {name} must be finite and >= 0")));
            }
        }
        if alpha == 0.0 && beta == 0.0 && gamma == 0.0 {
            return Err(Error::invalid("loss weights must not all be zero"));
        }
        Ok(Self { alpha, beta, gamma })
    }
}

impl Default for LossWeights {
    /// 0.5 / 1 / 1 for reconstruction / InfoNCE / reconstructed InfoNCE.
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

/// Softmax temperature, optionally learnable through `log tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub log_tau: f64,
    pub learnable: bool,
}

impl Temperature {
    pub fn new(tau: f64, learnable: bool) -> Result<Self> {
        if !(TAU_MIN..=TAU_MAX).contains(&tau) {
            return Err(Error::invalid(alloc::format!(
                "temperature {tau} outside [{TAU_MIN}, {TAU_MAX}]"
            )));
        }
        Ok(Self {
            log_tau: libm::log(tau),
            learnable,
        })
    }

    pub fn value(&self) -> f64 {
        libm::exp(self.log_tau).clamp(TAU_MIN, TAU_MAX)
    }

    fn is_clamped(&self) -> bool {
        let raw = libm::exp(self.log_tau);
        !(TAU_MIN..=TAU_MAX).contains(&raw)
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self::new(0.07, false).expect("default temperature is in range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoNceMode {
    /// Mean of the image-to-text and text-to-image directions.
    #[default]
    Symmetric,
    ImageToText,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub info: f64,
    pub info_r: f64,
    pub total: f64,
}

pub fn total_loss(mse: f64, info: f64, info_r: f64, w: &LossWeights) -> Result<LossBreakdown> {
    for v in [mse, info, info_r] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::invalid("loss components must be finite and >= 0"));
        }
    }
    Ok(LossBreakdown {
        mse,
        info,
        info_r,
        total: w.alpha * mse + w.beta * info + w.gamma * info_r,
    })
}

fn normalized_rows(m: &FeatureMatrix) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rows = Vec::with_capacity(m.rows());
    let mut norms = Vec::with_capacity(m.rows());
    for (i, r) in m.iter_rows().enumerate() {
        let n = norm(r);
        if !(n > 0.0) {
            return Err(Error::DegenerateVector(alloc::format!("row {i} has zero norm")));
        }
        rows.push(r.iter().map(|x| x / n).collect());
        norms.push(n);
    }
    Ok((rows, norms))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceGrads {
    pub loss: f64,
    pub image: FeatureMatrix,
    pub text: FeatureMatrix,
    /// Gradient w.r.t. `log tau`.
    pub log_tau: f64,
}

/// Scaled cosine logits `S_ij = cos(V_i, T_j) / tau` and the weight each
/// direction contributes.
struct Logits {
    s: Vec<f64>,
    n: usize,
}

impl Logits {
    fn row(&self, i: usize) -> &[f64] {
        &self.s[i * self.n..(i + 1) * self.n]
    }

    fn col(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.s[i * self.n + j]).collect()
    }
}

fn direction_weights(mode: InfoNceMode) -> (f64, f64) {
    match mode {
        InfoNceMode::Symmetric => (0.5, 0.5),
        InfoNceMode::ImageToText => (1.0, 0.0),
    }
}

// Logits plus, per side, the unit vectors and their pre-normalisation norms.
type Prepared = (Logits, Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>);

fn prepare(v: &FeatureMatrix, t: &FeatureMatrix, tau: f64) -> Result<Prepared> {
    v.same_shape(t, "infonce")?;
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be > 0"));
    }
    let (vn, vnorm) = normalized_rows(v)?;
    let (tn, tnorm) = normalized_rows(t)?;
    let n = v.rows();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = dot(&vn[i], &tn[j]).clamp(-1.0, 1.0) / tau;
        }
    }
    Ok((Logits { s, n }, vn, vnorm, tn, tnorm))
}

fn loss_from_logits(l: &Logits, mode: InfoNceMode) -> f64 {
    let (wi, wt) = direction_weights(mode);
    let n = l.n;
    let mut i2t = 0.0;
    let mut t2i = 0.0;
    for i in 0..n {
        let diag = l.s[i * n + i];
        i2t += log_sum_exp(l.row(i)) - diag;
        if wt > 0.0 {
            t2i += log_sum_exp(&l.col(i)) - diag;
        }
    }
    (wi * i2t + wt * t2i) / n as f64
}

/// InfoNCE over cosine similarities; the denominator includes the positive.
pub fn infonce(v: &FeatureMatrix, t: &FeatureMatrix, tau: f64, mode: InfoNceMode) -> Result<f64> {
    let (logits, ..) = prepare(v, t, tau)?;
    Ok(loss_from_logits(&logits, mode))
}

/// Same loss applied to reconstructed features.
pub fn infonce_reconstructed(
    v_recon: &FeatureMatrix,
    t_recon: &FeatureMatrix,
    tau: f64,
    mode: InfoNceMode,
) -> Result<f64> {
    infonce(v_recon, t_recon, tau, mode)
}

fn unnormalize_grad(g_unit: &[f64], unit: &[f64], n: f64) -> Vec<f64> {
    let proj = dot(unit, g_unit);
    g_unit.iter().zip(unit).map(|(g, u)| (g - u * proj) / n).collect()
}

pub fn infonce_with_grads(
    v: &FeatureMatrix,
    t: &FeatureMatrix,
    tau: f64,
    mode: InfoNceMode,
) -> Result<InfoNceGrads> {
    let (logits, vn, vnorm, tn, tnorm) = prepare(v, t, tau)?;
    let loss = loss_from_logits(&logits, mode);
    let n = logits.n;
    let d = v.cols();
    let (wi, wt) = direction_weights(mode);
    let inv_n = 1.0 / n as f64;

    // dL/dS
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        for j in 0..n {
            g[i * n + j] += wi * inv_n * libm::exp(row[j] - lse);
        }
        g[i * n + i] -= wi * inv_n;
    }
    if wt > 0.0 {
        for j in 0..n {
            let col = logits.col(j);
            let lse = log_sum_exp(&col);
            for i in 0..n {
                g[i * n + j] += wt * inv_n * libm::exp(col[i] - lse);
            }
            g[j * n + j] -= wt * inv_n;
        }
    }

    let log_tau = -g.iter().zip(&logits.s).map(|(a, b)| a * b).sum::<f64>();

    let mut gv_unit = vec![vec![0.0; d]; n];
    let mut gt_unit = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            let c = g[i * n + j] / tau;
            if c == 0.0 {
                continue;
            }
            for k in 0..d {
                gv_unit[i][k] += c * tn[j][k];
                gt_unit[j][k] += c * vn[i][k];
            }
        }
    }
    let mut image = FeatureMatrix::zeros(n, d);
    let mut text = FeatureMatrix::zeros(n, d);
    for i in 0..n {
        image.row_mut(i).copy_from_slice(&unnormalize_grad(&gv_unit[i], &vn[i], vnorm[i]));
        text.row_mut(i).copy_from_slice(&unnormalize_grad(&gt_unit[i], &tn[i], tnorm[i]));
    }
    Ok(InfoNceGrads {
        loss,
        image,
        text,
        log_tau,
    })
}

/// Features entering the objective for one batch. `recon` is `None` when the
/// knowledge bank is disabled, in which case only the InfoNCE term is used.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub image: &'a FeatureMatrix,
    pub text: &'a FeatureMatrix,
    pub recon: Option<(&'a FeatureMatrix, &'a FeatureMatrix)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGrads {
    pub image: FeatureMatrix,
    pub text: FeatureMatrix,
    pub image_recon: Option<FeatureMatrix>,
    pub text_recon: Option<FeatureMatrix>,
    /// Zero unless the temperature is learnable and not clamped.
    pub log_tau: f64,
}

pub fn objectives_forward(
    inputs: ObjectiveInputs<'_>,
    w: &LossWeights,
    temp: &Temperature,
    mode: InfoNceMode,
) -> Result<LossBreakdown> {
    let tau = temp.value();
    let info = infonce(inputs.image, inputs.text, tau, mode)?;
    let (mse, info_r) = match inputs.recon {
        Some((vr, tr)) => (
            recon_loss(inputs.image, vr, inputs.text, tr)?,
            infonce_reconstructed(vr, tr, tau, mode)?,
        ),
        None => (0.0, 0.0),
    };
    total_loss(mse, info, info_r, w)
}

fn add_scaled(acc: &mut FeatureMatrix, other: &FeatureMatrix, scale: f64) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(other.as_slice()) {
        *a += scale * b;
    }
}

fn scaled(m: &FeatureMatrix, scale: f64) -> FeatureMatrix {
    let mut out = FeatureMatrix::zeros(m.rows(), m.cols());
    add_scaled(&mut out, m, scale);
    out
}

/// Loss breakdown together with gradients w.r.t. every input feature.
pub fn objectives_backward(
    inputs: ObjectiveInputs<'_>,
    w: &LossWeights,
    temp: &Temperature,
    mode: InfoNceMode,
) -> Result<(LossBreakdown, ObjectiveGrads)> {
    let tau = temp.value();
    let info = infonce_with_grads(inputs.image, inputs.text, tau, mode)?;
    let mut image = scaled(&info.image, w.beta);
    let mut text = scaled(&info.text, w.beta);
    let mut log_tau = w.beta * info.log_tau;
    let mut mse = 0.0;
    let mut info_r = 0.0;
    let mut image_recon = None;
    let mut text_recon = None;
    if let Some((vr, tr)) = inputs.recon {
        mse = recon_loss(inputs.image, vr, inputs.text, tr)?;
        let [gv, gvr, gt, gtr] = recon_loss_grads(inputs.image, vr, inputs.text, tr)?;
        add_scaled(&mut image, &gv, w.alpha);
        add_scaled(&mut text, &gt, w.alpha);
        let rinfo = infonce_with_grads(vr, tr, tau, mode)?;
        info_r = rinfo.loss;
        log_tau += w.gamma * rinfo.log_tau;
        let mut gvr = scaled(&gvr, w.alpha);
        add_scaled(&mut gvr, &rinfo.image, w.gamma);
        let mut gtr = scaled(&gtr, w.alpha);
        add_scaled(&mut gtr, &rinfo.text, w.gamma);
        image_recon = Some(gvr);
        text_recon = Some(gtr);
    }
    if !temp.learnable || temp.is_clamped() {
        log_tau = 0.0;
    }
    let breakdown = total_loss(mse, info.loss, info_r, w)?;
    Ok((
        breakdown,
        ObjectiveGrads {
            image,
            text,
            image_recon,
            text_recon,
            log_tau,
        },
    ))
}
