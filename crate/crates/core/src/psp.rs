//! Positive sample propagation.
//!
//! All audio-visual segment pairs are scored with a scaled bilinear
//! similarity, negative and weak connections are pruned by ReLU and a
//! threshold on the row-normalized map, and each modality is updated with
//! the other modality's features aggregated along the surviving
//! connections. The two updated streams are layer-normalized and averaged
//! into the fused segment feature `f`.
//!
//! Every function accepts either unbatched `T×d` or batched `B×T×d` input.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{self, Ctx, Init, LayerNorm, Linear};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PspConfig {
    pub d_l: usize,
    pub d_h: usize,
}

#[derive(Debug, Clone)]
pub struct PspParams {
    pub d_l: usize,
    pub w1_v: Linear,
    pub w1_a: Linear,
    pub w2_v: Linear,
    pub w2_a: Linear,
    pub w3_v: Linear,
    pub w3_a: Linear,
    pub ln_v: LayerNorm,
    pub ln_a: LayerNorm,
}

/// Everything one propagation pass produces.
#[derive(Debug, Clone)]
pub struct PspOutput {
    pub beta_va: Tensor,
    pub beta_av: Tensor,
    pub gamma_va: Tensor,
    pub gamma_av: Tensor,
    pub a_psp: Tensor,
    pub v_psp: Tensor,
    pub f: Tensor,
}

impl PspParams {
    pub fn new(init: &mut Init, cfg: PspConfig) -> Result<Self> {
        let (d_l, d_h) = (cfg.d_l, cfg.d_h);
        Ok(PspParams {
            d_l,
            w1_v: init.linear("w1_v", d_l, d_h, false)?,
            w1_a: init.linear("w1_a", d_l, d_h, false)?,
            w2_v: init.linear("w2_v", d_l, d_l, false)?,
            w2_a: init.linear("w2_a", d_l, d_l, false)?,
            w3_v: init.linear("w3_v", d_l, d_l, false)?,
            w3_a: init.linear("w3_a", d_l, d_l, false)?,
            ln_v: init.layer_norm("ln_v", d_l)?,
            ln_a: init.layer_norm("ln_a", d_l)?,
        })
    }

    pub fn forward(&self, v_lstm: &Tensor, a_lstm: &Tensor, tau: f64, ctx: &mut Ctx) -> Result<PspOutput> {
        let (beta_va, beta_av) = raw_similarity(v_lstm, a_lstm, self)?;
        let gamma_va = prune_and_normalize(&beta_va, tau)?;
        let gamma_av = prune_and_normalize(&beta_av, tau)?;
        let (a_psp, v_psp) = aggregate(v_lstm, a_lstm, &gamma_va, &gamma_av, self, ctx)?;
        let f = fuse(&v_psp, &a_psp, self, ctx)?;
        Ok(PspOutput {
            beta_va,
            beta_av,
            gamma_va,
            gamma_av,
            a_psp,
            v_psp,
            f,
        })
    }
}

fn transpose_last(x: &Tensor) -> Result<Tensor> {
    let r = x.rank();
    Ok(x.transpose(r - 2, r - 1)?.contiguous()?)
}

/// `β^va = (v·W1_v)(a·W1_a)ᵀ / sqrt(d_l)` and `β^av = (β^va)ᵀ`.
pub fn raw_similarity(v_lstm: &Tensor, a_lstm: &Tensor, params: &PspParams) -> Result<(Tensor, Tensor)> {
    let vp = params.w1_v.forward(v_lstm)?;
    let ap = params.w1_a.forward(a_lstm)?;
    let beta_va = (vp.matmul(&transpose_last(&ap)?)? / (params.d_l as f64).sqrt())?;
    let beta_av = transpose_last(&beta_va)?;
    Ok((beta_va, beta_av))
}

/// ReLU, row ℓ1 normalization, zeroing of entries below `tau`, and a second
/// row ℓ1 normalization. Zero rows stay zero. The threshold mask is treated
/// as a constant for differentiation. `tau = -inf` keeps every connection
/// and `tau = 0` keeps every nonnegative one.
pub fn prune_and_normalize(beta: &Tensor, tau: f64) -> Result<Tensor> {
    let normalized = nn::l1_normalize_nonneg(&beta.relu()?)?;
    let keep = normalized.ge(tau)?.to_dtype(beta.dtype())?.detach();
    nn::l1_normalize_nonneg(&(normalized * keep)?)
}

/// `a_psp = γ^av·(v·W2_v) + a` and `v_psp = γ^va·(a·W2_a) + v`.
pub fn aggregate(
    v_lstm: &Tensor,
    a_lstm: &Tensor,
    gamma_va: &Tensor,
    gamma_av: &Tensor,
    params: &PspParams,
    ctx: &mut Ctx,
) -> Result<(Tensor, Tensor)> {
    let v_proj = ctx.dropout(&params.w2_v.forward(v_lstm)?)?;
    let a_proj = ctx.dropout(&params.w2_a.forward(a_lstm)?)?;
    let a_psp = (gamma_av.matmul(&v_proj)? + a_lstm)?;
    let v_psp = (gamma_va.matmul(&a_proj)? + v_lstm)?;
    Ok((a_psp, v_psp))
}

/// `f = ½[LN(v_psp·W3_v) + LN(a_psp·W3_a)]`.
pub fn fuse(v_psp: &Tensor, a_psp: &Tensor, params: &PspParams, ctx: &mut Ctx) -> Result<Tensor> {
    let v = params.ln_v.forward(&ctx.dropout(&params.w3_v.forward(v_psp)?)?)?;
    let a = params.ln_a.forward(&ctx.dropout(&params.w3_a.forward(a_psp)?)?)?;
    Ok(((v + a)? * 0.5)?)
}

/// Fraction of connections that survive pruning, per row averaged.
pub fn support_fraction(gamma: &Tensor) -> Result<f64> {
    let kept = gamma.gt(0.0)?.to_dtype(candle_core::DType::F64)?;
    nn::scalar(&kept.mean_all()?)
}

/// Row sums of a map, for invariant checks.
pub fn row_sums(gamma: &Tensor) -> Result<Vec<f64>> {
    nn::to_host(&gamma.sum(D::Minus1)?)
}
