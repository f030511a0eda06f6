//! Classification heads and the supervised objectives.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Ctx, Init, Linear};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Two linear maps with a ReLU between them and a per-segment softmax.
#[derive(Debug, Clone)]
pub struct FullyHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl FullyHead {
    pub fn new(init: &mut Init, d_l: usize, d_h: usize, classes: usize) -> Result<Self> {
        Ok(FullyHead {
            hidden: init.linear("hidden", d_l, d_h, true)?,
            out: init.linear("out", d_h, classes, true)?,
        })
    }

    pub fn logits(&self, f: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let h = ctx.dropout(&self.hidden.forward(f)?.relu()?)?;
        self.out.forward(&h)
    }

    /// `[..., T, C]` segment class distributions.
    pub fn forward(&self, f: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        nn::softmax_last(&self.logits(f, ctx)?)
    }
}

#[derive(Debug, Clone)]
pub struct WeakOutput {
    /// Segment class scores `f^h`, `[..., T, C]`.
    pub fh: Tensor,
    /// Segment weights in (0, 1), `[..., T, 1]`.
    pub phi: Tensor,
    /// Video class distribution, `[..., C]`.
    pub o_weak: Tensor,
}

/// Segment scores `f^h = W5(W4 f)`, a sigmoid weight per segment from `W6`,
/// and a softmax over the temporal mean of the weighted scores.
#[derive(Debug, Clone)]
pub struct WeakHead {
    pub w4: Linear,
    pub w5: Linear,
    pub w6: Linear,
    pub weight_branch: bool,
}

impl WeakHead {
    pub fn new(init: &mut Init, d_l: usize, d_h: usize, classes: usize, weight_branch: bool) -> Result<Self> {
        Ok(WeakHead {
            w4: init.linear("w4", d_l, d_h, true)?,
            w5: init.linear("w5", d_h, classes, true)?,
            w6: init.linear("w6", classes, 1, true)?,
            weight_branch,
        })
    }

    pub fn forward(&self, f: &Tensor, ctx: &mut Ctx) -> Result<WeakOutput> {
        let fh = self.w5.forward(&ctx.dropout(&self.w4.forward(f)?)?)?;
        let phi = if self.weight_branch {
            nn::sigmoid(&self.w6.forward(&fh)?)?
        } else {
            let mut dims = fh.dims().to_vec();
            *dims.last_mut().expect("rank >= 1") = 1;
            Tensor::ones(dims, fh.dtype(), fh.device())?
        };
        let weighted = fh.broadcast_mul(&phi)?;
        let pooled = weighted.mean(fh.rank() - 2)?;
        let o_weak = nn::softmax_last(&pooled)?;
        Ok(WeakOutput { fh, phi, o_weak })
    }
}

/// `−(1/(T·C)) Σ_t Σ_c Y log O`, averaged over the batch.
pub fn loss_ce(o_fully: &Tensor, y_full: &Tensor) -> Result<Tensor> {
    if o_fully.dims() != y_full.dims() {
        return Err(Error::DimensionMismatch(format!(
            "predictions {:?} vs labels {:?}",
            o_fully.dims(),
            y_full.dims()
        )));
    }
    let log_o = o_fully.maximum(PROB_FLOOR)?.log()?;
    let n = o_fully.elem_count() as f64;
    Ok(((y_full * log_o)?.sum_all()? / -n)?)
}

/// Per-segment inner products `s_t = ⟨v_t, a_t⟩` divided by `Σ|s_t|`.
/// All-zero `s` maps to zero.
pub fn av_pair_similarity(v_psp: &Tensor, a_psp: &Tensor) -> Result<Tensor> {
    let s = (v_psp * a_psp)?.sum(D::Minus1)?;
    let norm = s.abs()?.sum_keepdim(D::Minus1)?.maximum(nn::TINY)?;
    Ok(s.broadcast_div(&norm)?)
}

/// Mean squared error between `S` and the ℓ1-normalized event mask.
pub fn loss_avpsp(s: &Tensor, g_normalized: &Tensor) -> Result<Tensor> {
    if s.dims() != g_normalized.dims() {
        return Err(Error::DimensionMismatch(format!(
            "similarity {:?} vs mask {:?}",
            s.dims(),
            g_normalized.dims()
        )));
    }
    Ok((s - g_normalized)?.sqr()?.mean_all()?)
}

/// Elementwise binary cross entropy averaged over classes and batch.
pub fn loss_weak(o_weak: &Tensor, y_weak: &Tensor) -> Result<Tensor> {
    if o_weak.dims() != y_weak.dims() {
        return Err(Error::DimensionMismatch(format!(
            "predictions {:?} vs labels {:?}",
            o_weak.dims(),
            y_weak.dims()
        )));
    }
    // floor `1 - o` separately: in f32 the upper clamp `1 - 1e-12` rounds to 1
    let pos = (y_weak * o_weak.maximum(PROB_FLOOR)?.log()?)?;
    let neg = (y_weak.affine(-1.0, 1.0)? * o_weak.affine(-1.0, 1.0)?.maximum(PROB_FLOOR)?.log()?)?;
    Ok(((pos + neg)?.mean_all()? * -1.0)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Fully,
    FullyRefined,
    Weak,
    WeakRefined,
    Sspsp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub avpsp: f64,
    pub spsa: f64,
    pub vpsa: f64,
    pub weak_vpsa: f64,
    pub ss: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas {
            avpsp: 100.0,
            spsa: 0.01,
            vpsa: 1.0,
            weak_vpsa: 0.005,
            ss: 0.01,
        }
    }
}

/// Component losses of one step. Unused parts stay `None`.
#[derive(Debug, Clone, Default)]
pub struct LossParts {
    pub ce: Option<Tensor>,
    pub avpsp: Option<Tensor>,
    pub spsa: Option<Tensor>,
    pub vpsa: Option<Tensor>,
    pub ss: Option<Tensor>,
    pub bce: Option<Tensor>,
}

fn need<'a>(part: &'a Option<Tensor>, name: &str, objective: Objective) -> Result<&'a Tensor> {
    part.as_ref()
        .ok_or_else(|| Error::Config(format!("objective {objective:?} needs the {name} loss")))
}

/// Weighted sum of the parts an objective uses.
pub fn total_objective(objective: Objective, parts: &LossParts, l: &Lambdas) -> Result<Tensor> {
    let term = |name: &str, part: &Option<Tensor>, w: f64| -> Result<Tensor> {
        Ok((need(part, name, objective)? * w)?)
    };
    let total = match objective {
        Objective::Fully => (term("ce", &parts.ce, 1.0)? + term("avpsp", &parts.avpsp, l.avpsp)?)?,
        Objective::FullyRefined => {
            let base = (term("ce", &parts.ce, 1.0)? + term("avpsp", &parts.avpsp, l.avpsp)?)?;
            ((base + term("spsa", &parts.spsa, l.spsa)?)? + term("vpsa", &parts.vpsa, l.vpsa)?)?
        }
        Objective::Weak => term("bce", &parts.bce, 1.0)?,
        Objective::WeakRefined => (term("bce", &parts.bce, 1.0)? + term("vpsa", &parts.vpsa, l.weak_vpsa)?)?,
        Objective::Sspsp => (term("ce", &parts.ce, 1.0)? + term("ss", &parts.ss, l.ss)?)?,
    };
    Ok(total)
}
