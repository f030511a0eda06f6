//! Early fusion and temporal encoding.
//!
//! Audio-guided visual attention pools each visual map into one vector
//! using additive attention conditioned on the synchronized audio segment.
//! Two independent bidirectional LSTMs then encode the audio and attended
//! visual sequences into `d_l`-dimensional features.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{self, Ctx, Init, Linear};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_a: usize,
    pub d_v: usize,
    pub d_att: usize,
    /// Output width of each Bi-LSTM; each direction gets `d_l / 2`.
    pub d_l: usize,
    /// Adds single-head self-attention before the Bi-LSTMs (SAPSP ablation).
    pub self_attention: bool,
}

/// Additive audio-guided attention over the `N` spatial positions.
#[derive(Debug, Clone)]
pub struct Avga {
    pub proj_a: Linear,
    pub proj_v: Linear,
    pub score: Linear,
}

impl Avga {
    pub fn new(init: &mut Init, d_a: usize, d_v: usize, d_att: usize) -> Result<Self> {
        Ok(Avga {
            proj_a: init.linear("proj_a", d_a, d_att, true)?,
            proj_v: init.linear("proj_v", d_v, d_att, true)?,
            score: init.linear("score", d_att, 1, false)?,
        })
    }

    /// `audio`: `B×T×d_a`, `visual`: `B×T×N×d_v`. Returns the attended
    /// visual features `B×T×d_v` and the attention weights `B×T×N`.
    pub fn forward(&self, audio: &Tensor, visual: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, t, n, d_v) = visual.dims4()?;
        let pa = self.proj_a.forward(audio)?.unsqueeze(2)?;
        let pv = self.proj_v.forward(visual)?;
        let z = pv.broadcast_add(&pa)?.tanh()?;
        let scores = self.score.forward(&z)?.squeeze(D::Minus1)?;
        let alpha = nn::softmax_last(&scores)?;
        let pooled = alpha
            .reshape((b * t, 1, n))?
            .matmul(&visual.reshape((b * t, n, d_v))?)?
            .reshape((b, t, d_v))?;
        Ok((pooled, alpha))
    }

    /// Single segment: `audio_t` is `d_a`, `visual_t` is `N×d_v`.
    pub fn attend(&self, audio_t: &Tensor, visual_t: &Tensor) -> Result<(Tensor, Tensor)> {
        let (n, d_v) = visual_t.dims2()?;
        let d_a = audio_t.dim(0)?;
        let (out, alpha) = self.forward(
            &audio_t.reshape((1, 1, d_a))?,
            &visual_t.reshape((1, 1, n, d_v))?,
        )?;
        Ok((out.reshape(d_v)?, alpha.reshape(n)?))
    }
}

/// One LSTM direction. Gates are packed `[input, forget, cell, output]`.
#[derive(Debug, Clone)]
pub struct LstmDirection {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
    pub hidden: usize,
}

impl LstmDirection {
    fn new(init: &mut Init, name: &str, d_in: usize, hidden: usize) -> Result<Self> {
        let mut sub = init.push(name);
        // Xavier per gate: every gate block is d_in × hidden (or hidden × hidden)
        Ok(LstmDirection {
            w_ih: sub.xavier("w_ih", &[d_in, 4 * hidden], d_in, hidden)?,
            w_hh: sub.xavier("w_hh", &[hidden, 4 * hidden], hidden, hidden)?,
            bias: sub.constant("bias", &[4 * hidden], 0.0)?,
            hidden,
        })
    }

    /// Runs over `x: B×T×d_in` in the given time order and returns the
    /// hidden states indexed by original time step.
    fn run(&self, x: &Tensor, reverse: bool) -> Result<Vec<Tensor>> {
        let (b, t, d_in) = x.dims3()?;
        let h = self.hidden;
        let xp = x
            .reshape((b * t, d_in))?
            .matmul(&self.w_ih)?
            .broadcast_add(&self.bias)?
            .reshape((b, t, 4 * h))?;
        let mut hs = vec![None; t];
        let mut hidden = Tensor::zeros((b, h), x.dtype(), x.device())?;
        let mut cell = hidden.clone();
        let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        for step in order {
            let gates = (xp.narrow(1, step, 1)?.squeeze(1)? + hidden.matmul(&self.w_hh)?)?;
            let i = nn::sigmoid(&gates.narrow(1, 0, h)?)?;
            let f = nn::sigmoid(&gates.narrow(1, h, h)?)?;
            let g = gates.narrow(1, 2 * h, h)?.tanh()?;
            let o = nn::sigmoid(&gates.narrow(1, 3 * h, h)?)?;
            cell = ((f * &cell)? + (i * g)?)?;
            hidden = (o * cell.tanh()?)?;
            hs[step] = Some(hidden.clone());
        }
        Ok(hs.into_iter().map(|h| h.expect("every step visited")).collect())
    }
}

/// Bidirectional LSTM; output `B×T×2h` is `[forward ; backward]`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

impl BiLstm {
    pub fn new(init: &mut Init, d_in: usize, d_out: usize) -> Result<Self> {
        assert!(d_out % 2 == 0, "Bi-LSTM output width must be even");
        Ok(BiLstm {
            forward: LstmDirection::new(init, "fwd", d_in, d_out / 2)?,
            backward: LstmDirection::new(init, "bwd", d_in, d_out / 2)?,
        })
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let fwd = Tensor::stack(&self.forward.run(x, false)?, 1)?;
        let bwd = Tensor::stack(&self.backward.run(x, true)?, 1)?;
        Ok(Tensor::cat(&[fwd, bwd], 2)?)
    }
}

/// Single-head scaled dot-product self-attention over time with a residual
/// connection.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

impl SelfAttention {
    pub fn new(init: &mut Init, d: usize) -> Result<Self> {
        Ok(SelfAttention {
            query: init.linear("query", d, d, false)?,
            key: init.linear("key", d, d, false)?,
            value: init.linear("value", d, d, false)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dim(D::Minus1)? as f64;
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? / d.sqrt())?;
        let attn = nn::softmax_last(&scores)?;
        Ok((x + attn.matmul(&v)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub avga: Avga,
    pub self_attn: Option<(SelfAttention, SelfAttention)>,
    pub lstm_a: BiLstm,
    pub lstm_v: BiLstm,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub a_lstm: Tensor,
    pub v_lstm: Tensor,
    pub attention: Tensor,
}

impl Encoder {
    pub fn new(init: &mut Init, config: EncoderConfig) -> Result<Self> {
        let avga = Avga::new(&mut init.push("avga"), config.d_a, config.d_v, config.d_att)?;
        let self_attn = if config.self_attention {
            Some((
                SelfAttention::new(&mut init.push("self_attn_a"), config.d_a)?,
                SelfAttention::new(&mut init.push("self_attn_v"), config.d_v)?,
            ))
        } else {
            None
        };
        Ok(Encoder {
            config,
            avga,
            self_attn,
            lstm_a: BiLstm::new(&mut init.push("lstm_a"), config.d_a, config.d_l)?,
            lstm_v: BiLstm::new(&mut init.push("lstm_v"), config.d_v, config.d_l)?,
        })
    }

    pub fn forward(&self, audio: &Tensor, visual: &Tensor, _ctx: &mut Ctx) -> Result<EncoderOutput> {
        let (mut v, attention) = self.avga.forward(audio, visual)?;
        let mut a = audio.clone();
        if let Some((sa_a, sa_v)) = &self.self_attn {
            a = sa_a.forward(&a)?;
            v = sa_v.forward(&v)?;
        }
        Ok(EncoderOutput {
            a_lstm: self.lstm_a.encode(&a)?,
            v_lstm: self.lstm_v.encode(&v)?,
            attention,
        })
    }
}
