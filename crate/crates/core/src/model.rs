//! The full network: encoder, positive sample propagation and one head.

use candle_core::{DType, Tensor, D};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, EncoderOutput};
use crate::error::Result;
use crate::heads::{FullyHead, WeakHead, WeakOutput};
use crate::nn::{Ctx, Init, ParamStore};
use crate::psp::{PspConfig, PspOutput, PspParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Fully,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Projection width inside the similarity and the heads.
    pub d_h: usize,
    pub classes: usize,
    pub head: HeadKind,
    pub weight_branch: bool,
}

impl ModelConfig {
    pub fn new(d_a: usize, d_v: usize, classes: usize, head: HeadKind) -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                d_a,
                d_v,
                d_att: 128,
                d_l: 256,
                self_attention: false,
            },
            d_h: 64,
            classes,
            head,
            weight_branch: true,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Head {
    Fully(FullyHead),
    Weak(WeakHead),
}

pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub psp: PspParams,
    pub head: Head,
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub encoded: EncoderOutput,
    pub psp: PspOutput,
    /// Segment class distributions, `B×T×C`, fully supervised head only.
    pub o_fully: Option<Tensor>,
    pub weak: Option<WeakOutput>,
}

impl ModelOutput {
    /// Segment scores used for per-segment prediction: probabilities for the
    /// fully supervised head, `f^h` for the weak head.
    pub fn segment_scores(&self) -> &Tensor {
        match (&self.o_fully, &self.weak) {
            (Some(o), _) => o,
            (None, Some(w)) => &w.fh,
            (None, None) => unreachable!("a model always has one head"),
        }
    }

    /// Per-video mean of the fused features, `B×d_l`.
    pub fn video_vectors(&self) -> Result<Tensor> {
        Ok(self.psp.f.mean(D::Minus2)?)
    }
}

impl Model {
    /// Fresh Xavier-initialized model.
    pub fn new(config: ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let d_l = config.encoder.d_l;
        let encoder = Encoder::new(&mut init.push("encoder"), config.encoder)?;
        let psp = PspParams::new(&mut init.push("psp"), PspConfig { d_l, d_h: config.d_h })?;
        let head = match config.head {
            HeadKind::Fully => Head::Fully(FullyHead::new(&mut init.push("head"), d_l, config.d_h, config.classes)?),
            HeadKind::Weak => Head::Weak(WeakHead::new(
                &mut init.push("head"),
                d_l,
                config.d_h,
                config.classes,
                config.weight_branch,
            )?),
        };
        Ok(Model {
            config,
            store,
            encoder,
            psp,
            head,
        })
    }

    /// `audio: B×T×d_a`, `visual: B×T×N×d_v`.
    pub fn forward(&self, audio: &Tensor, visual: &Tensor, tau: f64, ctx: &mut Ctx) -> Result<ModelOutput> {
        let encoded = self.encoder.forward(audio, visual, ctx)?;
        let psp = self.psp.forward(&encoded.v_lstm, &encoded.a_lstm, tau, ctx)?;
        let (o_fully, weak) = match &self.head {
            Head::Fully(h) => (Some(h.forward(&psp.f, ctx)?), None),
            Head::Weak(h) => (None, Some(h.forward(&psp.f, ctx)?)),
        };
        Ok(ModelOutput {
            encoded,
            psp,
            o_fully,
            weak,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradient_check, to_host};
    use candle_core::Device;
    use rand::Rng;

    fn small(head: HeadKind) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                d_a: 3,
                d_v: 4,
                d_att: 3,
                d_l: 4,
                self_attention: false,
            },
            d_h: 3,
            classes: 3,
            head,
            weight_branch: true,
        }
    }

    fn inputs(b: usize, t: usize, cfg: &ModelConfig, seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (d_a, d_v) = (cfg.encoder.d_a, cfg.encoder.d_v);
        let a = Tensor::from_vec(r(b * t * d_a), (b, t, d_a), &Device::Cpu).unwrap();
        let v = Tensor::from_vec(r(b * t * 2 * d_v), (b, t, 2, d_v), &Device::Cpu).unwrap();
        (a, v)
    }

    #[test]
    fn output_shapes() {
        for head in [HeadKind::Fully, HeadKind::Weak] {
            let cfg = small(head);
            let model = Model::new(cfg, DType::F64, 0).unwrap();
            let (a, v) = inputs(2, 5, &cfg, 1);
            let out = model.forward(&a, &v, 0.095, &mut Ctx::eval()).unwrap();
            assert_eq!(out.psp.f.dims(), &[2, 5, 4]);
            assert_eq!(out.psp.gamma_va.dims(), &[2, 5, 5]);
            assert_eq!(out.segment_scores().dims(), &[2, 5, 3]);
            assert_eq!(out.video_vectors().unwrap().dims(), &[2, 4]);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::new(small(HeadKind::Fully), DType::F32, 9).unwrap();
        let b = Model::new(small(HeadKind::Fully), DType::F32, 9).unwrap();
        for ((na, va), (nb, vb)) in a.store.named().zip(b.store.named()) {
            assert_eq!(na, nb);
            assert_eq!(to_host(va.as_tensor()).unwrap(), to_host(vb.as_tensor()).unwrap());
        }
    }

    #[test]
    fn pipeline_gradient_matches_finite_differences() {
        // gradient of a head loss with respect to the audio input, through
        // attention, both LSTMs, propagation and the fully supervised head
        let cfg = small(HeadKind::Fully);
        let model = Model::new(cfg, DType::F64, 2).unwrap();
        let (a, v) = inputs(1, 3, &cfg, 3);
        let y = Tensor::from_vec(vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], (1, 3, 3), &Device::Cpu).unwrap();
        let g = gradient_check(
            |x| {
                let out = model.forward(x, &v, 0.0, &mut Ctx::eval())?;
                crate::heads::loss_ce(out.o_fully.as_ref().unwrap(), &y)
            },
            &a,
            1e-6,
            1e-4,
            1e-8,
        )
        .unwrap();
        assert!(g.passed, "{g:?}");
    }
}
