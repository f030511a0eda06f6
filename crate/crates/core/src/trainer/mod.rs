//! Staged training: Adam with per-stage learning rates, gradient clipping,
//! early stopping on validation accuracy, metrics logging and checkpoints.

mod batch;
mod checkpoint;
mod config;
mod sweep;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::mpsc;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use batch::{build_batches, Batch};
pub use checkpoint::{Checkpoint, CheckpointManifest, CheckpointMetrics, TensorEntry};
pub use config::{config_hash, parse_tau, tau_serde, StageSpec, TrainConfig, TrainMode, Variant};
pub use sweep::{sweep_k_theta, sweep_tau, SweepRow, SweepTable, K_GRID, TAU_GRID, THETA_GRID};

use crate::contrast::{loss_spsa, loss_sspsp, loss_vpsa, SegmentPlan};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::heads::{self, LossParts, Objective};
use crate::model::{Model, ModelConfig, ModelOutput};
use crate::nn::{scalar, Ctx};
use crate::encoder::EncoderConfig;

/// Seed offset for the positive draws used when scoring validation loss, so
/// that validation is independent of training randomness.
const VAL_SEED_SALT: u64 = 0x7a1d_a7e5;

/// Scalar loss values of one step or one epoch average.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    /// Cross entropy, or binary cross entropy for the weak head.
    pub ce: f64,
    pub avpsp: f64,
    pub spsa: f64,
    pub vpsa: f64,
    pub ss: f64,
}

impl LossValues {
    fn add_scaled(&mut self, other: &LossValues, w: f64) {
        self.total += other.total * w;
        self.ce += other.ce * w;
        self.avpsp += other.avpsp * w;
        self.spsa += other.spsa * w;
        self.vpsa += other.vpsa * w;
        self.ss += other.ss * w;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Partition,
    pub losses: LossValues,
    pub accuracy: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,loss_total,loss_ce,loss_avpsp,loss_spsa,loss_vpsa,loss_ss,accuracy";

pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        let l = &r.losses;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.epoch, r.split, l.total, l.ce, l.avpsp, l.spsa, l.vpsa, l.ss, r.accuracy
        ));
    }
    out
}

pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Model configuration for a fresh stage.
pub fn model_config(cfg: &TrainConfig, data: &Dataset) -> Result<ModelConfig> {
    let dims = data.dims()?;
    Ok(ModelConfig {
        encoder: EncoderConfig {
            d_a: dims.d_a,
            d_v: dims.d_v,
            d_att: cfg.d_att,
            d_l: cfg.d_l,
            self_attention: cfg.variant.sapsp,
        },
        d_h: cfg.d_h,
        classes: dims.c,
        head: cfg.stage().head,
        weight_branch: !cfg.variant.no_weight_branch,
    })
}

/// Resolves the starting model for a stage and enforces the stage order.
pub fn init_model(cfg: &TrainConfig, data: &Dataset, init: Option<&Checkpoint>, seed: u64) -> Result<Model> {
    let loaded;
    let init = match (init, &cfg.init_checkpoint) {
        (Some(c), _) => Some(c),
        (None, Some(path)) => {
            loaded = Checkpoint::load(path)?;
            Some(&loaded)
        }
        (None, None) => None,
    };
    let stage = cfg.stage();
    match (stage.requires, init) {
        (None, None) => Model::new(model_config(cfg, data)?, DType::F32, seed),
        (None, Some(c)) => Err(Error::StageOrder(format!(
            "mode {} starts from Xavier initialization but an init checkpoint (mode {}) was given",
            cfg.mode, c.manifest.mode
        ))),
        (Some(req), None) => Err(Error::StageOrder(format!(
            "mode {} must start from a {} checkpoint",
            cfg.mode,
            names(req)
        ))),
        (Some(req), Some(c)) => {
            if !req.contains(&c.manifest.mode) {
                return Err(Error::StageOrder(format!(
                    "mode {} must start from a {} checkpoint, got a {} checkpoint",
                    cfg.mode,
                    names(req),
                    c.manifest.mode
                )));
            }
            let mc = c.manifest.model;
            let dims = data.dims()?;
            if (mc.encoder.d_a, mc.encoder.d_v, mc.classes) != (dims.d_a, dims.d_v, dims.c) {
                return Err(Error::DimensionMismatch(format!(
                    "checkpoint expects d_a={}, d_v={}, C={} but the data has d_a={}, d_v={}, C={}",
                    mc.encoder.d_a, mc.encoder.d_v, mc.classes, dims.d_a, dims.d_v, dims.c
                )));
            }
            c.to_model()
        }
    }
}

fn names(modes: &[TrainMode]) -> String {
    modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(" or ")
}

/// Forward pass plus every loss the stage uses. Parts the objective needs
/// but the stage disables are zero.
pub fn step_losses(
    model: &Model,
    batch: &Batch,
    cfg: &TrainConfig,
    ctx: &mut Ctx,
    positive_rng: &mut ChaCha8Rng,
) -> Result<(Tensor, LossValues, ModelOutput)> {
    let stage = cfg.stage();
    let out = model.forward(&batch.audio, &batch.visual, cfg.effective_tau(), ctx)?;
    let zero = Tensor::zeros((), batch.audio.dtype(), batch.audio.device())?;
    let mut parts = LossParts::default();
    match stage.objective {
        Objective::Fully | Objective::FullyRefined | Objective::Sspsp => {
            let o = out.o_fully.as_ref().expect("fully supervised head");
            parts.ce = Some(heads::loss_ce(o, &batch.y_full)?);
            if stage.objective != Objective::Sspsp {
                let s = heads::av_pair_similarity(&out.psp.v_psp, &out.psp.a_psp)?;
                parts.avpsp = Some(heads::loss_avpsp(&s, &batch.g_normalized)?);
            }
        }
        Objective::Weak | Objective::WeakRefined => {
            let w = out.weak.as_ref().expect("weak head");
            parts.bce = Some(heads::loss_weak(&w.o_weak, &batch.y_weak)?);
        }
    }
    if stage.objective == Objective::FullyRefined {
        parts.spsa = Some(zero.clone());
        parts.vpsa = Some(zero.clone());
    }
    if stage.spsa {
        let plan = SegmentPlan::sample(batch.event.clone(), positive_rng);
        parts.spsa = Some(loss_spsa(&out.psp.f, &plan, cfg.eta)?.loss);
    }
    if stage.vpsa {
        let (keep, cats): (Vec<u32>, Vec<usize>) = batch
            .categories
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| (i as u32, c)))
            .unzip();
        parts.vpsa = Some(if keep.is_empty() {
            zero.clone()
        } else {
            let idx = Tensor::new(keep, out.psp.f.device())?;
            let video = out.video_vectors()?.index_select(&idx, 0)?;
            loss_vpsa(&video, &cats, cfg.k, cfg.theta)?.loss
        });
    }
    if stage.ss {
        let (b, t, d) = out.psp.a_psp.dims3()?;
        let a = out.psp.a_psp.reshape((b * t, d))?;
        let v = out.psp.v_psp.reshape((b * t, d))?;
        parts.ss = Some(loss_sspsp(&a, &v, cfg.eta_prime)?);
    }
    let total = heads::total_objective(stage.objective, &parts, &cfg.lambdas)?;
    let val = |p: &Option<Tensor>| p.as_ref().map(scalar).transpose().map(|v| v.unwrap_or(0.0));
    let values = LossValues {
        total: scalar(&total)?,
        ce: match stage.objective {
            Objective::Weak | Objective::WeakRefined => val(&parts.bce)?,
            _ => val(&parts.ce)?,
        },
        avpsp: val(&parts.avpsp)?,
        spsa: val(&parts.spsa)?,
        vpsa: val(&parts.vpsa)?,
        ss: val(&parts.ss)?,
    };
    Ok((total, values, out))
}

/// Per-segment argmax of a `B×T×C` score tensor.
pub fn argmax_segments(scores: &Tensor) -> Result<Vec<Vec<usize>>> {
    let idx = scores.argmax(candle_core::D::Minus1)?.to_dtype(DType::U32)?;
    Ok(idx
        .to_vec2::<u32>()?
        .into_iter()
        .map(|r| r.into_iter().map(|x| x as usize).collect())
        .collect())
}

fn count_correct(pred: &[Vec<usize>], truth: &[Vec<usize>]) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for (p, t) in pred.iter().zip(truth) {
        correct += p.iter().zip(t).filter(|(a, b)| a == b).count();
        total += t.len();
    }
    (correct, total)
}

/// Scales gradients in place so that their global ℓ2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut candle_core::backprop::GradStore, model: &Model, max_norm: f64) -> Result<f64> {
    let vars = model.store.vars();
    let mut sq = 0.0;
    for v in &vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += scalar(&g.sqr()?.sum_all()?)?;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for v in &vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}

/// Loss and accuracy of `model` on `ids` without dropout.
pub fn evaluate_split(model: &Model, data: &Dataset, ids: &[String], cfg: &TrainConfig) -> Result<(LossValues, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ VAL_SEED_SALT);
    let mut acc = LossValues::default();
    let (mut correct, mut total) = (0, 0);
    for chunk in ids.chunks(cfg.batch_size.max(1)) {
        let batch = Batch::build(data, chunk, DType::F32)?;
        let (_, values, out) = step_losses(model, &batch, cfg, &mut Ctx::eval(), &mut rng)?;
        acc.add_scaled(&values, chunk.len() as f64 / ids.len() as f64);
        let (c, t) = count_correct(&argmax_segments(out.segment_scores())?, &batch.classes);
        correct += c;
        total += t;
    }
    Ok((acc, correct as f64 / total.max(1) as f64))
}

/// Trains one stage. `init` overrides `cfg.init_checkpoint`. When `out_dir`
/// is given, the best checkpoint goes to `out_dir/checkpoint` and the log to
/// `out_dir/metrics.csv`.
pub fn train_stage(
    cfg: &TrainConfig,
    data: &Dataset,
    init: Option<&Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let stage = cfg.stage();
    let train_ids = data.subset_ids(Partition::Train, stage.kinds);
    if train_ids.is_empty() {
        return Err(Error::Data(format!("mode {} has no training videos", cfg.mode)));
    }
    let val_ids = data.split.val.clone();
    let test_ids = data.split.test.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init_seed: u64 = rng.random();
    let model = init_model(cfg, data, init, init_seed)?;
    let params = ParamsAdamW {
        lr: cfg.effective_lr(),
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut opt = AdamW::new(model.store.vars(), params)?;

    let mut history = Vec::new();
    let mut best: Option<(f64, f64, usize, Checkpoint)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.effective_epochs() {
        let batches = build_batches(&train_ids, cfg.batch_size, &mut rng);
        let mut epoch_loss = LossValues::default();
        let (mut correct, mut total) = (0, 0);
        let mut train_step = |batch: Batch, rng: &mut ChaCha8Rng| -> Result<()> {
            let mut pos_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let mut ctx = Ctx::train(rng, cfg.dropout);
            let (loss, values, out) = step_losses(&model, &batch, cfg, &mut ctx, &mut pos_rng)?;
            if !values.total.is_finite() {
                return Err(Error::Data(format!("non-finite loss at epoch {epoch}")));
            }
            let mut grads = loss.backward()?;
            let norm = clip_gradients(&mut grads, &model, cfg.clip_norm)?;
            log::debug!("{} step: loss {:.5} grad norm {norm:.4}", cfg.mode, values.total);
            opt.step(&grads)?;
            epoch_loss.add_scaled(&values, batch.len() as f64 / train_ids.len() as f64);
            let (c, t) = count_correct(&argmax_segments(out.segment_scores())?, &batch.classes);
            correct += c;
            total += t;
            Ok(())
        };
        if cfg.prefetch {
            std::thread::scope(|scope| -> Result<()> {
                let (tx, rx) = mpsc::sync_channel::<Result<Batch>>(1);
                let batches = &batches;
                scope.spawn(move || {
                    for ids in batches {
                        if tx.send(Batch::build(data, ids, DType::F32)).is_err() {
                            break;
                        }
                    }
                });
                for batch in rx {
                    train_step(batch?, &mut rng)?;
                }
                Ok(())
            })?;
        } else {
            for ids in &batches {
                train_step(Batch::build(data, ids, DType::F32)?, &mut rng)?;
            }
        }
        let train_acc = correct as f64 / total.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            split: Partition::Train,
            losses: epoch_loss,
            accuracy: train_acc,
        });
        let (val_loss, val_acc) = if val_ids.is_empty() {
            (epoch_loss, train_acc)
        } else {
            let (l, a) = evaluate_split(&model, data, &val_ids, cfg)?;
            history.push(EpochRecord {
                epoch,
                split: Partition::Val,
                losses: l,
                accuracy: a,
            });
            (l, a)
        };
        log::info!(
            "{} epoch {epoch}: train loss {:.5} acc {:.4}, val loss {:.5} acc {:.4}",
            cfg.mode,
            epoch_loss.total,
            train_acc,
            val_loss.total,
            val_acc
        );
        let improved = match &best {
            None => true,
            Some((acc, loss, _, _)) => val_acc > *acc || (val_acc == *acc && val_loss.total < *loss),
        };
        if improved {
            let metrics = CheckpointMetrics {
                val_accuracy: val_acc,
                val_loss: val_loss.total,
                train_loss: epoch_loss.total,
            };
            best = Some((val_acc, val_loss.total, epoch, Checkpoint::capture(&model, cfg, epoch, metrics)?));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("{} early stop at epoch {epoch}", cfg.mode);
                break;
            }
        }
    }
    let (val_accuracy, _, best_epoch, checkpoint) = best.expect("at least one epoch ran");
    checkpoint.apply(&model)?;
    let test_accuracy = if test_ids.is_empty() {
        None
    } else {
        Some(evaluate_split(&model, data, &test_ids, cfg)?.1)
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint.save(&dir.join("checkpoint"))?;
        let path = dir.join("metrics.csv");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(metrics_csv(&history).as_bytes())
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainOutcome {
        model,
        checkpoint,
        history,
        best_epoch,
        val_accuracy,
        test_accuracy,
    })
}

/// Per-video outputs of a trained model.
#[derive(Debug, Clone)]
pub struct Inference {
    pub ids: Vec<String>,
    /// `T×C` segment scores (probabilities, or `f^h` for the weak head).
    pub scores: Vec<Array2<f32>>,
    /// `T×d_l` fused features.
    pub features: Vec<Array2<f32>>,
    /// `T×T` pruned visual-to-audio maps.
    pub gamma_va: Vec<Array2<f32>>,
    pub predictions: Vec<Vec<usize>>,
}

fn split_rows(t: &Tensor) -> Result<Vec<Array2<f32>>> {
    let (b, r, c) = t.dims3()?;
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok((0..b)
        .map(|i| Array2::from_shape_vec((r, c), flat[i * r * c..(i + 1) * r * c].to_vec()).expect("shape"))
        .collect())
}

/// Runs the model in evaluation mode over `ids`.
pub fn infer(model: &Model, data: &Dataset, ids: &[String], tau: f64, batch_size: usize) -> Result<Inference> {
    let mut inf = Inference {
        ids: ids.to_vec(),
        scores: Vec::new(),
        features: Vec::new(),
        gamma_va: Vec::new(),
        predictions: Vec::new(),
    };
    for chunk in ids.chunks(batch_size.max(1)) {
        let batch = Batch::build(data, chunk, DType::F32)?;
        let out = model.forward(&batch.audio, &batch.visual, tau, &mut Ctx::eval())?;
        inf.predictions.extend(argmax_segments(out.segment_scores())?);
        inf.scores.extend(split_rows(out.segment_scores())?);
        inf.features.extend(split_rows(&out.psp.f)?);
        inf.gamma_va.extend(split_rows(&out.psp.gamma_va)?);
    }
    Ok(inf)
}
