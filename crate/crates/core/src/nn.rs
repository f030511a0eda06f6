//! Small layer toolkit over candle tensors: parameter storage with Xavier
//! initialization, linear and layer-norm layers, seeded dropout, and the
//! numerically stable reductions the losses need.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Floor for the denominator of zero-safe normalizations. All-zero rows map
/// to zero. Division backward squares the denominator, so the floor must
/// stay well above the `f32` underflow range.
pub const TINY: f64 = 1e-12;

/// Named trainable tensors, ordered by name.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    fn insert(&mut self, name: String, t: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(handle)
    }

    /// Overwrites one parameter in place, checking its shape.
    pub fn assign(&self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("model has no parameter {name}")))?;
        if var.dims() != shape {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: checkpoint shape {shape:?}, model shape {:?}",
                var.dims()
            )));
        }
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }

    /// Flattened `f32` copy of a parameter.
    pub fn to_f32(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("model has no parameter {name}")))?;
        let data = var.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Ok((var.dims().to_vec(), data))
    }
}

/// Registers parameters under a name prefix, drawing initial values from one
/// seeded generator.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Init {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn push<'b>(&'b mut self, name: &str) -> Init<'b> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Init {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn from_vec(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let t = Tensor::from_vec(data, shape, &self.store.device)?.to_dtype(self.store.dtype)?;
        let full = self.full_name(name);
        self.store.insert(full, t)
    }

    /// Glorot-uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<Tensor> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.from_vec(name, shape, data)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.from_vec(name, shape, vec![value; n])
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Linear> {
        let mut sub = self.push(name);
        let weight = sub.xavier("weight", &[d_in, d_out], d_in, d_out)?;
        let bias = if bias {
            Some(sub.constant("bias", &[d_out], 0.0)?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm> {
        let mut sub = self.push(name);
        Ok(LayerNorm {
            gamma: sub.constant("gamma", &[dim], 1.0)?,
            beta: sub.constant("beta", &[dim], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }
}

/// `y = x·W + b` with `W` stored as `d_in × d_out`. Accepts any leading
/// batch dimensions.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("rank >= 1");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, d_in))?.matmul(&self.weight)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out = dims;
        *out.last_mut().unwrap() = self.weight.dim(1)?;
        Ok(y.reshape(out)?)
    }

    pub fn d_out(&self) -> usize {
        self.weight.dims()[1]
    }
}

/// Per-row layer normalization over the last dimension with learned affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    /// Zero-mean, unit-variance rows before the affine map.
    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        Ok(centered.broadcast_div(&(var + self.eps)?.sqrt()?)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self
            .normalize(x)?
            .broadcast_mul(&self.gamma)?
            .broadcast_add(&self.beta)?)
    }
}

/// Forward-pass context: evaluation, or training with seeded dropout.
pub struct Ctx<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
    pub dropout: f64,
}

impl<'a> Ctx<'a> {
    pub fn eval() -> Self {
        Ctx {
            rng: None,
            dropout: 0.0,
        }
    }

    pub fn train(rng: &'a mut ChaCha8Rng, dropout: f64) -> Self {
        Ctx {
            rng: Some(rng),
            dropout,
        }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    /// Inverted dropout. Identity in evaluation mode.
    pub fn dropout(&mut self, x: &Tensor) -> Result<Tensor> {
        let p = self.dropout;
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x.clone());
        };
        if p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - p;
        let scale = (1.0 / keep) as f32;
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }

    /// Child generator for work that needs its own stream (e.g. positive
    /// sampling), derived deterministically from the context generator.
    pub fn fork_rng(&mut self) -> Option<ChaCha8Rng> {
        self.rng
            .as_deref_mut()
            .map(|r| ChaCha8Rng::seed_from_u64(r.random()))
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    // sigma(x) = (1 + tanh(x/2)) / 2, differentiable through core ops
    Ok(((x * 0.5)?.tanh()? * 0.5)?.affine(1.0, 0.5)?)
}

/// Softmax over the last dimension, shifted by the detached row maximum.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// `log Σ exp(x)` over the last dimension (kept as size-1 dim).
pub fn logsumexp_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let s = x.broadcast_sub(&m)?.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok((s + m)?)
}

/// Row-wise ℓ1 normalization of a nonnegative tensor over the last
/// dimension. All-zero rows stay zero.
pub fn l1_normalize_nonneg(x: &Tensor) -> Result<Tensor> {
    let s = x.sum_keepdim(D::Minus1)?.maximum(TINY)?;
    Ok(x.broadcast_div(&s)?)
}

/// ℓ2 normalization over the last dimension.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let n = x.sqr()?.sum_keepdim(D::Minus1)?.maximum(1e-24)?.sqrt()?;
    Ok(x.broadcast_div(&n)?)
}

/// Builds a tensor of the given dtype from `f32` host data.
pub fn tensor_from(data: Vec<f32>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Builds a tensor of the given dtype from `f64` host data.
pub fn tensor_from_f64(data: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Flattens any tensor to host `f64`.
pub fn to_host(x: &Tensor) -> Result<Vec<f64>> {
    Ok(x.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

pub fn scalar(x: &Tensor) -> Result<f64> {
    Ok(x.to_dtype(DType::F64)?.reshape(())?.to_scalar::<f64>()?)
}

/// Outcome of comparing autograd gradients with central finite differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Checks the gradient of a scalar function of one `f64` tensor against
/// central differences. An entry passes when `|g - n| <= atol + rtol·|n|`.
pub fn gradient_check<F>(f: F, x: &Tensor, eps: f64, rtol: f64, atol: f64) -> Result<GradCheck>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let var = Var::from_tensor(&x.to_dtype(DType::F64)?)?;
    let loss = f(var.as_tensor())?;
    let grads = loss.backward()?;
    let analytic = match grads.get(var.as_tensor()) {
        Some(g) => to_host(g)?,
        None => vec![0.0; x.elem_count()],
    };
    let base = to_host(x)?;
    let shape = x.shape().clone();
    let mut check = GradCheck {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        checked: base.len(),
        passed: true,
    };
    for i in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += eps;
        minus[i] -= eps;
        let fp = scalar(&f(&Tensor::from_vec(plus, shape.clone(), &Device::Cpu)?)?)?;
        let fm = scalar(&f(&Tensor::from_vec(minus, shape.clone(), &Device::Cpu)?)?)?;
        let numeric = (fp - fm) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs();
        check.max_abs_err = check.max_abs_err.max(err);
        check.max_rel_err = check.max_rel_err.max(err / numeric.abs().max(atol));
        if err > atol + rtol * numeric.abs() {
            check.passed = false;
        }
    }
    Ok(check)
}
