use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::conv::Conv1d;
use super::dense::{softmax, TimeDistributedDense};
use super::dropout::Dropout;
use super::lstm::{BiLstm, BiLstmCache, LstmCell};
use super::tensor::{Scalar, Tensor};
use super::{ArchConfig, NnError};

/// Conv stack, BiLSTM stack, dropout and a time-distributed dense softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub arch: ArchConfig,
    pub convs: Vec<Conv1d<S>>,
    pub lstms: Vec<BiLstm<S>>,
    pub dense: TimeDistributedDense<S>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: String,
    pub params: usize,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    /// Model input followed by every conv and BiLSTM output.
    acts: Vec<Tensor<S>>,
    lstm: Vec<BiLstmCache<S>>,
    mask: Option<Vec<S>>,
    dropped: Tensor<S>,
    pub probs: Tensor<S>,
}

impl<S: Scalar> Model<S> {
    /// All-zero parameters with the shapes implied by `arch`.
    pub fn zeros(arch: &ArchConfig) -> Result<Self, NnError> {
        arch.validate()?;
        let mut c_in = arch.input_channels;
        let mut convs = Vec::new();
        for &f in &arch.conv_filters {
            convs.push(Conv1d::zeros(arch.kernel_size, c_in, f, arch.conv_activation));
            c_in = f;
        }
        let mut lstms = Vec::new();
        for &u in &arch.lstm_units {
            lstms.push(BiLstm::zeros(c_in, u));
            c_in = 2 * u;
        }
        Ok(Self {
            arch: arch.clone(),
            convs,
            lstms,
            dense: TimeDistributedDense::zeros(c_in, arch.n_classes),
        })
    }

    /// Glorot-uniform kernels, orthogonal recurrent weights, forget bias 1.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self, NnError> {
        let mut m = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for conv in &mut m.convs {
            let (k, ci, co) = (conv.kernel_size(), conv.in_channels(), conv.out_channels());
            glorot(&mut conv.kernel, k * ci, k * co, &mut rng);
        }
        for layer in &mut m.lstms {
            for cell in [&mut layer.forward, &mut layer.backward] {
                init_cell(cell, &mut rng);
            }
        }
        let (d, k) = (m.dense.input_size(), m.dense.output_size());
        glorot(&mut m.dense.weights, d, k, &mut rng);
        Ok(m)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.arch).expect("architecture already validated")
    }

    /// Per-layer trainable parameter counts, in layer order.
    pub fn layer_counts(&self) -> Vec<LayerCount> {
        let mut out: Vec<LayerCount> = self
            .convs
            .iter()
            .enumerate()
            .map(|(i, c)| LayerCount {
                layer: format!("conv{i}"),
                params: c.param_count(),
            })
            .collect();
        out.extend(self.lstms.iter().enumerate().map(|(i, l)| LayerCount {
            layer: format!("bilstm{i}"),
            params: l.param_count(),
        }));
        out.push(LayerCount {
            layer: "dense".into(),
            params: self.dense.param_count(),
        });
        out
    }

    pub fn param_count(&self) -> usize {
        self.layer_counts().iter().map(|l| l.params).sum()
    }

    /// Parameter tensors in checkpoint order with their names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.kernel"), &c.kernel));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        for (i, l) in self.lstms.iter().enumerate() {
            for (dir, cell) in [("fwd", &l.forward), ("bwd", &l.backward)] {
                out.push((format!("bilstm{i}.{dir}.input_weights"), &cell.input_weights));
                out.push((format!("bilstm{i}.{dir}.recurrent_weights"), &cell.recurrent_weights));
                out.push((format!("bilstm{i}.{dir}.bias"), &cell.bias));
            }
        }
        out.push(("dense.weights".into(), &self.dense.weights));
        out.push(("dense.bias".into(), &self.dense.bias));
        out
    }

    /// Mutable tensors in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.kernel);
            out.push(&mut c.bias);
        }
        for l in &mut self.lstms {
            for cell in [&mut l.forward, &mut l.backward] {
                out.push(&mut cell.input_weights);
                out.push(&mut cell.recurrent_weights);
                out.push(&mut cell.bias);
            }
        }
        out.push(&mut self.dense.weights);
        out.push(&mut self.dense.bias);
        out
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let mut out = Model::<T>::zeros(&self.arch).expect("architecture already validated");
        for (dst, (_, src)) in out.tensors_mut().into_iter().zip(self.named_tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// `x` is `[B, T, input_channels]`; returns softmax probabilities
    /// `[B, T, n_classes]` inside the cache. Dropout is only active when
    /// `training` is set and is the only consumer of `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Tensor<S>,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardCache<S>, NnError> {
        let mut acts = vec![x.clone()];
        for conv in &self.convs {
            let y = conv.forward(acts.last().expect("input present"))?;
            acts.push(y);
        }
        let mut lstm = Vec::with_capacity(self.lstms.len());
        for layer in &self.lstms {
            let (y, c) = layer.forward(acts.last().expect("input present"))?;
            acts.push(y);
            lstm.push(c);
        }
        let dropout = Dropout::new(self.arch.dropout)?;
        let (dropped, mask) = dropout.forward(acts.last().expect("input present"), training, rng);
        let probs = softmax(&self.dense.forward(&dropped)?);
        Ok(ForwardCache {
            acts,
            lstm,
            mask,
            dropped,
            probs,
        })
    }

    /// Inference probabilities (dropout off).
    pub fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(x, false, &mut rng)?.probs)
    }

    /// Gradients of every parameter given `dlogits`, the loss gradient
    /// w.r.t. the pre-softmax scores.
    pub fn backward(&self, cache: ForwardCache<S>, dlogits: &Tensor<S>) -> Result<Model<S>, NnError> {
        let ForwardCache {
            acts,
            lstm,
            mask,
            dropped,
            probs,
        } = cache;
        if acts.len() != 1 + self.convs.len() + self.lstms.len() || lstm.len() != self.lstms.len() {
            return Err(NnError::CacheMismatch("layer count differs from model".into()));
        }
        if dlogits.shape() != probs.shape() {
            return Err(NnError::CacheMismatch(format!(
                "gradient shape {:?} vs output {:?}",
                dlogits.shape(),
                probs.shape()
            )));
        }
        let mut grads = self.zeros_like();
        let d_drop = self.dense.backward(&dropped, dlogits, &mut grads.dense)?;
        let mut dy = Dropout::backward(&d_drop, mask.as_deref());
        let n_conv = self.convs.len();
        for (i, cache) in lstm.into_iter().enumerate().rev() {
            let x = &acts[n_conv + i];
            let y = &acts[n_conv + i + 1];
            dy = self.lstms[i].backward(x, y, cache, &dy, &mut grads.lstms[i])?;
        }
        for i in (0..n_conv).rev() {
            dy = self.convs[i].backward(&acts[i], &acts[i + 1], &dy, &mut grads.convs[i])?;
        }
        Ok(grads)
    }
}

fn glorot<S: Scalar, R: Rng>(t: &mut Tensor<S>, fan_in: usize, fan_out: usize, rng: &mut R) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in t.data_mut() {
        *v = S::of(rng.gen_range(-limit..limit));
    }
}

/// Fills `t` (`[rows x cols]`, rows <= cols) with orthonormal rows.
fn orthogonal<S: Scalar, R: Rng>(t: &mut Tensor<S>, rng: &mut R) {
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while q.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        // two passes keep the rows orthogonal to working precision
        for _ in 0..2 {
            for u in &q {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, &y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            q.push(v);
        }
    }
    for (dst, src) in t.data_mut().chunks_exact_mut(cols).zip(&q) {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = S::of(s);
        }
    }
}

fn init_cell<S: Scalar, R: Rng>(cell: &mut LstmCell<S>, rng: &mut R) {
    let (d, h) = (cell.input_size(), cell.units());
    glorot(&mut cell.input_weights, d, 4 * h, rng);
    orthogonal(&mut cell.recurrent_weights, rng);
    let b = cell.bias.data_mut();
    b.iter_mut().for_each(|v| *v = S::zero());
    b[..h].iter_mut().for_each(|v| *v = S::one());
}
