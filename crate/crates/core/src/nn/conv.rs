use serde::{Deserialize, Serialize};

use super::tensor::{gemm, MatMut, MatRef, Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

/// Same-length 1D convolution with kernel `[M x in x out]`.
///
/// Odd kernels get `(M-1)/2` zeros on both sides; even kernels get one more
/// zero on the right than on the left so the length is still preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<S> {
    pub kernel: Tensor<S>,
    pub bias: Tensor<S>,
    pub activation: Activation,
}

impl<S: Scalar> Conv1d<S> {
    pub fn zeros(kernel_size: usize, in_ch: usize, out_ch: usize, activation: Activation) -> Self {
        Self {
            kernel: Tensor::zeros(&[kernel_size, in_ch, out_ch]),
            bias: Tensor::zeros(&[out_ch]),
            activation,
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    fn left_pad(&self) -> usize {
        (self.kernel_size() - 1) / 2
    }

    /// Output rows `[lo, hi)` that read input row `t + shift`.
    fn valid_rows(t_len: usize, shift: isize) -> (usize, usize) {
        let lo = (-shift).max(0) as usize;
        let hi = (t_len as isize - shift).clamp(0, t_len as isize) as usize;
        (lo.min(hi), hi)
    }

    /// `x` is `[B, T, in]`; returns `[B, T, out]` after the activation.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>, NnError> {
        let (b, t, c_in) = dims3(x)?;
        if c_in != self.in_channels() {
            return Err(NnError::Shape(format!(
                "conv expects {} input channels, got {c_in}",
                self.in_channels()
            )));
        }
        let c_out = self.out_channels();
        let m = self.kernel_size();
        let mut out = Tensor::zeros(&[b, t, c_out]);
        let bias = self.bias.data();
        for row in out.data_mut().chunks_exact_mut(c_out) {
            row.copy_from_slice(bias);
        }
        let xd = x.data();
        let w = self.kernel.data();
        for bi in 0..b {
            let xb = &xd[bi * t * c_in..(bi + 1) * t * c_in];
            let ob = &mut out.data_mut()[bi * t * c_out..(bi + 1) * t * c_out];
            for k in 0..m {
                let shift = k as isize - self.left_pad() as isize;
                let (lo, hi) = Self::valid_rows(t, shift);
                if lo >= hi {
                    continue;
                }
                let src = (lo as isize + shift) as usize;
                gemm(
                    S::one(),
                    MatRef::new(&xb[src * c_in..], hi - lo, c_in),
                    MatRef::new(&w[k * c_in * c_out..(k + 1) * c_in * c_out], c_in, c_out),
                    S::one(),
                    MatMut::new(&mut ob[lo * c_out..hi * c_out], hi - lo, c_out),
                );
            }
        }
        if self.activation == Activation::Relu {
            out.data_mut()
                .iter_mut()
                .for_each(|v| *v = v.max(S::zero()));
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(
        &self,
        x: &Tensor<S>,
        y: &Tensor<S>,
        dy: &Tensor<S>,
        grads: &mut Conv1d<S>,
    ) -> Result<Tensor<S>, NnError> {
        let (b, t, c_in) = dims3(x)?;
        let c_out = self.out_channels();
        if y.shape() != [b, t, c_out] || dy.shape() != y.shape() {
            return Err(NnError::Shape("conv backward: cached output shape differs".into()));
        }
        let m = self.kernel_size();
        let mut dpre = dy.clone();
        if self.activation == Activation::Relu {
            for (d, &o) in dpre.data_mut().iter_mut().zip(y.data()) {
                if o <= S::zero() {
                    *d = S::zero();
                }
            }
        }
        let gb = grads.bias.data_mut();
        for row in dpre.data().chunks_exact(c_out) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = Tensor::zeros(&[b, t, c_in]);
        let xd = x.data();
        let w = self.kernel.data();
        for bi in 0..b {
            let xb = &xd[bi * t * c_in..(bi + 1) * t * c_in];
            let db = &dpre.data()[bi * t * c_out..(bi + 1) * t * c_out];
            let dxb = &mut dx.data_mut()[bi * t * c_in..(bi + 1) * t * c_in];
            for k in 0..m {
                let shift = k as isize - self.left_pad() as isize;
                let (lo, hi) = Self::valid_rows(t, shift);
                if lo >= hi {
                    continue;
                }
                let src = (lo as isize + shift) as usize;
                let rows = hi - lo;
                let wk = k * c_in * c_out..(k + 1) * c_in * c_out;
                gemm(
                    S::one(),
                    MatRef::new(&xb[src * c_in..], rows, c_in).t(),
                    MatRef::new(&db[lo * c_out..], rows, c_out),
                    S::one(),
                    MatMut::new(&mut grads.kernel.data_mut()[wk.clone()], c_in, c_out),
                );
                gemm(
                    S::one(),
                    MatRef::new(&db[lo * c_out..], rows, c_out),
                    MatRef::new(&w[wk], c_in, c_out).t(),
                    S::one(),
                    MatMut::new(&mut dxb[src * c_in..(src + rows) * c_in], rows, c_in),
                );
            }
        }
        Ok(dx)
    }
}

pub(crate) fn dims3<S: Scalar>(x: &Tensor<S>) -> Result<(usize, usize, usize), NnError> {
    match *x.shape() {
        [b, t, c] => Ok((b, t, c)),
        ref s => Err(NnError::Shape(format!("expected [batch, time, channels], got {s:?}"))),
    }
}
