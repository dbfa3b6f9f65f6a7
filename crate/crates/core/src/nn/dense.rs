use super::tensor::{gemm, MatMut, MatRef, Scalar, Tensor};
use super::NnError;

/// Dense layer applied independently at every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDistributedDense<S> {
    /// `[in x out]`
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> TimeDistributedDense<S> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn output_size(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Pre-softmax scores, `[B, T, in]` to `[B, T, out]`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>, NnError> {
        let (rows, d) = flat_rows(x)?;
        if d != self.input_size() {
            return Err(NnError::Shape(format!(
                "dense expects {} features, got {d}",
                self.input_size()
            )));
        }
        let k = self.output_size();
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = k;
        let mut out = Tensor::zeros(&shape);
        for row in out.data_mut().chunks_exact_mut(k) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            S::one(),
            MatRef::new(x.data(), rows, d),
            MatRef::new(self.weights.data(), d, k),
            S::one(),
            MatMut::new(out.data_mut(), rows, k),
        );
        Ok(out)
    }

    pub fn backward(
        &self,
        x: &Tensor<S>,
        dy: &Tensor<S>,
        grads: &mut TimeDistributedDense<S>,
    ) -> Result<Tensor<S>, NnError> {
        let (rows, d) = flat_rows(x)?;
        let k = self.output_size();
        if dy.len() != rows * k {
            return Err(NnError::Shape("dense backward: gradient shape differs".into()));
        }
        gemm(
            S::one(),
            MatRef::new(x.data(), rows, d).t(),
            MatRef::new(dy.data(), rows, k),
            S::one(),
            MatMut::new(grads.weights.data_mut(), d, k),
        );
        for row in dy.data().chunks_exact(k) {
            for (g, &v) in grads.bias.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = x.zeros_like();
        gemm(
            S::one(),
            MatRef::new(dy.data(), rows, k),
            MatRef::new(self.weights.data(), d, k).t(),
            S::zero(),
            MatMut::new(dx.data_mut(), rows, d),
        );
        Ok(dx)
    }
}

fn flat_rows<S: Scalar>(x: &Tensor<S>) -> Result<(usize, usize), NnError> {
    match x.shape().split_last() {
        Some((&d, rest)) if !rest.is_empty() => Ok((rest.iter().product(), d)),
        _ => Err(NnError::Shape(format!("dense input needs rank >= 2, got {:?}", x.shape()))),
    }
}

/// Softmax over the last axis, with the row maximum subtracted first.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let mut out = logits.clone();
    let k = *logits.shape().last().unwrap_or(&1);
    if k == 0 {
        return out;
    }
    for row in out.data_mut().chunks_exact_mut(k) {
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}
