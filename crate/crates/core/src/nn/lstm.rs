//! LSTM cell and bidirectional layer with batched BPTT.
//!
//! Gate blocks inside the `4H` axis are ordered forget, input, candidate,
//! output. `input_weights` multiply the layer input and `recurrent_weights`
//! the previous hidden state for every gate.

use super::conv::dims3;
use super::tensor::{gemm, sigmoid, MatMut, MatRef, Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<S> {
    /// `[D x 4H]`
    pub input_weights: Tensor<S>,
    /// `[H x 4H]`
    pub recurrent_weights: Tensor<S>,
    /// `[4H]`
    pub bias: Tensor<S>,
}

/// Per-direction intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache<S> {
    /// Activated gates `[B*T x 4H]`.
    gates: Vec<S>,
    /// Cell state `[B*T x H]`.
    cell: Vec<S>,
}

/// Output of one LSTM time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<S> {
    pub hidden: Vec<S>,
    pub cell: Vec<S>,
    pub forget: Vec<S>,
    pub input: Vec<S>,
    pub candidate: Vec<S>,
    pub output: Vec<S>,
}

impl<S: Scalar> LstmCell<S> {
    pub fn zeros(input_size: usize, units: usize) -> Self {
        Self {
            input_weights: Tensor::zeros(&[input_size, 4 * units]),
            recurrent_weights: Tensor::zeros(&[units, 4 * units]),
            bias: Tensor::zeros(&[4 * units]),
        }
    }

    pub fn units(&self) -> usize {
        self.recurrent_weights.shape()[0]
    }

    pub fn input_size(&self) -> usize {
        self.input_weights.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.input_weights.len() + self.recurrent_weights.len() + self.bias.len()
    }

    /// One unbatched step, straight from the gate equations.
    pub fn step(&self, a: &[S], h_prev: &[S], c_prev: &[S]) -> Result<StepOutput<S>, NnError> {
        let h = self.units();
        let d = self.input_size();
        if a.len() != d || h_prev.len() != h || c_prev.len() != h {
            return Err(NnError::Shape(format!(
                "lstm step expects input {d} and state {h}, got {}/{}/{}",
                a.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let u = self.input_weights.data();
        let w = self.recurrent_weights.data();
        let z: Vec<S> = (0..4 * h)
            .map(|g| {
                let mut s = self.bias.data()[g];
                for k in 0..d {
                    s += u[k * 4 * h + g] * a[k];
                }
                for k in 0..h {
                    s += w[k * 4 * h + g] * h_prev[k];
                }
                s
            })
            .collect();
        let forget: Vec<S> = z[..h].iter().map(|&v| sigmoid(v)).collect();
        let input: Vec<S> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
        let candidate: Vec<S> = z[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
        let output: Vec<S> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
        let cell: Vec<S> = (0..h)
            .map(|j| forget[j] * c_prev[j] + input[j] * candidate[j])
            .collect();
        let hidden = (0..h).map(|j| output[j] * cell[j].tanh()).collect();
        Ok(StepOutput {
            hidden,
            cell,
            forget,
            input,
            candidate,
            output,
        })
    }

    /// Runs the cell over `x` (`[B, T, D]`), forward in time or reversed,
    /// writing hidden states into `out` rows `b*T + t` at columns
    /// `col..col+H` with row stride `ld`.
    pub(crate) fn scan(
        &self,
        x: &Tensor<S>,
        reverse: bool,
        out: &mut [S],
        ld: usize,
        col: usize,
    ) -> Result<LstmCache<S>, NnError> {
        let (b, t, d) = dims3(x)?;
        if d != self.input_size() {
            return Err(NnError::Shape(format!(
                "lstm expects {} input features, got {d}",
                self.input_size()
            )));
        }
        let h = self.units();
        let g4 = 4 * h;
        let mut gates = vec![S::zero(); b * t * g4];
        let mut cell = vec![S::zero(); b * t * h];
        if b * t == 0 {
            return Ok(LstmCache { gates, cell });
        }
        for row in gates.chunks_exact_mut(g4) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            S::one(),
            MatRef::new(x.data(), b * t, d),
            MatRef::new(self.input_weights.data(), d, g4),
            S::one(),
            MatMut::new(&mut gates, b * t, g4),
        );
        let w = self.recurrent_weights.data();
        let time = |s: usize| if reverse { t - 1 - s } else { s };
        for s in 0..t {
            let ti = time(s);
            let prev = (s > 0).then(|| time(s - 1));
            if let Some(tp) = prev {
                gemm(
                    S::one(),
                    MatRef::strided(&out[tp * ld + col..], b, h, t * ld, 1),
                    MatRef::new(w, h, g4),
                    S::one(),
                    MatMut::strided(&mut gates[ti * g4..], b, g4, t * g4, 1),
                );
            }
            for bi in 0..b {
                let row = bi * t + ti;
                let g = &mut gates[row * g4..(row + 1) * g4];
                for v in &mut g[..2 * h] {
                    *v = sigmoid(*v);
                }
                for v in &mut g[2 * h..3 * h] {
                    *v = v.tanh();
                }
                for v in &mut g[3 * h..] {
                    *v = sigmoid(*v);
                }
                for j in 0..h {
                    let c_prev = match prev {
                        Some(tp) => cell[(bi * t + tp) * h + j],
                        None => S::zero(),
                    };
                    let c = g[j] * c_prev + g[h + j] * g[2 * h + j];
                    cell[row * h + j] = c;
                    out[row * ld + col + j] = g[3 * h + j] * c.tanh();
                }
            }
        }
        Ok(LstmCache { gates, cell })
    }

    /// Backpropagation through time for one [`scan`](Self::scan).
    ///
    /// `hs` holds the hidden states written by the forward scan and `dh` the
    /// loss gradient w.r.t. them, both with layout `(ld, col)`. Parameter
    /// gradients accumulate into `grads`, input gradients into `dx`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn scan_backward(
        &self,
        x: &Tensor<S>,
        mut cache: LstmCache<S>,
        reverse: bool,
        hs: &[S],
        dh: &[S],
        ld: usize,
        col: usize,
        grads: &mut LstmCell<S>,
        dx: &mut Tensor<S>,
    ) -> Result<(), NnError> {
        let (b, t, d) = dims3(x)?;
        let h = self.units();
        let g4 = 4 * h;
        if cache.gates.len() != b * t * g4 || cache.cell.len() != b * t * h {
            return Err(NnError::CacheMismatch("lstm cache does not match input".into()));
        }
        if b * t == 0 {
            return Ok(());
        }
        let w = self.recurrent_weights.data();
        let time = |s: usize| if reverse { t - 1 - s } else { s };
        let mut dh_next = vec![S::zero(); b * h];
        let mut dc_next = vec![S::zero(); b * h];
        let one = S::one();
        for s in (0..t).rev() {
            let ti = time(s);
            let prev = (s > 0).then(|| time(s - 1));
            for bi in 0..b {
                let row = bi * t + ti;
                let g = &mut cache.gates[row * g4..(row + 1) * g4];
                for j in 0..h {
                    let c = cache.cell[row * h + j];
                    let tc = c.tanh();
                    let (f, i, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let dhj = dh[row * ld + col + j] + dh_next[bi * h + j];
                    let dc = dhj * o * (one - tc * tc) + dc_next[bi * h + j];
                    let c_prev = match prev {
                        Some(tp) => cache.cell[(bi * t + tp) * h + j],
                        None => S::zero(),
                    };
                    dc_next[bi * h + j] = dc * f;
                    g[j] = dc * c_prev * f * (one - f);
                    g[h + j] = dc * cand * i * (one - i);
                    g[2 * h + j] = dc * i * (one - cand * cand);
                    g[3 * h + j] = dhj * tc * o * (one - o);
                }
            }
            if prev.is_some() {
                gemm(
                    one,
                    MatRef::strided(&cache.gates[ti * g4..], b, g4, t * g4, 1),
                    MatRef::new(w, h, g4).t(),
                    S::zero(),
                    MatMut::new(&mut dh_next, b, h),
                );
            }
        }
        let dz = &cache.gates;
        gemm(
            one,
            MatRef::new(x.data(), b * t, d).t(),
            MatRef::new(dz, b * t, g4),
            one,
            MatMut::new(grads.input_weights.data_mut(), d, g4),
        );
        let gb = grads.bias.data_mut();
        for row in dz.chunks_exact(g4) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
        if t > 1 {
            // h_prev of step ti is the hidden state at ti-1 (forward) or ti+1
            let (h_from, z_from) = if reverse { (1, 0) } else { (0, 1) };
            for bi in 0..b {
                gemm(
                    one,
                    MatRef::strided(&hs[(bi * t + h_from) * ld + col..], t - 1, h, ld, 1).t(),
                    MatRef::new(&dz[(bi * t + z_from) * g4..], t - 1, g4),
                    one,
                    MatMut::new(grads.recurrent_weights.data_mut(), h, g4),
                );
            }
        }
        gemm(
            one,
            MatRef::new(dz, b * t, g4),
            MatRef::new(self.input_weights.data(), d, g4).t(),
            one,
            MatMut::new(dx.data_mut(), b * t, d),
        );
        Ok(())
    }
}

/// Forward and backward cells whose hidden states are concatenated per
/// time step as `[h_fwd; h_bwd]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm<S> {
    pub forward: LstmCell<S>,
    pub backward: LstmCell<S>,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache<S> {
    fwd: LstmCache<S>,
    bwd: LstmCache<S>,
}

impl<S: Scalar> BiLstm<S> {
    pub fn zeros(input_size: usize, units: usize) -> Self {
        Self {
            forward: LstmCell::zeros(input_size, units),
            backward: LstmCell::zeros(input_size, units),
        }
    }

    pub fn units(&self) -> usize {
        self.forward.units()
    }

    pub fn output_size(&self) -> usize {
        2 * self.units()
    }

    pub fn param_count(&self) -> usize {
        self.forward.param_count() + self.backward.param_count()
    }

    /// `[B, T, D]` to `[B, T, 2H]`, zero initial states in both directions.
    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, BiLstmCache<S>), NnError> {
        let (b, t, _) = dims3(x)?;
        let h = self.units();
        let mut out = Tensor::zeros(&[b, t, 2 * h]);
        let fwd = self.forward.scan(x, false, out.data_mut(), 2 * h, 0)?;
        let bwd = self.backward.scan(x, true, out.data_mut(), 2 * h, h)?;
        Ok((out, BiLstmCache { fwd, bwd }))
    }

    pub fn backward(
        &self,
        x: &Tensor<S>,
        y: &Tensor<S>,
        cache: BiLstmCache<S>,
        dy: &Tensor<S>,
        grads: &mut BiLstm<S>,
    ) -> Result<Tensor<S>, NnError> {
        let h = self.units();
        if dy.shape() != y.shape() || y.shape().last() != Some(&(2 * h)) {
            return Err(NnError::Shape("bilstm backward: gradient shape differs".into()));
        }
        let mut dx = x.zeros_like();
        self.forward.scan_backward(
            x,
            cache.fwd,
            false,
            y.data(),
            dy.data(),
            2 * h,
            0,
            &mut grads.forward,
            &mut dx,
        )?;
        self.backward.scan_backward(
            x,
            cache.bwd,
            true,
            y.data(),
            dy.data(),
            2 * h,
            h,
            &mut grads.backward,
            &mut dx,
        )?;
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cell(d: usize, h: usize, rng: &mut ChaCha8Rng) -> LstmCell<f64> {
        let mut c = LstmCell::zeros(d, h);
        for t in [&mut c.input_weights, &mut c.recurrent_weights, &mut c.bias] {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
        }
        c
    }

    #[test]
    fn zero_cell_step() {
        let c = LstmCell::<f64>::zeros(3, 2);
        let s = c.step(&[1.0, -1.0, 2.0], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(s.forget, vec![0.5; 2]);
        assert_eq!(s.input, vec![0.5; 2]);
        assert_eq!(s.output, vec![0.5; 2]);
        assert_eq!(s.candidate, vec![0.0; 2]);
        assert_eq!(s.cell, vec![0.0; 2]);
        assert_eq!(s.hidden, vec![0.0; 2]);
    }

    #[test]
    fn zero_cell_decays_memory() {
        let c = LstmCell::<f64>::zeros(1, 1);
        let s = c.step(&[0.0], &[0.0], &[2.0]).unwrap();
        assert_eq!(s.cell, vec![1.0]);
        assert!((s.hidden[0] - 0.5 * 1f64.tanh()).abs() < 1e-15);
        assert!((s.hidden[0] - 0.380797).abs() < 1e-6);
    }

    #[test]
    fn step_shape_error() {
        let c = LstmCell::<f64>::zeros(3, 2);
        assert!(c.step(&[1.0], &[0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn batched_scan_matches_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (b, t, d, h) = (2, 6, 3, 4);
        let cell = random_cell(d, h, &mut rng);
        let xs: Vec<f64> = (0..b * t * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[b, t, d], xs.clone()).unwrap();
        for reverse in [false, true] {
            let mut out = vec![0.0; b * t * h];
            cell.scan(&x, reverse, &mut out, h, 0).unwrap();
            for bi in 0..b {
                let mut hp = vec![0.0; h];
                let mut cp = vec![0.0; h];
                let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
                for ti in order {
                    let a = &xs[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                    let s = cell.step(a, &hp, &cp).unwrap();
                    for j in 0..h {
                        assert!((out[(bi * t + ti) * h + j] - s.hidden[j]).abs() < 1e-12);
                    }
                    hp = s.hidden;
                    cp = s.cell;
                }
            }
        }
    }

    #[test]
    fn single_step_bilstm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer = BiLstm {
            forward: random_cell(2, 3, &mut rng),
            backward: random_cell(2, 3, &mut rng),
        };
        let x = Tensor::from_vec(&[1, 1, 2], vec![0.3, -0.7]).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        let f = layer.forward.step(&[0.3, -0.7], &[0.0; 3], &[0.0; 3]).unwrap();
        let r = layer.backward.step(&[0.3, -0.7], &[0.0; 3], &[0.0; 3]).unwrap();
        let expect: Vec<f64> = f.hidden.into_iter().chain(r.hidden).collect();
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn reversal_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (t, d, h) = (9, 3, 4);
        let layer = BiLstm {
            forward: random_cell(d, h, &mut rng),
            backward: random_cell(d, h, &mut rng),
        };
        let swapped = BiLstm {
            forward: layer.backward.clone(),
            backward: layer.forward.clone(),
        };
        let xs: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rev: Vec<f64> = (0..t).rev().flat_map(|ti| xs[ti * d..(ti + 1) * d].to_vec()).collect();
        let (y, _) = layer.forward(&Tensor::from_vec(&[1, t, d], xs).unwrap()).unwrap();
        let (yr, _) = swapped.forward(&Tensor::from_vec(&[1, t, d], rev).unwrap()).unwrap();
        for ti in 0..t {
            let a = &y.data()[ti * 2 * h..(ti + 1) * 2 * h];
            let r = &yr.data()[(t - 1 - ti) * 2 * h..(t - ti) * 2 * h];
            for j in 0..h {
                assert!((a[j] - r[h + j]).abs() < 1e-12);
                assert!((a[h + j] - r[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_zero_output() {
        let layer = BiLstm::<f64>::zeros(3, 5);
        let x = Tensor::from_vec(&[2, 4, 3], (0..24).map(|v| v as f64).collect()).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 4, 10]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
