use rand::Rng;

use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Inverted dropout: kept units are scaled by `1/(1-rate)` while training
/// and the layer is the identity at inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidDropout(rate));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Returns the output and the scaled mask (`None` at inference).
    pub fn forward<S: Scalar, R: Rng + ?Sized>(
        &self,
        x: &Tensor<S>,
        training: bool,
        rng: &mut R,
    ) -> (Tensor<S>, Option<Vec<S>>) {
        if !training || self.rate == 0.0 {
            return (x.clone(), None);
        }
        let scale = S::of(1.0 / (1.0 - self.rate));
        let mask: Vec<S> = (0..x.len())
            .map(|_| {
                if rng.gen::<f64>() < self.rate {
                    S::zero()
                } else {
                    scale
                }
            })
            .collect();
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        (y, Some(mask))
    }

    pub fn backward<S: Scalar>(dy: &Tensor<S>, mask: Option<&[S]>) -> Tensor<S> {
        let mut dx = dy.clone();
        if let Some(mask) = mask {
            for (v, &m) in dx.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_rates() {
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
        assert!(Dropout::new(f64::NAN).is_err());
        assert!(Dropout::new(0.2).is_ok());
    }

    #[test]
    fn identity_at_inference() {
        let d = Dropout::new(0.2).unwrap();
        let x = Tensor::from_vec(&[1, 3, 1], vec![1.0f64, -2.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, mask) = d.forward(&x, false, &mut rng);
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn kept_values_are_scaled() {
        let d = Dropout::new(0.2).unwrap();
        let x = Tensor::from_vec(&[1, 1000, 1], vec![1.0f64; 1000]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, _) = d.forward(&x, true, &mut rng);
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
    }
}
