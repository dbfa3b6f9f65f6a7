use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Probabilities are clamped to this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Categorical cross-entropy averaged over every time step of every
/// segment. `targets` holds one class index per `[B, T]` position.
pub fn cross_entropy<S: Scalar>(probs: &Tensor<S>, targets: &[u8]) -> Result<f64, NnError> {
    let k = check(probs, targets)?;
    if targets.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probs
        .data()
        .chunks_exact(k)
        .zip(targets)
        .map(|(row, &c)| -row[c as usize].f64().max(PROB_FLOOR).ln())
        .sum();
    Ok(total / targets.len() as f64)
}

/// Gradient of [`cross_entropy`] w.r.t. the pre-softmax scores.
pub fn cross_entropy_grad<S: Scalar>(probs: &Tensor<S>, targets: &[u8]) -> Result<Tensor<S>, NnError> {
    let k = check(probs, targets)?;
    let mut g = probs.clone();
    if targets.is_empty() {
        return Ok(g);
    }
    let inv = S::of(1.0 / targets.len() as f64);
    for (row, &c) in g.data_mut().chunks_exact_mut(k).zip(targets) {
        row[c as usize] -= S::one();
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok(g)
}

fn check<S: Scalar>(probs: &Tensor<S>, targets: &[u8]) -> Result<usize, NnError> {
    let k = *probs.shape().last().unwrap_or(&0);
    if k == 0 || probs.len() != targets.len() * k {
        return Err(NnError::Shape(format!(
            "{} target labels for probabilities of shape {:?}",
            targets.len(),
            probs.shape()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&c| c as usize >= k) {
        return Err(NnError::Shape(format!("label {bad} outside {k} classes")));
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_prediction_costs_ln4() {
        let p = Tensor::from_vec(&[1, 2, 4], vec![0.25f64; 8]).unwrap();
        let l = cross_entropy(&p, &[0, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn one_hot_costs_nothing_and_zero_prob_is_floored() {
        let p = Tensor::from_vec(&[1, 1, 4], vec![1.0f64, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&p, &[0]).unwrap(), 0.0);
        let l = cross_entropy(&p, &[1]).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        let p = Tensor::from_vec(&[1, 1, 4], vec![0.25f64; 4]).unwrap();
        assert!(cross_entropy(&p, &[4]).is_err());
        assert!(cross_entropy(&p, &[0, 1]).is_err());
    }
}
