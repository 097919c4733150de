use rand::Rng;

use crate::error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn greedy_action(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::Degenerate("argmax over an empty action set".into()));
    }
    let mut best = 0;
    for (a, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Training(format!("non-finite Q-value {v} for action {a}")));
        }
        if v > values[best] {
            best = a;
        }
    }
    Ok(best)
}

/// Uniform random action with probability `epsilon`, greedy otherwise.
///
/// Always consumes one uniform draw so the stream layout does not depend
/// on `epsilon`.
pub fn epsilon_greedy<R: Rng + ?Sized>(values: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rng.gen::<f64>() < epsilon {
        if values.is_empty() {
            return Err(Error::Degenerate("no actions to explore".into()));
        }
        Ok(rng.gen_range(0..values.len()))
    } else {
        greedy_action(values)
    }
}
