//! Central finite-difference verification of the backward pass.
//!
//! For each parameter element the loss is re-evaluated at `x + h` and
//! `x - h` via [`Tape::replay`], and `(f(x+h) - f(x-h)) / 2h` is compared
//! against the analytic gradient. Replay freezes `stop_gradient` operands
//! and keeps straight-through offsets, so the probed function is the one
//! the backward pass actually differentiates; perturbing through those
//! nodes would measure a different function and disagree by design.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Relative tolerance against `max(|analytic|, |numeric|)`.
pub const REL_TOL: f64 = 1e-4;
/// Absolute tolerance; decides on its own when both gradients are tiny.
pub const ABS_TOL: f64 = 1e-6;

/// Worst disagreement found for one parameter element.
#[derive(Clone, Copy, Debug)]
pub struct Discrepancy {
    pub param: NodeId,
    pub flat_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Discrepancy {
    pub fn abs_err(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    fn within_tolerance(&self) -> bool {
        let denom = self.analytic.abs().max(self.numeric.abs());
        self.abs_err() <= ABS_TOL || self.abs_err() <= REL_TOL * denom
    }
}

/// Checks every parameter of the tape against finite differences.
pub fn check(tape: &Tape, loss: NodeId) -> Result<()> {
    check_params(tape, loss, &tape.params())
}

/// Checks the given parameters, failing on the first element outside
/// tolerance.
pub fn check_params(tape: &Tape, loss: NodeId, params: &[NodeId]) -> Result<()> {
    let grads = tape.backward(loss)?;
    for &p in params {
        let base = tape.value(p).clone();
        let zero;
        let analytic = match grads.get(p) {
            Some(t) => t.values(),
            None => {
                zero = vec![0.0; base.numel()];
                &zero
            }
        };
        for (i, &a) in analytic.iter().enumerate() {
            let numeric = central_difference(tape, loss, p, &base, i)?;
            let d = Discrepancy { param: p, flat_index: i, analytic: a, numeric };
            if !d.within_tolerance() {
                return Err(Error::Numeric(format!(
                    "gradient check failed at node {} flat index {}: analytic {:e}, \
                     finite difference {:e}, |err| {:e}",
                    p.0,
                    i,
                    d.analytic,
                    d.numeric,
                    d.abs_err()
                )));
            }
        }
    }
    Ok(())
}

fn central_difference(
    tape: &Tape,
    loss: NodeId,
    param: NodeId,
    base: &Tensor,
    flat_index: usize,
) -> Result<f64> {
    let probe = |delta: f64| -> Result<f64> {
        let mut values = base.values().to_vec();
        values[flat_index] += delta;
        let t = Tensor::new(base.shape().to_vec(), values)?;
        tape.replay(loss, &[(param, t)])?.as_scalar()
    };
    Ok((probe(STEP)? - probe(-STEP)?) / (2.0 * STEP))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};
    use rand::Rng;

    fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = stream(seed, StreamKind::WeightInit, 0);
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape, values).unwrap()
    }

    // Inputs bounded away from zero keep finite differences off the relu
    // kink.
    fn random_tensor_off_kink(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = stream(seed, StreamKind::WeightInit, 1);
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.1..1.0);
                if rng.random::<bool>() {
                    v
                } else {
                    -v
                }
            })
            .collect();
        Tensor::new(shape, values).unwrap()
    }

    #[test]
    fn matmul_with_bias_matches_fd() {
        let mut tape = Tape::new();
        let x = tape.input(random_tensor(vec![3, 2], 11));
        let w = tape.param(random_tensor(vec![2, 4], 12));
        let b = tape.param(random_tensor(vec![4], 13));
        let h = tape.matmul(x, w).unwrap();
        let h = tape.add(h, b).unwrap();
        let loss = tape.squared_l2(h).unwrap();
        check(&tape, loss).unwrap();
    }

    #[test]
    fn elementwise_chain_matches_fd() {
        let mut tape = Tape::new();
        let a = tape.param(random_tensor(vec![2, 3], 21));
        let b = tape.param(random_tensor(vec![2, 3], 22));
        let prod = tape.mul(a, b).unwrap();
        let diff = tape.sub(prod, a).unwrap();
        let scaled = tape.scale(diff, 0.7).unwrap();
        let loss = tape.squared_l2(scaled).unwrap();
        check(&tape, loss).unwrap();
    }

    #[test]
    fn relu_matches_fd_off_kink() {
        let mut tape = Tape::new();
        let x = tape.param(random_tensor_off_kink(vec![4, 3], 31));
        let r = tape.relu(x).unwrap();
        let loss = tape.squared_l2(r).unwrap();
        check(&tape, loss).unwrap();
    }

    #[test]
    fn softmax_matches_fd() {
        let mut tape = Tape::new();
        let x = tape.param(random_tensor(vec![3, 4], 41));
        let weights = tape.input(random_tensor(vec![3, 4], 42));
        let y = tape.softmax(x).unwrap();
        let weighted = tape.mul(y, weights).unwrap();
        let loss = tape.sum(weighted).unwrap();
        check(&tape, loss).unwrap();
    }

    #[test]
    fn cross_entropy_matches_fd() {
        let mut tape = Tape::new();
        let logits = tape.param(random_tensor(vec![4, 3], 51));
        let loss = tape.cross_entropy(logits, &[0, 2, 1, 2]).unwrap();
        check(&tape, loss).unwrap();
    }

    #[test]
    fn reshuffling_ops_match_fd() {
        let mut tape = Tape::new();
        let x = tape.param(random_tensor(vec![6], 61));
        let head = tape.slice(x, 0, 3).unwrap();
        let tail = tape.slice(x, 3, 3).unwrap();
        let joined = tape.concat(&[tail, head]).unwrap();
        let mat = tape.reshape(joined, vec![3, 2]).unwrap();
        let picked = tape.gather_rows(mat, &[1, 1, 0]).unwrap();
        let loss = tape.squared_l2(picked).unwrap();
        check(&tape, loss).unwrap();
    }

    #[test]
    fn stop_gradient_graph_matches_fd() {
        // loss = x . stop_gradient(x): the analytic gradient is the frozen
        // factor, and the frozen replay probes exactly that function.
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0).unwrap());
        let frozen = tape.stop_gradient(x);
        let loss = tape.mul(x, frozen).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().as_scalar().unwrap(), 3.0);
        check(&tape, loss).unwrap();
    }

    #[test]
    fn straight_through_graph_matches_fd() {
        let mut tape = Tape::new();
        let z = tape.param(random_tensor(vec![2, 3], 71));
        let q = random_tensor(vec![2, 3], 72);
        let st = tape.straight_through(z, q).unwrap();
        let loss = tape.squared_l2(st).unwrap();
        check(&tape, loss).unwrap();
    }

    #[test]
    fn two_layer_classifier_matches_fd() {
        let mut tape = Tape::new();
        let x = tape.input(random_tensor(vec![5, 3], 81));
        let w1 = tape.param(random_tensor(vec![3, 8], 82));
        let b1 = tape.param(random_tensor(vec![8], 83));
        let w2 = tape.param(random_tensor(vec![8, 4], 84));
        let b2 = tape.param(random_tensor(vec![4], 85));
        let h = tape.matmul(x, w1).unwrap();
        let h = tape.add(h, b1).unwrap();
        let h = tape.relu(h).unwrap();
        let logits = tape.matmul(h, w2).unwrap();
        let logits = tape.add(logits, b2).unwrap();
        let loss = tape.cross_entropy(logits, &[0, 1, 2, 3, 1]).unwrap();
        check(&tape, loss).unwrap();
    }
}
