use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Batch-shared channel gate: the batch mean of the latent states goes through
/// `H -> H/r -> H` (ReLU between) and a sigmoid, and the resulting `[H]` gate
/// scales every trajectory.
#[derive(Debug, Clone)]
pub struct StaticChannelAttention {
    pub squeeze: Linear,
    pub excite: Linear,
    width: usize,
}

impl StaticChannelAttention {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, name: &str, width: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 {
            return Err(Error::invalid("channel reduction ratio must be at least 1"));
        }
        let mid = (width / reduction).max(1);
        Ok(Self {
            squeeze: Linear::new(store, &format!("{name}.squeeze"), width, mid)?,
            excite: Linear::new(store, &format!("{name}.excite"), mid, width)?,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Returns `(gated [B, H], gate [H])`.
    pub fn gate<'t, T: Scalar>(&self, p: &Bound<'t, T>, states: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let shape = states.shape();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::InvalidShape {
                op: "static_channel_gate",
                msg: format!("expected non-empty [B, H], got {shape:?}"),
            });
        }
        let summary = states.mean_axis(0)?;
        let gate = self
            .excite
            .forward(p, self.squeeze.forward(p, summary)?.relu()?)?
            .sigmoid()?;
        Ok((states.mul(gate)?, gate))
    }

    /// Applies a fixed gate value instead of the learned one.
    pub fn gate_fixed<'t, T: Scalar>(&self, states: Var<'t, T>, value: T) -> Result<Var<'t, T>> {
        let gate = states.tape().constant(Tensor::full([self.width], value));
        states.mul(gate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn setup() -> (ParameterStore<f64>, StaticChannelAttention) {
        let mut store = ParameterStore::new(4);
        let a = StaticChannelAttention::new(&mut store, "lat", 6, 2).unwrap();
        (store, a)
    }

    #[test]
    fn zero_parameters_halve_the_states() {
        let (mut store, a) = setup();
        store.zero_prefix("lat");
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = Tensor::from_fn([3, 6], |i| i as f64 - 7.0);
        let (gated, gate) = a.gate(&p, tape.leaf(x.clone())).unwrap();
        assert!(gate.value().data().iter().all(|&g| g == 0.5));
        assert_eq!(gated.value(), x.map(|v| 0.5 * v));
    }

    #[test]
    fn single_trajectory_summary_is_the_state() {
        let (store, a) = setup();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.leaf(Tensor::from_fn([1, 6], |i| (i as f64).sin()));
        let (_, gate) = a.gate(&p, x).unwrap();
        let direct = a
            .excite
            .forward(
                &p,
                a.squeeze.forward(&p, x.reshape(&[6]).unwrap()).unwrap().relu().unwrap(),
            )
            .unwrap()
            .sigmoid()
            .unwrap();
        assert_eq!(gate.value().data(), direct.value().data());
    }

    #[test]
    fn batch_permutation_symmetry() {
        let (store, a) = setup();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = Tensor::from_fn([4, 6], |i| (i as f64 * 0.9).cos());
        let xv = tape.leaf(x);
        let perm = [2, 0, 3, 1];
        let (g1, gate1) = a.gate(&p, xv).unwrap();
        let (g2, gate2) = a.gate(&p, xv.index_select(0, &perm).unwrap()).unwrap();
        for (a, b) in gate1.value().data().iter().zip(gate2.value().data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let g1p = g1.index_select(0, &perm).unwrap().value();
        for (a, b) in g1p.data().iter().zip(g2.value().data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (store, a) = setup();
        let tape = Tape::new();
        let p = store.bind(&tape);
        assert!(a.gate(&p, tape.leaf(Tensor::zeros([0, 6]))).is_err());
    }
}
