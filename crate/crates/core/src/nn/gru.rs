use super::{check_width, Bound, Linear, ParameterStore};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Var;

/// Gated recurrent unit.
///
/// ```text
/// z = σ(Wz x + Uz h + bz)
/// r = σ(Wr x + Ur h + br)
/// n = tanh(Wn x + r ⊙ (Un h + bn'))
/// h' = (1 − z) ⊙ h + z ⊙ n
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    x_update: Linear,
    h_update: Linear,
    x_reset: Linear,
    h_reset: Linear,
    x_candidate: Linear,
    h_candidate: Linear,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            x_update: Linear::new(store, &format!("{name}.x_update"), input, hidden)?,
            h_update: Linear::new(store, &format!("{name}.h_update"), hidden, hidden)?,
            x_reset: Linear::new(store, &format!("{name}.x_reset"), input, hidden)?,
            h_reset: Linear::new(store, &format!("{name}.h_reset"), hidden, hidden)?,
            x_candidate: Linear::new(store, &format!("{name}.x_candidate"), input, hidden)?,
            h_candidate: Linear::new(store, &format!("{name}.h_candidate"), hidden, hidden)?,
            input,
            hidden,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    /// One update of `h: [B, H]` with input `x: [B, D]`.
    pub fn step<'t, T: Scalar>(&self, p: &Bound<'t, T>, h: Var<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        check_width("gru hidden", &h.shape(), self.hidden)?;
        check_width("gru input", &x.shape(), self.input)?;
        let z = self
            .x_update
            .forward(p, x)?
            .add(self.h_update.forward(p, h)?)?
            .sigmoid()?;
        let r = self
            .x_reset
            .forward(p, x)?
            .add(self.h_reset.forward(p, h)?)?
            .sigmoid()?;
        let n = self
            .x_candidate
            .forward(p, x)?
            .add(r.mul(self.h_candidate.forward(p, h)?)?)?
            .tanh()?;
        // (1 − z) ⊙ h + z ⊙ n  ==  h + z ⊙ (n − h)
        h.add(z.mul(n.sub(h)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn zero_cell() -> (ParameterStore<f64>, GruCell) {
        let mut store = ParameterStore::new(5);
        let cell = GruCell::new(&mut store, "gru", 2, 3).unwrap();
        store.zero_prefix("gru");
        (store, cell)
    }

    #[test]
    fn zero_parameters_halve_the_state() {
        let (store, cell) = zero_cell();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let hv = Tensor::new([2, 3], vec![1.0, -2.0, 0.5, 4.0, 0.0, -1.0]).unwrap();
        let h = tape.leaf(hv.clone());
        let x = tape.leaf(Tensor::from_fn([2, 2], |i| i as f64));
        let out = cell.step(&p, h, x).unwrap().value();
        for (o, v) in out.data().iter().zip(hv.data()) {
            assert_eq!(*o, 0.5 * v);
        }
    }

    #[test]
    fn zero_state_is_a_fixed_point_of_zero_parameters() {
        let (store, cell) = zero_cell();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h = tape.leaf(Tensor::zeros([4, 3]));
        let x = tape.leaf(Tensor::ones([4, 2]));
        let out = cell.step(&p, h, x).unwrap().value();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }
}
