use super::{check_width, Bound, Linear, ParameterStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{stack, Tensor, Var};

/// Long short-term memory cell with separate input and recurrent projections
/// per gate.
#[derive(Debug, Clone)]
pub struct LstmCell {
    gates: [(Linear, Linear); 4],
    input: usize,
    hidden: usize,
}

/// Hidden and cell state of an [`LstmCell`], both `[B, H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState<'t, T: Scalar = f64> {
    pub hidden: Var<'t, T>,
    pub cell: Var<'t, T>,
}

const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "candidate"];

impl LstmCell {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let mut make = |gate: &str| -> Result<(Linear, Linear)> {
            Ok((
                Linear::new(store, &format!("{name}.x_{gate}"), input, hidden)?,
                Linear::new(store, &format!("{name}.h_{gate}"), hidden, hidden)?,
            ))
        };
        let gates = [
            make(GATE_NAMES[0])?,
            make(GATE_NAMES[1])?,
            make(GATE_NAMES[2])?,
            make(GATE_NAMES[3])?,
        ];
        Ok(Self { gates, input, hidden })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    /// Zero hidden and cell states for a batch of `batch` sequences.
    pub fn zero_state<'t, T: Scalar>(&self, tape: &'t crate::tensor::Tape<T>, batch: usize) -> LstmState<'t, T> {
        LstmState {
            hidden: tape.constant(Tensor::zeros([batch, self.hidden])),
            cell: tape.constant(Tensor::zeros([batch, self.hidden])),
        }
    }

    pub fn step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        state: LstmState<'t, T>,
        x: Var<'t, T>,
    ) -> Result<LstmState<'t, T>> {
        check_width("lstm input", &x.shape(), self.input)?;
        let pre = |k: usize| -> Result<Var<'t, T>> {
            let (wx, wh) = &self.gates[k];
            wx.forward(p, x)?.add(wh.forward(p, state.hidden)?)
        };
        let i = pre(0)?.sigmoid()?;
        let f = pre(1)?.sigmoid()?;
        let o = pre(2)?.sigmoid()?;
        let g = pre(3)?.tanh()?;
        let cell = f.mul(state.cell)?.add(i.mul(g)?)?;
        let hidden = o.mul(cell.tanh()?)?;
        Ok(LstmState { hidden, cell })
    }
}

/// Unidirectional LSTM run over a `[T, B, D]` sequence from zero state.
#[derive(Debug, Clone)]
pub struct LstmEncoder {
    cell: LstmCell,
}

impl LstmEncoder {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            cell: LstmCell::new(store, name, input, hidden)?,
        })
    }

    pub fn cell(&self) -> &LstmCell {
        &self.cell
    }

    pub fn hidden_dim(&self) -> usize {
        self.cell.hidden
    }

    /// Hidden states for every step, `[T, B, H]`. Output `t` depends only on
    /// inputs `0..=t`.
    pub fn encode<'t, T: Scalar>(&self, p: &Bound<'t, T>, seq: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = seq.shape();
        if shape.len() != 3 || shape[0] == 0 {
            return Err(Error::InvalidShape {
                op: "lstm_encode",
                msg: format!("expected non-empty [T, B, D], got {shape:?}"),
            });
        }
        let mut state = self.cell.zero_state(seq.tape(), shape[1]);
        let mut outputs = Vec::with_capacity(shape[0]);
        for t in 0..shape[0] {
            let x = seq.index_select(0, &[t])?.reshape(&[shape[1], shape[2]])?;
            state = self.cell.step(p, state, x)?;
            outputs.push(state.hidden);
        }
        stack(&outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn zero_parameters_give_zero_states() {
        let mut store = ParameterStore::<f64>::new(9);
        let enc = LstmEncoder::new(&mut store, "lstm", 2, 3).unwrap();
        store.zero_prefix("lstm");
        let tape = Tape::new();
        let p = store.bind(&tape);
        let seq = tape.leaf(Tensor::from_fn([5, 2, 2], |i| (i as f64).sin()));
        let out = enc.encode(&p, seq).unwrap().value();
        assert_eq!(out.shape(), &[5, 2, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_cell() {
        let mut store = ParameterStore::<f64>::new(10);
        let enc = LstmEncoder::new(&mut store, "lstm", 2, 3).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let xv = Tensor::from_fn([1, 4, 2], |i| 0.1 * i as f64);
        let seq = tape.leaf(xv.clone());
        let out = enc.encode(&p, seq).unwrap().value();
        let x = tape.leaf(xv.reshape([4, 2]).unwrap());
        let st = enc.cell().step(&p, enc.cell().zero_state(&tape, 4), x).unwrap();
        assert_eq!(out.data(), st.hidden.value().data());
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let mut store = ParameterStore::<f64>::new(10);
        let enc = LstmEncoder::new(&mut store, "lstm", 2, 3).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let seq = tape.leaf(Tensor::zeros([0, 4, 2]));
        assert!(enc.encode(&p, seq).is_err());
    }
}
