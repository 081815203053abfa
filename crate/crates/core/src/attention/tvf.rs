use crate::error::{Error, Result};
use crate::nn::{Bound, KvCache, Linear, LstmCell, LstmState, ParamId, ParameterStore, SelfAttention};
use crate::scalar::Scalar;
use crate::tensor::{stack, Tape, Var};

/// Temporal encoder feeding the TVF gate head. Both variants are causal.
#[derive(Debug, Clone)]
pub enum TvfEncoder {
    Lstm(LstmCell),
    /// Learned position embedding `[max_len, H]` followed by residual causal
    /// self-attention blocks.
    Transformer {
        position: ParamId,
        blocks: Vec<SelfAttention>,
        max_len: usize,
    },
}

/// Time-varying feature gates: a causal encoder over the pre-RNN states,
/// then `sigmoid(Linear)` to latent width.
#[derive(Debug, Clone)]
pub struct TvfAttention {
    pub encoder: TvfEncoder,
    pub head: Linear,
    width: usize,
}

/// Running encoder state for step-by-step gating.
#[derive(Debug, Clone)]
pub enum TvfState<'t, T: Scalar = f64> {
    Lstm(LstmState<'t, T>),
    Transformer { caches: Vec<KvCache<'t, T>>, step: usize },
}

impl TvfAttention {
    pub fn lstm<T: Scalar>(store: &mut ParameterStore<T>, name: &str, width: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            encoder: TvfEncoder::Lstm(LstmCell::new(store, &format!("{name}.lstm"), width, hidden)?),
            head: Linear::new(store, &format!("{name}.head"), hidden, width)?,
            width,
        })
    }

    pub fn transformer<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        depth: usize,
        max_len: usize,
    ) -> Result<Self> {
        if depth == 0 || max_len == 0 {
            return Err(Error::invalid(
                "transformer encoder needs depth and max length of at least 1",
            ));
        }
        let position = store.register_uniform(
            format!("{name}.position"),
            [max_len, width],
            1.0 / (width as f64).sqrt(),
        )?;
        let blocks = (0..depth)
            .map(|k| SelfAttention::new(store, &format!("{name}.block{k}"), width, heads))
            .collect::<Result<_>>()?;
        Ok(Self {
            encoder: TvfEncoder::Transformer {
                position,
                blocks,
                max_len,
            },
            head: Linear::new(store, &format!("{name}.head"), width, width)?,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn positions<'t, T: Scalar>(
        p: &Bound<'t, T>,
        position: ParamId,
        max_len: usize,
        start: usize,
        steps: usize,
        batch: usize,
    ) -> Result<Var<'t, T>> {
        if start + steps > max_len {
            return Err(Error::invalid(format!(
                "sequence of length {} exceeds the position table of {max_len}",
                start + steps
            )));
        }
        let idx: Vec<usize> = (start..start + steps)
            .flat_map(|t| std::iter::repeat_n(t, batch))
            .collect();
        p.get(position).index_select(0, &idx)
    }

    /// Gates for every step of `seq: [T, B, H]`; row `t` depends only on steps `0..=t`.
    pub fn gates<'t, T: Scalar>(&self, p: &Bound<'t, T>, seq: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = seq.shape();
        if shape.len() != 3 || shape[0] == 0 {
            return Err(Error::InvalidShape {
                op: "tvf_gate",
                msg: format!("expected non-empty [T, B, H], got {shape:?}"),
            });
        }
        let (steps, batch) = (shape[0], shape[1]);
        let encoded = match &self.encoder {
            TvfEncoder::Lstm(cell) => {
                let mut state = cell.zero_state(seq.tape(), batch);
                let mut outs = Vec::with_capacity(steps);
                for t in 0..steps {
                    state = cell.step(p, state, seq.slice_time(&[t])?.reshape(&[batch, self.width])?)?;
                    outs.push(state.hidden);
                }
                stack(&outs)?
            }
            TvfEncoder::Transformer {
                position,
                blocks,
                max_len,
            } => {
                let pos =
                    Self::positions(p, *position, *max_len, 0, steps, batch)?.reshape(&[steps, batch, self.width])?;
                let mut x = seq.add(pos)?;
                for block in blocks {
                    x = x.add(block.forward(p, x, true)?)?;
                }
                x
            }
        };
        self.head.forward(p, encoded)?.sigmoid()
    }

    /// Gate row `[B, H]` for the last step of a causal prefix.
    pub fn gate<'t, T: Scalar>(&self, p: &Bound<'t, T>, prefix: Var<'t, T>) -> Result<Var<'t, T>> {
        let gates = self.gates(p, prefix)?;
        let shape = gates.shape();
        gates.slice_time(&[shape[0] - 1])?.reshape(&[shape[1], shape[2]])
    }

    pub fn start<'t, T: Scalar>(&self, tape: &'t Tape<T>, batch: usize) -> TvfState<'t, T> {
        match &self.encoder {
            TvfEncoder::Lstm(cell) => TvfState::Lstm(cell.zero_state(tape, batch)),
            TvfEncoder::Transformer { blocks, .. } => TvfState::Transformer {
                caches: blocks.iter().map(|_| KvCache::new()).collect(),
                step: 0,
            },
        }
    }

    /// Consumes the next pre-RNN state `[B, H]` and returns its gate row.
    pub fn step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        state: &mut TvfState<'t, T>,
        h: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let batch = h.shape()[0];
        let encoded = match (&self.encoder, state) {
            (TvfEncoder::Lstm(cell), TvfState::Lstm(s)) => {
                *s = cell.step(p, *s, h)?;
                s.hidden
            }
            (
                TvfEncoder::Transformer {
                    position,
                    blocks,
                    max_len,
                },
                TvfState::Transformer { caches, step },
            ) => {
                let pos = Self::positions(p, *position, *max_len, *step, 1, batch)?;
                let mut x = h.add(pos)?;
                for (block, cache) in blocks.iter().zip(caches.iter_mut()) {
                    x = x.add(block.step(p, cache, x)?)?;
                }
                *step += 1;
                x
            }
            _ => return Err(Error::invalid("TVF state does not match its encoder")),
        };
        self.head.forward(p, encoded)?.sigmoid()
    }
}
