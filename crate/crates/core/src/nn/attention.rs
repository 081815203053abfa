use super::{check_width, Bound, Linear, ParameterStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{cached_attention, Var};

/// Multi-head scaled dot-product self-attention over `[T, B, D]` sequences.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    width: usize,
    heads: usize,
}

/// Projected keys and values of the steps seen so far, for incremental
/// causal attention.
#[derive(Debug, Clone, Default)]
pub struct KvCache<'t, T: Scalar = f64> {
    keys: Vec<Var<'t, T>>,
    values: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> KvCache<'t, T> {
    pub fn new() -> Self {
        Self {
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl SelfAttention {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, name: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::invalid(format!(
                "{heads} attention heads do not divide width {width}"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), width, width)?,
            key: Linear::new(store, &format!("{name}.key"), width, width)?,
            value: Linear::new(store, &format!("{name}.value"), width, width)?,
            output: Linear::new(store, &format!("{name}.output"), width, width)?,
            width,
            heads,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    fn inv_sqrt_head<T: Scalar>(&self) -> T {
        T::one() / T::lit(self.head_dim() as f64).sqrt()
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, seq: Var<'t, T>, causal: bool) -> Result<Var<'t, T>> {
        Ok(self.forward_with_weights(p, seq, causal)?.0)
    }

    /// Returns the attended sequence and the attention weights `[B, heads, T, T]`.
    pub fn forward_with_weights<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        seq: Var<'t, T>,
        causal: bool,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let shape = seq.shape();
        if shape.len() != 3 || shape[0] == 0 {
            return Err(Error::InvalidShape {
                op: "self_attention",
                msg: format!("expected non-empty [T, B, D], got {shape:?}"),
            });
        }
        check_width("self_attention", &shape, self.width)?;
        let (steps, batch) = (shape[0], shape[1]);
        let split = [steps, batch, self.heads, self.head_dim()];
        let q = self.query.forward(p, seq)?.reshape(&split)?.permute(&[1, 2, 0, 3])?;
        let k = self.key.forward(p, seq)?.reshape(&split)?.permute(&[1, 2, 3, 0])?;
        let v = self.value.forward(p, seq)?.reshape(&split)?.permute(&[1, 2, 0, 3])?;
        let scores = q.matmul(k)?.scale(self.inv_sqrt_head())?;
        let weights = if causal {
            scores.causal_softmax()?
        } else {
            scores.softmax(3)?
        };
        let ctx = weights
            .matmul(v)?
            .permute(&[2, 0, 1, 3])?
            .reshape(&[steps, batch, self.width])?;
        Ok((self.output.forward(p, ctx)?, weights))
    }

    /// Appends `x: [B, D]` to the cache and returns the causal attention output
    /// at that newest position, `[B, D]`.
    pub fn step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        cache: &mut KvCache<'t, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "self_attention step",
                msg: format!("expected [B, D], got {shape:?}"),
            });
        }
        check_width("self_attention step", &shape, self.width)?;
        cache.keys.push(self.key.forward(p, x)?);
        cache.values.push(self.value.forward(p, x)?);
        let q = self.query.forward(p, x)?;
        let ctx = cached_attention(q, &cache.keys, &cache.values, self.heads, self.inv_sqrt_head())?;
        self.output.forward(p, ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn setup(width: usize, heads: usize) -> (ParameterStore<f64>, SelfAttention) {
        let mut store = ParameterStore::new(21);
        let attn = SelfAttention::new(&mut store, "attn", width, heads).unwrap();
        (store, attn)
    }

    #[test]
    fn heads_must_divide_width() {
        let mut store = ParameterStore::<f64>::new(0);
        assert!(SelfAttention::new(&mut store, "a", 5, 2).is_err());
    }

    #[test]
    fn single_step_attends_only_to_itself() {
        let (store, attn) = setup(4, 2);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let xv = Tensor::from_fn([1, 3, 4], |i| (i as f64 * 0.7).cos());
        let seq = tape.leaf(xv.clone());
        let (out, w) = attn.forward_with_weights(&p, seq, false).unwrap();
        assert!(w.value().data().iter().all(|&x| x == 1.0));
        let x = tape.leaf(xv.reshape([3, 1, 4]).unwrap());
        let expected = attn.output.forward(&p, attn.value.forward(&p, x).unwrap()).unwrap();
        assert_eq!(out.value().data(), expected.value().data());
    }

    #[test]
    fn weight_rows_sum_to_one() {
        let (store, attn) = setup(6, 3);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let seq = tape.leaf(Tensor::from_fn([7, 2, 6], |i| (i as f64 * 0.37).sin() * 2.0));
        for causal in [false, true] {
            let (_, w) = attn.forward_with_weights(&p, seq, causal).unwrap();
            for row in w.value().data().chunks(7) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_outputs_ignore_future_steps() {
        let (store, attn) = setup(4, 2);
        let base = Tensor::from_fn([6, 2, 4], |i| (i as f64 * 0.13).sin());
        let run = |input: Tensor<f64>| {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let seq = tape.leaf(input);
            attn.forward(&p, seq, true).unwrap().value()
        };
        let reference = run(base.clone());
        for t in 0..5 {
            let mut perturbed = base.clone();
            for j in (t + 1) * 8..(t + 2) * 8 {
                perturbed.data_mut()[j] += 0.5;
            }
            let out = run(perturbed);
            let prefix = (t + 1) * 8;
            assert_eq!(&out.data()[..prefix], &reference.data()[..prefix]);
            assert_ne!(&out.data()[prefix..prefix + 8], &reference.data()[prefix..prefix + 8]);
        }
    }

    #[test]
    fn incremental_step_matches_full_causal_pass() {
        let (store, attn) = setup(4, 2);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let xv = Tensor::from_fn([5, 3, 4], |i| (i as f64 * 0.29).cos());
        let full = attn.forward(&p, tape.leaf(xv.clone()), true).unwrap().value();
        let mut cache = KvCache::new();
        for t in 0..5 {
            let x = tape.leaf(Tensor::new([3, 4], xv.data()[t * 12..(t + 1) * 12].to_vec()).unwrap());
            let y = attn.step(&p, &mut cache, x).unwrap().value();
            for (a, b) in y.data().iter().zip(&full.data()[t * 12..(t + 1) * 12]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
