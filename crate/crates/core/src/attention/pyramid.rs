use super::resample::{downsample, upsample_linear};
use crate::error::{Error, Result};
use crate::nn::{Bound, KvCache, Linear, ParameterStore, SelfAttention};
use crate::scalar::Scalar;
use crate::tensor::{concat, Var};

/// Multi-scale self-attention: level `l` attends over every `base^l`-th step,
/// is interpolated back to full length, and a linear layer fuses the levels.
#[derive(Debug, Clone)]
pub struct PyramidalAttention {
    pub levels: Vec<SelfAttention>,
    pub fusion: Linear,
    stride_base: usize,
    width: usize,
}

/// Level count used when none is configured: `floor(log2 len)` within `1..=4`.
pub fn default_levels(len: usize) -> usize {
    let log2 = usize::BITS - 1 - len.max(1).leading_zeros();
    (log2 as usize).clamp(1, 4)
}

/// Per-level key/value caches and the latest output of each level.
#[derive(Debug, Clone)]
pub struct PyramidState<'t, T: Scalar = f64> {
    caches: Vec<KvCache<'t, T>>,
    latest: Vec<Option<Var<'t, T>>>,
    step: usize,
}

impl PyramidalAttention {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        levels: usize,
        stride_base: usize,
    ) -> Result<Self> {
        if levels == 0 || stride_base < 2 && levels > 1 {
            return Err(Error::invalid(format!(
                "pyramid needs at least one level and a stride base of at least 2, got {levels} and {stride_base}"
            )));
        }
        let attn = (0..levels)
            .map(|l| SelfAttention::new(store, &format!("{name}.level{l}"), width, heads))
            .collect::<Result<_>>()?;
        Ok(Self {
            levels: attn,
            fusion: Linear::new(store, &format!("{name}.fusion"), levels * width, width)?,
            stride_base,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn stride(&self, level: usize) -> usize {
        self.stride_base.pow(level as u32)
    }

    /// Transforms `[T, B, H]` into a sequence of the same shape.
    pub fn transform<'t, T: Scalar>(&self, p: &Bound<'t, T>, seq: Var<'t, T>, causal: bool) -> Result<Var<'t, T>> {
        let shape = seq.shape();
        if shape.len() != 3 || shape[0] == 0 {
            return Err(Error::InvalidShape {
                op: "pyramidal_transform",
                msg: format!("expected non-empty [T, B, H], got {shape:?}"),
            });
        }
        let outs = self
            .levels
            .iter()
            .enumerate()
            .map(|(l, attn)| {
                let coarse = downsample(seq, self.stride(l))?;
                upsample_linear(attn.forward(p, coarse, causal)?, shape[0])
            })
            .collect::<Result<Vec<_>>>()?;
        self.fusion.forward(p, concat(&outs, 2)?)
    }

    pub fn start<'t, T: Scalar>(&self) -> PyramidState<'t, T> {
        PyramidState {
            caches: self.levels.iter().map(|_| KvCache::new()).collect(),
            latest: vec![None; self.levels.len()],
            step: 0,
        }
    }

    /// Consumes the next state `[B, H]` and returns the last row of the causal
    /// transform of the prefix seen so far. Level `l` only advances on steps
    /// that its downsample keeps; otherwise its previous output carries over,
    /// which is exactly where the interpolated endpoint lands.
    pub fn step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        state: &mut PyramidState<'t, T>,
        h: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        for (l, attn) in self.levels.iter().enumerate() {
            if state.step.is_multiple_of(self.stride(l)) {
                state.latest[l] = Some(attn.step(p, &mut state.caches[l], h)?);
            }
        }
        state.step += 1;
        let outs: Vec<Var<'t, T>> = state
            .latest
            .iter()
            .map(|o| o.expect("level 0 runs every step"))
            .collect();
        self.fusion.forward(p, concat(&outs, 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn default_depth() {
        assert_eq!(default_levels(1), 1);
        assert_eq!(default_levels(3), 1);
        assert_eq!(default_levels(4), 2);
        assert_eq!(default_levels(50), 4);
    }

    #[test]
    fn single_level_with_identity_fusion_is_self_attention() {
        let mut store = ParameterStore::<f64>::new(5);
        let pyr = PyramidalAttention::new(&mut store, "pyr", 4, 2, 1, 2).unwrap();
        store.zero_prefix("pyr.fusion");
        store.set("pyr.fusion.weight", Tensor::identity(4)).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.leaf(Tensor::from_fn([6, 3, 4], |i| (i as f64 * 0.23).cos()));
        for causal in [false, true] {
            let a = pyr.transform(&p, x, causal).unwrap().value();
            let b = pyr.levels[0].forward(&p, x, causal).unwrap().value();
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_step_weights_are_one() {
        let mut store = ParameterStore::<f64>::new(5);
        let pyr = PyramidalAttention::new(&mut store, "pyr", 4, 1, 3, 2).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.leaf(Tensor::from_fn([1, 2, 4], |i| i as f64 * 0.1));
        for attn in &pyr.levels {
            let (_, w) = attn.forward_with_weights(&p, x, true).unwrap();
            assert!(w.value().data().iter().all(|&v| v == 1.0));
        }
        assert_eq!(pyr.transform(&p, x, true).unwrap().shape(), vec![1, 2, 4]);
    }

    #[test]
    fn incremental_matches_prefix_recompute() {
        let mut store = ParameterStore::<f64>::new(12);
        let pyr = PyramidalAttention::new(&mut store, "pyr", 4, 2, 3, 2).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.leaf(Tensor::from_fn([9, 2, 4], |i| (i as f64 * 0.61).sin()));
        let mut state = pyr.start();
        for t in 0..9 {
            let idx: Vec<usize> = (0..=t).collect();
            let full = pyr.transform(&p, x.slice_time(&idx).unwrap(), true).unwrap().value();
            let last = &full.data()[t * 8..];
            let h = x.slice_time(&[t]).unwrap().reshape(&[2, 4]).unwrap();
            let inc = pyr.step(&p, &mut state, h).unwrap().value();
            for (u, v) in inc.data().iter().zip(last) {
                assert!((u - v).abs() < 1e-12, "step {t}");
            }
        }
    }
}
