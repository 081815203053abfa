//! The SDE–RNN: latent SDE evolution between observations, optional attention
//! on the pre-RNN state, and a GRU update at each observation.
//!
//! For observation `i`:
//!
//! ```text
//! h'_i = integrate(h_{i-1}, t_{i-1}, t_i)        (h_0 = 0, t_0 = 0)
//! a_i  = attention(h'_1..h'_i)  or  h'_i
//! h_i  = GRU(a_i, encode([x̃_i, m_i]))
//! o_i  = OutputNN(h'_i)
//! ```
//!
//! A sequence with no observed channel at step `i` skips the GRU update and
//! carries `h_i = h'_i` (configurable).

use std::fmt;
use std::str::FromStr;

use crate::attention::{AttentionConfig, AttentionKind, LatentAttention};
use crate::data::TimeSeriesBatch;
use crate::error::{Error, Result};
use crate::nn::{Bound, GruCell, Linear, Mlp, ParameterStore};
use crate::scalar::Scalar;
use crate::sde::{observation_grid, BrownianPath, SdeDynamics};
use crate::tensor::{concat, stack, Tensor, Var};

/// The five model variants compared in the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    SdeRnn,
    SdeScha,
    SdeTvfL,
    SdeTvfT,
    SdePyr,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SdeRnn,
        Variant::SdeScha,
        Variant::SdeTvfL,
        Variant::SdeTvfT,
        Variant::SdePyr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SdeRnn => "sde-rnn",
            Variant::SdeScha => "sde-scha",
            Variant::SdeTvfL => "sde-tvf-l",
            Variant::SdeTvfT => "sde-tvf-t",
            Variant::SdePyr => "sde-pyr",
        }
    }

    pub fn attention(self) -> AttentionKind {
        match self {
            Variant::SdeRnn => AttentionKind::None,
            Variant::SdeScha => AttentionKind::StaticChannel,
            Variant::SdeTvfL => AttentionKind::TvfLstm,
            Variant::SdeTvfT => AttentionKind::TvfTransformer,
            Variant::SdePyr => AttentionKind::Pyramidal,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// Final post-RNN state `h_N`.
    Final,
    /// Mean of the post-RNN states over time.
    Mean,
}

impl FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(Readout::Final),
            "mean" => Ok(Readout::Mean),
            _ => Err(Error::invalid(format!("unknown readout {s:?}"))),
        }
    }
}

impl fmt::Display for Readout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Readout::Final => "final",
            Readout::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub latent: usize,
    /// Hidden widths of the drift and diffusion networks.
    pub dynamics_hidden: Vec<usize>,
    /// Without diffusion the latent dynamics are an ODE.
    pub diffusion: bool,
    pub attention: AttentionConfig,
    pub output_hidden: Vec<usize>,
    /// Feed the observation mask to the input encoder next to the values.
    pub feed_mask: bool,
    pub num_classes: Option<usize>,
    pub readout: Readout,
    pub substeps: usize,
    /// Longest sequence the model will see.
    pub max_len: usize,
    pub skip_unobserved: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            latent: 16,
            dynamics_hidden: vec![50],
            diffusion: true,
            attention: AttentionConfig::default(),
            output_hidden: vec![16],
            feed_mask: true,
            num_classes: None,
            readout: Readout::Final,
            substeps: 5,
            max_len: 128,
            skip_unobserved: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdeRnn {
    cfg: ModelConfig,
    pub dynamics: SdeDynamics,
    pub attention: LatentAttention,
    pub encoder: Linear,
    pub gru: GruCell,
    pub output: Mlp,
    pub classifier: Option<Linear>,
    gate_override: Option<f64>,
}

/// Per-step states of one forward pass; every `Vec` has one `[B, ·]` entry per
/// observation.
#[derive(Debug, Clone)]
pub struct ForwardTrace<'t, T: Scalar = f64> {
    pub pre: Vec<Var<'t, T>>,
    pub attended: Vec<Var<'t, T>>,
    pub post: Vec<Var<'t, T>>,
    pub outputs: Vec<Var<'t, T>>,
    pub diverged: Vec<bool>,
}

impl<'t, T: Scalar> ForwardTrace<'t, T> {
    pub fn pre_states(&self) -> Result<Var<'t, T>> {
        stack(&self.pre)
    }

    pub fn attended_states(&self) -> Result<Var<'t, T>> {
        stack(&self.attended)
    }

    pub fn post_states(&self) -> Result<Var<'t, T>> {
        stack(&self.post)
    }

    /// `[T, B, D]` predictions.
    pub fn output_sequence(&self) -> Result<Var<'t, T>> {
        stack(&self.outputs)
    }

    pub fn num_diverged(&self) -> usize {
        self.diverged.iter().filter(|&&d| d).count()
    }

    /// All recorded values, for equality checks.
    pub fn values(&self) -> Vec<Tensor<T>> {
        [&self.pre, &self.attended, &self.post, &self.outputs]
            .iter()
            .flat_map(|v| v.iter().map(Var::value))
            .collect()
    }
}

impl SdeRnn {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, cfg: ModelConfig) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.latent == 0 || cfg.substeps == 0 {
            return Err(Error::invalid(
                "input width, latent width and substeps must be positive",
            ));
        }
        let h = cfg.latent;
        let enc_in = if cfg.feed_mask {
            2 * cfg.input_dim
        } else {
            cfg.input_dim
        };
        let dynamics = SdeDynamics::new(store, "sde", h, &cfg.dynamics_hidden, cfg.diffusion)?;
        let attention = LatentAttention::new(store, "attention", &cfg.attention, h, cfg.max_len.max(1))?;
        let encoder = Linear::new(store, "encoder", enc_in, h)?;
        let gru = GruCell::new(store, "gru", h, h)?;
        let mut dims = vec![h];
        dims.extend_from_slice(&cfg.output_hidden);
        dims.push(cfg.input_dim);
        let output = Mlp::new(store, "output", &dims)?;
        let classifier = match cfg.num_classes {
            Some(c) if c >= 2 => Some(Linear::new(store, "classifier", h, c)?),
            Some(c) => {
                return Err(Error::invalid(format!(
                    "classification needs at least 2 classes, got {c}"
                )))
            }
            None => None,
        };
        Ok(Self {
            cfg,
            dynamics,
            attention,
            encoder,
            gru,
            output,
            classifier,
            gate_override: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Replaces learned attention gates by a constant (testing hook).
    pub fn set_gate_override(&mut self, gate: Option<f64>) {
        self.gate_override = gate;
    }

    /// Solver grid for a batch: `substeps` uniform substeps per observation interval from 0.
    pub fn solver_grid(&self, timestamps: &[f64]) -> Result<Vec<f64>> {
        observation_grid(0.0, timestamps, self.cfg.substeps)
    }

    /// One Brownian path per sequence, keyed by `base_seed` and the sequence id.
    pub fn brownian_path<T: Scalar>(&self, batch: &TimeSeriesBatch, base_seed: u64) -> Result<BrownianPath<T>> {
        let grid: Vec<T> = self.solver_grid(&batch.timestamps)?.into_iter().map(T::lit).collect();
        BrownianPath::for_sequences(&grid, &batch.ids, self.cfg.latent, base_seed)
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        batch: &TimeSeriesBatch,
        path: &BrownianPath<T>,
    ) -> Result<ForwardTrace<'t, T>> {
        batch.validate()?;
        if batch.dims() != self.cfg.input_dim {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: vec![self.cfg.input_dim],
                right: vec![batch.dims()],
            });
        }
        let (steps, b, d) = (batch.steps(), batch.batch_size(), batch.dims());
        if steps > self.cfg.max_len {
            return Err(Error::invalid(format!(
                "sequence of {steps} steps exceeds the configured maximum {}",
                self.cfg.max_len
            )));
        }
        if path.batch() != b || path.width() != self.cfg.latent {
            return Err(Error::invalid("Brownian path does not match the batch"));
        }
        let tape = p
            .vars()
            .first()
            .map(|v| v.tape())
            .ok_or_else(|| Error::invalid("no parameters bound"))?;
        let values = batch.values.cast::<T>();
        let mask = batch.mask.cast::<T>();
        let h_width = self.cfg.latent;

        let mut h = tape.constant(Tensor::zeros([b, h_width]));
        let mut t_prev = T::zero();
        let mut attn_state = self.attention.start(tape, b);
        let mut trace = ForwardTrace {
            pre: Vec::with_capacity(steps),
            attended: Vec::with_capacity(steps),
            post: Vec::with_capacity(steps),
            outputs: Vec::with_capacity(steps),
            diverged: vec![false; b],
        };
        let step_slice = |x: &Tensor<T>, k: usize| {
            Tensor::new([b, d], x.data()[k * b * d..(k + 1) * b * d].to_vec()).expect("step slice")
        };
        for k in 0..steps {
            let t = T::lit(batch.timestamps[k]);
            let pre = if t > t_prev {
                let (next, bad) = self.dynamics.integrate_guarded(p, h, t_prev, t, path)?;
                for (flag, b) in trace.diverged.iter_mut().zip(bad) {
                    *flag |= b;
                }
                next
            } else {
                h
            };
            t_prev = t;
            let attended = self
                .attention
                .step(p, &mut attn_state, pre, self.gate_override.map(T::lit))?;

            let x = tape.constant(step_slice(&values, k));
            let input = if self.cfg.feed_mask {
                concat(&[x, tape.constant(step_slice(&mask, k))], 1)?
            } else {
                x
            };
            let updated = self.gru.step(p, attended, self.encoder.forward(p, input)?)?;
            let observed: Vec<bool> = (0..b).map(|j| batch.step_observed(k, j)).collect();
            let post = if !self.cfg.skip_unobserved || observed.iter().all(|&o| o) {
                updated
            } else if observed.iter().all(|&o| !o) {
                pre
            } else {
                let keep = Tensor::from_fn(
                    [b, h_width],
                    |i| if observed[i / h_width] { T::one() } else { T::zero() },
                );
                let skip = keep.map(|m| T::one() - m);
                updated.mul(tape.constant(keep))?.add(pre.mul(tape.constant(skip))?)?
            };
            // A non-finite update marks the sequence diverged; its row is
            // zeroed so it cannot poison batch-level attention statistics.
            let (post, bad) = post.guard_rows()?;
            for (flag, b) in trace.diverged.iter_mut().zip(bad) {
                *flag |= b;
            }
            trace.outputs.push(self.output.forward(p, pre)?);
            trace.pre.push(pre);
            trace.attended.push(attended);
            trace.post.push(post);
            h = post;
        }
        Ok(trace)
    }

    /// Class scores `[B, C]` from the post-RNN states.
    pub fn classification_logits<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        trace: &ForwardTrace<'t, T>,
    ) -> Result<Var<'t, T>> {
        let head = self
            .classifier
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no classification head"))?;
        let last = *trace.post.last().ok_or_else(|| Error::invalid("empty trace"))?;
        let features = match self.cfg.readout {
            Readout::Final => last,
            Readout::Mean => stack(&trace.post)?.mean_axis(0)?,
        };
        head.forward(p, features)
    }
}

fn valid_weights(diverged: &[bool]) -> Result<(Vec<bool>, usize)> {
    let valid: Vec<bool> = diverged.iter().map(|d| !d).collect();
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(Error::AllDiverged(diverged.len()));
    }
    Ok((valid, n))
}

/// Mean squared error of the predictions against `targets: [T, B, D]` over
/// every grid point, averaged over non-diverged sequences.
pub fn interpolation_loss<'t, T: Scalar>(trace: &ForwardTrace<'t, T>, targets: &Tensor) -> Result<Var<'t, T>> {
    let out = trace.output_sequence()?;
    let shape = out.shape();
    if targets.shape() != shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "interpolation loss",
            left: shape,
            right: targets.shape().to_vec(),
        });
    }
    let (t, b, d) = (shape[0], shape[1], shape[2]);
    let (valid, n) = valid_weights(&trace.diverged)?;
    let tape = out.tape();
    let diff = out.sub(tape.constant(targets.cast()))?;
    let sq = diff.square()?;
    let weighted = if n == b {
        sq
    } else {
        let w = Tensor::from_fn([t, b, d], |i| if valid[(i / d) % b] { T::one() } else { T::zero() });
        sq.mul(tape.constant(w))?
    };
    weighted.sum()?.scale(T::one() / T::lit((n * t * d) as f64))
}

/// Mean cross-entropy of `logits: [B, C]` against `labels`, skipping diverged
/// sequences.
pub fn cross_entropy<'t, T: Scalar>(logits: Var<'t, T>, labels: &[usize], diverged: &[bool]) -> Result<Var<'t, T>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() || diverged.len() != labels.len() {
        return Err(Error::invalid(format!(
            "logits {shape:?} do not match {} labels",
            labels.len()
        )));
    }
    let c = shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::IndexOutOfRange {
            op: "cross_entropy label",
            index: bad,
            extent: c,
        });
    }
    let (valid, n) = valid_weights(diverged)?;
    let target = Tensor::from_fn([labels.len(), c], |i| {
        let (row, col) = (i / c, i % c);
        if valid[row] && labels[row] == col {
            T::one()
        } else {
            T::zero()
        }
    });
    logits
        .log_softmax()?
        .mul(logits.tape().constant(target))?
        .sum()?
        .scale(-T::one() / T::lit(n as f64))
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let c = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(c.max(1))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
