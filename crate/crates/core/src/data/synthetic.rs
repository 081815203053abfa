use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::batch::{BatchMeta, Dataset, Split, TimeSeriesBatch};
use crate::error::{Error, Result};
use crate::seed::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Ornstein–Uhlenbeck parameters for `dη = θ(μ - η) dt + σ dB`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    pub theta: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self {
            theta: 2.0,
            mu: 0.0,
            sigma: 0.2,
        }
    }
}

impl OuParams {
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.theta)
    }
}

/// Samples the OU process at `times` with the exact Gaussian transition.
/// The first value is drawn from the stationary law unless `eta0` is given.
pub fn ou_noise<R: Rng + ?Sized>(times: &[f64], params: OuParams, eta0: Option<f64>, rng: &mut R) -> Result<Vec<f64>> {
    let OuParams { theta, mu, sigma } = params;
    if !(theta > 0.0) || !(sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "OU noise needs theta > 0 and sigma >= 0, got {theta} and {sigma}"
        )));
    }
    let mut out = Vec::with_capacity(times.len());
    let Some(_) = times.first() else {
        return Ok(out);
    };
    let mut eta = eta0.unwrap_or_else(|| {
        let z: f64 = StandardNormal.sample(rng);
        mu + params.stationary_variance().sqrt() * z
    });
    out.push(eta);
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        if !(dt >= 0.0) {
            return Err(Error::invalid("OU sample times must be non-decreasing"));
        }
        let decay = (-theta * dt).exp();
        let sd = sigma * ((1.0 - (-2.0 * theta * dt).exp()) / (2.0 * theta)).sqrt();
        let z: f64 = StandardNormal.sample(rng);
        eta = eta * decay + mu * (1.0 - decay) + sd * z;
        out.push(eta);
    }
    Ok(out)
}

/// Settings of the synthetic periodic dataset
/// `y(t) = A(t) sin(φ(t)) + z0 + η(t)`, with `φ(t) = ∫ 2π f(s) ds` and `A`, `f`
/// linear in `t` between endpoint draws.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSpec {
    pub trajectories: usize,
    pub points: usize,
    pub amplitude: (f64, f64),
    pub frequency: (f64, f64),
    pub offset: (f64, f64),
    pub noise: OuParams,
    /// Trajectories sharing one sampled time grid.
    pub group_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for PeriodicSpec {
    fn default() -> Self {
        Self {
            trajectories: 1000,
            points: 100,
            amplitude: (0.5, 1.5),
            frequency: (0.8, 1.2),
            offset: (-0.5, 0.5),
            noise: OuParams::default(),
            group_size: 32,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl PeriodicSpec {
    pub fn describe(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("generator", "periodic".into());
        put("trajectories", self.trajectories.to_string());
        put("points", self.points.to_string());
        put("amplitude", format!("{}..{}", self.amplitude.0, self.amplitude.1));
        put("frequency", format!("{}..{}", self.frequency.0, self.frequency.1));
        put("offset", format!("{}..{}", self.offset.0, self.offset.1));
        put("ou_theta", self.noise.theta.to_string());
        put("ou_mu", self.noise.mu.to_string());
        put("ou_sigma", self.noise.sigma.to_string());
        put("group_size", self.group_size.to_string());
        put("train_fraction", self.train_fraction.to_string());
        put("seed", self.seed.to_string());
        m
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * rng.gen::<f64>()
}

/// Sorted i.i.d. uniform times on `[0, 1]`, redrawn until strictly increasing.
fn irregular_grid<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let mut t: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if t.windows(2).all(|w| w[1] > w[0]) {
            return t;
        }
    }
}

/// Noiseless signal `A(t) sin(φ(t)) + z0` with a trapezoidal phase integral from 0.
pub fn periodic_signal(times: &[f64], amp: (f64, f64), freq: (f64, f64), offset: f64) -> Vec<f64> {
    let f = |t: f64| freq.0 + (freq.1 - freq.0) * t;
    let mut phase = 0.0;
    let mut prev = 0.0;
    times
        .iter()
        .map(|&t| {
            phase += 0.5 * (2.0 * PI * f(prev) + 2.0 * PI * f(t)) * (t - prev);
            prev = t;
            (amp.0 + (amp.1 - amp.0) * t) * phase.sin() + offset
        })
        .collect()
}

/// Draws `[1, D=1]` periodic trajectories in grid-aligned groups. The first
/// `train_fraction` of groups (rounded) form the training split.
pub fn generate_periodic(spec: &PeriodicSpec) -> Result<Dataset> {
    if spec.trajectories == 0 || spec.points == 0 || spec.group_size == 0 {
        return Err(Error::invalid("periodic dataset needs positive counts"));
    }
    if !(0.0..=1.0).contains(&spec.train_fraction) {
        return Err(Error::invalid("train fraction must lie in [0, 1]"));
    }
    let n_groups = spec.trajectories.div_ceil(spec.group_size);
    let n_train = ((spec.train_fraction * spec.trajectories as f64).round() as usize).min(spec.trajectories);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for g in 0..n_groups {
        let mut grid_rng = stream_rng(spec.seed, Stream::Data, g as u64);
        let times = irregular_grid(&mut grid_rng, spec.points);
        let members: Vec<usize> = (g * spec.group_size..((g + 1) * spec.group_size).min(spec.trajectories)).collect();
        let (tr, te): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&n| n < n_train);
        for (ids, split) in [(tr, Split::Train), (te, Split::Test)] {
            if ids.is_empty() {
                continue;
            }
            let b = ids.len();
            let mut values = vec![0.0; spec.points * b];
            for (j, &n) in ids.iter().enumerate() {
                let mut rng = stream_rng(spec.seed, Stream::Data, (1 << 32) + n as u64);
                let amp = (draw(&mut rng, spec.amplitude), draw(&mut rng, spec.amplitude));
                let freq = (draw(&mut rng, spec.frequency), draw(&mut rng, spec.frequency));
                let z0 = draw(&mut rng, spec.offset);
                let mut noise_rng = stream_rng(spec.seed, Stream::Data, (2 << 32) + n as u64);
                let eta = ou_noise(&times, spec.noise, None, &mut noise_rng)?;
                let y = periodic_signal(&times, amp, freq, z0);
                for k in 0..spec.points {
                    values[k * b + j] = y[k] + eta[k];
                }
            }
            let batch = TimeSeriesBatch::observed(
                Tensor::new([spec.points, b, 1], values)?,
                times.clone(),
                None,
                ids.iter().map(|&n| n as u64).collect(),
                BatchMeta {
                    dataset: "periodic".into(),
                    split,
                    norm: None,
                },
            )?;
            match split {
                Split::Train => train.push(batch),
                Split::Test => test.push(batch),
            }
        }
    }
    Ok(Dataset {
        name: "periodic".into(),
        train,
        test,
        num_classes: None,
        dims: 1,
        meta: spec.describe(),
    })
}

/// Two-class frequency discrimination: `sin(2π f s + φ)` sampled at `points`
/// regular positions over `s ∈ [0, span]`, class 0 at `frequencies.0`, class 1
/// at `frequencies.1`, random phase, no noise. Timestamps are `s / span`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySpec {
    pub train: usize,
    pub test: usize,
    pub points: usize,
    pub frequencies: (f64, f64),
    pub span: f64,
    pub seed: u64,
}

impl Default for FrequencySpec {
    fn default() -> Self {
        Self {
            train: 400,
            test: 200,
            points: 32,
            frequencies: (1.0, 1.3),
            span: 4.0,
            seed: 0,
        }
    }
}

pub fn generate_frequency(spec: &FrequencySpec) -> Result<Dataset> {
    if spec.train == 0 || spec.test == 0 || spec.points < 2 || !(spec.span > 0.0) {
        return Err(Error::invalid(
            "frequency dataset needs positive counts, two points and a positive span",
        ));
    }
    let times: Vec<f64> = (0..spec.points).map(|k| k as f64 / (spec.points - 1) as f64).collect();
    let make = |split: Split, offset: usize, n: usize| -> Result<TimeSeriesBatch> {
        let mut values = vec![0.0; spec.points * n];
        let mut labels = Vec::with_capacity(n);
        for j in 0..n {
            let id = (offset + j) as u64;
            let label = (offset + j) % 2;
            let f = if label == 0 {
                spec.frequencies.0
            } else {
                spec.frequencies.1
            };
            let mut rng = stream_rng(spec.seed, Stream::Data, id);
            let phase = 2.0 * PI * rng.gen::<f64>();
            for (k, &t) in times.iter().enumerate() {
                values[k * n + j] = (2.0 * PI * f * t * spec.span + phase).sin();
            }
            labels.push(label);
        }
        TimeSeriesBatch::observed(
            Tensor::new([spec.points, n, 1], values)?,
            times.clone(),
            Some(labels),
            (offset..offset + n).map(|i| i as u64).collect(),
            BatchMeta {
                dataset: "frequency".into(),
                split,
                norm: None,
            },
        )
    };
    let mut meta = BTreeMap::new();
    meta.insert("generator".into(), "frequency".into());
    meta.insert("train".into(), spec.train.to_string());
    meta.insert("test".into(), spec.test.to_string());
    meta.insert("points".into(), spec.points.to_string());
    meta.insert(
        "frequencies".into(),
        format!("{},{}", spec.frequencies.0, spec.frequencies.1),
    );
    meta.insert("span".into(), spec.span.to_string());
    meta.insert("seed".into(), spec.seed.to_string());
    Ok(Dataset {
        name: "frequency".into(),
        train: vec![make(Split::Train, 0, spec.train)?],
        test: vec![make(Split::Test, spec.train, spec.test)?],
        num_classes: Some(2),
        dims: 1,
        meta,
    })
}
