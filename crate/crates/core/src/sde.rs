//! Euler–Maruyama integration of the latent SDE `dh = f(h, t) dt + g(h, t) ⊙ dW`
//! along a fixed, seeded Brownian path.
//!
//! Diffusion is diagonal: `g` returns one scale per latent channel. Gradients
//! flow through the discrete solver steps (discretize-then-differentiate).

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Bound, Mlp, ParameterStore};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from, Stream};
use crate::tensor::{concat, Tensor, Var};

/// Brownian increments over a time grid; `increments[k]` covers
/// `(grid[k], grid[k + 1])` and has variance `grid[k + 1] - grid[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath<T: Scalar = f64> {
    grid: Vec<T>,
    increments: Tensor<T>,
    seed: u64,
}

fn check_grid<T: Scalar>(grid: &[T]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::invalid("Brownian grid needs at least two points"));
    }
    if let Some(w) = grid.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::invalid(format!(
            "Brownian grid not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

impl<T: Scalar> BrownianPath<T> {
    /// Draws `[steps, batch, width]` increments from one stream seeded by `seed`.
    pub fn sample(grid: &[T], batch: usize, width: usize, seed: u64) -> Result<Self> {
        check_grid(grid)?;
        let mut rng = rng_from(seed);
        let steps = grid.len() - 1;
        let mut data = Vec::with_capacity(steps * batch * width);
        for w in grid.windows(2) {
            let sd = (w[1] - w[0]).sqrt().as_f64();
            for _ in 0..batch * width {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(T::lit(sd * z));
            }
        }
        Ok(Self {
            grid: grid.to_vec(),
            increments: Tensor::new([steps, batch, width], data)?,
            seed,
        })
    }

    /// One independent path per sequence, keyed by `derive_seed(base, Brownian, id)`,
    /// so a sequence sees the same path regardless of which batch it lands in.
    pub fn for_sequences(grid: &[T], ids: &[u64], width: usize, base_seed: u64) -> Result<Self> {
        check_grid(grid)?;
        let steps = grid.len() - 1;
        let batch = ids.len();
        let per_seq: Vec<Self> = ids
            .iter()
            .map(|&id| Self::sample(grid, 1, width, derive_seed(base_seed, Stream::Brownian, id)))
            .collect::<Result<_>>()?;
        let mut data = vec![T::zero(); steps * batch * width];
        for (b, path) in per_seq.iter().enumerate() {
            let src = path.increments.data();
            for k in 0..steps {
                let dst = (k * batch + b) * width;
                data[dst..dst + width].copy_from_slice(&src[k * width..(k + 1) * width]);
            }
        }
        Ok(Self {
            grid: grid.to_vec(),
            increments: Tensor::new([steps, batch, width], data)?,
            seed: base_seed,
        })
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn increments(&self) -> &Tensor<T> {
        &self.increments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn batch(&self) -> usize {
        self.increments.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.increments.shape()[2]
    }

    /// Increment over interval `k` as a `[B, H]` tensor.
    pub fn increment(&self, k: usize) -> Tensor<T> {
        let n = self.batch() * self.width();
        Tensor::new(
            [self.batch(), self.width()],
            self.increments.data()[k * n..(k + 1) * n].to_vec(),
        )
        .expect("increment slice")
    }

    /// `W(grid[k]) - W(grid[0])`, `[B, H]`.
    pub fn value_at(&self, k: usize) -> Tensor<T> {
        let mut acc = Tensor::zeros([self.batch(), self.width()]);
        for j in 0..k {
            let inc = self.increment(j);
            for (a, &d) in acc.data_mut().iter_mut().zip(inc.data()) {
                *a += d;
            }
        }
        acc
    }

    /// Index of grid point exactly equal to `t`.
    pub fn locate(&self, t: T) -> Option<usize> {
        self.grid
            .binary_search_by(|g| g.partial_cmp(&t).expect("finite grid"))
            .ok()
    }
}

/// Solver grid from `start` through each observation time, with `substeps`
/// uniform sub-intervals per observation interval. A first observation equal
/// to `start` contributes no interval.
pub fn observation_grid<T: Scalar>(start: T, times: &[T], substeps: usize) -> Result<Vec<T>> {
    if substeps == 0 {
        return Err(Error::invalid("substeps must be at least 1"));
    }
    let mut grid = vec![start];
    let mut prev = start;
    for (i, &t) in times.iter().enumerate() {
        if i == 0 && t == start {
            continue;
        }
        if !(t > prev) {
            return Err(Error::invalid(format!(
                "observation times must be strictly increasing: {prev} then {t}"
            )));
        }
        let span = t - prev;
        for j in 1..substeps {
            grid.push(prev + span * T::lit(j as f64) / T::lit(substeps as f64));
        }
        grid.push(t);
        prev = t;
    }
    Ok(grid)
}

/// Drift and diffusion networks. Both read `[h, t]` (latent plus one time
/// feature) and emit latent width. Without a diffusion network the dynamics
/// reduce to the ODE `dh/dt = f(h, t)`.
#[derive(Debug, Clone)]
pub struct SdeDynamics {
    drift: Mlp,
    diffusion: Option<Mlp>,
    latent: usize,
}

impl SdeDynamics {
    /// `hidden` lists the hidden widths of both networks (empty for a single
    /// linear layer).
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        latent: usize,
        hidden: &[usize],
        with_diffusion: bool,
    ) -> Result<Self> {
        let mut dims = vec![latent + 1];
        dims.extend_from_slice(hidden);
        dims.push(latent);
        let drift = Mlp::new(store, &format!("{name}.drift"), &dims)?;
        let diffusion = if with_diffusion {
            Some(Mlp::new(store, &format!("{name}.diffusion"), &dims)?)
        } else {
            None
        };
        Ok(Self {
            drift,
            diffusion,
            latent,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    pub fn has_diffusion(&self) -> bool {
        self.diffusion.is_some()
    }

    pub fn drift_net(&self) -> &Mlp {
        &self.drift
    }

    pub fn diffusion_net(&self) -> Option<&Mlp> {
        self.diffusion.as_ref()
    }

    fn with_time<'t, T: Scalar>(h: Var<'t, T>, t: T) -> Result<Var<'t, T>> {
        let batch = h.shape()[0];
        let tcol = h.tape().constant(Tensor::full([batch, 1], t));
        concat(&[h, tcol], 1)
    }

    pub fn drift<'t, T: Scalar>(&self, p: &Bound<'t, T>, h: Var<'t, T>, t: T) -> Result<Var<'t, T>> {
        self.drift.forward(p, Self::with_time(h, t)?)
    }

    pub fn diffusion<'t, T: Scalar>(&self, p: &Bound<'t, T>, h: Var<'t, T>, t: T) -> Result<Option<Var<'t, T>>> {
        match &self.diffusion {
            Some(net) => Ok(Some(net.forward(p, Self::with_time(h, t)?)?)),
            None => Ok(None),
        }
    }

    fn step_raw<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        h: Var<'t, T>,
        t: T,
        dt: T,
        dw: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        if !(dt > T::zero()) {
            return Err(Error::invalid(format!("step size must be positive, got {dt}")));
        }
        let next = h.add(self.drift(p, h, t)?.scale(dt)?)?;
        match self.diffusion(p, h, t)? {
            Some(g) => next.add(g.mul(dw)?),
            None => Ok(next),
        }
    }

    /// One Euler–Maruyama step `h + f(h, t) dt + g(h, t) ⊙ dW`.
    pub fn em_step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        h: Var<'t, T>,
        t: T,
        dt: T,
        dw: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let next = self.step_raw(p, h, t, dt, dw).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged { t: t.as_f64() },
            other => other,
        })?;
        if !next.with_value(Tensor::is_finite) {
            return Err(Error::Diverged { t: t.as_f64() });
        }
        Ok(next)
    }

    fn span(path: &BrownianPath<impl Scalar>, t0_idx: Option<usize>, t1_idx: Option<usize>) -> Result<(usize, usize)> {
        match (t0_idx, t1_idx) {
            (Some(a), Some(b)) if b > a => Ok((a, b)),
            _ => Err(Error::invalid(format!(
                "integration interval is not covered by the Brownian grid of {} points",
                path.grid().len()
            ))),
        }
    }

    /// Integrates from `t0` to `t1` over every grid interval of `path` between
    /// them. Fails with [`Error::Diverged`] on any non-finite state.
    pub fn integrate<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        h0: Var<'t, T>,
        t0: T,
        t1: T,
        path: &BrownianPath<T>,
    ) -> Result<Var<'t, T>> {
        let (a, b) = Self::span(path, path.locate(t0), path.locate(t1))?;
        let tape = h0.tape();
        let mut h = h0;
        for k in a..b {
            let (ta, tb) = (path.grid()[k], path.grid()[k + 1]);
            let dw = tape.constant(path.increment(k));
            h = self.em_step(p, h, ta, tb - ta, dw)?;
        }
        Ok(h)
    }

    /// Like [`SdeDynamics::integrate`], but trajectories (rows of `h`) that
    /// become non-finite are zeroed, detached and flagged instead of failing.
    pub fn integrate_guarded<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        h0: Var<'t, T>,
        t0: T,
        t1: T,
        path: &BrownianPath<T>,
    ) -> Result<(Var<'t, T>, Vec<bool>)> {
        let (a, b) = Self::span(path, path.locate(t0), path.locate(t1))?;
        let tape = h0.tape();
        let mut diverged = vec![false; h0.shape()[0]];
        let mut h = h0;
        for k in a..b {
            let (ta, tb) = (path.grid()[k], path.grid()[k + 1]);
            let dw = tape.constant(path.increment(k));
            let (guarded, bad) = self.step_raw(p, h, ta, tb - ta, dw)?.guard_rows()?;
            for (d, b) in diverged.iter_mut().zip(bad) {
                *d |= b;
            }
            h = guarded;
        }
        Ok((h, diverged))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    /// Single-linear drift fixed to `f(h) = -h`, diffusion optional and zeroed.
    fn linear_decay(latent: usize, diffusion: bool) -> (ParameterStore<f64>, SdeDynamics) {
        let mut store = ParameterStore::new(1);
        let dyn_ = SdeDynamics::new(&mut store, "sde", latent, &[], diffusion).unwrap();
        store.zero_prefix("sde");
        let w = store.id("sde.drift.0.weight").unwrap();
        for i in 0..latent {
            store.value_mut(w).set(&[i, i], -1.0).unwrap();
        }
        (store, dyn_)
    }

    #[test]
    fn zero_dynamics_leave_state_unchanged() {
        let mut store = ParameterStore::<f64>::new(2);
        let dyn_ = SdeDynamics::new(&mut store, "sde", 3, &[5], true).unwrap();
        store.zero_prefix("sde");
        let tape = Tape::new();
        let p = store.bind(&tape);
        let hv = Tensor::from_fn([2, 3], |i| i as f64 - 2.0);
        let h = tape.leaf(hv.clone());
        let dw = tape.leaf(Tensor::full([2, 3], 0.7));
        let out = dyn_.em_step(&p, h, 0.2, 0.1, dw).unwrap().value();
        assert_eq!(out, hv);
    }

    #[test]
    fn one_euler_step_of_linear_decay() {
        let (store, dyn_) = linear_decay(1, false);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h = tape.leaf(Tensor::full([1, 1], 1.0));
        let dw = tape.leaf(Tensor::zeros([1, 1]));
        let out = dyn_.em_step(&p, h, 0.0, 0.1, dw).unwrap().value();
        assert!((out.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn pure_noise_step_adds_the_increment() {
        let mut store = ParameterStore::<f64>::new(3);
        let dyn_ = SdeDynamics::new(&mut store, "sde", 2, &[], true).unwrap();
        store.zero_prefix("sde");
        let b = store.id("sde.diffusion.0.bias").unwrap();
        store.set("sde.diffusion.0.bias", Tensor::ones([2])).unwrap();
        assert_eq!(store.value(b).data(), &[1.0, 1.0]);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h = tape.leaf(Tensor::new([1, 2], vec![0.5, -1.0]).unwrap());
        let dw = tape.leaf(Tensor::full([1, 2], 0.3));
        let out = dyn_.em_step(&p, h, 0.0, 0.05, dw).unwrap().value();
        assert_eq!(out.data(), &[0.5 + 0.3, -1.0 + 0.3]);
    }

    #[test]
    fn step_rejects_nonpositive_dt_and_overflow() {
        let (mut store, dyn_) = linear_decay(1, false);
        let tape = Tape::lenient();
        let p = store.bind(&tape);
        let h = tape.leaf(Tensor::full([1, 1], 1.0));
        let dw = tape.leaf(Tensor::zeros([1, 1]));
        assert!(dyn_.em_step(&p, h, 0.0, 0.0, dw).is_err());

        store.zero_prefix("sde");
        store.set("sde.drift.0.bias", Tensor::full([1], f64::MAX)).unwrap();
        let tape = Tape::lenient();
        let p = store.bind(&tape);
        let h = tape.leaf(Tensor::full([1, 1], f64::MAX));
        let dw = tape.leaf(Tensor::zeros([1, 1]));
        assert!(matches!(dyn_.em_step(&p, h, 0.0, 1.0, dw), Err(Error::Diverged { .. })));
    }

    #[test]
    fn grid_construction() {
        let g = observation_grid(0.0, &[0.5, 1.0], 2).unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = observation_grid(0.0, &[0.0, 1.0], 2).unwrap();
        assert_eq!(g, vec![0.0, 0.5, 1.0]);
        assert!(observation_grid(0.0, &[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn brownian_sampling() {
        let grid = [0.0, 0.1, 0.3];
        let a = BrownianPath::<f64>::sample(&grid, 2, 3, 42).unwrap();
        let b = BrownianPath::<f64>::sample(&grid, 2, 3, 42).unwrap();
        let c = BrownianPath::<f64>::sample(&grid, 2, 3, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.increments(), c.increments());
        assert!(BrownianPath::<f64>::sample(&[0.0, 0.2, 0.1], 1, 1, 0).is_err());
        assert!(BrownianPath::<f64>::sample(&[0.0], 1, 1, 0).is_err());
    }

    #[test]
    fn sequence_paths_do_not_depend_on_batch_company() {
        let grid = [0.0, 0.5, 1.0];
        let ab = BrownianPath::<f64>::for_sequences(&grid, &[3, 9], 2, 5).unwrap();
        let b = BrownianPath::<f64>::for_sequences(&grid, &[9], 2, 5).unwrap();
        for k in 0..2 {
            assert_eq!(&ab.increment(k).data()[2..4], b.increment(k).data());
        }
    }

    #[test]
    fn single_interval_is_one_step() {
        let (store, dyn_) = linear_decay(1, false);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let path = BrownianPath::sample(&[0.0, 0.05], 1, 1, 0).unwrap();
        let h = tape.leaf(Tensor::full([1, 1], 2.0));
        let before = tape.len();
        let out = dyn_.integrate(&p, h, 0.0, 0.05, &path).unwrap().value();
        assert!(tape.len() > before);
        assert!((out.data()[0] - 2.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn interval_must_lie_on_grid() {
        let (store, dyn_) = linear_decay(1, false);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let path = BrownianPath::sample(&[0.0, 0.5, 1.0], 1, 1, 0).unwrap();
        let h = tape.leaf(Tensor::full([1, 1], 1.0));
        assert!(dyn_.integrate(&p, h, 0.0, 0.7, &path).is_err());
        assert!(dyn_.integrate(&p, h, 1.0, 0.5, &path).is_err());
    }
}
