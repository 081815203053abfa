mod common;

use sdeattn::nn::ParameterStore;
use sdeattn::sde::{observation_grid, BrownianPath, SdeDynamics};
use sdeattn::tensor::{Tape, Tensor};
use sdeattn_testkit::{mean, population_variance, relative_error};

/// Drift `f(h) = -h`, no diffusion network.
fn decay(latent: usize, with_diffusion: bool) -> (ParameterStore<f64>, SdeDynamics) {
    let mut store = ParameterStore::new(11);
    let dyn_ = SdeDynamics::new(&mut store, "sde", latent, &[], with_diffusion).unwrap();
    store.zero_prefix("sde");
    store
        .set(
            "sde.drift.0.weight",
            Tensor::from_fn([latent, latent + 1], |i| {
                if i / (latent + 1) == i % (latent + 1) {
                    -1.0
                } else {
                    0.0
                }
            }),
        )
        .unwrap();
    (store, dyn_)
}

fn uniform_grid(n: usize) -> Vec<f64> {
    observation_grid(0.0, &[1.0], n).unwrap()
}

/// Largest error of the Euler trajectory against `exp(-t)` over the grid.
fn decay_error(n: usize) -> f64 {
    let (store, dyn_) = decay(1, false);
    let grid = uniform_grid(n);
    let path = BrownianPath::sample(&grid, 1, 1, 0).unwrap();
    let tape = Tape::new();
    let p = store.bind(&tape);
    let mut h = tape.leaf(Tensor::full([1, 1], 1.0));
    let mut worst: f64 = 0.0;
    for w in grid.windows(2) {
        h = dyn_.integrate(&p, h, w[0], w[1], &path).unwrap();
        let v = h.value().data()[0];
        worst = worst.max((v - (-w[1]).exp()).abs());
    }
    worst
}

#[test]
fn increment_variance_matches_step() {
    let dt = 0.01;
    let grid: Vec<f64> = (0..=100).map(|k| k as f64 * dt).collect();
    let path = BrownianPath::<f64>::sample(&grid, 10, 100, 2024).unwrap();
    let xs = path.increments().data();
    assert_eq!(xs.len(), 100_000);
    let var = population_variance(xs);
    // Standard error of the variance estimate is dt * sqrt(2 / n) ~ 0.45%.
    assert!((var - dt).abs() / dt < 0.05, "variance {var}");
    assert!(mean(xs).abs() < 4.0 * (dt / xs.len() as f64).sqrt());
}

#[test]
fn increment_scale_follows_uneven_spacing() {
    let grid = [0.0, 0.01, 0.5];
    let path = BrownianPath::<f64>::sample(&grid, 100, 100, 7).unwrap();
    let n = 100 * 100;
    let first = &path.increments().data()[..n];
    let second = &path.increments().data()[n..];
    assert!((population_variance(first) / 0.01 - 1.0).abs() < 0.05);
    assert!((population_variance(second) / 0.49 - 1.0).abs() < 0.05);
}

#[test]
fn euler_converges_to_exponential_decay() {
    let (store, dyn_) = decay(1, false);
    for n in [10, 100, 1000] {
        let grid = uniform_grid(n);
        let path = BrownianPath::sample(&grid, 1, 1, 0).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h = tape.leaf(Tensor::full([1, 1], 1.0));
        let end = dyn_.integrate(&p, h, 0.0, 1.0, &path).unwrap().value().data()[0];
        let exact = (-1.0f64).exp();
        let predicted = exact / (2.0 * n as f64);
        let err = exact - end;
        assert!(err > 0.0);
        assert!(
            relative_error(err, predicted) < 0.6 / n as f64 + 0.05,
            "n={n} err={err}"
        );
    }
}

#[test]
fn euler_is_first_order() {
    let errs: Vec<f64> = [5, 10, 20, 40].iter().map(|&n| decay_error(n)).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio} from {errs:?}");
    }
}

#[test]
fn additive_noise_is_exact() {
    let mut store = ParameterStore::<f64>::new(5);
    let dyn_ = SdeDynamics::new(&mut store, "sde", 2, &[], true).unwrap();
    store.zero_prefix("sde");
    store.set("sde.diffusion.0.bias", Tensor::ones([2])).unwrap();
    let grid = observation_grid(0.0, &[0.3, 1.0], 4).unwrap();
    let path = BrownianPath::sample(&grid, 3, 2, 8).unwrap();
    let tape = Tape::new();
    let p = store.bind(&tape);
    let h0 = Tensor::from_fn([3, 2], |i| 0.1 * i as f64);
    let h = tape.leaf(h0.clone());
    let (a, b) = (path.locate(0.3).unwrap(), path.locate(1.0).unwrap());
    let out = dyn_.integrate(&p, h, 0.3, 1.0, &path).unwrap().value();

    let mut expected = h0.clone();
    for k in a..b {
        for (e, d) in expected.data_mut().iter_mut().zip(path.increment(k).data()) {
            *e += d;
        }
    }
    assert_eq!(out, expected);

    let (wa, wb) = (path.value_at(a), path.value_at(b));
    for i in 0..6 {
        let via_w = h0.data()[i] + wb.data()[i] - wa.data()[i];
        assert!((out.data()[i] - via_w).abs() < 1e-14);
    }
}

#[test]
fn split_integration_matches_whole_interval() {
    let mut store = ParameterStore::<f64>::new(9);
    let dyn_ = SdeDynamics::new(&mut store, "sde", 3, &[4], true).unwrap();
    let grid = observation_grid(0.0, &[0.2, 0.45, 1.0], 3).unwrap();
    let path = BrownianPath::sample(&grid, 2, 3, 1).unwrap();
    let tape = Tape::new();
    let p = store.bind(&tape);
    let h0 = tape.leaf(Tensor::from_fn([2, 3], |i| (i as f64 * 0.7).sin()));
    let whole = dyn_.integrate(&p, h0, 0.2, 1.0, &path).unwrap().value();
    let mid = dyn_.integrate(&p, h0, 0.2, 0.45, &path).unwrap();
    let split = dyn_.integrate(&p, mid, 0.45, 1.0, &path).unwrap().value();
    assert_eq!(whole, split);
}

#[test]
fn zero_diffusion_reduces_to_ode() {
    let mut sde_store = ParameterStore::<f64>::new(4);
    let sde = SdeDynamics::new(&mut sde_store, "dyn", 3, &[5], true).unwrap();
    sde_store.zero_prefix("dyn.diffusion");
    let mut ode_store = ParameterStore::<f64>::new(4);
    let ode = SdeDynamics::new(&mut ode_store, "dyn", 3, &[5], false).unwrap();
    assert_eq!(
        sde_store.value(sde_store.id("dyn.drift.0.weight").unwrap()),
        ode_store.value(ode_store.id("dyn.drift.0.weight").unwrap())
    );

    let grid = observation_grid(0.0, &[0.5, 1.0], 5).unwrap();
    let path = BrownianPath::sample(&grid, 2, 3, 77).unwrap();
    let run = |store: &ParameterStore<f64>, d: &SdeDynamics| {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h = tape.leaf(Tensor::from_fn([2, 3], |i| 0.3 * i as f64 - 0.5));
        d.integrate(&p, h, 0.0, 1.0, &path).unwrap().value()
    };
    assert_eq!(run(&sde_store, &sde), run(&ode_store, &ode));
}

#[test]
fn guarded_integration_flags_only_the_bad_row() {
    let (mut store, dyn_) = decay(1, false);
    // Positive feedback large enough to overflow row 1 but not row 0.
    store
        .set("sde.drift.0.weight", Tensor::new([1, 2], vec![1e200, 0.0]).unwrap())
        .unwrap();
    let grid = uniform_grid(4);
    let path = BrownianPath::sample(&grid, 2, 1, 0).unwrap();
    let tape = Tape::lenient();
    let p = store.bind(&tape);
    let h = tape.leaf(Tensor::new([2, 1], vec![0.0, 1e200]).unwrap());
    let (out, bad) = dyn_.integrate_guarded(&p, h, 0.0, 1.0, &path).unwrap();
    assert_eq!(bad, vec![false, true]);
    assert!(out.value().is_finite());
    assert!(dyn_.integrate(&p, h, 0.0, 1.0, &path).is_err());
}

#[test]
fn gradients_through_solver_match_finite_differences() {
    let mut store = ParameterStore::<f64>::new(21);
    let dyn_ = SdeDynamics::new(&mut store, "sde", 3, &[4], true).unwrap();
    let grid = observation_grid(0.0, &[0.4, 1.0], 2).unwrap();
    let path = BrownianPath::sample(&grid, 2, 3, 6).unwrap();
    let h0 = Tensor::from_fn([2, 3], |i| 0.2 * i as f64 - 0.4);
    let err = common::check_with_params(&store, &[h0], |p, xs| dyn_.integrate(p, xs[0], 0.0, 1.0, &path));
    assert!(err < 1e-4, "relative error {err}");
}
