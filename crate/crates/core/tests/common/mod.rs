#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdeattn::nn::{Bound, ParameterStore};
use sdeattn::tensor::{Tape, Tensor, Var};
use sdeattn::Result;
use sdeattn_testkit::{central_difference, max_relative_error};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape.to_vec(), rng)
}

fn split(flat: &[f64], shapes: &[Vec<usize>]) -> Vec<Tensor> {
    let mut off = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::new(s.clone(), flat[off..off + n].to_vec()).unwrap();
            off += n;
            t
        })
        .collect()
}

/// Projects an arbitrary output onto a fixed random direction so every output
/// entry contributes to the scalar being differentiated.
fn project<'t>(out: Var<'t>, weights: &mut Option<Tensor>, seed: u64) -> Result<Var<'t>> {
    let w = weights.get_or_insert_with(|| {
        let mut r = rng(seed);
        Tensor::randn(out.shape(), &mut r)
    });
    out.mul(out.tape().constant(w.clone()))?.sum()
}

/// Max relative error between tape gradients and central differences of
/// `f(inputs)` with respect to every input entry.
pub fn check_inputs(inputs: &[Tensor], f: impl for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>) -> f64 {
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let mut weights = None;

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = project(f(&vars).unwrap(), &mut weights, 99).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = vars.iter().flat_map(|v| grads.wrt(*v).into_data()).collect();

    let numeric = central_difference(
        |x| {
            let tape = Tape::new();
            let vars: Vec<Var> = split(x, &shapes).into_iter().map(|t| tape.leaf(t)).collect();
            let mut w = weights.clone();
            let loss = project(f(&vars).unwrap(), &mut w, 99).unwrap();
            loss.value().item().unwrap()
        },
        &flat,
        FD_STEP,
    );
    max_relative_error(&analytic, &numeric)
}

/// Same as [`check_inputs`] but also differentiates every parameter in `store`.
pub fn check_with_params(
    store: &ParameterStore,
    inputs: &[Tensor],
    f: impl for<'t> Fn(&Bound<'t>, &[Var<'t>]) -> Result<Var<'t>>,
) -> f64 {
    let n_params = store.len();
    let mut all: Vec<Tensor> = store.values().to_vec();
    all.extend(inputs.iter().cloned());
    let mut probe = store.clone();
    let shapes: Vec<Vec<usize>> = all.iter().map(|t| t.shape().to_vec()).collect();
    let flat: Vec<f64> = all.iter().flat_map(|t| t.data().to_vec()).collect();
    let mut weights = None;

    let run = |x: &[f64], probe: &mut ParameterStore, weights: &mut Option<Tensor>, want_grad: bool| {
        let tensors = split(x, &shapes);
        for (slot, t) in probe.values_mut().iter_mut().zip(&tensors[..n_params]) {
            *slot = t.clone();
        }
        let tape = Tape::new();
        let bound = probe.bind(&tape);
        let vars: Vec<Var> = tensors[n_params..].iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = project(f(&bound, &vars).unwrap(), weights, 77).unwrap();
        let value = loss.value().item().unwrap();
        if !want_grad {
            return (value, Vec::new());
        }
        let grads = tape.backward(loss).unwrap();
        let mut g: Vec<f64> = bound.vars().iter().flat_map(|v| grads.wrt(*v).into_data()).collect();
        g.extend(vars.iter().flat_map(|v| grads.wrt(*v).into_data()));
        (value, g)
    };
    let (_, analytic) = run(&flat, &mut probe, &mut weights, true);
    let numeric = central_difference(
        |x| {
            let mut w = weights.clone();
            run(x, &mut probe.clone(), &mut w, false).0
        },
        &flat,
        FD_STEP,
    );
    max_relative_error(&analytic, &numeric)
}

pub fn random_shape(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(1..5)).collect()
}
