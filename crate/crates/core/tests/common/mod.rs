#![allow(dead_code)]

use famae::numerics::{Graph, ParamId, ParamStore, Rng, Var};
use num_complex::Complex64;

/// O(N²) transform straight from the definition. `sign = -1` forward,
/// `+1` inverse (scaled by 1/N).
pub fn brute_dft(x: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = x.len();
    let scale = if sign > 0.0 { 1.0 / n as f64 } else { 1.0 };
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let ang = sign * 2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                acc += v * Complex64::new(ang.cos(), ang.sin());
            }
            acc * scale
        })
        .collect()
}

pub fn rel_err_c(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if den < 1e-12 {
        num
    } else {
        num / den
    }
}

pub fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

pub fn random_complex(rng: &mut Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.normal(), rng.normal())).collect()
}

/// A builder maps leaf inputs to an output matrix; the checked scalar is
/// `Σ out ⊙ R` for a fixed random `R`.
pub type Builder<'b> = dyn Fn(&mut Graph, &[Var]) -> Var + 'b;

fn scalar_of(g: &mut Graph, out: Var, weights: &[f64]) -> Var {
    let (r, c) = g.shape(out);
    let w = g.constant(r, c, weights.to_vec());
    let p = g.mul(out, w);
    g.sum(p)
}

fn eval(store: &ParamStore, inputs: &[(usize, usize, Vec<f64>)], f: &Builder, weights: &mut Option<Vec<f64>>, rng: &mut Rng) -> f64 {
    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|(r, c, v)| g.constant(*r, *c, v.clone())).collect();
    let out = f(&mut g, &vars);
    let n = g.value(out).len();
    let w = weights.get_or_insert_with(|| random_vec(rng, n)).clone();
    let s = scalar_of(&mut g, out, &w);
    g.scalar(s)
}

/// Worst norm-wise relative error between analytic and central-difference
/// gradients, over every input and every listed parameter.
pub fn fd_check(
    store: &mut ParamStore,
    params: &[ParamId],
    inputs: &[(usize, usize, Vec<f64>)],
    f: &Builder,
    eps: f64,
    rng: &mut Rng,
) -> f64 {
    let mut weights = None;
    eval(store, inputs, f, &mut weights, rng);
    let (input_grads, param_grads) = {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|(r, c, v)| g.constant(*r, *c, v.clone())).collect();
        let out = f(&mut g, &vars);
        let s = scalar_of(&mut g, out, weights.as_ref().unwrap());
        let all = g.backward_all(s).unwrap();
        let ig: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(v, (r, c, _))| all.get(*v).map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; r * c]))
            .collect();
        // parameter gradients via a fresh graph
        let mut g2 = Graph::new(store);
        let vars2: Vec<Var> = inputs.iter().map(|(r, c, v)| g2.constant(*r, *c, v.clone())).collect();
        let out2 = f(&mut g2, &vars2);
        let s2 = scalar_of(&mut g2, out2, weights.as_ref().unwrap());
        let pg = g2.backward(s2).unwrap();
        let pgv: Vec<Vec<f64>> = params
            .iter()
            .map(|&id| pg.get(id).map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; store.value(id).len()]))
            .collect();
        (ig, pgv)
    };
    let mut worst: f64 = 0.0;
    for (i, analytic) in input_grads.iter().enumerate() {
        let mut numeric = vec![0.0; analytic.len()];
        for k in 0..analytic.len() {
            let mut plus = inputs.to_vec();
            plus[i].2[k] += eps;
            let mut minus = inputs.to_vec();
            minus[i].2[k] -= eps;
            let fp = eval(store, &plus, f, &mut weights, rng);
            let fm = eval(store, &minus, f, &mut weights, rng);
            numeric[k] = (fp - fm) / (2.0 * eps);
        }
        worst = worst.max(rel_err(analytic, &numeric));
    }
    for (pi, &id) in params.iter().enumerate() {
        let analytic = &param_grads[pi];
        let mut numeric = vec![0.0; analytic.len()];
        for k in 0..analytic.len() {
            let orig = store.value(id)[k];
            store.value_mut(id)[k] = orig + eps;
            let fp = eval(store, inputs, f, &mut weights, rng);
            store.value_mut(id)[k] = orig - eps;
            let fm = eval(store, inputs, f, &mut weights, rng);
            store.value_mut(id)[k] = orig;
            numeric[k] = (fp - fm) / (2.0 * eps);
        }
        worst = worst.max(rel_err(analytic, &numeric));
    }
    worst
}
