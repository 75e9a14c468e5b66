//! Independent oracles and frozen reference values for the integration tests.
//!
//! Nothing here calls into the routines it is used to check: gauges are
//! recomputed with plain loops, BSDE costs by a separate recursion.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pathctl::{ControlProblem, GridConfig, Path};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `E|Σ(ΔW² - dt)|` for unit-variance Brownian motion on `[0, 1]` with
/// `N = 16, 32, 64` steps: `E|χ²_N - N| / N`, by quadrature.
pub const ITO_QUADRATIC_MEAN_ABS: [(usize, f64); 3] =
    [(16, 0.2791730639011938), (32, 0.1984350632443112), (64, 0.140680574737007)];

/// `max_{u ∈ {0, 1/2, 1}} (u - u²)`, the running reward rate of the LQ instance.
pub const LQ_RATE: f64 = 0.25;

/// Print one acceptance line and return whether it passed.
pub fn report(id: u32, name: &str, pass: bool, detail: &str) -> bool {
    println!("criterion {id:>2} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

pub fn sup_dist_plain(p: &Path, q: &Path) -> f64 {
    let k = p.t_index().max(q.t_index());
    (0..=k)
        .map(|j| {
            let a = p.node(j.min(p.t_index()));
            let b = q.node(j.min(q.t_index()));
            a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

/// `Υ^{m,M}(γ, η)` for an equal-time pair, straight from the definition.
pub fn upsilon_plain(p: &Path, q: &Path, m: u32, big_m: f64) -> f64 {
    let k = p.t_index();
    let diffs: Vec<f64> = (0..=k)
        .map(|j| {
            let a = p.node(j);
            let b = q.node(j);
            a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        })
        .collect();
    let sup = diffs.iter().cloned().fold(0.0, f64::max);
    let end = diffs[k];
    let e = 2 * m as i32;
    let s = if sup == 0.0 {
        0.0
    } else {
        let a = sup.powi(e);
        (a - end.powi(e)).powi(3) / (a * a)
    };
    s + big_m * end.powi(e)
}

/// Random equal-time pair on a grid with `steps` steps, dimension `d`.
pub fn random_pair(rng: &mut impl Rng, steps: usize, d: usize) -> (Path, Path) {
    let dt = 1.0 / steps as f64;
    let k = rng.random_range(0..=steps);
    let scale = rng.random_range(0.05..1.5);
    let walk = |rng: &mut dyn rand::RngCore| -> Path {
        let mut cols = Vec::with_capacity(k + 1);
        let mut x = DVector::from_fn(d, |_, _| scale * (rand::Rng::random::<f64>(rng) - 0.5));
        cols.push(x.clone());
        for _ in 0..k {
            x += DVector::from_fn(d, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z * dt.sqrt()
            });
            cols.push(x.clone());
        }
        Path::from_columns(dt, &cols).unwrap()
    };
    let p = walk(rng);
    let q = walk(rng);
    (p, q)
}

/// BSDE cost of an open-loop control sequence by direct recursion over the
/// `±√dt` tree, with its own Picard iteration for the implicit step.
pub fn open_loop_cost_oracle(cp: &ControlProblem, path: &Path, seq: &[usize]) -> f64 {
    let grid = cp.grid();
    if path.t_index() == grid.steps {
        return cp.terminal(path);
    }
    let n = grid.noise_dim;
    let dt = grid.dt();
    let u = &cp.controls()[seq[0]];
    let b = cp.drift(path, u);
    let s = cp.diffusion(path, u);
    let branches = 1usize << n;
    let mut mean = 0.0;
    let mut z = DVector::zeros(n);
    for br in 0..branches {
        let dw = DVector::from_fn(n, |i, _| if br >> i & 1 == 1 { -dt.sqrt() } else { dt.sqrt() });
        let next = path.endpoint() + &b * dt + &s * &dw;
        let child = path.push_node(&next).unwrap();
        let y = open_loop_cost_oracle(cp, &child, &seq[1..]);
        mean += y / branches as f64;
        z += dw * (y / branches as f64 / dt);
    }
    picard(mean, dt, |y| cp.generator(path, y, &z, u))
}

pub fn picard(mean: f64, dt: f64, q: impl Fn(f64) -> f64) -> f64 {
    let mut y = mean;
    for _ in 0..500 {
        y = mean + q(y) * dt;
    }
    y
}

/// Every sequence in `{0..k}^depth`.
pub fn all_sequences(k: usize, depth: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..depth {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..k).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

/// `d = n = 1`, `b = u`, `σ = 1`, `q = -u²`, `φ = γ(T)`, `U = {0, 1/2, 1}`;
/// the value is `x + (T - t)/4`.
pub fn lq_problem(steps: usize) -> ControlProblem {
    ControlProblem::builder(GridConfig::new(steps, 1.0, 1, 1).unwrap())
        .scalar_controls(&[0.0, 0.5, 1.0])
        .drift(|_, u| DVector::from_element(1, u[0]))
        .diffusion(|_, _| DMatrix::from_element(1, 1, 1.0))
        .generator(|_, _, _, u| -u[0] * u[0])
        .terminal(|p| p.endpoint()[0])
        .build()
        .unwrap()
}

/// Random path-dependent instance in the Lipschitz regime: drift and
/// diffusion read the running max and the endpoint, the generator is
/// Lipschitz in `(y, z)` with `L_y ≤ 0.6`, the terminal reads the max.
pub fn random_instance(rng: &mut impl Rng, steps: usize, n_controls: usize) -> ControlProblem {
    let a: [f64; 8] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let controls: Vec<f64> = (0..n_controls).map(|_| rng.random_range(-1.0..1.0)).collect();
    ControlProblem::builder(GridConfig::new(steps, 1.0, 1, 1).unwrap())
        .scalar_controls(&controls)
        .drift(move |p, u| DVector::from_element(1, u[0] + a[0] * p.sup_norm().tanh()))
        .diffusion(move |p, u| DMatrix::from_element(1, 1, 0.8 + 0.3 * (a[1] * p.endpoint()[0] + u[0]).sin()))
        .generator(move |p, y, z, u| {
            a[2] * 0.6 * y.sin() + a[3] * z[0].tanh() - u[0] * u[0] * a[4].abs() + a[5] * p.endpoint()[0].cos()
        })
        .terminal(move |p| a[6] * p.sup_norm() + (a[7] * p.endpoint()[0]).sin())
        .build()
        .unwrap()
}

/// Instance whose best control does not depend on the path: state-free
/// reward rate, terminal linear in the endpoint, constant diffusion.
pub fn separable_instance(rng: &mut impl Rng, steps: usize, n_controls: usize) -> ControlProblem {
    let c: f64 = rng.random_range(-1.0..1.0);
    let s: f64 = rng.random_range(0.3..1.2);
    let controls: Vec<f64> = (0..n_controls).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: f64 = rng.random_range(0.1..2.0);
    ControlProblem::builder(GridConfig::new(steps, 1.0, 1, 1).unwrap())
        .scalar_controls(&controls)
        .drift(move |_, u| DVector::from_element(1, u[0]))
        .diffusion(move |_, _| DMatrix::from_element(1, 1, s))
        .generator(move |_, _, _, u| c * u[0] - w * u[0] * u[0])
        .terminal(move |p| c * p.endpoint()[0])
        .build()
        .unwrap()
}
