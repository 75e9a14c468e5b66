//! Path-dependent HJB: the Hamiltonian, the generator of a test functional,
//! classical and viscosity residuals, a Markovian finite-difference oracle
//! and the doubled-variable functional used by comparison arguments.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::control::{self, ControlError, ControlProblem};
use crate::funcalc::{self, symmetrize, CalcError, FdScheme, PathFunctional};
use crate::gauge::{self, GaugeError, GaugeParams};
use crate::pathspace::{GridConfig, Path, PathError};

/// Tolerance of the sampled touch-point check.
pub const TOUCH_TOL: f64 = 1e-9;
/// Default size of a viscosity probe cloud.
pub const DEFAULT_CLOUD: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhjbError {
    #[error("test functional lacks an analytic {0} derivative")]
    MissingDerivative(&'static str),
    #[error("analytic {which} derivative disagrees with finite differences by {error:e}")]
    DerivativeMismatch { which: &'static str, error: f64 },
    #[error("the equation is interior: path is at the terminal index {0}")]
    TerminalPath(usize),
    #[error("explicit scheme unstable: dt (σ²/dx² + |b|/dx) = {ratio} exceeds 1")]
    Cfl { ratio: f64 },
    #[error("coefficients depend on history beyond (t, x): difference {difference:e}")]
    HistoryDependent { difference: f64 },
    #[error("finite-difference grid needs at least 3 space points and 1 time step")]
    BadGrid,
    #[error("Markovian oracle handles one-dimensional state and noise, got d = {dim}, n = {noise}")]
    NotScalar { dim: usize, noise: usize },
    #[error("majorant fit failed: {0}")]
    Fit(&'static str),
    #[error(transparent)]
    Calc(#[from] CalcError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// A test functional with all three analytic pathwise derivatives.
#[derive(Debug, Clone)]
pub struct SmoothFunctional(PathFunctional);

impl SmoothFunctional {
    pub fn new(f: PathFunctional) -> Result<Self, PhjbError> {
        if !f.has_dt() {
            return Err(PhjbError::MissingDerivative("horizontal"));
        }
        if !f.has_dx() {
            return Err(PhjbError::MissingDerivative("vertical"));
        }
        if !f.has_dxx() {
            return Err(PhjbError::MissingDerivative("second vertical"));
        }
        Ok(Self(f))
    }

    /// Like [`SmoothFunctional::new`], also comparing analytic and
    /// finite-difference derivatives at `probes` (relative tolerance `tol`).
    pub fn checked(f: PathFunctional, probes: &[Path], scheme: &FdScheme, tol: f64) -> Result<Self, PhjbError> {
        let s = Self::new(f)?;
        for p in probes {
            let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
            let dx = s.dx(p);
            let fd = funcalc::vertical_gradient(&s.0, p, scheme)?;
            let err = (&dx - &fd).amax() / (1.0 + fd.amax());
            if err > tol {
                return Err(PhjbError::DerivativeMismatch { which: "vertical", error: err });
            }
            let dxx = s.dxx(p);
            let fd = funcalc::vertical_hessian(&s.0, p, scheme)?;
            let err = (&dxx - &fd).amax() / (1.0 + fd.amax());
            if err > tol.sqrt() {
                return Err(PhjbError::DerivativeMismatch { which: "second vertical", error: err });
            }
            let fd = funcalc::horizontal_derivative(&s.0, p, scheme)?;
            let err = rel(s.dt(p), fd);
            if err > tol.sqrt() {
                return Err(PhjbError::DerivativeMismatch { which: "horizontal", error: err });
            }
        }
        Ok(s)
    }

    pub fn functional(&self) -> &PathFunctional {
        &self.0
    }

    pub fn eval(&self, p: &Path) -> f64 {
        self.0.eval(p)
    }

    pub fn dt(&self, p: &Path) -> f64 {
        self.0.analytic_dt(p).expect("checked at construction")
    }

    pub fn dx(&self, p: &Path) -> DVector<f64> {
        self.0.analytic_dx(p).expect("checked at construction")
    }

    pub fn dxx(&self, p: &Path) -> DMatrix<f64> {
        self.0.analytic_dxx(p).expect("checked at construction")
    }
}

/// `(γ_t, r, p, l)` with `l` symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianInput {
    pub path: Path,
    pub r: f64,
    pub p: DVector<f64>,
    pub l: DMatrix<f64>,
}

impl HamiltonianInput {
    pub fn new(path: Path, r: f64, p: DVector<f64>, l: DMatrix<f64>) -> Self {
        Self { path, r, p, l: symmetrize(l) }
    }
}

fn summand(cp: &ControlProblem, path: &Path, r: f64, p: &DVector<f64>, l: &DMatrix<f64>, u: &[f64]) -> f64 {
    let b = cp.drift(path, u);
    let s = cp.diffusion(path, u);
    let a = &s * s.transpose();
    let trace = l.component_mul(&a).sum();
    p.dot(&b) + 0.5 * trace + cp.generator(path, r, &(s.transpose() * p), u)
}

/// `max_u ⟨p, b⟩ + ½ tr[l σσᵀ] + q(γ, r, σᵀp, u)` with the lowest maximizing index.
pub fn hamiltonian(cp: &ControlProblem, input: &HamiltonianInput) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, u) in cp.controls().iter().enumerate() {
        let v = summand(cp, &input.path, input.r, &input.p, &input.l, u);
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

/// `(Lφ)(γ, u) = ∂_tφ + ⟨∂_xφ, b⟩ + ½ tr[∂_xxφ σσᵀ] + q(γ, φ, σᵀ∂_xφ, u)`.
pub fn generator(cp: &ControlProblem, phi: &SmoothFunctional, p: &Path, control: usize) -> Result<f64, PhjbError> {
    let u = cp
        .controls()
        .get(control)
        .ok_or(ControlError::BadControl { index: control, count: cp.controls().len() })?;
    Ok(phi.dt(p) + summand(cp, p, phi.eval(p), &phi.dx(p), &phi.dxx(p), u))
}

fn input_at(v: &SmoothFunctional, p: &Path, sign: f64) -> HamiltonianInput {
    HamiltonianInput::new(p.clone(), sign * v.eval(p), v.dx(p) * sign, v.dxx(p) * sign)
}

/// `∂_t v + H(γ_t, v, ∂_x v, ∂_xx v)` at a non-terminal path.
pub fn phjb_residual(cp: &ControlProblem, v: &SmoothFunctional, p: &Path) -> Result<f64, PhjbError> {
    if p.t_index() >= cp.grid().steps {
        return Err(PhjbError::TerminalPath(p.t_index()));
    }
    Ok(v.dt(p) + hamiltonian(cp, &input_at(v, p, 1.0)).0)
}

/// Outcome of a viscosity test at one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityProbe {
    /// The gap vanishes at the path and has the right sign on the cloud.
    pub is_touch_point: bool,
    /// Largest violation of the touch condition seen (0 when it holds exactly).
    pub violation: f64,
    pub residual: f64,
}

/// Seeded cloud of paths at times in `[t, T]`: continuations of `p` by a
/// random walk, half of them also with a perturbed history, at mixed scales.
pub fn later_cloud(p: &Path, grid: &GridConfig, size: usize, seed: u64) -> Vec<Path> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k0 = p.t_index();
    (0..size)
        .map(|i| {
            let k = rng.random_range(k0..=grid.steps);
            let scale = 10f64.powf(rng.random_range(-3.0..0.0));
            let mut q = p.clone();
            while q.t_index() < k {
                let step = DVector::from_fn(p.dim(), |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z * p.dt().sqrt()
                });
                q = q.push_node(&(q.endpoint() + step)).expect("finite walk");
            }
            if i % 2 == 1 {
                q = control::perturb_after(&q, rng.random_range(0..=q.t_index()), scale, &mut rng);
            }
            q
        })
        .collect()
}

/// A⁺ test: `w - φ` vanishes at `p` and is `≤ 0` on the cloud; returns
/// `∂_tφ + H(p, φ, ∂_xφ, ∂_xxφ)`, which a subsolution makes `≥ 0`.
pub fn subsolution_probe(
    cp: &ControlProblem,
    w: &PathFunctional,
    test: &SmoothFunctional,
    p: &Path,
    cloud: &[Path],
) -> ViscosityProbe {
    let mut violation = (w.eval(p) - test.eval(p)).abs();
    for c in cloud {
        violation = violation.max(w.eval(c) - test.eval(c));
    }
    let residual = test.dt(p) + hamiltonian(cp, &input_at(test, p, 1.0)).0;
    ViscosityProbe { is_touch_point: violation <= TOUCH_TOL, violation: violation.max(0.0), residual }
}

/// A⁻ test: `w + φ` vanishes at `p` and is `≥ 0` on the cloud; returns
/// `-∂_tφ + H(p, -φ, -∂_xφ, -∂_xxφ)`, which a supersolution makes `≤ 0`.
pub fn supersolution_probe(
    cp: &ControlProblem,
    w: &PathFunctional,
    test: &SmoothFunctional,
    p: &Path,
    cloud: &[Path],
) -> ViscosityProbe {
    let mut violation = (w.eval(p) + test.eval(p)).abs();
    for c in cloud {
        violation = violation.max(-(w.eval(c) + test.eval(c)));
    }
    let residual = -test.dt(p) + hamiltonian(cp, &input_at(test, p, -1.0)).0;
    ViscosityProbe { is_touch_point: violation <= TOUCH_TOL, violation: violation.max(0.0), residual }
}

/// `γ_s ↦ Ῡ(γ_s, a) = Υ(γ_s, a) + (s - t̂)²` with closed-form derivatives.
pub fn upsilon_bar_functional(anchor: Path, g: GaugeParams) -> PathFunctional {
    let t_hat = anchor.time();
    let base = gauge::upsilon_functional(anchor, g);
    let (b0, b1, b2) = (base.clone(), base.clone(), base);
    PathFunctional::new(move |p| b0.eval(p) + (p.time() - t_hat).powi(2))
        .with_dt(move |p| 2.0 * (p.time() - t_hat))
        .with_dx(move |p| b1.analytic_dx(p).expect("analytic"))
        .with_dxx(move |p| b2.analytic_dxx(p).expect("analytic"))
}

/// Fitted test functional at `p`:
/// `w(p) + ⟨a, x - x̂⟩ + (x - x̂)ᵀ C (x - x̂) + e (s - t̂) + κ Ῡ(γ_s, p)`.
///
/// The coefficients `a, C, e` come from least squares of `w - w(p)` over
/// the cloud; `κ ≥ kappa_min` is then the smallest weight making the result
/// dominate `w` on the cloud. With `m ≥ 2` the gauge term has zero
/// derivatives at `p`, so `κ` does not enter the residual.
pub fn fit_majorant(
    w: &PathFunctional,
    p: &Path,
    cloud: &[Path],
    g: GaugeParams,
    kappa_min: f64,
) -> Result<SmoothFunctional, PhjbError> {
    let d = p.dim();
    let x_hat = p.endpoint();
    let t_hat = p.time();
    let w_hat = w.eval(p);
    let n_quad = d * (d + 1) / 2;
    let n_basis = d + n_quad + 1;
    let basis = |q: &Path| -> DVector<f64> {
        let y = q.endpoint() - &x_hat;
        let mut out = DVector::zeros(n_basis);
        out.rows_mut(0, d).copy_from(&y);
        let mut k = d;
        for i in 0..d {
            for j in i..d {
                out[k] = y[i] * y[j];
                k += 1;
            }
        }
        out[k] = q.time() - t_hat;
        out
    };
    let rows: Vec<DVector<f64>> = cloud.iter().map(basis).collect();
    if rows.len() < n_basis {
        return Err(PhjbError::Fit("cloud smaller than the basis"));
    }
    let a = DMatrix::from_fn(rows.len(), n_basis, |r, c| rows[r][c]);
    let rhs = DVector::from_iterator(cloud.len(), cloud.iter().map(|c| w.eval(c) - w_hat));
    let coef = a.clone().svd(true, true).solve(&rhs, 1e-12).map_err(PhjbError::Fit)?;
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(PhjbError::Fit("non-finite coefficients"));
    }

    let lin = coef.rows(0, d).into_owned();
    let mut quad = DMatrix::zeros(d, d);
    let mut k = d;
    for i in 0..d {
        for j in i..d {
            if i == j {
                quad[(i, i)] = coef[k];
            } else {
                quad[(i, j)] = 0.5 * coef[k];
                quad[(j, i)] = 0.5 * coef[k];
            }
            k += 1;
        }
    }
    let e = coef[k];

    let gauge = upsilon_bar_functional(p.clone(), g);
    let mut kappa = kappa_min.max(0.0);
    for (c, row) in cloud.iter().zip(&rows) {
        let excess = w.eval(c) - w_hat - row.dot(&coef);
        let pen = gauge.eval(c);
        if excess > 0.0 && pen > 0.0 {
            kappa = kappa.max(excess / pen * (1.0 + 1e-9));
        }
    }

    let poly = {
        let (x0, x1, x2) = (x_hat.clone(), x_hat.clone(), x_hat);
        let (l0, l1) = (lin.clone(), lin);
        let (q0, q1, q2) = (quad.clone(), quad.clone(), quad);
        PathFunctional::new(move |q| {
            let y = q.endpoint() - &x0;
            w_hat + l0.dot(&y) + (y.transpose() * &q0 * &y)[0] + e * (q.time() - t_hat)
        })
        .with_dt(move |_| e)
        .with_dx(move |q| &l1 + (&q1 * (q.endpoint() - &x1)) * 2.0)
        .with_dxx(move |q| {
            let _ = &x2;
            let _ = q;
            &q2 * 2.0
        })
    };
    SmoothFunctional::new(poly.plus(&gauge.scaled(kappa)))
}

type MarkovDrift = dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync;
type MarkovGenerator = dyn Fn(f64, f64, f64, f64, &[f64]) -> f64 + Send + Sync;
type MarkovTerminal = dyn Fn(f64) -> f64 + Send + Sync;

/// One-dimensional state-dependent coefficients `b̄(t, x, u)`, `σ̄(t, x, u)`,
/// `q̄(t, x, y, z, u)`, `φ̄(x)`.
#[derive(Clone)]
pub struct MarkovProblem {
    pub horizon: f64,
    pub controls: Vec<Vec<f64>>,
    drift: Arc<MarkovDrift>,
    diffusion: Arc<MarkovDrift>,
    generator: Arc<MarkovGenerator>,
    terminal: Arc<MarkovTerminal>,
}

impl fmt::Debug for MarkovProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MarkovProblem")
            .field("horizon", &self.horizon)
            .field("controls", &self.controls)
            .finish_non_exhaustive()
    }
}

impl MarkovProblem {
    pub fn new(
        horizon: f64,
        controls: Vec<Vec<f64>>,
        drift: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
        generator: impl Fn(f64, f64, f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            horizon,
            controls,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            generator: Arc::new(generator),
            terminal: Arc::new(terminal),
        }
    }

    /// The same problem as a path-dependent one that reads only `(t, γ_t(t))`.
    pub fn control_problem(&self, steps: usize, node_cap: usize) -> Result<ControlProblem, PhjbError> {
        let grid = GridConfig::new(steps, self.horizon, 1, 1)?;
        let (b, s, q, phi) = (self.drift.clone(), self.diffusion.clone(), self.generator.clone(), self.terminal.clone());
        Ok(ControlProblem::builder(grid)
            .controls(self.controls.clone())
            .drift(move |p, u| DVector::from_element(1, b(p.time(), p.endpoint()[0], u)))
            .diffusion(move |p, u| DMatrix::from_element(1, 1, s(p.time(), p.endpoint()[0], u)))
            .generator(move |p, y, z, u| q(p.time(), p.endpoint()[0], y, z[0], u))
            .terminal(move |p| phi(p.endpoint()[0]))
            .node_cap(node_cap)
            .build()?)
    }
}

/// Uniform space-time grid for [`markov_fd_solve`]: `nx` intervals on
/// `[x_min, x_max]` and `nt` backward time steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub nt: usize,
}

impl FdGrid {
    /// Grid with spacing `dx` on `[-half_width, half_width]` and the fewest
    /// time steps satisfying `dt (s²/dx² + b/dx) ≤ safety`.
    pub fn stable(half_width: f64, dx: f64, horizon: f64, max_sigma: f64, max_drift: f64, safety: f64) -> Self {
        let nx = (2.0 * half_width / dx).round() as usize;
        let rate = max_sigma * max_sigma / (dx * dx) + max_drift / dx;
        let nt = ((horizon * rate / safety).ceil() as usize).max(1);
        Self { x_min: -half_width, x_max: half_width, nx, nt }
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    /// Same domain with `dx` doubled and `dt` quadrupled.
    pub fn coarsened(&self) -> Self {
        Self { nx: self.nx / 2, nt: self.nt.div_ceil(4), ..*self }
    }
}

/// Values of the explicit scheme at every time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FdSolution {
    pub grid: FdGrid,
    pub horizon: f64,
    /// `values[n][i]` at `t = n dt`, `x = x_min + i dx`.
    pub values: Vec<Vec<f64>>,
}

impl FdSolution {
    /// Linear interpolation in `x` and `t`; clamps outside the grid.
    pub fn interpolate(&self, t: f64, x: f64) -> f64 {
        let dt = self.horizon / self.grid.nt as f64;
        let s = (t / dt).clamp(0.0, self.grid.nt as f64);
        let n = (s.floor() as usize).min(self.grid.nt - 1);
        let a = s - n as f64;
        (1.0 - a) * self.at_level(n, x) + a * self.at_level(n + 1, x)
    }

    fn at_level(&self, n: usize, x: f64) -> f64 {
        let dx = self.grid.dx();
        let s = ((x - self.grid.x_min) / dx).clamp(0.0, self.grid.nx as f64);
        let i = (s.floor() as usize).min(self.grid.nx - 1);
        let a = s - i as f64;
        (1.0 - a) * self.values[n][i] + a * self.values[n][i + 1]
    }
}

/// Explicit backward scheme for the Markovian HJB equation: central second
/// differences, first differences upwinded per control, per-node max over
/// `U`, linear extrapolation at both boundaries.
pub fn markov_fd_solve(mp: &MarkovProblem, grid: &FdGrid) -> Result<FdSolution, PhjbError> {
    if grid.nx < 2 || grid.nt < 1 {
        return Err(PhjbError::BadGrid);
    }
    let dx = grid.dx();
    let dt = mp.horizon / grid.nt as f64;
    let xs: Vec<f64> = (0..=grid.nx).map(|i| grid.x_min + i as f64 * dx).collect();
    let mut values = vec![Vec::new(); grid.nt + 1];
    values[grid.nt] = xs.iter().map(|x| (mp.terminal)(*x)).collect();
    for n in (0..grid.nt).rev() {
        let t = n as f64 * dt;
        let next = &values[n + 1];
        let mut cur = vec![0.0; xs.len()];
        for i in 1..grid.nx {
            let x = xs[i];
            let v = next[i];
            let second = (next[i + 1] - 2.0 * v + next[i - 1]) / (dx * dx);
            let central = (next[i + 1] - next[i - 1]) / (2.0 * dx);
            let mut best = f64::NEG_INFINITY;
            for u in &mp.controls {
                let b = (mp.drift)(t, x, u);
                let s = (mp.diffusion)(t, x, u);
                let ratio = dt * (s * s / (dx * dx) + b.abs() / dx);
                if ratio > 1.0 + 1e-12 {
                    return Err(PhjbError::Cfl { ratio });
                }
                let upwind = if b >= 0.0 { (next[i + 1] - v) / dx } else { (v - next[i - 1]) / dx };
                let rate = b * upwind + 0.5 * s * s * second + (mp.generator)(t, x, v, s * central, u);
                best = best.max(rate);
            }
            cur[i] = v + dt * best;
        }
        cur[0] = 2.0 * cur[1] - cur[2];
        cur[grid.nx] = 2.0 * cur[grid.nx - 1] - cur[grid.nx - 2];
        values[n] = cur;
    }
    Ok(FdSolution { grid: *grid, horizon: mp.horizon, values })
}

/// Path with the same time and endpoint as `p` and an independent history.
pub fn reshuffle_history(p: &Path, rng: &mut impl Rng) -> Path {
    let k = p.t_index();
    let mut cols: Vec<DVector<f64>> = (0..=k)
        .map(|_| DVector::from_fn(p.dim(), |_, _| StandardNormal.sample(rng)))
        .collect();
    cols[k] = p.endpoint();
    Path::from_columns(p.dt(), &cols).expect("finite history")
}

/// Largest coefficient change under history reshuffles with `(t, γ_t(t))` fixed.
pub fn history_probe(cp: &ControlProblem, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = *cp.grid();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let k = rng.random_range(0..=grid.steps);
        let p = control::random_path(&grid, k, 1.0, &mut rng);
        let q = reshuffle_history(&p, &mut rng);
        let u = &cp.controls()[rng.random_range(0..cp.controls().len())];
        let y: f64 = StandardNormal.sample(&mut rng);
        let z = DVector::from_fn(grid.noise_dim, |_, _| StandardNormal.sample(&mut rng));
        worst = worst
            .max((cp.drift(&p, u) - cp.drift(&q, u)).amax())
            .max((cp.diffusion(&p, u) - cp.diffusion(&q, u)).amax())
            .max((cp.generator(&p, y, &z, u) - cp.generator(&q, y, &z, u)).abs());
        if k == grid.steps {
            worst = worst.max((cp.terminal(&p) - cp.terminal(&q)).abs());
        }
    }
    worst
}

/// Tree value against the finite-difference value at one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovReport {
    pub tree_value: f64,
    pub fd_value: f64,
    pub residual: f64,
    /// `|tree(N) - tree(N/2)|`, or 0 when the coarse tree does not exist.
    pub tree_error: f64,
    /// `|fd(dx, dt) - fd(2dx, 4dt)|`.
    pub fd_error: f64,
}

impl MarkovReport {
    pub fn bound(&self) -> f64 {
        self.tree_error + self.fd_error
    }
}

/// `|V(γ_t) - V̄(t, γ_t(t))|` with error estimates from one coarser level of
/// each solver. The history probe must pass first.
pub fn markov_consistency(
    mp: &MarkovProblem,
    cp: &ControlProblem,
    p: &Path,
    fd: &FdGrid,
) -> Result<MarkovReport, PhjbError> {
    let grid = *cp.grid();
    if grid.dim != 1 || grid.noise_dim != 1 {
        return Err(PhjbError::NotScalar { dim: grid.dim, noise: grid.noise_dim });
    }
    let difference = history_probe(cp, 64, 0x5eed);
    if difference > 1e-12 {
        return Err(PhjbError::HistoryDependent { difference });
    }
    let tree_value = control::value(cp, p)?.value;
    let x = p.endpoint()[0];
    let fd_value = markov_fd_solve(mp, fd)?.interpolate(p.time(), x);
    let tree_error = if grid.steps.is_multiple_of(2) && p.t_index().is_multiple_of(2) {
        let coarse = cp.with_grid(grid.with_steps(grid.steps / 2));
        let cols: Vec<DVector<f64>> = (0..=p.t_index() / 2).map(|j| p.node(2 * j)).collect();
        let cp_path = Path::from_columns(coarse.grid().dt(), &cols)?;
        (control::value(&coarse, &cp_path)?.value - tree_value).abs()
    } else {
        0.0
    };
    let fd_error = (markov_fd_solve(mp, &fd.coarsened())?.interpolate(p.time(), x) - fd_value).abs();
    Ok(MarkovReport { tree_value, fd_value, residual: (tree_value - fd_value).abs(), tree_error, fd_error })
}

/// Parameters of the doubled-variable functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiParams {
    pub beta: f64,
    pub eps: f64,
    pub nu: f64,
    pub horizon: f64,
    pub gauge: GaugeParams,
}

/// `Ψ(γ, η) = W₁(γ) - W₂(η) - βΥ(γ, η) - β^{1/3}|γ(t) - η(t)|²
///  - ε ((νT - t)/(νT)) (Υ(γ) + Υ(η))` for an equal-time pair.
pub fn comparison_psi(
    w1: &PathFunctional,
    w2: &PathFunctional,
    p: &Path,
    q: &Path,
    params: &PsiParams,
) -> Result<f64, PhjbError> {
    Ok(w1.eval(p) - w2.eval(q) - psi_penalty(p, q, params)?)
}

/// The part of `Ψ` that does not involve `W₁, W₂`.
fn psi_penalty(p: &Path, q: &Path, params: &PsiParams) -> Result<f64, PhjbError> {
    if p.t_index() != q.t_index() {
        return Err(GaugeError::UnequalTimes(p.t_index(), q.t_index()).into());
    }
    let g = &params.gauge;
    let pair_gauge = gauge::upsilon_norm(&p.sub(q)?, g);
    let end_gap = (p.endpoint() - q.endpoint()).norm_squared();
    let nt = params.nu * params.horizon;
    let weight = params.eps * (nt - p.time()) / nt;
    Ok(params.beta * pair_gauge
        + params.beta.cbrt() * end_gap
        + weight * (gauge::upsilon_norm(p, g) + gauge::upsilon_norm(q, g)))
}

/// Result of one doubled-variable maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub beta: f64,
    pub psi: f64,
    /// `βΥ(γ̂, η̂)` at the maximizing pair.
    pub penalty: f64,
    pub separation: f64,
    pub rounds: usize,
}

/// Maximize `Ψ` over `pairs` by the Borwein–Preiss construction with
/// `ρ = Ῡ(γ, γ') + Ῡ(η, η')`, once per `β`.
pub fn comparison_demo(
    w1: &PathFunctional,
    w2: &PathFunctional,
    pairs: &[crate::varprinciple::PathPair],
    betas: &[f64],
    base: &PsiParams,
    bp_eps: f64,
) -> Result<Vec<ComparisonRow>, PhjbError> {
    use crate::varprinciple::{borwein_preiss, BpConfig, PathPair};
    let g = base.gauge;
    let rho = move |a: &PathPair, b: &PathPair| -> f64 {
        match (gauge::upsilon_bar(&b.first, &a.first, &g), gauge::upsilon_bar(&b.second, &a.second, &g)) {
            (Ok(x), Ok(y)) => x + y,
            _ => f64::INFINITY,
        }
    };
    let w1_vals: Vec<f64> = pairs.iter().map(|c| w1.eval(&c.first)).collect();
    let w2_vals: Vec<f64> = pairs.iter().map(|c| w2.eval(&c.second)).collect();
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let params = PsiParams { beta, ..*base };
        let psi_of = |i: usize| -> Result<f64, PhjbError> {
            let c = &pairs[i];
            Ok(w1_vals[i] - w2_vals[i] - psi_penalty(&c.first, &c.second, &params)?)
        };
        let psi: Vec<f64> = (0..pairs.len()).map(psi_of).collect::<Result<_, _>>()?;
        let start = (0..pairs.len())
            .min_by_key(|&i| pairs[i].first.t_index())
            .ok_or(PhjbError::Fit("empty candidate set"))?;
        let t0 = pairs[start].first.t_index();
        let lookup = |c: &PathPair| -> f64 {
            pairs
                .iter()
                .position(|q| q == c)
                .map(|i| psi[i])
                .unwrap_or(f64::NEG_INFINITY)
        };
        let sup = psi
            .iter()
            .zip(pairs)
            .filter(|(_, c)| c.first.t_index() >= t0)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let eps = bp_eps.max(sup - psi[start] + 1e-12);
        let config = BpConfig::new(eps);
        let res = borwein_preiss(&lookup, &rho, &config, &pairs[start], pairs)
            .map_err(|_| PhjbError::Fit("Borwein–Preiss construction rejected the candidate set"))?;
        let opt = &res.optimum;
        let diff = opt.first.sub(&opt.second)?;
        rows.push(ComparisonRow {
            beta,
            psi: lookup(opt),
            penalty: beta * gauge::upsilon_norm(&diff, &g),
            separation: diff.sup_norm(),
            rounds: res.trajectory.len() - 1,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(steps: usize, dim: usize) -> GridConfig {
        GridConfig::new(steps, 1.0, dim, dim).unwrap()
    }

    fn identity_diffusion(steps: usize, dim: usize) -> ControlProblem {
        ControlProblem::builder(grid(steps, dim))
            .diffusion(move |_, _| DMatrix::identity(dim, dim))
            .build()
            .unwrap()
    }

    fn endpoint_functional() -> SmoothFunctional {
        SmoothFunctional::new(
            PathFunctional::new(|p| p.endpoint()[0])
                .with_dt(|_| 0.0)
                .with_dx(|_| DVector::from_element(1, 1.0))
                .with_dxx(|_| DMatrix::zeros(1, 1)),
        )
        .unwrap()
    }

    fn heat_solution(horizon: f64) -> SmoothFunctional {
        SmoothFunctional::new(
            PathFunctional::new(move |p| p.endpoint()[0].powi(2) + horizon - p.time())
                .with_dt(|_| -1.0)
                .with_dx(|p| DVector::from_element(1, 2.0 * p.endpoint()[0]))
                .with_dxx(|_| DMatrix::from_element(1, 1, 2.0)),
        )
        .unwrap()
    }

    #[test]
    fn hamiltonian_of_pure_trace() {
        let cp = identity_diffusion(4, 2);
        let p = Path::zeros(2, 1, 0.25).unwrap();
        let input = HamiltonianInput::new(p, 0.0, DVector::zeros(2), DMatrix::identity(2, 2));
        assert_eq!(hamiltonian(&cp, &input), (1.0, 0));
    }

    #[test]
    fn hamiltonian_ties_pick_lowest_index() {
        let cp = ControlProblem::builder(grid(2, 1)).scalar_controls(&[1.0, -1.0, 1.0]).drift(|_, u| {
            DVector::from_element(1, u[0] * u[0])
        });
        let cp = cp.build().unwrap();
        let input = HamiltonianInput::new(Path::zeros(1, 0, 0.5).unwrap(), 0.0, DVector::from_element(1, 1.0), DMatrix::zeros(1, 1));
        assert_eq!(hamiltonian(&cp, &input), (1.0, 0));
    }

    #[test]
    fn missing_derivative_is_rejected() {
        let err = SmoothFunctional::new(PathFunctional::new(|p| p.time())).unwrap_err();
        assert_eq!(err, PhjbError::MissingDerivative("horizontal"));
    }

    #[test]
    fn generator_examples() {
        let cp = identity_diffusion(4, 1);
        let p = Path::scalar(0.25, &[0.0, 0.3]).unwrap();
        assert_eq!(generator(&cp, &endpoint_functional(), &p, 0).unwrap(), 0.0);
        let time = SmoothFunctional::new(
            PathFunctional::new(|p| p.time())
                .with_dt(|_| 1.0)
                .with_dx(|_| DVector::zeros(1))
                .with_dxx(|_| DMatrix::zeros(1, 1)),
        )
        .unwrap();
        assert_eq!(generator(&cp, &time, &p, 0).unwrap(), 1.0);
    }

    #[test]
    fn classical_residuals_vanish() {
        let cp = identity_diffusion(4, 1);
        let p = Path::scalar(0.25, &[0.1, -0.4]).unwrap();
        assert_eq!(phjb_residual(&cp, &endpoint_functional(), &p).unwrap(), 0.0);
        assert!(phjb_residual(&cp, &heat_solution(1.0), &p).unwrap().abs() < 1e-14);
        let terminal = Path::scalar(0.25, &[0.0; 5]).unwrap();
        assert_eq!(phjb_residual(&cp, &heat_solution(1.0), &terminal), Err(PhjbError::TerminalPath(4)));
    }

    #[test]
    fn classical_solution_is_its_own_touching_test() {
        let cp = identity_diffusion(8, 1);
        let v = heat_solution(1.0);
        let p = Path::scalar(0.125, &[0.0, 0.2, 0.1]).unwrap();
        let cloud = later_cloud(&p, cp.grid(), 200, 3);
        let sub = subsolution_probe(&cp, v.functional(), &v, &p, &cloud);
        assert!(sub.is_touch_point);
        assert!(sub.residual.abs() < 1e-12);
        let neg = SmoothFunctional::new(v.functional().scaled(-1.0)).unwrap();
        let sup = supersolution_probe(&cp, v.functional(), &neg, &p, &cloud);
        assert!(sup.is_touch_point);
        assert!(sup.residual.abs() < 1e-12);
    }

    #[test]
    fn gauge_lift_creates_a_touch_point() {
        let cp = identity_diffusion(8, 1);
        let p = Path::scalar(0.125, &[0.0, 0.2, 0.1]).unwrap();
        let w = PathFunctional::new(|q| q.endpoint()[0].sin());
        let test = SmoothFunctional::new(
            PathFunctional::new(|q| q.endpoint()[0].sin())
                .with_dt(|_| 0.0)
                .with_dx(|q| DVector::from_element(1, q.endpoint()[0].cos()))
                .with_dxx(|q| DMatrix::from_element(1, 1, -q.endpoint()[0].sin()))
                .plus(&upsilon_bar_functional(p.clone(), GaugeParams::default())),
        )
        .unwrap();
        let cloud = later_cloud(&p, cp.grid(), 300, 4);
        assert!(subsolution_probe(&cp, &w, &test, &p, &cloud).is_touch_point);
        // a test functional below w is not a touch point
        let low = SmoothFunctional::new(test.functional().plus(&PathFunctional::new(|q| -q.time()).with_dt(|_| -1.0).with_dx(|_| DVector::zeros(1)).with_dxx(|_| DMatrix::zeros(1, 1)))).unwrap();
        assert!(!subsolution_probe(&cp, &w, &low, &p, &cloud).is_touch_point);
    }

    #[test]
    fn majorant_fit_recovers_linear_value() {
        let cp = ControlProblem::builder(grid(4, 1))
            .scalar_controls(&[0.0, 0.5, 1.0])
            .drift(|_, u| DVector::from_element(1, u[0]))
            .diffusion(|_, _| DMatrix::from_element(1, 1, 1.0))
            .generator(|_, _, _, u| -u[0] * u[0])
            .terminal(|p| p.endpoint()[0])
            .build()
            .unwrap();
        let w = PathFunctional::new(|p| p.endpoint()[0] + 0.25 * (1.0 - p.time()));
        let p = Path::scalar(0.25, &[0.0, 0.3]).unwrap();
        let cloud = later_cloud(&p, cp.grid(), 200, 8);
        let test = fit_majorant(&w, &p, &cloud, GaugeParams::default(), 0.0).unwrap();
        let probe = subsolution_probe(&cp, &w, &test, &p, &cloud);
        assert!(probe.is_touch_point);
        assert!(probe.residual.abs() < 1e-9);
    }

    fn heat_markov() -> MarkovProblem {
        MarkovProblem::new(1.0, vec![vec![0.0]], |_, _, _| 0.0, |_, _, _| 1.0, |_, _, _, _, _| 0.0, |x| x * x)
    }

    #[test]
    fn fd_preserves_linear_data() {
        let mp = MarkovProblem::new(1.0, vec![vec![0.0]], |_, _, _| 0.0, |_, _, _| 1.0, |_, _, _, _, _| 0.0, |x| x);
        let g = FdGrid::stable(4.0, 0.25, 1.0, 1.0, 0.0, 0.9);
        let sol = markov_fd_solve(&mp, &g).unwrap();
        for x in [-1.3, 0.0, 0.7] {
            assert!((sol.interpolate(0.0, x) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn fd_heat_is_close() {
        let g = FdGrid::stable(6.0, 0.125, 1.0, 1.0, 0.0, 0.9);
        let sol = markov_fd_solve(&heat_markov(), &g).unwrap();
        assert!((sol.interpolate(0.0, 0.5) - 1.25).abs() < 1e-6);
    }

    #[test]
    fn fd_rejects_unstable_steps() {
        let g = FdGrid { x_min: -1.0, x_max: 1.0, nx: 40, nt: 10 };
        assert!(matches!(markov_fd_solve(&heat_markov(), &g), Err(PhjbError::Cfl { .. })));
    }

    #[test]
    fn bang_bang_is_symmetric() {
        let mp = MarkovProblem::new(
            1.0,
            vec![vec![-1.0], vec![1.0]],
            |_, _, u| u[0],
            |_, _, _| 0.5,
            |_, _, _, _, _| 0.0,
            f64::abs,
        );
        let g = FdGrid::stable(3.0, 0.125, 1.0, 0.5, 1.0, 0.9);
        let sol = markov_fd_solve(&mp, &g).unwrap();
        for x in [0.125, 0.5, 1.0] {
            assert!((sol.interpolate(0.0, x) - sol.interpolate(0.0, -x)).abs() < 1e-10);
        }
    }

    #[test]
    fn path_dependent_coefficients_fail_the_probe() {
        let cp = ControlProblem::builder(grid(4, 1))
            .drift(|p, _| DVector::from_element(1, p.sup_norm()))
            .build()
            .unwrap();
        assert!(history_probe(&cp, 32, 1) > 1e-3);
        let mp = heat_markov();
        let cp = mp.control_problem(4, 1 << 10).unwrap();
        assert_eq!(history_probe(&cp, 32, 1), 0.0);
    }

    #[test]
    fn psi_examples() {
        let w = PathFunctional::new(|p| p.endpoint()[0].powi(2));
        let params = PsiParams { beta: 10.0, eps: 0.1, nu: 2.0, horizon: 1.0, gauge: GaugeParams::default() };
        let z = Path::zeros(1, 2, 0.25).unwrap();
        assert_eq!(comparison_psi(&w, &w, &z, &z, &params).unwrap(), 0.0);
        let p = Path::scalar(0.25, &[0.5, -1.0, 0.25]).unwrap();
        let w2 = w.plus(&PathFunctional::new(|_| -0.3));
        let got = comparison_psi(&w, &w2, &p, &p, &params).unwrap();
        let weight = 0.1 * (2.0 - 0.5) / 2.0;
        let expected = 0.3 - 2.0 * weight * gauge::upsilon_norm(&p, &params.gauge);
        assert!((got - expected).abs() < 1e-12);
    }
}
