//! Control problems driven by a Brownian path: embedding into the
//! `(d + m)`-dimensional path-dependent framework, the reduction to a BSDE
//! when the data ignore state and control, and the residual of the
//! backward stochastic HJB equation for smooth candidates.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::control::{self, branch_increments, ControlError, ControlProblem};
use crate::funcalc::{self, CalcError, FdScheme, PathFunctional};
use crate::pathspace::{GridConfig, Path, PathError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BshjbError {
    #[error("{what} has dimension {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("generator or terminal data depend on the state or the control (difference {difference:e})")]
    NotReducible { difference: f64 },
    #[error("implicit step did not converge (last change {0:e})")]
    FixedPoint(f64),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Calc(#[from] CalcError),
    #[error(transparent)]
    Path(#[from] PathError),
}

type StateDrift = dyn Fn(&Path, &DVector<f64>, &[f64]) -> DVector<f64> + Send + Sync;
type StateDiffusion = dyn Fn(&Path, &DVector<f64>, &[f64]) -> DMatrix<f64> + Send + Sync;
type StateGenerator = dyn Fn(&Path, &DVector<f64>, f64, &DVector<f64>, &[f64]) -> f64 + Send + Sync;
type StateTerminal = dyn Fn(&Path, &DVector<f64>) -> f64 + Send + Sync;

/// Coefficients `b̄(ω, x, u)`, `σ̄(ω, x, u)` (m × d), `q̄(ω, x, y, z, u)`,
/// `φ̄(ω_T, x)` of a state `x ∈ R^m` driven by a `d`-dimensional Brownian path.
#[derive(Clone)]
pub struct AugmentedProblem {
    d: usize,
    m: usize,
    controls: Vec<Vec<f64>>,
    drift: Arc<StateDrift>,
    diffusion: Arc<StateDiffusion>,
    generator: Arc<StateGenerator>,
    terminal: Arc<StateTerminal>,
}

impl fmt::Debug for AugmentedProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AugmentedProblem")
            .field("d", &self.d)
            .field("m", &self.m)
            .field("controls", &self.controls)
            .finish_non_exhaustive()
    }
}

impl AugmentedProblem {
    /// All coefficients zero and a single zero control.
    pub fn new(d: usize, m: usize) -> Self {
        Self {
            d,
            m,
            controls: vec![vec![0.0]],
            drift: Arc::new(move |_, _, _| DVector::zeros(m)),
            diffusion: Arc::new(move |_, _, _| DMatrix::zeros(m, d)),
            generator: Arc::new(|_, _, _, _, _| 0.0),
            terminal: Arc::new(|_, _| 0.0),
        }
    }

    pub fn with_controls(mut self, controls: Vec<Vec<f64>>) -> Self {
        self.controls = controls;
        self
    }

    pub fn with_drift(mut self, f: impl Fn(&Path, &DVector<f64>, &[f64]) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_diffusion(
        mut self,
        f: impl Fn(&Path, &DVector<f64>, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn with_generator(
        mut self,
        f: impl Fn(&Path, &DVector<f64>, f64, &DVector<f64>, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.generator = Arc::new(f);
        self
    }

    pub fn with_terminal(mut self, f: impl Fn(&Path, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Arc::new(f);
        self
    }

    pub fn noise_dim(&self) -> usize {
        self.d
    }

    pub fn state_dim(&self) -> usize {
        self.m
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn drift(&self, omega: &Path, x: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        (self.drift)(omega, x, u)
    }

    pub fn diffusion(&self, omega: &Path, x: &DVector<f64>, u: &[f64]) -> DMatrix<f64> {
        (self.diffusion)(omega, x, u)
    }

    pub fn generator(&self, omega: &Path, x: &DVector<f64>, y: f64, z: &DVector<f64>, u: &[f64]) -> f64 {
        (self.generator)(omega, x, y, z, u)
    }

    pub fn terminal(&self, omega: &Path, x: &DVector<f64>) -> f64 {
        (self.terminal)(omega, x)
    }
}

/// Split an augmented path into the noise block `ω` and the state block `ξ`.
pub fn split(p: &Path, d: usize) -> (Path, Path) {
    (p.rows(0, d), p.rows(d, p.dim() - d))
}

/// `b = (0; b̄)`, `σ = (I; σ̄)`, `q = q̄(ω, ξ(t), ·)`, `φ = φ̄(ω_T, ξ_T(T))` on a
/// grid with state dimension `d + m` and noise dimension `d`.
pub fn augment(ap: &AugmentedProblem, steps: usize, horizon: f64, node_cap: usize) -> Result<ControlProblem, BshjbError> {
    let (d, m) = (ap.d, ap.m);
    let grid = GridConfig::new(steps, horizon, d + m, d)?;
    let probe = Path::zeros(d, 0, grid.dt())?;
    for u in &ap.controls {
        let b = ap.drift(&probe, &DVector::zeros(m), u);
        if b.len() != m {
            return Err(BshjbError::DimensionMismatch { what: "state drift", expected: m, got: b.len() });
        }
        let s = ap.diffusion(&probe, &DVector::zeros(m), u);
        if s.shape() != (m, d) {
            return Err(BshjbError::DimensionMismatch { what: "state diffusion", expected: m * d, got: s.len() });
        }
    }
    let (a1, a2, a3, a4) = (ap.clone(), ap.clone(), ap.clone(), ap.clone());
    Ok(ControlProblem::builder(grid)
        .controls(ap.controls.clone())
        .drift(move |p, u| {
            let (omega, xi) = split(p, d);
            let mut out = DVector::zeros(d + m);
            out.rows_mut(d, m).copy_from(&a1.drift(&omega, &xi.endpoint(), u));
            out
        })
        .diffusion(move |p, u| {
            let (omega, xi) = split(p, d);
            let mut out = DMatrix::zeros(d + m, d);
            out.view_mut((0, 0), (d, d)).fill_with_identity();
            out.view_mut((d, 0), (m, d)).copy_from(&a2.diffusion(&omega, &xi.endpoint(), u));
            out
        })
        .generator(move |p, y, z, u| {
            let (omega, xi) = split(p, d);
            a3.generator(&omega, &xi.endpoint(), y, z, u)
        })
        .terminal(move |p| {
            let (omega, xi) = split(p, d);
            a4.terminal(&omega, &xi.endpoint())
        })
        .node_cap(node_cap)
        .build()?)
}

/// Largest change of `q̄` and `φ̄` when `x` and `u` are resampled.
pub fn independence_probe(ap: &AugmentedProblem, grid: &GridConfig, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega_grid = GridConfig { dim: ap.d, noise_dim: ap.d, ..*grid };
    let k_ctrl = ap.controls.len();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let k = rng.random_range(0..=grid.steps);
        let omega = control::random_path(&omega_grid, k, 1.0, &mut rng);
        let x1 = DVector::from_fn(ap.m, |_, _| { let v: f64 = StandardNormal.sample(&mut rng); 3.0 * v });
        let x2 = DVector::from_fn(ap.m, |_, _| { let v: f64 = StandardNormal.sample(&mut rng); 3.0 * v });
        let u1 = &ap.controls[rng.random_range(0..k_ctrl)];
        let u2 = &ap.controls[rng.random_range(0..k_ctrl)];
        let y: f64 = StandardNormal.sample(&mut rng);
        let z = DVector::from_fn(ap.d, |_, _| StandardNormal.sample(&mut rng));
        worst = worst.max((ap.generator(&omega, &x1, y, &z, u1) - ap.generator(&omega, &x2, y, &z, u2)).abs());
        worst = worst.max((ap.terminal(&omega, &x1) - ap.terminal(&omega, &x2)).abs());
    }
    worst
}

/// Both sides of the reduction to a BSDE at one Brownian path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionReport {
    /// `V̄(t)` from the BSDE on the noise tree.
    pub bsde_value: f64,
    /// `Z` of the same BSDE at the root, first coordinate.
    pub bsde_z0: f64,
    /// `V(ω_t, x)` from the value functional of the augmented problem.
    pub value: f64,
    pub residual: f64,
    pub within_tolerance: bool,
}

/// Compare `V̄(t)` solved directly on the `ω` tree with `V(ω_t, x)` computed
/// through the augmented problem. The data must not depend on `x` or `u`.
pub fn remark64_check(
    ap: &AugmentedProblem,
    omega: &Path,
    x: &DVector<f64>,
    steps: usize,
    horizon: f64,
    tolerance: f64,
) -> Result<ReductionReport, BshjbError> {
    if omega.dim() != ap.d {
        return Err(BshjbError::DimensionMismatch { what: "noise path", expected: ap.d, got: omega.dim() });
    }
    if x.len() != ap.m {
        return Err(BshjbError::DimensionMismatch { what: "state", expected: ap.m, got: x.len() });
    }
    let cp = augment(ap, steps, horizon, control::DEFAULT_NODE_CAP)?;
    let difference = independence_probe(ap, cp.grid(), 64, 0x64);
    if difference > 1e-12 {
        return Err(BshjbError::NotReducible { difference });
    }

    let depth = steps.checked_sub(omega.t_index()).ok_or(ControlError::BadHorizon {
        start: omega.t_index(),
        end: steps,
        steps,
    })?;
    let needed = (1u128 << ap.d).checked_pow(depth as u32).unwrap_or(u128::MAX);
    if needed > control::DEFAULT_NODE_CAP as u128 {
        return Err(ControlError::CapExceeded { needed, cap: control::DEFAULT_NODE_CAP }.into());
    }
    let dt = cp.grid().dt();
    let incs = branch_increments(ap.d, dt);
    let (bsde_value, z) = reduced_bsde(ap, omega, x, depth, dt, &incs)?;

    let xi = Path::constant(x, omega.t_index(), omega.dt())?;
    let value = control::value(&cp, &omega.stack(&xi)?)?.value;
    let residual = (bsde_value - value).abs();
    Ok(ReductionReport { bsde_value, bsde_z0: z[0], value, residual, within_tolerance: residual <= tolerance })
}

/// `V̄(s) = E[V̄(s+dt)] + q̄(ω_s, V̄(s), p(s)) dt`, `p(s) = E[V̄(s+dt) ΔW]/dt`,
/// by depth-first recursion on the noise tree.
fn reduced_bsde(
    ap: &AugmentedProblem,
    omega: &Path,
    x: &DVector<f64>,
    remaining: usize,
    dt: f64,
    incs: &[DVector<f64>],
) -> Result<(f64, DVector<f64>), BshjbError> {
    if remaining == 0 {
        return Ok((ap.terminal(omega, x), DVector::zeros(ap.d)));
    }
    let u = &ap.controls[0];
    let w = 1.0 / incs.len() as f64;
    let mut mean = 0.0;
    let mut p = DVector::zeros(ap.d);
    for dw in incs {
        let child = omega.push_node(&(omega.endpoint() + dw))?;
        let (v, _) = reduced_bsde(ap, &child, x, remaining - 1, dt, incs)?;
        mean += w * v;
        p += dw * (w * v / dt);
    }
    let mut y = mean;
    for _ in 0..200 {
        let next = mean + ap.generator(omega, x, y, &p, u) * dt;
        let change = (next - y).abs();
        y = next;
        if change <= 1e-15 * y.abs().max(1.0) {
            return Ok((y, p));
        }
    }
    Err(BshjbError::FixedPoint((mean + ap.generator(omega, x, y, &p, u) * dt - y).abs()))
}

type MixedEval = dyn Fn(&Path, &DVector<f64>) -> f64 + Send + Sync;
type MixedVec = dyn Fn(&Path, &DVector<f64>) -> DVector<f64> + Send + Sync;
type MixedMat = dyn Fn(&Path, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// `v(ω_t, x)`, pathwise in `ω` and classical in `x`, with optional analytic
/// derivatives; missing ones are taken by finite differences.
#[derive(Clone)]
pub struct MixedFunctional {
    eval: Arc<MixedEval>,
    dt: Option<Arc<MixedEval>>,
    d_gamma: Option<Arc<MixedVec>>,
    d_gamma_gamma: Option<Arc<MixedMat>>,
    d_x: Option<Arc<MixedVec>>,
    d_xx: Option<Arc<MixedMat>>,
    /// `∂_{xγ} v`, shape `m × d`.
    d_x_gamma: Option<Arc<MixedMat>>,
}

impl fmt::Debug for MixedFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MixedFunctional").finish_non_exhaustive()
    }
}

impl MixedFunctional {
    pub fn new(eval: impl Fn(&Path, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        Self { eval: Arc::new(eval), dt: None, d_gamma: None, d_gamma_gamma: None, d_x: None, d_xx: None, d_x_gamma: None }
    }

    pub fn with_dt(mut self, f: impl Fn(&Path, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.dt = Some(Arc::new(f));
        self
    }

    pub fn with_d_gamma(mut self, f: impl Fn(&Path, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.d_gamma = Some(Arc::new(f));
        self
    }

    pub fn with_d_gamma_gamma(mut self, f: impl Fn(&Path, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.d_gamma_gamma = Some(Arc::new(f));
        self
    }

    pub fn with_d_x(mut self, f: impl Fn(&Path, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.d_x = Some(Arc::new(f));
        self
    }

    pub fn with_d_xx(mut self, f: impl Fn(&Path, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.d_xx = Some(Arc::new(f));
        self
    }

    pub fn with_d_x_gamma(mut self, f: impl Fn(&Path, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.d_x_gamma = Some(Arc::new(f));
        self
    }

    pub fn eval(&self, omega: &Path, x: &DVector<f64>) -> f64 {
        (self.eval)(omega, x)
    }

    fn at_state(&self, x: &DVector<f64>) -> PathFunctional {
        let (f, x) = (self.eval.clone(), x.clone());
        PathFunctional::new(move |p| f(p, &x))
    }

    /// All derivatives at `(ω, x)`, analytic where supplied.
    pub fn derivatives(&self, omega: &Path, x: &DVector<f64>, scheme: &FdScheme) -> Result<MixedDerivatives, BshjbError> {
        let frozen = self.at_state(x);
        let dt = match &self.dt {
            Some(f) => f(omega, x),
            None => funcalc::horizontal_derivative(&frozen, omega, scheme)?,
        };
        let d_gamma = match &self.d_gamma {
            Some(f) => f(omega, x),
            None => funcalc::vertical_gradient(&frozen, omega, scheme)?,
        };
        let d_gamma_gamma = match &self.d_gamma_gamma {
            Some(f) => f(omega, x),
            None => funcalc::vertical_hessian(&frozen, omega, scheme)?,
        };
        let h = scheme.h_vertical * if scheme.relative { 1.0 + x.amax() } else { 1.0 };
        let m = x.len();
        let bump = |i: usize, s: f64| {
            let mut y = x.clone();
            y[i] += s;
            y
        };
        let d_x = match &self.d_x {
            Some(f) => f(omega, x),
            None => DVector::from_fn(m, |i, _| (self.eval(omega, &bump(i, h)) - self.eval(omega, &bump(i, -h))) / (2.0 * h)),
        };
        let d_xx = match &self.d_xx {
            Some(f) => f(omega, x),
            None => {
                let f0 = self.eval(omega, x);
                DMatrix::from_fn(m, m, |i, j| {
                    if i == j {
                        (self.eval(omega, &bump(i, h)) - 2.0 * f0 + self.eval(omega, &bump(i, -h))) / (h * h)
                    } else {
                        let corner = |a: f64, b: f64| {
                            let mut y = bump(i, a);
                            y[j] += b;
                            self.eval(omega, &y)
                        };
                        (corner(h, h) - corner(h, -h) - corner(-h, h) + corner(-h, -h)) / (4.0 * h * h)
                    }
                })
            }
        };
        let d_x_gamma = match &self.d_x_gamma {
            Some(f) => f(omega, x),
            None => {
                let hg = scheme.bump_size(omega);
                let d = omega.dim();
                DMatrix::from_fn(m, d, |i, j| {
                    let corner = |a: f64, b: f64| self.eval(&omega.bump_coordinate(j, b), &bump(i, a));
                    (corner(h, hg) - corner(h, -hg) - corner(-h, hg) + corner(-h, -hg)) / (4.0 * h * hg)
                })
            }
        };
        Ok(MixedDerivatives { dt, d_gamma, d_gamma_gamma, d_x, d_xx, d_x_gamma })
    }
}

/// Derivative bundle of a [`MixedFunctional`] at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDerivatives {
    pub dt: f64,
    pub d_gamma: DVector<f64>,
    pub d_gamma_gamma: DMatrix<f64>,
    pub d_x: DVector<f64>,
    pub d_xx: DMatrix<f64>,
    pub d_x_gamma: DMatrix<f64>,
}

/// `∂_t v + ½ tr ∂_γγ v + max_u [⟨∇_x v, b̄⟩ + ½ tr(∇²_x v σ̄σ̄ᵀ) + tr(σ̄ᵀ ∂_xγ v)
///  + q̄(ω, x, v, ∂_γ v + σ̄ᵀ∇_x v, u)]`.
pub fn bshjb_residual(
    ap: &AugmentedProblem,
    v: &MixedFunctional,
    omega: &Path,
    x: &DVector<f64>,
    scheme: &FdScheme,
) -> Result<f64, BshjbError> {
    let dv = v.derivatives(omega, x, scheme)?;
    let value = v.eval(omega, x);
    let mut best = f64::NEG_INFINITY;
    for u in &ap.controls {
        let b = ap.drift(omega, x, u);
        let s = ap.diffusion(omega, x, u);
        let a = &s * s.transpose();
        let cross = s.component_mul(&dv.d_x_gamma).sum();
        let z = &dv.d_gamma + s.transpose() * &dv.d_x;
        let h = dv.d_x.dot(&b) + 0.5 * dv.d_xx.component_mul(&a).sum() + cross + ap.generator(omega, x, value, &z, u);
        best = best.max(h);
    }
    Ok(dv.dt + 0.5 * dv.d_gamma_gamma.trace() + best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{simulate_tree, ControlStrategy};

    fn omega(values: &[f64], dt: f64) -> Path {
        Path::scalar(dt, values).unwrap()
    }

    #[test]
    fn block_structure() {
        let ap = AugmentedProblem::new(1, 1);
        let cp = augment(&ap, 4, 1.0, 1 << 10).unwrap();
        let p = omega(&[0.0, 0.3], 0.25).stack(&omega(&[2.0, 2.0], 0.25)).unwrap();
        assert_eq!(cp.drift(&p, &[0.0]), DVector::zeros(2));
        assert_eq!(cp.diffusion(&p, &[0.0]), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let tree = simulate_tree(&cp, &p, &ControlStrategy::constant(0), 4).unwrap();
        for leaf in tree.leaves() {
            assert_eq!(leaf.path.endpoint()[1], 2.0);
        }
    }

    #[test]
    fn first_block_replays_noise() {
        let ap = AugmentedProblem::new(2, 1)
            .with_drift(|w, _, _| DVector::from_element(1, w.endpoint()[0]))
            .with_diffusion(|_, x, _| DMatrix::from_element(1, 2, 0.5 + x[0].sin()));
        let cp = augment(&ap, 3, 1.0, 1 << 12).unwrap();
        let p0 = Path::zeros(3, 0, 1.0 / 3.0).unwrap();
        let tree = simulate_tree(&cp, &p0, &ControlStrategy::constant(0), 3).unwrap();
        for node in tree.nodes().iter().skip(1) {
            let parent = &tree.nodes()[node.parent.unwrap()];
            let dw = &tree.increments()[node.branch];
            for i in 0..2 {
                assert_eq!(node.path.endpoint()[i], parent.path.endpoint()[i] + dw[i]);
            }
        }
    }

    #[test]
    fn martingale_reduction() {
        let ap = AugmentedProblem::new(1, 1).with_terminal(|w, _| w.endpoint()[0]);
        let w = omega(&[0.0, 0.4], 0.25);
        let r = remark64_check(&ap, &w, &DVector::from_element(1, 1.0), 4, 1.0, 1e-12).unwrap();
        assert!((r.bsde_value - 0.4).abs() < 1e-14);
        assert!(r.residual < 1e-14 && r.within_tolerance);
    }

    #[test]
    fn constant_generator_reduction() {
        let ap = AugmentedProblem::new(1, 1)
            .with_generator(|_, _, _, _, _| 0.7)
            .with_terminal(|w, _| w.endpoint()[0].powi(2));
        let w = omega(&[0.0, 0.4], 0.25);
        let r = remark64_check(&ap, &w, &DVector::from_element(1, -1.0), 4, 1.0, 1e-12).unwrap();
        assert!((r.bsde_value - (0.16 + 0.75 + 0.7 * 0.75)).abs() < 1e-12);
        assert!(r.within_tolerance);
    }

    #[test]
    fn state_dependent_data_are_rejected() {
        let ap = AugmentedProblem::new(1, 1).with_terminal(|_, x| x[0]);
        let w = omega(&[0.0], 0.25);
        let err = remark64_check(&ap, &w, &DVector::from_element(1, 1.0), 4, 1.0, 1e-12).unwrap_err();
        assert!(matches!(err, BshjbError::NotReducible { .. }));
    }

    #[test]
    fn residual_examples() {
        let scheme = FdScheme::default();
        let w = omega(&[0.0, 0.3, -0.2], 0.25);
        let x = DVector::from_element(1, 0.8);
        let ap = AugmentedProblem::new(1, 1).with_diffusion(|_, _, _| DMatrix::from_element(1, 1, 0.6));
        let v = MixedFunctional::new(|_, x| x[0]);
        assert!(bshjb_residual(&ap, &v, &w, &x, &scheme).unwrap().abs() < 1e-8);
        let ap0 = AugmentedProblem::new(1, 1);
        let v = MixedFunctional::new(|w, _| w.endpoint()[0]);
        assert!(bshjb_residual(&ap0, &v, &w, &x, &scheme).unwrap().abs() < 1e-8);
        let v = MixedFunctional::new(|w, _| w.endpoint()[0].powi(2) + 1.0 - w.time());
        assert!(bshjb_residual(&ap0, &v, &w, &x, &scheme.with_grid_end(4)).unwrap().abs() < 1e-6);
    }

    #[test]
    fn cross_term_enters() {
        // v = x ω(t): ∂_xγ v = 1, so the residual is tr(σ̄ᵀ · 1) = σ̄
        let ap = AugmentedProblem::new(1, 1).with_diffusion(|_, _, _| DMatrix::from_element(1, 1, 0.6));
        let v = MixedFunctional::new(|w, x| x[0] * w.endpoint()[0]);
        let r = bshjb_residual(&ap, &v, &omega(&[0.0, 0.5], 0.25), &DVector::from_element(1, 2.0), &FdScheme::default())
            .unwrap();
        assert!((r - 0.6).abs() < 1e-6);
    }
}
