//! Controlled path-dependent SDEs, their BSDE costs, the value functional and
//! the dynamic programming principle.
//!
//! Two backends are provided. [`simulate_psde`] runs Euler–Maruyama with
//! Gaussian increments for statistical probes. Everything that is an identity
//! (BSDE values, backward semigroups, the value functional, the DPP) runs on a
//! non-recombining tree in which each of the `n` Brownian coordinates moves by
//! `±√dt` with probability 1/2, so conditional expectations are exact sums.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::pathspace::{sup_distance, GridConfig, Path, PathError};

/// Default cap on the number of tree leaves.
pub const DEFAULT_NODE_CAP: usize = 1 << 18;
/// Fixed-point rounds allowed for the implicit generator step.
pub const FIXED_POINT_ROUNDS: usize = 50;
/// Relative tolerance of the implicit generator step.
pub const FIXED_POINT_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("tree would need {needed} leaves, above the cap of {cap}")]
    CapExceeded { needed: u128, cap: usize },
    #[error("state became non-finite at step {step}")]
    BlowUp { step: usize },
    #[error("implicit generator step did not converge (last change {change:e}); q is too steep in y for this dt")]
    FixedPointDivergence { change: f64 },
    #[error("step contract violated: estimated Lipschitz constant {lipschitz} times dt {dt} is not below 0.5")]
    StepContract { lipschitz: f64, dt: f64 },
    #[error("control set is empty")]
    EmptyControls,
    #[error("control index {index} out of range for {count} controls")]
    BadControl { index: usize, count: usize },
    #[error("{what} has dimension {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("end index {end} outside {start}..={steps}")]
    BadHorizon { start: usize, end: usize, steps: usize },
    #[error("coefficient {0} returned a non-finite value")]
    NonFiniteCoefficient(&'static str),
    #[error(transparent)]
    Path(#[from] PathError),
}

type DriftCoef = dyn Fn(&Path, &[f64]) -> DVector<f64> + Send + Sync;
type DiffusionCoef = dyn Fn(&Path, &[f64]) -> DMatrix<f64> + Send + Sync;
type GeneratorCoef = dyn Fn(&Path, f64, &DVector<f64>, &[f64]) -> f64 + Send + Sync;
type TerminalCoef = dyn Fn(&Path) -> f64 + Send + Sync;

/// Coefficient bundle `(b, σ, q, φ, U)` on a grid.
#[derive(Clone)]
pub struct ControlProblem {
    grid: GridConfig,
    controls: Vec<Vec<f64>>,
    drift: Arc<DriftCoef>,
    diffusion: Arc<DiffusionCoef>,
    generator: Arc<GeneratorCoef>,
    terminal: Arc<TerminalCoef>,
    node_cap: usize,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("grid", &self.grid)
            .field("controls", &self.controls)
            .field("node_cap", &self.node_cap)
            .finish_non_exhaustive()
    }
}

/// Builder for [`ControlProblem`]; unset coefficients default to zero.
pub struct ControlProblemBuilder {
    grid: GridConfig,
    controls: Vec<Vec<f64>>,
    drift: Option<Arc<DriftCoef>>,
    diffusion: Option<Arc<DiffusionCoef>>,
    generator: Option<Arc<GeneratorCoef>>,
    terminal: Option<Arc<TerminalCoef>>,
    node_cap: usize,
}

impl ControlProblemBuilder {
    pub fn controls(mut self, controls: Vec<Vec<f64>>) -> Self {
        self.controls = controls;
        self
    }

    /// Scalar control values.
    pub fn scalar_controls(self, values: &[f64]) -> Self {
        self.controls(values.iter().map(|v| vec![*v]).collect())
    }

    pub fn drift(mut self, f: impl Fn(&Path, &[f64]) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn diffusion(mut self, f: impl Fn(&Path, &[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Arc::new(f));
        self
    }

    pub fn generator(
        mut self,
        f: impl Fn(&Path, f64, &DVector<f64>, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.generator = Some(Arc::new(f));
        self
    }

    pub fn terminal(mut self, f: impl Fn(&Path) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Some(Arc::new(f));
        self
    }

    pub fn node_cap(mut self, cap: usize) -> Self {
        self.node_cap = cap;
        self
    }

    pub fn build(self) -> Result<ControlProblem, ControlError> {
        if self.controls.is_empty() {
            return Err(ControlError::EmptyControls);
        }
        let (d, n) = (self.grid.dim, self.grid.noise_dim);
        let cp = ControlProblem {
            grid: self.grid,
            controls: self.controls,
            drift: self.drift.unwrap_or_else(|| Arc::new(move |_, _| DVector::zeros(d))),
            diffusion: self.diffusion.unwrap_or_else(|| Arc::new(move |_, _| DMatrix::zeros(d, n))),
            generator: self.generator.unwrap_or_else(|| Arc::new(|_, _, _, _| 0.0)),
            terminal: self.terminal.unwrap_or_else(|| Arc::new(|_| 0.0)),
            node_cap: self.node_cap,
        };
        // dimension probe at the zero path
        let probe = Path::zeros(d, 0, cp.grid.dt())?;
        for u in &cp.controls {
            let b = (cp.drift)(&probe, u);
            if b.len() != d {
                return Err(ControlError::DimensionMismatch { what: "drift", expected: d, got: b.len() });
            }
            let s = (cp.diffusion)(&probe, u);
            if s.nrows() != d || s.ncols() != n {
                return Err(ControlError::DimensionMismatch {
                    what: "diffusion",
                    expected: d * n,
                    got: s.nrows() * s.ncols(),
                });
            }
        }
        Ok(cp)
    }
}

impl ControlProblem {
    pub fn builder(grid: GridConfig) -> ControlProblemBuilder {
        ControlProblemBuilder {
            grid,
            controls: vec![vec![0.0]],
            drift: None,
            diffusion: None,
            generator: None,
            terminal: None,
            node_cap: DEFAULT_NODE_CAP,
        }
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn node_cap(&self) -> usize {
        self.node_cap
    }

    pub fn drift(&self, p: &Path, u: &[f64]) -> DVector<f64> {
        (self.drift)(p, u)
    }

    pub fn diffusion(&self, p: &Path, u: &[f64]) -> DMatrix<f64> {
        (self.diffusion)(p, u)
    }

    pub fn generator(&self, p: &Path, y: f64, z: &DVector<f64>, u: &[f64]) -> f64 {
        (self.generator)(p, y, z, u)
    }

    pub fn terminal(&self, p: &Path) -> f64 {
        (self.terminal)(p)
    }

    /// The same coefficients on a grid with a different number of steps.
    pub fn with_grid(&self, grid: GridConfig) -> ControlProblem {
        ControlProblem { grid, ..self.clone() }
    }

    pub fn with_node_cap(&self, cap: usize) -> ControlProblem {
        ControlProblem { node_cap: cap, ..self.clone() }
    }

    /// Every coefficient shifted by `eps`: `b + ε, σ + ε, q + ε, φ + ε` entrywise.
    pub fn shifted(&self, eps: f64) -> ControlProblem {
        let (b, s, q, phi) = (self.drift.clone(), self.diffusion.clone(), self.generator.clone(), self.terminal.clone());
        ControlProblem {
            drift: Arc::new(move |p, u| b(p, u).add_scalar(eps)),
            diffusion: Arc::new(move |p, u| s(p, u).add_scalar(eps)),
            generator: Arc::new(move |p, y, z, u| q(p, y, z, u) + eps),
            terminal: Arc::new(move |p| phi(p) + eps),
            ..self.clone()
        }
    }

    fn control(&self, index: usize) -> Result<&[f64], ControlError> {
        self.controls
            .get(index)
            .map(Vec::as_slice)
            .ok_or(ControlError::BadControl { index, count: self.controls.len() })
    }

    fn check_start(&self, p0: &Path, end_index: usize) -> Result<(), ControlError> {
        if p0.dim() != self.grid.dim {
            return Err(ControlError::DimensionMismatch { what: "initial path", expected: self.grid.dim, got: p0.dim() });
        }
        if p0.dt() != self.grid.dt() {
            return Err(PathError::StepMismatch { left: self.grid.dt(), right: p0.dt() }.into());
        }
        if end_index < p0.t_index() || end_index > self.grid.steps {
            return Err(ControlError::BadHorizon { start: p0.t_index(), end: end_index, steps: self.grid.steps });
        }
        Ok(())
    }

    fn check_cap(&self, branching: usize, depth: usize) -> Result<(), ControlError> {
        let needed = (branching as u128).checked_pow(depth as u32).unwrap_or(u128::MAX);
        if needed > self.node_cap as u128 {
            return Err(ControlError::CapExceeded { needed, cap: self.node_cap });
        }
        Ok(())
    }

    /// Euler step `X(s+dt) = X(s) + b dt + σ ΔW`.
    fn step(&self, path: &Path, u: &[f64], dw: &DVector<f64>) -> Result<Path, ControlError> {
        let dt = self.grid.dt();
        let b = self.drift(path, u);
        let sigma = self.diffusion(path, u);
        let next = path.endpoint() + b * dt + sigma * dw;
        path.push_node(&next).map_err(|e| match e {
            PathError::NonFinite { .. } => ControlError::BlowUp { step: path.t_index() },
            other => other.into(),
        })
    }

    /// One implicit BSDE step at `path` given the child values on the `2^n` branches.
    fn bsde_step(
        &self,
        path: &Path,
        u: &[f64],
        child_values: &[f64],
        increments: &[DVector<f64>],
    ) -> Result<(f64, DVector<f64>), ControlError> {
        let dt = self.grid.dt();
        let w = 1.0 / child_values.len() as f64;
        let mean: f64 = child_values.iter().sum::<f64>() * w;
        let mut z = DVector::zeros(self.grid.noise_dim);
        for (y, dw) in child_values.iter().zip(increments) {
            z += dw * (*y * w / dt);
        }
        let y = implicit_step(mean, dt, |y| self.generator(path, y, &z, u))?;
        Ok((y, z))
    }
}

/// Solve `y = mean + q(y) dt` by fixed-point iteration.
pub(crate) fn implicit_step(mean: f64, dt: f64, q: impl Fn(f64) -> f64) -> Result<f64, ControlError> {
    let mut y = mean;
    for _ in 0..FIXED_POINT_ROUNDS {
        let q_val = q(y);
        if !q_val.is_finite() {
            return Err(ControlError::NonFiniteCoefficient("generator"));
        }
        let next = mean + q_val * dt;
        let change = (next - y).abs();
        y = next;
        if change <= FIXED_POINT_TOL * y.abs().max(1.0) {
            return Ok(y);
        }
    }
    let change = (mean + q(y) * dt - y).abs();
    if change <= FIXED_POINT_TOL * y.abs().max(1.0) {
        Ok(y)
    } else {
        Err(ControlError::FixedPointDivergence { change })
    }
}

/// The `2^n` increments of one tree step: bit `i` of the branch index set
/// means coordinate `i` moves down.
pub fn branch_increments(noise_dim: usize, dt: f64) -> Vec<DVector<f64>> {
    let s = dt.sqrt();
    (0..1usize << noise_dim)
        .map(|b| DVector::from_fn(noise_dim, |i, _| if b >> i & 1 == 1 { -s } else { s }))
        .collect()
}

/// Adapted control choice, as indices into the control set.
#[derive(Clone)]
pub enum ControlStrategy {
    /// One control per step, counted from the start time of the run.
    OpenLoop(Vec<usize>),
    /// A map from the current path to a control.
    Feedback(Arc<dyn Fn(&Path) -> usize + Send + Sync>),
}

impl fmt::Debug for ControlStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlStrategy::OpenLoop(v) => f.debug_tuple("OpenLoop").field(v).finish(),
            ControlStrategy::Feedback(_) => f.write_str("Feedback(..)"),
        }
    }
}

impl ControlStrategy {
    pub fn constant(index: usize) -> Self {
        ControlStrategy::Feedback(Arc::new(move |_| index))
    }

    pub fn feedback(f: impl Fn(&Path) -> usize + Send + Sync + 'static) -> Self {
        ControlStrategy::Feedback(Arc::new(f))
    }

    fn choose(&self, path: &Path, offset: usize) -> usize {
        match self {
            // past the end of the list the last control is held
            ControlStrategy::OpenLoop(v) => v.get(offset).or(v.last()).copied().unwrap_or(0),
            ControlStrategy::Feedback(f) => f(path),
        }
    }
}

/// Euler–Maruyama with Gaussian increments from `p0` to `end_index`.
pub fn simulate_psde(
    cp: &ControlProblem,
    p0: &Path,
    strat: &ControlStrategy,
    end_index: usize,
    seed: u64,
) -> Result<Path, ControlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(cp, p0, strat, end_index, &mut rng)
}

fn simulate_with_rng(
    cp: &ControlProblem,
    p0: &Path,
    strat: &ControlStrategy,
    end_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Path, ControlError> {
    cp.check_start(p0, end_index)?;
    let sqrt_dt = cp.grid.dt().sqrt();
    let n = cp.grid.noise_dim;
    let mut x = p0.clone();
    while x.t_index() < end_index {
        let u = cp.control(strat.choose(&x, x.t_index() - p0.t_index()))?;
        let dw = DVector::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z * sqrt_dt
        });
        x = cp.step(&x, u, &dw)?;
    }
    Ok(x)
}

/// A node of a [`NoiseTree`].
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub path: Path,
    /// Control applied at this node; `None` at the leaves.
    pub control: Option<usize>,
    pub parent: Option<usize>,
    /// Branch index relative to the parent.
    pub branch: usize,
}

/// Non-recombining `±√dt` tree under a fixed strategy, stored as a complete
/// `2^n`-ary heap: the children of node `i` are `2^n i + 1 + b`.
#[derive(Debug, Clone)]
pub struct NoiseTree {
    depth: usize,
    branching: usize,
    increments: Vec<DVector<f64>>,
    nodes: Vec<TreeNode>,
}

impl NoiseTree {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn increments(&self) -> &[DVector<f64>] {
        &self.increments
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn children(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.branching * i + 1;
        start..start + self.branching
    }

    /// Index range of layer `level` (the root is layer 0).
    pub fn layer(&self, level: usize) -> std::ops::Range<usize> {
        let start = layer_start(self.branching, level);
        start..layer_start(self.branching, level + 1)
    }

    pub fn leaves(&self) -> &[TreeNode] {
        &self.nodes[self.layer(self.depth)]
    }

    /// Probability of each leaf (all equal).
    pub fn leaf_weight(&self) -> f64 {
        (self.branching as f64).powi(-(self.depth as i32))
    }
}

fn layer_start(branching: usize, level: usize) -> usize {
    (branching.pow(level as u32) - 1) / (branching - 1)
}

/// Build the tree from `p0` to `end_index` under `strat`.
pub fn simulate_tree(
    cp: &ControlProblem,
    p0: &Path,
    strat: &ControlStrategy,
    end_index: usize,
) -> Result<NoiseTree, ControlError> {
    cp.check_start(p0, end_index)?;
    let depth = end_index - p0.t_index();
    let branching = 1usize << cp.grid.noise_dim;
    cp.check_cap(branching, depth)?;
    let increments = branch_increments(cp.grid.noise_dim, cp.grid.dt());
    let mut nodes = Vec::with_capacity(layer_start(branching, depth + 1));
    nodes.push(TreeNode { path: p0.clone(), control: None, parent: None, branch: 0 });
    for level in 0..depth {
        for i in layer_start(branching, level)..layer_start(branching, level + 1) {
            let ctrl = strat.choose(&nodes[i].path, level);
            let u = cp.control(ctrl)?.to_vec();
            nodes[i].control = Some(ctrl);
            for (b, dw) in increments.iter().enumerate() {
                let child = cp.step(&nodes[i].path, &u, dw)?;
                nodes.push(TreeNode { path: child, control: None, parent: Some(i), branch: b });
            }
        }
    }
    Ok(NoiseTree { depth, branching, increments, nodes })
}

/// Per-node BSDE solution on a [`NoiseTree`]; `z` is zero at the leaves.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub y: Vec<f64>,
    pub z: Vec<DVector<f64>>,
}

/// Backward recursion with terminal values `φ(leaf path)`.
pub fn solve_bsde_tree(cp: &ControlProblem, tree: &NoiseTree) -> Result<BsdeSolution, ControlError> {
    let terminal: Vec<f64> = tree.leaves().iter().map(|n| cp.terminal(&n.path)).collect();
    solve_bsde_tree_with(cp, tree, &terminal)
}

/// Backward recursion with explicit per-leaf terminal values (leaf order).
pub fn solve_bsde_tree_with(
    cp: &ControlProblem,
    tree: &NoiseTree,
    terminal: &[f64],
) -> Result<BsdeSolution, ControlError> {
    let leaves = tree.layer(tree.depth);
    if terminal.len() != leaves.len() {
        return Err(ControlError::DimensionMismatch { what: "terminal values", expected: leaves.len(), got: terminal.len() });
    }
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(ControlError::NonFiniteCoefficient("terminal"));
    }
    let total = tree.nodes.len();
    let mut y = vec![0.0; total];
    let mut z = vec![DVector::zeros(cp.grid.noise_dim); total];
    y[leaves.clone()].copy_from_slice(terminal);
    for level in (0..tree.depth).rev() {
        for i in tree.layer(level) {
            let node = &tree.nodes[i];
            let u = cp.control(node.control.expect("interior node has a control"))?;
            let (yi, zi) = cp.bsde_step(&node.path, u, &y[tree.children(i)], &tree.increments)?;
            y[i] = yi;
            z[i] = zi;
        }
    }
    Ok(BsdeSolution { y, z })
}

/// `G^{γ_t,u}_{t,t+δ}[η]` with `η` given per leaf of the depth-`δ` tree.
pub fn backward_semigroup(
    cp: &ControlProblem,
    p0: &Path,
    strat: &ControlStrategy,
    delta_steps: usize,
    eta: &[f64],
) -> Result<f64, ControlError> {
    let tree = simulate_tree(cp, p0, strat, p0.t_index() + delta_steps)?;
    Ok(solve_bsde_tree_with(cp, &tree, eta)?.y[0])
}

/// [`backward_semigroup`] with `η` a functional of the leaf path.
pub fn backward_semigroup_fn(
    cp: &ControlProblem,
    p0: &Path,
    strat: &ControlStrategy,
    delta_steps: usize,
    eta: &dyn Fn(&Path) -> f64,
) -> Result<f64, ControlError> {
    let tree = simulate_tree(cp, p0, strat, p0.t_index() + delta_steps)?;
    let terminal: Vec<f64> = tree.leaves().iter().map(|n| eta(&n.path)).collect();
    Ok(solve_bsde_tree_with(cp, &tree, &terminal)?.y[0])
}

/// `J(γ_t, u) = Y^{γ_t,u}(t)` with terminal data `φ` at the end of the grid.
pub fn cost(cp: &ControlProblem, p0: &Path, strat: &ControlStrategy) -> Result<f64, ControlError> {
    let tree = simulate_tree(cp, p0, strat, cp.grid.steps)?;
    Ok(solve_bsde_tree(cp, &tree)?.y[0])
}

/// Value functional and the maximizing feedback recorded at every node.
#[derive(Debug, Clone)]
pub struct ValueResult {
    pub value: f64,
    policy: Arc<HashMap<Vec<u64>, usize>>,
}

impl ValueResult {
    /// Control chosen at `path`, if the path is a node of the value tree.
    pub fn policy_at(&self, path: &Path) -> Option<usize> {
        self.policy.get(&path.bit_key()).copied()
    }

    /// The recorded argmax as a feedback strategy.
    pub fn strategy(&self) -> ControlStrategy {
        let policy = self.policy.clone();
        ControlStrategy::feedback(move |p| policy.get(&p.bit_key()).copied().unwrap_or(0))
    }
}

/// `V(γ_t) = sup_u J(γ_t, u)` by backward induction with a per-node max over
/// the control set.
///
/// The full control-and-noise tree (branching `|U| 2^n`) is laid out layer
/// by layer, then swept backwards once.
pub fn value(cp: &ControlProblem, p0: &Path) -> Result<ValueResult, ControlError> {
    let end = cp.grid.steps;
    cp.check_start(p0, end)?;
    let depth = end - p0.t_index();
    let noise_branches = 1usize << cp.grid.noise_dim;
    let n_controls = cp.controls.len();
    let fan = n_controls * noise_branches;
    cp.check_cap(fan, depth)?;
    let increments = branch_increments(cp.grid.noise_dim, cp.grid.dt());

    let mut layers: Vec<Vec<Path>> = vec![vec![p0.clone()]];
    for level in 0..depth {
        let mut next = Vec::with_capacity(layers[level].len() * fan);
        for path in &layers[level] {
            for u in &cp.controls {
                for dw in &increments {
                    next.push(cp.step(path, u, dw)?);
                }
            }
        }
        layers.push(next);
    }

    let mut values: Vec<f64> = layers[depth].iter().map(|p| cp.terminal(p)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ControlError::NonFiniteCoefficient("terminal"));
    }
    let mut policy = HashMap::new();
    for level in (0..depth).rev() {
        let mut current = Vec::with_capacity(layers[level].len());
        for (i, path) in layers[level].iter().enumerate() {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (c, u) in cp.controls.iter().enumerate() {
                let start = i * fan + c * noise_branches;
                let (y, _) = cp.bsde_step(path, u, &values[start..start + noise_branches], &increments)?;
                if y > best.0 {
                    best = (y, c);
                }
            }
            policy.insert(path.bit_key(), best.1);
            current.push(best.0);
        }
        values = current;
    }
    Ok(ValueResult { value: values[0], policy: Arc::new(policy) })
}

/// `sup_u G^{γ_t,u}_{t,t+δ}[η(X_{t+δ})]` by depth-first recursion.
pub fn optimal_semigroup(
    cp: &ControlProblem,
    p0: &Path,
    delta_steps: usize,
    eta: &dyn Fn(&Path) -> Result<f64, ControlError>,
) -> Result<f64, ControlError> {
    cp.check_start(p0, p0.t_index() + delta_steps)?;
    let fan = cp.controls.len() << cp.grid.noise_dim;
    cp.check_cap(fan, delta_steps)?;
    let increments = branch_increments(cp.grid.noise_dim, cp.grid.dt());
    optimal_semigroup_rec(cp, p0, delta_steps, eta, &increments)
}

fn optimal_semigroup_rec(
    cp: &ControlProblem,
    path: &Path,
    remaining: usize,
    eta: &dyn Fn(&Path) -> Result<f64, ControlError>,
    increments: &[DVector<f64>],
) -> Result<f64, ControlError> {
    if remaining == 0 {
        return eta(path);
    }
    let mut best = f64::NEG_INFINITY;
    let mut child_values = Vec::with_capacity(increments.len());
    for u in &cp.controls {
        child_values.clear();
        for dw in increments {
            let child = cp.step(path, u, dw)?;
            child_values.push(optimal_semigroup_rec(cp, &child, remaining - 1, eta, increments)?);
        }
        let (y, _) = cp.bsde_step(path, u, &child_values, increments)?;
        best = best.max(y);
    }
    Ok(best)
}

/// `|V(γ_t) - sup_u G_{t,t+δ}[V(X_{t+δ})]|`.
pub fn dpp_check(cp: &ControlProblem, p0: &Path, delta_steps: usize) -> Result<f64, ControlError> {
    let direct = value(cp, p0)?.value;
    let staged = optimal_semigroup(cp, p0, delta_steps, &|p| Ok(value(cp, p)?.value))?;
    Ok((direct - staged).abs())
}

/// Best open-loop control sequence by exhaustive enumeration of `|U|^depth` sequences.
pub fn best_open_loop(cp: &ControlProblem, p0: &Path) -> Result<(Vec<usize>, f64), ControlError> {
    let depth = cp.grid.steps.saturating_sub(p0.t_index());
    let k = cp.controls.len();
    cp.check_cap(k, depth)?;
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let mut seq = vec![0usize; depth];
    loop {
        let c = cost(cp, p0, &ControlStrategy::OpenLoop(seq.clone()))?;
        if c > best.1 {
            best = (seq.clone(), c);
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == depth {
                return Ok(best);
            }
            seq[pos] += 1;
            if seq[pos] < k {
                break;
            }
            seq[pos] = 0;
            pos += 1;
        }
    }
}

/// Finite-difference Lipschitz estimates of the coefficients over random pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub drift: f64,
    pub diffusion: f64,
    pub generator_y: f64,
    pub generator_z: f64,
    pub terminal: f64,
}

impl LipschitzEstimate {
    /// The implicit step needs `L_y dt < 0.5`.
    pub fn check_step(&self, dt: f64) -> Result<(), ControlError> {
        if self.generator_y * dt < 0.5 {
            Ok(())
        } else {
            Err(ControlError::StepContract { lipschitz: self.generator_y, dt })
        }
    }
}

/// Random path on the problem's grid ending at `t_index`: a scaled random walk.
pub fn random_path(grid: &GridConfig, t_index: usize, scale: f64, rng: &mut impl Rng) -> Path {
    let dt = grid.dt();
    let mut cols = Vec::with_capacity(t_index + 1);
    let mut x = DVector::from_fn(grid.dim, |_, _| scale * (rng.random::<f64>() - 0.5));
    cols.push(x.clone());
    for _ in 0..t_index {
        x += DVector::from_fn(grid.dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z * dt.sqrt()
        });
        cols.push(x.clone());
    }
    Path::from_columns(dt, &cols).expect("finite random path")
}

/// `γ` with an independent random walk of size `scale` added after node
/// `shared`; the two paths agree on `[0, shared dt]`.
pub fn perturb_after(p: &Path, shared: usize, scale: f64, rng: &mut impl Rng) -> Path {
    let d = p.dim();
    let sqrt_dt = p.dt().sqrt();
    let mut offset = DVector::zeros(d);
    let cols: Vec<DVector<f64>> = (0..=p.t_index())
        .map(|j| {
            if j > shared {
                offset += DVector::from_fn(d, |_, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z * sqrt_dt
                });
            }
            p.node(j) + &offset
        })
        .collect();
    Path::from_columns(p.dt(), &cols).expect("finite perturbation")
}

pub fn lipschitz_probe(cp: &ControlProblem, samples: usize, seed: u64) -> LipschitzEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = cp.grid;
    let mut est = LipschitzEstimate { drift: 0.0, diffusion: 0.0, generator_y: 0.0, generator_z: 0.0, terminal: 0.0 };
    for _ in 0..samples {
        let k = rng.random_range(0..=grid.steps);
        let p = random_path(&grid, k, 1.0, &mut rng);
        let q = perturb_after(&p, rng.random_range(0..=k), 0.5, &mut rng);
        let dist = sup_distance(&p, &q).unwrap_or(0.0);
        let u = &cp.controls[rng.random_range(0..cp.controls.len())];
        if dist > 0.0 {
            est.drift = est.drift.max((cp.drift(&p, u) - cp.drift(&q, u)).norm() / dist);
            est.diffusion = est.diffusion.max((cp.diffusion(&p, u) - cp.diffusion(&q, u)).norm() / dist);
            if k == grid.steps {
                est.terminal = est.terminal.max((cp.terminal(&p) - cp.terminal(&q)).abs() / dist);
            }
        }
        let y1: f64 = StandardNormal.sample(&mut rng);
        let y2: f64 = StandardNormal.sample(&mut rng);
        let z1 = DVector::from_fn(grid.noise_dim, |_, _| StandardNormal.sample(&mut rng));
        let z2 = DVector::from_fn(grid.noise_dim, |_, _| StandardNormal.sample(&mut rng));
        if y1 != y2 {
            let dq = (cp.generator(&p, y1, &z1, u) - cp.generator(&p, y2, &z1, u)).abs();
            est.generator_y = est.generator_y.max(dq / (y1 - y2).abs());
        }
        let dz = (&z1 - &z2).norm();
        if dz > 0.0 {
            let dq = (cp.generator(&p, y1, &z1, u) - cp.generator(&p, y1, &z2, u)).abs();
            est.generator_z = est.generator_z.max(dq / dz);
        }
    }
    est
}

/// Empirical regularity constants of the value functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityReport {
    /// `sup |V(γ) - V(γ')| / ||γ - γ'||_0` over same-time pairs.
    pub lipschitz_ratio: f64,
    /// `sup |V(γ_t) - V(γ_{t,t'})| / ((1 + ||γ||_0)(t' - t)^{1/2})`.
    pub time_ratio: f64,
}

/// Probe the Lipschitz and half-Hölder-in-time behaviour of `V` on random paths.
///
/// Start times are drawn so that every value tree respects the node cap.
pub fn regularity_probe(cp: &ControlProblem, samples: usize, seed: u64) -> Result<RegularityReport, ControlError> {
    let grid = cp.grid;
    let fan = cp.controls.len() << grid.noise_dim;
    let mut max_depth = 0;
    while max_depth < grid.steps && (fan as u128).pow(max_depth as u32 + 1) <= cp.node_cap as u128 {
        max_depth += 1;
    }
    if max_depth == 0 {
        return Err(ControlError::CapExceeded { needed: fan as u128, cap: cp.node_cap });
    }
    let earliest = grid.steps - max_depth;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = RegularityReport { lipschitz_ratio: 0.0, time_ratio: 0.0 };
    for _ in 0..samples {
        let k = rng.random_range(earliest..grid.steps);
        let p = random_path(&grid, k, 1.0, &mut rng);
        let shared = rng.random_range(0..=k);
        let scale = 10f64.powf(rng.random_range(-2.0..0.0));
        let q = perturb_after(&p, shared, scale, &mut rng);
        let dist = sup_distance(&p, &q)?;
        let vp = value(cp, &p)?.value;
        if dist > 0.0 {
            let vq = value(cp, &q)?.value;
            report.lipschitz_ratio = report.lipschitz_ratio.max((vp - vq).abs() / dist);
        }
        let k2 = rng.random_range(k + 1..=grid.steps);
        let ext = p.horizontal_extension(k2)?;
        let v_ext = value(cp, &ext)?.value;
        let denom = (1.0 + p.sup_norm()) * ((k2 - k) as f64 * grid.dt()).sqrt();
        report.time_ratio = report.time_ratio.max((vp - v_ext).abs() / denom);
    }
    Ok(report)
}

/// Fitted `C_p` in `E ||X_T||_0^p ≤ C_p (1 + ||γ_t||_0^p)`.
pub fn moment_constant(
    cp: &ControlProblem,
    p0: &Path,
    strat: &ControlStrategy,
    power: f64,
    n_paths: usize,
    seed: u64,
) -> Result<f64, ControlError> {
    let mut total = 0.0;
    for i in 0..n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let x = simulate_with_rng(cp, p0, strat, cp.grid.steps, &mut rng)?;
        total += x.sup_norm().powf(power);
    }
    Ok(total / n_paths as f64 / (1.0 + p0.sup_norm().powf(power)))
}

/// `sup_r E ||X_r - γ_t||_0^p / ((1 + ||γ_t||_0^p)(r - t)^{p/2})` over grid times `r > t`.
pub fn continuity_constant(
    cp: &ControlProblem,
    p0: &Path,
    strat: &ControlStrategy,
    power: f64,
    n_paths: usize,
    seed: u64,
) -> Result<f64, ControlError> {
    let k0 = p0.t_index();
    let steps = cp.grid.steps;
    if steps == k0 {
        return Ok(0.0);
    }
    let mut sums = vec![0.0; steps - k0];
    for i in 0..n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let x = simulate_with_rng(cp, p0, strat, steps, &mut rng)?;
        let start = p0.endpoint();
        let mut running: f64 = 0.0;
        for (r, sum) in (k0 + 1..=steps).zip(sums.iter_mut()) {
            running = running.max((x.node(r) - &start).norm());
            *sum += running.powf(power);
        }
    }
    let base = 1.0 + p0.sup_norm().powf(power);
    let dt = cp.grid.dt();
    Ok(sums
        .iter()
        .enumerate()
        .map(|(j, s)| s / n_paths as f64 / (base * ((j + 1) as f64 * dt).powf(power / 2.0)))
        .fold(0.0, f64::max))
}
