//! Constructive Borwein–Preiss variational principle on finite candidate sets.
//!
//! Starting from an `ε`-maximizer `γ^0`, the construction picks a sequence
//! `γ^1, γ^2, ...` and nested sets
//!
//! ```text
//! B_0 = { p : t_p ≥ t_0, f(p) - δ_0 ρ(γ^0, p) ≥ f(γ^0) }
//! B_i = { p ∈ B_{i-1} : t_p ≥ t_i, F_i(p) ≥ F_{i-1}(γ^i) }
//! ```
//!
//! where `F_i(p) = f(p) - Σ_{k ≤ i} δ_k ρ(γ^k, p)` and each `γ^i ∈ B_{i-1}`
//! comes within `δ_i ε / (2^i δ_0)` of `sup_{B_{i-1}} F_{i-1}`. Every `p ∈ B_i`
//! satisfies `ρ(γ^i, p) ≤ ε / (2^i δ_0)`, so on a finite set the sets collapse
//! to a single point `γ̂`, the maximizer of the perturbed functional over all
//! candidates at or after `t̂`.

use std::cmp::Ordering;

use thiserror::Error;

use crate::pathspace::Path;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BpError {
    #[error("objective is not bounded above on the candidate set")]
    Unbounded,
    #[error("start value {start} is more than eps = {eps} below the supremum {sup}")]
    StartNotNearOptimal { start: f64, sup: f64, eps: f64 },
    #[error("eps must be positive, got {0}")]
    InvalidEps(f64),
    #[error("perturbation weights must be positive and finite")]
    InvalidDeltas,
    #[error("gauge function returned a negative or non-finite value")]
    InvalidGauge,
}

/// A point of `[t, T] × Λ^t` that the construction can handle.
pub trait Candidate: Clone {
    fn time_index(&self) -> usize;
    /// Total order used to break ties deterministically.
    fn lex_cmp(&self, other: &Self) -> Ordering;
}

impl Candidate for Path {
    fn time_index(&self) -> usize {
        self.t_index()
    }

    fn lex_cmp(&self, other: &Self) -> Ordering {
        Path::lex_cmp(self, other)
    }
}

/// An equal-time pair `(γ_t, η_t)`, the domain of doubled-variable functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPair {
    pub first: Path,
    pub second: Path,
}

impl Candidate for PathPair {
    fn time_index(&self) -> usize {
        self.first.t_index().max(self.second.t_index())
    }

    fn lex_cmp(&self, other: &Self) -> Ordering {
        self.first.lex_cmp(&other.first).then_with(|| self.second.lex_cmp(&other.second))
    }
}

/// Perturbation weights `δ_i`.
#[derive(Debug, Clone, PartialEq)]
pub enum Deltas {
    /// `δ_i = base · 2^{-i}`.
    Geometric { base: f64 },
    /// Explicit weights; the last one is repeated with halving beyond the list.
    Explicit(Vec<f64>),
}

impl Default for Deltas {
    fn default() -> Self {
        Deltas::Geometric { base: 1.0 }
    }
}

impl Deltas {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Deltas::Geometric { base } => base * 0.5f64.powi(i as i32),
            Deltas::Explicit(v) => match v.get(i) {
                Some(d) => *d,
                None => {
                    let last = *v.last().unwrap_or(&1.0);
                    last * 0.5f64.powi((i + 1 - v.len()) as i32)
                }
            },
        }
    }

    fn validate(&self) -> Result<(), BpError> {
        let ok = match self {
            Deltas::Geometric { base } => base.is_finite() && *base > 0.0,
            Deltas::Explicit(v) => !v.is_empty() && v.iter().all(|d| d.is_finite() && *d > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(BpError::InvalidDeltas)
        }
    }
}

/// How `γ^i` is picked among the points allowed by the slack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Exact maximizer of `F_{i-1}` over `B_{i-1}`.
    #[default]
    Argmax,
    /// Earliest admissible point, then largest `F_{i-1}`. Produces longer
    /// trajectories and exercises the time monotonicity.
    EarliestAdmissible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpConfig {
    pub eps: f64,
    pub deltas: Deltas,
    pub selection: Selection,
    pub max_rounds: usize,
    /// Stop once the diameter bound `ε / (2^i δ_0)` falls below this.
    pub diameter_floor: f64,
}

impl BpConfig {
    pub fn new(eps: f64) -> Self {
        Self { eps, deltas: Deltas::default(), selection: Selection::Argmax, max_rounds: 64, diameter_floor: 1e-12 }
    }

    pub fn with_selection(mut self, selection: Selection) -> Self {
        self.selection = selection;
        self
    }

    pub fn with_deltas(mut self, deltas: Deltas) -> Self {
        self.deltas = deltas;
        self
    }

    fn bound(&self, i: usize) -> f64 {
        self.eps / (2f64.powi(i as i32) * self.deltas.get(0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpResult<C> {
    /// `γ̂`.
    pub optimum: C,
    /// `γ^0, γ^1, ...` up to termination; later terms all equal `γ̂`.
    pub trajectory: Vec<C>,
    /// `Σ δ_i ρ(γ^i, γ̂)` over the trajectory.
    pub perturbation_value: f64,
    /// Bound on the truncated tail of the series.
    pub tail_bound: f64,
    /// `|B_i|` for each round, starting with `B_0`.
    pub set_sizes: Vec<usize>,
}

fn perturbed<C>(f: &dyn Fn(&C) -> f64, rho: &dyn Fn(&C, &C) -> f64, traj: &[C], deltas: &Deltas, p: &C) -> f64 {
    let penalty: f64 = traj.iter().enumerate().map(|(k, c)| deltas.get(k) * rho(c, p)).sum();
    f(p) - penalty
}

/// Run the construction over `domain` (the start point is always a candidate).
pub fn borwein_preiss<C: Candidate>(
    f: &dyn Fn(&C) -> f64,
    rho: &dyn Fn(&C, &C) -> f64,
    config: &BpConfig,
    start: &C,
    domain: &[C],
) -> Result<BpResult<C>, BpError> {
    if !(config.eps.is_finite() && config.eps > 0.0) {
        return Err(BpError::InvalidEps(config.eps));
    }
    config.deltas.validate()?;

    let mut points: Vec<C> = Vec::with_capacity(domain.len() + 1);
    points.push(start.clone());
    points.extend(domain.iter().filter(|c| c.lex_cmp(start) != Ordering::Equal).cloned());
    let values: Vec<f64> = points.iter().map(f).collect();

    let t0 = start.time_index();
    let sup = points
        .iter()
        .zip(&values)
        .filter(|(c, _)| c.time_index() >= t0)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !sup.is_finite() || values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(BpError::Unbounded);
    }
    let f0 = values[0];
    if f0 < sup - config.eps {
        return Err(BpError::StartNotNearOptimal { start: f0, sup, eps: config.eps });
    }

    let deltas = &config.deltas;
    let mut trajectory = vec![start.clone()];
    // penalized[j] = F_i(points[j]) for the current round i.
    let mut penalized = Vec::with_capacity(points.len());
    let mut current: Vec<usize> = Vec::new();
    for (j, c) in points.iter().enumerate() {
        if c.time_index() < t0 {
            penalized.push(f64::NEG_INFINITY);
            continue;
        }
        let r = rho(start, c);
        if !(r.is_finite() && r >= 0.0) {
            return Err(BpError::InvalidGauge);
        }
        let v = values[j] - deltas.get(0) * r;
        penalized.push(v);
        if v >= f0 {
            current.push(j);
        }
    }
    let mut set_sizes = vec![current.len()];

    let mut round = 0;
    while current.len() > 1 && round < config.max_rounds && config.bound(round) >= config.diameter_floor {
        round += 1;
        let best = current.iter().map(|&j| penalized[j]).fold(f64::NEG_INFINITY, f64::max);
        let slack = deltas.get(round) * config.bound(round);
        let chosen = select(&points, &penalized, &current, best - slack, config.selection);
        let level = penalized[chosen];
        let t_i = points[chosen].time_index();
        let delta_i = deltas.get(round);
        let anchor = points[chosen].clone();
        let mut next = Vec::with_capacity(current.len());
        for &j in &current {
            if points[j].time_index() < t_i {
                continue;
            }
            let r = rho(&anchor, &points[j]);
            if !(r.is_finite() && r >= 0.0) {
                return Err(BpError::InvalidGauge);
            }
            penalized[j] -= delta_i * r;
            if penalized[j] >= level {
                next.push(j);
            }
        }
        trajectory.push(anchor);
        current = next;
        set_sizes.push(current.len());
    }

    let last = trajectory.last().expect("trajectory starts with the start point").clone();
    let optimum = if current.len() == 1 {
        points[current[0]].clone()
    } else {
        last.clone()
    };
    let perturbation_value: f64 =
        trajectory.iter().enumerate().map(|(k, c)| deltas.get(k) * rho(c, &optimum)).sum();
    let tail_bound = if current.len() == 1 {
        0.0
    } else {
        let n = trajectory.len();
        let tail: f64 = (n..n + 64).map(|k| deltas.get(k)).sum();
        tail * config.bound(n - 1)
    };

    Ok(BpResult { optimum, trajectory, perturbation_value, tail_bound, set_sizes })
}

fn select<C: Candidate>(points: &[C], penalized: &[f64], current: &[usize], threshold: f64, mode: Selection) -> usize {
    let by_value = |a: usize, b: usize| {
        penalized[a].total_cmp(&penalized[b]).then_with(|| points[b].lex_cmp(&points[a]))
    };
    match mode {
        Selection::Argmax => current.iter().copied().max_by(|&a, &b| by_value(a, b)),
        Selection::EarliestAdmissible => current
            .iter()
            .copied()
            .filter(|&j| penalized[j] >= threshold)
            .max_by(|&a, &b| points[b].time_index().cmp(&points[a].time_index()).then_with(|| by_value(a, b))),
    }
    .expect("current set is nonempty")
}

/// Which of the three conclusions failed, if any.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BpReport {
    pub distances_ok: bool,
    pub times_ok: bool,
    pub improvement_ok: bool,
    pub strict_max_ok: bool,
    pub start_ok: bool,
}

impl BpReport {
    pub fn all(&self) -> bool {
        self.distances_ok && self.times_ok && self.improvement_ok && self.strict_max_ok && self.start_ok
    }
}

/// Independent check of a result against the three conclusions, by
/// exhaustive scan of the candidate set with tolerance `tol`.
pub fn verify_bp_report<C: Candidate>(
    result: &BpResult<C>,
    f: &dyn Fn(&C) -> f64,
    rho: &dyn Fn(&C, &C) -> f64,
    config: &BpConfig,
    start: &C,
    domain: &[C],
    tol: f64,
) -> BpReport {
    let traj = &result.trajectory;
    let opt = &result.optimum;
    let deltas = &config.deltas;
    let delta0 = deltas.get(0);
    let mut report = BpReport {
        start_ok: traj.first().is_some_and(|c| c.lex_cmp(start) == Ordering::Equal),
        ..BpReport::default()
    };

    // (i) distances and non-decreasing times that end at t̂
    report.distances_ok = traj.iter().enumerate().all(|(i, c)| {
        let bound = config.eps / (2f64.powi(i as i32) * delta0);
        rho(c, opt) <= bound + tol
    });
    report.times_ok = traj.windows(2).all(|w| w[0].time_index() <= w[1].time_index())
        && traj.iter().all(|c| c.time_index() <= opt.time_index());

    // (ii) the perturbed value at γ̂ is no worse than f(γ^0)
    let at_opt = perturbed(f, rho, traj, deltas, opt);
    report.improvement_ok = at_opt >= f(start) - tol;

    // (iii) strict maximality over later-or-equal candidates
    let t_hat = opt.time_index();
    let in_domain = domain.iter().chain(std::iter::once(start)).any(|c| c.lex_cmp(opt) == Ordering::Equal);
    report.strict_max_ok = in_domain
        && domain
            .iter()
            .chain(std::iter::once(start))
            .filter(|c| c.time_index() >= t_hat && c.lex_cmp(opt) != Ordering::Equal)
            .all(|c| perturbed(f, rho, traj, deltas, c) < at_opt + tol);
    report
}

/// `true` iff all three conclusions hold within `1e-10`.
pub fn verify_bp<C: Candidate>(
    result: &BpResult<C>,
    f: &dyn Fn(&C) -> f64,
    rho: &dyn Fn(&C, &C) -> f64,
    config: &BpConfig,
    start: &C,
    domain: &[C],
) -> bool {
    verify_bp_report(result, f, rho, config, start, domain, 1e-10).all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::{upsilon_bar, GaugeParams};

    fn line(dt: f64, k: usize, level: f64) -> Path {
        Path::scalar(dt, &vec![level; k + 1]).unwrap()
    }

    fn rho_bar(a: &Path, b: &Path) -> f64 {
        upsilon_bar(a, b, &GaugeParams::default()).unwrap()
    }

    #[test]
    fn unique_maximizer_is_found_in_one_round() {
        let domain: Vec<Path> = (0..5).map(|i| line(0.1, 2, i as f64 * 0.1)).collect();
        let f = |p: &Path| -(p.endpoint()[0] - 0.3).powi(2);
        let start = domain[3].clone();
        let cfg = BpConfig::new(1e-3);
        let res = borwein_preiss(&f, &rho_bar, &cfg, &start, &domain).unwrap();
        assert_eq!(res.optimum, domain[3]);
        assert!(res.trajectory.len() <= 2);
        assert!(verify_bp(&res, &f, &rho_bar, &cfg, &start, &domain));
    }

    #[test]
    fn constant_objective() {
        let domain: Vec<Path> = (0..4).map(|i| line(0.1, i, 0.2 * i as f64)).collect();
        let f = |_: &Path| 1.0;
        let start = domain[1].clone();
        let cfg = BpConfig::new(0.1);
        let res = borwein_preiss(&f, &rho_bar, &cfg, &start, &domain).unwrap();
        // only the start survives the penalty, so (ii) is an equality there
        assert_eq!(res.set_sizes[0], 1);
        assert_eq!(res.optimum, start);
        let at_opt = f(&res.optimum) - res.perturbation_value;
        assert_eq!(at_opt, f(&start));
        assert!(verify_bp(&res, &f, &rho_bar, &cfg, &start, &domain));
    }

    #[test]
    fn rejects_bad_start() {
        let domain: Vec<Path> = (0..4).map(|i| line(0.1, 2, i as f64)).collect();
        let f = |p: &Path| p.endpoint()[0];
        let err = borwein_preiss(&f, &rho_bar, &BpConfig::new(0.5), &domain[0], &domain).unwrap_err();
        assert!(matches!(err, BpError::StartNotNearOptimal { .. }));
        let inf = |_: &Path| f64::INFINITY;
        let err = borwein_preiss(&inf, &rho_bar, &BpConfig::new(0.5), &domain[0], &domain).unwrap_err();
        assert_eq!(err, BpError::Unbounded);
        assert!(matches!(
            borwein_preiss(&f, &rho_bar, &BpConfig::new(0.0), &domain[3], &domain),
            Err(BpError::InvalidEps(_))
        ));
    }

    #[test]
    fn decreasing_time_in_trajectory_fails_verification() {
        let domain: Vec<Path> = (0..4).map(|i| line(0.1, i, 0.0)).collect();
        let f = |p: &Path| -p.time();
        let cfg = BpConfig::new(0.5);
        let start = domain[0].clone();
        let mut res = borwein_preiss(&f, &rho_bar, &cfg, &start, &domain).unwrap();
        assert!(verify_bp(&res, &f, &rho_bar, &cfg, &start, &domain));
        res.trajectory.insert(1, domain[2].clone());
        res.trajectory.push(domain[1].clone());
        let report = verify_bp_report(&res, &f, &rho_bar, &cfg, &start, &domain, 1e-10);
        assert!(!report.times_ok);
    }

    #[test]
    fn explicit_deltas_extend_by_halving() {
        let d = Deltas::Explicit(vec![2.0, 1.0]);
        assert_eq!(d.get(0), 2.0);
        assert_eq!(d.get(1), 1.0);
        assert_eq!(d.get(2), 0.5);
        assert_eq!(d.get(3), 0.25);
        assert_eq!(Deltas::default().get(3), 0.125);
    }
}
