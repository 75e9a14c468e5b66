//! One runner per subcommand. Each returns a [`Report`]; property failures
//! go into the report, contract violations come back as errors.

use nalgebra::{DMatrix, DVector};
use pathctl::bshjb::{self, AugmentedProblem};
use pathctl::control::{self, perturb_after, random_path};
use pathctl::funcalc::{self, FdScheme, ItoCheck, PathFunctional};
use pathctl::gauge::{self, GaugeParams};
use pathctl::phjb::{self, FdGrid, PsiParams, SmoothFunctional};
use pathctl::varprinciple::{self, Deltas, PathPair, Selection};
use pathctl::{BpConfig, ControlProblem, GridConfig, Path};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::coeffs::{eval_on, Coefficients};
use crate::config::{ConfigError, ExperimentConfig, MatrixSpec, OneOrMany, SelectionRule, Subcommand};
use crate::expr::{Allowed, Expr};
use crate::report::{Report, Table};
use crate::RunError;

pub fn run(config: &ExperimentConfig) -> Result<Report, RunError> {
    match config.subcommand {
        Subcommand::GaugeSuite => gauge_suite(config),
        Subcommand::ItoCheck => ito_check(config),
        Subcommand::BpDemo => bp_demo(config),
        Subcommand::Value => value(config),
        Subcommand::Dpp => dpp(config),
        Subcommand::MarkovCompare => markov_compare(config),
        Subcommand::ViscosityProbe => viscosity_probe(config),
        Subcommand::BshjbCheck => bshjb_check(config),
        Subcommand::ComparisonDemo => comparison_demo(config),
    }
}

fn grid(config: &ExperimentConfig) -> Result<GridConfig, ConfigError> {
    let g = &config.grid;
    GridConfig::new(g.steps, g.horizon, g.dim, g.noise_dim).map_err(|e| ConfigError::invalid("grid", e))
}

fn gauge_params(config: &ExperimentConfig) -> Result<GaugeParams, ConfigError> {
    GaugeParams::new(config.gauge.m, config.gauge.big_m).map_err(|e| ConfigError::invalid("gauge", e))
}

fn problem(config: &ExperimentConfig) -> Result<(Coefficients, ControlProblem), RunError> {
    let coeffs = Coefficients::from_section(&config.coefficients, &config.grid)?;
    let cp = coeffs.control_problem(grid(config)?, config.caps.node_cap)?;
    Ok((coeffs, cp))
}

fn expr(key: &str, src: &str, allowed: &Allowed) -> Result<Expr, ConfigError> {
    let e = Expr::parse(src).map_err(|source| ConfigError::Expr { key: key.into(), source })?;
    e.check(allowed).map_err(|source| ConfigError::Expr { key: key.into(), source })?;
    Ok(e)
}

/// A path functional of `(t, x, m, int)`.
fn path_functional(key: &str, src: &str, dim: usize) -> Result<Expr, ConfigError> {
    expr(key, src, &Allowed { dim, history: true, control_dim: 0, y: false, z_dim: 0 })
}

/// Constant start path of length `start_index + 1` at `start`.
fn start_path(g: &GridConfig, start: &[f64], start_index: usize) -> Result<Path, ConfigError> {
    if start.len() != g.dim {
        return Err(ConfigError::invalid("run.start", format!("needs {} entries, got {}", g.dim, start.len())));
    }
    if start_index > g.steps {
        return Err(ConfigError::invalid("run.start_index", format!("must be at most grid.steps = {}", g.steps)));
    }
    Path::constant(&DVector::from_column_slice(start), start_index, g.dt()).map_err(|e| ConfigError::invalid("run.start", e))
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::invalid(key, "must be positive and finite"))
    }
}

fn at_least_one(key: &str, n: usize) -> Result<usize, ConfigError> {
    if n >= 1 {
        Ok(n)
    } else {
        Err(ConfigError::invalid(key, "must be at least 1"))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GaugeRun {
    pairs: usize,
    ms: Vec<u32>,
    big_ms: Vec<f64>,
    tolerance: f64,
}

fn gauge_suite(config: &ExperimentConfig) -> Result<Report, RunError> {
    let run: GaugeRun = config.run_section()?;
    let g = grid(config)?;
    let mut table = Table::new(&["pair_id", "m", "M", "s0_lower_slack", "s0_upper_slack", "subadd_gap"]);
    let mut worst_slack = f64::INFINITY;
    let mut worst_gap = f64::INFINITY;
    for (ci, &m) in run.ms.iter().enumerate() {
        for (cj, &big_m) in run.big_ms.iter().enumerate() {
            let params = GaugeParams::new(m, big_m).map_err(|e| ConfigError::invalid("run.ms", e))?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((ci * run.big_ms.len() + cj) as u64);
            for id in 0..run.pairs {
                let k = rng.random_range(0..=g.steps);
                let scale = rng.random_range(0.05..1.5);
                let p = random_path(&g, k, scale, &mut rng);
                let q = random_path(&g, k, scale, &mut rng);
                let diff = p.sub(&q).expect("equal-time paths on one grid");
                let (lower, upper) = gauge::norm_bound_slack(&diff, &params);
                let gap = gauge::subadditivity_gap(&p, &q, &params).expect("equal-time pair");
                worst_slack = worst_slack.min(lower).min(upper);
                worst_gap = worst_gap.min(gap);
                table.push(vec![id.into(), m.into(), big_m.into(), lower.into(), upper.into(), gap.into()]);
            }
        }
    }
    let mut report = Report::new(table);
    report.fact("min_slack", format!("{worst_slack:.16e}"));
    report.fact("min_subadditivity_gap", format!("{worst_gap:.16e}"));
    report.require(worst_slack >= -run.tolerance, format!("norm bound slack {worst_slack:e} below -{:e}", run.tolerance));
    report.require(worst_gap >= -run.tolerance, format!("subadditivity gap {worst_gap:e} below -{:e}", run.tolerance));
    Ok(report)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ItoRun {
    functional: String,
    paths: usize,
    levels: usize,
    start: Vec<f64>,
    h_vertical: f64,
    richardson: bool,
}

fn ito_check(config: &ExperimentConfig) -> Result<Report, RunError> {
    let run: ItoRun = config.run_section()?;
    at_least_one("run.levels", run.levels)?;
    at_least_one("run.paths", run.paths)?;
    let scheme = FdScheme::default().with_bump(positive("run.h_vertical", run.h_vertical)?);
    let scheme = if run.richardson { scheme.with_richardson() } else { scheme };
    let f_expr = path_functional("run.functional", &run.functional, config.grid.dim)?;
    let f = PathFunctional::new(move |p| eval_on(&f_expr, p, &[], 0.0, &[]));
    let (coeffs, _) = problem(config)?;
    let u0 = coeffs.controls[0].clone();
    let mut table = Table::new(&["level", "steps", "dt", "mean_abs_residual"]);
    let mut means = Vec::new();
    for level in 0..run.levels {
        let steps = config.grid.steps << level;
        let g = grid(config)?.with_steps(steps);
        let cp = coeffs.control_problem(g, config.caps.node_cap)?;
        let (u1, u2) = (u0.clone(), u0.clone());
        let drift = |p: &Path| cp.drift(p, &u1);
        let diffusion = |p: &Path| cp.diffusion(p, &u2);
        let p0 = start_path(&g, &run.start, 0)?;
        let check = ItoCheck { end_index: steps, n_paths: run.paths, seed: config.seed, scheme };
        let r = funcalc::ito_check(&f, &drift, &diffusion, &p0, &check)?;
        means.push(r);
        table.push(vec![level.into(), steps.into(), g.dt().into(), r.into()]);
    }
    let mut report = Report::new(table);
    for w in means.windows(2) {
        report.fact("refinement_ratio", format!("{:.16e}", w[1] / w[0]));
    }
    report.require(means.iter().all(|m| m.is_finite() && *m >= 0.0), "residual means must be finite");
    report.require(
        means.windows(2).all(|w| w[1] <= w[0] || w[0] <= 1e-12),
        "mean residual must not grow under refinement",
    );
    Ok(report)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BpRun {
    candidates: usize,
    objective: String,
    scale: f64,
}

fn bp_demo(config: &ExperimentConfig) -> Result<Report, RunError> {
    let run: BpRun = config.run_section()?;
    let g = grid(config)?;
    let params = gauge_params(config)?;
    let scale = positive("run.scale", run.scale)?;
    let objective = path_functional("run.objective", &run.objective, g.dim)?;
    let f = move |p: &Path| eval_on(&objective, p, &[], 0.0, &[]);
    let rho = move |c: &Path, p: &Path| gauge::upsilon_bar(p, c, &params).unwrap_or(f64::INFINITY);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = random_path(&g, 0, scale, &mut rng);
    let domain: Vec<Path> = (0..run.candidates)
        .map(|_| {
            let k = rng.random_range(0..=g.steps);
            random_path(&g, k, scale * rng.random_range(0.1..2.0), &mut rng)
        })
        .collect();
    let sup = domain.iter().chain([&start]).map(&f).fold(f64::NEG_INFINITY, f64::max);
    let eps = positive("bp.eps", config.bp.eps)?.max(sup - f(&start) + 1e-9);
    let selection = match config.bp.selection {
        SelectionRule::Argmax => Selection::Argmax,
        SelectionRule::Earliest => Selection::EarliestAdmissible,
    };
    let bp = BpConfig::new(eps)
        .with_selection(selection)
        .with_deltas(Deltas::Geometric { base: positive("bp.delta_base", config.bp.delta_base)? });
    let result = varprinciple::borwein_preiss(&f, &rho, &bp, &start, &domain)?;
    let verdict = varprinciple::verify_bp_report(&result, &f, &rho, &bp, &start, &domain, 1e-10);
    let mut table = Table::new(&["round", "t_index", "delta", "rho_to_optimum", "objective", "set_size"]);
    for (i, c) in result.trajectory.iter().enumerate() {
        let size = result.set_sizes.get(i).copied().unwrap_or(0);
        table.push(vec![
            i.into(),
            c.t_index().into(),
            bp.deltas.get(i).into(),
            rho(c, &result.optimum).into(),
            f(c).into(),
            size.into(),
        ]);
    }
    let mut report = Report::new(table);
    report.fact("eps", format!("{eps:.16e}"));
    report.fact("optimum_t_index", result.optimum.t_index());
    report.fact("perturbation_value", format!("{:.16e}", result.perturbation_value));
    report.require(verdict.start_ok, "trajectory does not start at the start point");
    report.require(verdict.distances_ok, "conclusion (i): distance bound");
    report.require(verdict.times_ok, "conclusion (i): time monotonicity");
    report.require(verdict.improvement_ok, "conclusion (ii): improvement over the start");
    report.require(verdict.strict_max_ok, "conclusion (iii): strict maximality");
    Ok(report)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ValueRun {
    start: Vec<f64>,
    start_index: usize,
    enumerate_open_loop: bool,
}

fn value(config: &ExperimentConfig) -> Result<Report, RunError> {
    let run: ValueRun = config.run_section()?;
    let (_, cp) = problem(config)?;
    let p0 = start_path(cp.grid(), &run.start, run.start_index)?;
    let v = control::value(&cp, &p0)?;
    let root = v.policy_at(&p0).unwrap_or(0);
    let mut table = Table::new(&["t_index", "value", "root_control", "best_open_loop", "feedback_gain"]);
    let mut report_gap = None;
    let row = if run.enumerate_open_loop {
        let (_, best) = control::best_open_loop(&cp, &p0)?;
        report_gap = Some(v.value - best);
        vec![p0.t_index().into(), v.value.into(), root.into(), best.into(), (v.value - best).into()]
    } else {
        vec![p0.t_index().into(), v.value.into(), root.into(), f64::NAN.into(), f64::NAN.into()]
    };
    table.push(row);
    let mut report = Report::new(table);
    report.fact("value", format!("{:.16e}", v.value));
    if let Some(gap) = report_gap {
        report.require(gap >= -1e-12, format!("tree value below best open-loop cost by {:e}", -gap));
    }
    Ok(report)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DppRun {
    start: Vec<f64>,
    start_index: usize,
    delta: usize,
    tolerance: f64,
}

fn dpp(config: &ExperimentConfig) -> Result<Report, RunError> {
    let run: DppRun = config.run_section()?;
    let (_, cp) = problem(config)?;
    let p0 = start_path(cp.grid(), &run.start, run.start_index)?;
    if p0.t_index() + run.delta > cp.grid().steps {
        return Err(ConfigError::invalid("run.delta", "start_index + delta exceeds grid.steps").into());
    }
    let v = control::value(&cp, &p0)?.value;
    let residual = control::dpp_check(&cp, &p0, run.delta)?;
    let mut table = Table::new(&["t_index", "delta", "value", "residual"]);
    table.push(vec![p0.t_index().into(), run.delta.into(), v.into(), residual.into()]);
    let mut report = Report::new(table);
    report.require(residual <= run.tolerance, format!("DPP residual {residual:e} above {:e}", run.tolerance));
    Ok(report)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkovRun {
    ladder: Vec<(usize, f64)>,
    endpoint: f64,
    half_width: f64,
    safety: f64,
    history_samples: usize,
}

fn markov_compare(config: &ExperimentConfig) -> Result<Report, RunError> {
    let run: MarkovRun = config.run_section()?;
    let coeffs = Coefficients::from_section(&config.coefficients, &config.grid)?;
    let mp = coeffs.markov(config.grid.horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut table = Table::new(&["level", "steps", "dx", "tree_value", "fd_value", "residual", "bound"]);
    let mut residuals = Vec::new();
    let mut bounded = true;
    for (level, &(steps, dx)) in run.ladder.iter().enumerate() {
        at_least_one("run.ladder", steps)?;
        let g = GridConfig::new(steps, config.grid.horizon, 1, 1).map_err(|e| ConfigError::invalid("run.ladder", e))?;
        let cp = coeffs.control_problem(g, config.caps.node_cap)?;
        let history = phjb::history_probe(&cp, run.history_samples, config.seed);
        if history > 1e-12 {
            return Err(pathctl::phjb::PhjbError::HistoryDependent { difference: history }.into());
        }
        let (mut max_sigma, mut max_drift): (f64, f64) = (0.0, 0.0);
        for _ in 0..256 {
            let p = random_path(&g, rng.random_range(0..=steps), run.half_width / 3.0, &mut rng);
            for u in &coeffs.controls {
                max_sigma = max_sigma.max(cp.diffusion(&p, u)[(0, 0)].abs());
                max_drift = max_drift.max(cp.drift(&p, u)[0].abs());
            }
        }
        let fd = FdGrid::stable(
            positive("run.half_width", run.half_width)?,
            positive("run.ladder", dx)?,
            config.grid.horizon,
            max_sigma,
            max_drift,
            positive("run.safety", run.safety)?,
        );
        let mut p = random_path(&g, steps / 2, 1.0, &mut rng);
        p = p.vertical_bump(&DVector::from_element(1, run.endpoint - p.endpoint()[0]))?;
        let r = phjb::markov_consistency(&mp, &cp, &p, &fd)?;
        bounded &= r.residual <= r.bound();
        residuals.push(r.residual);
        table.push(vec![
            level.into(),
            steps.into(),
            dx.into(),
            r.tree_value.into(),
            r.fd_value.into(),
            r.residual.into(),
            r.bound().into(),
        ]);
    }
    let mut report = Report::new(table);
    report.require(bounded, "tree-vs-FD residual above the combined error estimate");
    report.require(residuals.windows(2).all(|w| w[1] < w[0]), "residual does not decrease along the ladder");
    Ok(report)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SolutionSpec {
    value: String,
    dt: String,
    dx: OneOrMany<String>,
    dxx: MatrixSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ViscosityRun {
    samples: usize,
    cloud: usize,
    tolerance: f64,
    solution: SolutionSpec,
}

fn solution_functional(spec: &SolutionSpec, d: usize) -> Result<PathFunctional, ConfigError> {
    let v = path_functional("run.solution.value", &spec.value, d)?;
    let dt = path_functional("run.solution.dt", &spec.dt, d)?;
    let dx: Vec<Expr> = match &spec.dx {
        OneOrMany::One(s) if d == 1 => vec![path_functional("run.solution.dx", s, d)?],
        OneOrMany::Many(v) if v.len() == d => v
            .iter()
            .enumerate()
            .map(|(i, s)| path_functional(&format!("run.solution.dx[{i}]"), s, d))
            .collect::<Result<_, _>>()?,
        _ => return Err(ConfigError::invalid("run.solution.dx", format!("needs {d} entries"))),
    };
    let dxx: Vec<Vec<Expr>> = match &spec.dxx {
        MatrixSpec::Scalar(s) if d == 1 => vec![vec![path_functional("run.solution.dxx", s, d)?]],
        MatrixSpec::Rows(rows) if rows.len() == d && rows.iter().all(|r| r.len() == d) => rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .map(|(j, s)| path_functional(&format!("run.solution.dxx[{i}][{j}]"), s, d))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?,
        _ => return Err(ConfigError::invalid("run.solution.dxx", format!("needs {d} rows of {d} entries"))),
    };
    Ok(PathFunctional::new(move |p| eval_on(&v, p, &[], 0.0, &[]))
        .with_dt(move |p| eval_on(&dt, p, &[], 0.0, &[]))
        .with_dx(move |p| DVector::from_iterator(dx.len(), dx.iter().map(|e| eval_on(e, p, &[], 0.0, &[]))))
        .with_dxx(move |p| DMatrix::from_fn(dxx.len(), dxx.len(), |i, j| eval_on(&dxx[i][j], p, &[], 0.0, &[]))))
}

fn viscosity_probe(config: &ExperimentConfig) -> Result<Report, RunError> {
    let run: ViscosityRun = config.run_section()?;
    let (_, cp) = problem(config)?;
    let g = *cp.grid();
    if g.steps < 2 {
        return Err(ConfigError::invalid("grid.steps", "needs at least 2 steps for interior paths").into());
    }
    let f = solution_functional(&run.solution, g.dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let probes: Vec<Path> = (0..3).map(|_| random_path(&g, rng.random_range(0..g.steps - 1), 1.0, &mut rng)).collect();
    let v = SmoothFunctional::checked(f, &probes, &FdScheme::default().with_grid_end(g.steps), 1e-6)?;
    let mut table = Table::new(&["sample", "t_index", "residual", "subsolution_residual", "touch_point"]);
    let (mut res_worst, mut sub_worst, mut touches): (f64, f64, usize) = (0.0, f64::INFINITY, 0);
    for i in 0..run.samples {
        let p = random_path(&g, rng.random_range(0..g.steps), 1.0, &mut rng);
        let residual = phjb::phjb_residual(&cp, &v, &p)?;
        let cloud = phjb::later_cloud(&p, &g, run.cloud, rng.random());
        let probe = phjb::subsolution_probe(&cp, v.functional(), &v, &p, &cloud);
        res_worst = res_worst.max(residual.abs());
        sub_worst = sub_worst.min(probe.residual);
        touches += probe.is_touch_point as usize;
        table.push(vec![i.into(), p.t_index().into(), residual.into(), probe.residual.into(), probe.is_touch_point.into()]);
    }
    let mut report = Report::new(table);
    report.fact("max_abs_residual", format!("{res_worst:.16e}"));
    report.fact("touch_points", format!("{touches}/{}", run.samples));
    report.require(res_worst <= run.tolerance, format!("classical residual {res_worst:e} above {:e}", run.tolerance));
    report.require(sub_worst >= -run.tolerance, format!("subsolution residual {sub_worst:e} below -{:e}", run.tolerance));
    report.require(touches == run.samples, "solution is not a touch point of itself");
    Ok(report)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BshjbRun {
    instances: usize,
    tolerance: f64,
}

fn bshjb_check(config: &ExperimentConfig) -> Result<Report, RunError> {
    let run: BshjbRun = config.run_section()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut table = Table::new(&["instance", "d", "m", "bsde_value", "value", "residual"]);
    let mut all_within = true;
    for i in 0..run.instances {
        let d = rng.random_range(1..=2);
        let m = rng.random_range(1..=2);
        let steps = if d == 1 { 6 } else { 4 };
        let a: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n_controls = rng.random_range(1..=2);
        let controls: Vec<Vec<f64>> = (0..n_controls).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let ap = AugmentedProblem::new(d, m)
            .with_controls(controls)
            .with_drift(move |w, x, u| DVector::from_fn(m, |i, _| a[0] * x[i].sin() + u[0] + w.endpoint()[0]))
            .with_diffusion(move |_, x, _| DMatrix::from_fn(m, d, |i, j| 0.3 + 0.1 * (x[i] + j as f64).cos()))
            .with_generator(move |w, _, y, z, _| 0.8 * a[1] * y + a[2] * z[0] + a[3] * w.endpoint()[0].sin())
            .with_terminal(move |w, _| a[4] * w.sup_norm() + (a[5] * w.endpoint()[d - 1]).cos());
        let omega_grid = GridConfig::new(steps, 1.0, d, d).expect("fixed instance grid");
        let omega = random_path(&omega_grid, rng.random_range(0..steps), 1.0, &mut rng);
        let x = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let r = bshjb::remark64_check(&ap, &omega, &x, steps, 1.0, run.tolerance)?;
        all_within &= r.within_tolerance;
        table.push(vec![i.into(), d.into(), m.into(), r.bsde_value.into(), r.value.into(), r.residual.into()]);
    }
    let mut report = Report::new(table);
    report.require(all_within, format!("reduction residual above {:e}", run.tolerance));
    Ok(report)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComparisonRun {
    pairs: usize,
    betas: Vec<f64>,
    psi_eps: f64,
    nu: f64,
}

fn comparison_demo(config: &ExperimentConfig) -> Result<Report, RunError> {
    let run: ComparisonRun = config.run_section()?;
    let (coeffs, full) = problem(config)?;
    let g = *full.grid();
    let mut restricted_coeffs = coeffs.clone();
    restricted_coeffs.controls.truncate(1);
    let restricted = restricted_coeffs.control_problem(g, config.caps.node_cap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pairs = Vec::with_capacity(run.pairs);
    while pairs.len() < run.pairs {
        let k = rng.random_range(0..=g.steps);
        let base = random_path(&g, k, 1.0, &mut rng);
        let sep = if rng.random_bool(0.1) { 0.0 } else { 10f64.powf(rng.random_range(-3.0..0.3)) };
        let mut other = perturb_after(&base, 0, sep, &mut rng);
        let shift = DVector::from_fn(g.dim, |_, _| sep * rng.random_range(-1.0..1.0));
        other = other.vertical_bump(&shift)?;
        pairs.push(PathPair { first: base, second: other });
    }
    // W₁ ≤ W₂: tree values with the first control only and with the full set
    let cache = |cp: &ControlProblem, paths: Vec<&Path>| -> Result<PathFunctional, RunError> {
        let mut map = std::collections::HashMap::new();
        for p in paths {
            map.insert(p.bit_key(), control::value(cp, p)?.value);
        }
        Ok(PathFunctional::new(move |p| map.get(&p.bit_key()).copied().unwrap_or(f64::NEG_INFINITY)))
    };
    let w1 = cache(&restricted, pairs.iter().map(|c| &c.first).collect())?;
    let w2 = cache(&full, pairs.iter().map(|c| &c.second).collect())?;
    let params = PsiParams {
        beta: 1.0,
        eps: positive("run.psi_eps", run.psi_eps)?,
        nu: positive("run.nu", run.nu)?,
        horizon: config.grid.horizon,
        gauge: gauge_params(config)?,
    };
    if run.betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
        return Err(ConfigError::invalid("run.betas", "entries must be positive and finite").into());
    }
    let rows = phjb::comparison_demo(&w1, &w2, &pairs, &run.betas, &params, positive("bp.eps", config.bp.eps)?)?;
    let mut table = Table::new(&["beta", "psi", "penalty", "separation", "rounds"]);
    for r in &rows {
        table.push(vec![r.beta.into(), r.psi.into(), r.penalty.into(), r.separation.into(), r.rounds.into()]);
    }
    let mut report = Report::new(table);
    report.require(
        rows.windows(2).all(|w| w[1].penalty <= w[0].penalty),
        "penalty βΥ(γ̂, η̂) increases along the β ladder",
    );
    Ok(report)
}
