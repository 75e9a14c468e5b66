//! Coefficients from a config section, as checked expressions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pathctl::phjb::MarkovProblem;
use pathctl::{ControlError, ControlProblem, GridConfig, Path};

use crate::config::{CoefficientSection, ConfigError, ControlSet, GridSection, MatrixSpec, OneOrMany};
use crate::expr::{Allowed, Env, Expr, Var};
use crate::presets;

/// Running integral `Σ_{j<k} γ^1(t_j) dt` of the first coordinate.
pub fn running_integral(p: &Path) -> f64 {
    (0..p.t_index()).map(|j| p.node(j)[0]).sum::<f64>() * p.dt()
}

/// Evaluate `e` on a path with the given control, `y` and `z`.
pub fn eval_on(e: &Expr, p: &Path, u: &[f64], y: f64, z: &[f64]) -> f64 {
    let x = p.endpoint();
    let env = Env { t: p.time(), x: x.as_slice(), max: p.sup_norm(), int: running_integral(p), u, y, z };
    e.eval(&env)
}

#[derive(Debug, Clone)]
pub struct Coefficients {
    pub controls: Vec<Vec<f64>>,
    pub drift: Vec<Expr>,
    /// Row-major `d × n`.
    pub diffusion: Vec<Vec<Expr>>,
    pub generator: Expr,
    pub terminal: Expr,
}

fn parse(key: &str, src: &str, allowed: &Allowed) -> Result<Expr, ConfigError> {
    let e = Expr::parse(src).map_err(|source| ConfigError::Expr { key: key.to_string(), source })?;
    e.check(allowed).map_err(|source| ConfigError::Expr { key: key.to_string(), source })?;
    Ok(e)
}

impl Coefficients {
    pub fn from_section(sec: &CoefficientSection, grid: &GridSection) -> Result<Self, ConfigError> {
        let (d, n) = (grid.dim, grid.noise_dim);
        let inline = sec.controls.is_some()
            || sec.drift.is_some()
            || sec.diffusion.is_some()
            || sec.generator.is_some()
            || sec.terminal.is_some();
        let section = match sec.preset.as_deref() {
            Some(name) => {
                if inline {
                    return Err(ConfigError::invalid("coefficients.preset", "cannot be combined with inline coefficients"));
                }
                let p = presets::coefficient_preset(name)
                    .ok_or_else(|| ConfigError::invalid("coefficients.preset", format!("unknown preset {name:?}")))?;
                if d != 1 || n != 1 {
                    return Err(ConfigError::invalid("coefficients.preset", format!("preset {name:?} needs grid.dim = grid.noise_dim = 1")));
                }
                CoefficientSection {
                    preset: None,
                    controls: Some(ControlSet::Scalars(p.controls.to_vec())),
                    drift: Some(OneOrMany::One(p.drift.into())),
                    diffusion: Some(MatrixSpec::Scalar(p.diffusion.into())),
                    generator: Some(p.generator.into()),
                    terminal: Some(p.terminal.into()),
                }
            }
            None => sec.clone(),
        };

        let controls = match section.controls {
            None => vec![vec![0.0]],
            Some(ControlSet::Scalars(v)) => v.into_iter().map(|u| vec![u]).collect(),
            Some(ControlSet::Vectors(v)) => v,
        };
        let k = controls.first().map_or(0, Vec::len);
        if controls.is_empty() || k == 0 || controls.iter().any(|u| u.len() != k) {
            return Err(ConfigError::invalid("coefficients.controls", "needs at least one control, all of one length"));
        }
        if controls.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ConfigError::invalid("coefficients.controls", "entries must be finite"));
        }

        let state = Allowed { dim: d, history: true, control_dim: k, y: false, z_dim: 0 };
        let drift = match section.drift.unwrap_or(OneOrMany::One("0".into())) {
            OneOrMany::One(s) if d == 1 => vec![parse("coefficients.drift", &s, &state)?],
            OneOrMany::One(_) => return Err(ConfigError::invalid("coefficients.drift", format!("needs {d} entries"))),
            OneOrMany::Many(v) if v.len() == d => v
                .iter()
                .enumerate()
                .map(|(i, s)| parse(&format!("coefficients.drift[{i}]"), s, &state))
                .collect::<Result<_, _>>()?,
            OneOrMany::Many(v) => {
                return Err(ConfigError::invalid("coefficients.drift", format!("needs {d} entries, got {}", v.len())))
            }
        };
        let diffusion = match section.diffusion.unwrap_or(MatrixSpec::Scalar("1".into())) {
            MatrixSpec::Scalar(s) if d == n => {
                let e = parse("coefficients.diffusion", &s, &state)?;
                (0..d).map(|i| (0..n).map(|j| if i == j { e.clone() } else { Expr::constant(0.0) }).collect()).collect()
            }
            MatrixSpec::Scalar(_) => {
                return Err(ConfigError::invalid("coefficients.diffusion", "a scalar needs grid.dim = grid.noise_dim"))
            }
            MatrixSpec::Rows(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != n) {
                    return Err(ConfigError::invalid("coefficients.diffusion", format!("needs {d} rows of {n} entries")));
                }
                rows.iter()
                    .enumerate()
                    .map(|(i, r)| {
                        r.iter()
                            .enumerate()
                            .map(|(j, s)| parse(&format!("coefficients.diffusion[{i}][{j}]"), s, &state))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        let gen_allowed = Allowed { y: true, z_dim: n, ..state };
        let generator = parse("coefficients.generator", section.generator.as_deref().unwrap_or("0"), &gen_allowed)?;
        let term_allowed = Allowed { control_dim: 0, ..state };
        let terminal = parse("coefficients.terminal", section.terminal.as_deref().unwrap_or("0"), &term_allowed)?;
        Ok(Coefficients { controls, drift, diffusion, generator, terminal })
    }

    /// Whether any coefficient reads the history through `m` or `int`.
    pub fn reads_history(&self) -> bool {
        let history = |e: &Expr| e.variables().iter().any(|v| matches!(v, Var::Max | Var::Int));
        self.drift.iter().any(history)
            || self.diffusion.iter().flatten().any(history)
            || history(&self.generator)
            || history(&self.terminal)
    }

    pub fn control_problem(&self, grid: GridConfig, node_cap: usize) -> Result<ControlProblem, ControlError> {
        let c = Arc::new(self.clone());
        let (c1, c2, c3, c4) = (c.clone(), c.clone(), c.clone(), c);
        ControlProblem::builder(grid)
            .controls(c1.controls.clone())
            .drift(move |p, u| DVector::from_iterator(c1.drift.len(), c1.drift.iter().map(|e| eval_on(e, p, u, 0.0, &[]))))
            .diffusion(move |p, u| {
                let rows = c2.diffusion.len();
                let cols = c2.diffusion.first().map_or(0, Vec::len);
                DMatrix::from_fn(rows, cols, |i, j| eval_on(&c2.diffusion[i][j], p, u, 0.0, &[]))
            })
            .generator(move |p, y, z, u| eval_on(&c3.generator, p, u, y, z.as_slice()))
            .terminal(move |p| eval_on(&c4.terminal, p, &[], 0.0, &[]))
            .node_cap(node_cap)
            .build()
    }

    /// The same coefficients as functions of `(t, x)`; requires `d = n = 1`
    /// and no history variables.
    pub fn markov(&self, horizon: f64) -> Result<MarkovProblem, ConfigError> {
        if self.drift.len() != 1 || self.diffusion[0].len() != 1 {
            return Err(ConfigError::invalid("grid.dim", "the Markov comparison needs grid.dim = grid.noise_dim = 1"));
        }
        if self.reads_history() {
            return Err(ConfigError::invalid("coefficients", "the Markov comparison needs coefficients free of `m` and `int`"));
        }
        let at = |e: Expr| move |t: f64, x: f64, u: &[f64]| e.eval(&Env { t, x: &[x], u, ..Env::default() });
        let g = self.generator.clone();
        let phi = self.terminal.clone();
        Ok(MarkovProblem::new(
            horizon,
            self.controls.clone(),
            at(self.drift[0].clone()),
            at(self.diffusion[0][0].clone()),
            move |t, x, y, z, u| g.eval(&Env { t, x: &[x], u, y, z: &[z], ..Env::default() }),
            move |x| phi.eval(&Env { t: horizon, x: &[x], ..Env::default() }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(d: usize, n: usize) -> GridSection {
        GridSection { steps: 4, horizon: 1.0, dim: d, noise_dim: n }
    }

    fn inline() -> CoefficientSection {
        CoefficientSection { preset: None, controls: None, drift: None, diffusion: None, generator: None, terminal: None }
    }

    #[test]
    fn preset_expands_and_builds() {
        let sec = CoefficientSection { preset: Some("lq".into()), ..inline() };
        let c = Coefficients::from_section(&sec, &grid(1, 1)).unwrap();
        let cp = c.control_problem(GridConfig::new(4, 1.0, 1, 1).unwrap(), 1 << 12).unwrap();
        let p = Path::scalar(0.25, &[0.3]).unwrap();
        assert_eq!(cp.drift(&p, &[0.5])[0], 0.5);
        assert_eq!(cp.generator(&p, 0.0, &DVector::zeros(1), &[0.5]), -0.25);
        assert_eq!(cp.terminal(&p), 0.3);
        assert!(!c.reads_history());
    }

    #[test]
    fn history_variables_are_evaluated() {
        let sec = CoefficientSection { terminal: Some("m + int".into()), ..inline() };
        let c = Coefficients::from_section(&sec, &grid(1, 1)).unwrap();
        assert!(c.reads_history());
        let cp = c.control_problem(GridConfig::new(4, 1.0, 1, 1).unwrap(), 1 << 12).unwrap();
        let p = Path::scalar(0.25, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(cp.terminal(&p), 2.0 + (1.0 - 2.0) * 0.25);
        assert!(c.markov(1.0).is_err());
    }

    #[test]
    fn shape_and_slot_errors_name_the_key() {
        let sec = CoefficientSection { drift: Some(OneOrMany::Many(vec!["x1".into()])), ..inline() };
        let err = Coefficients::from_section(&sec, &grid(2, 2)).unwrap_err();
        assert!(err.to_string().contains("coefficients.drift"), "{err}");
        let sec = CoefficientSection { terminal: Some("u".into()), ..inline() };
        let err = Coefficients::from_section(&sec, &grid(1, 1)).unwrap_err();
        assert!(err.to_string().contains("coefficients.terminal"), "{err}");
        let sec = CoefficientSection { preset: Some("lq".into()), drift: Some(OneOrMany::One("u".into())), ..inline() };
        assert!(Coefficients::from_section(&sec, &grid(1, 1)).is_err());
        let sec = CoefficientSection { diffusion: Some(MatrixSpec::Scalar("1".into())), ..inline() };
        assert!(Coefficients::from_section(&sec, &grid(2, 1)).is_err());
    }

    #[test]
    fn matrix_diffusion() {
        let sec = CoefficientSection {
            drift: Some(OneOrMany::Many(vec!["0".into(), "x2".into()])),
            diffusion: Some(MatrixSpec::Rows(vec![vec!["1".into()], vec!["0.5*x1".into()]])),
            ..inline()
        };
        let c = Coefficients::from_section(&sec, &grid(2, 1)).unwrap();
        let cp = c.control_problem(GridConfig::new(4, 1.0, 2, 1).unwrap(), 1 << 12).unwrap();
        let p = Path::constant(&DVector::from_vec(vec![2.0, 3.0]), 0, 0.25).unwrap();
        assert_eq!(cp.diffusion(&p, &[0.0]), DMatrix::from_vec(2, 1, vec![1.0, 1.0]));
        assert_eq!(cp.drift(&p, &[0.0]), DVector::from_vec(vec![0.0, 3.0]));
    }
}
