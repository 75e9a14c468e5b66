//! Dupire pathwise derivatives by finite differences and a Monte Carlo
//! verifier for the functional Itô formula.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::pathspace::{Path, PathError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalcError {
    #[error("functional returned a non-finite value ({context})")]
    NonFinite { context: &'static str },
    #[error("horizontal derivative needs room on the grid: index {index}, step {step}, grid end {grid_end}")]
    GridExhausted { index: usize, step: usize, grid_end: usize },
    #[error("invalid finite-difference scheme: {0}")]
    InvalidScheme(&'static str),
    #[error("path dimension {path} does not match coefficient dimension {coeff}")]
    DimensionMismatch { path: usize, coeff: usize },
    #[error(transparent)]
    Path(#[from] PathError),
}

type EvalFn = dyn Fn(&Path) -> f64 + Send + Sync;
type GradFn = dyn Fn(&Path) -> DVector<f64> + Send + Sync;
type HessFn = dyn Fn(&Path) -> DMatrix<f64> + Send + Sync;

/// A map `Path -> R`, optionally with analytic pathwise derivatives.
#[derive(Clone)]
pub struct PathFunctional {
    eval: Arc<EvalFn>,
    dt: Option<Arc<EvalFn>>,
    dx: Option<Arc<GradFn>>,
    dxx: Option<Arc<HessFn>>,
}

impl fmt::Debug for PathFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PathFunctional")
            .field("analytic_dt", &self.dt.is_some())
            .field("analytic_dx", &self.dx.is_some())
            .field("analytic_dxx", &self.dxx.is_some())
            .finish()
    }
}

impl PathFunctional {
    pub fn new(eval: impl Fn(&Path) -> f64 + Send + Sync + 'static) -> Self {
        Self { eval: Arc::new(eval), dt: None, dx: None, dxx: None }
    }

    pub fn with_dt(mut self, dt: impl Fn(&Path) -> f64 + Send + Sync + 'static) -> Self {
        self.dt = Some(Arc::new(dt));
        self
    }

    pub fn with_dx(mut self, dx: impl Fn(&Path) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.dx = Some(Arc::new(dx));
        self
    }

    pub fn with_dxx(mut self, dxx: impl Fn(&Path) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.dxx = Some(Arc::new(dxx));
        self
    }

    pub fn eval(&self, p: &Path) -> f64 {
        (self.eval)(p)
    }

    pub fn analytic_dt(&self, p: &Path) -> Option<f64> {
        self.dt.as_ref().map(|f| f(p))
    }

    pub fn analytic_dx(&self, p: &Path) -> Option<DVector<f64>> {
        self.dx.as_ref().map(|f| f(p))
    }

    /// Analytic Hessian, symmetrized.
    pub fn analytic_dxx(&self, p: &Path) -> Option<DMatrix<f64>> {
        self.dxx.as_ref().map(|f| symmetrize(f(p)))
    }

    pub fn has_dt(&self) -> bool {
        self.dt.is_some()
    }

    pub fn has_dx(&self) -> bool {
        self.dx.is_some()
    }

    pub fn has_dxx(&self) -> bool {
        self.dxx.is_some()
    }

    pub fn has_all_derivatives(&self) -> bool {
        self.dt.is_some() && self.dx.is_some() && self.dxx.is_some()
    }

    /// `f + g`, carrying derivatives only when both sides have them.
    pub fn plus(&self, other: &PathFunctional) -> PathFunctional {
        let (a, b) = (self.clone(), other.clone());
        let mut out = PathFunctional::new(move |p| a.eval(p) + b.eval(p));
        if let (Some(fa), Some(fb)) = (self.dt.clone(), other.dt.clone()) {
            out.dt = Some(Arc::new(move |p: &Path| fa(p) + fb(p)));
        }
        if let (Some(fa), Some(fb)) = (self.dx.clone(), other.dx.clone()) {
            out.dx = Some(Arc::new(move |p: &Path| fa(p) + fb(p)));
        }
        if let (Some(fa), Some(fb)) = (self.dxx.clone(), other.dxx.clone()) {
            out.dxx = Some(Arc::new(move |p: &Path| fa(p) + fb(p)));
        }
        out
    }

    /// `c f`.
    pub fn scaled(&self, c: f64) -> PathFunctional {
        let a = self.clone();
        let mut out = PathFunctional::new(move |p| c * a.eval(p));
        if let Some(f) = self.dt.clone() {
            out.dt = Some(Arc::new(move |p: &Path| c * f(p)));
        }
        if let Some(f) = self.dx.clone() {
            out.dx = Some(Arc::new(move |p: &Path| f(p) * c));
        }
        if let Some(f) = self.dxx.clone() {
            out.dxx = Some(Arc::new(move |p: &Path| f(p) * c));
        }
        out
    }
}

/// Finite-difference stencil sizes.
///
/// The vertical bump is `h_vertical * (1 + |γ_t(t)|)` when `relative` is set,
/// otherwise `h_vertical`. The horizontal step is counted in grid steps.
/// `grid_end`, when known, lets the horizontal derivative fall back to the
/// left-limit convention at the last grid node.
///
/// With `richardson` set, vertical stencils at `h` and `h/2` are combined as
/// `(4 D(h/2) - D(h)) / 3`, cancelling the `h²` error term. This allows a
/// larger bump on functionals whose value dwarfs their endpoint sensitivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdScheme {
    pub h_vertical: f64,
    pub relative: bool,
    pub h_horizontal: usize,
    pub grid_end: Option<usize>,
    pub richardson: bool,
}

impl Default for FdScheme {
    fn default() -> Self {
        Self { h_vertical: 1e-4, relative: true, h_horizontal: 1, grid_end: None, richardson: false }
    }
}

impl FdScheme {
    pub fn absolute(h: f64) -> Self {
        Self { h_vertical: h, relative: false, ..Self::default() }
    }

    pub fn with_bump(mut self, h: f64) -> Self {
        self.h_vertical = h;
        self
    }

    pub fn with_richardson(mut self) -> Self {
        self.richardson = true;
        self
    }

    pub fn with_grid_end(mut self, end: usize) -> Self {
        self.grid_end = Some(end);
        self
    }

    fn validate(&self) -> Result<(), CalcError> {
        if !(self.h_vertical.is_finite() && self.h_vertical > 0.0) {
            return Err(CalcError::InvalidScheme("h_vertical must be positive"));
        }
        if self.h_horizontal == 0 {
            return Err(CalcError::InvalidScheme("h_horizontal must be at least one step"));
        }
        Ok(())
    }

    pub fn bump_size(&self, p: &Path) -> f64 {
        if self.relative {
            self.h_vertical * (1.0 + p.endpoint().norm())
        } else {
            self.h_vertical
        }
    }
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn finite(v: f64, context: &'static str) -> Result<f64, CalcError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CalcError::NonFinite { context })
    }
}

/// Steps `(x + h) - x` and `x - (x - h)` actually realised in floating point.
fn realised_steps(x: f64, h: f64) -> (f64, f64) {
    ((x + h) - x, x - (x - h))
}

/// Central difference `(f(γ^{+h e_i}) - f(γ^{-h e_i})) / 2h` per coordinate,
/// divided by the realised rather than the nominal step.
pub fn vertical_gradient(f: &PathFunctional, p: &Path, scheme: &FdScheme) -> Result<DVector<f64>, CalcError> {
    scheme.validate()?;
    let h = scheme.bump_size(p);
    if scheme.richardson {
        let coarse = gradient_stencil(f, p, h)?;
        let fine = gradient_stencil(f, p, 0.5 * h)?;
        Ok((fine * 4.0 - coarse) / 3.0)
    } else {
        gradient_stencil(f, p, h)
    }
}

fn gradient_stencil(f: &PathFunctional, p: &Path, h: f64) -> Result<DVector<f64>, CalcError> {
    let end = p.endpoint();
    let mut grad = DVector::zeros(p.dim());
    for i in 0..p.dim() {
        let (hu, hd) = realised_steps(end[i], h);
        let up = finite(f.eval(&p.bump_coordinate(i, h)), "vertical gradient")?;
        let down = finite(f.eval(&p.bump_coordinate(i, -h)), "vertical gradient")?;
        grad[i] = (up - down) / (hu + hd);
    }
    Ok(grad)
}

/// Second-order central stencil on endpoint bumps, symmetrized.
pub fn vertical_hessian(f: &PathFunctional, p: &Path, scheme: &FdScheme) -> Result<DMatrix<f64>, CalcError> {
    scheme.validate()?;
    let h = scheme.bump_size(p);
    if scheme.richardson {
        let coarse = hessian_stencil(f, p, h)?;
        let fine = hessian_stencil(f, p, 0.5 * h)?;
        Ok(symmetrize((fine * 4.0 - coarse) / 3.0))
    } else {
        hessian_stencil(f, p, h)
    }
}

fn hessian_stencil(f: &PathFunctional, p: &Path, h: f64) -> Result<DMatrix<f64>, CalcError> {
    let end = p.endpoint();
    let d = p.dim();
    let centre = finite(f.eval(p), "vertical hessian")?;
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let (hu, hd) = realised_steps(end[i], h);
        let up = finite(f.eval(&p.bump_coordinate(i, h)), "vertical hessian")?;
        let down = finite(f.eval(&p.bump_coordinate(i, -h)), "vertical hessian")?;
        hess[(i, i)] = 2.0 * ((up - centre) / hu - (centre - down) / hd) / (hu + hd);
        for j in (i + 1)..d {
            let (ju, jd) = realised_steps(end[j], h);
            let corner = |si: f64, sj: f64| -> Result<f64, CalcError> {
                let q = p.bump_coordinate(i, si * h).bump_coordinate(j, sj * h);
                finite(f.eval(&q), "vertical hessian")
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / ((hu + hd) * (ju + jd));
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Forward quotient `(f(γ_{t,t+h}) - f(γ_t)) / h` along the horizontal extension.
///
/// When the step would leave the grid (`scheme.grid_end`), the quotient is
/// taken at the restriction `γ_t|_{[0, t-h]}` instead, the grid version of
/// the left limit used at the terminal time.
pub fn horizontal_derivative(f: &PathFunctional, p: &Path, scheme: &FdScheme) -> Result<f64, CalcError> {
    scheme.validate()?;
    let k = p.t_index();
    let step = scheme.h_horizontal;
    let base = match scheme.grid_end {
        Some(end) if k + step > end => {
            if k < step {
                return Err(CalcError::GridExhausted { index: k, step, grid_end: end });
            }
            p.restrict(k - step)?
        }
        _ => p.clone(),
    };
    let ext = base.horizontal_extension(base.t_index() + step)?;
    let now = finite(f.eval(&base), "horizontal derivative")?;
    let later = finite(f.eval(&ext), "horizontal derivative")?;
    Ok((later - now) / (step as f64 * p.dt()))
}

/// Derivative triple, analytic where available and finite differences otherwise.
pub fn derivatives(
    f: &PathFunctional,
    p: &Path,
    scheme: &FdScheme,
) -> Result<(f64, DVector<f64>, DMatrix<f64>), CalcError> {
    let dt = match f.analytic_dt(p) {
        Some(v) => v,
        None => horizontal_derivative(f, p, scheme)?,
    };
    let dx = match f.analytic_dx(p) {
        Some(v) => v,
        None => vertical_gradient(f, p, scheme)?,
    };
    let dxx = match f.analytic_dxx(p) {
        Some(v) => v,
        None => vertical_hessian(f, p, scheme)?,
    };
    Ok((dt, dx, dxx))
}

/// Coefficient of an Itô process: drift `Path -> R^d`.
pub type DriftFn<'a> = &'a (dyn Fn(&Path) -> DVector<f64> + Sync);
/// Diffusion `Path -> R^{d x n}`.
pub type DiffusionFn<'a> = &'a (dyn Fn(&Path) -> DMatrix<f64> + Sync);

/// Settings for [`ito_check`].
#[derive(Debug, Clone, Copy)]
pub struct ItoCheck {
    pub end_index: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: FdScheme,
}

/// Mean absolute residual of the functional Itô formula along Euler paths.
///
/// For each simulated path the residual is
/// `f(X_T) - f(X_t) - Σ [∂_t f dt + ∂_x f · ΔX + ½ tr(∂_xx f σσᵀ) dt]`
/// with every derivative evaluated at the left node `X_{s}` and the
/// quadratic variation taken from the diffusion coefficient. Path `i` uses
/// its own ChaCha stream, so results do not depend on thread scheduling.
pub fn ito_check(
    f: &PathFunctional,
    drift: DriftFn<'_>,
    diffusion: DiffusionFn<'_>,
    p0: &Path,
    check: &ItoCheck,
) -> Result<f64, CalcError> {
    if check.end_index < p0.t_index() {
        return Err(PathError::IndexOutOfRange { index: check.end_index, min: p0.t_index(), max: usize::MAX }.into());
    }
    let scheme = check.scheme.with_grid_end(check.end_index);
    let residuals: Result<Vec<f64>, CalcError> = (0..check.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
            rng.set_stream(i as u64);
            ito_residual_one(f, drift, diffusion, p0, check.end_index, &scheme, &mut rng).map(f64::abs)
        })
        .collect();
    let residuals = residuals?;
    let total: f64 = residuals.iter().sum();
    Ok(total / check.n_paths.max(1) as f64)
}

fn ito_residual_one(
    f: &PathFunctional,
    drift: DriftFn<'_>,
    diffusion: DiffusionFn<'_>,
    p0: &Path,
    end_index: usize,
    scheme: &FdScheme,
    rng: &mut ChaCha8Rng,
) -> Result<f64, CalcError> {
    let dt = p0.dt();
    let d = p0.dim();
    let mut x = p0.clone();
    let start = finite(f.eval(&x), "ito check")?;
    let mut integral = 0.0;
    while x.t_index() < end_index {
        let b = drift(&x);
        let sigma = diffusion(&x);
        if b.len() != d || sigma.nrows() != d {
            return Err(CalcError::DimensionMismatch { path: d, coeff: b.len().max(sigma.nrows()) });
        }
        let n = sigma.ncols();
        let dw = DVector::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z * dt.sqrt()
        });
        let dx = &b * dt + &sigma * dw;
        let (f_t, f_x, f_xx) = derivatives(f, &x, scheme)?;
        let qv = &sigma * sigma.transpose() * dt;
        integral += f_t * dt + f_x.dot(&dx) + 0.5 * (f_xx * qv).trace();
        let next = x.endpoint() + dx;
        x = x.push_node(&next)?;
    }
    let end = finite(f.eval(&x), "ito check")?;
    Ok(end - start - integral)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn endpoint_sq() -> PathFunctional {
        PathFunctional::new(|p| p.endpoint().norm_squared())
    }

    #[test]
    fn gradient_of_square() {
        let p = Path::scalar(0.1, &[0.0, 1.0, 3.0]).unwrap();
        let g = vertical_gradient(&endpoint_sq(), &p, &FdScheme::default()).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn gradient_of_initial_value_is_zero() {
        let f = PathFunctional::new(|p| p.node(0)[0]);
        let p = Path::scalar(0.1, &[2.0, 1.0, 3.0]).unwrap();
        assert_eq!(vertical_gradient(&f, &p, &FdScheme::default()).unwrap()[0], 0.0);
        // a path at time zero: the bump hits the initial value itself
        let p0 = Path::scalar(0.1, &[2.0]).unwrap();
        assert!((vertical_gradient(&f, &p0, &FdScheme::default()).unwrap()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hessian_examples() {
        let p = Path::new(0.1, DMatrix::from_row_slice(2, 2, &[0.5, 1.0, -0.3, 2.0])).unwrap();
        let h = vertical_hessian(&endpoint_sq(), &p, &FdScheme::default()).unwrap();
        assert!((h - DMatrix::identity(2, 2) * 2.0).abs().max() < 1e-6);
        let lin = PathFunctional::new(|p| 3.0 * p.endpoint()[0] - p.endpoint()[1]);
        let h = vertical_hessian(&lin, &p, &FdScheme::absolute(1e-3)).unwrap();
        assert!(h.abs().max() < 1e-9);
    }

    #[test]
    fn richardson_cancels_the_quadratic_error() {
        let f = PathFunctional::new(|p| p.endpoint()[0].powi(4));
        let p = Path::scalar(0.1, &[0.0, 0.7]).unwrap();
        let plain = FdScheme::absolute(1e-2);
        let rich = plain.with_richardson();
        let exact_g = 4.0 * 0.7f64.powi(3);
        let exact_h = 12.0 * 0.7f64.powi(2);
        let g_plain = (vertical_gradient(&f, &p, &plain).unwrap()[0] - exact_g).abs();
        let g_rich = (vertical_gradient(&f, &p, &rich).unwrap()[0] - exact_g).abs();
        let h_rich = (vertical_hessian(&f, &p, &rich).unwrap()[(0, 0)] - exact_h).abs();
        assert!(g_plain > 1e-5 && g_rich < 1e-10, "{g_plain} {g_rich}");
        assert!(h_rich < 1e-8, "{h_rich}");
    }

    #[test]
    fn horizontal_examples() {
        let scheme = FdScheme::default();
        let p = Path::scalar(0.25, &[1.0, -1.0, 2.0]).unwrap();
        let time = PathFunctional::new(|p| p.time());
        assert!((horizontal_derivative(&time, &p, &scheme).unwrap() - 1.0).abs() < 1e-12);
        let end = PathFunctional::new(|p| p.endpoint()[0]);
        assert_eq!(horizontal_derivative(&end, &p, &scheme).unwrap(), 0.0);
        let integral = PathFunctional::new(|p| p.values().iter().sum::<f64>() * p.dt());
        let v = horizontal_derivative(&integral, &p, &scheme).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn horizontal_left_limit_at_grid_end() {
        let p = Path::scalar(0.25, &[1.0, -1.0, 2.0]).unwrap();
        let integral = PathFunctional::new(|p| p.values().iter().sum::<f64>() * p.dt());
        let scheme = FdScheme::default().with_grid_end(2);
        // evaluated one node earlier, so the added rectangle has height -1
        let v = horizontal_derivative(&integral, &p, &scheme).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
        let q = Path::scalar(0.25, &[1.0]).unwrap();
        let err = horizontal_derivative(&integral, &q, &FdScheme::default().with_grid_end(0));
        assert!(matches!(err, Err(CalcError::GridExhausted { .. })));
    }

    #[test]
    fn non_finite_is_reported() {
        let f = PathFunctional::new(|p| 1.0 / (p.endpoint()[0] - p.endpoint()[0]));
        let p = Path::scalar(0.1, &[0.0]).unwrap();
        assert!(matches!(vertical_gradient(&f, &p, &FdScheme::default()), Err(CalcError::NonFinite { .. })));
    }

    #[test]
    fn ito_affine_residual_is_rounding_only() {
        let f = PathFunctional::new(|p| p.endpoint()[0]);
        let drift = |p: &Path| DVector::from_element(1, 0.3 * p.endpoint()[0].sin());
        let diff = |p: &Path| DMatrix::from_element(1, 1, 1.0 + 0.1 * p.endpoint()[0].cos());
        let p0 = Path::scalar(1.0 / 32.0, &[0.2]).unwrap();
        let check = ItoCheck { end_index: 32, n_paths: 200, seed: 3, scheme: FdScheme::default() };
        let r = ito_check(&f, &drift, &diff, &p0, &check).unwrap();
        assert!(r < 1e-10, "residual {r}");
    }

    #[test]
    fn ito_check_is_reproducible() {
        let f = endpoint_sq();
        let drift = |_: &Path| DVector::zeros(1);
        let diff = |_: &Path| DMatrix::from_element(1, 1, 1.0);
        let p0 = Path::scalar(0.125, &[0.0]).unwrap();
        let check = ItoCheck { end_index: 8, n_paths: 64, seed: 11, scheme: FdScheme::default() };
        let a = ito_check(&f, &drift, &diff, &p0, &check).unwrap();
        let b = ito_check(&f, &drift, &diff, &p0, &check).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
