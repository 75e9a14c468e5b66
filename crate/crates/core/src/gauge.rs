//! Smooth gauge-type functionals `S_m`, `Υ^{m,M}` and `Ῡ^{m,M}`.
//!
//! `S_m(γ_t, η_s) = (||γ - η||_0^{2m} - |γ(t) - η(s)|^{2m})^3 / ||γ - η||_0^{4m}`
//! (zero when the sup distance vanishes), `Υ^{m,M} = S_m + M |γ(t) - η(s)|^{2m}`
//! and `Ῡ^{m,M} = Υ^{m,M} + |s - t|^2`. The sup distance always holds the
//! shorter path's last value up to `t ∨ s`.
//!
//! For `M ≥ 3`, `||γ||_0^{2m} ≤ Υ^{m,M}(γ) ≤ M ||γ||_0^{2m}`, which makes `Ῡ`
//! a smooth stand-in for `||γ - η||_0^{2m} + |s - t|^2`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::funcalc::PathFunctional;
use crate::pathspace::{sup_distance, sup_distance_before_end, Path, PathError};

/// Largest exponent parameter accepted; `||·||^{4m}` overflows quickly beyond it.
pub const MAX_M: u32 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaugeError {
    #[error("gauge exponent m must lie in 1..={MAX_M}, got {0}")]
    InvalidExponent(u32),
    #[error("gauge weight M must be finite, got {0}")]
    InvalidWeight(f64),
    #[error("anchor time index {anchor} is later than path time index {path}")]
    AnchorAfterPath { anchor: usize, path: usize },
    #[error("pair must share a time index, got {0} and {1}")]
    UnequalTimes(usize, usize),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// The pair `(m, M)`; defaults to `(3, 3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeParams {
    m: u32,
    big_m: f64,
}

impl Default for GaugeParams {
    fn default() -> Self {
        Self { m: 3, big_m: 3.0 }
    }
}

impl GaugeParams {
    pub fn new(m: u32, big_m: f64) -> Result<Self, GaugeError> {
        if m == 0 || m > MAX_M {
            return Err(GaugeError::InvalidExponent(m));
        }
        if !big_m.is_finite() {
            return Err(GaugeError::InvalidWeight(big_m));
        }
        Ok(Self { m, big_m })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn big_m(&self) -> f64 {
        self.big_m
    }
}

fn powi(x: f64, n: u32) -> f64 {
    x.powi(n as i32)
}

fn endpoint_gap(p: &Path, q: &Path) -> DVector<f64> {
    p.endpoint() - q.endpoint()
}

fn s_from_parts(sup: f64, gap: f64, m: u32) -> f64 {
    if sup == 0.0 {
        return 0.0;
    }
    let a = powi(sup, 2 * m);
    let num = a - powi(gap, 2 * m);
    powi(num, 3) / (a * a)
}

/// `S_m(γ_t, η_s)`.
pub fn s_m(p: &Path, q: &Path, g: &GaugeParams) -> Result<f64, GaugeError> {
    let sup = sup_distance(p, q)?;
    let gap = endpoint_gap(p, q).norm();
    Ok(s_from_parts(sup, gap, g.m))
}

/// `Υ^{m,M}(γ_t, η_s)`.
pub fn upsilon(p: &Path, q: &Path, g: &GaugeParams) -> Result<f64, GaugeError> {
    let sup = sup_distance(p, q)?;
    let gap = endpoint_gap(p, q).norm();
    Ok(s_from_parts(sup, gap, g.m) + g.big_m * powi(gap, 2 * g.m))
}

/// `Υ^{m,M}(γ_t)`, i.e. against the zero path of the same time.
pub fn upsilon_norm(p: &Path, g: &GaugeParams) -> f64 {
    let sup = p.sup_norm();
    let gap = p.endpoint().norm();
    s_from_parts(sup, gap, g.m) + g.big_m * powi(gap, 2 * g.m)
}

/// `Ῡ^{m,M}(γ_t, η_s) = Υ^{m,M}(γ_t, η_s) + |s - t|^2`.
pub fn upsilon_bar(p: &Path, q: &Path, g: &GaugeParams) -> Result<f64, GaugeError> {
    let dt = p.time() - q.time();
    Ok(upsilon(p, q, g)? + dt * dt)
}

/// Which case of the derivative formula applies at `γ_t` for anchor `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `||γ - a||_0 = 0`.
    Singular,
    /// `|γ(t) - a(t̂)| ≥ ||γ - a||_{0-}`: the endpoint carries the sup, derivatives vanish.
    EndpointDominant,
    /// `|γ(t) - a(t̂)| < ||γ - a||_{0-}`.
    InteriorDominant,
}

struct AnchorGeometry {
    branch: Branch,
    sup: f64,
    interior: f64,
    gap: DVector<f64>,
}

fn anchor_geometry(p: &Path, anchor: &Path) -> Result<AnchorGeometry, GaugeError> {
    if anchor.t_index() > p.t_index() {
        return Err(GaugeError::AnchorAfterPath { anchor: anchor.t_index(), path: p.t_index() });
    }
    let sup = sup_distance(p, anchor)?;
    let interior = sup_distance_before_end(p, anchor)?;
    let gap = endpoint_gap(p, anchor);
    let branch = if sup == 0.0 {
        Branch::Singular
    } else if gap.norm() < interior {
        Branch::InteriorDominant
    } else {
        Branch::EndpointDominant
    };
    Ok(AnchorGeometry { branch, sup, interior, gap })
}

/// Branch of `S_m^{a}` at `p`, and the distance to the branch boundary
/// `| ||γ - a||_{0-} - |γ(t) - a(t̂)| |`.
pub fn branch(p: &Path, anchor: &Path) -> Result<(Branch, f64), GaugeError> {
    let geo = anchor_geometry(p, anchor)?;
    let margin = (geo.interior - geo.gap.norm()).abs();
    Ok((geo.branch, margin))
}

/// Closed-form vertical gradient of `γ_t ↦ S_m(γ_t, a_t̂)`.
pub fn grad_s(p: &Path, anchor: &Path, g: &GaugeParams) -> Result<DVector<f64>, GaugeError> {
    let geo = anchor_geometry(p, anchor)?;
    let d = p.dim();
    if geo.branch != Branch::InteriorDominant {
        return Ok(DVector::zeros(d));
    }
    let m = g.m;
    let mf = m as f64;
    let a = powi(geo.sup, 2 * m);
    let r = geo.gap.norm();
    let num = a - powi(r, 2 * m);
    let coeff = -6.0 * mf * num * num * powi(r, 2 * m - 2) / (a * a);
    Ok(&geo.gap * coeff)
}

/// Closed-form vertical Hessian of `γ_t ↦ S_m(γ_t, a_t̂)`.
pub fn hess_s(p: &Path, anchor: &Path, g: &GaugeParams) -> Result<DMatrix<f64>, GaugeError> {
    let geo = anchor_geometry(p, anchor)?;
    let d = p.dim();
    if geo.branch != Branch::InteriorDominant {
        return Ok(DMatrix::zeros(d, d));
    }
    let m = g.m;
    let mf = m as f64;
    let a = powi(geo.sup, 2 * m);
    let den = a * a;
    let r = geo.gap.norm();
    let num = a - powi(r, 2 * m);
    let outer = &geo.gap * geo.gap.transpose();
    let mut h = &outer * (24.0 * mf * mf * num * powi(r, 4 * m - 4) / den);
    if m >= 2 {
        h -= &outer * (12.0 * mf * (mf - 1.0) * num * num * powi(r, 2 * m - 4) / den);
    }
    let diag = 6.0 * mf * num * num * powi(r, 2 * m - 2) / den;
    for i in 0..d {
        h[(i, i)] -= diag;
    }
    Ok(h)
}

/// Gradient of `f(γ_t) = |γ_t(t) - a|^{2m}`.
pub fn grad_power(p: &Path, a: &DVector<f64>, m: u32) -> DVector<f64> {
    let v = p.endpoint() - a;
    let r = v.norm();
    if m == 1 {
        return v * 2.0;
    }
    let c = 2.0 * m as f64 * powi(r, 2 * m - 2);
    v * c
}

/// Hessian of `f(γ_t) = |γ_t(t) - a|^{2m}`.
pub fn hess_power(p: &Path, a: &DVector<f64>, m: u32) -> DMatrix<f64> {
    let v = p.endpoint() - a;
    let d = v.len();
    let r = v.norm();
    let mf = m as f64;
    let mut h = DMatrix::identity(d, d) * (2.0 * mf * powi(r, 2 * m - 2));
    if m >= 2 {
        h += &v * v.transpose() * (4.0 * mf * (mf - 1.0) * powi(r, 2 * m - 4));
    }
    h
}

/// Vertical gradient of `γ_t ↦ Υ^{m,M}(γ_t, a_t̂)`.
pub fn grad_upsilon(p: &Path, anchor: &Path, g: &GaugeParams) -> Result<DVector<f64>, GaugeError> {
    Ok(grad_s(p, anchor, g)? + grad_power(p, &anchor.endpoint(), g.m) * g.big_m)
}

/// Vertical Hessian of `γ_t ↦ Υ^{m,M}(γ_t, a_t̂)`.
pub fn hess_upsilon(p: &Path, anchor: &Path, g: &GaugeParams) -> Result<DMatrix<f64>, GaugeError> {
    Ok(hess_s(p, anchor, g)? + hess_power(p, &anchor.endpoint(), g.m) * g.big_m)
}

/// `γ_t ↦ Υ^{m,M}(γ_t, a_t̂)` on paths at or after the anchor time, with
/// closed-form derivatives (the horizontal one is zero).
///
/// Evaluating the derivatives on a path earlier than the anchor, or on a
/// path of another dimension, panics.
pub fn upsilon_functional(anchor: Path, g: GaugeParams) -> PathFunctional {
    let (a1, a2, a3) = (anchor.clone(), anchor.clone(), anchor);
    PathFunctional::new(move |p| upsilon(p, &a1, &g).expect("path comparable with anchor"))
        .with_dt(|_| 0.0)
        .with_dx(move |p| grad_upsilon(p, &a2, &g).expect("path at or after anchor"))
        .with_dxx(move |p| hess_upsilon(p, &a3, &g).expect("path at or after anchor"))
}

/// `f(γ_t) = |γ_t(t) - a|^{2m}` with its closed-form derivatives.
pub fn power_functional(a: DVector<f64>, m: u32) -> PathFunctional {
    let (a1, a2, a3) = (a.clone(), a.clone(), a);
    PathFunctional::new(move |p| powi((p.endpoint() - &a1).norm(), 2 * m))
        .with_dt(|_| 0.0)
        .with_dx(move |p| grad_power(p, &a2, m))
        .with_dxx(move |p| hess_power(p, &a3, m))
}

/// `2^{2m-1}(Υ(γ) + Υ(η)) - Υ(γ + η)` for an equal-time pair.
pub fn subadditivity_gap(p: &Path, q: &Path, g: &GaugeParams) -> Result<f64, GaugeError> {
    if p.t_index() != q.t_index() {
        return Err(GaugeError::UnequalTimes(p.t_index(), q.t_index()));
    }
    let sum = p.add(q)?;
    let factor = powi(2.0, 2 * g.m - 1);
    Ok(factor * (upsilon_norm(p, g) + upsilon_norm(q, g)) - upsilon_norm(&sum, g))
}

/// Slacks of the two-sided bound `||γ||^{2m} ≤ Υ^{m,M}(γ) ≤ M ||γ||^{2m}`:
/// `(Υ - ||γ||^{2m}, M ||γ||^{2m} - Υ)`.
pub fn norm_bound_slack(p: &Path, g: &GaugeParams) -> (f64, f64) {
    let u = upsilon_norm(p, g);
    let n = powi(p.sup_norm(), 2 * g.m);
    (u - n, g.big_m * n - u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(values: &[f64]) -> Path {
        Path::scalar(0.1, values).unwrap()
    }

    #[test]
    fn s_m_examples() {
        let g = GaugeParams::default();
        let p = scalar(&[0.3, -1.0, 0.5]);
        assert_eq!(s_m(&p, &p, &g).unwrap(), 0.0);
        // equal endpoints: S_m is the full power of the sup distance
        let q = scalar(&[0.0, 0.0, 0.5]);
        let sup: f64 = 1.0;
        assert!((s_m(&p, &q, &g).unwrap() - sup.powi(6)).abs() < 1e-15);
        let ones = scalar(&[1.0; 4]);
        let zeros = scalar(&[0.0; 4]);
        assert_eq!(s_m(&ones, &zeros, &g).unwrap(), 0.0);
    }

    #[test]
    fn upsilon_examples() {
        let g = GaugeParams::new(3, 3.0).unwrap();
        let c = scalar(&[-1.5; 3]);
        let zeros = scalar(&[0.0; 3]);
        assert!((upsilon(&c, &zeros, &g).unwrap() - 3.0 * 1.5f64.powi(6)).abs() < 1e-12);
        assert_eq!(upsilon(&c, &c, &g).unwrap(), 0.0);
        assert_eq!(upsilon_norm(&c, &g), upsilon(&c, &zeros, &g).unwrap());
    }

    #[test]
    fn upsilon_bar_examples() {
        let g = GaugeParams::default();
        let p = scalar(&[0.1, 0.4]);
        let q = scalar(&[0.2, -0.4]);
        assert_eq!(upsilon_bar(&p, &p, &g).unwrap(), 0.0);
        assert_eq!(upsilon_bar(&p, &q, &g).unwrap(), upsilon(&p, &q, &g).unwrap());
        let r = scalar(&[0.2, -0.4, 0.0]);
        let v = upsilon_bar(&p, &r, &g).unwrap();
        let lower = sup_distance(&p, &r).unwrap().powi(6) + 0.1f64.powi(2);
        assert!(v >= lower - 1e-15);
    }

    #[test]
    fn params_validation() {
        assert!(GaugeParams::new(0, 3.0).is_err());
        assert!(GaugeParams::new(7, 3.0).is_err());
        assert!(GaugeParams::new(2, f64::NAN).is_err());
        assert!(GaugeParams::new(6, -1.0).is_ok());
    }

    #[test]
    fn gradient_branches() {
        let g = GaugeParams::default();
        let a = scalar(&[0.0, 0.0]);
        // singular: path equals the extended anchor
        let same = scalar(&[0.0, 0.0, 0.0]);
        assert_eq!(grad_s(&same, &a, &g).unwrap()[0], 0.0);
        assert_eq!(hess_s(&same, &a, &g).unwrap()[(0, 0)], 0.0);
        // endpoint strictly dominant
        let p = scalar(&[0.0, 0.5, 2.0]);
        assert_eq!(branch(&p, &a).unwrap().0, Branch::EndpointDominant);
        assert_eq!(grad_s(&p, &a, &g).unwrap()[0], 0.0);
        assert_eq!(hess_s(&p, &a, &g).unwrap()[(0, 0)], 0.0);
        // tie takes the zero branch
        let tie = scalar(&[0.0, 1.0, -1.0]);
        assert_eq!(branch(&tie, &a).unwrap().0, Branch::EndpointDominant);
        assert_eq!(grad_s(&tie, &a, &g).unwrap()[0], 0.0);
        // interior dominant: non-zero
        let q = scalar(&[0.0, 2.0, 0.5]);
        assert_eq!(branch(&q, &a).unwrap().0, Branch::InteriorDominant);
        assert!(grad_s(&q, &a, &g).unwrap()[0] < 0.0);
        // anchor later than the path is rejected
        assert!(grad_s(&a, &q, &g).is_err());
    }

    #[test]
    fn power_examples() {
        let p = scalar(&[1.0, 3.0]);
        let zero = DVector::zeros(1);
        assert_eq!(grad_power(&p, &zero, 1)[0], 6.0);
        assert_eq!(hess_power(&p, &zero, 1)[(0, 0)], 2.0);
        let a = DVector::from_element(1, 3.0);
        for m in 2..=4 {
            assert_eq!(grad_power(&p, &a, m)[0], 0.0);
            assert_eq!(hess_power(&p, &a, m)[(0, 0)], 0.0);
        }
    }

    #[test]
    fn subadditivity_examples() {
        let g = GaugeParams::default();
        let z = scalar(&[0.0; 3]);
        assert_eq!(subadditivity_gap(&z, &z, &g).unwrap(), 0.0);
        let p = scalar(&[0.3, -0.8, 0.5]);
        let expected = (2f64.powi(5) - 1.0) * upsilon_norm(&p, &g);
        assert!((subadditivity_gap(&p, &z, &g).unwrap() - expected).abs() < 1e-14);
        assert!(subadditivity_gap(&p, &scalar(&[0.0; 2]), &g).is_err());
    }

    #[test]
    fn translation_identity() {
        let g = GaugeParams::new(2, 5.0).unwrap();
        let p = scalar(&[0.3, -0.8, 0.5]);
        let q = scalar(&[-0.1, 0.2, 0.9]);
        let lhs = upsilon(&p, &q, &g).unwrap();
        let rhs = upsilon_norm(&p.sub(&q).unwrap(), &g);
        assert!((lhs - rhs).abs() < 1e-15);
    }
}
