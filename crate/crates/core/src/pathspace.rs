//! Discretized path space.
//!
//! A [`Path`] is a d-dimensional trajectory sampled on a uniform grid
//! `0, dt, 2dt, ..., k dt`; its current time is `k dt`. Both the continuous
//! space and its cadlag superset are represented by the same type: a vertical
//! bump simply overwrites the final column.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("path dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("grid step mismatch: {left} vs {right}")]
    StepMismatch { left: f64, right: f64 },
    #[error("time index {index} out of range (allowed {min}..={max})")]
    IndexOutOfRange { index: usize, min: usize, max: usize },
    #[error("path contains a non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("grid step must be finite and positive, got {0}")]
    InvalidStep(f64),
    #[error("path must have at least one row and one column")]
    Empty,
}

/// Uniform time grid over `[0, horizon]` with `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub steps: usize,
    pub horizon: f64,
    pub dim: usize,
    pub noise_dim: usize,
}

impl GridConfig {
    pub fn new(steps: usize, horizon: f64, dim: usize, noise_dim: usize) -> Result<Self, PathError> {
        if steps == 0 || dim == 0 || noise_dim == 0 {
            return Err(PathError::Empty);
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(PathError::InvalidStep(horizon));
        }
        Ok(Self { steps, horizon, dim, noise_dim })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.dt()
    }

    /// Same horizon and dimensions with a different number of steps.
    pub fn with_steps(&self, steps: usize) -> Self {
        Self { steps, ..*self }
    }
}

/// A path `γ_t` on the uniform grid: `d` rows, `t_index + 1` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dt: f64,
    values: DMatrix<f64>,
}

impl Path {
    pub fn new(dt: f64, values: DMatrix<f64>) -> Result<Self, PathError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(PathError::InvalidStep(dt));
        }
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(PathError::Empty);
        }
        for (j, col) in values.column_iter().enumerate() {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(PathError::NonFinite { node: j });
            }
        }
        Ok(Self { dt, values })
    }

    /// One-dimensional path from its node values.
    pub fn scalar(dt: f64, values: &[f64]) -> Result<Self, PathError> {
        Self::new(dt, DMatrix::from_row_slice(1, values.len(), values))
    }

    /// Path built node by node from column vectors.
    pub fn from_columns(dt: f64, columns: &[DVector<f64>]) -> Result<Self, PathError> {
        if columns.is_empty() {
            return Err(PathError::Empty);
        }
        let d = columns[0].len();
        if let Some(bad) = columns.iter().find(|c| c.len() != d) {
            return Err(PathError::DimensionMismatch { left: d, right: bad.len() });
        }
        Self::new(dt, DMatrix::from_columns(columns))
    }

    pub fn zeros(dim: usize, t_index: usize, dt: f64) -> Result<Self, PathError> {
        Self::new(dt, DMatrix::zeros(dim, t_index + 1))
    }

    pub fn constant(value: &DVector<f64>, t_index: usize, dt: f64) -> Result<Self, PathError> {
        Self::new(dt, DMatrix::from_fn(value.len(), t_index + 1, |i, _| value[i]))
    }

    pub fn t_index(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Current time `t = t_index * dt`.
    pub fn time(&self) -> f64 {
        self.t_index() as f64 * self.dt
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Value at grid node `j`.
    pub fn node(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }

    /// Value at grid node `j`, holding the last value beyond the end.
    pub(crate) fn node_held(&self, j: usize) -> nalgebra::DVectorView<'_, f64> {
        self.values.column(j.min(self.t_index()))
    }

    /// `γ_t(t)`.
    pub fn endpoint(&self) -> DVector<f64> {
        self.node(self.t_index())
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(self)
    }

    /// `sup_{0 ≤ s < t} |γ_t(s)|`, zero when `t = 0`.
    pub fn sup_norm_before_end(&self) -> f64 {
        let k = self.t_index();
        (0..k).map(|j| self.values.column(j).norm()).fold(0.0, f64::max)
    }

    /// `γ_t^x`: the final value shifted by `x`, history untouched.
    pub fn vertical_bump(&self, x: &DVector<f64>) -> Result<Path, PathError> {
        self.check_vector(x)?;
        let mut out = self.clone();
        let k = out.t_index();
        let mut last = out.values.column_mut(k);
        last += x;
        out.check_finite_column(k)?;
        Ok(out)
    }

    /// Bump only coordinate `i` of the final value.
    pub fn bump_coordinate(&self, i: usize, h: f64) -> Path {
        let mut out = self.clone();
        let k = out.t_index();
        out.values[(i, k)] += h;
        out
    }

    /// `γ_{t,t̄}`: hold the last value constant up to `new_t_index`.
    pub fn horizontal_extension(&self, new_t_index: usize) -> Result<Path, PathError> {
        let k = self.t_index();
        if new_t_index < k {
            return Err(PathError::IndexOutOfRange { index: new_t_index, min: k, max: usize::MAX });
        }
        let d = self.dim();
        let values = DMatrix::from_fn(d, new_t_index + 1, |i, j| self.values[(i, j.min(k))]);
        Ok(Path { dt: self.dt, values })
    }

    /// `γ_t|_{[0,s]}`.
    pub fn restrict(&self, new_t_index: usize) -> Result<Path, PathError> {
        let k = self.t_index();
        if new_t_index > k {
            return Err(PathError::IndexOutOfRange { index: new_t_index, min: 0, max: k });
        }
        Ok(Path { dt: self.dt, values: self.values.columns(0, new_t_index + 1).into_owned() })
    }

    /// Append one node. Used by the simulators.
    pub fn push_node(&self, value: &DVector<f64>) -> Result<Path, PathError> {
        self.check_vector(value)?;
        let k = self.t_index();
        let mut values = self.values.clone().resize_horizontally(k + 2, 0.0);
        values.set_column(k + 1, value);
        let out = Path { dt: self.dt, values };
        out.check_finite_column(k + 1)?;
        Ok(out)
    }

    /// Node-wise `self - other` for paths of equal time.
    pub fn sub(&self, other: &Path) -> Result<Path, PathError> {
        self.check_same_time(other)?;
        Ok(Path { dt: self.dt, values: &self.values - &other.values })
    }

    /// Node-wise `self + other` for paths of equal time.
    pub fn add(&self, other: &Path) -> Result<Path, PathError> {
        self.check_same_time(other)?;
        Ok(Path { dt: self.dt, values: &self.values + &other.values })
    }

    /// Stack `self` on top of `other` (same time), giving a `d1 + d2` dimensional path.
    pub fn stack(&self, other: &Path) -> Result<Path, PathError> {
        if self.dt != other.dt {
            return Err(PathError::StepMismatch { left: self.dt, right: other.dt });
        }
        if self.t_index() != other.t_index() {
            return Err(PathError::IndexOutOfRange {
                index: other.t_index(),
                min: self.t_index(),
                max: self.t_index(),
            });
        }
        let (d1, d2) = (self.dim(), other.dim());
        let values = DMatrix::from_fn(d1 + d2, self.t_index() + 1, |i, j| {
            if i < d1 {
                self.values[(i, j)]
            } else {
                other.values[(i - d1, j)]
            }
        });
        Ok(Path { dt: self.dt, values })
    }

    /// Rows `start..start + len` as a path of the same time.
    pub fn rows(&self, start: usize, len: usize) -> Path {
        Path { dt: self.dt, values: self.values.rows(start, len).into_owned() }
    }

    /// Total order on the encoding `(t_index, values column-major)`.
    pub fn lex_cmp(&self, other: &Path) -> Ordering {
        self.t_index()
            .cmp(&other.t_index())
            .then_with(|| self.dim().cmp(&other.dim()))
            .then_with(|| {
                for (a, b) in self.values.iter().zip(other.values.iter()) {
                    match a.total_cmp(b) {
                        Ordering::Equal => continue,
                        ord => return ord,
                    }
                }
                Ordering::Equal
            })
    }

    /// Exact bit-level key, suitable for maps keyed by tree nodes.
    pub fn bit_key(&self) -> Vec<u64> {
        let mut key = Vec::with_capacity(self.values.len() + 1);
        key.push(self.t_index() as u64);
        key.extend(self.values.iter().map(|v| v.to_bits()));
        key
    }

    fn check_vector(&self, x: &DVector<f64>) -> Result<(), PathError> {
        if x.len() != self.dim() {
            return Err(PathError::DimensionMismatch { left: self.dim(), right: x.len() });
        }
        Ok(())
    }

    fn check_finite_column(&self, j: usize) -> Result<(), PathError> {
        if self.values.column(j).iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(PathError::NonFinite { node: j })
        }
    }

    fn check_same_time(&self, other: &Path) -> Result<(), PathError> {
        check_grid(self, other)?;
        if self.t_index() != other.t_index() {
            return Err(PathError::IndexOutOfRange {
                index: other.t_index(),
                min: self.t_index(),
                max: self.t_index(),
            });
        }
        Ok(())
    }
}

/// Paths are comparable only on the same grid and in the same dimension.
pub fn check_grid(p: &Path, q: &Path) -> Result<(), PathError> {
    if p.dim() != q.dim() {
        return Err(PathError::DimensionMismatch { left: p.dim(), right: q.dim() });
    }
    if p.dt != q.dt {
        return Err(PathError::StepMismatch { left: p.dt, right: q.dt });
    }
    Ok(())
}

/// `||γ_t||_0`: the largest Euclidean norm over the grid nodes.
pub fn sup_norm(p: &Path) -> f64 {
    p.values.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// `||γ_t - η_s||_0` after holding the shorter path's last value up to `t ∨ s`.
pub fn sup_distance(p: &Path, q: &Path) -> Result<f64, PathError> {
    check_grid(p, q)?;
    let n = p.t_index().max(q.t_index());
    Ok((0..=n).map(|j| (p.node_held(j) - q.node_held(j)).norm()).fold(0.0, f64::max))
}

/// Same as [`sup_distance`] but over nodes strictly before `t ∨ s`.
pub fn sup_distance_before_end(p: &Path, q: &Path) -> Result<f64, PathError> {
    check_grid(p, q)?;
    let n = p.t_index().max(q.t_index());
    Ok((0..n).map(|j| (p.node_held(j) - q.node_held(j)).norm()).fold(0.0, f64::max))
}

/// `d_∞(γ_t, η_s) = |t - s| + ||γ_{t,t∨s} - η_{s,t∨s}||_0`.
pub fn d_infty(p: &Path, q: &Path) -> Result<f64, PathError> {
    let gap = sup_distance(p, q)?;
    Ok((p.time() - q.time()).abs() + gap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(values: &[f64]) -> Path {
        Path::scalar(0.25, values).unwrap()
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(Path::zeros(3, 5, 0.1).unwrap().sup_norm(), 0.0);
        assert_eq!(scalar(&[2.0; 5]).sup_norm(), 2.0);
        assert_eq!(scalar(&[1.0, -3.0, 2.0]).sup_norm(), 3.0);
        let p = Path::new(0.1, DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 4.0, 1.0])).unwrap();
        assert_eq!(p.sup_norm(), 5.0);
    }

    #[test]
    fn d_infty_examples() {
        let p = scalar(&[1.0, -3.0, 2.0]);
        assert_eq!(d_infty(&p, &p).unwrap(), 0.0);
        // t = 1 vs t = 2 on a unit grid, both identically zero.
        let a = Path::scalar(1.0, &[0.0, 0.0]).unwrap();
        let b = Path::scalar(1.0, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(d_infty(&a, &b).unwrap(), 1.0);
        assert_eq!(d_infty(&b, &a).unwrap(), 1.0);
        let z = scalar(&[0.0; 5]);
        let two = scalar(&[2.0; 5]);
        assert_eq!(d_infty(&z, &two).unwrap(), 2.0);
    }

    #[test]
    fn d_infty_rejects_mismatch() {
        let p = Path::scalar(0.1, &[0.0]).unwrap();
        let q = Path::scalar(0.2, &[0.0]).unwrap();
        assert!(matches!(d_infty(&p, &q), Err(PathError::StepMismatch { .. })));
        let r = Path::zeros(2, 0, 0.1).unwrap();
        assert!(matches!(d_infty(&p, &r), Err(PathError::DimensionMismatch { .. })));
    }

    #[test]
    fn vertical_bump_examples() {
        let p = scalar(&[1.0, 2.0, 3.0]);
        assert_eq!(p.vertical_bump(&DVector::zeros(1)).unwrap(), p);
        let b = p.vertical_bump(&DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(b.values().as_slice(), &[1.0, 2.0, 4.0]);

        let q = Path::zeros(2, 3, 0.5).unwrap();
        let e0 = DVector::from_vec(vec![1.0, 0.0]);
        let e1 = DVector::from_vec(vec![0.0, 1.0]);
        let twice = q.vertical_bump(&e0).unwrap().vertical_bump(&e1).unwrap();
        assert_eq!(twice, q.vertical_bump(&(e0 + e1)).unwrap());
        assert!(q.vertical_bump(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn horizontal_extension_examples() {
        let p = scalar(&[1.0, 2.0, 5.0]);
        assert_eq!(p.horizontal_extension(2).unwrap(), p);
        let e = p.horizontal_extension(5).unwrap();
        assert_eq!(e.values().as_slice(), &[1.0, 2.0, 5.0, 5.0, 5.0, 5.0]);
        assert_eq!(e.restrict(2).unwrap(), p);
        assert!(p.horizontal_extension(1).is_err());
    }

    #[test]
    fn restrict_examples() {
        let p = scalar(&[1.0, -4.0, 2.0, 0.5]);
        assert_eq!(p.restrict(3).unwrap(), p);
        assert_eq!(p.restrict(0).unwrap().values().as_slice(), &[1.0]);
        assert!(p.restrict(1).unwrap().sup_norm() <= p.sup_norm());
        assert!(p.restrict(4).is_err());
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(Path::scalar(0.0, &[1.0]), Err(PathError::InvalidStep(_))));
        assert!(matches!(Path::scalar(0.1, &[1.0, f64::NAN]), Err(PathError::NonFinite { node: 1 })));
        assert!(Path::scalar(0.1, &[]).is_err());
    }

    #[test]
    fn sup_before_end_excludes_last_node() {
        let p = scalar(&[1.0, -2.0, 7.0]);
        assert_eq!(p.sup_norm_before_end(), 2.0);
        assert_eq!(scalar(&[7.0]).sup_norm_before_end(), 0.0);
    }
}
