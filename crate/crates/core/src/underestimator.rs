//! Quadratic-perturbation convex underestimators with scaled Gerschgorin α.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::expr::{Func, IntervalJet, PointJet};
use crate::interval::{BoxN, Interval};
use crate::linalg::{self, Mat};

/// Nonnegative per-dimension shifts, tied to the box they were computed on.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaVector {
    alphas: Vec<f64>,
    bx: BoxN,
    /// Gerschgorin scaling vector `d`.
    scale: Vec<f64>,
}

impl AlphaVector {
    /// Wraps manually chosen shifts. Fails on negative or non-finite entries.
    pub fn new(alphas: Vec<f64>, bx: BoxN) -> Result<Self> {
        if alphas.len() != bx.dim() {
            return Err(Error::DimensionMismatch {
                expected: bx.dim(),
                found: alphas.len(),
            });
        }
        if alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::Precondition(
                "alpha entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            alphas,
            scale: bx.widths(),
            bx,
        })
    }

    pub fn zeros(bx: &BoxN) -> Self {
        Self {
            alphas: alloc::vec![0.0; bx.dim()],
            bx: bx.clone(),
            scale: bx.widths(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.alphas
    }

    pub fn bx(&self) -> &BoxN {
        &self.bx
    }

    pub fn max(&self) -> f64 {
        self.alphas.iter().copied().fold(0.0, f64::max)
    }
}

/// Scaled Gerschgorin shifts from an interval Hessian over `bx`, with the
/// scaling vector `d` (usually the box widths).
pub fn alpha_from_hessian(h: &Mat<Interval>, bx: &BoxN, d: &[f64], safety: f64) -> AlphaVector {
    let alphas = (0..bx.dim())
        .map(|i| {
            let off = off_diagonal_bound(h, d, i);
            safety * (-0.5 * (h[(i, i)].lo() - off)).max(0.0)
        })
        .collect();
    AlphaVector {
        alphas,
        bx: bx.clone(),
        scale: d.to_vec(),
    }
}

/// `Σ_{j≠i} max(|H̲_ij|, |H̄_ij|) d_j / d_i`, with the ratio 1 when `d_i = 0`.
fn off_diagonal_bound(h: &Mat<Interval>, d: &[f64], i: usize) -> f64 {
    (0..d.len())
        .filter(|&j| j != i)
        .map(|j| {
            let ratio = if d[i] > 0.0 { d[j] / d[i] } else { 1.0 };
            h[(i, j)].mag() * ratio
        })
        .sum()
}

/// Computes α for `f` over `bx` scaled by the box's own widths; also returns
/// the interval jet it was based on.
pub fn compute_alpha(f: &Func, bx: &BoxN, safety: f64) -> Result<(AlphaVector, IntervalJet)> {
    compute_alpha_scaled(f, bx, &bx.widths(), safety)
}

/// As [`compute_alpha`] with an explicit scaling vector.
///
/// Branch-and-bound loops pass the root box widths: with a fixed `d` the
/// shifts can only shrink on sub-boxes, which the per-box widths do not
/// guarantee once a box stops being similar to its parent.
pub fn compute_alpha_scaled(
    f: &Func,
    bx: &BoxN,
    d: &[f64],
    safety: f64,
) -> Result<(AlphaVector, IntervalJet)> {
    if !(safety >= 1.0) {
        return Err(Error::InvalidConfig(
            "alpha safety multiplier must be at least 1".into(),
        ));
    }
    if d.len() != bx.dim() || d.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Precondition(
            "scaling vector must be nonnegative with one entry per dimension".into(),
        ));
    }
    let jet = f.interval_jet(bx)?;
    Ok((alpha_from_hessian(&jet.hess, bx, d, safety), jet))
}

/// Smallest scaled Gerschgorin row lower bound of the perturbed interval
/// Hessian `H + 2 diag(α)`; nonnegative means the underestimator is convex.
pub fn convexity_margin(h: &Mat<Interval>, alpha: &AlphaVector) -> f64 {
    let d = &alpha.scale;
    (0..d.len())
        .map(|i| h[(i, i)].lo() + 2.0 * alpha.alphas[i] - off_diagonal_bound(h, d, i))
        .fold(f64::INFINITY, f64::min)
}

/// True when every matrix in the interval Hessian is positive definite:
/// the midpoint minus the spectral bound of the radius matrix passes a
/// strict Cholesky factorization. Catches convex functions whose Hessian is
/// not diagonally dominant, where the Gerschgorin shifts stay positive.
pub fn hessian_certified_convex(h: &Mat<Interval>) -> bool {
    let n = h.n();
    let mut mid = Mat::zeros(n);
    let mut radius: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            let e = h[(i, j)];
            if !e.is_finite() {
                return false;
            }
            mid[(i, j)] = e.mid();
            row += e.width() / 2.0;
            scale = scale.max(e.mag());
        }
        radius = radius.max(row);
    }
    // rounding headroom for the midpoint computation and the factorization
    let shift = radius + 1e-10 * scale.max(1.0);
    for i in 0..n {
        mid[(i, i)] -= shift;
    }
    linalg::is_positive_definite(&mid)
}

/// `¼ Σ α_i (hi_i − lo_i)²`, the gap at the box center.
pub fn max_separation(alpha: &AlphaVector) -> f64 {
    alpha
        .alphas
        .iter()
        .zip(alpha.bx.dims())
        .map(|(a, d)| a * d.width() * d.width())
        .sum::<f64>()
        / 4.0
}

/// `F̆(x) = F(x) + Σ α_i (lo_i − x_i)(hi_i − x_i)`.
#[derive(Clone, Debug)]
pub struct Underestimator {
    base: Func,
    alpha: AlphaVector,
}

impl Underestimator {
    pub fn new(base: Func, alpha: AlphaVector) -> Result<Self> {
        if base.dim() != alpha.bx.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                found: alpha.bx.dim(),
            });
        }
        Ok(Self { base, alpha })
    }

    pub fn base(&self) -> &Func {
        &self.base
    }

    pub fn alpha(&self) -> &AlphaVector {
        &self.alpha
    }

    pub fn bx(&self) -> &BoxN {
        &self.alpha.bx
    }

    fn perturbation(&self, x: &[f64]) -> f64 {
        self.alpha
            .alphas
            .iter()
            .zip(self.alpha.bx.dims())
            .zip(x)
            .map(|((a, d), xi)| a * (d.lo() - xi) * (d.hi() - xi))
            .sum()
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.base.value(x)? + self.perturbation(x))
    }

    pub fn jet(&self, x: &[f64]) -> Result<PointJet> {
        let mut j = self.base.jet(x)?;
        j.value += self.perturbation(x);
        for (i, (a, d)) in self
            .alpha
            .alphas
            .iter()
            .zip(self.alpha.bx.dims())
            .enumerate()
        {
            j.grad[i] += a * (2.0 * x[i] - d.lo() - d.hi());
            j.hess[(i, i)] += 2.0 * a;
        }
        Ok(j)
    }
}
