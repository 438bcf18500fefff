//! Closed real intervals and n-rectangles.
//!
//! Enclosures follow the exact real-arithmetic formulas without directed
//! rounding; callers that need slack widen the result with
//! [`Interval::inflate`] or scale their α values.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, TAU};
use core::fmt;
use core::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::fmath;

/// A closed, bounded interval `[lo, hi]` with finite endpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_finite() && hi.is_finite() && lo <= hi {
            Ok(Self { lo, hi })
        } else {
            Err(Error::InvalidInterval { lo, hi })
        }
    }

    pub const fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    /// Builds from endpoints already known to be ordered.
    #[inline]
    pub(crate) fn raw(lo: f64, hi: f64) -> Self {
        debug_assert!(!(lo > hi), "unordered interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }
    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }
    #[inline]
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
    #[inline]
    pub fn mid(&self) -> f64 {
        (self.hi + self.lo) / 2.0
    }
    /// Largest absolute value attained.
    #[inline]
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
    #[inline]
    pub fn contains_zero(&self) -> bool {
        self.lo <= 0.0 && 0.0 <= self.hi
    }
    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::raw(self.lo.min(other.lo), self.hi.max(other.hi))
    }
    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Widens both endpoints by `factor` times their magnitude.
    pub fn inflate(&self, factor: f64) -> Interval {
        if factor == 0.0 {
            return *self;
        }
        Interval::raw(
            self.lo - factor * self.lo.abs().max(f64::MIN_POSITIVE),
            self.hi + factor * self.hi.abs().max(f64::MIN_POSITIVE),
        )
    }

    pub fn recip(&self) -> Result<Interval> {
        if self.contains_zero() {
            return Err(Error::DomainViolation(
                "division by an interval containing zero",
            ));
        }
        Ok(Interval::raw(1.0 / self.hi, 1.0 / self.lo))
    }

    pub fn div(&self, rhs: &Interval) -> Result<Interval> {
        Ok(*self * rhs.recip()?)
    }

    pub fn sqr(&self) -> Interval {
        self.powi(2)
    }

    pub fn powi(&self, n: i32) -> Interval {
        if n == 0 {
            return Interval::point(1.0);
        }
        if n < 0 {
            // Callers check for zero before taking negative powers.
            let p = self.powi(-n);
            return Interval::raw(1.0 / p.hi, 1.0 / p.lo);
        }
        let a = fmath::powi(self.lo, n);
        let b = fmath::powi(self.hi, n);
        if n % 2 == 1 || self.lo >= 0.0 {
            Interval::raw(a, b)
        } else if self.hi <= 0.0 {
            Interval::raw(b, a)
        } else {
            Interval::raw(0.0, a.max(b))
        }
    }

    /// `powi` with the domain check for negative exponents.
    pub fn checked_powi(&self, n: i32) -> Result<Interval> {
        if n < 0 && self.contains_zero() {
            return Err(Error::DomainViolation(
                "negative power of an interval containing zero",
            ));
        }
        Ok(self.powi(n))
    }

    pub fn exp(&self) -> Interval {
        Interval::raw(fmath::exp(self.lo), fmath::exp(self.hi))
    }

    pub fn ln(&self) -> Result<Interval> {
        if self.lo <= 0.0 {
            return Err(Error::DomainViolation("log of a non-positive interval"));
        }
        Ok(Interval::raw(fmath::ln(self.lo), fmath::ln(self.hi)))
    }

    pub fn sqrt(&self) -> Result<Interval> {
        if self.lo < 0.0 {
            return Err(Error::DomainViolation("sqrt of a negative interval"));
        }
        Ok(Interval::raw(fmath::sqrt(self.lo), fmath::sqrt(self.hi)))
    }

    pub fn abs(&self) -> Interval {
        if self.lo >= 0.0 {
            *self
        } else if self.hi <= 0.0 {
            -*self
        } else {
            Interval::raw(0.0, self.mag())
        }
    }

    pub fn sin(&self) -> Interval {
        // sin peaks at π/2 + 2kπ and bottoms at -π/2 + 2kπ.
        self.periodic_hull(fmath::sin, FRAC_PI_2, -FRAC_PI_2)
    }

    pub fn cos(&self) -> Interval {
        self.periodic_hull(fmath::cos, 0.0, PI)
    }

    fn periodic_hull(&self, f: fn(f64) -> f64, peak: f64, trough: f64) -> Interval {
        if self.width() >= TAU {
            return Interval::raw(-1.0, 1.0);
        }
        let a = f(self.lo);
        let b = f(self.hi);
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        if contains_periodic(self, peak) {
            hi = 1.0;
        }
        if contains_periodic(self, trough) {
            lo = -1.0;
        }
        Interval::raw(lo, hi)
    }

    pub fn tan(&self) -> Result<Interval> {
        // Poles at π/2 + kπ.
        let k = fmath::ceil((self.lo - FRAC_PI_2) / PI);
        let pole = FRAC_PI_2 + k * PI;
        if pole <= self.hi {
            return Err(Error::DomainViolation(
                "tan over an interval containing a pole",
            ));
        }
        Ok(Interval::raw(fmath::tan(self.lo), fmath::tan(self.hi)))
    }
}

/// Whether `iv` contains some `phase + 2kπ`.
fn contains_periodic(iv: &Interval, phase: f64) -> bool {
    let k = fmath::ceil((iv.lo - phase) / TAU);
    phase + k * TAU <= iv.hi
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval::raw(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval::raw(self.lo - rhs.hi, self.hi - rhs.lo)
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        if self.lo == self.hi && rhs.lo == rhs.hi {
            return Interval::point(self.lo * rhs.lo);
        }
        let p = [
            self.lo * rhs.lo,
            self.lo * rhs.hi,
            self.hi * rhs.lo,
            self.hi * rhs.hi,
        ];
        let mut lo = p[0];
        let mut hi = p[0];
        for &v in &p[1..] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Interval::raw(lo, hi)
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval::raw(-self.hi, -self.lo)
    }
}

/// An n-rectangle `[lo_1, hi_1] × … × [lo_n, hi_n]`, `n ≥ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxN {
    dims: Vec<Interval>,
}

impl BoxN {
    pub fn new(dims: Vec<Interval>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        Ok(Self { dims })
    }

    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        let dims = lo
            .iter()
            .zip(hi)
            .map(|(&l, &h)| Interval::new(l, h))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims)
    }

    pub fn point(x: &[f64]) -> Result<Self> {
        Self::new(x.iter().map(|&v| Interval::point(v)).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dims.len()
    }
    #[inline]
    pub fn dims(&self) -> &[Interval] {
        &self.dims
    }
    #[inline]
    pub fn get(&self, i: usize) -> Interval {
        self.dims[i]
    }
    pub fn lo(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::lo).collect()
    }
    pub fn hi(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::hi).collect()
    }
    pub fn widths(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::width).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.dims.iter().map(Interval::mid).collect()
    }

    /// Squared diagonal length `Σ (hi_i - lo_i)²`.
    pub fn diagonal_sq(&self) -> f64 {
        self.dims.iter().map(|d| d.width() * d.width()).sum()
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().map(Interval::width).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.dims.iter().zip(x).all(|(d, &v)| d.contains(v))
    }

    pub fn is_subset_of(&self, other: &BoxN) -> bool {
        self.dim() == other.dim()
            && self
                .dims
                .iter()
                .zip(&other.dims)
                .all(|(a, b)| a.is_subset_of(b))
    }

    /// Clamps `x` into the box, componentwise.
    pub fn clamp(&self, x: &mut [f64]) {
        for (v, d) in x.iter_mut().zip(&self.dims) {
            *v = v.clamp(d.lo(), d.hi());
        }
    }

    /// Splits dimension `j` at `at`, which must lie inside it.
    pub fn split_at(&self, j: usize, at: f64) -> (BoxN, BoxN) {
        let d = self.dims[j];
        let mut left = self.clone();
        let mut right = self.clone();
        left.dims[j] = Interval::raw(d.lo(), at);
        right.dims[j] = Interval::raw(at, d.hi());
        (left, right)
    }

    /// Dimension with the largest width relative to `root`; lowest index wins ties.
    ///
    /// Root dimensions of zero width never get selected.
    pub fn scaled_longest_side(&self, root: &BoxN) -> Result<usize> {
        if root.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: root.dim(),
                found: self.dim(),
            });
        }
        let mut best: Option<(usize, f64)> = None;
        for (j, (d, r)) in self.dims.iter().zip(&root.dims).enumerate() {
            let rw = r.width();
            if rw <= 0.0 || d.width() <= 0.0 {
                continue;
            }
            let rel = d.width() / rw;
            if best.is_none_or(|(_, b)| rel > b) {
                best = Some((j, rel));
            }
        }
        best.map(|(j, _)| j).ok_or(Error::DegenerateBox)
    }

    /// Bisects along the scaled longest side (widths relative to `root`).
    pub fn bisect_scaled_longest_side(&self, root: &BoxN) -> Result<(BoxN, BoxN)> {
        let j = self.scaled_longest_side(root)?;
        let d = self.dims[j];
        let mid = d.mid();
        if !(d.lo() < mid && mid < d.hi()) {
            // Width below floating-point resolution.
            return Err(Error::DegenerateBox);
        }
        Ok(self.split_at(j, mid))
    }
}

impl fmt::Display for BoxN {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str(" × ")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}
