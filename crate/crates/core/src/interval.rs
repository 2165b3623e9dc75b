//! Scalar intervals and axis-aligned boxes.
//!
//! The scalar [`Interval`] carries just enough arithmetic for the conservative
//! remainder terms of the verifier (sums, products, `sin`, `cos`). Rounding is
//! not directed; consumers that need a margin add it explicitly.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Add, Mul, Sub};

use ndarray::Array1;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan(), "{lo} > {hi}");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Largest absolute value in the interval.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn hull(&self, other: Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    pub fn scale(&self, s: f64) -> Interval {
        if s >= 0.0 {
            Interval::new(self.lo * s, self.hi * s)
        } else {
            Interval::new(self.hi * s, self.lo * s)
        }
    }

    pub fn sin(&self) -> Interval {
        // sin(x) = cos(x - pi/2)
        (*self - Interval::point(FRAC_PI_2)).cos()
    }

    pub fn cos(&self) -> Interval {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.width() >= TAU {
            return Interval::new(-1.0, 1.0);
        }
        let (a, b) = (self.lo.cos(), self.hi.cos());
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        // maxima of cos at 2k*pi, minima at (2k+1)*pi
        let k_first = (self.lo / PI).ceil() as i64;
        let k_last = (self.hi / PI).floor() as i64;
        for k in k_first..=k_last {
            if k.rem_euclid(2) == 0 {
                hi = 1.0;
            } else {
                lo = -1.0;
            }
        }
        Interval::new(lo, hi)
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval::new(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval::new(self.lo - rhs.hi, self.hi - rhs.lo)
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let p = [
            self.lo * rhs.lo,
            self.lo * rhs.hi,
            self.hi * rhs.lo,
            self.hi * rhs.hi,
        ];
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo, hi)
    }
}

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox {
    lower: Array1<f64>,
    upper: Array1<f64>,
}

impl IntervalBox {
    pub fn new(lower: Array1<f64>, upper: Array1<f64>) -> Result<Self> {
        check_dim("interval box bounds", lower.len(), upper.len())?;
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::InvalidConfig {
                key: format!("interval[{i}]"),
                reason: format!("lower {} exceeds upper {}", lower[i], upper[i]),
            });
        }
        Ok(Self { lower, upper })
    }

    pub fn from_vecs(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(lower), Array1::from(upper))
    }

    pub fn point(x: &Array1<f64>) -> Self {
        Self {
            lower: x.clone(),
            upper: x.clone(),
        }
    }

    /// Symmetric box `[-r, r]^dim`.
    pub fn symmetric(dim: usize, radius: f64) -> Self {
        Self {
            lower: Array1::from_elem(dim, -radius),
            upper: Array1::from_elem(dim, radius),
        }
    }

    pub(crate) fn from_parts_unchecked(lower: Array1<f64>, upper: Array1<f64>) -> Self {
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &Array1<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &Array1<f64> {
        &self.upper
    }

    pub fn get(&self, i: usize) -> Interval {
        Interval::new(self.lower[i], self.upper[i])
    }

    pub fn widths(&self) -> Array1<f64> {
        &self.upper - &self.lower
    }

    pub fn center(&self) -> Array1<f64> {
        (&self.upper + &self.lower) * 0.5
    }

    pub fn radius(&self) -> Array1<f64> {
        (&self.upper - &self.lower) * 0.5
    }

    /// Membership with an absolute slack `tol` on every face.
    pub fn contains(&self, x: &Array1<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol)
    }

    /// Whether `self` contains all of `other` (with slack `tol`).
    pub fn encloses(&self, other: &IntervalBox, tol: f64) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] <= other.lower[i] + tol && other.upper[i] <= self.upper[i] + tol)
    }

    /// Closed-set intersection test: touching faces count as intersecting.
    pub fn intersects(&self, other: &IntervalBox) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|i| self.lower[i] <= other.upper[i] && other.lower[i] <= self.upper[i])
    }

    /// Coordinates `dims` of the box.
    pub fn project(&self, dims: &[usize]) -> IntervalBox {
        IntervalBox {
            lower: dims.iter().map(|&d| self.lower[d]).collect(),
            upper: dims.iter().map(|&d| self.upper[d]).collect(),
        }
    }

    /// Uniform sample from the box.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        (0..self.dim())
            .map(|i| {
                let (l, u) = (self.lower[i], self.upper[i]);
                if u > l {
                    rng.random_range(l..=u)
                } else {
                    l
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn product_signs() {
        let a = Interval::new(-1.0, 2.0);
        let b = Interval::new(-3.0, 0.5);
        assert_eq!(a * b, Interval::new(-6.0, 3.0));
    }

    #[test]
    fn cos_over_extremum() {
        let c = Interval::new(-0.5, 0.5).cos();
        assert_eq!(c.hi, 1.0);
        assert!((c.lo - 0.5f64.cos()).abs() < 1e-15);
        let c = Interval::new(3.0, 3.5).cos();
        assert_eq!(c.lo, -1.0);
    }

    #[test]
    fn box_rejects_inverted_bounds() {
        assert!(IntervalBox::from_vecs(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn touching_boxes_intersect() {
        let a = IntervalBox::from_vecs(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let b = IntervalBox::from_vecs(vec![1.0, 0.5], vec![2.0, 2.0]).unwrap();
        assert!(a.intersects(&b));
        let c = IntervalBox::from_vecs(vec![1.0 + 1e-12, 0.5], vec![2.0, 2.0]).unwrap();
        assert!(!a.intersects(&c));
    }

    proptest! {
        #[test]
        fn sin_cos_enclose_samples(lo in -10.0f64..10.0, w in 0.0f64..7.0, t in 0.0f64..1.0) {
            let iv = Interval::new(lo, lo + w);
            let x = lo + t * w;
            prop_assert!(iv.sin().contains(x.sin()) || (iv.sin().lo - x.sin()).abs() < 1e-12 || (iv.sin().hi - x.sin()).abs() < 1e-12);
            let c = iv.cos();
            prop_assert!(c.lo - 1e-12 <= x.cos() && x.cos() <= c.hi + 1e-12);
        }

        #[test]
        fn product_encloses(a in -5.0f64..5.0, wa in 0.0f64..3.0, b in -5.0f64..5.0, wb in 0.0f64..3.0, s in 0.0f64..1.0, t in 0.0f64..1.0) {
            let x = Interval::new(a, a + wa);
            let y = Interval::new(b, b + wb);
            let p = (a + s * wa) * (b + t * wb);
            let xy = x * y;
            prop_assert!(xy.lo - 1e-12 <= p && p <= xy.hi + 1e-12);
        }
    }
}
