//! Minimal forward-mode dual numbers carrying partials with respect to the
//! two schedule values a reverse step depends on.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub(crate) trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn sqrt(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Value plus partials with respect to (previous, current) alpha-bar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Dual2 {
    pub v: f64,
    pub dp: f64,
    pub dc: f64,
}

impl Dual2 {
    pub fn var_p(v: f64) -> Self {
        Dual2 { v, dp: 1.0, dc: 0.0 }
    }
    pub fn var_c(v: f64) -> Self {
        Dual2 { v, dp: 0.0, dc: 1.0 }
    }
}

impl Add for Dual2 {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual2 { v: self.v + o.v, dp: self.dp + o.dp, dc: self.dc + o.dc }
    }
}

impl Sub for Dual2 {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual2 { v: self.v - o.v, dp: self.dp - o.dp, dc: self.dc - o.dc }
    }
}

impl Mul for Dual2 {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual2 {
            v: self.v * o.v,
            dp: self.dp * o.v + self.v * o.dp,
            dc: self.dc * o.v + self.v * o.dc,
        }
    }
}

impl Div for Dual2 {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        Dual2 { v: q, dp: (self.dp - q * o.dp) / o.v, dc: (self.dc - q * o.dc) / o.v }
    }
}

impl Neg for Dual2 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual2 { v: -self.v, dp: -self.dp, dc: -self.dc }
    }
}

impl Real for Dual2 {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual2 { v, dp: 0.0, dc: 0.0 }
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        let h = 0.5 / r;
        Dual2 { v: r, dp: self.dp * h, dc: self.dc * h }
    }
}
