//! Double-double accumulation for running mass totals.
//!
//! A `TwoFloat` stores a value as an unevaluated sum `hi + lo` of two doubles,
//! giving roughly 32 significant decimal digits. Mass aggregates see millions
//! of includes and excludes; plain f64 summation drifts far past the 1e-9
//! consistency bound we hold aggregates to, while double-double keeps the
//! running total bit-stable against reordering for all practical inputs.

/// Unevaluated sum of two doubles, |lo| <= ulp(hi)/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoFloat {
    hi: f64,
    lo: f64,
}

/// Error-free transformation: a + b = s + e exactly.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// two_sum specialized for |a| >= |b|.
#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let e = b - (s - a);
    (s, e)
}

impl TwoFloat {
    pub const ZERO: TwoFloat = TwoFloat { hi: 0.0, lo: 0.0 };

    #[inline]
    pub fn from_f64(v: f64) -> Self {
        TwoFloat { hi: v, lo: 0.0 }
    }

    /// Nearest double to the represented value.
    #[inline]
    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn add_f64(&mut self, v: f64) {
        let (s1, e1) = two_sum(self.hi, v);
        let lo = self.lo + e1;
        let (hi, lo) = quick_two_sum(s1, lo);
        self.hi = hi;
        self.lo = lo;
    }

    #[inline]
    pub fn sub_f64(&mut self, v: f64) {
        self.add_f64(-v);
    }

    pub fn add(&mut self, other: TwoFloat) {
        let (s1, e1) = two_sum(self.hi, other.hi);
        let e = e1 + self.lo + other.lo;
        let (hi, lo) = quick_two_sum(s1, e);
        self.hi = hi;
        self.lo = lo;
    }

    #[inline]
    pub fn is_negative(&self) -> bool {
        self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0)
    }

    /// Natural log of the represented (positive) value.
    pub fn ln(&self) -> f64 {
        if self.hi <= 0.0 {
            return f64::NEG_INFINITY;
        }
        // ln(hi + lo) = ln(hi) + ln(1 + lo/hi); the correction is tiny.
        self.hi.ln() + (self.lo / self.hi).ln_1p()
    }
}

impl Default for TwoFloat {
    fn default() -> Self {
        TwoFloat::ZERO
    }
}

/// Sum a stream of doubles in extended precision.
pub fn dd_sum<I: IntoIterator<Item = f64>>(values: I) -> TwoFloat {
    let mut acc = TwoFloat::ZERO;
    for v in values {
        acc.add_f64(v);
    }
    acc
}
