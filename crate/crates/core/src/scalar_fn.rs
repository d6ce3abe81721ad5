//! Real functions of one real variable used as velocity and source laws.

use std::fmt;
use std::sync::Arc;

/// A closed-form scalar function, or an arbitrary callback.
#[derive(Clone)]
pub enum ScalarFn {
    Constant(f64),
    /// `offset + slope * r`
    Affine { offset: f64, slope: f64 },
    /// `amplitude * tanh(rate * r)`
    Tanh { amplitude: f64, rate: f64 },
    /// `coef * |r|^exponent`
    Power { coef: f64, exponent: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ScalarFn {
    pub fn identity() -> Self {
        Self::Affine { offset: 0.0, slope: 1.0 }
    }

    pub fn custom<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Affine { offset, slope } => offset + slope * r,
            Self::Tanh { amplitude, rate } => amplitude * (rate * r).tanh(),
            Self::Power { coef, exponent } => coef * r.abs().powf(*exponent),
            Self::Custom(f) => f(r),
        }
    }

    /// Largest `|f|` over `samples` equispaced points of `[lo, hi]`.
    pub fn sup_abs_on(&self, lo: f64, hi: f64, samples: usize) -> f64 {
        sample_range(lo, hi, samples).map(|r| self.eval(r).abs()).fold(0.0, f64::max)
    }

    /// Largest difference quotient over `samples` equispaced points of `[lo, hi]`.
    pub fn lipschitz_on(&self, lo: f64, hi: f64, samples: usize) -> f64 {
        let pts: Vec<f64> = sample_range(lo, hi, samples).collect();
        pts.windows(2)
            .map(|w| ((self.eval(w[1]) - self.eval(w[0])) / (w[1] - w[0])).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn sample_range(lo: f64, hi: f64, samples: usize) -> impl Iterator<Item = f64> {
    let n = samples.max(2);
    (0..n).map(move |k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Affine { offset, slope } => write!(f, "Affine({offset} + {slope} r)"),
            Self::Tanh { amplitude, rate } => write!(f, "Tanh({amplitude} tanh({rate} r))"),
            Self::Power { coef, exponent } => write!(f, "Power({coef} |r|^{exponent})"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(ScalarFn::Constant(2.0).eval(5.0), 2.0);
        assert_eq!(ScalarFn::identity().eval(-3.5), -3.5);
        assert_eq!(ScalarFn::Affine { offset: 0.25, slope: -1.0 }.eval(0.25), 0.0);
        assert_eq!(ScalarFn::Power { coef: 2.0, exponent: 0.5 }.eval(4.0), 4.0);
        assert!((ScalarFn::Tanh { amplitude: 2.0, rate: 1.0 }.eval(100.0) - 2.0).abs() < 1e-12);
        assert_eq!(ScalarFn::custom(|r| r * r).eval(3.0), 9.0);
    }

    #[test]
    fn sampled_bounds() {
        let f = ScalarFn::Affine { offset: 1.0, slope: -2.0 };
        assert!((f.sup_abs_on(0.0, 2.0, 11) - 3.0).abs() < 1e-12);
        assert!((f.lipschitz_on(-1.0, 1.0, 11) - 2.0).abs() < 1e-12);
    }
}
