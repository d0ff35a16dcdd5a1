//! Scalar functions of position used as sources and targets, and the
//! manufactured test problem.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::geometry::Point;

type ValueFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// A differentiable function of position with an optional analytic gradient.
#[derive(Clone)]
pub struct SmoothFn {
    value: ValueFn,
    gradient: Option<GradFn>,
}

impl fmt::Debug for SmoothFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFn")
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl SmoothFn {
    pub fn new(value: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            gradient: None,
        }
    }

    pub fn with_gradient(
        value: impl Fn(Point) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Point) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            gradient: Some(Arc::new(gradient)),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::with_gradient(move |_| c, |_| [0.0, 0.0])
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn eval(&self, x: Point) -> f64 {
        (self.value)(x)
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// Analytic gradient when available, else central differences with step `fd_step`.
    pub fn grad(&self, x: Point, fd_step: f64) -> [f64; 2] {
        match &self.gradient {
            Some(g) => g(x),
            None => {
                let h = fd_step;
                [
                    (self.eval([x[0] + h, x[1]]) - self.eval([x[0] - h, x[1]])) / (2.0 * h),
                    (self.eval([x[0], x[1] + h]) - self.eval([x[0], x[1] - h])) / (2.0 * h),
                ]
            }
        }
    }
}

/// `sin(pi x1) sin(pi x2)`: the target state, and the exact solution of the
/// manufactured problem on the unit square.
pub fn sine_bump() -> SmoothFn {
    SmoothFn::with_gradient(
        |x| (PI * x[0]).sin() * (PI * x[1]).sin(),
        |x| {
            [
                PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
                PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
            ]
        },
    )
}

/// `(2 pi^2 + 1) sin(pi x1) sin(pi x2)`, the source whose solution on the
/// unit square is [`sine_bump`].
pub fn sine_bump_source() -> SmoothFn {
    let c = 2.0 * PI * PI + 1.0;
    let bump = sine_bump();
    let grad = bump.clone();
    SmoothFn::with_gradient(
        move |x| c * bump.eval(x),
        move |x| {
            let g = grad.grad(x, 0.0);
            [c * g[0], c * g[1]]
        },
    )
}

/// Looks up a named function: `sine_bump`, `sine_bump_source` or `zero`.
pub fn by_name(name: &str) -> Option<SmoothFn> {
    match name {
        "sine_bump" => Some(sine_bump()),
        "sine_bump_source" => Some(sine_bump_source()),
        "zero" => Some(SmoothFn::zero()),
        _ => None,
    }
}

pub const FUNCTION_NAMES: [&str; 3] = ["sine_bump", "sine_bump_source", "zero"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_fallback_matches_analytic_gradient() {
        let f = sine_bump();
        let g = SmoothFn::new(|x| (PI * x[0]).sin() * (PI * x[1]).sin());
        for x in [[0.1, 0.3], [0.7, 0.2], [1.3, -0.4]] {
            let (a, b) = (f.grad(x, 1e-5), g.grad(x, 1e-5));
            assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn source_is_scaled_target() {
        let (f, u) = (sine_bump_source(), sine_bump());
        let x = [0.3, 0.8];
        assert!((f.eval(x) - (2.0 * PI * PI + 1.0) * u.eval(x)).abs() < 1e-13);
    }
}
