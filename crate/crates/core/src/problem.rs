//! The composite objective `F = h + f` and its oracles.

use crate::error::{GoaError, Result};
use crate::vecops;

/// The convex part `h` of a composite objective.
pub trait ConvexPart: Send + Sync {
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64]) -> Vec<f64>;

    /// `prox_{eta h}(v) = argmin_w ½‖w − v‖² + eta·h(w)`, when available in closed form.
    fn prox(&self, _v: &[f64], _eta: f64) -> Option<Vec<f64>> {
        None
    }

    /// Strong-convexity modulus.
    fn modulus(&self) -> f64;
}

/// The smooth nonconvex part `f`, optionally a finite sum `f = (1/n) Σ f_i`.
pub trait NonconvexPart: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    fn gradient(&self, w: &[f64]) -> Vec<f64>;

    /// Number of components `n`. A part without a finite-sum structure has one.
    fn components(&self) -> usize {
        1
    }

    /// Gradient of component `i`; the single component of a plain part is `f` itself.
    fn component_gradient(&self, _i: usize, w: &[f64]) -> Vec<f64> {
        self.gradient(w)
    }

    /// Lipschitz constant of the gradient.
    fn smoothness(&self) -> f64;
}

/// `h(w) = (λ/2)‖w‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredNorm {
    pub lambda: f64,
}

impl SquaredNorm {
    pub fn new(lambda: f64) -> Self {
        SquaredNorm { lambda }
    }
}

impl ConvexPart for SquaredNorm {
    fn value(&self, w: &[f64]) -> f64 {
        0.5 * self.lambda * vecops::norm_sq(w)
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        vecops::scale(w, self.lambda)
    }

    fn prox(&self, v: &[f64], eta: f64) -> Option<Vec<f64>> {
        let denom = 1.0 + self.lambda * eta;
        Some(v.iter().map(|x| x / denom).collect())
    }

    fn modulus(&self) -> f64 {
        self.lambda
    }
}

/// `f ≡ 0` in `d` dimensions.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPart {
    pub dim: usize,
}

impl NonconvexPart for ZeroPart {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _w: &[f64]) -> f64 {
        0.0
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        vec![0.0; w.len()]
    }

    // any positive constant bounds a zero gradient
    fn smoothness(&self) -> f64 {
        1.0
    }
}

/// `f(w) = (a/2)‖w − c‖²`; convex, but useful where closed forms are needed.
#[derive(Debug, Clone)]
pub struct QuadraticPart {
    pub center: Vec<f64>,
    pub curvature: f64,
}

impl NonconvexPart for QuadraticPart {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let d = vecops::dist(w, &self.center);
        0.5 * self.curvature * d * d
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        vecops::sub(w, &self.center)
            .into_iter()
            .map(|x| self.curvature * x)
            .collect()
    }

    fn smoothness(&self) -> f64 {
        self.curvature.abs()
    }
}

/// A known global minimizer, used by tests and success counting.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownOptimum {
    pub point: Vec<f64>,
    pub value: f64,
}

pub struct CompositeProblem {
    pub name: String,
    pub h: Box<dyn ConvexPart>,
    pub f: Box<dyn NonconvexPart>,
    pub optimum: Option<KnownOptimum>,
}

impl std::fmt::Debug for CompositeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompositeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("components", &self.f.components())
            .field("optimum", &self.optimum)
            .finish()
    }
}

impl CompositeProblem {
    pub fn new(
        name: impl Into<String>,
        h: impl ConvexPart + 'static,
        f: impl NonconvexPart + 'static,
    ) -> Self {
        CompositeProblem {
            name: name.into(),
            h: Box::new(h),
            f: Box::new(f),
            optimum: None,
        }
    }

    pub fn with_optimum(mut self, point: Vec<f64>, value: f64) -> Self {
        self.optimum = Some(KnownOptimum { point, value });
        self
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn check_point(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(GoaError::usage(format!(
                "point has dimension {}, problem `{}` expects {}",
                w.len(),
                self.name,
                self.dim()
            )));
        }
        if !vecops::all_finite(w) {
            return Err(GoaError::usage("point has non-finite coordinates"));
        }
        Ok(())
    }

    /// `F(w) = h(w) + f(w)`.
    pub fn evaluate(&self, w: &[f64]) -> Result<f64> {
        self.check_point(w)?;
        Ok(self.value(w))
    }

    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_point(w)?;
        Ok(self.grad(w))
    }

    // Unchecked variants for inner loops that already validated their inputs.

    #[inline]
    pub(crate) fn value(&self, w: &[f64]) -> f64 {
        self.h.value(w) + self.f.value(w)
    }

    pub(crate) fn grad(&self, w: &[f64]) -> Vec<f64> {
        let mut g = self.h.gradient(w);
        vecops::axpy(&mut g, 1.0, &self.f.gradient(w));
        g
    }

    /// Lipschitz constant of `∇f`.
    pub fn smoothness(&self) -> f64 {
        self.f.smoothness()
    }

    /// Strong-convexity modulus of `h`.
    pub fn modulus(&self) -> f64 {
        self.h.modulus()
    }

    pub fn is_finite_sum(&self) -> bool {
        self.f.components() > 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(lambda: f64, dim: usize) -> CompositeProblem {
        CompositeProblem::new("quad", SquaredNorm::new(lambda), ZeroPart { dim })
    }

    #[test]
    fn quadratic_value() {
        let p = quad(2.0, 2);
        assert_eq!(p.evaluate(&[1.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn quadratic_gradient() {
        let p = quad(1.0, 2);
        assert_eq!(p.gradient(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let p = quad(1.0, 2);
        assert!(matches!(p.evaluate(&[1.0]), Err(GoaError::Usage(_))));
        assert!(matches!(p.gradient(&[1.0, 2.0, 3.0]), Err(GoaError::Usage(_))));
        assert!(matches!(p.evaluate(&[f64::NAN, 0.0]), Err(GoaError::Usage(_))));
    }

    #[test]
    fn prox_of_squared_norm() {
        let h = SquaredNorm::new(1.0);
        assert_eq!(h.prox(&[3.0, 0.0], 0.5).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn strong_convexity_inequality_holds_for_squared_norm() {
        let h = SquaredNorm::new(0.7);
        let pairs = [([1.0, -2.0], [0.3, 4.0]), ([0.0, 0.0], [5.0, 5.0])];
        for (a, b) in pairs {
            let lhs = h.value(&b) - h.value(&a);
            let d = vecops::sub(&b, &a);
            let rhs = vecops::dot(&h.gradient(&a), &d) + 0.5 * h.modulus() * vecops::norm_sq(&d);
            assert!(lhs >= rhs - 1e-12);
        }
    }
}
