//! Poincaré-ball operations with explicit curvature.
//!
//! The ball of curvature `-c` (c > 0) is `B_c^d = {x ∈ R^d : ‖x‖² < 1/c}`.
//! Points move between the ball and the tangent space at the origin via
//!
//! ```text
//! exp_0^c(v) = tanh(√c ‖v‖) · v / (√c ‖v‖)
//! log_0^c(u) = arctanh(√c ‖u‖) · u / (√c ‖u‖)
//! ```
//!
//! and distances are geodesic:
//!
//! ```text
//! d^c(x, y) = (2/√c) · arctanh(√c ‖(-x) ⊕_c y‖)
//! ```
//!
//! with `⊕_c` the Möbius addition. Every point this module produces is
//! projected to norm at most `(1 - BALL_EPS)/√c`, and arctanh arguments are
//! clamped below 1, so all operations stay finite in double precision even
//! for adversarial near-boundary inputs.

use crate::error::{EthError, Result};

/// Interior margin: library-produced points keep `√c ‖x‖ ≤ 1 - BALL_EPS`.
///
/// Small enough that `exp_0` stays invertible (within 1e-6 relative) for
/// tangent norms up to `√c ‖v‖ ≈ 8.4`, large enough to keep `arctanh`
/// comfortably finite.
pub const BALL_EPS: f64 = 1e-7;

/// Arguments to `arctanh` are clamped to `1 - ATANH_EPS`.
pub const ATANH_EPS: f64 = 1e-10;

/// Below this norm, `exp_0`/`log_0` use their analytic limit (identity)
/// instead of dividing by the norm.
pub const SMALL_NORM_EPS: f64 = 1e-12;

/// Negative-curvature magnitude of a Poincaré ball (the manifold has
/// curvature `-c`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature(f64);

impl Curvature {
    /// Requires `c > 0` and finite.
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(EthError::invalid(format!(
                "curvature must be a finite positive real, got {c}"
            )));
        }
        Ok(Curvature(c))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }
}

/// A point of the Poincaré ball, tagged with the curvature of the ball it
/// lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincarePoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl PoincarePoint {
    /// Validates ball containment: `‖coords‖² < 1/c`.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(EthError::invalid("point coordinates must be finite"));
        }
        let sq = sq_norm(&coords);
        if sq >= 1.0 / curvature.get() {
            return Err(EthError::invalid(format!(
                "point with ‖x‖² = {sq} is outside the ball of curvature {}",
                curvature.get()
            )));
        }
        Ok(PoincarePoint { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        PoincarePoint {
            coords: vec![0.0; dim],
            curvature,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A vector of the tangent space at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    coords: Vec<f64>,
}

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(EthError::invalid(
                "tangent vector coordinates must be finite",
            ));
        }
        Ok(TangentVector { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Rescale `coords` so that `√c ‖x‖ ≤ 1 - BALL_EPS`, leaving interior
/// points untouched.
pub fn project_to_ball(coords: Vec<f64>, curvature: Curvature) -> PoincarePoint {
    let max_norm = (1.0 - BALL_EPS) / curvature.sqrt();
    let norm = sq_norm(&coords).sqrt();
    let coords = if norm >= max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        coords.into_iter().map(|x| x * scale).collect()
    } else {
        coords
    };
    PoincarePoint { coords, curvature }
}

/// Exponential map at the origin: `tanh(√c ‖v‖) · v / (√c ‖v‖)`.
///
/// Norms below [`SMALL_NORM_EPS`] short-circuit to the analytic limit `v`.
pub fn exp_map_zero(v: &TangentVector, curvature: Curvature) -> Result<PoincarePoint> {
    if v.coords.iter().any(|x| !x.is_finite()) {
        return Err(EthError::invalid("exp_map_zero: non-finite input"));
    }
    let norm = sq_norm(&v.coords).sqrt();
    if norm < SMALL_NORM_EPS {
        return Ok(project_to_ball(v.coords.clone(), curvature));
    }
    let arg = curvature.sqrt() * norm;
    let scale = arg.tanh() / arg;
    let coords = v.coords.iter().map(|x| x * scale).collect();
    Ok(project_to_ball(coords, curvature))
}

/// Logarithmic map at the origin: `arctanh(√c ‖u‖) · u / (√c ‖u‖)`.
pub fn log_map_zero(u: &PoincarePoint) -> Result<TangentVector> {
    let c = u.curvature;
    let norm = sq_norm(&u.coords).sqrt();
    let arg = c.sqrt() * norm;
    if arg >= 1.0 {
        // Unreachable for points built through this module; guards
        // hand-assembled values.
        return Err(EthError::invalid(format!(
            "log_map_zero: point with √c‖u‖ = {arg} is outside the ball"
        )));
    }
    if norm < SMALL_NORM_EPS {
        return Ok(TangentVector {
            coords: u.coords.clone(),
        });
    }
    let clamped = arg.min(1.0 - ATANH_EPS);
    let scale = clamped.atanh() / arg;
    Ok(TangentVector {
        coords: u.coords.iter().map(|x| x * scale).collect(),
    })
}

fn check_same_ball(x: &PoincarePoint, y: &PoincarePoint) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(EthError::invalid(format!(
            "dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    if x.curvature != y.curvature {
        return Err(EthError::invalid(format!(
            "curvature mismatch: {} vs {}",
            x.curvature.get(),
            y.curvature.get()
        )));
    }
    Ok(())
}

/// Möbius addition
///
/// ```text
///           (1 + 2c⟨x,y⟩ + c‖y‖²) x + (1 - c‖x‖²) y
/// x ⊕_c y = ------------------------------------------
///              1 + 2c⟨x,y⟩ + c²‖x‖²‖y‖²
/// ```
pub fn mobius_add(x: &PoincarePoint, y: &PoincarePoint) -> Result<PoincarePoint> {
    check_same_ball(x, y)?;
    let c = x.curvature.get();
    let x2 = sq_norm(&x.coords);
    let y2 = sq_norm(&y.coords);
    let xy = dot(&x.coords, &y.coords);
    let denom = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    let cx = 1.0 + 2.0 * c * xy + c * y2;
    let cy = 1.0 - c * x2;
    let coords = x
        .coords
        .iter()
        .zip(&y.coords)
        .map(|(a, b)| (cx * a + cy * b) / denom)
        .collect();
    Ok(project_to_ball(coords, x.curvature))
}

fn negate(x: &PoincarePoint) -> PoincarePoint {
    PoincarePoint {
        coords: x.coords.iter().map(|v| -v).collect(),
        curvature: x.curvature,
    }
}

/// Geodesic distance `(2/√c) · arctanh(√c ‖(-x) ⊕_c y‖)`.
pub fn poincare_distance(x: &PoincarePoint, y: &PoincarePoint) -> Result<f64> {
    check_same_ball(x, y)?;
    let sum = mobius_add(&negate(x), y)?;
    let sqrt_c = x.curvature.sqrt();
    let arg = (sqrt_c * sq_norm(&sum.coords).sqrt()).min(1.0 - ATANH_EPS);
    Ok(2.0 / sqrt_c * arg.atanh())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> Curvature {
        Curvature::new(v).unwrap()
    }

    fn tangent(coords: &[f64]) -> TangentVector {
        TangentVector::new(coords.to_vec()).unwrap()
    }

    fn point(coords: &[f64], curv: f64) -> PoincarePoint {
        PoincarePoint::new(coords.to_vec(), c(curv)).unwrap()
    }

    #[test]
    fn curvature_rejects_nonpositive_and_nonfinite() {
        assert!(Curvature::new(0.0).is_err());
        assert!(Curvature::new(-1.0).is_err());
        assert!(Curvature::new(f64::NAN).is_err());
        assert!(Curvature::new(f64::INFINITY).is_err());
        assert!(Curvature::new(2.5).is_ok());
    }

    #[test]
    fn exp_of_zero_is_origin() {
        let p = exp_map_zero(&tangent(&[0.0, 0.0, 0.0]), c(1.0)).unwrap();
        assert_eq!(p.coords(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn exp_matches_scalar_formula() {
        // tanh(0.5) evaluated with 40-digit arithmetic.
        let p = exp_map_zero(&tangent(&[0.5, 0.0]), c(1.0)).unwrap();
        assert!((p.coords()[0] - 0.46211715726000974).abs() < 1e-15);
        assert_eq!(p.coords()[1], 0.0);
    }

    #[test]
    fn exp_approaches_identity_for_tiny_curvature() {
        let a = 0.73;
        let p = exp_map_zero(&tangent(&[a, 0.0]), c(1e-8)).unwrap();
        assert!((p.coords()[0] - a).abs() < 1e-6);
    }

    #[test]
    fn exp_rejects_nonfinite() {
        let v = TangentVector {
            coords: vec![f64::NAN, 0.0],
        };
        assert!(exp_map_zero(&v, c(1.0)).is_err());
    }

    #[test]
    fn log_of_origin_is_zero() {
        let v = log_map_zero(&PoincarePoint::origin(3, c(1.0))).unwrap();
        assert_eq!(v.coords(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn log_inverts_the_exp_example() {
        let p = point(&[0.5f64.tanh(), 0.0], 1.0);
        let v = log_map_zero(&p).unwrap();
        assert!((v.coords()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mobius_identities() {
        let y = point(&[0.2, -0.3, 0.1], 1.5);
        let zero = PoincarePoint::origin(3, c(1.5));
        let left = mobius_add(&zero, &y).unwrap();
        assert_eq!(left.coords(), y.coords());
        let right = mobius_add(&y, &zero).unwrap();
        assert_eq!(right.coords(), y.coords());
    }

    #[test]
    fn mobius_collinear_matches_scalar_formula() {
        // Collinear points reduce to (x + y) / (1 + c·x·y).
        let s = mobius_add(&point(&[0.3, 0.0], 1.0), &point(&[0.4, 0.0], 1.0)).unwrap();
        assert!((s.coords()[0] - 0.625).abs() < 1e-15);
        assert_eq!(s.coords()[1], 0.0);
    }

    #[test]
    fn mobius_rejects_mismatches() {
        let a = point(&[0.1, 0.2], 1.0);
        let b = point(&[0.1, 0.2, 0.0], 1.0);
        assert!(mobius_add(&a, &b).is_err());
        let d = point(&[0.1, 0.2], 2.0);
        assert!(mobius_add(&a, &d).is_err());
    }

    #[test]
    fn distance_from_origin_matches_scalar_formula() {
        // 2·arctanh(0.5) = ln 3 evaluated with 40-digit arithmetic.
        let d = poincare_distance(&PoincarePoint::origin(2, c(1.0)), &point(&[0.5, 0.0], 1.0))
            .unwrap();
        assert!((d - 1.0986122886681098).abs() < 1e-12);
    }

    #[test]
    fn distance_to_self_is_zero() {
        let x = point(&[0.3, -0.2, 0.05], 0.7);
        assert!(poincare_distance(&x, &x).unwrap() < 1e-10);
    }

    #[test]
    fn distance_euclidean_limit() {
        let x = point(&[0.4, -0.1], 1e-8);
        let y = point(&[-0.2, 0.3], 1e-8);
        let d = poincare_distance(&x, &y).unwrap();
        let e = 2.0 * ((0.6f64).powi(2) + (0.4f64).powi(2)).sqrt();
        assert!((d - e).abs() / e < 1e-4);
    }

    #[test]
    fn projection_leaves_interior_untouched() {
        let p = project_to_ball(vec![0.3, 0.4], c(1.0));
        assert_eq!(p.coords(), &[0.3, 0.4]);
    }

    #[test]
    fn projection_rescales_exterior_and_boundary() {
        for norm in [2.0, 1.0] {
            let p = project_to_ball(vec![norm, 0.0], c(1.0));
            let got = sq_norm(p.coords()).sqrt();
            assert!((got - (1.0 - BALL_EPS)).abs() < 1e-15, "norm {norm}");
        }
    }

    #[test]
    fn produced_points_satisfy_containment() {
        // Adversarial near-boundary inputs still land strictly inside.
        // Allow a few ulps of slack for the projection rescale.
        let max_sq = (1.0 - BALL_EPS).powi(2) / 4.0 * (1.0 + 1e-12);
        let big = tangent(&[50.0, -80.0]);
        let p = exp_map_zero(&big, c(4.0)).unwrap();
        assert!(sq_norm(p.coords()) <= max_sq);
        let q = mobius_add(&p, &p).unwrap();
        assert!(sq_norm(q.coords()) <= max_sq);
    }
}
