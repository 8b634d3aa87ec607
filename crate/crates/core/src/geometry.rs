//! Decision sets: Euclidean balls, boxes, and a set intersected with a ball.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{GoaError, Result};
use crate::vecops;

/// Membership tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Bisection steps on the multiplier of the ball constraint; the interval is
/// `[0, 1]`, so this is far below `f64` resolution.
const MULTIPLIER_BISECTIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// `outer ∩ B(center, radius)`
    Intersection {
        outer: Box<ConvexSet>,
        center: Vec<f64>,
        radius: f64,
    },
}

impl ConvexSet {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || !vecops::all_finite(&center) {
            return Err(GoaError::usage("ball center must be a finite, non-empty point"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(GoaError::usage(format!("ball radius must be positive, got {radius}")));
        }
        Ok(ConvexSet::Ball { center, radius })
    }

    /// Box with possibly infinite bounds.
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(GoaError::usage("box bounds must be non-empty and of equal length"));
        }
        if lower.iter().chain(&upper).any(|x| x.is_nan()) {
            return Err(GoaError::usage("box bounds must not be NaN"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(GoaError::usage("box lower bound exceeds upper bound"));
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    pub fn intersection(outer: ConvexSet, center: Vec<f64>, radius: f64) -> Result<Self> {
        ConvexSet::ball(center.clone(), radius)?;
        if outer.dim() != center.len() {
            return Err(GoaError::usage("intersection members differ in dimension"));
        }
        Ok(ConvexSet::Intersection {
            outer: Box::new(outer),
            center,
            radius,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Intersection { center, .. } => center.len(),
        }
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        self.contains_tol(w, MEMBERSHIP_TOL)
    }

    pub fn contains_tol(&self, w: &[f64], tol: f64) -> bool {
        if w.len() != self.dim() {
            return false;
        }
        match self {
            ConvexSet::Ball { center, radius } => vecops::dist(w, center) <= radius + tol,
            ConvexSet::Box { lower, upper } => w
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, u))| *x >= l - tol && *x <= u + tol),
            ConvexSet::Intersection {
                outer,
                center,
                radius,
            } => outer.contains_tol(w, tol) && vecops::dist(w, center) <= radius + tol,
        }
    }

    /// Nearest point of the set to `v`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(GoaError::usage(format!(
                "cannot project a {}-dimensional point onto a {}-dimensional set",
                v.len(),
                self.dim()
            )));
        }
        match self {
            ConvexSet::Ball { center, radius } => Ok(project_ball(center, *radius, v)),
            ConvexSet::Box { lower, upper } => Ok(v
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(x, (l, u))| x.clamp(*l, *u))
                .collect()),
            ConvexSet::Intersection {
                outer,
                center,
                radius,
            } => project_intersection(outer, center, *radius, v),
        }
    }

    /// Euclidean diameter; an upper bound for intersections.
    pub fn diameter(&self) -> Result<f64> {
        match self {
            ConvexSet::Ball { radius, .. } => Ok(2.0 * radius),
            ConvexSet::Box { lower, upper } => {
                let d = vecops::dist(lower, upper);
                if d.is_finite() {
                    Ok(d)
                } else {
                    Err(GoaError::usage("box is unbounded; diameter undefined"))
                }
            }
            ConvexSet::Intersection { outer, radius, .. } => {
                let ball = 2.0 * radius;
                Ok(match outer.diameter() {
                    Ok(d) => d.min(ball),
                    Err(_) => ball,
                })
            }
        }
    }

    /// Whether the set is contained in `B(center, radius)`.
    pub fn inside_ball(&self, c: &[f64], r: f64) -> bool {
        match self {
            ConvexSet::Ball { center, radius } => vecops::dist(center, c) + radius <= r,
            ConvexSet::Box { lower, upper } => {
                // farthest box corner from c
                let far: f64 = lower
                    .iter()
                    .zip(upper)
                    .zip(c)
                    .map(|((l, u), ci)| {
                        let m = (ci - l).abs().max((u - ci).abs());
                        m * m
                    })
                    .sum();
                far.sqrt() <= r
            }
            ConvexSet::Intersection {
                outer,
                center,
                radius,
            } => {
                outer.inside_ball(c, r) || vecops::dist(center, c) + radius <= r
            }
        }
    }

    /// Whether `B(c, r)` is contained in the set.
    pub fn contains_ball(&self, c: &[f64], r: f64) -> bool {
        match self {
            ConvexSet::Ball { center, radius } => vecops::dist(center, c) + r <= *radius,
            ConvexSet::Box { lower, upper } => c
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, u))| x - r >= *l && x + r <= *u),
            ConvexSet::Intersection {
                outer,
                center,
                radius,
            } => outer.contains_ball(c, r) && vecops::dist(center, c) + r <= *radius,
        }
    }

    /// A point drawn uniformly from the set.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            ConvexSet::Ball { center, radius } => {
                let u = unit_ball_point(rng, center.len());
                Ok(vecops::add_scaled(center, *radius, &u))
            }
            ConvexSet::Box { lower, upper } => {
                if self.diameter().is_err() {
                    return Err(GoaError::usage("cannot sample uniformly from an unbounded box"));
                }
                Ok(lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| if l == u { *l } else { rng.random_range(*l..*u) })
                    .collect())
            }
            ConvexSet::Intersection {
                outer,
                center,
                radius,
            } => {
                const MAX_TRIES: usize = 1_000_000;
                for _ in 0..MAX_TRIES {
                    let u = unit_ball_point(rng, center.len());
                    let w = vecops::add_scaled(center, *radius, &u);
                    if outer.contains_tol(&w, 0.0) {
                        return Ok(w);
                    }
                }
                Err(GoaError::Numerical {
                    message: "rejection sampling found no point in the intersection".into(),
                    residual: f64::NAN,
                })
            }
        }
    }
}

fn project_ball(center: &[f64], radius: f64, v: &[f64]) -> Vec<f64> {
    let diff = vecops::sub(v, center);
    let d = vecops::norm(&diff);
    if d <= radius {
        v.to_vec()
    } else {
        vecops::add_scaled(center, radius / d, &diff)
    }
}

fn project_intersection(
    outer: &ConvexSet,
    center: &[f64],
    radius: f64,
    v: &[f64],
) -> Result<Vec<f64>> {
    if outer.contains_ball(center, radius) {
        return Ok(project_ball(center, radius, v));
    }
    if outer.inside_ball(center, radius) {
        return outer.project(v);
    }
    // a member projection that already lies in the other member is the answer
    let pb = project_ball(center, radius, v);
    if outer.contains_tol(&pb, 0.0) {
        return Ok(pb);
    }
    let po = outer.project(v)?;
    if vecops::dist(&po, center) <= radius {
        return Ok(po);
    }
    if let ConvexSet::Ball { center: c1, radius: r1 } = outer {
        return Ok(project_sphere_rim(c1, *r1, center, radius, v));
    }

    project_ball_constrained(outer, center, radius, v)
}

/// Projection onto `S ∩ B(c, r)` through the multiplier of the ball
/// constraint. With `μ = t/(1−t)`, the minimizer of
/// `½‖x − v‖² + (μ/2)‖x − c‖²` over `S` is `x(t) = Π_S((1−t)v + tc)`, and
/// `‖x(t) − c‖` does not increase with `t`. Bisection finds the `t` where the
/// ball constraint becomes active; the returned point is on the feasible side.
fn project_ball_constrained(outer: &ConvexSet, c: &[f64], r: f64, v: &[f64]) -> Result<Vec<f64>> {
    let at = |t: f64| -> Result<Vec<f64>> {
        let y: Vec<f64> = v.iter().zip(c).map(|(vi, ci)| (1.0 - t) * vi + t * ci).collect();
        outer.project(&y)
    };
    let mut best = at(1.0)?;
    let gap = vecops::dist(&best, c) - r;
    if gap > MEMBERSHIP_TOL {
        return Err(GoaError::Numerical {
            message: "ball does not meet the outer set".into(),
            residual: gap,
        });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..MULTIPLIER_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let x = at(mid)?;
        if vecops::dist(&x, c) <= r {
            hi = mid;
            best = x;
        } else {
            lo = mid;
        }
    }
    Ok(best)
}

/// Nearest point to `v` on the intersection of the spheres `S(c1, r1)` and
/// `S(c2, r2)`. When neither single-ball projection lands in the other ball,
/// the nearest point of the lens lies on this rim.
fn project_sphere_rim(c1: &[f64], r1: f64, c2: &[f64], r2: f64, v: &[f64]) -> Vec<f64> {
    let axis = vecops::sub(c2, c1);
    let dist = vecops::norm(&axis);
    let e = vecops::scale(&axis, 1.0 / dist);
    let a = (dist * dist + r1 * r1 - r2 * r2) / (2.0 * dist);
    let rim = (r1 * r1 - a * a).max(0.0).sqrt();
    let mid = vecops::add_scaled(c1, a, &e);
    let rel = vecops::sub(v, &mid);
    let mut perp = vecops::add_scaled(&rel, -vecops::dot(&rel, &e), &e);
    let mut n = vecops::norm(&perp);
    if n == 0.0 {
        // v on the axis: every rim point is nearest; take one
        let k = (0..e.len())
            .min_by(|&i, &j| e[i].abs().total_cmp(&e[j].abs()))
            .unwrap_or(0);
        let mut basis = vec![0.0; e.len()];
        basis[k] = 1.0;
        perp = vecops::add_scaled(&basis, -e[k], &e);
        n = vecops::norm(&perp);
    }
    vecops::add_scaled(&mid, rim / n, &perp)
}

/// Uniform draw from the unit ball in `d` dimensions: a normalized Gaussian
/// direction scaled by `U^{1/d}`.
pub fn unit_ball_point<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = vecops::norm(&g);
        if n > 0.0 {
            let u: f64 = rng.random();
            let r = u.powf(1.0 / d as f64);
            return vecops::scale(&g, r / n);
        }
    }
}
