use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lo₁,hi₁] × … × [lo_d,hi_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidArgument("box must have at least one axis".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        for (axis, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "box bounds on axis {axis} are not strictly ordered: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.width(a)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Closed Euclidean ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    center: Vec<f64>,
    radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidArgument("ball center must have at least one coordinate".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidArgument(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && dist2(x, &self.center) <= self.radius * self.radius * (1.0 + 1e-12)
    }

    pub fn project(&self, x: &mut [f64]) {
        let d = dist2(x, &self.center).sqrt();
        if d > self.radius {
            let s = self.radius / d;
            for (v, c) in x.iter_mut().zip(&self.center) {
                *v = c + (*v - c) * s;
            }
        }
    }

    pub fn bounding_box(&self) -> Bounds {
        Bounds {
            lower: self.center.iter().map(|c| c - self.radius).collect(),
            upper: self.center.iter().map(|c| c + self.radius).collect(),
        }
    }
}

/// Parameter domain Θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Box(Bounds),
    Ball(Ball),
    Intersection(Bounds, Ball),
    /// All of ℝᵈ. Only maps with closed-form inverses (linear maps) can be
    /// searched over an unbounded domain.
    Whole(usize),
}

impl Domain {
    pub fn intersection(bounds: Bounds, ball: Ball) -> Result<Self> {
        if bounds.dim() != ball.dim() {
            return Err(Error::DimensionMismatch {
                expected: bounds.dim(),
                found: ball.dim(),
            });
        }
        Ok(Domain::Intersection(bounds, ball))
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Box(b) => b.dim(),
            Domain::Ball(b) => b.dim(),
            Domain::Intersection(b, _) => b.dim(),
            Domain::Whole(d) => *d,
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Domain::Whole(_))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Box(b) => b.contains(x),
            Domain::Ball(b) => b.contains(x),
            Domain::Intersection(bx, bl) => bx.contains(x) && bl.contains(x),
            Domain::Whole(d) => x.len() == *d,
        }
    }

    /// Moves `x` onto (or very near) the domain. Exact for boxes and balls;
    /// intersections use alternating projections.
    pub fn project(&self, x: &mut [f64]) {
        match self {
            Domain::Box(b) => b.clamp(x),
            Domain::Ball(b) => b.project(x),
            Domain::Intersection(bx, bl) => {
                for _ in 0..64 {
                    bl.project(x);
                    bx.clamp(x);
                    if bl.contains(x) {
                        break;
                    }
                }
            }
            Domain::Whole(_) => {}
        }
    }

    /// Smallest box containing the domain, `None` when unbounded.
    pub fn bounding_box(&self) -> Option<Bounds> {
        match self {
            Domain::Box(b) => Some(b.clone()),
            Domain::Ball(b) => Some(b.bounding_box()),
            Domain::Intersection(bx, bl) => {
                let bb = bl.bounding_box();
                let lower: Vec<f64> = bx.lower.iter().zip(&bb.lower).map(|(a, b)| a.max(*b)).collect();
                let upper: Vec<f64> = bx.upper.iter().zip(&bb.upper).map(|(a, b)| a.min(*b)).collect();
                Bounds::new(lower, upper).ok()
            }
            Domain::Whole(_) => None,
        }
    }
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
