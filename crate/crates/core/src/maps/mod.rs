//! Forward maps `G: Θ ⊆ ℝᵐ → ℝⁿ` and the built-in families.

mod expr;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use expr::Expr;

use crate::error::{Error, Result};
use crate::measures::{Ball, Bounds, Domain};

/// Relative singular-value cutoff for rank checks.
pub const RANK_TOL: f64 = 1e-12;

type MapFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum MapKind {
    Linear(DMatrix<f64>),
    /// `(r, θ) ↦ (r cos θ, r sin θ)`.
    Polar,
    /// `x ↦ |x − (1,1)|`.
    OffsetPolar,
    /// `x ↦ (G(x), α^{1/p} x)`.
    Augmented { base: Box<ForwardMap>, alpha: f64, p: f64 },
    Custom { name: String, f: MapFn },
}

impl fmt::Debug for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapKind::Linear(a) => write!(f, "Linear({}x{})", a.nrows(), a.ncols()),
            MapKind::Polar => f.write_str("Polar"),
            MapKind::OffsetPolar => f.write_str("OffsetPolar"),
            MapKind::Augmented { base, alpha, p } => {
                write!(f, "Augmented({:?}, alpha={alpha}, p={p})", base.kind)
            }
            MapKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardMap {
    in_dim: usize,
    out_dim: usize,
    theta: Domain,
    kind: MapKind,
}

impl ForwardMap {
    /// Wraps an arbitrary evaluator. `f` must return `out_dim` values.
    pub fn custom<F>(name: &str, in_dim: usize, out_dim: usize, theta: Domain, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            in_dim,
            out_dim,
            theta,
            kind: MapKind::Custom {
                name: name.to_string(),
                f: Arc::new(f),
            },
        }
    }

    /// Map whose components are arithmetic expressions in `x1, …, x_in_dim`.
    pub fn from_expressions(in_dim: usize, theta: Domain, components: &[&str]) -> Result<Self> {
        if theta.dim() != in_dim {
            return Err(Error::DimensionMismatch {
                expected: in_dim,
                found: theta.dim(),
            });
        }
        if components.is_empty() {
            return Err(Error::Parse("a map needs at least one output component".into()));
        }
        let exprs = components
            .iter()
            .map(|s| Expr::parse(s, in_dim))
            .collect::<Result<Vec<_>>>()?;
        let name = components.join("; ");
        let out_dim = exprs.len();
        Ok(Self::custom(&name, in_dim, out_dim, theta, move |x| {
            exprs.iter().map(|e| e.eval(x)).collect()
        }))
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn theta(&self) -> &Domain {
        &self.theta
    }

    pub fn kind(&self) -> &MapKind {
        &self.kind
    }

    /// Same map over a different parameter domain.
    pub fn with_theta(&self, theta: Domain) -> Result<Self> {
        if theta.dim() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                found: theta.dim(),
            });
        }
        Ok(Self {
            theta,
            ..self.clone()
        })
    }

    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            MapKind::Linear(a) => Some(a),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        match &self.kind {
            MapKind::Linear(a) => (a * DVector::from_column_slice(x)).as_slice().to_vec(),
            MapKind::Polar => vec![x[0] * x[1].cos(), x[0] * x[1].sin()],
            MapKind::OffsetPolar => vec![((x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2)).sqrt()],
            MapKind::Augmented { base, alpha, p } => {
                let scale = alpha.powf(1.0 / p);
                let mut y = base.eval(x);
                y.extend(x.iter().map(|v| scale * v));
                y
            }
            MapKind::Custom { f, .. } => f(x),
        }
    }

    /// Closed-form range membership where one is known, `None` otherwise.
    pub fn range_contains(&self, y: &[f64]) -> Option<bool> {
        const TOL: f64 = 1e-12;
        match (&self.kind, &self.theta) {
            (MapKind::Polar, Domain::Box(b)) if *b == polar_domain_bounds() => {
                Some(y[0] * y[0] + y[1] * y[1] <= 1.0 + TOL)
            }
            (MapKind::OffsetPolar, Domain::Ball(b)) if b.center() == [1.0, 1.0] => {
                Some(y[0] >= -TOL && y[0] <= b.radius() + TOL)
            }
            (MapKind::Linear(a), Domain::Whole(_)) => {
                let pinv = pseudoinverse(a).ok()?;
                let yv = DVector::from_column_slice(y);
                let residual = (a * (&pinv * &yv) - &yv).norm();
                Some(residual <= 1e-10 * (1.0 + yv.norm()))
            }
            _ => None,
        }
    }
}

fn polar_domain_bounds() -> Bounds {
    Bounds::new(vec![0.0, 0.0], vec![1.0, 2.0 * PI]).expect("valid bounds")
}

/// `x ↦ A x` over `theta`. `A` must have full rank.
pub fn linear_map(a: DMatrix<f64>, theta: Domain) -> Result<ForwardMap> {
    if theta.dim() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: theta.dim(),
        });
    }
    check_full_rank(&a)?;
    Ok(ForwardMap {
        in_dim: a.ncols(),
        out_dim: a.nrows(),
        theta,
        kind: MapKind::Linear(a),
    })
}

/// `(r, θ) ↦ (r cos θ, r sin θ)` on `[0,1] × [0,2π]`; the range is the closed unit disc.
pub fn polar_map() -> ForwardMap {
    ForwardMap {
        in_dim: 2,
        out_dim: 2,
        theta: Domain::Box(polar_domain_bounds()),
        kind: MapKind::Polar,
    }
}

/// `x ↦ |x − (1,1)|` on the unit ball centred at `(1,1)`; the range is `[0,1]`.
pub fn offset_polar_map() -> ForwardMap {
    offset_polar_map_with_radius(1.0).expect("unit radius is valid")
}

/// Offset polar map on the ball of the given radius around `(1,1)`.
pub fn offset_polar_map_with_radius(radius: f64) -> Result<ForwardMap> {
    Ok(ForwardMap {
        in_dim: 2,
        out_dim: 1,
        theta: Domain::Ball(Ball::new(vec![1.0, 1.0], radius)?),
        kind: MapKind::OffsetPolar,
    })
}

/// `x ↦ (G(x), α^{1/p} x)`, turning the moment-regularized matching problem
/// into plain Wasserstein matching against zero-padded data.
pub fn augment(g: &ForwardMap, alpha: f64, p: f64) -> Result<ForwardMap> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be nonnegative, got {alpha}")));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    Ok(ForwardMap {
        in_dim: g.in_dim,
        out_dim: g.out_dim + g.in_dim,
        theta: g.theta.clone(),
        kind: MapKind::Augmented {
            base: Box::new(g.clone()),
            alpha,
            p,
        },
    })
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn check_full_rank(a: &DMatrix<f64>) -> Result<()> {
    let s = singular_values(a);
    let max = s.first().copied().unwrap_or(0.0);
    let min = s.last().copied().unwrap_or(0.0);
    if !(max > 0.0) || min <= RANK_TOL * max {
        return Err(Error::RankDeficient {
            ratio: if max > 0.0 { min / max } else { 0.0 },
        });
    }
    Ok(())
}

/// Left inverse `(AᵀA)⁻¹Aᵀ` for tall `A`, right inverse `Aᵀ(AAᵀ)⁻¹` for wide `A`.
pub fn pseudoinverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_full_rank(a)?;
    let at = a.transpose();
    let singular = || Error::RankDeficient { ratio: 0.0 };
    if a.nrows() >= a.ncols() {
        let gram = (&at * a).cholesky().ok_or_else(singular)?;
        Ok(gram.solve(&at))
    } else {
        let gram = (a * &at).cholesky().ok_or_else(singular)?;
        Ok(gram.solve(a).transpose())
    }
}

/// `(AᵀA + αI)⁻¹Aᵀ`. For `α = 0` this is the pseudoinverse.
pub fn tikhonov_operator(a: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    if alpha == 0.0 {
        return pseudoinverse(a);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be nonnegative, got {alpha}")));
    }
    let at = a.transpose();
    let gram = &at * a + DMatrix::identity(a.ncols(), a.ncols()) * alpha;
    let chol = gram
        .cholesky()
        .ok_or(Error::RankDeficient { ratio: 0.0 })?;
    Ok(chol.solve(&at))
}

/// Spectral norm.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        assert!((a - b).abs().max() <= tol, "{a} vs {b}");
    }

    #[test]
    fn linear_map_evaluates() {
        let id = linear_map(DMatrix::identity(2, 2), Domain::Whole(2)).unwrap();
        assert_eq!(id.eval(&[1.0, 2.0]), vec![1.0, 2.0]);
        let emb = linear_map(mat(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]), Domain::Whole(2)).unwrap();
        assert_eq!(emb.eval(&[4.0, 5.0]), vec![4.0, 5.0, 0.0]);
        let two = linear_map(mat(1, 1, &[2.0]), Domain::Whole(1)).unwrap();
        assert_eq!(two.eval(&[3.0]), vec![6.0]);
    }

    #[test]
    fn rank_deficient_matrices_are_rejected() {
        let a = mat(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(linear_map(a.clone(), Domain::Whole(2)), Err(Error::RankDeficient { .. })));
        assert!(matches!(pseudoinverse(&a), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn pseudoinverse_examples() {
        assert_close(&pseudoinverse(&mat(1, 1, &[2.0])).unwrap(), &mat(1, 1, &[0.5]), 1e-15);
        let emb = mat(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let p = pseudoinverse(&emb).unwrap();
        assert_close(&p, &mat(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]), 1e-15);
        assert_close(&(&p * &emb), &DMatrix::identity(2, 2), 1e-15);
        let row = mat(1, 2, &[1.0, 1.0]);
        let q = pseudoinverse(&row).unwrap();
        assert_close(&q, &mat(2, 1, &[0.5, 0.5]), 1e-15);
        assert_close(&(&row * &q), &DMatrix::identity(1, 1), 1e-15);
    }

    #[test]
    fn pseudoinverse_matches_svd_route() {
        let a = mat(4, 2, &[1.0, 2.0, -0.5, 0.3, 2.0, 1.0, 0.1, -1.0]);
        let ours = pseudoinverse(&a).unwrap();
        let svd = a.clone().pseudo_inverse(1e-14).unwrap();
        assert_close(&ours, &svd, 1e-12);
        assert_close(&(&ours * &a), &DMatrix::identity(2, 2), 1e-10);
        let wide = a.transpose();
        let r = pseudoinverse(&wide).unwrap();
        assert_close(&(&wide * &r), &DMatrix::identity(2, 2), 1e-10);
    }

    #[test]
    fn polar_examples() {
        let g = polar_map();
        assert_eq!(g.eval(&[1.0, 0.0]), vec![1.0, 0.0]);
        let y = g.eval(&[0.5, PI]);
        assert!((y[0] + 0.5).abs() < 1e-15 && y[1].abs() < 1e-15);
        for t in [0.0, 1.0, 4.0] {
            assert_eq!(g.eval(&[0.0, t]).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn polar_image_stays_in_unit_disc() {
        let g = polar_map();
        for i in 0..=50 {
            for j in 0..=50 {
                let x = [i as f64 / 50.0, 2.0 * PI * j as f64 / 50.0];
                let y = g.eval(&x);
                assert!(y[0] * y[0] + y[1] * y[1] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn offset_polar_examples() {
        let g = offset_polar_map();
        assert_eq!(g.eval(&[1.0, 1.0]), vec![0.0]);
        assert_eq!(g.eval(&[1.0, 0.0]), vec![1.0]);
        let d = 0.5 * FRAC_1_SQRT_2;
        assert!((g.eval(&[1.0 + d, 1.0 + d])[0] - 0.5).abs() < 1e-15);
        assert_eq!(g.range_contains(&[0.3]), Some(true));
        assert_eq!(g.range_contains(&[1.2]), Some(false));
    }

    #[test]
    fn augment_examples() {
        let id = linear_map(mat(1, 1, &[1.0]), Domain::Whole(1)).unwrap();
        assert_eq!(augment(&id, 1.0, 2.0).unwrap().eval(&[3.0]), vec![3.0, 3.0]);
        let two = linear_map(mat(1, 1, &[2.0]), Domain::Whole(1)).unwrap();
        assert_eq!(augment(&two, 4.0, 2.0).unwrap().eval(&[1.0]), vec![2.0, 2.0]);
        let g = polar_map();
        let aug = augment(&g, 0.7, 3.0).unwrap();
        assert_eq!(aug.out_dim(), 4);
        let y = aug.eval(&[0.0, 0.0]);
        assert_eq!(&y[2..], &[0.0, 0.0]);
        let x = [0.3, 1.1];
        assert_eq!(&aug.eval(&x)[..2], g.eval(&x).as_slice());
    }

    #[test]
    fn tikhonov_operator_scalar() {
        // argmin |2x - y|² + x² = 2y/5
        let t = tikhonov_operator(&mat(1, 1, &[2.0]), 1.0).unwrap();
        assert!((t[(0, 0)] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn expression_maps() {
        let g = ForwardMap::from_expressions(
            2,
            Domain::Ball(Ball::new(vec![1.0, 1.0], 1.0).unwrap()),
            &["sqrt((x1-1)^2 + (x2-1)^2)"],
        )
        .unwrap();
        let reference = offset_polar_map();
        for x in [[1.0, 1.0], [0.3, 1.2], [1.5, 0.6]] {
            assert!((g.eval(&x)[0] - reference.eval(&x)[0]).abs() < 1e-15);
        }
        assert!(ForwardMap::from_expressions(2, Domain::Whole(2), &["x3"]).is_err());
    }
}
