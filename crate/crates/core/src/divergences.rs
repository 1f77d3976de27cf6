//! φ-divergences between measures on a common discrete support.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::Measure;

type PhiFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The generator `φ` of a divergence. `φ` is convex with `φ(1) = 0`.
#[derive(Clone)]
pub enum PhiKind {
    /// `φ(t) = t ln t`, extended by `φ(0) = 0`.
    KL,
    /// `φ(t) = (t − 1)²`.
    ChiSquared,
    /// `φ(t) = |t − 1| / 2`; disjoint supports give 1.
    TotalVariation,
    Custom {
        phi: PhiFn,
        phi_at_zero: f64,
        slope_at_infinity: f64,
    },
}

impl fmt::Debug for PhiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiKind::KL => f.write_str("KL"),
            PhiKind::ChiSquared => f.write_str("ChiSquared"),
            PhiKind::TotalVariation => f.write_str("TotalVariation"),
            PhiKind::Custom {
                phi_at_zero,
                slope_at_infinity,
                ..
            } => write!(f, "Custom(phi(0)={phi_at_zero}, slope={slope_at_infinity})"),
        }
    }
}

impl PhiKind {
    /// A user-supplied generator. `phi_at_zero` is the limit `φ(0⁺)` and
    /// `slope_at_infinity` the limit of `φ(t)/t`; either may be `+∞`.
    pub fn custom<F>(phi: F, phi_at_zero: f64, slope_at_infinity: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let at_one = phi(1.0);
        if !(at_one.abs() <= 1e-12) {
            return Err(Error::InvalidArgument(format!("phi(1) must be 0, got {at_one}")));
        }
        if phi_at_zero.is_nan() || slope_at_infinity.is_nan() {
            return Err(Error::InvalidArgument("phi limits must not be NaN".into()));
        }
        Ok(PhiKind::Custom {
            phi: Arc::new(phi),
            phi_at_zero,
            slope_at_infinity,
        })
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "kl" => Ok(PhiKind::KL),
            "chi2" | "chisquared" | "chi-squared" => Ok(PhiKind::ChiSquared),
            "tv" | "totalvariation" | "total-variation" => Ok(PhiKind::TotalVariation),
            other => Err(Error::Parse(format!("unknown divergence '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PhiKind::KL => "kl",
            PhiKind::ChiSquared => "chi2",
            PhiKind::TotalVariation => "tv",
            PhiKind::Custom { .. } => "custom",
        }
    }

    pub fn phi(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.phi_at_zero();
        }
        match self {
            PhiKind::KL => t * t.ln(),
            PhiKind::ChiSquared => (t - 1.0) * (t - 1.0),
            PhiKind::TotalVariation => 0.5 * (t - 1.0).abs(),
            PhiKind::Custom { phi, .. } => phi(t),
        }
    }

    pub fn phi_at_zero(&self) -> f64 {
        match self {
            PhiKind::KL => 0.0,
            PhiKind::ChiSquared => 1.0,
            PhiKind::TotalVariation => 0.5,
            PhiKind::Custom { phi_at_zero, .. } => *phi_at_zero,
        }
    }

    /// `lim φ(t)/t` as `t → ∞`: the cost per unit of `P`-mass where `Q` vanishes.
    pub fn slope_at_infinity(&self) -> f64 {
        match self {
            PhiKind::KL | PhiKind::ChiSquared => f64::INFINITY,
            PhiKind::TotalVariation => 0.5,
            PhiKind::Custom {
                slope_at_infinity, ..
            } => *slope_at_infinity,
        }
    }
}

/// `Σ q φ(p/q)` over paired masses, with `P`-mass on `{q = 0}` charged at the
/// recession slope. Masses need not be normalized.
pub fn phi_divergence_masses(p: &[f64], q: &[f64], kind: &PhiKind) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch);
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if qi > 0.0 {
            total += qi * kind.phi(pi / qi);
        } else if pi > 0.0 {
            let slope = kind.slope_at_infinity();
            if slope == f64::INFINITY {
                return Ok(f64::INFINITY);
            }
            total += pi * slope;
        }
    }
    Ok(total)
}

/// `D_φ(P‖Q)` for measures on the same grid or the same point set.
pub fn phi_divergence(p: &Measure, q: &Measure, kind: &PhiKind) -> Result<f64> {
    let same_support = match (p, q) {
        (Measure::Particles(a), Measure::Particles(b)) => {
            a.dim() == b.dim() && a.len() == b.len() && a.coords() == b.coords()
        }
        (Measure::Grid(a), Measure::Grid(b)) => a.grid() == b.grid(),
        _ => false,
    };
    if !same_support {
        return Err(Error::SupportMismatch);
    }
    phi_divergence_masses(&p.masses(), &q.masses(), kind)
}

/// `ν₁ φ(1/ν₁) + (1 − ν₁) φ(0)`: the smallest divergence from data with range
/// mass `ν₁` over all measures supported in the range.
pub fn jensen_lower_bound(kind: &PhiKind, nu1: f64) -> Result<f64> {
    if !(nu1 > 0.0 && nu1 <= 1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("range mass must lie in (0,1], got {nu1}")));
    }
    let nu1 = nu1.min(1.0);
    if nu1 == 1.0 {
        return Ok(0.0);
    }
    let phi0 = kind.phi_at_zero();
    if phi0 == f64::INFINITY {
        return Err(Error::InfiniteBound);
    }
    Ok(nu1 * kind.phi(1.0 / nu1) + (1.0 - nu1) * phi0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::ParticleMeasure;
    use proptest::prelude::*;

    fn on_line(weights: &[f64]) -> Measure {
        let pts = (0..weights.len()).map(|i| vec![i as f64]).collect();
        ParticleMeasure::new(1, pts, weights.to_vec()).unwrap().into()
    }

    fn kinds() -> [PhiKind; 3] {
        [PhiKind::KL, PhiKind::ChiSquared, PhiKind::TotalVariation]
    }

    #[test]
    fn identical_measures_have_zero_divergence() {
        let p = on_line(&[0.2, 0.3, 0.5]);
        for k in kinds() {
            assert_eq!(phi_divergence(&p, &p, &k).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_point_kl() {
        let p = on_line(&[0.5, 0.5]);
        let q = on_line(&[0.25, 0.75]);
        let direct = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        let d = phi_divergence(&p, &q, &PhiKind::KL).unwrap();
        assert!((d - direct).abs() < 1e-15);
        assert!((d - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn disjoint_supports() {
        let p = on_line(&[1.0, 0.0]);
        let q = on_line(&[0.0, 1.0]);
        assert_eq!(phi_divergence(&p, &q, &PhiKind::TotalVariation).unwrap(), 1.0);
        assert_eq!(phi_divergence(&p, &q, &PhiKind::KL).unwrap(), f64::INFINITY);
        assert_eq!(phi_divergence(&p, &q, &PhiKind::ChiSquared).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mismatched_supports_are_rejected() {
        let p = on_line(&[0.5, 0.5]);
        let q = on_line(&[0.2, 0.3, 0.5]);
        assert_eq!(phi_divergence(&p, &q, &PhiKind::KL), Err(Error::SupportMismatch));
        let shifted: Measure = ParticleMeasure::uniform(1, vec![vec![0.0], vec![2.0]]).unwrap().into();
        assert_eq!(phi_divergence(&p, &shifted, &PhiKind::KL), Err(Error::SupportMismatch));
    }

    #[test]
    fn jensen_examples() {
        for k in kinds() {
            assert_eq!(jensen_lower_bound(&k, 1.0).unwrap(), 0.0);
        }
        let kl = jensen_lower_bound(&PhiKind::KL, 0.5).unwrap();
        assert!((kl - 2f64.ln()).abs() < 1e-15);
        assert!((jensen_lower_bound(&PhiKind::ChiSquared, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((jensen_lower_bound(&PhiKind::TotalVariation, 0.3).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn infinite_phi_at_zero() {
        let reverse_kl = PhiKind::custom(|t| -t.ln(), f64::INFINITY, 0.0).unwrap();
        assert_eq!(jensen_lower_bound(&reverse_kl, 0.5), Err(Error::InfiniteBound));
        assert_eq!(jensen_lower_bound(&reverse_kl, 1.0), Ok(0.0));
    }

    #[test]
    fn custom_requires_phi_one_zero() {
        assert!(PhiKind::custom(|t| t * t, 0.0, f64::INFINITY).is_err());
        let hellinger = PhiKind::custom(|t| (t.sqrt() - 1.0).powi(2), 1.0, 1.0).unwrap();
        let p = on_line(&[1.0, 0.0]);
        let q = on_line(&[0.0, 1.0]);
        assert!((phi_divergence(&p, &q, &hellinger).unwrap() - 2.0).abs() < 1e-15);
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("positive mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn divergences_are_nonnegative(p in simplex(6), q in simplex(6)) {
            for k in kinds() {
                let d = phi_divergence_masses(&p, &q, &k).unwrap();
                prop_assert!(d >= -1e-12, "{k:?}: {d}");
            }
        }

        #[test]
        fn conditioning_attains_jensen_bound(q in simplex(8), cut in 1usize..8) {
            let nu1: f64 = q[..cut].iter().sum();
            prop_assume!(nu1 > 1e-6);
            let cond: Vec<f64> = q.iter().enumerate()
                .map(|(i, &v)| if i < cut { v / nu1 } else { 0.0 })
                .collect();
            for k in kinds() {
                let d = phi_divergence_masses(&cond, &q, &k).unwrap();
                let bound = jensen_lower_bound(&k, nu1).unwrap();
                prop_assert!((d - bound).abs() <= 1e-10, "{k:?}: {d} vs {bound}");
            }
        }

        #[test]
        fn range_supported_competitors_never_beat_bound(
            q in simplex(8), raw in simplex(4), cut in 4usize..8
        ) {
            let nu1: f64 = q[..cut].iter().sum();
            prop_assume!(nu1 > 1e-6);
            let mut comp = vec![0.0; 8];
            comp[..4].copy_from_slice(&raw);
            for k in kinds() {
                let d = phi_divergence_masses(&comp, &q, &k).unwrap();
                let bound = jensen_lower_bound(&k, nu1).unwrap();
                prop_assert!(d >= bound - 1e-12, "{k:?}: {d} < {bound}");
            }
        }
    }
}
