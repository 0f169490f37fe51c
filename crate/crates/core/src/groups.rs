//! Group laws of the three model groups in global chart coordinates.
//!
//! * Heisenberg `(x, y, t)`: `(z', t') * (z, t) = (z' + z, t' + t + 2 Im(z' conj(z)))`,
//!   the sign for which `X = ∂_x + 2y∂_t`, `Y = ∂_y − 2x∂_t` and
//!   `dt + 2(x dy − y dx)` are left-invariant
//! * roto-translation `(x, y, t)`: `(z', t') * (z, t) = (e^{i t'} z + z', t' + t)`,
//!   with `t` taken on the universal cover (never reduced mod 2π)
//! * affine-additive `(a, λ, t)`, `λ > 0`: `(a', λ', t') * (a, λ, t) = (a' + a, λ'λ, λ't + t')`

use std::fmt;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupId {
    Heisenberg,
    RotoTranslation,
    AffineAdditive,
}

impl GroupId {
    pub const ALL: [GroupId; 3] = [
        GroupId::Heisenberg,
        GroupId::RotoTranslation,
        GroupId::AffineAdditive,
    ];

    /// Short tag used on the command line and in reports.
    pub fn tag(self) -> &'static str {
        match self {
            GroupId::Heisenberg => "h",
            GroupId::RotoTranslation => "rt",
            GroupId::AffineAdditive => "aa",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "h" | "heisenberg" => Some(GroupId::Heisenberg),
            "rt" | "roto-translation" | "rototranslation" => Some(GroupId::RotoTranslation),
            "aa" | "affine-additive" | "affineadditive" => Some(GroupId::AffineAdditive),
            _ => None,
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A point of one of the groups, in chart coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupPoint {
    group: GroupId,
    c: [f64; 3],
}

impl GroupPoint {
    /// Validating constructor: coordinates must be finite, and `λ > 0` for
    /// the affine-additive group.
    pub fn new(group: GroupId, c1: f64, c2: f64, c3: f64) -> Result<Self> {
        let p = GroupPoint {
            group,
            c: [c1, c2, c3],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_array(group: GroupId, c: [f64; 3]) -> Result<Self> {
        Self::new(group, c[0], c[1], c[2])
    }

    /// Builds a point without validation. Callers guarantee the invariants.
    pub(crate) fn raw(group: GroupId, c: [f64; 3]) -> Self {
        GroupPoint { group, c }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPoint(format!(
                "non-finite coordinates {:?}",
                self.c
            )));
        }
        if self.group == GroupId::AffineAdditive && self.c[1] <= 0.0 {
            return Err(Error::InvalidPoint(format!(
                "affine-additive point requires lambda > 0, got {}",
                self.c[1]
            )));
        }
        Ok(())
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn coords(&self) -> [f64; 3] {
        self.c
    }

    pub fn c1(&self) -> f64 {
        self.c[0]
    }

    pub fn c2(&self) -> f64 {
        self.c[1]
    }

    pub fn c3(&self) -> f64 {
        self.c[2]
    }

    /// Sup-norm distance between chart coordinates; a test helper, not a metric of the group.
    pub fn chart_distance(&self, other: &GroupPoint) -> f64 {
        (0..3)
            .map(|k| (self.c[k] - other.c[k]).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn ensure_same(left: GroupId, right: GroupId) -> Result<()> {
    if left != right {
        return Err(Error::GroupMismatch { left, right });
    }
    Ok(())
}

pub fn identity(g: GroupId) -> GroupPoint {
    match g {
        GroupId::Heisenberg | GroupId::RotoTranslation => GroupPoint::raw(g, [0.0, 0.0, 0.0]),
        GroupId::AffineAdditive => GroupPoint::raw(g, [0.0, 1.0, 0.0]),
    }
}

pub fn multiply(left: &GroupPoint, right: &GroupPoint) -> Result<GroupPoint> {
    ensure_same(left.group, right.group)?;
    Ok(multiply_unchecked(left, right))
}

pub(crate) fn multiply_unchecked(left: &GroupPoint, right: &GroupPoint) -> GroupPoint {
    let [x0, y0, t0] = left.c;
    let [x, y, t] = right.c;
    let c = match left.group {
        GroupId::Heisenberg => [x0 + x, y0 + y, t0 + t + 2.0 * (y0 * x - x0 * y)],
        GroupId::RotoTranslation => {
            let (s, co) = t0.sin_cos();
            [co * x - s * y + x0, s * x + co * y + y0, t0 + t]
        }
        GroupId::AffineAdditive => [x0 + x, y0 * y, y0 * t + t0],
    };
    GroupPoint::raw(left.group, c)
}

pub fn inverse(p: &GroupPoint) -> GroupPoint {
    let [x, y, t] = p.c;
    let c = match p.group {
        GroupId::Heisenberg => [-x, -y, -t],
        GroupId::RotoTranslation => {
            let (s, co) = t.sin_cos();
            // -e^{-it} z
            [-(co * x + s * y), -(-s * x + co * y), -t]
        }
        GroupId::AffineAdditive => [-x, 1.0 / y, -t / y],
    };
    GroupPoint::raw(p.group, c)
}

/// `L_{p0}(p) = p0 * p`.
pub fn left_translate(p0: &GroupPoint, p: &GroupPoint) -> Result<GroupPoint> {
    multiply(p0, p)
}

/// Jacobian of `p ↦ p0 * p` at `p`, in chart coordinates (rows: output coordinate).
pub fn left_translation_jacobian(p0: &GroupPoint, p: &GroupPoint) -> Result<Matrix3<f64>> {
    ensure_same(p0.group, p.group)?;
    Ok(left_jacobian_unchecked(p0))
}

/// All three left translations are affine in `p`, so the Jacobian only depends on `p0`.
pub(crate) fn left_jacobian_unchecked(p0: &GroupPoint) -> Matrix3<f64> {
    let [x0, y0, t0] = p0.c;
    match p0.group {
        GroupId::Heisenberg => Matrix3::new(
            1.0,
            0.0,
            0.0, //
            0.0,
            1.0,
            0.0, //
            2.0 * y0,
            -2.0 * x0,
            1.0,
        ),
        GroupId::RotoTranslation => {
            let (s, co) = t0.sin_cos();
            Matrix3::new(
                co, -s, 0.0, //
                s, co, 0.0, //
                0.0, 0.0, 1.0,
            )
        }
        GroupId::AffineAdditive => Matrix3::new(
            1.0, 0.0, 0.0, //
            0.0, y0, 0.0, //
            0.0, 0.0, y0,
        ),
    }
}

/// Central-difference Jacobian of an arbitrary chart map `R^3 -> R^3`.
pub fn central_difference_jacobian<F>(f: F, at: [f64; 3], step: f64) -> Matrix3<f64>
where
    F: Fn([f64; 3]) -> [f64; 3],
{
    let mut jac = Matrix3::zeros();
    for col in 0..3 {
        let mut plus = at;
        let mut minus = at;
        plus[col] += step;
        minus[col] -= step;
        let fp = f(plus);
        let fm = f(minus);
        for row in 0..3 {
            jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * step);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn pt(g: GroupId, c: [f64; 3]) -> GroupPoint {
        GroupPoint::from_array(g, c).unwrap()
    }

    fn close(a: &GroupPoint, b: [f64; 3], tol: f64) -> bool {
        (0..3).all(|k| (a.coords()[k] - b[k]).abs() <= tol)
    }

    #[test]
    fn identities() {
        assert_eq!(identity(GroupId::AffineAdditive).coords(), [0.0, 1.0, 0.0]);
        assert_eq!(identity(GroupId::Heisenberg).coords(), [0.0, 0.0, 0.0]);
        assert_eq!(identity(GroupId::RotoTranslation).coords(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn products() {
        let aa = GroupId::AffineAdditive;
        let p = multiply(&pt(aa, [1.0, 2.0, 3.0]), &pt(aa, [-1.0, 0.5, 4.0])).unwrap();
        assert!(close(&p, [0.0, 1.0, 11.0], 1e-15));

        let h = GroupId::Heisenberg;
        let p = multiply(&pt(h, [1.0, 0.0, 0.0]), &pt(h, [0.0, 1.0, 0.0])).unwrap();
        assert!(close(&p, [1.0, 1.0, -2.0], 1e-15));
        let p = multiply(&pt(h, [0.0, 1.0, 0.0]), &pt(h, [1.0, 0.0, 0.0])).unwrap();
        assert!(close(&p, [1.0, 1.0, 2.0], 1e-15));

        let rt = GroupId::RotoTranslation;
        let p = multiply(&pt(rt, [0.0, 0.0, FRAC_PI_2]), &pt(rt, [1.0, 0.0, 0.0])).unwrap();
        assert!(close(&p, [0.0, 1.0, FRAC_PI_2], 1e-15));
    }

    #[test]
    fn inverses() {
        let aa = GroupId::AffineAdditive;
        assert!(close(
            &inverse(&pt(aa, [2.0, 4.0, 8.0])),
            [-2.0, 0.25, -2.0],
            1e-15
        ));
        let h = GroupId::Heisenberg;
        assert!(close(
            &inverse(&pt(h, [1.5, -2.0, 0.3])),
            [-1.5, 2.0, -0.3],
            0.0
        ));
        let rt = GroupId::RotoTranslation;
        // -e^{-i π/2} (1 + 0i) = i
        let inv = inverse(&pt(rt, [1.0, 0.0, FRAC_PI_2]));
        assert!(close(&inv, [0.0, 1.0, -FRAC_PI_2], 1e-15));
    }

    #[test]
    fn left_translations() {
        let aa = GroupId::AffineAdditive;
        let p = pt(aa, [0.3, 1.7, -2.0]);
        let e = identity(aa);
        assert_eq!(left_translate(&e, &p).unwrap(), p);
        let q = left_translate(&pt(aa, [1.0, 2.0, 0.0]), &pt(aa, [0.0, 1.0, 5.0])).unwrap();
        assert!(close(&q, [1.0, 2.0, 10.0], 0.0));
        let h = GroupId::Heisenberg;
        let q = left_translate(&pt(h, [0.0, 1.0, 0.0]), &pt(h, [0.0, 1.0, 0.0])).unwrap();
        assert!(close(&q, [0.0, 2.0, 0.0], 0.0));
    }

    #[test]
    fn mismatch_is_an_error() {
        let a = identity(GroupId::AffineAdditive);
        let h = identity(GroupId::Heisenberg);
        assert!(matches!(multiply(&a, &h), Err(Error::GroupMismatch { .. })));
        assert!(left_translation_jacobian(&a, &h).is_err());
    }

    #[test]
    fn invalid_points_rejected() {
        assert!(GroupPoint::new(GroupId::AffineAdditive, 0.0, 0.0, 0.0).is_err());
        assert!(GroupPoint::new(GroupId::AffineAdditive, 0.0, -1.0, 0.0).is_err());
        assert!(GroupPoint::new(GroupId::Heisenberg, f64::NAN, 0.0, 0.0).is_err());
        assert!(GroupPoint::new(GroupId::RotoTranslation, 0.0, f64::INFINITY, 0.0).is_err());
        // negative lambda is fine outside the affine-additive chart
        assert!(GroupPoint::new(GroupId::Heisenberg, 0.0, -1.0, 0.0).is_ok());
    }

    #[test]
    fn jacobian_examples() {
        let aa = GroupId::AffineAdditive;
        let p0 = pt(aa, [0.0, 3.0, 0.0]);
        let j = left_translation_jacobian(&p0, &pt(aa, [1.0, 2.0, 3.0])).unwrap();
        assert_eq!(
            j,
            Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 3.0, 3.0))
        );
        let j = left_translation_jacobian(&identity(aa), &pt(aa, [1.0, 2.0, 3.0])).unwrap();
        assert_eq!(j, Matrix3::identity());
    }

    fn arb_point(g: GroupId) -> impl Strategy<Value = GroupPoint> {
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(move |(a, b, c)| {
            let b = if g == GroupId::AffineAdditive {
                b.exp()
            } else {
                b
            };
            GroupPoint::new(g, a, b, c).unwrap()
        })
    }

    fn arb_group() -> impl Strategy<Value = GroupId> {
        prop_oneof![
            Just(GroupId::Heisenberg),
            Just(GroupId::RotoTranslation),
            Just(GroupId::AffineAdditive)
        ]
    }

    fn arb_triple() -> impl Strategy<Value = (GroupPoint, GroupPoint, GroupPoint)> {
        arb_group().prop_flat_map(|g| (arb_point(g), arb_point(g), arb_point(g)))
    }

    proptest! {
        #[test]
        fn associativity((p, q, r) in arb_triple()) {
            let lhs = multiply(&multiply(&p, &q).unwrap(), &r).unwrap();
            let rhs = multiply(&p, &multiply(&q, &r).unwrap()).unwrap();
            prop_assert!(lhs.chart_distance(&rhs) < 1e-12 * (1.0 + lhs.coords()[2].abs()));
        }

        #[test]
        fn identity_and_inverse_laws((p, _, _) in arb_triple()) {
            let e = identity(p.group());
            prop_assert!(multiply(&e, &p).unwrap().chart_distance(&p) < 1e-12);
            prop_assert!(multiply(&p, &e).unwrap().chart_distance(&p) < 1e-12);
            prop_assert!(multiply(&inverse(&p), &p).unwrap().chart_distance(&e) < 1e-12);
            prop_assert!(multiply(&p, &inverse(&p)).unwrap().chart_distance(&e) < 1e-12);
        }

        #[test]
        fn affine_additive_positivity(
            p in arb_point(GroupId::AffineAdditive),
            q in arb_point(GroupId::AffineAdditive),
        ) {
            prop_assert!(multiply(&p, &q).unwrap().c2() > 0.0);
            prop_assert!(inverse(&p).c2() > 0.0);
            prop_assert!(multiply(&p, &q).unwrap().validate().is_ok());
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for g in GroupId::ALL {
            for _ in 0..100 {
                let mut draw = || {
                    let mut c = [
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-PI..PI),
                    ];
                    if g == GroupId::AffineAdditive {
                        c[1] = c[1].exp();
                    }
                    GroupPoint::from_array(g, c).unwrap()
                };
                let p0 = draw();
                let p = draw();
                let analytic = left_translation_jacobian(&p0, &p).unwrap();
                let fd = central_difference_jacobian(
                    |c| multiply_unchecked(&p0, &GroupPoint::raw(g, c)).coords(),
                    p.coords(),
                    1e-5,
                );
                assert!((analytic - fd).amax() < 1e-6, "{g}: {analytic} vs {fd}");
            }
        }
    }
}
