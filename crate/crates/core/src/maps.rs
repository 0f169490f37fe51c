//! The contactomorphism `g: ℍ → 𝓐𝓐`, its inverse, and the quasiregular map
//! `f: 𝓐𝓐 → ℍ`, with Jacobians, pullbacks of the contact forms,
//! horizontal pushforwards and dilatation.

use nalgebra::{Matrix2, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curves::SampledCurve;
use crate::error::Result;
use crate::frames;
use crate::groups::{self, GroupId, GroupPoint};

/// A smooth map between two of the groups with an analytic Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothMap {
    /// `g(x,y,t) = (x e^{−y}, e^y, ½(t − 2xy + 4x))`.
    G,
    /// `g⁻¹(a,λ,t) = (aλ, ln λ, 2t + 2aλ(ln λ − 2))`.
    GInverse,
    /// `f(a,λ,t) = (−√λ cos a, √λ sin a, t)`.
    F,
    Identity(GroupId),
}

impl SmoothMap {
    pub fn source(self) -> GroupId {
        match self {
            SmoothMap::G => GroupId::Heisenberg,
            SmoothMap::GInverse | SmoothMap::F => GroupId::AffineAdditive,
            SmoothMap::Identity(g) => g,
        }
    }

    pub fn target(self) -> GroupId {
        match self {
            SmoothMap::G => GroupId::AffineAdditive,
            SmoothMap::GInverse | SmoothMap::F => GroupId::Heisenberg,
            SmoothMap::Identity(g) => g,
        }
    }

    /// The inverse map, when it is available in closed form.
    pub fn inverse(self) -> Option<SmoothMap> {
        match self {
            SmoothMap::G => Some(SmoothMap::GInverse),
            SmoothMap::GInverse => Some(SmoothMap::G),
            SmoothMap::F => None,
            SmoothMap::Identity(g) => Some(SmoothMap::Identity(g)),
        }
    }

    pub fn apply(self, p: &GroupPoint) -> Result<GroupPoint> {
        groups::ensure_same(self.source(), p.group())?;
        p.validate()?;
        GroupPoint::from_array(self.target(), self.eval(p.coords()))
    }

    fn eval(self, [u, v, w]: [f64; 3]) -> [f64; 3] {
        match self {
            SmoothMap::G => [u * (-v).exp(), v.exp(), 0.5 * (w - 2.0 * u * v + 4.0 * u)],
            SmoothMap::GInverse => [u * v, v.ln(), 2.0 * w + 2.0 * u * v * (v.ln() - 2.0)],
            SmoothMap::F => {
                let r = v.sqrt();
                [-r * u.cos(), r * u.sin(), w]
            }
            SmoothMap::Identity(_) => [u, v, w],
        }
    }

    /// Chart Jacobian `∂(target)/∂(source)` at `p`.
    pub fn jacobian(self, p: &GroupPoint) -> Result<Matrix3<f64>> {
        groups::ensure_same(self.source(), p.group())?;
        p.validate()?;
        let [u, v, _] = p.coords();
        Ok(match self {
            SmoothMap::G => {
                let e = (-v).exp();
                Matrix3::new(e, -u * e, 0.0, 0.0, v.exp(), 0.0, 2.0 - v, -u, 0.5)
            }
            SmoothMap::GInverse => {
                let l = v.ln();
                Matrix3::new(
                    v,
                    u,
                    0.0,
                    0.0,
                    1.0 / v,
                    0.0,
                    2.0 * v * (l - 2.0),
                    2.0 * u * (l - 1.0),
                    2.0,
                )
            }
            SmoothMap::F => {
                let r = v.sqrt();
                let (s, c) = u.sin_cos();
                Matrix3::new(
                    r * s,
                    -c / (2.0 * r),
                    0.0,
                    r * c,
                    s / (2.0 * r),
                    0.0,
                    0.0,
                    0.0,
                    1.0,
                )
            }
            SmoothMap::Identity(_) => Matrix3::identity(),
        })
    }

    /// Chart Jacobian by central differences.
    pub fn jacobian_fd(self, p: &GroupPoint, step: f64) -> Result<Matrix3<f64>> {
        groups::ensure_same(self.source(), p.group())?;
        p.validate()?;
        Ok(groups::central_difference_jacobian(
            |c| self.eval(c),
            p.coords(),
            step,
        ))
    }

    /// Applies the map to every sample of a curve, keeping the parameters.
    pub fn map_curve(self, curve: &SampledCurve) -> Result<SampledCurve> {
        let pts = curve
            .points()
            .iter()
            .map(|p| self.apply(p))
            .collect::<Result<Vec<_>>>()?;
        SampledCurve::new(self.target(), curve.params().to_vec(), pts)
    }
}

/// Result of pulling back the target contact form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pullback {
    /// Sup-norm mismatch between the pullback and `factor` times the source form.
    pub residual: f64,
    /// Least-squares multiple of the source form.
    pub factor: f64,
}

/// Compares `(Dm)ᵀ ϑ_target(m(p))` with the source contact covector at `p`.
pub fn pullback_residual(m: SmoothMap, p: &GroupPoint) -> Result<Pullback> {
    let jac = m.jacobian(p)?;
    let q = m.apply(p)?;
    let target = Vector3::from(frames::contact_covector(&q));
    let source = Vector3::from(frames::contact_covector(p));
    let pulled = jac.transpose() * target;
    let factor = pulled.dot(&source) / source.norm_squared();
    let residual = (pulled - factor * source).amax();
    Ok(Pullback { residual, factor })
}

/// Matrix of the horizontal differential in the frames `{E1, E2}` of source
/// and target: column `j` holds the `(E1, E2)` coefficients at `m(p)` of
/// `Dm·Ej(p)`.
pub fn pushforward_frame_coeffs(m: SmoothMap, p: &GroupPoint) -> Result<Matrix2<f64>> {
    let jac = m.jacobian(p)?;
    let q = m.apply(p)?;
    let basis = frames::frame_matrix_at(p.group(), p.coords());
    let mut out = Matrix2::zeros();
    for j in 0..2 {
        let image = jac * basis.column(j);
        let c = frames::coeffs_at(q.group(), q.coords(), [image[0], image[1], image[2]]);
        out[(0, j)] = c.alpha;
        out[(1, j)] = c.beta;
    }
    Ok(out)
}

/// Ratio of the singular values of a 2×2 matrix; `+∞` when singular.
pub fn singular_ratio(m: &Matrix2<f64>) -> f64 {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    // conformal and anticonformal parts: σ₁ = q + r, σ₂ = |q − r|
    let q = (0.5 * (a + d)).hypot(0.5 * (c - b));
    let r = (0.5 * (a - d)).hypot(0.5 * (c + b));
    let small = (q - r).abs();
    if small <= f64::EPSILON * (q + r) {
        return f64::INFINITY;
    }
    (q + r) / small
}

/// Dilatation `H_m(p)`: largest over smallest singular value of the
/// horizontal differential.
pub fn dilatation(m: SmoothMap, p: &GroupPoint) -> Result<f64> {
    Ok(singular_ratio(&pushforward_frame_coeffs(m, p)?))
}

/// Sampling box used by the randomized checks.
pub fn default_box(g: GroupId) -> [(f64, f64); 3] {
    match g {
        GroupId::AffineAdditive => [(-2.0, 2.0), ((-2f64).exp(), 2f64.exp()), (-2.0, 2.0)],
        _ => [(-2.0, 2.0); 3],
    }
}

/// `n` points drawn uniformly from `bounds` with a seeded generator.
pub fn sample_points(
    g: GroupId,
    bounds: [(f64, f64); 3],
    n: usize,
    seed: u64,
) -> Result<Vec<GroupPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let c = bounds.map(|(lo, hi)| rng.random_range(lo..hi));
            GroupPoint::from_array(g, c)
        })
        .collect()
}

/// Worst-case summary of the contact identities over a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactCheck {
    pub samples: usize,
    pub max_residual: f64,
    /// Largest deviation of `factor` from its closed form.
    pub max_factor_error: f64,
}

/// Closed-form pullback factor: `1/(4eʸ)` for `g`, `2λ` for `f`, `1` for the identity.
pub fn expected_factor(m: SmoothMap, p: &GroupPoint) -> Option<f64> {
    match m {
        SmoothMap::G => Some(0.25 * (-p.c2()).exp()),
        SmoothMap::GInverse => Some(4.0 * p.c2()),
        SmoothMap::F => Some(2.0 * p.c2()),
        SmoothMap::Identity(_) => Some(1.0),
    }
}

pub fn check_contact(m: SmoothMap, points: &[GroupPoint]) -> Result<ContactCheck> {
    let mut out = ContactCheck {
        samples: points.len(),
        max_residual: 0.0,
        max_factor_error: 0.0,
    };
    for p in points {
        let pb = pullback_residual(m, p)?;
        out.max_residual = out.max_residual.max(pb.residual);
        if let Some(f) = expected_factor(m, p) {
            out.max_factor_error = out.max_factor_error.max((pb.factor - f).abs());
        }
    }
    Ok(out)
}

/// Determinant of the chart Jacobian.
pub fn jacobian_determinant(m: SmoothMap, p: &GroupPoint) -> Result<f64> {
    Ok(m.jacobian(p)?.determinant())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves;
    use std::f64::consts::{E, FRAC_PI_2};

    const AA: GroupId = GroupId::AffineAdditive;
    const H: GroupId = GroupId::Heisenberg;

    fn pt(g: GroupId, c: [f64; 3]) -> GroupPoint {
        GroupPoint::from_array(g, c).unwrap()
    }

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn map_examples() {
        let g = SmoothMap::G;
        assert_eq!(g.apply(&pt(H, [0.0; 3])).unwrap().coords(), [0.0, 1.0, 0.0]);
        assert_eq!(
            g.apply(&pt(H, [1.0, 0.0, 0.0])).unwrap().coords(),
            [1.0, 1.0, 2.0]
        );
        assert!(close(
            g.apply(&pt(H, [0.0, 1.0, 0.0])).unwrap().coords(),
            [0.0, E, 0.0],
            1e-15
        ));
        let gi = SmoothMap::GInverse;
        assert_eq!(
            gi.apply(&pt(AA, [0.0, 1.0, 0.0])).unwrap().coords(),
            [0.0, 0.0, 0.0]
        );
        assert_eq!(
            gi.apply(&pt(AA, [1.0, 1.0, 2.0])).unwrap().coords(),
            [1.0, 0.0, 0.0]
        );
        let f = SmoothMap::F;
        assert!(close(
            f.apply(&pt(AA, [0.0, 1.0, 0.0])).unwrap().coords(),
            [-1.0, 0.0, 0.0],
            1e-15
        ));
        assert!(close(
            f.apply(&pt(AA, [FRAC_PI_2, 4.0, 7.0])).unwrap().coords(),
            [0.0, 2.0, 7.0],
            1e-15
        ));
    }

    #[test]
    fn rejects_wrong_group_and_bad_lambda() {
        assert!(SmoothMap::F.apply(&pt(H, [0.0; 3])).is_err());
        let bad = GroupPoint::raw(AA, [0.0, -1.0, 0.0]);
        assert!(SmoothMap::F.apply(&bad).is_err());
        assert!(SmoothMap::GInverse.apply(&bad).is_err());
        assert!(pullback_residual(SmoothMap::F, &bad).is_err());
    }

    #[test]
    fn inverse_round_trip() {
        for p in sample_points(H, default_box(H), 1000, 1).unwrap() {
            let back = SmoothMap::GInverse
                .apply(&SmoothMap::G.apply(&p).unwrap())
                .unwrap();
            assert!(close(back.coords(), p.coords(), 1e-10));
        }
        for p in sample_points(AA, default_box(AA), 1000, 2).unwrap() {
            let back = SmoothMap::G
                .apply(&SmoothMap::GInverse.apply(&p).unwrap())
                .unwrap();
            assert!(close(back.coords(), p.coords(), 1e-9));
        }
        assert_eq!(SmoothMap::F.inverse(), None);
    }

    #[test]
    fn analytic_jacobians_match_differences() {
        for m in [
            SmoothMap::G,
            SmoothMap::GInverse,
            SmoothMap::F,
            SmoothMap::Identity(H),
        ] {
            let g = m.source();
            for p in sample_points(g, default_box(g), 200, 3).unwrap() {
                let a = m.jacobian(&p).unwrap();
                let n = m.jacobian_fd(&p, 1e-5).unwrap();
                let scale = 1.0 + a.amax();
                assert!((a - n).amax() < 1e-6 * scale, "{m:?} at {p:?}");
            }
        }
    }

    #[test]
    fn pullback_examples() {
        let pb = pullback_residual(SmoothMap::G, &pt(H, [0.0; 3])).unwrap();
        assert!((pb.factor - 0.25).abs() < 1e-15 && pb.residual < 1e-10);
        let pb = pullback_residual(SmoothMap::F, &pt(AA, [0.0, 4.0, 0.0])).unwrap();
        assert!((pb.factor - 8.0).abs() < 1e-12 && pb.residual < 1e-10);
        let pb = pullback_residual(SmoothMap::G, &pt(H, [0.0, 1.0, 0.0])).unwrap();
        assert!((pb.factor - 0.25 / E).abs() < 1e-15 && pb.residual < 1e-10);
        assert!((pb.factor - 0.09197).abs() < 1e-5);
    }

    #[test]
    fn contact_identities_hold_on_samples() {
        for m in [SmoothMap::G, SmoothMap::GInverse, SmoothMap::F] {
            let g = m.source();
            let pts = sample_points(g, default_box(g), 10_000, 4).unwrap();
            let c = check_contact(m, &pts).unwrap();
            assert!(c.max_residual < 1e-9, "{m:?}: {c:?}");
            assert!(c.max_factor_error < 1e-9, "{m:?}: {c:?}");
        }
    }

    #[test]
    fn pushforward_of_f() {
        for p in sample_points(AA, default_box(AA), 1000, 5).unwrap() {
            let m = pushforward_frame_coeffs(SmoothMap::F, &p).unwrap();
            let [x, y, _] = SmoothMap::F.apply(&p).unwrap().coords();
            let expect = Matrix2::new(y, x, -x, y);
            assert!((m - expect).amax() < 1e-12);
            assert!((m.determinant() - p.c2()).abs() < 1e-9 * p.c2().max(1.0));
            assert!((jacobian_determinant(SmoothMap::F, &p).unwrap() - 0.5).abs() < 1e-9);
            assert!((dilatation(SmoothMap::F, &p).unwrap() - 1.0).abs() < 1e-9);
            // frame norm of f_*(αU + βV)
            let (a, b) = (0.3, -1.7);
            let img = m * nalgebra::Vector2::new(a, b);
            let expect = ((a * a + b * b) * (x * x + y * y)).sqrt();
            assert!((img.norm() - expect).abs() < 1e-9 * expect.max(1.0));
        }
    }

    #[test]
    fn dilatation_of_g_is_finite() {
        assert!(
            (dilatation(SmoothMap::Identity(AA), &pt(AA, [0.0, 1.0, 0.0])).unwrap() - 1.0).abs()
                < 1e-12
        );
        let unit = [(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)];
        let mut worst: f64 = 1.0;
        for p in sample_points(H, unit, 1000, 6).unwrap() {
            let h = dilatation(SmoothMap::G, &p).unwrap();
            assert!(h.is_finite() && h >= 1.0);
            worst = worst.max(h);
        }
        assert!(worst < 100.0, "{worst}");
        assert_eq!(
            singular_ratio(&Matrix2::new(1.0, 2.0, 2.0, 4.0)),
            f64::INFINITY
        );
    }

    #[test]
    fn g_preserves_horizontality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            // horizontal curve with x, y polynomial and t from the ODE
            let x = |s: f64| c[0] * s + c[1] * s * s;
            let y = |s: f64| c[2] * s + c[3] * s * s * s;
            // ṫ = 2(yẋ − xẏ) integrated exactly
            let t = |s: f64| {
                2.0 * (c[1] * c[2] * s.powi(3) / 3.0
                    - c[0] * c[3] * s.powi(4) / 2.0
                    - c[1] * c[3] * s.powi(5) / 5.0)
            };
            let curve = SampledCurve::from_fn(H, 16_000, |s| [x(s), y(s), t(s)]).unwrap();
            let image = SmoothMap::G.map_curve(&curve).unwrap();
            let defect = curves::horizontality_defect(&image);
            assert!(defect < 1e-6, "{defect}");
            assert!(curves::horizontal_length(&image).unwrap().is_finite());
        }
    }
}
