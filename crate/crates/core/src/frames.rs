//! Contact forms, left-invariant frames and Lie brackets.
//!
//! Each group carries an ordered frame `(E1, E2, E3)` of left-invariant fields.
//! `E1, E2` span the kernel of the contact form and are declared orthonormal,
//! so the sub-Riemannian inner product of horizontal vectors is the Euclidean
//! product of their `(alpha, beta)` frame coefficients. The complement `E3` is
//!
//! * Heisenberg: `T = ∂_t`
//! * roto-translation: `[X, Y] = sin t ∂_x - cos t ∂_y`
//! * affine-additive: `W = -∂_a`

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{self, GroupId, GroupPoint};

/// Step used by every finite-difference check in this module.
pub const FD_STEP: f64 = 1e-5;

/// A tangent vector given by its components in the coordinate basis of the chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: GroupPoint,
    pub v: [f64; 3],
}

impl TangentVector {
    pub fn new(base: GroupPoint, v: [f64; 3]) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("tangent components {v:?}")));
        }
        Ok(TangentVector { base, v })
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::from(self.v)
    }
}

/// Coefficients of a tangent vector on the ordered frame `(E1, E2, E3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameCoeffs {
    pub alpha: f64,
    pub beta: f64,
    pub rest: f64,
}

impl FrameCoeffs {
    /// Sub-Riemannian norm of the horizontal part.
    pub fn horizontal_norm(&self) -> f64 {
        self.alpha.hypot(self.beta)
    }
}

/// Components `(ϑ(∂_1), ϑ(∂_2), ϑ(∂_3))` of the contact form at chart point `c`.
pub(crate) fn covector_at(g: GroupId, c: [f64; 3]) -> [f64; 3] {
    let [x, y, t] = c;
    match g {
        // dt + 2(x dy - y dx)
        GroupId::Heisenberg => [-2.0 * y, 2.0 * x, 1.0],
        // sin t dx - cos t dy
        GroupId::RotoTranslation => [t.sin(), -t.cos(), 0.0],
        // dt/(2λ) - da
        GroupId::AffineAdditive => [-1.0, 0.0, 1.0 / (2.0 * y)],
    }
}

pub fn contact_covector(p: &GroupPoint) -> [f64; 3] {
    covector_at(p.group(), p.coords())
}

pub(crate) fn contact_value_at(g: GroupId, c: [f64; 3], v: [f64; 3]) -> f64 {
    let w = covector_at(g, c);
    w[0] * v[0] + w[1] * v[1] + w[2] * v[2]
}

/// Value of the group's contact form on `v`, which must be based at `p`.
pub fn contact_form(p: &GroupPoint, v: &TangentVector) -> Result<f64> {
    if v.base != *p {
        return Err(Error::BaseMismatch);
    }
    Ok(contact_value_at(p.group(), p.coords(), v.v))
}

/// Columns are `E1, E2, E3` at chart point `c`.
pub(crate) fn frame_matrix_at(g: GroupId, c: [f64; 3]) -> Matrix3<f64> {
    let [x, y, t] = c;
    match g {
        GroupId::Heisenberg => Matrix3::new(
            1.0,
            0.0,
            0.0, //
            0.0,
            1.0,
            0.0, //
            2.0 * y,
            -2.0 * x,
            1.0,
        ),
        GroupId::RotoTranslation => {
            let (s, co) = t.sin_cos();
            Matrix3::new(
                co, 0.0, s, //
                s, 0.0, -co, //
                0.0, 1.0, 0.0,
            )
        }
        GroupId::AffineAdditive => Matrix3::new(
            1.0,
            0.0,
            -1.0, //
            0.0,
            2.0 * y,
            0.0, //
            2.0 * y,
            0.0,
            0.0,
        ),
    }
}

/// The ordered left-invariant frame at `p`.
pub fn frame(p: &GroupPoint) -> [TangentVector; 3] {
    let m = frame_matrix_at(p.group(), p.coords());
    std::array::from_fn(|i| TangentVector {
        base: *p,
        v: [m[(0, i)], m[(1, i)], m[(2, i)]],
    })
}

/// Closed-form inverse of the frame matrix applied to `v`.
pub(crate) fn coeffs_at(g: GroupId, c: [f64; 3], v: [f64; 3]) -> FrameCoeffs {
    let [x, y, t] = c;
    let [v1, v2, v3] = v;
    match g {
        GroupId::Heisenberg => FrameCoeffs {
            alpha: v1,
            beta: v2,
            rest: v3 - 2.0 * y * v1 + 2.0 * x * v2,
        },
        GroupId::RotoTranslation => {
            let (s, co) = t.sin_cos();
            FrameCoeffs {
                alpha: co * v1 + s * v2,
                beta: v3,
                rest: s * v1 - co * v2,
            }
        }
        GroupId::AffineAdditive => {
            // ∂_a = -W, ∂_λ = U/(2λ), ∂_t = (U + W)/(2λ)
            let alpha = v3 / (2.0 * y);
            FrameCoeffs {
                alpha,
                beta: v2 / (2.0 * y),
                rest: alpha - v1,
            }
        }
    }
}

pub fn to_frame_coeffs(v: &TangentVector) -> FrameCoeffs {
    coeffs_at(v.base.group(), v.base.coords(), v.v)
}

pub fn from_frame_coeffs(p: &GroupPoint, c: &FrameCoeffs) -> TangentVector {
    let m = frame_matrix_at(p.group(), p.coords());
    let v = m * Vector3::new(c.alpha, c.beta, c.rest);
    TangentVector {
        base: *p,
        v: [v[0], v[1], v[2]],
    }
}

/// Sub-Riemannian inner product of the horizontal parts of two vectors at the same base.
pub fn horizontal_inner(v: &TangentVector, w: &TangentVector) -> Result<f64> {
    if v.base != w.base {
        return Err(Error::BaseMismatch);
    }
    let a = to_frame_coeffs(v);
    let b = to_frame_coeffs(w);
    Ok(a.alpha * b.alpha + a.beta * b.beta)
}

/// Derivative `∂E_i^k / ∂c_m` of frame field `i` (row k, column m).
fn frame_field_derivative(g: GroupId, i: usize, c: [f64; 3]) -> Matrix3<f64> {
    let t = c[2];
    let mut d = Matrix3::zeros();
    match (g, i) {
        (GroupId::Heisenberg, 0) => d[(2, 1)] = 2.0,
        (GroupId::Heisenberg, 1) => d[(2, 0)] = -2.0,
        (GroupId::RotoTranslation, 0) => {
            d[(0, 2)] = -t.sin();
            d[(1, 2)] = t.cos();
        }
        (GroupId::RotoTranslation, 2) => {
            d[(0, 2)] = t.cos();
            d[(1, 2)] = t.sin();
        }
        (GroupId::AffineAdditive, 0) => d[(2, 1)] = 2.0,
        (GroupId::AffineAdditive, 1) => d[(1, 1)] = 2.0,
        _ => {}
    }
    d
}

fn check_index(i: usize) -> Result<()> {
    if i > 2 {
        return Err(Error::InvalidInput(format!(
            "frame index {i} out of range 0..3"
        )));
    }
    Ok(())
}

fn bracket_from(
    m: &Matrix3<f64>,
    di: &Matrix3<f64>,
    dj: &Matrix3<f64>,
    i: usize,
    j: usize,
) -> Vector3<f64> {
    let ei = m.column(i).into_owned();
    let ej = m.column(j).into_owned();
    dj * ei - di * ej
}

/// Lie bracket `[E_i, E_j]` at `p` from hand-differentiated coefficient fields.
pub fn lie_bracket(g: GroupId, i: usize, j: usize, p: &GroupPoint) -> Result<TangentVector> {
    check_index(i)?;
    check_index(j)?;
    groups::ensure_same(g, p.group())?;
    let c = p.coords();
    let m = frame_matrix_at(g, c);
    let b = bracket_from(
        &m,
        &frame_field_derivative(g, i, c),
        &frame_field_derivative(g, j, c),
        i,
        j,
    );
    Ok(TangentVector {
        base: *p,
        v: [b[0], b[1], b[2]],
    })
}

/// Same bracket with the coefficient-field derivatives taken by central differences.
pub fn lie_bracket_fd(g: GroupId, i: usize, j: usize, p: &GroupPoint) -> Result<TangentVector> {
    check_index(i)?;
    check_index(j)?;
    groups::ensure_same(g, p.group())?;
    let c = p.coords();
    let field = |k: usize| {
        move |x: [f64; 3]| {
            let m = frame_matrix_at(g, x);
            [m[(0, k)], m[(1, k)], m[(2, k)]]
        }
    };
    let di = groups::central_difference_jacobian(field(i), c, FD_STEP);
    let dj = groups::central_difference_jacobian(field(j), c, FD_STEP);
    let b = bracket_from(&frame_matrix_at(g, c), &di, &dj, i, j);
    Ok(TangentVector {
        base: *p,
        v: [b[0], b[1], b[2]],
    })
}

/// `max_E ‖(DL_{p0})_p E_p − E_{p0⋆p}‖∞` over the three frame fields.
pub fn verify_left_invariance(g: GroupId, p0: &GroupPoint, p: &GroupPoint) -> Result<f64> {
    groups::ensure_same(g, p0.group())?;
    groups::ensure_same(g, p.group())?;
    let jac = groups::left_translation_jacobian(p0, p)?;
    let here = frame_matrix_at(g, p.coords());
    let there = frame_matrix_at(g, groups::multiply(p0, p)?.coords());
    Ok((jac * here - there).amax())
}

/// `|ϑ([E1, E2])|`, constant on each group since everything is left-invariant
/// up to the common scaling of the contact form.
pub fn bracket_contact_constant(g: GroupId) -> f64 {
    let e = groups::identity(g);
    let b = lie_bracket(g, 0, 1, &e).expect("valid indices");
    contact_value_at(g, e.coords(), b.v).abs()
}

/// Ball-box estimate of the CC length of a short chord `v` based at chart point `c`:
/// horizontal part plus `sqrt(4π |ϑ(v)| / |ϑ([E1,E2])|)`. The second term is the
/// exact length of the shortest loop realising a pure vertical displacement in
/// the Heisenberg model of the structure.
pub fn ball_box_length(g: GroupId, c: [f64; 3], v: [f64; 3]) -> f64 {
    let coeffs = coeffs_at(g, c, v);
    let vertical = contact_value_at(g, c, v).abs();
    coeffs.horizontal_norm() + (4.0 * PI * vertical / bracket_contact_constant(g)).sqrt()
}
