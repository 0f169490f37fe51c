//! Sampled curves: horizontality, horizontal length, projection of
//! affine-additive curves to the hyperbolic half-plane, and horizontal lifts.
//!
//! Speeds are evaluated on chords: segment `k` contributes the frame norm of
//! `Δc_k` evaluated at the chart midpoint. Lifts accumulate `ȧ = ṫ/(2λ)` with
//! the trapezoidal rule.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames;
use crate::groups::{self, GroupId, GroupPoint};

/// Defect levels for [`horizontal_length`]: above `warn` a warning is logged,
/// above `hard` the length is refused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizontalityTolerance {
    pub warn: f64,
    pub hard: f64,
}

impl Default for HorizontalityTolerance {
    fn default() -> Self {
        HorizontalityTolerance {
            warn: 1e-6,
            hard: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCurve {
    group: GroupId,
    params: Vec<f64>,
    points: Vec<GroupPoint>,
}

impl SampledCurve {
    pub fn new(group: GroupId, params: Vec<f64>, points: Vec<GroupPoint>) -> Result<Self> {
        if params.len() < 2 {
            return Err(Error::InvalidInput(
                "a sampled curve needs at least two samples".into(),
            ));
        }
        if params.len() != points.len() {
            return Err(Error::InvalidInput(format!(
                "{} parameters but {} points",
                params.len(),
                points.len()
            )));
        }
        if params
            .iter()
            .any(|s| !s.is_finite() || *s < -1e-12 || *s > 1.0 + 1e-12)
        {
            return Err(Error::InvalidInput("parameters must lie in [0, 1]".into()));
        }
        if params.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "parameters must be strictly increasing".into(),
            ));
        }
        for p in &points {
            groups::ensure_same(group, p.group())?;
            p.validate()?;
        }
        Ok(SampledCurve {
            group,
            params,
            points,
        })
    }

    /// Samples `f` at `k + 1` uniform parameters in `[0, 1]`.
    pub fn from_fn<F>(group: GroupId, k: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> [f64; 3],
    {
        Self::from_fn_at(group, uniform_params(k), f)
    }

    pub fn from_fn_at<F>(group: GroupId, params: Vec<f64>, f: F) -> Result<Self>
    where
        F: Fn(f64) -> [f64; 3],
    {
        let points = params
            .iter()
            .map(|&s| GroupPoint::from_array(group, f(s)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(group, params, points)
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn points(&self) -> &[GroupPoint] {
        &self.points
    }

    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }

    pub fn start(&self) -> &GroupPoint {
        &self.points[0]
    }

    pub fn end(&self) -> &GroupPoint {
        self.points.last().expect("at least two points")
    }

    /// Horizontal length of each segment (chord frame norm at the midpoint).
    pub fn segment_lengths(&self) -> Vec<f64> {
        self.points
            .windows(2)
            .map(|w| chord_length(self.group, &w[0], &w[1]))
            .collect()
    }

    /// `L_{p0} ∘ γ`.
    pub fn left_translated(&self, p0: &GroupPoint) -> Result<SampledCurve> {
        groups::ensure_same(self.group, p0.group())?;
        let points = self
            .points
            .iter()
            .map(|p| groups::multiply_unchecked(p0, p))
            .collect();
        Ok(SampledCurve {
            group: self.group,
            params: self.params.clone(),
            points,
        })
    }

    /// The same point sequence traversed backwards, on the mirrored parameters.
    pub fn reversed(&self) -> SampledCurve {
        let params = self.params.iter().rev().map(|s| 1.0 - s).collect();
        let points = self.points.iter().rev().copied().collect();
        SampledCurve {
            group: self.group,
            params,
            points,
        }
    }

    /// Writes the curve in the `s,c1,c2,c3` exchange format.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (s, p) in self.params.iter().zip(&self.points) {
            let [c1, c2, c3] = p.coords();
            w.serialize(CurveRow { s: *s, c1, c2, c3 })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a curve in the `s,c1,c2,c3` exchange format; the group is supplied by the caller.
    pub fn read_csv<R: Read>(group: GroupId, reader: R) -> Result<SampledCurve> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["s", "c1", "c2", "c3"] {
            return Err(Error::InvalidInput(format!(
                "expected header s,c1,c2,c3, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut params = Vec::new();
        let mut points = Vec::new();
        for row in r.deserialize() {
            let row: CurveRow = row?;
            params.push(row.s);
            points.push(GroupPoint::new(group, row.c1, row.c2, row.c3)?);
        }
        SampledCurve::new(group, params, points)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    s: f64,
    c1: f64,
    c2: f64,
    c3: f64,
}

pub fn uniform_params(k: usize) -> Vec<f64> {
    let k = k.max(1);
    (0..=k).map(|i| i as f64 / k as f64).collect()
}

fn midpoint_and_chord(p: &GroupPoint, q: &GroupPoint) -> ([f64; 3], [f64; 3]) {
    let a = p.coords();
    let b = q.coords();
    (
        std::array::from_fn(|k| 0.5 * (a[k] + b[k])),
        std::array::from_fn(|k| b[k] - a[k]),
    )
}

/// Horizontal length of the chord from `p` to `q`, frame evaluated at the chart midpoint.
pub(crate) fn chord_length(g: GroupId, p: &GroupPoint, q: &GroupPoint) -> f64 {
    let (mid, d) = midpoint_and_chord(p, q);
    frames::coeffs_at(g, mid, d).horizontal_norm()
}

/// `max_k |ϑ(γ̇)|` with `γ̇` the chord difference quotient at segment midpoints.
pub fn horizontality_defect(c: &SampledCurve) -> f64 {
    c.points
        .windows(2)
        .zip(c.params.windows(2))
        .map(|(w, s)| {
            let (mid, d) = midpoint_and_chord(&w[0], &w[1]);
            let ds = s[1] - s[0];
            let v: [f64; 3] = std::array::from_fn(|k| d[k] / ds);
            frames::contact_value_at(c.group, mid, v).abs()
        })
        .fold(0.0, f64::max)
}

pub fn horizontal_length(c: &SampledCurve) -> Result<f64> {
    horizontal_length_with(c, HorizontalityTolerance::default())
}

pub fn horizontal_length_with(c: &SampledCurve, tol: HorizontalityTolerance) -> Result<f64> {
    let defect = horizontality_defect(c);
    if !defect.is_finite() {
        return Err(Error::NonFinite("horizontality defect".into()));
    }
    if defect > tol.hard {
        return Err(Error::NotHorizontal {
            defect,
            limit: tol.hard,
        });
    }
    if defect > tol.warn {
        log::warn!(
            "curve horizontality defect {defect:.3e} exceeds {:.1e}",
            tol.warn
        );
    }
    let len: f64 = c.segment_lengths().iter().sum();
    if !len.is_finite() {
        return Err(Error::NonFinite("horizontal length".into()));
    }
    Ok(len)
}

/// Length of the curve sampled with `k, 2k, 4k, …` segments until two
/// consecutive values differ by less than `tol` (or `max_k` is reached).
/// Returns the last length and the segment count used.
pub fn refined_length<F>(
    group: GroupId,
    f: F,
    k0: usize,
    tol: f64,
    max_k: usize,
) -> Result<(f64, usize)>
where
    F: Fn(f64) -> [f64; 3],
{
    let mut k = k0.max(1);
    let mut prev = horizontal_length(&SampledCurve::from_fn(group, k, &f)?)?;
    while k < max_k {
        k *= 2;
        let next = horizontal_length(&SampledCurve::from_fn(group, k, &f)?)?;
        if (next - prev).abs() < tol {
            return Ok((next, k));
        }
        prev = next;
    }
    Ok((prev, k))
}

/// A point `ξ + iη` of the half-plane `ξ > 0` with metric `|dζ|²/(4ξ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicPoint {
    pub xi: f64,
    pub eta: f64,
}

impl HyperbolicPoint {
    pub fn new(xi: f64, eta: f64) -> Result<Self> {
        if !(xi.is_finite() && eta.is_finite()) || xi <= 0.0 {
            return Err(Error::InvalidPoint(format!(
                "half-plane point needs finite coordinates and xi > 0, got ({xi}, {eta})"
            )));
        }
        Ok(HyperbolicPoint { xi, eta })
    }
}

/// `π(a, λ, t) = (λ, t)` applied pointwise.
pub fn project(c: &SampledCurve) -> Result<Vec<HyperbolicPoint>> {
    groups::ensure_same(GroupId::AffineAdditive, c.group)?;
    Ok(c.points.iter().map(project_point).collect())
}

pub fn project_point(p: &GroupPoint) -> HyperbolicPoint {
    HyperbolicPoint {
        xi: p.c2(),
        eta: p.c3(),
    }
}

/// Chord-midpoint hyperbolic length `Σ |Δζ| / (2 ξ_mid)` of a polyline.
pub fn hyperbolic_polyline_length(points: &[HyperbolicPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let d = (w[1].xi - w[0].xi).hypot(w[1].eta - w[0].eta);
            d / (w[0].xi + w[1].xi)
        })
        .sum()
}

/// Horizontal lift of a half-plane curve: `λ = ξ`, `t = η`, and `a` solving
/// `ȧ = ṫ/(2λ)` from `a(s_0) = a0` by trapezoidal accumulation.
pub fn horizontal_lift(params: &[f64], base: &[HyperbolicPoint], a0: f64) -> Result<SampledCurve> {
    if params.len() != base.len() {
        return Err(Error::InvalidInput(format!(
            "{} parameters but {} base points",
            params.len(),
            base.len()
        )));
    }
    if let Some(bad) = base.iter().find(|b| !(b.xi > 0.0) || !b.eta.is_finite()) {
        return Err(Error::InvalidPoint(format!(
            "lift base point ({}, {}) is not in the half-plane",
            bad.xi, bad.eta
        )));
    }
    let points = lift_coords(base, a0)
        .into_iter()
        .map(|c| GroupPoint::raw(GroupId::AffineAdditive, c))
        .collect();
    SampledCurve::new(GroupId::AffineAdditive, params.to_vec(), points)
}

pub(crate) fn lift_coords(base: &[HyperbolicPoint], a0: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(base.len());
    let mut a = a0;
    for (k, b) in base.iter().enumerate() {
        if k > 0 {
            let prev = &base[k - 1];
            a += 0.25 * (1.0 / prev.xi + 1.0 / b.xi) * (b.eta - prev.eta);
        }
        out.push([a, b.xi, b.eta]);
    }
    out
}

/// Geodesic distance for the metric `|dζ|/(2ξ)`: half the standard half-plane distance.
pub fn hyperbolic_distance(p: &HyperbolicPoint, q: &HyperbolicPoint) -> f64 {
    let d = (p.xi - q.xi).hypot(p.eta - q.eta);
    (d / (2.0 * (p.xi * q.xi).sqrt())).asinh()
}

/// `∫ dη / (2ξ)` along the geodesic from `p` to `q`. Geodesics are arcs of circles
/// centred on the line `ξ = 0` (or horizontal rays when `η` is constant); on such an
/// arc `ξ = r sin θ`, `η = c − r cos θ` and the integrand is `dθ/2`.
pub fn geodesic_fiber_shift(p: &HyperbolicPoint, q: &HyperbolicPoint) -> f64 {
    let deta = q.eta - p.eta;
    if deta.abs() <= 1e-300 {
        return 0.0;
    }
    let c = (q.xi * q.xi - p.xi * p.xi + q.eta * q.eta - p.eta * p.eta) / (2.0 * deta);
    let theta = |h: &HyperbolicPoint| h.xi.atan2(c - h.eta);
    0.5 * (theta(q) - theta(p))
}
