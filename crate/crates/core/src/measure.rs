//! Haar measures and Monte-Carlo volumes of CC balls.
//!
//! Ball membership is decided twice: once with a certified lower bound for the
//! distance (which admits too many points) and once with an upper bound (which
//! admits too few), so every volume is reported as a bracket.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccdist::{self, CcConfig, CcStatus};
use crate::error::{Error, Result};
use crate::groups::{self, GroupId, GroupPoint};

/// Density of the Haar measure with respect to chart Lebesgue measure.
pub fn haar_density(p: &GroupPoint) -> f64 {
    match p.group() {
        GroupId::AffineAdditive => 1.0 / (p.c2() * p.c2()),
        GroupId::Heisenberg | GroupId::RotoTranslation => 1.0,
    }
}

/// Haar measure of the chart box `lo ≤ x ≤ hi`.
pub fn haar_box_volume(g: GroupId, lo: [f64; 3], hi: [f64; 3]) -> Result<f64> {
    if (0..3).any(|k| !(lo[k] <= hi[k])) {
        return Err(Error::InvalidInput("box corners are not ordered".into()));
    }
    let (da, dt) = (hi[0] - lo[0], hi[2] - lo[2]);
    Ok(match g {
        GroupId::AffineAdditive => {
            if !(lo[1] > 0.0) {
                return Err(Error::InvalidPoint("λ must be positive".into()));
            }
            da * (1.0 / lo[1] - 1.0 / hi[1]) * dt
        }
        _ => da * (hi[1] - lo[1]) * dt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    /// Samples per independently seeded batch.
    pub batch: usize,
    /// Largest acceptable relative standard error.
    pub target_rel_stderr: Option<f64>,
    /// Optimiser settings for distance upper bounds without a closed form.
    pub cc: CcConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            samples: 100_000,
            seed: 0,
            batch: 4096,
            target_rel_stderr: None,
            cc: CcConfig::fast(),
        }
    }
}

/// Monte-Carlo volume bracket of `B(center, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallVolume {
    pub r: f64,
    /// Volume of `{d_upper ≤ r}`.
    pub vol_lower: f64,
    /// Volume of `{d_lower ≤ r}`.
    pub vol_upper: f64,
    /// Standard error of the larger estimate.
    pub stderr: f64,
    pub samples: usize,
}

/// Distance bracket `(lower, upper)` from `p` to `q`; only the lower end is
/// computed when it already exceeds `r`.
fn distance_bracket(
    g: GroupId,
    p: &GroupPoint,
    q: &GroupPoint,
    r: f64,
    cc: &CcConfig,
) -> Result<(f64, f64)> {
    match g {
        GroupId::Heisenberg => {
            let d = ccdist::heisenberg_distance(p, q)?;
            Ok((d, d))
        }
        GroupId::AffineAdditive | GroupId::RotoTranslation => {
            let lower = ccdist::certified_lower_bound(g, p, q)?;
            if lower > r {
                return Ok((lower, f64::INFINITY));
            }
            let arc = if g == GroupId::AffineAdditive {
                ccdist::affine_arc_upper(p, q)?
            } else {
                None
            };
            let upper = match arc {
                Some(u) => u,
                None => {
                    let est = ccdist::cc_distance(g, p, q, cc)?;
                    if est.status == CcStatus::EndpointMissed {
                        f64::INFINITY
                    } else {
                        est.upper
                    }
                }
            };
            Ok((lower, upper.max(lower)))
        }
    }
}

/// Chart box around the identity containing every `y` with `d_lower(e, y) ≤ r`.
fn envelope(g: GroupId, r: f64) -> ([f64; 3], [f64; 3]) {
    match g {
        GroupId::Heisenberg => {
            // |T| = L²(2φ − sin 2φ)/(2φ²) along geodesics, largest at φ = π/2
            let t = 2.0 * r * r / std::f64::consts::PI;
            ([-r, -r, -t], [r, r, t])
        }
        GroupId::AffineAdditive => {
            // d_h ≤ r is a Euclidean disc of radius sinh 2r about (cosh 2r, 0);
            // the fibre moves by at most d_h plus (2r)²/(2π)
            let a = r + 2.0 * r * r / std::f64::consts::PI;
            let s = (2.0 * r).sinh();
            ([-a, (-2.0 * r).exp(), -s], [a, (2.0 * r).exp(), s])
        }
        GroupId::RotoTranslation => ([-r, -r, -r], [r, r, r]),
    }
}

/// Volume brackets of `B(center, r)` for several radii from one shared sample
/// set drawn in the envelope of the largest radius, so the estimates are
/// nondecreasing in `r`.
pub fn ball_volumes(
    g: GroupId,
    center: &GroupPoint,
    radii: &[f64],
    cfg: &McConfig,
) -> Result<Vec<BallVolume>> {
    groups::ensure_same(g, center.group())?;
    center.validate()?;
    if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidInput("radii must be positive".into()));
    }
    if radii.is_empty() {
        return Ok(Vec::new());
    }
    if cfg.samples == 0 || cfg.batch == 0 {
        return Err(Error::InvalidInput(
            "samples and batch must be positive".into(),
        ));
    }
    let r_max = radii.iter().copied().fold(0.0, f64::max);
    let (lo, hi) = envelope(g, r_max);
    let box_volume: f64 = (0..3).map(|k| hi[k] - lo[k]).product();
    let jac = groups::left_translation_jacobian(center, &groups::identity(g))?
        .determinant()
        .abs();
    let batches = cfg.samples.div_ceil(cfg.batch);
    let m = radii.len();
    // per radius: Σw and Σw² for both ends
    let partial: Vec<Result<Vec<[f64; 4]>>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b as u64);
            let n = cfg.batch.min(cfg.samples - b * cfg.batch);
            let mut acc = vec![[0.0; 4]; m];
            for _ in 0..n {
                let y: [f64; 3] = std::array::from_fn(|k| rng.random_range(lo[k]..=hi[k]));
                let y = GroupPoint::raw(g, y);
                let x = groups::multiply_unchecked(center, &y);
                let w = box_volume * haar_density(&x) * jac;
                let (dl, du) = distance_bracket(g, center, &x, r_max, &cfg.cc)?;
                for (k, &r) in radii.iter().enumerate() {
                    if du <= r {
                        acc[k][0] += w;
                        acc[k][1] += w * w;
                    }
                    if dl <= r {
                        acc[k][2] += w;
                        acc[k][3] += w * w;
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![[0.0; 4]; m];
    for part in partial {
        for (t, p) in total.iter_mut().zip(part?) {
            for k in 0..4 {
                t[k] += p[k];
            }
        }
    }
    let n = cfg.samples as f64;
    let mean_err = |s: f64, s2: f64| {
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    };
    let mut out = Vec::with_capacity(m);
    for (k, &r) in radii.iter().enumerate() {
        let [s_lo, s2_lo, s_up, s2_up] = total[k];
        let (vol_lower, err_lo) = mean_err(s_lo, s2_lo);
        let (vol_upper, err_up) = mean_err(s_up, s2_up);
        let stderr = err_lo.max(err_up);
        if let Some(target) = cfg.target_rel_stderr {
            if vol_upper > 0.0 && stderr > target * vol_upper {
                return Err(Error::BudgetExhausted {
                    stderr: stderr / vol_upper,
                    target,
                });
            }
        }
        out.push(BallVolume {
            r,
            vol_lower,
            vol_upper,
            stderr,
            samples: cfg.samples,
        });
    }
    Ok(out)
}

/// Volume bracket of `B(center, r)`.
pub fn ball_volume(g: GroupId, center: &GroupPoint, r: f64, cfg: &McConfig) -> Result<BallVolume> {
    Ok(ball_volumes(g, center, &[r], cfg)?[0])
}

/// Volume growth over a list of increasing radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeScan {
    pub group: GroupId,
    pub radii: Vec<f64>,
    pub vol_lower: Vec<f64>,
    pub vol_upper: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Log-log slope fitted to the bracket midpoints of the first `k + 1` radii.
    pub exponent_running: Vec<Option<f64>>,
    /// Slopes fitted to each end of the bracket.
    pub exponent_lower: Option<f64>,
    pub exponent_upper: Option<f64>,
    /// `max_k(v_k/r_k⁴) / min_k(v_k/r_k⁴)` for each end of the bracket.
    pub regularity_lower: Option<f64>,
    pub regularity_upper: Option<f64>,
}

/// Least-squares slope of `ln v` against `ln r`; `None` with fewer than two
/// usable points.
pub fn fit_exponent(radii: &[f64], volumes: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(volumes)
        .filter(|(r, v)| **r > 0.0 && **v > 0.0)
        .map(|(r, v)| (r.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn regularity(radii: &[f64], volumes: &[f64]) -> Option<f64> {
    let ratios: Vec<f64> = radii
        .iter()
        .zip(volumes)
        .map(|(r, v)| v / r.powi(4))
        .collect();
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    (!ratios.is_empty() && min > 0.0).then(|| max / min)
}

/// Ball volumes about the identity; each radius gets its own envelope and an
/// independent sample stream.
pub fn growth_scan(g: GroupId, radii: &[f64], cfg: &McConfig) -> Result<VolumeScan> {
    if radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(
            "radii must be strictly increasing".into(),
        ));
    }
    let e = groups::identity(g);
    let mut vols = Vec::with_capacity(radii.len());
    for (k, &r) in radii.iter().enumerate() {
        let cfg_k = McConfig {
            seed: cfg.seed.wrapping_add(k as u64),
            ..cfg.clone()
        };
        vols.push(ball_volume(g, &e, r, &cfg_k)?);
    }
    let vol_lower: Vec<f64> = vols.iter().map(|v| v.vol_lower).collect();
    let vol_upper: Vec<f64> = vols.iter().map(|v| v.vol_upper).collect();
    let mid: Vec<f64> = vols
        .iter()
        .map(|v| 0.5 * (v.vol_lower + v.vol_upper))
        .collect();
    let exponent_running = (1..=radii.len())
        .map(|k| fit_exponent(&radii[..k], &mid[..k]))
        .collect();
    Ok(VolumeScan {
        group: g,
        radii: radii.to_vec(),
        exponent_lower: fit_exponent(radii, &vol_lower),
        exponent_upper: fit_exponent(radii, &vol_upper),
        regularity_lower: regularity(radii, &vol_lower),
        regularity_upper: regularity(radii, &vol_upper),
        stderr: vols.iter().map(|v| v.stderr).collect(),
        exponent_running,
        vol_lower,
        vol_upper,
    })
}

#[derive(Serialize)]
struct ScanRow {
    r: f64,
    vol_lower: f64,
    vol_upper: f64,
    stderr: f64,
    exponent_running: Option<f64>,
}

impl VolumeScan {
    /// Writes `r,vol_lower,vol_upper,stderr,exponent_running`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for k in 0..self.radii.len() {
            w.serialize(ScanRow {
                r: self.radii[k],
                vol_lower: self.vol_lower[k],
                vol_upper: self.vol_upper[k],
                stderr: self.stderr[k],
                exponent_running: self.exponent_running[k],
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const AA: GroupId = GroupId::AffineAdditive;
    const H: GroupId = GroupId::Heisenberg;
    const RT: GroupId = GroupId::RotoTranslation;

    fn small(samples: usize) -> McConfig {
        McConfig {
            samples,
            batch: 1024,
            ..McConfig::default()
        }
    }

    #[test]
    fn densities() {
        assert_eq!(
            haar_density(&GroupPoint::new(AA, 3.0, 2.0, -1.0).unwrap()),
            0.25
        );
        assert_eq!(
            haar_density(&GroupPoint::new(H, 3.0, 2.0, -1.0).unwrap()),
            1.0
        );
        assert_eq!(
            haar_density(&GroupPoint::new(RT, 3.0, 2.0, -1.0).unwrap()),
            1.0
        );
    }

    #[test]
    fn box_volume_matches_quadrature() {
        let exact = haar_box_volume(AA, [0.0, 1.0, 0.0], [1.0, 2.0, 1.0]).unwrap();
        assert!((exact - 0.5).abs() < 1e-15);
        // composite midpoint rule in λ
        let n = 20_000;
        let quad: f64 = (0..n)
            .map(|k| {
                let l = 1.0 + (k as f64 + 0.5) / n as f64;
                haar_density(&GroupPoint::new(AA, 0.5, l, 0.5).unwrap()) / n as f64
            })
            .sum();
        assert!((quad - exact).abs() < 1e-8);
        assert!(haar_box_volume(AA, [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]).is_err());
        assert!(haar_box_volume(H, [1.0, 0.0, 0.0], [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn envelopes_contain_lower_balls() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for g in [H, AA, RT] {
            let r = 0.7;
            let (lo, hi) = envelope(g, r);
            let e = groups::identity(g);
            // points just outside the box are outside the lower-bound ball
            for _ in 0..2000 {
                let k = rng.random_range(0..3);
                let mut y: [f64; 3] = std::array::from_fn(|j| rng.random_range(lo[j]..=hi[j]));
                y[k] = if rng.random_bool(0.5) {
                    hi[k] * 1.0001 + 1e-9
                } else {
                    lo[k] - 1e-9 - lo[k].abs() * 1e-4
                };
                if g == AA && y[1] <= 0.0 {
                    continue;
                }
                let y = GroupPoint::raw(g, y);
                let d = match g {
                    H => ccdist::heisenberg_distance(&e, &y).unwrap(),
                    _ => ccdist::certified_lower_bound(g, &e, &y).unwrap(),
                };
                assert!(d > r, "{g:?} {:?} d = {d}", y.coords());
            }
        }
    }

    #[test]
    fn heisenberg_volume_scales_with_fourth_power() {
        let v = ball_volumes(H, &groups::identity(H), &[0.5, 1.0], &small(100_000)).unwrap();
        let ratio = v[1].vol_upper / v[0].vol_upper;
        assert!((ratio - 16.0).abs() < 0.08 * 16.0, "{ratio}");
        assert_eq!(v[0].vol_lower, v[0].vol_upper);
    }

    #[test]
    fn tiny_radius_gives_zero() {
        let v = ball_volume(H, &groups::identity(H), 1e-9, &small(1000)).unwrap();
        assert!(v.vol_upper < 1e-30);
        let v = ball_volume(AA, &groups::identity(AA), 1e-9, &small(1000)).unwrap();
        assert!(v.vol_upper < 1e-20);
    }

    #[test]
    fn shared_samples_are_monotone_and_bracketed() {
        let radii = [0.1, 0.15, 0.2, 0.25, 0.3];
        let v = ball_volumes(AA, &groups::identity(AA), &radii, &small(20_000)).unwrap();
        for w in v.windows(2) {
            assert!(w[1].vol_lower >= w[0].vol_lower);
            assert!(w[1].vol_upper >= w[0].vol_upper);
        }
        for b in &v {
            assert!(b.vol_upper >= b.vol_lower);
        }
    }

    #[test]
    fn left_invariance() {
        let cfg = small(40_000);
        let e = ball_volume(H, &groups::identity(H), 1.0, &cfg).unwrap();
        let p = ball_volume(
            H,
            &GroupPoint::new(H, 2.0, -1.0, 3.0).unwrap(),
            1.0,
            &McConfig {
                seed: 9,
                ..cfg.clone()
            },
        )
        .unwrap();
        let tol = 3.0 * e.stderr.hypot(p.stderr);
        assert!((e.vol_upper - p.vol_upper).abs() <= tol);
        let e = ball_volume(AA, &groups::identity(AA), 0.3, &cfg).unwrap();
        let p = ball_volume(
            AA,
            &GroupPoint::new(AA, -1.0, 3.0, 2.0).unwrap(),
            0.3,
            &McConfig { seed: 9, ..cfg },
        )
        .unwrap();
        let tol = 3.0 * e.stderr.hypot(p.stderr);
        assert!((e.vol_lower - p.vol_lower).abs() <= tol);
        assert!((e.vol_upper - p.vol_upper).abs() <= tol);
    }

    #[test]
    fn budget_target() {
        let cfg = McConfig {
            target_rel_stderr: Some(1e-6),
            ..small(500)
        };
        assert!(matches!(
            ball_volume(H, &groups::identity(H), 1.0, &cfg),
            Err(Error::BudgetExhausted { .. })
        ));
    }

    #[test]
    fn deterministic() {
        let a = ball_volume(AA, &groups::identity(AA), 0.3, &small(5000)).unwrap();
        let b = ball_volume(AA, &groups::identity(AA), 0.3, &small(5000)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn heisenberg_growth_exponent() {
        let scan = growth_scan(H, &[1.0, 2.0, 4.0, 8.0], &small(40_000)).unwrap();
        let q = scan.exponent_upper.unwrap();
        assert!((q - 4.0).abs() < 0.3, "{q}");
        assert_eq!(scan.exponent_running[0], None);
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("r,vol_lower,vol_upper,stderr,exponent_running\n1.0,"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn roto_translation_large_scale_growth() {
        // the lower distance bound alone shows the volume is at most (4π/3) r³
        let cfg = McConfig {
            cc: CcConfig {
                segments: 6,
                budget: 120,
                seeds: vec![0],
                ..CcConfig::fast()
            },
            ..small(200)
        };
        let scan = growth_scan(RT, &[8.0, 16.0, 32.0], &cfg).unwrap();
        assert!(scan.exponent_upper.unwrap() <= 3.5);
        for (v, r) in scan.vol_lower.iter().zip(&scan.radii) {
            assert!(*v <= 4.0 * std::f64::consts::PI / 3.0 * r.powi(3) * 1.5);
        }
    }

    #[test]
    fn empty_and_bad_radii() {
        let scan = growth_scan(H, &[], &McConfig::default()).unwrap();
        assert!(scan.radii.is_empty() && scan.exponent_lower.is_none());
        assert!(growth_scan(H, &[2.0, 1.0], &McConfig::default()).is_err());
        assert!(ball_volume(H, &groups::identity(H), -1.0, &McConfig::default()).is_err());
    }
}
