use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use srlab::ccdist::{self, CcConfig, CcStatus};
use srlab::curves::{self, HyperbolicPoint};
use srlab::frames;
use srlab::groups::{self, GroupId, GroupPoint};
use srlab::maps::{self, SmoothMap};
use srlab::measure::{self, McConfig};
use srlab::modulus::{self, Gamma0Grid, RhoN, RingConfig, SolverConfig};

use crate::config::*;
use crate::report::{Check, Report, Source};

/// Exit code 2 for configuration problems, 1 for everything else.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numeric(String),
}

impl From<srlab::Error> for Failure {
    fn from(e: srlab::Error) -> Self {
        use srlab::Error::*;
        match e {
            InvalidInput(_)
            | InvalidPoint(_)
            | GroupMismatch { .. }
            | EmptyShell(_)
            | Io(_)
            | Csv(_)
            | Json(_) => Failure::Config(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

impl From<String> for Failure {
    fn from(msg: String) -> Self {
        Failure::Config(msg)
    }
}

type Outcome = Result<(Value, Vec<Check>, Value), Failure>;

pub fn run(cli: &Cli, argv: Vec<String>) -> Result<Report, Failure> {
    let file = cli.config.as_deref().map(read_file).transpose()?;
    let file = file.as_ref();
    let (config, checks, data) = match &cli.command {
        Command::Verify(a) => verify(resolve(file, a)?),
        Command::Modulus(a) => modulus(resolve(file, a)?),
        Command::Ccdist(a) => ccdist(resolve(file, a)?),
        Command::Volume(a) => volume(resolve(file, a)?),
        Command::Lift(a) => lift(resolve(file, a)?),
        Command::Report(a) => full_report(resolve(file, a)?),
    }?;
    Ok(Report::new(argv, config, checks, data))
}

fn echo<T: Serialize>(cfg: &T) -> Value {
    serde_json::to_value(cfg).expect("configs serialize")
}

fn point(g: GroupId, c: &[f64], what: &str) -> Result<GroupPoint, Failure> {
    let c: [f64; 3] = c.try_into().map_err(|_| {
        Failure::Config(format!("--{what} needs three comma-separated coordinates"))
    })?;
    Ok(GroupPoint::from_array(g, c)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))
}

fn sup(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, f64::max)
}

pub fn verify(cfg: VerifyConfig) -> Outcome {
    if cfg.samples == 0 {
        return Err(Failure::Config("samples must be positive".into()));
    }
    let mut checks = Vec::new();
    let scope = cfg.scope;
    if matches!(scope, Scope::Groups | Scope::All) {
        checks.extend(group_checks(cfg.samples.min(1000), cfg.seed)?);
    }
    if matches!(scope, Scope::Frames | Scope::All) {
        checks.extend(frame_checks(cfg.samples.min(1000), cfg.seed)?);
    }
    if matches!(scope, Scope::Maps | Scope::All) {
        checks.extend(map_checks(cfg.samples, cfg.seed)?);
    }
    Ok((echo(&cfg), checks, Value::Null))
}

fn group_checks(n: usize, seed: u64) -> Result<Vec<Check>, Failure> {
    let mut out = Vec::new();
    for g in GroupId::ALL {
        let b = maps::default_box(g);
        let ps = maps::sample_points(g, b, n, seed)?;
        let qs = maps::sample_points(g, b, n, seed + 1)?;
        let rs = maps::sample_points(g, b, n, seed + 2)?;
        let e = groups::identity(g);
        let (mut assoc, mut unit, mut inv, mut jac) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for ((p, q), r) in ps.iter().zip(&qs).zip(&rs) {
            let left = groups::multiply(&groups::multiply(p, q)?, r)?;
            let right = groups::multiply(p, &groups::multiply(q, r)?)?;
            let scale = 1.0 + left.coords().iter().fold(0.0f64, |m, c| m.max(c.abs()));
            assoc = assoc.max(left.chart_distance(&right) / scale);
            unit = unit
                .max(groups::multiply(&e, p)?.chart_distance(p))
                .max(groups::multiply(p, &e)?.chart_distance(p));
            inv = inv.max(groups::multiply(p, &groups::inverse(p))?.chart_distance(&e));
            let fd = groups::central_difference_jacobian(
                |c| {
                    groups::multiply(p, &GroupPoint::from_array(g, c).expect("valid"))
                        .expect("same group")
                        .coords()
                },
                q.coords(),
                1e-5,
            );
            jac = jac.max((fd - groups::left_translation_jacobian(p, q)?).amax());
        }
        let t = g.tag();
        out.push(Check::at_most(
            format!("{t}: associativity"),
            assoc,
            1e-12,
            Source::Exact,
        ));
        out.push(Check::at_most(
            format!("{t}: identity"),
            unit,
            0.0,
            Source::Exact,
        ));
        out.push(Check::at_most(
            format!("{t}: inverse"),
            inv,
            1e-12,
            Source::Exact,
        ));
        out.push(Check::at_most(
            format!("{t}: left translation jacobian vs differences"),
            jac,
            1e-6,
            Source::Computed,
        ));
    }
    Ok(out)
}

fn frame_checks(n: usize, seed: u64) -> Result<Vec<Check>, Failure> {
    let mut out = Vec::new();
    for g in GroupId::ALL {
        let b = maps::default_box(g);
        let ps = maps::sample_points(g, b, n, seed)?;
        let p0s = maps::sample_points(g, b, n, seed + 7)?;
        let (mut fd, mut inv, mut contact) = (0.0f64, 0.0f64, 0.0f64);
        let mut closed = 0.0f64;
        for (p, p0) in ps.iter().zip(&p0s) {
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                let a = frames::lie_bracket(g, i, j, p)?.v;
                let f = frames::lie_bracket_fd(g, i, j, p)?.v;
                fd = fd.max(sup((0..3).map(|k| (a[k] - f[k]).abs())));
            }
            inv = inv.max(frames::verify_left_invariance(g, p0, p)?);
            let frame = frames::frame(p);
            for e in &frame[..2] {
                contact = contact.max(frames::contact_form(p, e)?.abs());
            }
            if g == GroupId::AffineAdditive {
                // [U,V] = −2(U+W), [U,W] = [V,W] = 0
                let uv = frames::lie_bracket_fd(g, 0, 1, p)?.v;
                let uw = frames::lie_bracket_fd(g, 0, 2, p)?.v;
                let vw = frames::lie_bracket_fd(g, 1, 2, p)?.v;
                let (u, w) = (frame[0].v, frame[2].v);
                for k in 0..3 {
                    closed = closed
                        .max((uv[k] + 2.0 * (u[k] + w[k])).abs())
                        .max(uw[k].abs())
                        .max(vw[k].abs());
                }
            }
        }
        let t = g.tag();
        out.push(Check::at_most(
            format!("{t}: brackets, differences vs closed form"),
            fd,
            1e-6,
            Source::Computed,
        ));
        out.push(Check::at_most(
            format!("{t}: left invariance of the frame"),
            inv,
            1e-10,
            Source::Exact,
        ));
        out.push(Check::at_most(
            format!("{t}: contact form annihilates E1, E2"),
            contact,
            1e-12,
            Source::Exact,
        ));
        if g == GroupId::AffineAdditive {
            out.push(Check::at_most(
                "aa: [U,V] = -2(U+W), [U,W] = [V,W] = 0",
                closed,
                1e-6,
                Source::Published,
            ));
        }
        let reference = match g {
            GroupId::Heisenberg => 4.0,
            GroupId::RotoTranslation => 1.0,
            GroupId::AffineAdditive => 2.0,
        };
        out.push(Check::within(
            format!("{t}: |contact form on [E1,E2]|"),
            frames::bracket_contact_constant(g),
            reference,
            1e-12,
            Source::Exact,
        ));
    }
    Ok(out)
}

fn map_checks(n: usize, seed: u64) -> Result<Vec<Check>, Failure> {
    let hs = maps::sample_points(
        GroupId::Heisenberg,
        maps::default_box(GroupId::Heisenberg),
        n,
        seed,
    )?;
    let aas = maps::sample_points(
        GroupId::AffineAdditive,
        maps::default_box(GroupId::AffineAdditive),
        n,
        seed + 1,
    )?;
    let g = maps::check_contact(SmoothMap::G, &hs)?;
    let f = maps::check_contact(SmoothMap::F, &aas)?;
    let (mut dil, mut det, mut round) = (0.0f64, 0.0f64, 0.0f64);
    for p in &aas {
        dil = dil.max((maps::dilatation(SmoothMap::F, p)? - 1.0).abs());
        det = det.max((maps::jacobian_determinant(SmoothMap::F, p)? - 0.5).abs());
        let back = SmoothMap::G.apply(&SmoothMap::GInverse.apply(p)?)?;
        round = round.max(back.chart_distance(p) / (1.0 + p.c1().abs() + p.c3().abs()));
    }
    let mut jac = 0.0f64;
    for p in hs.iter().take(1000) {
        jac = jac.max((SmoothMap::G.jacobian(p)? - SmoothMap::G.jacobian_fd(p, 1e-5)?).amax());
    }
    Ok(vec![
        Check::at_most(
            "g: pullback is a multiple of the contact form",
            g.max_residual,
            1e-9,
            Source::Published,
        ),
        Check::at_most(
            "g: factor equals 1/(4e^y)",
            g.max_factor_error,
            1e-9,
            Source::Published,
        ),
        Check::at_most(
            "f: pullback is a multiple of the contact form",
            f.max_residual,
            1e-9,
            Source::Published,
        ),
        Check::at_most(
            "f: factor equals 2λ",
            f.max_factor_error,
            1e-9,
            Source::Computed,
        ),
        Check::at_most("H_f ≡ 1", dil, 1e-9, Source::Published),
        Check::at_most("det f_* = 1/2", det, 1e-9, Source::Published),
        Check::at_most("g ∘ g⁻¹ = id", round, 1e-12, Source::Exact),
        Check::at_most("g: jacobian vs differences", jac, 1e-5, Source::Computed),
    ])
}

pub fn modulus(cfg: ModulusConfig) -> Outcome {
    if !(cfg.q > 1.0) {
        return Err(Failure::Config(format!("q = {}; q > 1 is required", cfg.q)));
    }
    if let Some(tol) = cfg.tol {
        if !(tol > 0.0) {
            return Err(Failure::Config("tol must be positive".into()));
        }
    }
    match cfg.family {
        Family::Gamma0 => gamma0(cfg),
        Family::Ring => ring(cfg),
    }
}

fn gamma0(cfg: ModulusConfig) -> Outcome {
    if cfg.q != 4.0 {
        return Err(Failure::Config(
            "the gamma0 family is evaluated at q = 4".into(),
        ));
    }
    let [a, l, t]: [usize; 3] = cfg
        .grid
        .as_slice()
        .try_into()
        .map_err(|_| Failure::Config("grid needs three cell counts a,λ,t".into()))?;
    let grid = Gamma0Grid {
        a_count: a + 1,
        lambda_count: l + 1,
        t_count: t + 1,
    };
    let solver = SolverConfig {
        tol: cfg.tol.unwrap_or(SolverConfig::default().tol),
        ..SolverConfig::default()
    };
    let floor = 16.0 / 27.0 - 0.05;
    let mut checks = Vec::new();
    let mut data = Vec::new();
    for &n in &cfg.n {
        let b = modulus::gamma0_modulus_bound(n, Some(&grid), &solver)?;
        let d = b.discrete.as_ref().expect("grid given");
        if checks.is_empty() {
            checks.push(Check::within(
                "aggregated constant",
                b.aggregated.value(),
                8.0,
                0.0,
                Source::Published,
            ));
            checks.push(Check::within(
                "Hölder majorant",
                b.holder_majorant.value(),
                12.0,
                0.0,
                Source::Published,
            ));
            checks.push(Check::info(
                "Hölder chain bound vs quoted 2⁴/3³",
                b.holder_bound.value(),
                Some((b.quoted_bound.value(), Source::Published)),
            ));
        }
        checks.push(Check::at_least(
            format!("n = {n}: primal ≥ 16/27 − 0.05"),
            d.primal,
            floor,
            Source::Published,
        ));
        checks.push(Check::at_most(
            format!("n = {n}: dual ≤ primal"),
            d.dual_bound,
            d.primal,
            Source::Exact,
        ));
        checks.push(Check::info(
            format!("n = {n}: primal vs continuum"),
            d.primal,
            Some((b.continuum, Source::Computed)),
        ));
        data.push(json!({
            "n": n,
            "aggregated": b.aggregated,
            "holder_majorant": b.holder_majorant,
            "holder_bound": b.holder_bound,
            "quoted_bound": b.quoted_bound,
            "continuum": b.continuum,
            "primal": d.primal,
            "dual_bound": d.dual_bound,
            "max_violation": d.max_violation,
            "iterations": d.iterations,
            "curves": d.curves,
        }));
    }
    Ok((echo(&cfg), checks, Value::Array(data)))
}

fn ring(cfg: ModulusConfig) -> Outcome {
    let g = parse_group(&cfg.group)?;
    let mut ring_cfg = RingConfig {
        spacing: cfg.spacing,
        window: cfg.window,
        q: cfg.q,
        ..RingConfig::default()
    };
    if let Some(tol) = cfg.tol {
        ring_cfg.connecting.solver.tol = tol;
    }
    let center = groups::identity(g);
    let mut values = Vec::new();
    let mut data = Vec::new();
    for &r in &cfg.radii {
        let rep = modulus::ring_modulus(g, &center, cfg.r0, r, &ring_cfg)?;
        values.push(rep.report.primal);
        data.push(json!({
            "R": r,
            "nodes": rep.nodes,
            "inner": rep.inner,
            "outer": rep.outer,
            "primal": rep.report.primal,
            "dual_bound": rep.report.dual_bound,
            "max_violation": rep.report.max_violation,
            "curves": rep.report.curves,
        }));
    }
    let mut checks: Vec<Check> = cfg
        .radii
        .iter()
        .zip(&values)
        .map(|(r, v)| Check::info(format!("R = {r}: modulus"), *v, None))
        .collect();
    if g != GroupId::AffineAdditive && values.len() > 1 {
        let decreasing = values.windows(2).all(|w| w[1] < w[0]);
        checks.push(Check::holds("strictly decreasing in R", decreasing));
    }
    Ok((echo(&cfg), checks, Value::Array(data)))
}

pub fn ccdist(cfg: CcdistConfig) -> Outcome {
    let g = parse_group(&cfg.group)?;
    let (Some(from), Some(to)) = (&cfg.from, &cfg.to) else {
        return Err(Failure::Config("--from and --to are required".into()));
    };
    let (p, q) = (point(g, from, "from")?, point(g, to, "to")?);
    if cfg.restarts == 0 {
        return Err(Failure::Config("restarts must be positive".into()));
    }
    let cc = CcConfig {
        segments: cfg.segments,
        budget: cfg.budget,
        seeds: (0..cfg.restarts).collect(),
        ..CcConfig::default()
    };
    let est = ccdist::cc_distance(g, &p, &q, &cc)?;
    let mut checks = vec![
        Check::at_most("lower ≤ upper", est.lower, est.upper, Source::Exact),
        Check::holds("endpoint reached", est.status != CcStatus::EndpointMissed),
    ];
    let mut data = json!({
        "upper": est.upper,
        "lower": est.lower,
        "gap": est.gap(),
        "status": est.status,
        "iterations": est.iterations,
        "endpoint_error": est.endpoint_error,
    });
    match g {
        GroupId::Heisenberg => {
            let exact = ccdist::heisenberg_distance(&p, &q)?;
            data["closed_form"] = json!(exact);
            checks.push(Check::within(
                "upper vs closed form",
                est.upper,
                exact,
                1e-2 * exact.max(1e-12),
                Source::Computed,
            ));
        }
        GroupId::AffineAdditive => {
            if let Some(arc) = ccdist::affine_arc_upper(&p, &q)? {
                data["arc_upper"] = json!(arc);
                checks.push(Check::info(
                    "upper vs lifted circular arc",
                    est.upper,
                    Some((arc, Source::Computed)),
                ));
            }
        }
        GroupId::RotoTranslation => {}
    }
    if let Some(path) = &cfg.curve_out {
        est.curve.write_csv(create(path)?)?;
    }
    Ok((echo(&cfg), checks, data))
}

pub fn volume(cfg: VolumeConfig) -> Outcome {
    let g = parse_group(&cfg.group)?;
    let mc = McConfig {
        samples: cfg.samples,
        seed: cfg.seed,
        ..McConfig::default()
    };
    let scan = measure::growth_scan(g, &cfg.radii, &mc)?;
    let mut checks = Vec::new();
    for k in 1..scan.radii.len() {
        let (r0, r1) = (scan.radii[k - 1], scan.radii[k]);
        let ratio = scan.vol_upper[k] / scan.vol_upper[k - 1];
        let name = format!("v({r1})/v({r0})");
        let expected = (r1 / r0).powi(4);
        if g == GroupId::Heisenberg {
            checks.push(Check::within(
                name,
                ratio,
                expected,
                0.08 * expected,
                Source::Computed,
            ));
        } else {
            checks.push(Check::info(name, ratio, Some((expected, Source::Computed))));
        }
    }
    if let Some(q) = scan.exponent_upper {
        checks.push(Check::info(
            "fitted exponent",
            q,
            Some((4.0, Source::Published)),
        ));
    }
    if let Some(path) = &cfg.csv {
        scan.write_csv(create(path)?)?;
    }
    let data = serde_json::to_value(&scan).expect("scan serializes");
    Ok((echo(&cfg), checks, data))
}

#[derive(serde::Deserialize)]
struct BaseRow {
    s: f64,
    xi: f64,
    eta: f64,
}

pub fn lift(cfg: LiftConfig) -> Outcome {
    let Some(path) = &cfg.input else {
        return Err(Failure::Config("--input is required".into()));
    };
    let file = File::open(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut params = Vec::new();
    let mut base = Vec::new();
    for row in reader.deserialize() {
        let row: BaseRow = row.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        params.push(row.s);
        base.push(HyperbolicPoint::new(row.xi, row.eta)?);
    }
    let curve = curves::horizontal_lift(&params, &base, cfg.a0)?;
    let back = curves::project(&curve)?;
    let length = curves::hyperbolic_polyline_length(&base);
    // coarse inputs give chords too far from horizontal to measure
    let horizontal = match curves::horizontal_length(&curve) {
        Ok(l) => Some(l),
        Err(srlab::Error::NotHorizontal { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let mut checks = vec![
        Check::holds("projection of the lift is the input", back == base),
        Check::info(
            "horizontality defect",
            curves::horizontality_defect(&curve),
            None,
        ),
    ];
    if let Some(h) = horizontal {
        checks.push(Check::info(
            "horizontal length",
            h,
            Some((length, Source::Computed)),
        ));
    }
    if let Some(out) = &cfg.curve_out {
        curve.write_csv(create(out)?)?;
    }
    let data = json!({
        "points": curve.points().len(),
        "end": curve.end().coords(),
        "horizontal_length": horizontal,
        "hyperbolic_length": length,
    });
    Ok((echo(&cfg), checks, data))
}

pub fn full_report(cfg: ReportConfig) -> Outcome {
    let mut checks = verify(VerifyConfig {
        scope: Scope::All,
        samples: cfg.samples,
        seed: cfg.seed,
    })?
    .1;
    let fast = CcConfig::fast();
    let aa = GroupId::AffineAdditive;
    let p = GroupPoint::new(aa, 0.0, 1.0, 0.0)?;
    let q = GroupPoint::new(aa, 0.0, std::f64::consts::E, 0.0)?;
    let est = ccdist::cc_distance(aa, &p, &q, &fast)?;
    checks.push(Check::within(
        "d_aa((0,1,0),(0,e,0)) upper",
        est.upper,
        0.5,
        0.01,
        Source::Computed,
    ));
    checks.push(Check::within(
        "d_aa((0,1,0),(0,e,0)) lower",
        est.lower,
        0.5,
        1e-9,
        Source::Computed,
    ));
    let h = GroupId::Heisenberg;
    let d = ccdist::cc_distance(
        h,
        &groups::identity(h),
        &GroupPoint::new(h, 1.0, 0.0, 0.0)?,
        &fast,
    )?;
    checks.push(Check::within(
        "d_h(0,(1,0,0)) upper",
        d.upper,
        1.0,
        0.01,
        Source::Exact,
    ));
    let b =
        modulus::gamma0_modulus_bound(2, Some(&Gamma0Grid::default()), &SolverConfig::default())?;
    checks.push(Check::within(
        "aggregated constant",
        b.aggregated.value(),
        8.0,
        0.0,
        Source::Published,
    ));
    checks.push(Check::within(
        "Hölder majorant",
        b.holder_majorant.value(),
        12.0,
        0.0,
        Source::Published,
    ));
    checks.push(Check::info(
        "Hölder chain bound vs quoted 2⁴/3³",
        b.holder_bound.value(),
        Some((b.quoted_bound.value(), Source::Published)),
    ));
    let primal = b.discrete.as_ref().expect("grid given").primal;
    checks.push(Check::at_least(
        "Γ₂⁰ primal ≥ 16/27 − 0.05",
        primal,
        16.0 / 27.0 - 0.05,
        Source::Published,
    ));
    let rho = |n| RhoN::new(groups::identity(h), 1.0, n);
    let ratio = rho(6)?.energy_bound(1.0, 4.0, 4.0) / rho(12)?.energy_bound(1.0, 4.0, 4.0);
    checks.push(Check::within(
        "ρ_N energy bound(6)/bound(12)",
        ratio,
        8.0,
        1e-9,
        Source::Computed,
    ));
    checks.push(Check::at_least(
        "ρ_6 admissibility constant",
        rho(6)?.admissibility_bound(),
        1.0,
        Source::Published,
    ));
    let vols = measure::ball_volumes(
        h,
        &groups::identity(h),
        &[0.5, 1.0],
        &McConfig {
            samples: cfg.samples.max(20_000),
            seed: cfg.seed,
            ..McConfig::default()
        },
    )?;
    checks.push(Check::within(
        "ℍ v(1)/v(0.5)",
        vols[1].vol_upper / vols[0].vol_upper,
        16.0,
        1.28,
        Source::Computed,
    ));
    Ok((echo(&cfg), checks, Value::Null))
}
