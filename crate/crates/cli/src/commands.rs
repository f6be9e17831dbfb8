use std::fs;
use std::path::Path;

use openstab_core::report::AnalysisReport;
use openstab_core::simulation::{fit_decay, integrate, verify_les_with_trajectories, LesConfig, Trajectory};
use openstab_core::synthesis::{
    build_composition_h, fixpoint_control, law_semitransversal_1, law_semitransversal_2, law_shifted, law_transversal,
    FixpointConfig,
};
use openstab_core::{analyze as analyze_at, parse_system, Error, FeedbackLaw, JacobianSplit, Provenance, SystemDef};
use serde::Serialize;

use crate::failure::{Failure, EXIT_DOMAIN, EXIT_ENVELOPE, EXIT_NO_METHOD, EXIT_OTHER, EXIT_PARSE};
use crate::{Method, SchemaKind, SimulateArgs, SynthesizeArgs};

const ANALYSIS_SCHEMA: &str = include_str!("../schemas/analysis.schema.json");
const LAW_SCHEMA: &str = include_str!("../schemas/law.schema.json");
const FIT_SCHEMA: &str = include_str!("../schemas/fit.schema.json");

/// Tolerance on `‖f(0, 0)‖∞` for the origin to count as an equilibrium.
const EQUILIBRIUM_TOL: f64 = 1e-12;

/// Magnitude of the constant initial controls tried by `auto`.
const AUTO_U0: f64 = 0.1;

pub fn schema(kind: SchemaKind) -> &'static str {
    match kind {
        SchemaKind::Analysis => ANALYSIS_SCHEMA,
        SchemaKind::Law => LAW_SCHEMA,
        SchemaKind::Fit => FIT_SCHEMA,
    }
}

fn load_system(path: &Path) -> Result<SystemDef, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", path.display())))?;
    parse_system(&text).map_err(|e| {
        let f = Failure::from(e);
        Failure::new(f.code, format!("{}: {}", path.display(), f.message))
    })
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_OTHER, e.to_string()))?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn dim_check(what: &str, got: usize, want: usize) -> Result<(), Failure> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Dimension(format!("{what} needs {want} value(s), got {got}")).into())
    }
}

pub fn analyze(file: &Path, point: &[f64], out: Option<&Path>) -> Result<(), Failure> {
    let sys = load_system(file)?;
    let (n, m) = (sys.n(), sys.m());
    let point = if point.is_empty() { vec![0.0; n + m] } else { point.to_vec() };
    dim_check("--point", point.len(), n + m)?;
    let report: AnalysisReport = analyze_at(&sys, &point[..n], &point[n..])?;
    for w in &report.warnings {
        eprintln!("note: {w}");
    }
    emit(&report, out)
}

fn origin_split(sys: &SystemDef) -> Result<JacobianSplit, Failure> {
    let (zx, zu) = (vec![0.0; sys.n()], vec![0.0; sys.m()]);
    let f0 = sys.eval(&zx, &zu)?;
    if f0.amax() > EQUILIBRIUM_TOL {
        return Err(Failure::new(
            EXIT_NO_METHOD,
            format!("the origin is not an equilibrium: ‖f(0, 0)‖∞ = {:e}", f0.amax()),
        ));
    }
    Ok(JacobianSplit::of_system(sys, &zx, &zu)?)
}

fn t1(sys: &SystemDef) -> Result<FeedbackLaw, Failure> {
    let split = origin_split(sys)?;
    if split.n() != split.m() {
        return Err(Failure::new(EXIT_NO_METHOD, "t1 needs n = m"));
    }
    let tc = openstab_core::transversality::transversality_constant(&split, openstab_core::transversality::DEFAULT_TOL)?
        .ok_or_else(|| Failure::new(EXIT_NO_METHOD, "no transversality constant: A ≠ −cB for every c ≥ 0"))?;
    law_transversal(&split, tc.c).map_err(Failure::method)
}

fn st1(sys: &SystemDef) -> Result<FeedbackLaw, Failure> {
    let split = origin_split(sys)?;
    let q = openstab_core::transversality::transverse_factor(&split, openstab_core::transversality::DEFAULT_TOL)
        .ok_or_else(|| Failure::new(EXIT_NO_METHOD, "no transverse factor: A = −BQ has no solution"))?;
    law_semitransversal_1(&split, &q.q).map_err(Failure::method)
}

fn qt1(sys: &SystemDef) -> Result<FeedbackLaw, Failure> {
    law_semitransversal_2(&origin_split(sys)?).map_err(Failure::method)
}

fn composition(sys: &SystemDef) -> Result<FeedbackLaw, Failure> {
    let op = build_composition_h(sys).map_err(Failure::method)?;
    let mut law = FeedbackLaw::composition(op);
    let modified = law.effective_system(sys)?;
    let split = JacobianSplit::of_system(&modified, &vec![0.0; sys.n()], &vec![0.0; sys.m()])?;
    law.closed_loop_check = Some(openstab_core::synthesis::closed_loop_gap(&split, law.gain().expect("linear")));
    Ok(law)
}

fn shift(sys: &SystemDef, args: &SynthesizeArgs) -> Result<FeedbackLaw, Failure> {
    dim_check("--x1", args.x1.len(), sys.n())?;
    dim_check("--u1", args.u1.len(), sys.m())?;
    law_shifted(sys, &args.x1, &args.u1).map_err(Failure::method)
}

fn parse_box(text: &str, n: usize) -> Result<(Vec<f64>, Vec<f64>), Failure> {
    let bad = || Failure::new(EXIT_PARSE, format!("--box expects `lo:hi` per axis separated by commas, got `{text}`"));
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for part in text.split(',') {
        let (lo, hi) = part.split_once(':').ok_or_else(bad)?;
        lower.push(lo.trim().parse::<f64>().map_err(|_| bad())?);
        upper.push(hi.trim().parse::<f64>().map_err(|_| bad())?);
    }
    dim_check("--box", lower.len(), n)?;
    Ok((lower, upper))
}

fn fixpoint_config(args: &SynthesizeArgs) -> FixpointConfig {
    FixpointConfig {
        radius: args.radius,
        grid_n: args.grid_n,
        damping: args.damping,
        max_iter: args.max_iter,
        tol: args.tol,
        ..FixpointConfig::default()
    }
}

/// Candidate boxes and initial controls. An explicit `--box`/`--u0` is used
/// as given; otherwise the symmetric cube with `u0 = 0` is tried first, then
/// every orthant box with `u0 = ±0.1`.
fn fixpoint_candidates(sys: &SystemDef, args: &SynthesizeArgs) -> Result<Vec<FixpointConfig>, Failure> {
    let (n, m) = (sys.n(), sys.m());
    let base = fixpoint_config(args);
    if !args.u0.is_empty() {
        dim_check("--u0", args.u0.len(), m)?;
    }
    if args.grid_box.is_some() || !args.u0.is_empty() {
        let mut cfg = base;
        if let Some(b) = &args.grid_box {
            let (lo, hi) = parse_box(b, n)?;
            cfg.lower = Some(lo);
            cfg.upper = Some(hi);
        }
        cfg.u0 = (!args.u0.is_empty()).then(|| args.u0.clone());
        return Ok(vec![cfg]);
    }
    let half = args.radius / (n as f64).sqrt();
    let mut out = vec![base.clone()];
    for signs in 0..(1usize << n) {
        let (lo, hi): (Vec<f64>, Vec<f64>) =
            (0..n).map(|i| if signs >> i & 1 == 0 { (0.0, half) } else { (-half, 0.0) }).unzip();
        for u0 in [AUTO_U0, -AUTO_U0] {
            out.push(FixpointConfig {
                lower: Some(lo.clone()),
                upper: Some(hi.clone()),
                u0: Some(vec![u0; m]),
                ..base.clone()
            });
        }
    }
    Ok(out)
}

fn describe(cfg: &FixpointConfig) -> String {
    let u0 = cfg.u0.as_ref().map_or_else(|| "0".to_string(), |u| format!("{u:?}"));
    match (&cfg.lower, &cfg.upper) {
        (Some(lo), Some(hi)) => {
            let axes: Vec<String> = lo.iter().zip(hi).map(|(a, b)| format!("{a}:{b}")).collect();
            format!("box {} with u0 = {u0}", axes.join(","))
        }
        _ => format!("cube of radius {} with u0 = {u0}", cfg.radius),
    }
}

fn fixpoint(sys: &SystemDef, args: &SynthesizeArgs) -> Result<FeedbackLaw, Failure> {
    let candidates = fixpoint_candidates(sys, args)?;
    let single = candidates.len() == 1;
    let mut tried = Vec::new();
    for cfg in candidates {
        match fixpoint_control(sys, &cfg) {
            Ok(grid) => {
                let stats = grid.stats.clone().expect("fixpoint sets statistics");
                eprintln!(
                    "note: fixed-point iteration on {}: {} after {} iteration(s), residual {:e}",
                    describe(&cfg),
                    if stats.converged { "converged" } else { "did not converge" },
                    stats.iterations,
                    stats.residual
                );
                if stats.converged || single {
                    return Ok(FeedbackLaw::grid(grid, Provenance::STII));
                }
                tried.push(format!("{}: no convergence (residual {:e})", describe(&cfg), stats.residual));
            }
            Err(e @ (Error::Precondition(_) | Error::NotLinearlyOpen | Error::RankDeficient(_))) => {
                tried.push(format!("{}: {e}", describe(&cfg)));
            }
            Err(e) if !single => tried.push(format!("{}: {e}", describe(&cfg))),
            Err(e) => return Err(e.into()),
        }
    }
    const SHOWN: usize = 3;
    let mut msg = format!("fixed-point route does not apply ({} configuration(s) tried):", tried.len());
    for t in tried.iter().take(SHOWN) {
        msg.push_str("\n  ");
        msg.push_str(t);
    }
    if tried.len() > SHOWN {
        msg.push_str(&format!("\n  ... and {} more", tried.len() - SHOWN));
    }
    Err(Failure::new(EXIT_NO_METHOD, msg))
}

fn synthesize_law(sys: &SystemDef, args: &SynthesizeArgs) -> Result<FeedbackLaw, Failure> {
    match args.method {
        Method::T1 => t1(sys),
        Method::St1 => st1(sys),
        Method::Qt1 => qt1(sys),
        Method::Shift => shift(sys, args),
        Method::Composition => composition(sys),
        Method::Fixpoint => fixpoint(sys, args),
        Method::Auto => {
            let routes: [(&str, fn(&SystemDef) -> Result<FeedbackLaw, Failure>); 4] =
                [("t1", t1), ("st1", st1), ("qt1", qt1), ("composition", composition)];
            let mut reasons = Vec::new();
            for (name, route) in routes {
                match route(sys) {
                    Ok(law) => {
                        eprintln!("note: auto selected {name}");
                        return Ok(law);
                    }
                    Err(f) if f.code == EXIT_NO_METHOD => reasons.push(format!("{name}: {}", f.message)),
                    Err(f) => return Err(f),
                }
            }
            match fixpoint(sys, args) {
                Ok(law) => {
                    eprintln!("note: auto selected fixpoint");
                    Ok(law)
                }
                Err(f) if f.code == EXIT_NO_METHOD => {
                    reasons.push(format!("fixpoint: {}", f.message));
                    Err(Failure::new(EXIT_NO_METHOD, format!("no method applies\n{}", reasons.join("\n"))))
                }
                Err(f) => Err(f),
            }
        }
    }
}

pub fn synthesize(args: &SynthesizeArgs) -> Result<(), Failure> {
    let sys = load_system(&args.file)?;
    let law = synthesize_law(&sys, args)?;
    if let (Some(path), Some(grid)) = (&args.grid_csv, law.grid_control()) {
        fs::write(path, grid.to_csv())?;
    }
    emit(&law, args.out.as_deref())
}

fn write_csvs(dir: &Path, trajs: &[Trajectory]) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    for (k, t) in trajs.iter().enumerate() {
        fs::write(dir.join(format!("traj_{k:03}.csv")), t.to_csv())?;
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let sys = load_system(&args.file)?;
    let text = fs::read_to_string(&args.law).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", args.law.display())))?;
    let law = FeedbackLaw::from_json(&text)?;
    if law.n != sys.n() || law.m != sys.m() {
        return Err(Error::Dimension(format!(
            "law is for n = {}, m = {} but the system has n = {}, m = {}",
            law.n,
            law.m,
            sys.n(),
            sys.m()
        ))
        .into());
    }
    let (fit, trajs) = if args.x0.is_empty() {
        let cfg = LesConfig {
            delta: args.delta,
            samples: args.samples,
            t_end: args.t_end,
            step: args.step,
            seed: args.seed,
        };
        verify_les_with_trajectories(&sys, &law, &cfg)?
    } else {
        dim_check("--x0", args.x0.len(), sys.n())?;
        let traj = integrate(&sys, &law, &args.x0, args.t_end, args.step)?;
        let norm = args.x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let delta = if norm < args.delta { args.delta } else { 2.0 * norm };
        let trajs = vec![traj];
        (fit_decay(&trajs, delta)?, trajs)
    };
    if let Some(dir) = &args.csv_dir {
        write_csvs(dir, &trajs)?;
    }
    emit(&fit, args.out.as_deref())?;
    if fit.truncated > 0 {
        return Err(Failure::new(
            EXIT_DOMAIN,
            format!("{} trajectory(ies) left the law's domain", fit.truncated),
        ));
    }
    if !fit.envelope_ok {
        return Err(Failure::new(
            EXIT_ENVELOPE,
            format!("no exponential envelope: alpha = {}, M = {}", fit.alpha, fit.m_factor),
        ));
    }
    Ok(())
}
