//! Subcommands and exit codes.

use std::path::PathBuf;
use std::time::Instant;

use biconf_core::biconformal::PointPipeline;
use biconf_core::oracle::{compare_b, compare_bar_r, compare_l_pi, compare_t, Comparison};
use biconf_core::{
    analyze_point, assemble, check_involutive, evaluate_pipeline, involutivity_gate, Aggregate,
    AnalysisError, DenseTensor, FormulaVariant, Involutivity, PointStatus, SamplePlan,
};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{parse_config, RunConfig};
use crate::report::{Report, Timing};

pub mod exit_code {
    /// Leaves conformally flat at every evaluated point (or check passed).
    pub const FLAT: u8 = 0;
    /// A decisive nonzero obstruction (or failed oracle comparison).
    pub const NOT_FLAT: u8 = 1;
    /// Residual within ten times the threshold somewhere.
    pub const INDETERMINATE: u8 = 2;
    /// Unreadable or invalid configuration, bad flags.
    pub const BAD_CONFIG: u8 = 3;
    /// Every sample point was degenerate or outside the chart domain.
    pub const DEGENERATE: u8 = 4;
    /// The distribution is not involutive.
    pub const NOT_INVOLUTIVE: u8 = 5;
    /// Any other evaluation failure.
    pub const ERROR: u8 = 6;
}

#[derive(Debug, Parser)]
#[command(name = "biconf", version, about = "Pointwise conformal-flatness tests for the leaves of a foliation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full pipeline and verdict.
    Analyze(CommonArgs),
    /// Frobenius check of the distribution only.
    Involutivity(CommonArgs),
    /// Dump every intermediate tensor at the sample points.
    Tensors(CommonArgs),
    /// Compare against the induced-metric oracle on a coordinate slice.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "X")]
    pub tol_abs: Option<f64>,
    #[arg(long, value_name = "X")]
    pub tol_rel: Option<f64>,
    /// Worker threads for per-point evaluation.
    #[arg(long, value_name = "K", default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Overrides the box-sampling seed.
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Index of the coordinate held fixed on the leaves.
    #[arg(long, value_name = "K")]
    pub slice: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
    pub report: Option<Report>,
}

impl Outcome {
    fn fail(code: u8, msg: impl std::fmt::Display) -> Self {
        Outcome {
            code,
            stdout: String::new(),
            stderr: format!("error: {msg}\n"),
            report: None,
        }
    }
}

struct Prepared {
    config: RunConfig,
    points: Vec<Vec<f64>>,
    report_path: Option<PathBuf>,
    notes: Vec<String>,
}

fn prepare(args: &CommonArgs) -> Result<Prepared, Outcome> {
    let mut config =
        parse_config(&args.config).map_err(|e| Outcome::fail(exit_code::BAD_CONFIG, e))?;
    if let Some(a) = args.tol_abs {
        config.tolerances.atol = a;
    }
    if let Some(r) = args.tol_rel {
        config.tolerances.rtol = r;
    }
    let t = config.tolerances;
    if !(t.atol >= 0.0 && t.rtol >= 0.0) {
        return Err(Outcome::fail(exit_code::BAD_CONFIG, "tolerances must be non-negative"));
    }
    if args.jobs == 0 {
        return Err(Outcome::fail(exit_code::BAD_CONFIG, "--jobs must be at least 1"));
    }
    let mut notes = vec![];
    if let Some(s) = args.seed {
        match &mut config.sampling {
            SamplePlan::Box { seed, .. } => *seed = s,
            SamplePlan::Explicit(_) => notes.push("--seed ignored: explicit sampling".to_string()),
        }
    }
    let n = config.chart.dim();
    config
        .distribution
        .validate(n)
        .map_err(|e| Outcome::fail(exit_code::BAD_CONFIG, e))?;
    let points = config
        .sampling
        .points(n)
        .map_err(|e| Outcome::fail(exit_code::BAD_CONFIG, e))?;
    let report_path = args.report.clone().or_else(|| config.report.clone());
    Ok(Prepared {
        config,
        points,
        report_path,
        notes,
    })
}

fn finish(mut out: Outcome, mut report: Report, path: Option<&PathBuf>, start: Instant) -> Outcome {
    report.timing = Timing {
        seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(p) = path {
        if let Err(e) = std::fs::write(p, report.to_json()) {
            out.stderr.push_str(&format!("error: cannot write report {}: {e}\n", p.display()));
            if out.code == exit_code::FLAT {
                out.code = exit_code::ERROR;
            }
        }
    }
    out.report = Some(report);
    out
}

fn analysis_exit(e: &AnalysisError) -> u8 {
    match e {
        AnalysisError::NotInvolutive { .. } => exit_code::NOT_INVOLUTIVE,
        AnalysisError::InvalidDistribution(_) | AnalysisError::InvalidPlan(_) => exit_code::BAD_CONFIG,
        _ => exit_code::ERROR,
    }
}

fn pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool")
}

pub fn execute(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Involutivity(a) => involutivity(a),
        Command::Tensors(a) => tensors(a),
        Command::Verify(v) => verify(v),
    }
}

fn analyze(args: &CommonArgs) -> Outcome {
    let start = Instant::now();
    let prep = match prepare(args) {
        Ok(p) => p,
        Err(o) => return o,
    };
    let cfg = &prep.config;
    let tol = cfg.tolerances;
    let mut report = Report::new("analyze", &cfg.digest, &cfg.chart, tol);
    report.diagnostics.notes.extend(prep.notes.iter().cloned());
    let involutivity = match involutivity_gate(&cfg.distribution, &cfg.chart, &prep.points, tol) {
        Ok(i) => i,
        Err(e) => {
            let code = analysis_exit(&e);
            if let AnalysisError::NotInvolutive {
                point,
                witness,
                residual,
            } = &e
            {
                report.diagnostics.involutivity = Some(
                    (&Involutivity::Fail {
                        point: point.clone(),
                        witness: witness.clone(),
                        residual: *residual,
                    })
                        .into(),
                );
            }
            let out = Outcome::fail(code, &e);
            return finish(out, report, prep.report_path.as_ref(), start);
        }
    };
    let records = pool(args.jobs).install(|| {
        prep.points
            .par_iter()
            .enumerate()
            .map(|(i, p)| analyze_point(&cfg.chart, &cfg.distribution, i, p, tol))
            .collect::<Result<Vec<_>, _>>()
    });
    let records = match records {
        Ok(r) => r,
        Err(e) => return finish(Outcome::fail(analysis_exit(&e), &e), report, prep.report_path.as_ref(), start),
    };
    let verdict = assemble(records, involutivity);
    report = report.with_verdict(&verdict, &cfg.chart);
    let code = match verdict.aggregate {
        Aggregate::ConformallyFlat => exit_code::FLAT,
        Aggregate::NotConformallyFlat => exit_code::NOT_FLAT,
        Aggregate::IndeterminateNearTolerance => exit_code::INDETERMINATE,
        Aggregate::IndeterminateDegenerate => exit_code::DEGENERATE,
    };
    let mut stdout = String::new();
    if cfg.verbosity >= 2 {
        for p in &report.points {
            let line = match (&p.skipped_reason, &p.case) {
                (Some(reason), _) => format!("point {}: skipped ({})", p.index, reason.describe()),
                (None, Some(case)) => format!(
                    "point {}: {case} residual {:.3e} scale {:.3e} {}",
                    p.index,
                    p.residual,
                    p.scale,
                    status_word(p.status)
                ),
                (None, None) => format!("point {}", p.index),
            };
            stdout.push_str(&line);
            stdout.push('\n');
        }
    }
    if cfg.verbosity >= 1 {
        let d = &report.diagnostics;
        stdout.push_str(&format!(
            "aggregate: {} ({} of {} points evaluated, {} skipped)\nleaves: {}\n",
            verdict.aggregate.as_str(),
            d.points_evaluated,
            d.points_total,
            d.points_skipped,
            verdict.flatness.as_str()
        ));
        if let Some(w) = report
            .points
            .iter()
            .filter(|p| p.status == PointStatus::Fail)
            .find_map(|p| p.worst_component.as_ref())
        {
            stdout.push_str(&format!("failing component: ({}) = {:.6e}\n", w.names.join(","), w.value));
        }
    }
    let out = Outcome {
        code,
        stdout,
        stderr: String::new(),
        report: None,
    };
    finish(out, report, prep.report_path.as_ref(), start)
}

fn status_word(s: PointStatus) -> &'static str {
    match s {
        PointStatus::Pass => "pass",
        PointStatus::Marginal => "marginal",
        PointStatus::Fail => "fail",
        PointStatus::Skipped => "skipped",
    }
}

fn involutivity(args: &CommonArgs) -> Outcome {
    let start = Instant::now();
    let prep = match prepare(args) {
        Ok(p) => p,
        Err(o) => return o,
    };
    let cfg = &prep.config;
    let mut report = Report::new("involutivity", &cfg.digest, &cfg.chart, cfg.tolerances);
    report.diagnostics.notes.extend(prep.notes.iter().cloned());
    report.diagnostics.points_total = prep.points.len();
    let res = match check_involutive(&cfg.distribution, &cfg.chart, &prep.points, cfg.tolerances) {
        Ok(r) => r,
        Err(e) => return finish(Outcome::fail(analysis_exit(&e), &e), report, prep.report_path.as_ref(), start),
    };
    report.diagnostics.involutivity = Some((&res).into());
    let (code, line) = match &res {
        Involutivity::Ok {
            max_residual,
            points_checked,
        } => (
            exit_code::FLAT,
            format!("involutive at {points_checked} points (max residual {max_residual:.3e})\n"),
        ),
        Involutivity::Fail {
            point,
            witness,
            residual,
        } => (
            exit_code::NOT_INVOLUTIVE,
            format!("not involutive at {point:?}: {witness} = {residual:.6e}\n"),
        ),
    };
    let out = Outcome {
        code,
        stdout: if cfg.verbosity >= 1 { line } else { String::new() },
        stderr: String::new(),
        report: None,
    };
    finish(out, report, prep.report_path.as_ref(), start)
}

#[derive(Serialize)]
struct TensorDump {
    variance: Vec<biconf_core::Variance>,
    dim: usize,
    /// Row-major components.
    values: Vec<f64>,
}

impl TensorDump {
    fn new<S: biconf_core::Scalar>(t: &DenseTensor<S>) -> Self {
        let v = t.values();
        TensorDump {
            variance: v.variance().to_vec(),
            dim: v.dim(),
            values: v.components().to_vec(),
        }
    }
}

fn dump_pipeline(p: &PointPipeline) -> serde_json::Value {
    let d = |t: &DenseTensor<biconf_core::Jet>| serde_json::to_value(TensorDump::new(t)).unwrap();
    let df = |t: &DenseTensor<f64>| serde_json::to_value(TensorDump::new(t)).unwrap();
    let pr = &p.projectors;
    let mut v = json!({
        "g": d(&p.metric.g),
        "g_inv": d(&p.metric.g_inv),
        "christoffel": d(&p.levi_civita.coeffs),
        "p": pr.p,
        "P_mixed": d(&pr.p_mixed),
        "Pi_mixed": d(&pr.pi_mixed),
        "P_low": d(&pr.p_low),
        "Pi_low": d(&pr.pi_low),
        "projector_residual": pr.invariant_residual(&p.metric),
        "M": d(&p.deformation.m),
        "E": d(&p.deformation.e),
        "W": d(&p.deformation.w),
        "L": d(&p.deformation.l),
        "bar_christoffel": d(&p.bar_connection.coeffs),
        "bar_riemann": d(&p.bar_riemann),
    });
    if let Some(o) = &p.obstructions {
        let m = v.as_object_mut().unwrap();
        m.insert("L_Pi".into(), d(&o.l_pi));
        m.insert("R_Pi".into(), json!(o.r_pi));
        m.insert("barR_parallel".into(), df(&o.bar_r_parallel));
        m.insert("barR_scale".into(), json!(o.bar_r_scale));
        if let Some(t) = &o.t_parallel {
            m.insert("T_parallel".into(), df(t));
            m.insert("T_scale".into(), json!(o.t_scale));
        }
        if let Some(b) = &o.b_parallel {
            m.insert("B_parallel".into(), df(b));
            m.insert("B_scale".into(), json!(o.b_scale));
        }
    }
    v
}

fn tensors(args: &CommonArgs) -> Outcome {
    let start = Instant::now();
    let prep = match prepare(args) {
        Ok(p) => p,
        Err(o) => return o,
    };
    let cfg = &prep.config;
    let mut report = Report::new("tensors", &cfg.digest, &cfg.chart, cfg.tolerances);
    report.diagnostics.notes.extend(prep.notes.iter().cloned());
    report.diagnostics.points_total = prep.points.len();
    let dumps = pool(args.jobs).install(|| {
        prep.points
            .par_iter()
            .map(|p| {
                evaluate_pipeline(&cfg.chart, &cfg.distribution, p, FormulaVariant::default()).map(|r| match r {
                    Ok(pipe) => {
                        let mut v = dump_pipeline(&pipe);
                        v.as_object_mut().unwrap().insert("point".into(), json!(p));
                        v
                    }
                    Err(reason) => json!({ "point": p, "skipped_reason": reason }),
                })
            })
            .collect::<Result<Vec<_>, _>>()
    });
    let dumps = match dumps {
        Ok(d) => d,
        Err(e) => return finish(Outcome::fail(analysis_exit(&e), &e), report, prep.report_path.as_ref(), start),
    };
    let skipped = dumps.iter().filter(|d| d.get("skipped_reason").is_some()).count();
    report.diagnostics.points_skipped = skipped;
    report.diagnostics.points_evaluated = dumps.len() - skipped;
    report.details = Some(json!({ "points": dumps }));
    let stdout = if prep.report_path.is_none() {
        report.to_json()
    } else if cfg.verbosity >= 1 {
        format!("dumped tensors at {} points\n", dumps.len())
    } else {
        String::new()
    };
    let out = Outcome {
        code: exit_code::FLAT,
        stdout,
        stderr: String::new(),
        report: None,
    };
    finish(out, report, prep.report_path.as_ref(), start)
}

fn verify(args: &VerifyArgs) -> Outcome {
    let start = Instant::now();
    let prep = match prepare(&args.common) {
        Ok(p) => p,
        Err(o) => return o,
    };
    let cfg = &prep.config;
    let n = cfg.chart.dim();
    let Some(k) = args.slice.or(cfg.oracle.slice) else {
        return Outcome::fail(exit_code::BAD_CONFIG, "verify needs --slice or [oracle] slice");
    };
    if k >= n {
        return Outcome::fail(exit_code::BAD_CONFIG, format!("slice {k} out of range for dimension {n}"));
    }
    let mut report = Report::new("verify", &cfg.digest, &cfg.chart, cfg.tolerances);
    report.diagnostics.notes.extend(prep.notes.iter().cloned());
    report
        .diagnostics
        .notes
        .push(format!("oracle uses the slice foliation x^{k} = const; [distribution] is not used"));
    report.diagnostics.points_total = prep.points.len();
    let leaf = n - 1;
    let mut checks: Vec<(&str, Result<Comparison, _>)> = vec![];
    if leaf >= 4 {
        checks.push(("T_parallel vs 2 Weyl", compare_t(&cfg.chart, k, &prep.points)));
    }
    if leaf == 3 {
        checks.push(("B_parallel vs intrinsic Cotton-type", compare_b(&cfg.chart, k, &prep.points)));
    }
    if leaf >= 2 {
        checks.push((
            "L_Pi vs 2 Ric + R g/(1-n)",
            compare_l_pi(&cfg.chart, k, &prep.points, FormulaVariant::default()),
        ));
        checks.push(("barR_parallel vs leaf Riemann", compare_bar_r(&cfg.chart, k, &prep.points)));
    }
    let mut results = vec![];
    let mut stdout = String::new();
    let mut ok = true;
    for (name, res) in checks {
        match res {
            Ok(c) => {
                let pass = c.deviation <= cfg.oracle.max_deviation;
                ok &= pass;
                stdout.push_str(&format!(
                    "{name}: deviation {:.3e} ({})\n",
                    c.deviation,
                    if pass { "ok" } else { "FAILED" }
                ));
                results.push(json!({ "check": name, "pass": pass, "comparison": c }));
            }
            Err(e) => {
                let out = Outcome::fail(exit_code::ERROR, format!("{name}: {e}"));
                return finish(out, report, prep.report_path.as_ref(), start);
            }
        }
    }
    report.details = Some(json!({
        "slice": k,
        "max_deviation": cfg.oracle.max_deviation,
        "checks": results,
    }));
    let out = Outcome {
        code: if ok { exit_code::FLAT } else { exit_code::NOT_FLAT },
        stdout: if cfg.verbosity >= 1 { stdout } else { String::new() },
        stderr: String::new(),
        report: None,
    };
    finish(out, report, prep.report_path.as_ref(), start)
}
