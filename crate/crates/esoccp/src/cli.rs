//! Command-line surface. Every command prints one JSON document on stdout
//! (errors included) and returns the process exit code: 0 on success, 1 on an
//! algorithmic failure, 2 on bad input.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::cones::ConeSpec;
use crate::error::{Error, Result};
use crate::esoclcp::{demo_instance, MixCpInstance};
use crate::io::{self, InputDigest, ProblemFile, RunManifest, ScenarioFile};
use crate::portfolio::{self, PortfolioInstance};
use crate::solvers::{solve_esoclcp, SolverConfig, SolverKind, SolverStatus};
use crate::spherical::{self, QcConfig, Verdict};
use crate::stochastic::{
    aloc, solve_mean_fb, solve_saa, var_cvar_empirical, CvarConfig, ScenarioEvaluator, ScenarioModel,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// Caps the rayon pool when set to a positive integer.
pub const THREADS_ENV: &str = "ESOCCP_THREADS";

#[derive(Parser, Debug)]
#[command(name = "esoccp", version, about = "Complementarity problems on extended second order cones")]
pub struct Cli {
    /// Include wall-clock times in the output (breaks byte-identical reruns).
    #[arg(long, global = true)]
    pub timings: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve a deterministic LCP over L(k, l).
    SolveLcp(SolveLcpArgs),
    /// Run the CVaR sample-average solver on a scenario model.
    SolveSlcp(SolveSlcpArgs),
    /// Portfolio weights under the MV, MAD or MEN model.
    Portfolio(PortfolioArgs),
    /// Quasi-convexity verdict for x'Ax on the orthant or the Lorentz cone.
    Spherical(SphericalArgs),
    /// Hold-rates of the MEN feasibility conditions over random instances.
    Experiment(ExperimentArgs),
    /// Write the sample input files into a directory.
    ExportDemo { dir: PathBuf },
}

#[derive(Args, Debug)]
pub struct SolveLcpArgs {
    pub problem: PathBuf,
    /// newton, lm or linesearch.
    #[arg(long, default_value = "lm")]
    pub solver: SolverKind,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Start point (x~, u, t) of the reformulated problem, comma separated,
    /// k + l + 1 values. Default x~ = e, u = e, t = |u|.
    #[arg(long)]
    pub x0: Option<String>,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SolveSlcpArgs {
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Comma separated, strictly increasing.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Overrides the seed in the model file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub warm_start: bool,
    /// Start point (x~, u, t), as for solve-lcp.
    #[arg(long)]
    pub x0: Option<String>,
    /// Also write the report JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "saa")]
    pub method: SlcpMethod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SlcpMethod {
    /// Smoothed CVaR sample-average solver.
    Saa,
    /// Root of the batch-averaged FB residual, one batch per size.
    MeanFb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PortfolioModel {
    Mv,
    Mad,
    Men,
}

#[derive(Args, Debug)]
pub struct PortfolioArgs {
    /// CSV `scenario,prob,asset1..assetN` or JSON `{R, f, c0}`.
    pub returns: PathBuf,
    #[arg(long, value_enum, default_value = "men")]
    pub model: PortfolioModel,
    #[arg(long)]
    pub c0: Option<f64>,
    /// MV with the identity in place of the scenario covariance.
    #[arg(long)]
    pub identity_cov: bool,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConeArg {
    Orthant,
    Lorentz,
}

#[derive(Args, Debug)]
pub struct SphericalArgs {
    pub matrix: PathBuf,
    #[arg(long, value_enum, default_value = "orthant")]
    pub cone: ConeArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Largest n for exact orthant copositivity.
    #[arg(long)]
    pub n_limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long, default_value = "3")]
    pub n: String,
    #[arg(long, default_value = "5,20,100,500")]
    pub t: String,
    #[arg(long, default_value = "2")]
    pub c0: String,
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also write the rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Singular(_)
        | Error::SchurUnavailable
        | Error::Infeasible { .. }
        | Error::Undecidable { .. }
        | Error::WitnessUnavailable(_) => EXIT_FAILURE,
        Error::Dimension(_) | Error::InvalidInput(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => EXIT_INPUT,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension(_) => "Dimension",
        Error::InvalidInput(_) => "InvalidInput",
        Error::Singular(_) => "Singular",
        Error::SchurUnavailable => "SchurUnavailable",
        Error::Infeasible { .. } => "Infeasible",
        Error::Undecidable { .. } => "Undecidable",
        Error::WitnessUnavailable(_) => "WitnessUnavailable",
        Error::Io(_) => "Io",
        Error::Json(_) => "Json",
        Error::Csv(_) => "Csv",
    }
}

fn error_body(e: &Error) -> Value {
    let mut body = json!({ "kind": error_kind(e), "message": e.to_string() });
    if let Error::Infeasible { iv_value } = e {
        body["iv_value"] = json!(iv_value);
    }
    json!({ "error": body })
}

struct Outcome {
    code: i32,
    body: Value,
}

/// Applies `ESOCCP_THREADS` to the global rayon pool. Later calls are no-ops.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses `args` (program name first), runs the command, writes its JSON to
/// `out` and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let clock = Instant::now();
    let result = match &cli.command {
        Command::SolveLcp(a) => cmd_solve_lcp(a),
        Command::SolveSlcp(a) => cmd_solve_slcp(a, cli.timings),
        Command::Portfolio(a) => cmd_portfolio(a),
        Command::Spherical(a) => cmd_spherical(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::ExportDemo { dir } => cmd_export_demo(dir),
    };
    let (code, mut body) = match result {
        Ok(o) => (o.code, o.body),
        Err(e) => {
            eprintln!("esoccp: {e}");
            (exit_code(&e), error_body(&e))
        }
    };
    if cli.timings {
        if let Some(m) = body.get_mut("manifest") {
            m["wall_clock_s"] = json!(clock.elapsed().as_secs_f64());
        }
    }
    let text = serde_json::to_string_pretty(&body).expect("json values serialize");
    if writeln!(out, "{text}").is_err() {
        return EXIT_INPUT;
    }
    code
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| Error::InvalidInput(format!("{what}: cannot parse {t:?}"))))
        .collect()
}

fn coupled_start(k: usize, l: usize) -> DVector<f64> {
    let u = DVector::from_element(l, 1.0);
    MixCpInstance::stack(&DVector::from_element(k, 1.0), &u, u.norm())
}

fn manifest(command: &str, inputs: Vec<InputDigest>, seed: Option<u64>, config: Value) -> Value {
    serde_json::to_value(RunManifest::new(command, inputs, seed, config)).expect("manifest serializes")
}

fn cmd_solve_lcp(a: &SolveLcpArgs) -> Result<Outcome> {
    let (text, digest) = io::read_text(&a.problem)?;
    let pf: ProblemFile = serde_json::from_str(&text)?;
    let inst = pf.to_instance()?;
    let mut cfg = SolverConfig::default();
    if let Some(t) = a.tol {
        cfg.tol = t;
    }
    if let Some(m) = a.max_iter {
        cfg.max_iter = m;
    }
    cfg.validate()?;
    let z0 = match &a.x0 {
        Some(s) => DVector::from_vec(parse_list::<f64>(s, "--x0")?),
        None => coupled_start(inst.k, inst.l),
    };
    let sol = solve_esoclcp(&inst, a.solver, Some(&z0), &cfg)?;
    if let Some(p) = &a.trace_out {
        sol.trace.write_csv(std::fs::File::create(p)?)?;
    }
    let converged = sol.trace.status == SolverStatus::Converged;
    let verified = sol.verify.as_ref().is_some_and(|v| v.passed);
    let config = json!({ "solver": a.solver, "solver_config": cfg, "z0": z0.as_slice() });
    let body = json!({
        "manifest": manifest("solve-lcp", vec![digest], None, config),
        "status": sol.trace.status,
        "converged": converged,
        "verified": verified,
        "iterations": sol.trace.iterations,
        "final_merit": sol.trace.final_merit(),
        "x": sol.x.as_slice(),
        "u": sol.u.as_slice(),
        "z": sol.z.as_slice(),
        "verify": sol.verify,
    });
    Ok(Outcome { code: if converged && verified { EXIT_OK } else { EXIT_FAILURE }, body })
}

fn cmd_solve_slcp(a: &SolveSlcpArgs, timings: bool) -> Result<Outcome> {
    let (text, digest) = io::read_text(&a.model)?;
    let mut sf: ScenarioFile = serde_json::from_str(&text)?;
    if let Some(s) = a.seed {
        sf.seed = s;
    }
    let model: ScenarioModel = sf.to_model()?;
    let mut cfg = CvarConfig { alpha: a.alpha, warm_start: a.warm_start, ..CvarConfig::default() };
    if let Some(s) = &a.sizes {
        cfg.sample_sizes = parse_list::<usize>(s, "--sizes")?;
    }
    if let Some(k) = a.k_max {
        cfg.k_max = k;
    }
    let solver_cfg = SolverConfig::default();
    let (k, l) = (model.base.k, model.base.l);
    let z0 = match &a.x0 {
        Some(s) => DVector::from_vec(parse_list::<f64>(s, "--x0")?),
        None => coupled_start(k, l),
    };
    if a.method == SlcpMethod::MeanFb {
        return slcp_mean_fb(a, &model, &cfg, &solver_cfg, &z0, digest, timings);
    }
    let (z, theta, report) = solve_saa(&model, &cfg, &solver_cfg, &z0)?;
    let mut stages = serde_json::to_value(&report.stages).expect("report serializes");
    if !timings {
        for s in stages.as_array_mut().expect("array") {
            s.as_object_mut().expect("object").remove("runtime_s");
        }
    }
    let last = report.last();
    let config = json!({ "method": "saa", "cvar": cfg, "solver_config": solver_cfg, "z0": z0.as_slice() });
    let body = json!({
        "manifest": manifest("solve-slcp", vec![digest], Some(model.seed), config),
        "stages": stages,
        "stopped_early": report.stopped_early,
        "z": z.as_slice(),
        "solution": last.solution,
        "theta": theta,
        "aloc": last.aloc,
    });
    if let Some(p) = &a.report {
        let text = serde_json::to_string_pretty(&body).expect("json values serialize");
        std::fs::write(p, text + "\n")?;
    }
    Ok(Outcome { code: EXIT_OK, body })
}

/// Stage `j` uses the same scenario stream as the SAA solver, so both
/// methods see identical batches.
fn slcp_mean_fb(
    a: &SolveSlcpArgs,
    model: &ScenarioModel,
    cfg: &CvarConfig,
    solver_cfg: &SolverConfig,
    z0: &DVector<f64>,
    digest: InputDigest,
    timings: bool,
) -> Result<Outcome> {
    cfg.validate()?;
    let ev = ScenarioEvaluator::new(model);
    let (k, l) = (model.base.k, model.base.l);
    let mut stages = Vec::new();
    let mut last = (z0.clone(), f64::NAN, 0.0);
    let mut all_converged = true;
    for (j, &n) in cfg.sample_sizes.iter().enumerate() {
        let clock = Instant::now();
        let batch = model.sample_batch(n, j as u64);
        let (z, residual, iters) = solve_mean_fb(model, &batch, z0, solver_cfg)?;
        let converged = residual <= solver_cfg.tol;
        all_converged &= converged;
        let (var, _) = var_cvar_empirical(&ev.thetas(&z, &batch), cfg.alpha)?;
        let al = aloc(model, &z, &batch)?;
        let solution: Vec<f64> =
            z.rows(0, k).add_scalar(z[k + l]).iter().chain(z.rows(k, l).iter()).copied().collect();
        let mut st = json!({
            "stage": j + 1,
            "n": n,
            "z": z.as_slice(),
            "solution": solution,
            "residual": residual,
            "converged": converged,
            "iterations": iters,
            "var": var,
            "aloc": al,
        });
        if timings {
            st["runtime_s"] = json!(clock.elapsed().as_secs_f64());
        }
        stages.push(st);
        last = (z, var, al);
    }
    let (z, var, al) = last;
    let solution: Vec<f64> = z.rows(0, k).add_scalar(z[k + l]).iter().chain(z.rows(k, l).iter()).copied().collect();
    let config = json!({ "method": "mean-fb", "cvar": cfg, "solver_config": solver_cfg, "z0": z0.as_slice() });
    let body = json!({
        "manifest": manifest("solve-slcp", vec![digest], Some(model.seed), config),
        "stages": stages,
        "z": z.as_slice(),
        "solution": solution,
        "var": var,
        "aloc": al,
    });
    if let Some(p) = &a.report {
        std::fs::write(p, serde_json::to_string_pretty(&body)? + "\n")?;
    }
    Ok(Outcome { code: if all_converged { EXIT_OK } else { EXIT_FAILURE }, body })
}

fn cmd_portfolio(a: &PortfolioArgs) -> Result<Outcome> {
    let (text, digest) = io::read_text(&a.returns)?;
    let inst = io::parse_portfolio(&text, a.c0)?;
    let feas = portfolio::men_feasibility(&inst);
    let spread = inst.spread();
    let feasibility = json!({
        "r": inst.r.as_slice(),
        "r_bar": inst.r_bar(),
        "r_norm_sq": inst.r.norm_squared(),
        "spread_sq": spread * spread,
        "iii_ok": feas.iii_ok,
        "iii_value": feas.iii_value,
        "iv_ok": feas.iv_ok,
        "iv_value": feas.iv_value,
    });
    let config = json!({
        "model": format!("{:?}", a.model).to_lowercase(),
        "c0": inst.c0,
        "identity_cov": a.identity_cov,
        "max_iter": a.max_iter,
        "tol": a.tol,
    });
    let man = manifest("portfolio", vec![digest], None, config);
    let mut body = json!({ "manifest": man, "feasibility": feasibility });
    let mut code = EXIT_OK;
    let w: DVector<f64> = match a.model {
        PortfolioModel::Mv => {
            let sigma = if a.identity_cov {
                DMatrix::identity(inst.n(), inst.n())
            } else {
                inst.covariance()
            };
            portfolio::mv_solve(&inst.r, &sigma, inst.c0)?
        }
        PortfolioModel::Mad => {
            let w0 = DVector::from_element(inst.n(), 1.0 / inst.n() as f64);
            let res = portfolio::mad_iterate(&inst, &w0, a.max_iter, a.tol)?;
            if !res.converged {
                code = EXIT_FAILURE;
            }
            body["iterations"] = json!(res.iterations);
            body["converged"] = json!(res.converged);
            body["step"] = json!(res.step);
            DVector::from_vec(res.w)
        }
        PortfolioModel::Men => {
            let sol = match portfolio::men_solve(&inst) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("esoccp: {e}");
                    let mut err = error_body(&e);
                    err["manifest"] = body["manifest"].take();
                    err["feasibility"] = body["feasibility"].take();
                    return Ok(Outcome { code: exit_code(&e), body: err });
                }
            };
            body["y"] = json!(sol.y);
            body["kkt_residual"] = json!(sol.kkt_residual);
            body["multipliers"] = json!(sol.multipliers);
            DVector::from_vec(sol.w)
        }
    };
    body["w"] = json!(w.as_slice());
    body["sum_w"] = json!(w.sum());
    Ok(Outcome { code, body })
}

fn cmd_spherical(a: &SphericalArgs) -> Result<Outcome> {
    let (text, digest) = io::read_text(&a.matrix)?;
    let m = io::parse_matrix(&text)?;
    let n = m.nrows();
    let cone = match a.cone {
        ConeArg::Orthant => ConeSpec::NonnegOrthant(n),
        ConeArg::Lorentz => ConeSpec::Lorentz(n),
    }
    .new_checked()?;
    let mut cfg = QcConfig::default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.samples {
        cfg.samples = s;
    }
    if let Some(l) = a.n_limit {
        cfg.n_limit = l;
    }
    let verdict = spherical::qc_analyze_with(&m, cone, &cfg)?;
    let code = if verdict.verdict == Verdict::Undecided { EXIT_FAILURE } else { EXIT_OK };
    let config = json!({ "cone": format!("{:?}", a.cone).to_lowercase(), "qc": cfg });
    let body = json!({
        "manifest": manifest("spherical", vec![digest], Some(cfg.seed), config),
        "n": n,
        "result": verdict,
    });
    Ok(Outcome { code, body })
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<Outcome> {
    let ns = parse_list::<usize>(&a.n, "--n")?;
    let ts = parse_list::<usize>(&a.t, "--t")?;
    let cs = parse_list::<f64>(&a.c0, "--c0")?;
    let rows = portfolio::probability_experiment(&ns, &ts, &cs, a.trials, a.seed)?;
    if let Some(p) = &a.csv {
        let mut wr = csv::Writer::from_path(p)?;
        for r in &rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
    }
    let config = json!({ "n": ns, "t": ts, "c0": cs, "trials": a.trials });
    let body = json!({
        "manifest": manifest("experiment", vec![], Some(a.seed), config),
        "rows": rows,
    });
    Ok(Outcome { code: EXIT_OK, body })
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn householder(v: &[f64]) -> Vec<Vec<f64>> {
    let nn: f64 = v.iter().map(|x| x * x).sum();
    (0..v.len())
        .map(|i| (0..v.len()).map(|j| f64::from(u8::from(i == j)) - 2.0 * v[i] * v[j] / nn).collect())
        .collect()
}

fn cmd_export_demo(dir: &Path) -> Result<Outcome> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str| {
        let p = dir.join(name);
        written.push(p.display().to_string());
        p
    };
    write_json(&put("problem.json"), &ProblemFile::from_instance(&demo_instance()))?;
    write_json(&put("scenario.json"), &ScenarioFile::from_model(&ScenarioModel::demo(42)))?;
    std::fs::write(put("item_iii.csv"), io::returns_csv(&PortfolioInstance::example_item_iii()))?;
    write_json(&put("householder3.json"), &householder(&[1.0, 2.0, 3.0]))?;
    write_json(&put("diag_neg.json"), &vec![vec![-1.0, 0.0, 0.0], vec![0.0, -2.0, 0.0], vec![0.0, 0.0, 3.0]])?;
    write_json(&put("lorentz_j.json"), &vec![vec![1.0, 0.0, 0.0], vec![0.0, -1.0, 0.0], vec![0.0, 0.0, -1.0]])?;
    let body = json!({ "manifest": manifest("export-demo", vec![], None, json!({})), "written": written });
    Ok(Outcome { code: EXIT_OK, body })
}
