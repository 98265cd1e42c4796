//! Command-line frontend for the `qpembed` library.
//!
//! Every subcommand reads JSON configs, emits JSON (or CSV for `scan`) with a
//! top-level `"schema": "qpembed/1"` tag, and is deterministic for a fixed
//! config and seed. Exit codes: 0 success, 2 validation/configuration error,
//! 3 numerical failure (divergence, threshold, iteration budget); failures
//! put a machine-readable JSON object on standard error.

use std::fs;
use std::io::Write as _;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use qpembed::algebra::{e12, h_matrix, j_matrix};
use qpembed::arithmetic::{beta_estimate, Alpha, ContinuedFraction};
use qpembed::cocycles::{scan_energy, Cocycle, Fiber};
use qpembed::embedding::{embed_local, EmbedConfig, EmbedReport};
use qpembed::flows::QPSystem;
use qpembed::fourier::TrigSeries;
use qpembed::instances::{gen_perturbation, InstanceSpec};
use qpembed::SCHEMA;

const TWO_PI: f64 = std::f64::consts::TAU;

#[derive(Parser)]
#[command(
    name = "qpembed",
    version,
    about = "Quasi-periodic SL(2,R) cocycles: diagnostics and embedding into linear flows",
    long_about = None,
    after_help = "Exit codes: 0 success, 2 validation error, 3 numerical failure.\n\
                  Failures print {\"schema\",\"error\":{\"kind\",\"message\"}} on stderr.\n\
                  QPEMBED_THREADS caps the size of the internal thread pool.\n\
                  All floating-point output is round-trippable (shortest exact decimal)."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Continued-fraction expansion of a frequency, with a Liouville estimate
    Cfrac(CfracArgs),
    /// Solve the local embedding: match a flow's time-one map to e^A e^{G}
    Embed(EmbedArgs),
    /// Re-integrate an embedding report on a fresh grid and check its defect
    Roundtrip(RoundtripArgs),
    /// Time-one (Poincare) maps of a quasi-periodic linear flow on a grid
    Poincare(PoincareArgs),
    /// Fibered rotation number of a cocycle
    Rotnum(RotnumArgs),
    /// Rotation number of a quasi-periodic linear flow
    RotnumFlow(RotnumFlowArgs),
    /// Lyapunov exponent of a cocycle
    Lyap(LyapArgs),
    /// Lyapunov exponent of a quasi-periodic linear flow
    LyapFlow(LyapFlowArgs),
    /// Energy scan of a Schrodinger cocycle family (CSV: "E,rot,lyap,rot_err")
    Scan(ScanArgs),
    /// Uniform-hyperbolicity certificate for a cocycle
    Uhcert(UhcertArgs),
    /// Run the built-in acceptance suite; nonzero exit on any failure
    Selftest,
    /// Deterministic random embedding instance (same seed -> identical bytes)
    GenInstance(GenInstanceArgs),
}

#[derive(Args)]
struct CfracArgs {
    /// Frequency: a decimal string or a named constant ("golden", "sqrt2m1")
    #[arg(long)]
    alpha: String,
    /// Number of partial quotients to compute
    #[arg(long)]
    depth: usize,
    /// Emit JSON instead of a human-readable table
    #[arg(long)]
    json: bool,
    /// Output path (default: stdout)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct EmbedArgs {
    /// Path to an embedding config JSON {schema, a, g, mu, h, tol}
    #[arg(long)]
    config: String,
    /// Output path for the report JSON (default: stdout)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct RoundtripArgs {
    /// Path to an embedding report JSON produced by `embed`
    #[arg(long)]
    report: String,
    /// Probe points per section axis
    #[arg(long, default_value_t = 32)]
    grid: usize,
    /// Output path (default: stdout)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct PoincareArgs {
    /// Path to a flow config JSON {schema, mu, A, F, h}
    #[arg(long)]
    config: String,
    /// Sample points per torus axis (ignored when --theta is given)
    #[arg(long, default_value_t = 4)]
    grid: usize,
    /// Explicit base point, comma-separated (one value per axis)
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Integration tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Output path (default: stdout)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct RotnumArgs {
    /// Path to a cocycle config JSON {schema, mu, fiber, homotopy_degree}
    #[arg(long)]
    config: String,
    /// Iteration count
    #[arg(long, default_value_t = 100_000)]
    iters: u64,
    /// Base point, comma-separated (default: origin)
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Output path (default: stdout)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct RotnumFlowArgs {
    /// Path to a flow config JSON {schema, mu, A, F, h}
    #[arg(long)]
    config: String,
    /// Run time
    #[arg(long, default_value_t = 1e4)]
    tmax: f64,
    /// Base point, comma-separated (default: origin)
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Integration tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Output path (default: stdout)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct LyapArgs {
    /// Path to a cocycle config JSON
    #[arg(long)]
    config: String,
    /// Iteration count
    #[arg(long, default_value_t = 100_000)]
    iters: u64,
    /// Output path (default: stdout)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct LyapFlowArgs {
    /// Path to a flow config JSON
    #[arg(long)]
    config: String,
    /// Run time
    #[arg(long, default_value_t = 1e4)]
    tmax: f64,
    /// Base point, comma-separated (default: origin)
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Integration tolerance
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Output path (default: stdout)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct ScanArgs {
    /// Path to a scan config JSON {schema, v, mu}
    #[arg(long)]
    config: String,
    /// Lowest energy
    #[arg(long, allow_hyphen_values = true)]
    emin: f64,
    /// Highest energy
    #[arg(long, allow_hyphen_values = true)]
    emax: f64,
    /// Number of energies (endpoints included)
    #[arg(long)]
    steps: usize,
    /// Rotation-number iteration count per energy
    #[arg(long, default_value_t = 40_000)]
    iters: u64,
    /// Lyapunov iteration count per energy
    #[arg(long, default_value_t = 1_000)]
    lyap_iters: u64,
    /// CSV output path (default: stdout); header is "E,rot,lyap,rot_err"
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct UhcertArgs {
    /// Path to a cocycle config JSON
    #[arg(long)]
    config: String,
    /// Product depth
    #[arg(long, default_value_t = 20)]
    n: u64,
    /// Grid points per axis, comma-separated (a single value is replicated)
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "128")]
    grid: Vec<usize>,
    /// Singular-value gap margin
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
    /// Output path (default: stdout)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ConstantClass {
    Elliptic,
    Hyperbolic,
    Parabolic,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum EmitKind {
    /// An embedding config consumable by `embed`
    Embed,
    /// A cocycle config consumable by `rotnum`, `lyap`, `uhcert`
    Cocycle,
}

#[derive(Args)]
struct GenInstanceArgs {
    /// RNG seed; the output is a pure function of seed and flags
    #[arg(long)]
    seed: u64,
    /// Fourier modes per axis of the perturbation
    #[arg(long, default_value_t = 5)]
    modes: i32,
    /// Requested analytic norm of the perturbation (matched exactly)
    #[arg(long, default_value_t = 1e-3)]
    amplitude: f64,
    /// Analyticity width of the norm
    #[arg(long, default_value_t = 0.5)]
    h: f64,
    /// Base frequencies, comma-separated
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0.6180339887498949", allow_hyphen_values = true)]
    mu: Vec<f64>,
    /// Conjugation class of the constant part
    #[arg(long, value_enum, default_value_t = ConstantClass::Elliptic)]
    class: ConstantClass,
    /// Rotation rate of the elliptic constant part (A = 2*pi*rho*J)
    #[arg(long, default_value_t = 0.15, allow_hyphen_values = true)]
    rho: f64,
    /// Expansion rate of the hyperbolic constant part (A = 2*pi*lambda*diag(1,-1))
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    lambda: f64,
    /// Embedding tolerance stored in the config
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Which document to emit
    #[arg(long, value_enum, default_value_t = EmitKind::Embed)]
    emit: EmitKind,
    /// Output path (default: stdout)
    #[arg(long)]
    out: Option<String>,
}

/// Scan input: a real potential on the base torus and the base frequencies.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanConfig {
    #[serde(default = "default_schema")]
    schema: String,
    v: TrigSeries,
    mu: Vec<f64>,
}

fn default_schema() -> String {
    SCHEMA.to_string()
}

enum CliError {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

impl From<qpembed::Error> for CliError {
    fn from(e: qpembed::Error) -> Self {
        let msg = e.to_string();
        if e.is_numerical() {
            CliError::Numerical(msg)
        } else {
            CliError::Validation(msg)
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("bad JSON: {e}"))
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_file(path: &str) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {path}: {e}")))
}

fn emit(out: &Option<String>, body: &str) -> CliResult<()> {
    match out {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|_| stdout.write_all(b"\n"))
                .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}")))
        }
        Some(path) => {
            let mut text = String::with_capacity(body.len() + 1);
            text.push_str(body);
            text.push('\n');
            fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {path}: {e}")))
        }
    }
}

fn emit_json(out: &Option<String>, value: &serde_json::Value) -> CliResult<()> {
    emit(out, &serde_json::to_string_pretty(value)?)
}

fn check_schema(tag: &str) -> CliResult<()> {
    if tag != SCHEMA {
        return Err(CliError::Validation(format!(
            "unsupported schema {tag:?}, expected {SCHEMA:?}"
        )));
    }
    Ok(())
}

fn load_cocycle(path: &str) -> CliResult<Cocycle> {
    let c: Cocycle = serde_json::from_str(&read_file(path)?)?;
    c.validate()?;
    Ok(c)
}

fn load_system(path: &str) -> CliResult<QPSystem> {
    let sys: QPSystem = serde_json::from_str(&read_file(path)?)?;
    sys.validate()?;
    Ok(sys)
}

fn origin(dim: usize, theta: Option<Vec<f64>>) -> CliResult<Vec<f64>> {
    let th = theta.unwrap_or_else(|| vec![0.0; dim]);
    if th.len() != dim {
        return Err(CliError::Validation(format!(
            "base point has {} coordinates but the torus has {dim} axes",
            th.len()
        )));
    }
    Ok(th)
}

/// Deterministic product grid: `n` equispaced points per axis, offset away
/// from lattice-symmetric values.
fn product_grid(periods: &[u8], n: usize) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
    for &p in periods {
        let mut next = Vec::with_capacity(pts.len() * n);
        for base in &pts {
            for i in 0..n {
                let mut q = base.clone();
                q.push(p as f64 * (i as f64 + 0.2183) / n as f64);
                next.push(q);
            }
        }
        pts = next;
    }
    pts
}

fn run_cfrac(a: CfracArgs) -> CliResult<()> {
    let alpha = Alpha::parse(&a.alpha)?;
    let cf = ContinuedFraction::expand(&alpha, a.depth)?;
    let beta = beta_estimate(&cf)?;
    fn strs<T: std::fmt::Display>(v: &[T]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }
    if a.json {
        let doc = json!({
            "schema": SCHEMA,
            "alpha": alpha.to_f64(),
            "a": strs(&cf.a),
            "p": strs(&cf.p),
            "q": strs(&cf.q),
            "termination": cf.termination,
            "beta_samples": beta.samples,
            "beta_hat": beta.beta_hat,
        });
        emit_json(&a.out, &doc)
    } else {
        let mut s = format!("alpha = {}\n", alpha.to_f64());
        s.push_str(&format!("{:>4} {:>24} {:>24} {:>24}\n", "n", "a_n", "p_n", "q_n"));
        for n in 0..cf.a.len() {
            s.push_str(&format!(
                "{:>4} {:>24} {:>24} {:>24}\n",
                n, cf.a[n], cf.p[n], cf.q[n]
            ));
        }
        s.push_str(&format!(
            "termination: {:?}\nbeta_hat = {} (sup over tail from sample {})",
            cf.termination, beta.beta_hat, beta.tail_start
        ));
        emit(&a.out, &s)
    }
}

fn run_embed(a: EmbedArgs) -> CliResult<()> {
    let cfg: EmbedConfig = serde_json::from_str(&read_file(&a.config)?)?;
    check_schema(&cfg.schema)?;
    let report = embed_local(&cfg.a, &cfg.g, &cfg.mu, cfg.h, cfg.tol)?;
    emit(&a.out, &serde_json::to_string_pretty(&report)?)
}

fn run_roundtrip(a: RoundtripArgs) -> CliResult<()> {
    let report: EmbedReport = serde_json::from_str(&read_file(&a.report)?)?;
    check_schema(&report.schema)?;
    let ver = report.verify(a.grid)?;
    let tol = report.input.tol;
    let pass = ver.defect <= tol;
    let doc = json!({
        "schema": SCHEMA,
        "defect": ver.defect,
        "det_defect": ver.det_defect,
        "points": ver.points,
        "tol": tol,
        "pass": pass,
    });
    emit_json(&a.out, &doc)?;
    if !pass {
        return Err(CliError::Numerical(format!(
            "re-integrated defect {} exceeds tolerance {tol}",
            ver.defect
        )));
    }
    Ok(())
}

fn run_poincare(a: PoincareArgs) -> CliResult<()> {
    let sys = load_system(&a.config)?;
    let pts = match a.theta {
        Some(th) => vec![origin(sys.dim(), Some(th))?],
        None => {
            if a.grid == 0 {
                return Err(CliError::Validation("grid must be positive".into()));
            }
            product_grid(sys.f.periods(), a.grid)
        }
    };
    let mut samples = Vec::with_capacity(pts.len());
    for th in &pts {
        let m = sys.poincare(th, a.tol)?;
        samples.push(json!({"theta": th, "m": m, "det": m.det()}));
    }
    let doc = json!({
        "schema": SCHEMA,
        "tol": a.tol,
        "points": samples,
    });
    emit_json(&a.out, &doc)
}

fn run_rotnum(a: RotnumArgs) -> CliResult<()> {
    let c = load_cocycle(&a.config)?;
    let th = origin(c.dim(), a.theta)?;
    let rot = c.rotation_number(&th, [1.0, 0.0], a.iters)?;
    let mut doc = serde_json::to_value(rot)?;
    doc["schema"] = json!(SCHEMA);
    emit_json(&a.out, &doc)
}

fn run_rotnum_flow(a: RotnumFlowArgs) -> CliResult<()> {
    let sys = load_system(&a.config)?;
    let th = origin(sys.dim(), a.theta)?;
    let rot = sys.rotation_number(&th, a.tmax, a.tol)?;
    let mut doc = serde_json::to_value(rot)?;
    doc["schema"] = json!(SCHEMA);
    emit_json(&a.out, &doc)
}

fn run_lyap(a: LyapArgs) -> CliResult<()> {
    let c = load_cocycle(&a.config)?;
    let ly = c.lyapunov(a.iters)?;
    let mut doc = serde_json::to_value(ly)?;
    doc["schema"] = json!(SCHEMA);
    emit_json(&a.out, &doc)
}

fn run_lyap_flow(a: LyapFlowArgs) -> CliResult<()> {
    let sys = load_system(&a.config)?;
    let th = origin(sys.dim(), a.theta)?;
    let ly = sys.lyapunov(&th, a.tmax, a.tol)?;
    let mut doc = serde_json::to_value(ly)?;
    doc["schema"] = json!(SCHEMA);
    emit_json(&a.out, &doc)
}

fn run_scan(a: ScanArgs) -> CliResult<()> {
    let cfg: ScanConfig = serde_json::from_str(&read_file(&a.config)?)?;
    check_schema(&cfg.schema)?;
    if a.steps < 2 {
        return Err(CliError::Validation("need at least two energies".into()));
    }
    if !(a.emax > a.emin) {
        return Err(CliError::Validation("need emax > emin".into()));
    }
    let energies: Vec<f64> = (0..a.steps)
        .map(|i| a.emin + (a.emax - a.emin) * i as f64 / (a.steps - 1) as f64)
        .collect();
    let rows = scan_energy(&cfg.v, &cfg.mu, &energies, a.iters, a.lyap_iters)?;
    let mut csv = String::from("E,rot,lyap,rot_err\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.e, r.rot, r.lyap, r.rot_err));
    }
    csv.pop();
    emit(&a.out, &csv)?;
    let dips: Vec<f64> = rows
        .iter()
        .filter(|r| !r.monotone_ok)
        .map(|r| r.e)
        .collect();
    if !dips.is_empty() {
        eprintln!(
            "{}",
            json!({
                "schema": SCHEMA,
                "warning": "rotation number decreases beyond its error band",
                "energies": dips,
            })
        );
    }
    Ok(())
}

fn run_uhcert(a: UhcertArgs) -> CliResult<()> {
    let c = load_cocycle(&a.config)?;
    let grid: Vec<usize> = if a.grid.len() == 1 {
        vec![a.grid[0]; c.dim()]
    } else {
        a.grid.clone()
    };
    let cert = c.uh_certificate(a.n, &grid, a.margin)?;
    let mut doc = serde_json::to_value(&cert)?;
    doc["schema"] = json!(SCHEMA);
    emit_json(&a.out, &doc)
}

fn run_selftest() -> CliResult<()> {
    let results = qpembed::acceptance::run_all();
    let mut all_pass = true;
    for r in &results {
        println!("{}", r.line());
        all_pass &= r.pass;
    }
    if all_pass {
        println!("selftest: all {} criteria passed", results.len());
        Ok(())
    } else {
        let failed: Vec<&str> = results
            .iter()
            .filter(|r| !r.pass)
            .map(|r| r.name)
            .collect();
        Err(CliError::Numerical(format!(
            "selftest failed: {}",
            failed.join(", ")
        )))
    }
}

fn run_gen_instance(a: GenInstanceArgs) -> CliResult<()> {
    let spec = InstanceSpec {
        modes: a.modes,
        amplitude: a.amplitude,
        h: a.h,
        mu: a.mu.clone(),
    };
    let g = gen_perturbation(a.seed, &spec)?;
    let constant = match a.class {
        ConstantClass::Elliptic => j_matrix().scale(TWO_PI * a.rho),
        ConstantClass::Hyperbolic => h_matrix().scale(TWO_PI * a.lambda),
        ConstantClass::Parabolic => e12(),
    };
    if !(a.tol > 0.0 && a.tol.is_finite()) {
        return Err(CliError::Validation("tol must be positive".into()));
    }
    match a.emit {
        EmitKind::Embed => {
            let cfg = EmbedConfig {
                schema: SCHEMA.to_string(),
                a: constant,
                g,
                mu: a.mu.clone(),
                h: a.h,
                tol: a.tol,
            };
            emit(&a.out, &serde_json::to_string_pretty(&cfg)?)
        }
        EmitKind::Cocycle => {
            let d = a.mu.len();
            let c = Cocycle::new(
                a.mu.clone(),
                Fiber::ExpPair { a: constant, g },
                vec![0; d],
            )?;
            emit(&a.out, &serde_json::to_string_pretty(&c)?)
        }
    }
}

fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("QPEMBED_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            CliError::Validation(format!("QPEMBED_THREADS must be a positive integer, got {v:?}"))
        })?;
        if n == 0 {
            return Err(CliError::Validation(
                "QPEMBED_THREADS must be a positive integer".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("cannot size thread pool: {e}")))?;
    }
    Ok(())
}

fn dispatch(cmd: Cmd) -> CliResult<()> {
    match cmd {
        Cmd::Cfrac(a) => run_cfrac(a),
        Cmd::Embed(a) => run_embed(a),
        Cmd::Roundtrip(a) => run_roundtrip(a),
        Cmd::Poincare(a) => run_poincare(a),
        Cmd::Rotnum(a) => run_rotnum(a),
        Cmd::RotnumFlow(a) => run_rotnum_flow(a),
        Cmd::Lyap(a) => run_lyap(a),
        Cmd::LyapFlow(a) => run_lyap_flow(a),
        Cmd::Scan(a) => run_scan(a),
        Cmd::Uhcert(a) => run_uhcert(a),
        Cmd::Selftest => run_selftest(),
        Cmd::GenInstance(a) => run_gen_instance(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = init_threads().and_then(|_| dispatch(cli.cmd));
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                json!({
                    "schema": SCHEMA,
                    "error": { "kind": e.kind(), "message": e.message() },
                })
            );
            ExitCode::from(e.exit_code())
        }
    }
}
