use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tardos_core::attacks::{forge, Strategy, StrategyKind};
use tardos_core::bounds::{theorem1_params, TheoremInputs};
use tardos_core::codegen::{load_codebook, save_codebook, Codebook, DEFAULT_MATRIX_BUDGET};
use tardos_core::error::Error;
use tardos_core::gaussian::{
    clt_report, large_coalition_plan, m_min, moments, report_block, theorem2_plan, z_interval,
};
use tardos_core::model::{parse_kv, SchemeParams};
use tardos_core::search::{
    emit_table1, search_min_a, search_min_a_ratio, table_to_csv, table_to_long_csv, verify,
    SearchResult,
};
use tardos_core::sim::{run, SimConfig};
use tardos_core::tracer::{trace, PirateCopy};

const USAGE: u8 = 2;
const INFEASIBLE: u8 = 3;
const IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "tardos",
    version,
    about = "Tardos fingerprinting codes: generate, attack, trace, tune and simulate"
)]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, env = "TARDOS_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output path (stdout when absent; a file prefix for `simulate`).
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// key=value file; each key supplies the flag of the same name unless
    /// it is given on the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Plan {
    /// Gaussian-model length and threshold.
    Gaussian,
    /// Provable closed-form bound (needs --tau and --omega).
    Provable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Layout {
    Wide,
    Long,
}

#[derive(Args, Debug)]
struct ParamArgs {
    /// Number of users.
    #[arg(long)]
    n: Option<u64>,
    /// Code length.
    #[arg(long)]
    m: Option<u64>,
    /// Accusation threshold.
    #[arg(long)]
    z: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    c0: Option<u32>,
    #[arg(long, default_value_t = 1e-3)]
    eps1: f64,
    #[arg(long, default_value_t = 0.5)]
    eps2: f64,
    /// Cutoff; defaults to tau/c0, or 1/(300 c0) without --tau.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long, value_enum)]
    plan: Option<Plan>,
}

#[derive(Args, Debug)]
struct StrategyArgs {
    /// extremal, interleave, majority, minority or coin.
    #[arg(long, default_value = "extremal")]
    strategy: String,
    /// Custom `x,psi` table; overrides --strategy.
    #[arg(long)]
    strategy_file: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a codebook file.
    Generate {
        #[command(flatten)]
        params: ParamArgs,
        /// Memory budget for the matrix in bytes.
        #[arg(long, default_value_t = DEFAULT_MATRIX_BUDGET)]
        budget: u64,
    },
    /// Forge a pirate copy from a coalition of a codebook.
    Attack {
        #[arg(long)]
        codebook: PathBuf,
        /// Comma-separated user indices.
        #[arg(long)]
        users: String,
        #[command(flatten)]
        strategy: StrategyArgs,
    },
    /// Score every user against a pirate copy.
    Trace {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        pirate: PathBuf,
        /// Threshold; the codebook's own when absent.
        #[arg(long)]
        z: Option<f64>,
    },
    /// Randomized search for the smallest provable A.
    Search {
        #[arg(long)]
        c0: u32,
        #[arg(long)]
        eps1: Option<f64>,
        #[arg(long)]
        eps2: Option<f64>,
        /// ln(1/eps2)/ln(1/eps1), instead of the eps pair.
        #[arg(long)]
        r: Option<f64>,
        #[arg(long, default_value_t = 200_000)]
        iterations: u64,
    },
    /// Search over a grid of c0 and R.
    Table {
        #[arg(long, default_value = "10,15,20,30,40,60,80")]
        c0_list: String,
        #[arg(long, default_value = "0.02,0.04,0.06,0.08,0.10")]
        r_list: String,
        #[arg(long, default_value_t = 200_000)]
        iterations: u64,
        #[arg(long, value_enum, default_value_t = Layout::Wide)]
        layout: Layout,
    },
    /// Gaussian-model predictions for an attack.
    Predict {
        #[arg(long)]
        c0: u32,
        #[arg(long, default_value_t = 1e-6)]
        eps1: f64,
        #[arg(long, default_value_t = 0.5)]
        eps2: f64,
        #[arg(long)]
        tau: Option<f64>,
        /// A strategy name, or `all` for every built-in strategy.
        #[arg(long, default_value = "extremal")]
        strategy: String,
        #[arg(long)]
        strategy_file: Option<PathBuf>,
        /// Coalition size; c0 when absent.
        #[arg(long)]
        c: Option<usize>,
        /// Length at which to evaluate the threshold interval.
        #[arg(long)]
        m: Option<f64>,
    },
    /// Monte Carlo estimate of error rates and score distributions.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        strategy: StrategyArgs,
        /// Coalition size; c0 when absent.
        #[arg(long)]
        c: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 1000)]
        innocents: usize,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_)
            | Error::Version { .. }
            | Error::Checksum { .. }
            | Error::Truncated(_)
            | Error::Format(_) => IO,
            Error::EmptyWindow { .. }
            | Error::Regime(_)
            | Error::Infeasible { .. }
            | Error::Capacity { .. } => INFEASIBLE,
            _ => USAGE,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: USAGE,
        msg: msg.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: IO,
        msg: format!("{}: {e}", path.display()),
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn read_text(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Outcome<()> {
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Outcome<()> {
    match out {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())
                .and_then(|_| so.flush())
                .map_err(|e| io_failure(Path::new("<stdout>"), e))
        }
    }
}

/// Append `--key value` for every config entry whose flag is absent.
fn expand_config(args: Vec<OsString>) -> Outcome<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let kv = parse_kv(&read_text(&path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut out = args.clone();
    for (k, v) in kv {
        let flag = format!("--{}", k.replace('_', "-"));
        let given = args.iter().any(|a| {
            let s = a.to_string_lossy();
            s == flag.as_str() || s.starts_with(&format!("{flag}="))
        });
        if !given {
            out.push(flag.into());
            out.push(v.into());
        }
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Outcome<Vec<T>> {
    s.split(',')
        .map(|x| x.trim())
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.parse()
                .map_err(|_| usage(format!("bad {what} entry `{x}`")))
        })
        .collect()
}

fn load_strategy(sa: &StrategyArgs, c: usize) -> Outcome<Strategy> {
    match &sa.strategy_file {
        Some(p) => Ok(Strategy::from_csv(&read_text(p)?)?),
        None => Ok(Strategy::named(&sa.strategy, c)?),
    }
}

fn resolve_params(pa: &ParamArgs, default_n: Option<u64>) -> Outcome<SchemeParams> {
    let n = pa.n.or(default_n).ok_or_else(|| usage("--n is required"))?;
    let c0 = pa.c0.ok_or_else(|| usage("--c0 is required"))?;
    let c = c0 as f64;
    let t = match (pa.t, pa.tau) {
        (Some(t), _) => t,
        (None, Some(tau)) => tau / c,
        (None, None) => 1.0 / (300.0 * c),
    };
    let tau = pa.tau.unwrap_or(t * c);
    let p = match pa.plan {
        Some(Plan::Gaussian) => {
            let plan = theorem2_plan(c0, tau, pa.eps1, pa.eps2)?;
            SchemeParams::direct(n, plan.m, c0, pa.eps1, pa.eps2, t, plan.z)?
        }
        Some(Plan::Provable) => {
            let omega = pa
                .omega
                .ok_or_else(|| usage("--plan provable needs --omega"))?;
            let out = theorem1_params(&TheoremInputs {
                c0,
                tau,
                omega,
                eps1: pa.eps1,
                eps2: pa.eps2,
            })?;
            SchemeParams::from_ab(n, c0, pa.eps1, pa.eps2, t, out.a, out.b)?
        }
        None => match (pa.a, pa.b, pa.m, pa.z) {
            (Some(a), Some(b), m, z) => {
                let p = SchemeParams::from_ab(n, c0, pa.eps1, pa.eps2, t, a, b)?;
                if m.is_some_and(|m| m != p.m())
                    || z.is_some_and(|z| (z - p.z()).abs() > 1e-9 * p.z())
                {
                    return Err(usage("m or z disagrees with the value implied by A and B"));
                }
                p
            }
            (_, _, Some(m), Some(z)) => SchemeParams::direct(n, m, c0, pa.eps1, pa.eps2, t, z)?,
            _ => return Err(usage("give --m and --z, --a and --b, or --plan")),
        },
    };
    Ok(p)
}

fn search_csv(res: &SearchResult) -> Outcome<String> {
    let v = verify(res)?;
    Ok(format!(
        "c0,r,a,b,t,t_ratio,l,alpha1,alpha2,iterations,iteration,verified\n{},{},{},{},{},{},{},{},{},{},{},{}\n",
        res.c0,
        res.r,
        res.a,
        res.b,
        res.t,
        res.t_ratio(),
        res.l,
        res.alpha1,
        res.alpha2,
        res.iterations_used,
        res.iteration,
        v.all()
    ))
}

fn cmd_generate(cli: &Cli, params: &ParamArgs, budget: u64) -> Outcome<()> {
    let out = cli
        .output
        .as_ref()
        .ok_or_else(|| usage("generate needs --output"))?;
    let p = resolve_params(params, None)?;
    let cb = Codebook::generate(&p, cli.seed, budget)?;
    save_codebook(&cb, out)?;
    eprintln!(
        "wrote {} users x {} columns to {}",
        cb.n(),
        cb.m(),
        out.display()
    );
    Ok(())
}

fn cmd_attack(cli: &Cli, codebook: &Path, users: &str, sa: &StrategyArgs) -> Outcome<()> {
    let cb = load_codebook(codebook)?;
    let users: Vec<usize> = parse_list(users, "user")?;
    if users.is_empty() {
        return Err(usage("--users is empty"));
    }
    let strategy = load_strategy(sa, users.len())?;
    let rows = cb.select_rows(&users)?;
    let y = forge(&rows, &strategy, cli.seed)?;
    emit(&cli.output, &format!("{}\n", y.to_bit_string()))
}

fn cmd_trace(cli: &Cli, codebook: &Path, pirate: &Path, z: Option<f64>) -> Outcome<()> {
    let cb = load_codebook(codebook)?;
    let y = PirateCopy::parse(&read_text(pirate)?)?;
    let z = z.unwrap_or(cb.params().z());
    let rep = trace(&cb, &y, z)?;
    let text = match cli.format {
        Some(Format::Jsonl) => {
            let mut s = String::new();
            let accused: std::collections::BTreeSet<usize> = rep.accused.iter().copied().collect();
            for (j, score) in rep.scores.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{}",
                    json!({"user_id": j, "score": score, "accused": accused.contains(&j)})
                );
            }
            s
        }
        _ => rep.to_csv(),
    };
    emit(&cli.output, &text)?;
    eprintln!(
        "accused {} of {} users at Z = {z}",
        rep.accused.len(),
        rep.scores.len()
    );
    Ok(())
}

fn cmd_search(
    cli: &Cli,
    c0: u32,
    eps1: Option<f64>,
    eps2: Option<f64>,
    r: Option<f64>,
    iterations: u64,
) -> Outcome<()> {
    let res = match (r, eps1, eps2) {
        (Some(r), None, None) => search_min_a_ratio(c0, r, iterations, cli.seed)?,
        (None, Some(e1), Some(e2)) => search_min_a(c0, e1, e2, iterations, cli.seed)?,
        _ => return Err(usage("give either --r or both --eps1 and --eps2")),
    };
    let text = match cli.format {
        Some(Format::Jsonl) => {
            let v = verify(&res)?;
            format!(
                "{}\n",
                json!({"result": res, "t_ratio": res.t_ratio(), "verification": v})
            )
        }
        _ => search_csv(&res)?,
    };
    emit(&cli.output, &text)
}

fn cmd_table(
    cli: &Cli,
    c0_list: &str,
    r_list: &str,
    iterations: u64,
    layout: Layout,
) -> Outcome<()> {
    let c0s: Vec<u32> = parse_list(c0_list, "c0")?;
    let rs: Vec<f64> = parse_list(r_list, "R")?;
    if c0s.is_empty() || rs.is_empty() {
        return Err(usage("empty c0 or R list"));
    }
    let cells = emit_table1(&c0s, &rs, iterations, cli.seed)?;
    let text = match (cli.format, layout) {
        (Some(Format::Jsonl), _) => cells
            .iter()
            .map(|cell| match &cell.result {
                Ok(res) => {
                    json!({"c0": cell.c0, "r": cell.r, "result": res, "t_ratio": res.t_ratio()})
                }
                Err(e) => json!({"c0": cell.c0, "r": cell.r, "error": e}),
            })
            .fold(String::new(), |mut s, v| {
                let _ = writeln!(s, "{v}");
                s
            }),
        (_, Layout::Wide) => table_to_csv(&cells),
        (_, Layout::Long) => table_to_long_csv(&cells),
    };
    emit(&cli.output, &text)
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    cli: &Cli,
    c0: u32,
    eps1: f64,
    eps2: f64,
    tau: Option<f64>,
    strategy: &str,
    strategy_file: &Option<PathBuf>,
    c: Option<usize>,
    m: Option<f64>,
) -> Outcome<()> {
    let c = c.unwrap_or(c0 as usize);
    let tau = tau.unwrap_or(1.0 / 300.0);
    let t = tau / c0 as f64;
    let plan = theorem2_plan(c0, tau, eps1, eps2)?;
    let m_eval = m.unwrap_or(plan.m as f64);
    let (m_cor, z_cor) = large_coalition_plan(c0, tau, eps1)?;
    let clt = clt_report(c0, t, eps1, m_eval)?;

    let strategies: Vec<Strategy> = match (strategy_file, strategy) {
        (Some(p), _) => vec![Strategy::from_csv(&read_text(p)?)?],
        (None, "all") => StrategyKind::BUILT_IN
            .iter()
            .map(|&k| Strategy::built_in(k, c))
            .collect::<Result<_, _>>()?,
        (None, name) => vec![Strategy::named(name, c)?],
    };

    let mut text = String::new();
    let mut rows = Vec::new();
    for s in &strategies {
        let mo = moments(s, c, t, c0)?;
        let mm = m_min(&mo, eps1, eps2, c0)?;
        let zi = z_interval(&mo, m_eval, eps1, eps2, c0)?;
        rows.push((s.kind(), mo.clone(), mm, zi));
        if cli.format.is_none() {
            let _ = writeln!(text, "strategy: {}", s.kind());
            text.push_str(&report_block(&mo, mm, &zi, &plan, &clt));
        }
    }
    match cli.format {
        None => {
            let _ = writeln!(text, "large-c0 form: m = {m_cor:.1}, Z = {z_cor:.3}");
        }
        Some(Format::Csv) => {
            text.push_str("strategy,c,c0,t,mu_scaled,sigma_j2,sigma2,m_min,m_eval,z_low,z_high,plan_m,plan_z,plan_z_low,plan_z_high,cor_m,cor_z,kappa2,kappa4,n_sigmas,required_sigmas\n");
            for (k, mo, mm, zi) in &rows {
                let _ = writeln!(
                    text,
                    "{k},{c},{c0},{t},{},{},{},{mm},{m_eval},{},{},{},{},{},{},{m_cor},{z_cor},{},{},{},{}",
                    mo.mu_scaled,
                    mo.sigma_j2(),
                    mo.sigma2(),
                    zi.low,
                    zi.high,
                    plan.m,
                    plan.z,
                    plan.z_low,
                    plan.z_high,
                    clt.kappa2,
                    clt.kappa4,
                    clt.n_sigmas,
                    clt.required_sigmas
                );
            }
        }
        Some(Format::Jsonl) => {
            for (k, mo, mm, zi) in &rows {
                let v = json!({
                    "strategy": k, "moments": mo, "m_min": mm, "m_eval": m_eval, "z_interval": zi,
                    "plan": plan, "large_c": {"m": m_cor, "z": z_cor}, "clt": clt,
                });
                let _ = writeln!(text, "{v}");
            }
        }
    }
    emit(&cli.output, &text)
}

fn cmd_simulate(
    cli: &Cli,
    params: &ParamArgs,
    sa: &StrategyArgs,
    c: Option<usize>,
    trials: u64,
    innocents: usize,
) -> Outcome<()> {
    let p = resolve_params(params, Some(1_000_000))?;
    let c = c.unwrap_or(p.c0() as usize);
    let strategy = load_strategy(sa, c)?;
    let cfg = SimConfig::new(p, strategy, c, trials, innocents, cli.seed)?;
    let rep = run(&cfg)?;
    if let Some(prefix) = &cli.output {
        let with = |ext: &str| {
            let mut s = prefix.clone().into_os_string();
            s.push(ext);
            PathBuf::from(s)
        };
        write_bytes(&with(".jsonl"), rep.to_jsonl().as_bytes())?;
        write_bytes(
            &with(".innocent_hist.csv"),
            rep.innocent_histogram.to_csv().as_bytes(),
        )?;
        write_bytes(
            &with(".coalition_hist.csv"),
            rep.coalition_histogram.to_csv().as_bytes(),
        )?;
    }
    let text = match cli.format {
        Some(Format::Jsonl) => format!("{}\n", serde_json::to_string(&rep).expect("report serializes")),
        _ => format!(
            "m,c,z,trials,innocents,fp_hat,fp_low,fp_high,fn_hat,fn_low,fn_high,innocent_mean,innocent_var,coalition_mean,coalition_var,ks_innocent\n{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            rep.m,
            rep.c,
            rep.z,
            rep.trials,
            rep.innocents_per_trial,
            rep.fp_hat.rate,
            rep.fp_hat.ci_low,
            rep.fp_hat.ci_high,
            rep.fn_hat.rate,
            rep.fn_hat.ci_low,
            rep.fn_hat.ci_high,
            rep.innocent_score_moments.mean,
            rep.innocent_score_moments.variance,
            rep.coalition_score_moments.mean,
            rep.coalition_score_moments.variance,
            rep.ks_innocent
        ),
    };
    emit(&None, &text)
}

fn dispatch(cli: &Cli) -> Outcome<()> {
    match &cli.cmd {
        Cmd::Generate { params, budget } => cmd_generate(cli, params, *budget),
        Cmd::Attack {
            codebook,
            users,
            strategy,
        } => cmd_attack(cli, codebook, users, strategy),
        Cmd::Trace {
            codebook,
            pirate,
            z,
        } => cmd_trace(cli, codebook, pirate, *z),
        Cmd::Search {
            c0,
            eps1,
            eps2,
            r,
            iterations,
        } => cmd_search(cli, *c0, *eps1, *eps2, *r, *iterations),
        Cmd::Table {
            c0_list,
            r_list,
            iterations,
            layout,
        } => cmd_table(cli, c0_list, r_list, *iterations, *layout),
        Cmd::Predict {
            c0,
            eps1,
            eps2,
            tau,
            strategy,
            strategy_file,
            c,
            m,
        } => cmd_predict(
            cli,
            *c0,
            *eps1,
            *eps2,
            *tau,
            strategy,
            strategy_file,
            *c,
            *m,
        ),
        Cmd::Simulate {
            params,
            strategy,
            c,
            trials,
            innocents,
        } => cmd_simulate(cli, params, strategy, *c, *trials, *innocents),
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(f) => {
            eprintln!("tardos: {}", f.msg);
            return ExitCode::from(f.code);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("tardos: {e}");
            return ExitCode::from(USAGE);
        }
    }
    eprintln!("tardos: resolved config: {cli:?}");
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tardos: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
