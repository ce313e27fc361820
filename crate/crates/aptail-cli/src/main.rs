//! Batch runner: every library operation behind one binary, with a
//! layered key=value config, JSON outputs, and an append-only
//! JSON-lines store of resolved runs.
//!
//! Exit codes: 0 success, 1 internal failure or verification failure,
//! 2 invalid configuration, 3 work cap exceeded.

use aptail::clusters::{
    cluster_census, emb_encode, factorial_moment_exact, factorial_moment_filtered,
    plain_moment_filtered, Hypergraph, SeedFilter,
};
use aptail::concentration::{
    freedman_bound, hypergeom_event_exact, janson_bound, janson_family, link_event_probs_exact,
    link_statistics, FreedmanInputs, ProbInput,
};
use aptail::index::{
    build_index, exact_moments, second_moment_table, ModelParams, SubsetState,
};
use aptail::rates::{
    classify_regime, gaussian_rate, localised_rate, log_grid, phase_anchors, phase_grid,
    poisson_tail_rate,
};
use aptail::sampling::{
    exact_tail, gaussian_tilt, is_tail_product, mc_tail, sample_subset, sprinkle_ratio,
};
use aptail::variational::{min_seed, psi_star, psi_star_bounded, PsiStarMode, SeedQuery};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde_json::{json, Value};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

const DEFAULT_RUN_STORE: &str = "aptail_runs.jsonl";
const WITNESS_INLINE_CAP: usize = 100_000;

#[derive(Parser)]
#[command(name = "aptail", version, about = "Progression tail experiments")]
struct Cli {
    /// Key=value config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Path of the append-only JSON-lines run store.
    #[arg(long, global = true)]
    run_store: Option<PathBuf>,

    /// Do not append a run record.
    #[arg(long, global = true)]
    no_record: bool,

    /// Write the JSON output to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the progression index and list every progression.
    Index {
        #[arg(long = "N")]
        n: u32,
        #[arg(long)]
        k: u32,
    },
    /// Exact mean, variance, and variance proxy at density p.
    Moments {
        #[arg(long = "N")]
        n: u64,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: f64,
    },
    /// Minimum subset size whose progression count reaches t.
    PsiStar {
        #[arg(long = "N")]
        n: u64,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        t: f64,
        /// "exact" (branch and bound, small N) or "bounded" (intervals).
        #[arg(long, default_value = "exact")]
        mode: String,
    },
    /// Minimum seed whose planting gain reaches t.
    MinSeed {
        #[arg(long = "N")]
        n: u32,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Evaluate a named rate function, or classify a (p, t) point.
    Rates {
        /// gaussian (needs --sigma2 --t), poisson (needs --mu --t), or
        /// localised (needs --N --k --p --t); omit to classify.
        #[arg(long)]
        regime: Option<String>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long = "N")]
        n: Option<u64>,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        below_range_c: Option<f64>,
    },
    /// Sweep a log-spaced (p, t) grid and write the phase CSV plus an
    /// anchors sidecar.
    Phase {
        #[arg(long = "N")]
        n: u64,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p_min: f64,
        #[arg(long)]
        p_max: f64,
        #[arg(long)]
        p_steps: usize,
        #[arg(long)]
        t_min: f64,
        #[arg(long)]
        t_max: f64,
        #[arg(long)]
        t_steps: usize,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        below_range_c: Option<f64>,
    },
    /// Exact upper-tail probability P(X >= threshold).
    TailExact {
        #[arg(long = "N")]
        n: u32,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        threshold: f64,
    },
    /// Plain Monte Carlo estimate of the upper tail.
    TailMc {
        #[arg(long = "N")]
        n: u32,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Importance-sampling estimate under the mean-shift product tilt.
    TailIs {
        #[arg(long = "N")]
        n: u32,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        t: f64,
        /// Tail threshold; defaults to mu + t.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Likelihood-ratio statistics of the sprinkled measure.
    Sprinkle {
        #[arg(long = "N")]
        n: u32,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        u: u64,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Martingale tail bound assembled from link-event probabilities.
    Freedman {
        #[arg(long = "N")]
        n: u32,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Estimate event probabilities by sampling even when exact
        /// enumeration is feasible.
        #[arg(long)]
        mc: bool,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Lower-tail bound for uniform subset sampling against a family.
    Janson {
        #[arg(long)]
        universe: u32,
        #[arg(long)]
        s: u32,
        /// JSON list of sets, e.g. '[[1,2],[3,4]]'.
        #[arg(long)]
        sets: String,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Also compute the exact event probability by enumeration.
        #[arg(long)]
        exact: bool,
    },
    /// Census of progression clusters inside a subset.
    Clusters {
        #[arg(long = "N")]
        n: u32,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        t: f64,
        /// Comma-separated member list; omit to sample one subset.
        #[arg(long)]
        members: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        k_const: Option<f64>,
    },
    /// Encode a connected sub-hypergraph as a root edge plus marks.
    Emb {
        #[arg(long)]
        k: u32,
        #[arg(long)]
        n_vertices: u32,
        /// JSON list of edges, e.g. '[[1,2,3],[3,4,5]]'.
        #[arg(long)]
        edges: String,
        /// Comma-separated edge ids of the sub-hypergraph.
        #[arg(long)]
        sub: String,
        /// Comma-separated boundary budget; defaults to the
        /// sub-hypergraph's own boundary profile.
        #[arg(long)]
        a: Option<String>,
    },
    /// Factorial (or plain) moments, optionally seed-filtered.
    FactMoment {
        #[arg(long = "N")]
        n: u32,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        t: u32,
        /// Seed level u of the filter Z(u, m).
        #[arg(long)]
        u: Option<f64>,
        /// Size budget of the cap filter; defaults to k * t.
        #[arg(long)]
        max_size: Option<u32>,
        /// Use the feasibility-family filter instead of the size cap.
        #[arg(long)]
        family: bool,
        #[arg(long)]
        c: Option<f64>,
        /// Compute the plain moment E[X^t] instead of E[(X)_t].
        #[arg(long)]
        plain: bool,
    },
    /// Run the built-in verification suite; nonzero exit on violation.
    Verify,
}

#[derive(Debug)]
enum CliError {
    Lib(aptail::Error),
    Config(String),
    Io(std::io::Error),
    Json(serde_json::Error),
    Csv(csv::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Config(msg) => write!(f, "config: {msg}"),
            CliError::Io(e) => write!(f, "io: {e}"),
            CliError::Json(e) => write!(f, "json: {e}"),
            CliError::Csv(e) => write!(f, "csv: {e}"),
        }
    }
}

impl From<aptail::Error> for CliError {
    fn from(e: aptail::Error) -> Self {
        CliError::Lib(e)
    }
}
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}
impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json(e)
    }
}
impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Csv(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Lib(aptail::Error::CapExceeded { .. }) => 3,
            CliError::Lib(_) | CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Json(_) | CliError::Csv(_) => 1,
        }
    }
}

/// The free constants, all overridable per run.  One row per knob:
///   theta           regime classification threshold        3.0
///   below-range-c   below-range density constant           1.0
///   epsilon         tilt / filter / census epsilon         0.1
///   seed-c          seed feasibility constant              1.0
///   k-const         cluster classification constant        1000.0
///   seed            PRNG seed                              42
///   samples         Monte Carlo sample count               100000
///   run-store       run record path                        aptail_runs.jsonl
#[derive(Debug, Clone)]
struct Settings {
    theta: f64,
    below_range_c: f64,
    epsilon: f64,
    seed_c: f64,
    k_const: f64,
    seed: u64,
    samples: u64,
    run_store: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            theta: 3.0,
            below_range_c: 1.0,
            epsilon: 0.1,
            seed_c: 1.0,
            k_const: 1000.0,
            seed: 42,
            samples: 100_000,
            run_store: PathBuf::from(DEFAULT_RUN_STORE),
        }
    }
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut s = Settings::default();
        let Some(path) = path else { return Ok(s) };
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                CliError::Config(format!(
                    "{}:{}: {what} value {value:?}",
                    path.display(),
                    lineno + 1
                ))
            };
            match key {
                "theta" => s.theta = value.parse().map_err(|_| bad("bad float"))?,
                "below-range-c" => s.below_range_c = value.parse().map_err(|_| bad("bad float"))?,
                "epsilon" => s.epsilon = value.parse().map_err(|_| bad("bad float"))?,
                "seed-c" => s.seed_c = value.parse().map_err(|_| bad("bad float"))?,
                "k-const" => s.k_const = value.parse().map_err(|_| bad("bad float"))?,
                "seed" => s.seed = value.parse().map_err(|_| bad("bad integer"))?,
                "samples" => s.samples = value.parse().map_err(|_| bad("bad integer"))?,
                "run-store" => s.run_store = PathBuf::from(value),
                other => {
                    return Err(CliError::Config(format!(
                        "{}:{}: unknown key {other:?}",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        Ok(s)
    }
}

struct RunOutcome {
    command: &'static str,
    config: Value,
    outputs: Value,
    n: Option<u64>,
    k: Option<u32>,
    p: Option<f64>,
    seed: Option<u64>,
    exit: i32,
}

#[derive(serde::Serialize)]
struct RunRecord {
    timestamp: u64,
    version: String,
    command: String,
    config: Value,
    params_digest: String,
    seed: Option<u64>,
    outputs: Value,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn params_digest(n: Option<u64>, k: Option<u32>, p: Option<f64>) -> String {
    let part = |s: Option<String>| s.unwrap_or_else(|| "-".to_string());
    let text = format!(
        "{}:{}:{}",
        part(n.map(|v| v.to_string())),
        part(k.map(|v| v.to_string())),
        part(p.map(|v| format!("{:016x}", v.to_bits()))),
    );
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

fn parse_u32_list(text: &str, what: &str) -> Result<Vec<u32>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map_err(|_| CliError::Config(format!("{what}: bad integer {s:?}")))
        })
        .collect()
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Config(format!("{what}: bad float {s:?}")))
        })
        .collect()
}

fn load_params(n: u32, k: u32, p: f64) -> Result<ModelParams, CliError> {
    Ok(exact_moments(Arc::new(build_index(n, k)?), p)?)
}

fn mc_prob(hits: u64, n: u64) -> ProbInput {
    let mean = hits as f64 / n as f64;
    let stderr = (mean * (1.0 - mean) / n as f64).sqrt();
    ProbInput::Mc {
        value: mean,
        stderr,
    }
}

fn witness_json(witness: Option<Vec<u32>>) -> Value {
    match witness {
        Some(mut w) if w.len() <= WITNESS_INLINE_CAP => {
            w.sort_unstable();
            json!(w)
        }
        Some(w) => json!({ "omitted_length": w.len() }),
        None => Value::Null,
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    let settings = Settings::load(cli.config.as_deref())?;
    let outcome = dispatch(cli, &settings)?;

    let rendered = serde_json::to_string_pretty(&outcome.outputs)?;
    match &cli.out {
        Some(path) => std::fs::write(path, rendered + "\n")?,
        None => {
            // Tolerate a closed pipe so `aptail ... | head` stays clean.
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{rendered}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }

    if !cli.no_record {
        let record = RunRecord {
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: outcome.command.to_string(),
            config: outcome.config,
            params_digest: params_digest(outcome.n, outcome.k, outcome.p),
            seed: outcome.seed,
            outputs: match &cli.out {
                Some(path) => json!({ "artifact": path.display().to_string() }),
                None => outcome.outputs,
            },
        };
        let store = cli
            .run_store
            .clone()
            .unwrap_or_else(|| settings.run_store.clone());
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&store)?;
        writeln!(file, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(outcome.exit)
}

fn dispatch(cli: &Cli, settings: &Settings) -> Result<RunOutcome, CliError> {
    match &cli.command {
        Command::Index { n, k } => {
            let index = build_index(*n, *k)?;
            Ok(RunOutcome {
                command: "index",
                config: json!({ "N": n, "k": k }),
                outputs: json!({
                    "N": n,
                    "k": k,
                    "count": index.count(),
                    "progressions": index.progressions(),
                }),
                n: Some(*n as u64),
                k: Some(*k),
                p: None,
                seed: None,
                exit: 0,
            })
        }
        Command::Moments { n, k, p } => {
            let m = second_moment_table(*n, *k)?.moments_at(*p)?;
            Ok(RunOutcome {
                command: "moments",
                config: json!({ "N": n, "k": k, "p": p }),
                outputs: serde_json::to_value(m)?,
                n: Some(*n),
                k: Some(*k),
                p: Some(*p),
                seed: None,
                exit: 0,
            })
        }
        Command::PsiStar { n, k, t, mode } => {
            let (size, witness) = match mode.as_str() {
                "exact" => {
                    let n32 = u32::try_from(*n).map_err(|_| {
                        CliError::Config(format!("N = {n} too large for exact mode"))
                    })?;
                    let res = psi_star(&build_index(n32, *k)?, *t, PsiStarMode::Exact)?;
                    (res.size, res.witness)
                }
                "bounded" => {
                    let size = psi_star_bounded(*n, *k, *t)?;
                    let witness = size.map(|m| (1..=m as u32).collect::<Vec<_>>());
                    (size, witness)
                }
                other => {
                    return Err(CliError::Config(format!(
                        "mode must be exact or bounded, got {other:?}"
                    )))
                }
            };
            Ok(RunOutcome {
                command: "psi-star",
                config: json!({ "N": n, "k": k, "t": t, "mode": mode }),
                outputs: json!({
                    "t": t,
                    "mode": mode,
                    "size": size,
                    "witness": witness_json(witness),
                }),
                n: Some(*n),
                k: Some(*k),
                p: None,
                seed: None,
                exit: 0,
            })
        }
        Command::MinSeed {
            n,
            k,
            p,
            t,
            c,
            epsilon,
        } => {
            let pm = load_params(*n, *k, *p)?;
            let query = SeedQuery {
                t: *t,
                c: c.unwrap_or(settings.seed_c),
                epsilon: epsilon.unwrap_or(settings.epsilon),
            };
            let res = min_seed(&pm, &query)?;
            Ok(RunOutcome {
                command: "min-seed",
                config: json!({
                    "N": n, "k": k, "p": p,
                    "t": query.t, "c": query.c, "epsilon": query.epsilon,
                }),
                outputs: json!({
                    "t": query.t,
                    "c": query.c,
                    "epsilon": query.epsilon,
                    "size": res.size,
                    "witness": witness_json(res.witness),
                }),
                n: Some(*n as u64),
                k: Some(*k),
                p: Some(*p),
                seed: None,
                exit: 0,
            })
        }
        Command::Rates {
            regime,
            mu,
            sigma2,
            t,
            n,
            k,
            p,
            theta,
            below_range_c,
        } => {
            let need = |o: Option<f64>, name: &str| {
                o.ok_or_else(|| CliError::Config(format!("--regime {} needs --{name}", regime.clone().unwrap_or_default())))
            };
            match regime.as_deref() {
                Some("gaussian") => {
                    let (t, sigma2) = (need(*t, "t")?, need(*sigma2, "sigma2")?);
                    let rate = gaussian_rate(t, sigma2)?;
                    Ok(RunOutcome {
                        command: "rates",
                        config: json!({ "regime": "gaussian", "t": t, "sigma2": sigma2 }),
                        outputs: json!({ "regime": "gaussian", "rate": rate }),
                        n: None,
                        k: None,
                        p: None,
                        seed: None,
                        exit: 0,
                    })
                }
                Some("poisson") => {
                    let (mu, t) = (need(*mu, "mu")?, need(*t, "t")?);
                    let rate = poisson_tail_rate(mu, t)?;
                    Ok(RunOutcome {
                        command: "rates",
                        config: json!({ "regime": "poisson", "mu": mu, "t": t }),
                        outputs: json!({ "regime": "poisson", "rate": rate }),
                        n: None,
                        k: None,
                        p: None,
                        seed: None,
                        exit: 0,
                    })
                }
                Some("localised") => {
                    let n = n.ok_or_else(|| CliError::Config("--regime localised needs --N".into()))?;
                    let k = k.ok_or_else(|| CliError::Config("--regime localised needs --k".into()))?;
                    let (t, p) = (need(*t, "t")?, need(*p, "p")?);
                    let rate = localised_rate(n, k, t, p)?;
                    Ok(RunOutcome {
                        command: "rates",
                        config: json!({ "regime": "localised", "N": n, "k": k, "t": t, "p": p }),
                        outputs: json!({ "regime": "localised", "rate": rate }),
                        n: Some(n),
                        k: Some(k),
                        p: Some(p),
                        seed: None,
                        exit: 0,
                    })
                }
                Some(other) => Err(CliError::Config(format!(
                    "regime must be gaussian, poisson, or localised, got {other:?}"
                ))),
                None => {
                    let n = n.ok_or_else(|| CliError::Config("classification needs --N".into()))?;
                    let k = k.ok_or_else(|| CliError::Config("classification needs --k".into()))?;
                    let (t, p) = (need(*t, "t")?, need(*p, "p")?);
                    let theta = theta.unwrap_or(settings.theta);
                    let c = below_range_c.unwrap_or(settings.below_range_c);
                    let m = second_moment_table(n, k)?.moments_at(p)?;
                    let diag = classify_regime(&m, t, theta, c)?;
                    Ok(RunOutcome {
                        command: "rates",
                        config: json!({
                            "N": n, "k": k, "p": p, "t": t,
                            "theta": theta, "below-range-c": c,
                        }),
                        outputs: serde_json::to_value(diag)?,
                        n: Some(n),
                        k: Some(k),
                        p: Some(p),
                        seed: None,
                        exit: 0,
                    })
                }
            }
        }
        Command::Phase {
            n,
            k,
            p_min,
            p_max,
            p_steps,
            t_min,
            t_max,
            t_steps,
            csv,
            theta,
            below_range_c,
        } => {
            let theta = theta.unwrap_or(settings.theta);
            let c = below_range_c.unwrap_or(settings.below_range_c);
            let p_grid = log_grid(*p_min, *p_max, *p_steps)?;
            let t_grid = log_grid(*t_min, *t_max, *t_steps)?;
            let cells = phase_grid(*n, *k, &p_grid, &t_grid, theta, c)?;

            let mut writer = csv::Writer::from_path(csv)?;
            writer.write_record([
                "p",
                "t",
                "regime",
                "t_over_sigma",
                "gauss_ratio",
                "poisson_ratio",
                "density_side",
                "rate",
            ])?;
            for cell in &cells {
                let d = &cell.diagnostics;
                writer.write_record([
                    cell.p.to_string(),
                    cell.t.to_string(),
                    d.regime.to_string(),
                    d.t_over_sigma.to_string(),
                    d.gauss_ratio.to_string(),
                    d.poisson_ratio.to_string(),
                    d.density_side.to_string(),
                    d.rate.to_string(),
                ])?;
            }
            writer.flush()?;

            let anchors = phase_anchors(*n, *k);
            let anchors_path = csv.with_extension("anchors.json");
            std::fs::write(
                &anchors_path,
                serde_json::to_string_pretty(&anchors)? + "\n",
            )?;

            Ok(RunOutcome {
                command: "phase",
                config: json!({
                    "N": n, "k": k,
                    "p-min": p_min, "p-max": p_max, "p-steps": p_steps,
                    "t-min": t_min, "t-max": t_max, "t-steps": t_steps,
                    "theta": theta, "below-range-c": c,
                    "csv": csv.display().to_string(),
                }),
                outputs: json!({
                    "cells": cells.len(),
                    "csv": csv.display().to_string(),
                    "anchors_file": anchors_path.display().to_string(),
                    "anchors": anchors,
                }),
                n: Some(*n),
                k: Some(*k),
                p: None,
                seed: None,
                exit: 0,
            })
        }
        Command::TailExact { n, k, p, threshold } => {
            let pm = load_params(*n, *k, *p)?;
            let prob = exact_tail(&pm, *threshold)?;
            Ok(RunOutcome {
                command: "tail-exact",
                config: json!({ "N": n, "k": k, "p": p, "threshold": threshold }),
                outputs: json!({ "threshold": threshold, "probability": prob }),
                n: Some(*n as u64),
                k: Some(*k),
                p: Some(*p),
                seed: None,
                exit: 0,
            })
        }
        Command::TailMc {
            n,
            k,
            p,
            threshold,
            samples,
            seed,
        } => {
            let pm = load_params(*n, *k, *p)?;
            let samples = samples.unwrap_or(settings.samples);
            let seed = seed.unwrap_or(settings.seed);
            let est = mc_tail(&pm, *threshold, samples, seed)?;
            Ok(RunOutcome {
                command: "tail-mc",
                config: json!({
                    "N": n, "k": k, "p": p, "threshold": threshold,
                    "samples": samples, "seed": seed,
                }),
                outputs: serde_json::to_value(est)?,
                n: Some(*n as u64),
                k: Some(*k),
                p: Some(*p),
                seed: Some(seed),
                exit: 0,
            })
        }
        Command::TailIs {
            n,
            k,
            p,
            t,
            threshold,
            epsilon,
            samples,
            seed,
        } => {
            let pm = load_params(*n, *k, *p)?;
            let epsilon = epsilon.unwrap_or(settings.epsilon);
            let samples = samples.unwrap_or(settings.samples);
            let seed = seed.unwrap_or(settings.seed);
            let threshold = threshold.unwrap_or(pm.mu + *t);
            let tilt = gaussian_tilt(&pm, *t, epsilon)?;
            let est = is_tail_product(&pm, &tilt, threshold, samples, seed)?;
            Ok(RunOutcome {
                command: "tail-is",
                config: json!({
                    "N": n, "k": k, "p": p, "t": t, "threshold": threshold,
                    "epsilon": epsilon, "samples": samples, "seed": seed,
                }),
                outputs: json!({
                    "threshold": threshold,
                    "tilt": tilt,
                    "estimate": est,
                }),
                n: Some(*n as u64),
                k: Some(*k),
                p: Some(*p),
                seed: Some(seed),
                exit: 0,
            })
        }
        Command::Sprinkle {
            n,
            k,
            p,
            u,
            samples,
            seed,
        } => {
            let pm = load_params(*n, *k, *p)?;
            let samples = samples.unwrap_or(settings.samples);
            let seed = seed.unwrap_or(settings.seed);
            if samples == 0 {
                return Err(CliError::Config("samples must be positive".into()));
            }
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut max_ratio = f64::NEG_INFINITY;
            let mut bound_sum = 0.0;
            for _ in 0..samples {
                let state = sample_subset(&pm, &mut rng);
                let ratio = sprinkle_ratio(&pm, *u, &state)?;
                sum += ratio.value;
                sum_sq += ratio.value * ratio.value;
                max_ratio = max_ratio.max(ratio.value);
                bound_sum += ratio.upper_bound;
            }
            let mean = sum / samples as f64;
            let var = (sum_sq / samples as f64 - mean * mean).max(0.0);
            let stderr = (var / samples as f64).sqrt();
            Ok(RunOutcome {
                command: "sprinkle",
                config: json!({
                    "N": n, "k": k, "p": p, "u": u,
                    "samples": samples, "seed": seed,
                }),
                outputs: json!({
                    "u": u,
                    "mean_ratio": mean,
                    "stderr": stderr,
                    "max_ratio": max_ratio,
                    "mean_upper_bound": bound_sum / samples as f64,
                }),
                n: Some(*n as u64),
                k: Some(*k),
                p: Some(*p),
                seed: Some(seed),
                exit: 0,
            })
        }
        Command::Freedman {
            n,
            k,
            p,
            t,
            epsilon,
            mc,
            samples,
            seed,
        } => {
            let pm = load_params(*n, *k, *p)?;
            let epsilon = epsilon.unwrap_or(settings.epsilon);
            let m = pm.moments();
            let (p_v, p_medium, p_max, used_seed) = if !mc && *n <= 14 {
                let (a, b, c) = link_event_probs_exact(&pm, *t, epsilon)?;
                (
                    ProbInput::Exact { value: a },
                    ProbInput::Exact { value: b },
                    ProbInput::Exact { value: c },
                    None,
                )
            } else {
                let samples = samples.unwrap_or(settings.samples);
                let seed = seed.unwrap_or(settings.seed);
                if samples == 0 {
                    return Err(CliError::Config("samples must be positive".into()));
                }
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                let (mut hv, mut hm, mut hx) = (0u64, 0u64, 0u64);
                for _ in 0..samples {
                    let state = sample_subset(&pm, &mut rng);
                    let stats = link_statistics(&pm, &state, *t, epsilon)?;
                    hv += stats.event_v as u64;
                    hm += stats.event_medium as u64;
                    hx += stats.event_max as u64;
                }
                (
                    mc_prob(hv, samples),
                    mc_prob(hm, samples),
                    mc_prob(hx, samples),
                    Some(seed),
                )
            };
            let inputs = FreedmanInputs {
                moments: m,
                t: *t,
                epsilon,
                p_v,
                p_medium,
                p_max,
            };
            let bound = freedman_bound(&inputs)?;
            Ok(RunOutcome {
                command: "freedman",
                config: json!({
                    "N": n, "k": k, "p": p, "t": t, "epsilon": epsilon,
                    "mc": mc, "seed": used_seed,
                }),
                outputs: json!({
                    "inputs": inputs,
                    "bound": bound,
                }),
                n: Some(*n as u64),
                k: Some(*k),
                p: Some(*p),
                seed: used_seed,
                exit: 0,
            })
        }
        Command::Janson {
            universe,
            s,
            sets,
            epsilon,
            exact,
        } => {
            let sets: Vec<Vec<u32>> = serde_json::from_str(sets)
                .map_err(|e| CliError::Config(format!("--sets: {e}")))?;
            let epsilon = epsilon.unwrap_or(settings.epsilon);
            let family = janson_family(*universe, *s, sets)?;
            let bound = janson_bound(&family, epsilon)?;
            let exact_prob = if *exact {
                Some(hypergeom_event_exact(&family, (1.0 - epsilon) * family.mu)?)
            } else {
                None
            };
            Ok(RunOutcome {
                command: "janson",
                config: json!({
                    "universe": universe, "s": s, "epsilon": epsilon,
                    "sets": family.sets,
                }),
                outputs: json!({
                    "mu": family.mu,
                    "delta": family.delta,
                    "epsilon": epsilon,
                    "bound": bound,
                    "exact": exact_prob,
                }),
                n: None,
                k: None,
                p: None,
                seed: None,
                exit: 0,
            })
        }
        Command::Clusters {
            n,
            k,
            p,
            t,
            members,
            seed,
            epsilon,
            k_const,
        } => {
            let pm = load_params(*n, *k, *p)?;
            let epsilon = epsilon.unwrap_or(settings.epsilon);
            let k_const = k_const.unwrap_or(settings.k_const);
            let (state, used_seed) = match members {
                Some(text) => {
                    let list = parse_u32_list(text, "--members")?;
                    (SubsetState::from_members(&pm.index, &list)?, None)
                }
                None => {
                    let seed = seed.unwrap_or(settings.seed);
                    let mut rng = ChaCha12Rng::seed_from_u64(seed);
                    (sample_subset(&pm, &mut rng), Some(seed))
                }
            };
            let rows = cluster_census(&pm, &state, *t, epsilon, k_const)?;
            Ok(RunOutcome {
                command: "clusters",
                config: json!({
                    "N": n, "k": k, "p": p, "t": t,
                    "epsilon": epsilon, "k-const": k_const, "seed": used_seed,
                }),
                outputs: json!({
                    "members": state.members(),
                    "rows": rows,
                }),
                n: Some(*n as u64),
                k: Some(*k),
                p: Some(*p),
                seed: used_seed,
                exit: 0,
            })
        }
        Command::Emb {
            k,
            n_vertices,
            edges,
            sub,
            a,
        } => {
            let edges: Vec<Vec<u32>> = serde_json::from_str(edges)
                .map_err(|e| CliError::Config(format!("--edges: {e}")))?;
            let h = Hypergraph::new(*k, *n_vertices, edges)?;
            let sub = parse_u32_list(sub, "--sub")?;
            let mut vertices: Vec<u32> = Vec::new();
            for &id in &sub {
                if id >= h.edge_count() {
                    return Err(CliError::Config(format!("--sub: no edge {id}")));
                }
                vertices.extend_from_slice(h.edge(id));
            }
            vertices.sort_unstable();
            vertices.dedup();
            let a = match a {
                Some(text) => parse_f64_list(text, "--a")?,
                None => h
                    .boundary_suffix(&vertices)?
                    .into_iter()
                    .map(|v| v as f64)
                    .collect(),
            };
            let enc = emb_encode(&h, &sub, &a)?;
            let m = vertices.len() as u32;
            let s = sub.len() as u32;
            Ok(RunOutcome {
                command: "emb",
                config: json!({
                    "k": k, "n-vertices": n_vertices, "sub": sub, "a": a,
                }),
                outputs: json!({
                    "root": enc.root,
                    "marks": enc.marks,
                    "m": m,
                    "s": s,
                    "code_condition": enc.satisfies_code_condition(*k, m, s),
                }),
                n: None,
                k: Some(*k),
                p: None,
                seed: None,
                exit: 0,
            })
        }
        Command::FactMoment {
            n,
            k,
            p,
            t,
            u,
            max_size,
            family,
            c,
            plain,
        } => {
            let pm = load_params(*n, *k, *p)?;
            let filter = match (u, family) {
                (Some(u), true) => Some(SeedFilter::Family {
                    u: *u,
                    c: c.unwrap_or(settings.seed_c),
                }),
                (Some(u), false) => Some(SeedFilter::Cap {
                    u: *u,
                    max_size: max_size.unwrap_or(k * t),
                }),
                (None, true) => {
                    return Err(CliError::Config("--family needs --u".into()));
                }
                (None, false) => None,
            };
            let value = match (&filter, plain) {
                (None, false) => factorial_moment_exact(&pm, *t)?,
                (filter, false) => factorial_moment_filtered(&pm, *t, filter.as_ref())?,
                (filter, true) => plain_moment_filtered(&pm, *t, filter.as_ref())?,
            };
            Ok(RunOutcome {
                command: "fact-moment",
                config: json!({
                    "N": n, "k": k, "p": p, "t": t,
                    "plain": plain, "filter": filter,
                }),
                outputs: json!({
                    "t": t,
                    "plain": plain,
                    "filter": filter,
                    "value": value,
                }),
                n: Some(*n as u64),
                k: Some(*k),
                p: Some(*p),
                seed: None,
                exit: 0,
            })
        }
        Command::Verify => {
            let results = aptail::verify::run_all();
            let mut failed = false;
            for r in &results {
                let verdict = if r.passed { "PASS" } else { "FAIL" };
                eprintln!(
                    "{:2} [{verdict}] {}{}: {} ({} ms)",
                    r.id,
                    r.name,
                    if r.gating { "" } else { " (diagnostic)" },
                    r.details,
                    r.millis
                );
                if r.gating && !r.passed {
                    failed = true;
                }
            }
            Ok(RunOutcome {
                command: "verify",
                config: json!({}),
                outputs: serde_json::to_value(&results)?,
                n: None,
                k: None,
                p: None,
                seed: None,
                exit: if failed { 1 } else { 0 },
            })
        }
    }
}
