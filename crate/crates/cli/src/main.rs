mod config;
mod validate;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{EffectiveModel, RunConfig, SCHEMA_HELP};
use oscillachain::basin::{run_experiment, BasinOptions, StopRule};
use oscillachain::continuation::{
    continue_branch, period_doubling_cascade, seed_by_simulation, seed_orbit, trace_region, ContinuationOptions,
    RegionOptions,
};
use oscillachain::equilibria::enumerate_equilibria;
use oscillachain::model::{ParamKind, Parameters};
use oscillachain::numerics::IntegratorOptions;
use oscillachain::orbits::{OrbitOptions, OrbitRecord};
use oscillachain::simulate::simulate;
use oscillachain::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const SEED_ENV: &str = "OSCILLACHAIN_SEED";
const DEFAULT_SEED: u64 = 0;

#[derive(Parser, Debug)]
#[command(name = "oscillachain", version, about = "Phase-difference dynamics of an asymmetrically coupled oscillator chain")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Omit the timestamp from output metadata.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ModelArgs {
    #[arg(long = "n")]
    n: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    k: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    delta: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct OutArgs {
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ParamArg {
    K,
    Delta,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StopArg {
    Window,
    AllTrapped,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enumerate equilibria with their stability indices (JSON).
    Equilibria {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Integrate one trajectory (CSV `t,x1..xN,E`).
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// Initial state, comma separated; random from the seed when omitted.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100.0)]
        t_end: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compute the primary rotating orbit at one parameter point (JSON).
    Orbit {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        segments: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Continue the primary rotating orbit in one parameter (CSV).
    Branch {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum)]
        param: ParamArg,
        /// Continuation range `lo,hi`.
        #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
        range: Option<Vec<f64>>,
        /// Follow this many period doublings; each level goes to `<out>.pd<i>.csv`.
        #[arg(long)]
        cascade: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Trace the rotating-orbit region over a k grid (CSV).
    Region {
        #[arg(long = "n")]
        n: Option<usize>,
        #[arg(long, allow_negative_numbers = true, default_value_t = -0.8)]
        k_min: f64,
        #[arg(long, allow_negative_numbers = true, default_value_t = -0.1)]
        k_max: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
        #[arg(long, default_value_t = 0.05)]
        delta_step: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Monte Carlo fraction of initial conditions that never synchronize (JSON).
    Basin {
        #[arg(long = "n-values", value_delimiter = ',', default_value = "2,3,4,5")]
        n_values: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 500)]
        n_ic: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = StopArg::Window)]
        stop_rule: StopArg,
        #[arg(long)]
        time_cap: Option<f64>,
        /// Fix δ for every realization instead of sampling it.
        #[arg(long)]
        delta: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the built-in property suites and print a pass/fail summary.
    Validate {
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::UnsupportedN(_) | Error::Dimension { .. } | Error::InvalidCoupling(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Domain(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    model: Option<&'a EffectiveModel>,
    options: serde_json::Value,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
}

struct Run {
    cfg: RunConfig,
    deterministic: bool,
}

impl Run {
    fn metadata<'a>(
        &'a self,
        command: &'static str,
        model: Option<&'a EffectiveModel>,
        options: impl Serialize,
        seed: Option<u64>,
    ) -> Metadata<'a> {
        let timestamp = (!self.deterministic).then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        Metadata {
            tool: "oscillachain",
            version: env!("CARGO_PKG_VERSION"),
            command,
            model,
            options: serde_json::to_value(options).unwrap_or(serde_json::Value::Null),
            config: &self.cfg,
            seed,
            timestamp,
        }
    }

    fn model(&self, m: &ModelArgs) -> CliResult<EffectiveModel> {
        EffectiveModel::resolve(self.cfg.model.as_ref(), m.n, m.k, m.delta).map_err(Failure::Usage)
    }

    fn out_path(&self, o: &OutArgs) -> Option<PathBuf> {
        o.out.clone().or_else(|| self.cfg.outputs.out.as_ref().map(PathBuf::from))
    }

    fn seed(&self, flag: Option<u64>) -> CliResult<u64> {
        if let Some(s) = flag.or(self.cfg.seeds.base) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }

    fn integrator(&self, default: IntegratorOptions) -> IntegratorOptions {
        IntegratorOptions {
            abs_tol: self.cfg.tolerances.abs.unwrap_or(default.abs_tol),
            rel_tol: self.cfg.tolerances.rel.unwrap_or(default.rel_tol),
            ..default
        }
    }

    fn orbit_options(&self) -> OrbitOptions {
        let d = OrbitOptions::default();
        OrbitOptions {
            integrator: self.integrator(d.integrator),
            tol: self.cfg.tolerances.orbit.unwrap_or(d.tol),
            ..d
        }
    }
}

fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Domain(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// CSV body plus a `.meta.json` sidecar next to it.
fn write_csv(path: Option<&Path>, csv: &str, meta: &Metadata) -> CliResult<()> {
    write_text(path, csv)?;
    if let Some(p) = path {
        write_text(Some(&sidecar(p)), &to_json(meta)?)?;
    }
    Ok(())
}

fn to_json(v: &impl Serialize) -> CliResult<String> {
    serde_json::to_string_pretty(v)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Failure::Domain(e.to_string()))
}

/// `{"metadata": …, key: payload, …}` with the payload re-parseable on its own.
fn document(meta: &Metadata, entries: &[(&str, serde_json::Value)]) -> CliResult<String> {
    let mut doc = serde_json::Map::new();
    doc.insert("metadata".into(), serde_json::to_value(meta).map_err(|e| Failure::Domain(e.to_string()))?);
    for (k, v) in entries {
        doc.insert((*k).into(), v.clone());
    }
    to_json(&doc)
}

fn value(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn branch_seed(p: &Parameters, param: ParamArg, given_delta: bool, opts: OrbitOptions) -> CliResult<(oscillachain::orbits::PeriodicOrbit, Parameters)> {
    if param == ParamArg::K || given_delta {
        return Ok((seed_orbit(p, opts)?, p.clone()));
    }
    // no δ given: sweep down from the symmetric point, then the mirrored half
    seed_by_simulation(p, PI / 2.0, 0.05, 0.05, opts)
        .or_else(|| seed_by_simulation(p, PI / 2.0 + 0.05, PI - 0.05, 0.05, opts))
        .ok_or_else(|| Failure::Domain(format!("no rotating orbit found by simulation at k = {}", p.k)))
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let run = Run {
        cfg,
        deterministic: cli.deterministic,
    };
    match &cli.command {
        Command::Equilibria { model, out } => {
            let m = run.model(model)?;
            let p = m.parameters()?;
            let eqs = enumerate_equilibria(&p)?;
            let doc = document(&run.metadata("equilibria", Some(&m), model, None), &[("equilibria", value(&eqs))])?;
            write_text(run.out_path(out).as_deref(), &doc)
        }
        Command::Simulate {
            model,
            x0,
            t_end,
            seed,
            out,
        } => {
            let m = run.model(model)?;
            let p = m.parameters()?;
            let seed = run.seed(*seed)?;
            let x0 = match x0 {
                Some(x) => x.clone(),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    (0..p.n).map(|_| rng.gen_range(0.0..TAU)).collect()
                }
            };
            if x0.len() != p.n {
                return Err(Failure::Usage(format!("--x0 has {} entries, N = {}", x0.len(), p.n)));
            }
            let integ = run.integrator(IntegratorOptions::default());
            let traj = simulate(&x0, &p, *t_end, integ)?;
            let opts = serde_json::json!({"x0": x0, "t_end": t_end});
            write_csv(run.out_path(out).as_deref(), &traj.to_csv(&p), &run.metadata("simulate", Some(&m), opts, Some(seed)))
        }
        Command::Orbit { model, segments, out } => {
            let m = run.model(model)?;
            let p = m.parameters()?;
            let mut opts = run.orbit_options();
            if let Some(s) = segments {
                opts.segments = *s;
            }
            let o = seed_orbit(&p, opts)?;
            let record: OrbitRecord = o.to_record(&p);
            let meta = run.metadata("orbit", Some(&m), serde_json::json!({"segments": opts.segments}), None);
            let doc = document(&meta, &[("orbit", value(&record)), ("residual", value(&o.residual))])?;
            write_text(run.out_path(out).as_deref(), &doc)
        }
        Command::Branch {
            model,
            param,
            range,
            cascade,
            out,
        } => {
            let mut m = run.model(model)?;
            let given_delta = model.delta.is_some() || run.cfg.model.as_ref().and_then(|c| c.delta).is_some();
            if !given_delta {
                m.delta = PI / 2.0;
            }
            let p = m.parameters()?;
            let (kind, default_range) = match param {
                ParamArg::K => (ParamKind::K, (-0.99, 0.5)),
                ParamArg::Delta => (ParamKind::Delta, (0.01, PI - 0.01)),
            };
            let range = range.as_ref().map(|r| (r[0], r[1])).unwrap_or(default_range);
            if !(range.0 < range.1) {
                return Err(Failure::Usage("--range needs lo < hi".into()));
            }
            let copts = ContinuationOptions {
                orbit: run.orbit_options(),
                ..ContinuationOptions::default()
            };
            let (seed, q) = branch_seed(&p, *param, given_delta, copts.orbit)?;
            m.delta = q.delta;
            let branch = continue_branch(&seed, &q, kind, range, copts)?;
            let path = run.out_path(out);
            let opts = serde_json::json!({"param": param, "range": range, "cascade": cascade,
                "seed_param": kind.get(&q), "terminations": format!("{:?}", branch.terminations)});
            write_csv(path.as_deref(), &branch.to_csv(), &run.metadata("branch", Some(&m), &opts, None))?;
            if let Some(depth) = cascade {
                let levels = period_doubling_cascade(&branch, &q, *depth, range, copts)?;
                for (i, b) in levels.iter().enumerate() {
                    let level_path = path.as_ref().map(|p| {
                        let mut s = p.as_os_str().to_owned();
                        s.push(format!(".pd{}.csv", i + 1));
                        PathBuf::from(s)
                    });
                    let opts = serde_json::json!({"param": param, "range": range, "level": i + 1});
                    write_csv(level_path.as_deref(), &b.to_csv(), &run.metadata("branch", Some(&m), &opts, None))?;
                }
            }
            Ok(())
        }
        Command::Region {
            n,
            k_min,
            k_max,
            points,
            delta_step,
            out,
        } => {
            let n = n
                .or(run.cfg.model.as_ref().and_then(|c| c.n))
                .ok_or_else(|| Failure::Usage("model N is required (--n or config model.N)".into()))?;
            if *points < 2 || !(k_min < k_max) {
                return Err(Failure::Usage("region needs --points >= 2 and --k-min < --k-max".into()));
            }
            let grid: Vec<f64> = (0..*points)
                .map(|i| k_min + (k_max - k_min) * i as f64 / (*points - 1) as f64)
                .collect();
            let mut opts = RegionOptions {
                delta_step: *delta_step,
                ..RegionOptions::default()
            };
            opts.continuation.orbit = run.orbit_options();
            let region = trace_region(n, &grid, opts)?;
            let meta_opts = serde_json::json!({"N": n, "k_min": k_min, "k_max": k_max, "points": points, "delta_step": delta_step});
            write_csv(run.out_path(out).as_deref(), &region.to_csv(), &run.metadata("region", None, meta_opts, None))
        }
        Command::Basin {
            n_values,
            trials,
            n_ic,
            seed,
            stop_rule,
            time_cap,
            delta,
            out,
        } => {
            let seed = run.seed(*seed)?;
            let d = BasinOptions::default();
            let opts = BasinOptions {
                stop_rule: match stop_rule {
                    StopArg::Window => StopRule::GlobalWindow,
                    StopArg::AllTrapped => StopRule::AllTrappedOrCap,
                },
                time_cap: time_cap.unwrap_or(d.time_cap),
                delta_override: *delta,
                integrator: run.integrator(d.integrator),
                ..d
            };
            let summary = run_experiment(n_values, *trials, *n_ic, seed, &opts)?;
            let meta = run.metadata("basin", None, serde_json::json!({"n_values": n_values}), Some(seed));
            write_text(run.out_path(out).as_deref(), &document(&meta, &[("basin", value(&summary))])?)
        }
        Command::Validate { seed } => {
            let seed = run.seed(*seed)?;
            let results = validate::run_all(seed);
            let mut ok = true;
            for r in &results {
                ok &= r.pass;
                println!("{}: {} ({})", r.name, if r.pass { "PASS" } else { "FAIL" }, r.detail);
            }
            println!("{}/{} suites passed", results.iter().filter(|r| r.pass).count(), results.len());
            if ok {
                Ok(())
            } else {
                Err(Failure::Domain("validation failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code != 0 {
                eprintln!("\n{SCHEMA_HELP}");
            }
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{SCHEMA_HELP}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
