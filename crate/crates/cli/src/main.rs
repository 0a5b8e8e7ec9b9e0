use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mckean_core::estimators::{erm_compact, lse, truncated_lse, EstimateResult};
use mckean_core::oracle::{best_approx, check_eigen_bound, gaussian_envelopes, psi_matrix, DensityOracle, EnvelopeParams, QuadSpec};
use mckean_core::sieve::{FourierSieve, FrequencyScale};
use mckean_core::sim::simulate_particles;
use mckean_core::study::{run_study, EstimatorKind, PhiKind, ScheduleKind, StudyConfig};
use mckean_core::{empirics, io, verify, Error};

const CONFIG_HELP: &str = "Run a convergence sweep and write per-row CSV, aggregate CSV and a JSON summary.

The --config file is TOML with flat sections; every key is optional.

  [study]      n_grid = [256, 512, 1024]  replications = 10  seed = 1
               estimators = [\"erm\", \"lse\", \"truncated-lse\"]  timing = false
  [sim]        horizon = 1.0  n_steps = 200  sigma = 1.0  zeta = 1.0
  [phi]        kind = \"zero\" | \"sparse\" | \"kuramoto\" | \"geometric\"
               k_phi = 0.5  base_half_period = 2.0  ratio = 0.9  modes = 40
  [sieve]      schedule = \"rate\" | \"eigen-bound\" | \"fixed\"  delta = 0.1
               a_a, a_d (eigen-bound)  half_period, dim (fixed)
               scale = \"transform\" | \"periodic\"  l1_scope = \"modes\" | \"all\"
               commensurate = true
  [estimator]  eta = 5.0  allow_small_eta = false
               solver = \"projected-gradient\" | \"frank-wolfe\"  max_iters  tol  k_phi
  [oracle]     kind = \"auto\" | \"exact-gaussian\" | \"pilot\"  pilot_factor = 10  time_nodes = 64
  [bands]      slope_min = 0.6  slope_max = 1.4
  [output]     csv = \"study.csv\"  aggregate = \"aggregate.csv\"  json = \"summary.json\"";

#[derive(Parser, Debug)]
#[command(name = "mckean", version, about = "Simulate interacting particles and estimate the interaction function")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (simulate, estimate, oracle) or directory (study).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate particle paths to a binary path file.
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        zeta: Option<f64>,
        /// zero | sparse | kuramoto | geometric
        #[arg(long)]
        phi: Option<String>,
        #[arg(long)]
        k_phi: Option<f64>,
        /// Also store Brownian increments.
        #[arg(long)]
        increments: bool,
        /// Also write `t,particle,x` snapshots at this many evenly spaced times.
        #[arg(long)]
        snapshots: Option<usize>,
    },
    /// Fit one estimator to a path file.
    Estimate {
        #[arg(long)]
        paths: PathBuf,
        /// erm | lse | truncated-lse
        #[arg(long, default_value = "erm")]
        estimator: String,
        /// rate | eigen-bound | fixed (sizes the sieve from the particle count)
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        half_period: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        k_phi: Option<f64>,
        #[arg(long)]
        scale: Option<String>,
        #[arg(long)]
        eta: Option<f64>,
        /// Also write the coefficients as CSV.
        #[arg(long)]
        coefs: Option<PathBuf>,
    },
    /// Run a convergence sweep and write per-row CSV, aggregate CSV and a JSON summary.
    #[command(long_about = CONFIG_HELP)]
    Study {
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        /// Record wall-clock times.
        #[arg(long)]
        timing: bool,
    },
    /// Population Gram matrix, best approximation and envelope checks at one sample size.
    Oracle {
        #[arg(long, default_value_t = 1024)]
        n: usize,
    },
    /// Run the identity and equivalence checks.
    Verify,
}

fn load_config(global: &Global) -> anyhow::Result<StudyConfig> {
    let mut cfg = match &global.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            StudyConfig::from_toml(&text)?
        }
        None => StudyConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.study.seed = s;
    }
    Ok(cfg)
}

fn parse_phi(s: &str) -> Result<PhiKind, Error> {
    match s {
        "zero" => Ok(PhiKind::Zero),
        "sparse" => Ok(PhiKind::Sparse),
        "kuramoto" => Ok(PhiKind::Kuramoto),
        "geometric" => Ok(PhiKind::Geometric),
        other => Err(Error::Config(format!("unknown interaction `{other}`"))),
    }
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, Error> {
    match s {
        "erm" => Ok(EstimatorKind::Erm),
        "lse" => Ok(EstimatorKind::Lse),
        "truncated-lse" => Ok(EstimatorKind::TruncatedLse),
        other => Err(Error::Config(format!("unknown estimator `{other}`"))),
    }
}

fn parse_schedule(s: &str) -> Result<ScheduleKind, Error> {
    match s {
        "rate" | "thm24" => Ok(ScheduleKind::Rate),
        "eigen-bound" | "section33" => Ok(ScheduleKind::EigenBound),
        "fixed" => Ok(ScheduleKind::Fixed),
        other => Err(Error::Config(format!("unknown schedule `{other}`"))),
    }
}

fn write_json(path: &Path, v: &serde_json::Value) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(t) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring thread pool")?;
    }
    let mut cfg = load_config(&cli.global)?;
    let out = cli.global.out.clone();
    match cli.command {
        Command::Simulate { n, horizon, steps, sigma, zeta, phi, k_phi, increments, snapshots } => {
            if let Some(v) = horizon {
                cfg.sim.horizon = v;
            }
            if let Some(v) = steps {
                cfg.sim.n_steps = Some(v);
            }
            if let Some(v) = sigma {
                cfg.sim.sigma = v;
            }
            if let Some(v) = zeta {
                cfg.sim.zeta = v;
            }
            if let Some(v) = phi {
                cfg.phi.kind = parse_phi(&v)?;
            }
            if let Some(v) = k_phi {
                cfg.phi.k_phi = v;
            }
            let n = n.unwrap_or(cfg.study.n_grid[0]);
            let sim = cfg.sim_config(n, cfg.study.seed).with_increments(increments);
            let paths = simulate_particles(&sim, &cfg.interaction()?)?;
            let out = out.unwrap_or_else(|| "paths.mkvp".into());
            io::write_mkvp(BufWriter::new(File::create(&out)?), &paths)?;
            if let Some(k) = snapshots {
                let m = paths.n_steps();
                let steps: Vec<usize> = (0..k.max(1)).map(|j| j * m / k.max(2).saturating_sub(1).max(1)).map(|s| s.min(m)).collect();
                let csv = out.with_extension("csv");
                io::write_snapshots_csv(BufWriter::new(File::create(&csv)?), &paths, &steps)?;
            }
            println!("wrote {} particles x {} steps to {}", n, paths.n_steps(), out.display());
        }
        Command::Estimate { paths, estimator, schedule, half_period, dim, k_phi, scale, eta, coefs } => {
            let kind = parse_estimator(&estimator)?;
            if let Some(s) = schedule {
                cfg.sieve.schedule = parse_schedule(&s)?;
            }
            let ens = io::read_mkvp(BufReader::new(File::open(&paths).with_context(|| format!("opening {}", paths.display()))?))?;
            let n = ens.n_particles();
            let scale = match scale {
                Some(s) => FrequencyScale::parse(&s)?,
                None => cfg.sieve.scale,
            };
            cfg.sieve.scale = scale;
            if let Some(e) = eta {
                cfg.estimator.eta = e;
            }
            let k = k_phi.unwrap_or(if cfg.phi.k_phi > 0.0 { cfg.phi.k_phi } else { 1.0 });
            let sched = cfg.schedule(n)?;
            let sieve = FourierSieve::new(half_period.unwrap_or(sched.half_period), dim.unwrap_or(sched.dim), k)?
                .with_scale(scale)
                .with_l1_scope(cfg.sieve.l1_scope);
            let gram = empirics::assemble_gram(&ens, &sieve);
            let est: EstimateResult = match kind {
                EstimatorKind::Erm => erm_compact(&gram, &cfg.erm_settings())?,
                EstimatorKind::Lse => EstimateResult { coeffs: lse(&gram)?, truncated: false, diagnostics: Default::default() },
                EstimatorKind::TruncatedLse => truncated_lse(&gram, &cfg.truncation()?)?,
            };
            let mut v = est.to_json();
            v["estimator"] = serde_json::json!(kind.name());
            v["gram"] = gram.to_json();
            match out {
                Some(p) => write_json(&p, &v)?,
                None => println!("{}", serde_json::to_string_pretty(&v)?),
            }
            if let Some(p) = coefs {
                est.coeffs.write_csv(BufWriter::new(File::create(p)?))?;
            }
        }
        Command::Study { reps, n_grid, timing } => {
            if let Some(r) = reps {
                cfg.study.replications = r;
            }
            if let Some(g) = n_grid {
                cfg.study.n_grid = g;
            }
            cfg.study.timing |= timing;
            let report = run_study(&cfg)?;
            let dir = out.unwrap_or_else(|| ".".into());
            fs::create_dir_all(&dir)?;
            fs::write(dir.join(&cfg.output.csv), report.to_csv())?;
            fs::write(dir.join(&cfg.output.aggregate), report.aggregate_csv())?;
            write_json(&dir.join(&cfg.output.json), &report.summary_json())?;
            for f in &report.fits {
                match &f.fit {
                    Some(fit) => println!(
                        "{}: slope {:.3} (r2 {:.3}), band [{}, {}] {}",
                        f.estimator.name(),
                        fit.slope,
                        fit.r2,
                        cfg.bands.slope_min,
                        cfg.bands.slope_max,
                        if f.within_band { "PASS" } else { "FAIL" }
                    ),
                    None => println!("{}: no fit ({})", f.estimator.name(), f.fit_error.as_deref().unwrap_or("")),
                }
            }
            println!("{} rows ({} failed) written to {}", report.rows.len(), report.failed_rows, dir.display());
        }
        Command::Oracle { n } => {
            let phi = cfg.interaction()?;
            let sieve = cfg.sieve_for(n, &phi)?;
            let oracle = if phi.is_zero() {
                DensityOracle::gaussian(cfg.sim.zeta, cfg.sim.sigma, cfg.sim.horizon)?
            } else {
                let pilot = cfg.sim_config(cfg.oracle.pilot_factor * n, cfg.study.seed);
                DensityOracle::pilot(std::sync::Arc::new(simulate_particles(&pilot, &phi)?))
            };
            let nt = cfg.oracle.time_nodes;
            let psi = psi_matrix(&oracle, &sieve, nt)?;
            let quad = QuadSpec { time_nodes: nt, ..QuadSpec::default() };
            let best = best_approx(&phi, &oracle, &sieve, &quad)?;
            let mut v = serde_json::json!({
                "n": n,
                "psi": psi.to_json(),
                "best_approx": {
                    "coeffs": io::complex_pairs(&best.coeffs.coeffs),
                    "error_sq": best.error_sq,
                    "phi_norm_sq": best.phi_norm_sq,
                    "orthogonality": best.orthogonality,
                },
            });
            if phi.is_zero() {
                let zeta = cfg.sim.zeta;
                let g1 = move |_t: f64| 1.0 / (2.0 * std::f64::consts::PI * zeta * zeta).sqrt();
                let g2 = |_t: f64| 1.0;
                let gauss = DensityOracle::gaussian(zeta, 0.0, cfg.sim.horizon)?;
                let rep = check_eigen_bound(&gauss, &sieve, 2.0 * zeta * zeta, 2.0 / (zeta * zeta), &g1, &g2, nt)?;
                v["lambda_min_bound"] = serde_json::to_value(rep)?;
            }
            let p = EnvelopeParams { zeta: cfg.sim.zeta, sigma: cfg.sim.sigma, k_phi: phi.k_phi(), horizon: cfg.sim.horizon };
            let mut checked = 0usize;
            let mut violations = 0usize;
            for i in 0..=16 {
                let t = cfg.sim.horizon * i as f64 / 16.0;
                for j in -24..=24 {
                    let x = 0.25 * j as f64;
                    let e = gaussian_envelopes(t, x, x, &p);
                    let d = oracle.density(t, x);
                    checked += 1;
                    if d < e.density_lower || d > e.density_upper * (1.0 + 1e-9) || oracle.fourier(t, x).norm() > e.fourier_upper * (1.0 + 1e-9) {
                        violations += 1;
                    }
                }
            }
            v["envelopes"] = serde_json::json!({"points": checked, "violations": violations});
            match out {
                Some(p) => write_json(&p, &v)?,
                None => println!("{}", serde_json::to_string_pretty(&v)?),
            }
        }
        Command::Verify => {
            let seed = cli.global.seed.unwrap_or(cfg.study.seed);
            let checks = verify::run_verification(seed);
            let mut all = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                all &= c.passed;
            }
            if !all {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<Error>().map(Error::is_usage).unwrap_or(false);
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
