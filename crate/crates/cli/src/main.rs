//! `tfim`: batch front end for the path-integral toolkit.
//!
//! Every run resolves a flat configuration (file values overridden by
//! flags), writes its CSV tables and JSON summaries to the output directory
//! together with `manifest.json`, and exits with 0 on success, 1 when a
//! battery fails and 2 on configuration errors.

mod commands;
mod config;
mod specs;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tfim_core::report::{self, SCHEMA_VERSION};
use tfim_core::StreamFactory;

use config::{Config, ConfigError};

#[derive(Parser)]
#[command(name = "tfim", version, about = "Path-integral transverse-field Ising toolkit")]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for tables, summaries and the manifest.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Flat `key = value` config file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for replica loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Checks against exact answers.
    #[command(subcommand)]
    Verify(Verify),
    /// Coupled plus/minus Glauber runs with a censoring schedule.
    Dynamics(DynamicsArgs),
    /// Root-magnetization autocorrelation time across tree depths.
    GapScan(GapScanArgs),
    /// Grid-exact cavity quantities on b-ary trees.
    Cavity(CavityArgs),
    /// Monte Carlo magnetization gaps along a tree spine.
    KappaMc(KappaMcArgs),
}

#[derive(Subcommand)]
enum Verify {
    /// Glauber estimates against exact diagonalization.
    Ed(ModelArgs),
    /// Single-site sampler against the closed form.
    SingleSite(SingleSiteArgs),
    /// Exact censoring inequalities on a small grid system.
    Censoring(CensoringArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Graph: single, path:<n>, cycle:<n>, tree:<b>:<depth>[:<boundary>].
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    burn_in: Option<f64>,
}

impl ModelArgs {
    fn apply(&self, c: &mut Config) {
        c.set("graph", self.graph.clone());
        c.set("beta", self.beta);
        c.set("lambda", self.lambda);
        c.set("h", self.h);
        c.set("n_samples", self.n_samples);
        c.set("burn_in", self.burn_in);
    }
}

#[derive(Args)]
struct SingleSiteArgs {
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated h:lambda pairs.
    #[arg(long)]
    points: Option<String>,
    #[arg(long)]
    n_samples: Option<usize>,
}

#[derive(Args)]
struct CensoringArgs {
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    grid_n: Option<usize>,
    /// Smaller schedule, e.g. `0@sites:0;1@full`.
    #[arg(long)]
    schedule_a: Option<String>,
    #[arg(long)]
    schedule_b: Option<String>,
    /// Comma-separated time points.
    #[arg(long)]
    times: Option<String>,
    /// Time boundary: free or periodic.
    #[arg(long)]
    bc: Option<String>,
}

#[derive(Args)]
struct DynamicsArgs {
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    /// continuum or grid.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    n_times: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    bc: Option<String>,
}

#[derive(Args)]
struct GapScanArgs {
    #[arg(long)]
    b: Option<usize>,
    /// Comma-separated depths.
    #[arg(long)]
    depths: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    boundary: Option<String>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    t_total: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
}

#[derive(Args)]
struct CavityArgs {
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    grid_n: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    boundary: Option<String>,
    #[arg(long)]
    kmax: Option<usize>,
}

#[derive(Args)]
struct KappaMcArgs {
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    boundary: Option<String>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    spacing: Option<f64>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Verify(Verify::Ed(_)) => "verify ed",
            Command::Verify(Verify::SingleSite(_)) => "verify single-site",
            Command::Verify(Verify::Censoring(_)) => "verify censoring",
            Command::Dynamics(_) => "dynamics",
            Command::GapScan(_) => "gap-scan",
            Command::Cavity(_) => "cavity",
            Command::KappaMc(_) => "kappa-mc",
        }
    }

    fn apply(&self, c: &mut Config) {
        match self {
            Command::Verify(Verify::Ed(a)) => a.apply(c),
            Command::Verify(Verify::SingleSite(a)) => {
                c.set("beta", a.beta);
                c.set("points", a.points.clone());
                c.set("n_samples", a.n_samples);
            }
            Command::Verify(Verify::Censoring(a)) => {
                c.set("graph", a.graph.clone());
                c.set("beta", a.beta);
                c.set("lambda", a.lambda);
                c.set("h", a.h);
                c.set("grid_n", a.grid_n);
                c.set("schedule_a", a.schedule_a.clone());
                c.set("schedule_b", a.schedule_b.clone());
                c.set("times", a.times.clone());
                c.set("bc", a.bc.clone());
            }
            Command::Dynamics(a) => {
                c.set("graph", a.graph.clone());
                c.set("beta", a.beta);
                c.set("lambda", a.lambda);
                c.set("h", a.h);
                c.set("mode", a.mode.clone());
                c.set("grid_n", a.grid_n);
                c.set("schedule", a.schedule.clone());
                c.set("t_end", a.t_end);
                c.set("n_times", a.n_times);
                c.set("replicas", a.replicas);
                c.set("bc", a.bc.clone());
            }
            Command::GapScan(a) => {
                c.set("b", a.b);
                c.set("depths", a.depths.clone());
                c.set("beta", a.beta);
                c.set("lambda", a.lambda);
                c.set("h", a.h);
                c.set("boundary", a.boundary.clone());
                c.set("burn_in", a.burn_in);
                c.set("t_total", a.t_total);
                c.set("dt", a.dt);
                c.set("replicas", a.replicas);
            }
            Command::Cavity(a) => {
                c.set("b", a.b);
                c.set("grid_n", a.grid_n);
                c.set("beta", a.beta);
                c.set("lambda", a.lambda);
                c.set("h", a.h);
                c.set("depth", a.depth);
                c.set("boundary", a.boundary.clone());
                c.set("kmax", a.kmax);
            }
            Command::KappaMc(a) => {
                c.set("b", a.b);
                c.set("depth", a.depth);
                c.set("beta", a.beta);
                c.set("lambda", a.lambda);
                c.set("h", a.h);
                c.set("boundary", a.boundary.clone());
                c.set("n_samples", a.n_samples);
                c.set("burn_in", a.burn_in);
                c.set("spacing", a.spacing);
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let start = Instant::now();
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cli.command.apply(&mut cfg);
    cfg.set("seed", cli.seed);
    cfg.set("out_dir", cli.out_dir.as_ref().map(|p| p.display()));
    cfg.set("threads", cli.threads);
    cfg.set_default("seed", 1);
    cfg.set_default("out_dir", "tfim-out");
    cfg.set_default("threads", 1);
    let seed: u64 = cfg.get("seed")?;
    let threads: usize = cfg.get("threads")?;
    let out_dir = PathBuf::from(cfg.get_str("out_dir")?);
    rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global().ok();
    let streams = StreamFactory::new(seed);
    let outcome = match &cli.command {
        Command::Verify(Verify::Ed(_)) => commands::verify_ed(&cfg, streams)?,
        Command::Verify(Verify::SingleSite(_)) => commands::verify_single_site(&cfg, streams)?,
        Command::Verify(Verify::Censoring(_)) => commands::verify_censoring(&cfg)?,
        Command::Dynamics(_) => commands::dynamics(&cfg, streams)?,
        Command::GapScan(_) => commands::gap_scan(&cfg, streams)?,
        Command::Cavity(_) => commands::cavity(&cfg, streams)?,
        Command::KappaMc(_) => commands::kappa_mc_cmd(&cfg, streams)?,
    };
    std::fs::create_dir_all(&out_dir)?;
    let mut outputs = Vec::new();
    for t in &outcome.tables {
        t.write(&out_dir)?;
        outputs.push(format!("{}.csv", t.name));
    }
    for (name, value) in &outcome.summaries {
        report::write_json(&out_dir, name, value)?;
        outputs.push(format!("{name}.json"));
    }
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "command": cli.command.name(),
        "seed": seed,
        "config": cfg.to_json(),
        "code_version": env!("CARGO_PKG_VERSION"),
        "wall_time_seconds": start.elapsed().as_secs_f64(),
        "verdict": if outcome.failed { "FAIL" } else { "PASS" },
        "outputs": outputs,
    });
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    print!("{}", outcome.display);
    Ok(outcome.failed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("tfim: {e}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
