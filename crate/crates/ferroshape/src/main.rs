use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use ferroshape::campaign::{
    load_log, run_campaign, Baseline, CampaignConfig, CampaignError, LocalRunner, RunOptions,
};
use ferroshape::formats::{self, KeyValues};
use ferroshape::protocol::{Client, Server, Session};
use ferroshape::report::emit_report;
use ferroshape_core::plant::{Plant, PlantParams};

/// Environment variable holding the default server endpoint.
const ENDPOINT_ENV: &str = "FERROSHAPE_ENDPOINT";

#[derive(Parser)]
#[command(name = "ferroshape", version, about = "Closed-loop droplet shaping with batch Bayesian optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the simulated plant server.
    Serve(ServeArgs),
    /// Run a Bayesian-optimization shaping campaign.
    Run(RunArgs),
    /// Run the matched-budget random-search baseline.
    Baseline(RunArgs),
    /// Write trace CSVs and an SVG overlay for a campaign directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// Plant parameter file (`key = value`).
    #[arg(long)]
    plant: Option<PathBuf>,
    /// Seed of the plant's observation noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Advance the simulated clock instead of sleeping through ramps and resets.
    #[arg(long)]
    accelerated: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Campaign config file (`key = value`); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run against an in-process simulated plant instead of a server.
    #[arg(long)]
    local: bool,
    /// Plant parameter file for `--local`.
    #[arg(long)]
    plant: Option<PathBuf>,
    /// Plant noise seed for `--local`.
    #[arg(long, default_value_t = 0)]
    plant_seed: u64,
    /// Continue an interrupted campaign in the output directory.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    fields: ConfigFlags,
}

/// One flag per configuration key.
#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long)]
    target_file: Option<String>,
    /// triangle | rectangle | ellipse | letter
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    hbr: Option<String>,
    #[arg(long)]
    aspect: Option<String>,
    #[arg(long)]
    axis_ratio: Option<String>,
    #[arg(long)]
    corner_radius: Option<String>,
    #[arg(long)]
    nominal_radius: Option<String>,
    #[arg(long)]
    rotation_deg: Option<String>,
    /// `all` or 0-based sector indices, e.g. `0,1,2,30,31`.
    #[arg(long)]
    optimize_mask: Option<String>,
    /// Compass names, e.g. `NW,NE,S`, or `all` / `none`.
    #[arg(long)]
    solenoid_mask: Option<String>,
    #[arg(long)]
    n_init: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    max_batches: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// per-experiment | per-batch
    #[arg(long)]
    reset_policy: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    /// none | random_search
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    mc_samples: Option<String>,
    #[arg(long)]
    starts: Option<String>,
    #[arg(long)]
    refine: Option<String>,
    #[arg(long)]
    fit_restarts: Option<String>,
    #[arg(long)]
    fit_iters: Option<String>,
    #[arg(long)]
    timeout_s: Option<String>,
}

impl ConfigFlags {
    fn overlay(&self, kv: &mut KeyValues) {
        let pairs = [
            ("target_file", &self.target_file),
            ("kind", &self.kind),
            ("hbr", &self.hbr),
            ("aspect", &self.aspect),
            ("axis_ratio", &self.axis_ratio),
            ("corner_radius", &self.corner_radius),
            ("nominal_radius", &self.nominal_radius),
            ("rotation_deg", &self.rotation_deg),
            ("optimize_mask", &self.optimize_mask),
            ("solenoid_mask", &self.solenoid_mask),
            ("n_init", &self.n_init),
            ("batch_size", &self.batch_size),
            ("max_batches", &self.max_batches),
            ("seed", &self.seed),
            ("reset_policy", &self.reset_policy),
            ("endpoint", &self.endpoint),
            ("baseline", &self.baseline),
            ("output", &self.output),
            ("mc_samples", &self.mc_samples),
            ("starts", &self.starts),
            ("refine", &self.refine),
            ("fit_restarts", &self.fit_restarts),
            ("fit_iters", &self.fit_iters),
            ("timeout_s", &self.timeout_s),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                kv.set(k, v.clone());
            }
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Campaign output directory.
    dir: PathBuf,
    /// Where to write the report (defaults to the campaign directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Defaults, then the endpoint variable, then the config file, then flags.
fn resolve_config(args: &RunArgs) -> Result<CampaignConfig, CampaignError> {
    let mut cfg = CampaignConfig::default();
    if let Ok(ep) = std::env::var(ENDPOINT_ENV) {
        cfg.endpoint = ep;
    }
    let (mut kv, base) = match &args.config {
        Some(path) => (
            KeyValues::parse(&formats::read_file(path)?)?,
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        ),
        None => (KeyValues::default(), PathBuf::from(".")),
    };
    args.fields.overlay(&mut kv);
    cfg.apply(&kv, &base)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_plant(path: &Option<PathBuf>) -> Result<PlantParams, CampaignError> {
    Ok(match path {
        Some(p) => formats::load_plant_params(p)?,
        None => PlantParams::default(),
    })
}

fn campaign(args: &RunArgs, baseline: bool) -> Result<u8, CampaignError> {
    let mut cfg = resolve_config(args)?;
    if baseline {
        cfg.baseline = Baseline::RandomSearch;
    }
    let opts = RunOptions {
        resume: args.resume,
        halt_after: None,
    };
    let log = if args.local {
        let mut runner = LocalRunner::new(load_plant(&args.plant)?, args.plant_seed)?;
        run_campaign(&cfg, &mut runner, opts)?
    } else {
        let mut client = Client::connect(&cfg.endpoint, Duration::from_secs_f64(cfg.timeout_s))?;
        run_campaign(&cfg, &mut client, opts)?
    };
    let s = &log.summary;
    println!(
        "best J = {:.4} at experiment {}; radii error {:.3} \u{b1} {:.3} mm, max {:.3} mm; logs in {}",
        s.best_objective,
        s.best_index,
        s.error_mm.mean,
        s.error_mm.sd,
        s.error_mm.max,
        cfg.output.display()
    );
    if s.collapses > 0 {
        eprintln!("{} experiment(s) collapsed the droplet", s.collapses);
        return Ok(4);
    }
    Ok(0)
}

fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let params = match &args.plant {
        Some(p) => formats::load_plant_params(p)?,
        None => PlantParams::default(),
    };
    let plant = Plant::new(params, args.seed).map_err(|e| anyhow::anyhow!("{e}"))?;
    let server = Server::bind(&args.listen, Session::new(plant, args.accelerated))
        .map_err(|e| anyhow::anyhow!("cannot bind {}: {e}", args.listen))?;
    println!("listening on {}", server.local_addr()?);
    server.run()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Serve(a) => serve(a).map(|_| 0).map_err(|e| (1, e.to_string())),
        Command::Run(a) => campaign(a, false).map_err(|e| (e.exit_code() as u8, e.to_string())),
        Command::Baseline(a) => campaign(a, true).map_err(|e| (e.exit_code() as u8, e.to_string())),
        Command::Report(a) => load_log(&a.dir)
            .map_err(|e| (e.exit_code() as u8, e.to_string()))
            .and_then(|log| {
                emit_report(&log, a.out.as_ref().unwrap_or(&a.dir)).map_err(|e| (1, e.to_string()))
            })
            .map(|files| {
                for f in files {
                    println!("wrote {}", f.display());
                }
                0
            }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
