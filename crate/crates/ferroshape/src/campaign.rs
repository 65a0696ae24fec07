//! Shaping campaigns: initial design, batch BO loop or random baseline,
//! crash-safe logging and resume.
//!
//! Output directory layout:
//!
//! | file              | contents                                              |
//! |-------------------|-------------------------------------------------------|
//! | `config.txt`      | the resolved configuration (`key = value`)            |
//! | `target.txt`      | the target spec in target-file format                 |
//! | `experiments.csv` | one row per experiment, appended and flushed          |
//! | `batches.csv`     | one row per finished batch                            |
//! | `dataset.csv`     | surrogate training data checkpoint                    |
//! | `summary.txt`     | final metrics                                         |
//! | `timing.csv`      | wall-clock timings (not reproducible by nature)       |

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use ferroshape_core::acquisition::{optimize_batch, AcquisitionError, AcquisitionProblem, SearchOptions};
use ferroshape_core::codec::{generate_target, radii_error_mm, rmse_objective, CodecError};
use ferroshape_core::design::{init_design, random_design};
use ferroshape_core::gp::{fit, initial_hyperparams, Dataset, FitOptions, GpError, GpModel, OUTPUT_DIM};
use ferroshape_core::plant::{Plant, PlantParams, CENTERING_SECONDS, DEMAG_SECONDS, HOLD_SECONDS, RAMP_SECONDS};
use ferroshape_core::rng::mix_seed;
use ferroshape_core::{Actuation, ShapeDescriptor, TargetSpec, SEGMENTS, SOLENOIDS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::formats::{self, write_atomic, DatasetRow, FormatError, KeyValues, TARGET_KEYS};
use crate::protocol::{
    Client, ClientError, Connection, ErrorCode, ExperimentRequest, ExperimentResponse, Session, Shape,
};

/// Largest allowed `n_init + batch_size · max_batches`.
pub const MAX_BUDGET: usize = 100;
/// Spread factor above which the campaign warns that the droplet has grown too much.
pub const SPREAD_WARNING: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetPolicy {
    PerExperiment,
    PerBatch,
}

impl FromStr for ResetPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per-experiment" => Ok(Self::PerExperiment),
            "per-batch" => Ok(Self::PerBatch),
            _ => Err(format!("unknown reset policy `{s}` (per-experiment | per-batch)")),
        }
    }
}

impl std::fmt::Display for ResetPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerExperiment => "per-experiment",
            Self::PerBatch => "per-batch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    None,
    RandomSearch,
}

impl FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "random_search" => Ok(Self::RandomSearch),
            _ => Err(format!("unknown baseline `{s}` (none | random_search)")),
        }
    }
}

impl std::fmt::Display for Baseline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::RandomSearch => "random_search",
        })
    }
}

pub const DEFAULT_ENDPOINT: &str = "127.0.0.1:7878";

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub target: TargetSpec,
    pub n_init: usize,
    pub batch_size: usize,
    pub max_batches: usize,
    pub seed: u64,
    pub reset_policy: ResetPolicy,
    pub endpoint: String,
    pub baseline: Baseline,
    pub output: PathBuf,
    pub mc_samples: usize,
    pub starts: usize,
    pub refine: usize,
    pub fit_restarts: usize,
    pub fit_iters: usize,
    pub timeout_s: f64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let search = SearchOptions::default();
        let fit = FitOptions::default();
        Self {
            target: TargetSpec::triangle(1.0),
            n_init: 10,
            batch_size: 5,
            max_batches: 5,
            seed: 0,
            reset_policy: ResetPolicy::PerExperiment,
            endpoint: DEFAULT_ENDPOINT.to_string(),
            baseline: Baseline::None,
            output: PathBuf::from("campaign"),
            mc_samples: 4096,
            starts: search.starts,
            refine: search.refine,
            fit_restarts: fit.restarts,
            fit_iters: fit.max_iters,
            timeout_s: crate::protocol::DEFAULT_TIMEOUT.as_secs_f64(),
        }
    }
}

pub const CAMPAIGN_KEYS: &[&str] = &[
    "target_file",
    "n_init",
    "batch_size",
    "max_batches",
    "seed",
    "reset_policy",
    "endpoint",
    "baseline",
    "output",
    "mc_samples",
    "starts",
    "refine",
    "fit_restarts",
    "fit_iters",
    "timeout_s",
];

impl CampaignConfig {
    pub fn budget(&self) -> usize {
        self.n_init + self.batch_size * self.max_batches
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::Config(m));
        self.target
            .validate()
            .map_err(|e| CampaignError::Config(e.to_string()))?;
        if self.n_init < 2 {
            return bad("n_init must be at least 2".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.budget() > MAX_BUDGET {
            return bad(format!(
                "budget n_init + batch_size * max_batches = {} exceeds {MAX_BUDGET}",
                self.budget()
            ));
        }
        if self.mc_samples < ferroshape_core::acquisition::MIN_MC_SAMPLES {
            return bad("mc_samples must be at least 256".into());
        }
        if self.starts < 1 || self.fit_restarts < 1 {
            return bad("starts and fit_restarts must be at least 1".into());
        }
        if !(self.timeout_s > 0.0) {
            return bad("timeout_s must be positive".into());
        }
        Ok(())
    }

    /// Applies every recognized key; target keys may appear inline or via `target_file`.
    pub fn apply(&mut self, kv: &KeyValues, base_dir: &Path) -> Result<(), CampaignError> {
        let allowed: Vec<&str> = CAMPAIGN_KEYS.iter().chain(TARGET_KEYS).copied().collect();
        kv.check_keys(&allowed)?;
        if let Some(path) = kv.get("target_file") {
            self.target = formats::load_target(&base_dir.join(path))?;
        }
        if kv.get("kind").is_some() {
            self.target = formats::target_from_kv(kv)?;
        }
        macro_rules! field {
            ($($name:ident),*) => {$(
                if let Some(v) = kv.parsed(stringify!($name))? {
                    self.$name = v;
                }
            )*};
        }
        field!(
            n_init,
            batch_size,
            max_batches,
            seed,
            reset_policy,
            endpoint,
            baseline,
            output,
            mc_samples,
            starts,
            refine,
            fit_restarts,
            fit_iters,
            timeout_s
        );
        Ok(())
    }

    /// `key = value` text of the non-target settings; the target goes to `target.txt`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("n_init", self.n_init.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_batches", self.max_batches.to_string()),
            ("seed", self.seed.to_string()),
            ("reset_policy", self.reset_policy.to_string()),
            ("baseline", self.baseline.to_string()),
            ("mc_samples", self.mc_samples.to_string()),
            ("starts", self.starts.to_string()),
            ("refine", self.refine.to_string()),
            ("fit_restarts", self.fit_restarts.to_string()),
            ("fit_iters", self.fit_iters.to_string()),
        ] {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("connection: {0}")]
    Connection(#[from] ClientError),
    #[error("server rejected request {request_id}: {code} ({message})")]
    Rejected {
        request_id: u64,
        code: &'static str,
        message: String,
    },
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot resume: {0}")]
    ResumeMismatch(String),
    #[error("stopped after {experiments} experiments")]
    Interrupted { experiments: usize },
}

impl CampaignError {
    /// Process exit code: 2 configuration, 3 connection, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CampaignError::Config(_) | CampaignError::Format(_) => 2,
            CampaignError::Connection(_) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Something that executes experiment requests: a TCP client or an in-process plant.
pub trait ExperimentRunner {
    fn execute(&mut self, req: &ExperimentRequest) -> Result<ExperimentResponse, ClientError>;
}

impl ExperimentRunner for Client {
    fn execute(&mut self, req: &ExperimentRequest) -> Result<ExperimentResponse, ClientError> {
        self.request_experiment(req)
    }
}

/// Runs the server's session handler in-process, skipping TCP.
pub struct LocalRunner {
    session: Session,
    conn: Connection,
}

impl LocalRunner {
    pub fn new(params: PlantParams, plant_seed: u64) -> Result<Self, CampaignError> {
        let plant = Plant::new(params, plant_seed).map_err(|e| CampaignError::Config(e.to_string()))?;
        Ok(Self {
            session: Session::new(plant, true),
            conn: Connection::default(),
        })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    /// Simulates a client reconnect: the plant and replay cache survive.
    pub fn reconnect(&mut self) {
        self.conn = Connection::default();
    }
}

impl ExperimentRunner for LocalRunner {
    fn execute(&mut self, req: &ExperimentRequest) -> Result<ExperimentResponse, ClientError> {
        Ok(self.session.handle(&mut self.conn, req))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Bo,
    Random,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Bo => "bo",
            Phase::Random => "random",
        }
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "init" => Ok(Phase::Init),
            "bo" => Ok(Phase::Bo),
            "random" => Ok(Phase::Random),
            _ => Err(format!("unknown phase `{s}`")),
        }
    }
}

/// Radius error summary in millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub mean: f64,
    pub sd: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub index: usize,
    pub batch: usize,
    pub phase: Phase,
    pub request_id: u64,
    pub actuation: Actuation,
    /// `None` when the plant collapsed.
    pub shape: Option<Shape>,
    pub objective: Option<f64>,
    /// Best objective so far; `None` before the first successful experiment.
    pub best_objective: Option<f64>,
    pub error_mm: Option<ErrorSummary>,
    /// Nominal plant time at the end of the experiment, s.
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub batch: usize,
    pub phase: Phase,
    pub acquisition_value: Option<f64>,
    pub mean_log_likelihood: Option<f64>,
    pub min_log_likelihood: Option<f64>,
    pub best_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub experiments: usize,
    pub collapses: usize,
    pub best_index: usize,
    pub best_objective: f64,
    pub best_actuation: Actuation,
    pub circle_objective: Option<f64>,
    pub error_mm: ErrorSummary,
    pub final_spread_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignLog {
    pub target: TargetSpec,
    pub records: Vec<ExperimentRecord>,
    pub batches: Vec<BatchRecord>,
    pub summary: Summary,
}

/// Control options that do not change the result.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Continue from the logs already in the output directory.
    pub resume: bool,
    /// Stop (as if killed) once this many experiments are logged.
    pub halt_after: Option<usize>,
}

const EXPERIMENTS: &str = "experiments.csv";
const BATCHES: &str = "batches.csv";
const DATASET: &str = "dataset.csv";
const SUMMARY: &str = "summary.txt";
const TIMING: &str = "timing.csv";
const CONFIG: &str = "config.txt";
const TARGET: &str = "target.txt";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e| format!("`{s}`: {e}"))
    }
}

pub fn experiment_header() -> Vec<String> {
    let mut h: Vec<String> = ["index", "batch", "phase", "request_id", "status"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=SOLENOIDS).map(|i| format!("b{i}")));
    h.extend((1..=SEGMENTS).map(|i| format!("sr{i}")));
    h.extend(
        [
            "cx",
            "cy",
            "max_radius",
            "spread_factor",
            "j",
            "best_j",
            "err_mean_mm",
            "err_sd_mm",
            "err_max_mm",
            "time_s",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

fn experiment_fields(r: &ExperimentRecord) -> Vec<String> {
    let mut f = vec![
        r.index.to_string(),
        r.batch.to_string(),
        r.phase.as_str().to_string(),
        r.request_id.to_string(),
        if r.shape.is_some() { "ok" } else { ErrorCode::PlantCollapse.as_str() }.to_string(),
    ];
    f.extend(r.actuation.0.iter().map(|v| v.to_string()));
    match &r.shape {
        Some(s) => {
            f.extend(s.sr.iter().map(|v| v.to_string()));
            f.extend([s.center[0], s.center[1], s.max_radius, s.spread_factor].map(|v| v.to_string()));
        }
        None => f.extend(std::iter::repeat_n(String::new(), SEGMENTS + 4)),
    }
    f.push(opt(r.objective));
    f.push(opt(r.best_objective));
    f.push(opt(r.error_mm.map(|e| e.mean)));
    f.push(opt(r.error_mm.map(|e| e.sd)));
    f.push(opt(r.error_mm.map(|e| e.max)));
    f.push(r.time_s.to_string());
    f
}

fn parse_experiment(rec: &csv::StringRecord) -> Result<ExperimentRecord, String> {
    let n = experiment_header().len();
    if rec.len() != n {
        return Err(format!("expected {n} fields, found {}", rec.len()));
    }
    let num = |i: usize| rec[i].parse::<f64>().map_err(|e| format!("field {i}: {e}"));
    let int = |i: usize| rec[i].parse::<u64>().map_err(|e| format!("field {i}: {e}"));
    let mut actuation = Actuation::ZERO;
    for k in 0..SOLENOIDS {
        actuation.0[k] = num(5 + k)?;
    }
    let base = 5 + SOLENOIDS;
    let shape = if &rec[4] == "ok" {
        let mut sr = [0.0; SEGMENTS];
        for k in 0..SEGMENTS {
            sr[k] = num(base + k)?;
        }
        let o = base + SEGMENTS;
        Some(Shape {
            sr,
            center: [num(o)?, num(o + 1)?],
            max_radius: num(o + 2)?,
            spread_factor: num(o + 3)?,
        })
    } else {
        None
    };
    let o = base + SEGMENTS + 4;
    let error_mm = match (parse_opt(&rec[o + 2])?, parse_opt(&rec[o + 3])?, parse_opt(&rec[o + 4])?) {
        (Some(mean), Some(sd), Some(max)) => Some(ErrorSummary { mean, sd, max }),
        _ => None,
    };
    Ok(ExperimentRecord {
        index: int(0)? as usize,
        batch: int(1)? as usize,
        phase: rec[2].parse()?,
        request_id: int(3)?,
        actuation,
        shape,
        objective: parse_opt(&rec[o])?,
        best_objective: parse_opt(&rec[o + 1])?,
        error_mm,
        time_s: num(o + 5)?,
    })
}

const BATCH_HEADER: [&str; 6] = [
    "batch",
    "phase",
    "acquisition_value",
    "mean_log_likelihood",
    "min_log_likelihood",
    "best_j",
];

fn batch_fields(b: &BatchRecord) -> Vec<String> {
    vec![
        b.batch.to_string(),
        b.phase.as_str().to_string(),
        opt(b.acquisition_value),
        opt(b.mean_log_likelihood),
        opt(b.min_log_likelihood),
        opt(b.best_objective),
    ]
}

fn parse_batch(rec: &csv::StringRecord) -> Result<BatchRecord, String> {
    if rec.len() != BATCH_HEADER.len() {
        return Err("wrong field count".into());
    }
    Ok(BatchRecord {
        batch: rec[0].parse().map_err(|e| format!("{e}"))?,
        phase: rec[1].parse()?,
        acquisition_value: parse_opt(&rec[2])?,
        mean_log_likelihood: parse_opt(&rec[3])?,
        min_log_likelihood: parse_opt(&rec[4])?,
        best_objective: parse_opt(&rec[5])?,
    })
}

/// Drops a trailing partial line left by a crash mid-write.
fn truncate_partial_line(path: &Path) -> Result<(), CampaignError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(keep as u64).map_err(io_err(path))
}

fn read_csv<T>(path: &Path, parse: impl Fn(&csv::StringRecord) -> Result<T, String>) -> Result<Vec<T>, CampaignError> {
    let mut r = csv::Reader::from_path(path).map_err(FormatError::from)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(FormatError::from)?;
        out.push(parse(&rec).map_err(|message| {
            CampaignError::Format(FormatError::Syntax {
                line: i + 2,
                message: format!("{}: {message}", path.display()),
            })
        })?);
    }
    Ok(out)
}

/// Reads the experiment log of a campaign directory.
pub fn read_experiments(dir: &Path) -> Result<Vec<ExperimentRecord>, CampaignError> {
    read_csv(&dir.join(EXPERIMENTS), parse_experiment)
}

pub fn read_batches(dir: &Path) -> Result<Vec<BatchRecord>, CampaignError> {
    read_csv(&dir.join(BATCHES), parse_batch)
}

pub fn read_target(dir: &Path) -> Result<TargetSpec, CampaignError> {
    Ok(formats::load_target(&dir.join(TARGET))?)
}

/// Appends CSV rows and flushes each one to disk.
struct AppendLog {
    path: PathBuf,
    file: File,
}

impl AppendLog {
    fn create(path: PathBuf, header: &[String]) -> Result<Self, CampaignError> {
        let mut file = File::create(&path).map_err(io_err(&path))?;
        file.write_all(csv_line(header).as_bytes()).map_err(io_err(&path))?;
        Ok(Self { path, file })
    }

    fn open(path: PathBuf) -> Result<Self, CampaignError> {
        let file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        Ok(Self { path, file })
    }

    fn push(&mut self, fields: &[String]) -> Result<(), CampaignError> {
        self.file
            .write_all(csv_line(fields).as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(io_err(&self.path))
    }
}

fn csv_line(fields: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields).expect("writing to memory");
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8 fields")
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Surrogate outputs for one response: 32 ratios then the center in units of
/// the nominal radius.
fn outputs(shape: &Shape, nominal_radius: f64) -> [f64; OUTPUT_DIM] {
    let mut y = [0.0; OUTPUT_DIM];
    y[..SEGMENTS].copy_from_slice(&shape.sr);
    y[SEGMENTS] = shape.center[0] / nominal_radius;
    y[SEGMENTS + 1] = shape.center[1] / nominal_radius;
    y
}

struct Planned {
    phase: Phase,
    actuations: Vec<Actuation>,
    acquisition_value: Option<f64>,
    log_likelihoods: Option<Vec<f64>>,
    fit_time: Duration,
}

/// Deterministic campaign state machine over an [`ExperimentRunner`].
pub struct Campaign<'a, R: ExperimentRunner> {
    config: &'a CampaignConfig,
    runner: &'a mut R,
    target: ShapeDescriptor,
}

impl<'a, R: ExperimentRunner> Campaign<'a, R> {
    pub fn new(config: &'a CampaignConfig, runner: &'a mut R) -> Result<Self, CampaignError> {
        config.validate()?;
        let target = generate_target(&config.target).map_err(|e| CampaignError::Config(e.to_string()))?;
        Ok(Self {
            config,
            runner,
            target,
        })
    }

    pub fn target(&self) -> &ShapeDescriptor {
        &self.target
    }

    pub fn run(&mut self, opts: RunOptions) -> Result<CampaignLog, CampaignError> {
        let dir = self.config.output.clone();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let config_text = self.config.to_text();
        let target_text = formats::write_target(&self.config.target);

        let (mut records, mut batches, mut exp_log, mut batch_log, mut timing) = if opts.resume {
            for (name, text) in [(CONFIG, &config_text), (TARGET, &target_text)] {
                let path = dir.join(name);
                let old = fs::read_to_string(&path).map_err(io_err(&path))?;
                if &old != text {
                    return Err(CampaignError::ResumeMismatch(format!("{name} differs from the current configuration")));
                }
            }
            let exp_path = dir.join(EXPERIMENTS);
            truncate_partial_line(&exp_path)?;
            truncate_partial_line(&dir.join(BATCHES))?;
            let records = read_experiments(&dir)?;
            let batches = read_batches(&dir)?;
            (
                records,
                batches,
                AppendLog::open(exp_path)?,
                AppendLog::open(dir.join(BATCHES))?,
                AppendLog::open(dir.join(TIMING))?,
            )
        } else {
            write_atomic(&dir.join(CONFIG), &config_text)?;
            write_atomic(&dir.join(TARGET), &target_text)?;
            (
                Vec::new(),
                Vec::new(),
                AppendLog::create(dir.join(EXPERIMENTS), &experiment_header())?,
                AppendLog::create(dir.join(BATCHES), &strings(&BATCH_HEADER))?,
                AppendLog::create(dir.join(TIMING), &strings(&["batch", "fit_ms", "acquisition_ms", "experiments_ms"]))?,
            )
        };
        let existing = records.len();
        let mut warned = false;

        for batch in 0..=self.config.max_batches {
            if batch < batches.len() {
                continue;
            }
            let start = if batch == 0 {
                0
            } else {
                self.config.n_init + (batch - 1) * self.config.batch_size
            };
            let t0 = Instant::now();
            let plan = self.plan(batch, &records[..start.min(records.len())])?;
            let plan_time = t0.elapsed();
            let t1 = Instant::now();
            for (k, a) in plan.actuations.iter().enumerate() {
                let index = start + k;
                if index < records.len() {
                    if records[index].actuation.0.map(f64::to_bits) != a.0.map(f64::to_bits) {
                        return Err(CampaignError::ResumeMismatch(format!(
                            "experiment {index} in the log does not match the replanned batch"
                        )));
                    }
                    continue;
                }
                if opts.halt_after == Some(records.len()) {
                    return Err(CampaignError::Interrupted {
                        experiments: records.len(),
                    });
                }
                let reset = match self.config.reset_policy {
                    ResetPolicy::PerExperiment => true,
                    ResetPolicy::PerBatch => k == 0,
                };
                let record = self.execute(index, batch, plan.phase, *a, reset, &records)?;
                if let Some(s) = &record.shape {
                    if s.spread_factor > SPREAD_WARNING && !warned {
                        log::warn!(
                            "spread factor {:.2} exceeds {SPREAD_WARNING}: droplet has spread over the dish",
                            s.spread_factor
                        );
                        warned = true;
                    }
                }
                exp_log.push(&experiment_fields(&record))?;
                records.push(record);
            }
            let lls = plan.log_likelihoods.as_deref();
            let b = BatchRecord {
                batch,
                phase: plan.phase,
                acquisition_value: plan.acquisition_value,
                mean_log_likelihood: lls.map(|l| l.iter().sum::<f64>() / l.len() as f64),
                min_log_likelihood: lls.map(|l| l.iter().copied().fold(f64::INFINITY, f64::min)),
                best_objective: records.last().and_then(|r| r.best_objective),
            };
            batch_log.push(&batch_fields(&b))?;
            batches.push(b);
            self.checkpoint(&dir, &records)?;
            let exp_time = if records.len() > existing { t1.elapsed() } else { Duration::ZERO };
            timing.push(&[
                batch.to_string(),
                plan.fit_time.as_millis().to_string(),
                (plan_time - plan.fit_time).as_millis().to_string(),
                exp_time.as_millis().to_string(),
            ])?;
            log::info!(
                "batch {batch} ({}) done: best J = {}",
                plan.phase.as_str(),
                opt(batches.last().and_then(|b| b.best_objective))
            );
        }

        let summary = summarize(&records).ok_or_else(|| CampaignError::Rejected {
            request_id: 0,
            code: ErrorCode::PlantCollapse.as_str(),
            message: "every experiment collapsed".into(),
        })?;
        write_atomic(&dir.join(SUMMARY), &summary_text(&summary))?;
        Ok(CampaignLog {
            target: self.config.target.clone(),
            records,
            batches,
            summary,
        })
    }

    fn plan(&self, batch: usize, history: &[ExperimentRecord]) -> Result<Planned, CampaignError> {
        let cfg = self.config;
        let mask = cfg.target.solenoid_mask;
        if batch == 0 {
            return Ok(Planned {
                phase: Phase::Init,
                actuations: init_design(cfg.n_init, mask, mix_seed(cfg.seed, 1)),
                acquisition_value: None,
                log_likelihoods: None,
                fit_time: Duration::ZERO,
            });
        }
        let random = |phase| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 300 + batch as u64));
            Planned {
                phase,
                actuations: random_design(cfg.batch_size, mask, &mut rng),
                acquisition_value: None,
                log_likelihoods: None,
                fit_time: Duration::ZERO,
            }
        };
        if cfg.baseline == Baseline::RandomSearch {
            return Ok(random(Phase::Random));
        }

        let mut data = Dataset::new(OUTPUT_DIM);
        let mut best: Option<(f64, Actuation)> = None;
        for r in history {
            if let (Some(s), Some(j)) = (&r.shape, r.objective) {
                data.push(r.actuation.0, &outputs(s, cfg.target.nominal_radius))?;
                if best.is_none_or(|(b, _)| j < b) {
                    best = Some((j, r.actuation));
                }
            }
        }
        let Some((incumbent, best_actuation)) = best.filter(|_| data.len() >= 2) else {
            log::warn!("batch {batch}: fewer than two usable observations, sampling at random");
            return Ok(random(Phase::Bo));
        };
        let fit_opts = FitOptions {
            restarts: cfg.fit_restarts,
            max_iters: cfg.fit_iters,
            seed: mix_seed(cfg.seed, 100 + batch as u64),
        };
        let t0 = Instant::now();
        let report = fit(&data, &initial_hyperparams(&data), &fit_opts)?;
        let fit_time = t0.elapsed();
        let model = GpModel::new(&data, report.hyperparams)?;
        let problem = AcquisitionProblem {
            target: self.target,
            optimize_mask: cfg.target.optimize_mask,
            solenoid_mask: mask,
            incumbent,
            best_actuation: Some(best_actuation),
            batch_size: cfg.batch_size,
            mc_samples: cfg.mc_samples,
            seed: mix_seed(cfg.seed, 200 + batch as u64),
        };
        let search = SearchOptions {
            starts: cfg.starts,
            refine: cfg.refine,
            ..SearchOptions::default()
        };
        let chosen = optimize_batch(&problem, &model, &search)?;
        Ok(Planned {
            phase: Phase::Bo,
            actuations: chosen.actuations,
            acquisition_value: Some(chosen.acquisition_value),
            log_likelihoods: Some(report.log_likelihoods),
            fit_time,
        })
    }

    fn execute(
        &mut self,
        index: usize,
        batch: usize,
        phase: Phase,
        actuation: Actuation,
        reset: bool,
        history: &[ExperimentRecord],
    ) -> Result<ExperimentRecord, CampaignError> {
        let request_id = index as u64 + 1;
        let req = ExperimentRequest {
            request_id,
            b: actuation.0,
            reset_before: reset,
        };
        let resp = self.runner.execute(&req)?;
        let prev_best = history.last().and_then(|r| r.best_objective);
        let prev_time = history.last().map_or(0.0, |r| r.time_s);
        let time_s = prev_time
            + RAMP_SECONDS
            + HOLD_SECONDS
            + if reset { CENTERING_SECONDS + DEMAG_SECONDS } else { 0.0 };
        let mut record = ExperimentRecord {
            index,
            batch,
            phase,
            request_id,
            actuation,
            shape: None,
            objective: None,
            best_objective: prev_best,
            error_mm: None,
            time_s,
        };
        match resp.outcome {
            crate::protocol::Outcome::Ok(shape) => {
                let d = shape.descriptor();
                let j = rmse_objective(&self.target, &d, self.config.target.optimize_mask)?;
                let e = radii_error_mm(&self.target, &d)?;
                record.objective = Some(j);
                record.best_objective = Some(prev_best.map_or(j, |b| b.min(j)));
                record.error_mm = Some(ErrorSummary {
                    mean: e.mean,
                    sd: e.sd,
                    max: e.max,
                });
                record.shape = Some(shape);
            }
            crate::protocol::Outcome::Error { error } if error.code == ErrorCode::PlantCollapse => {
                log::warn!("experiment {index}: plant collapsed ({})", error.message);
            }
            crate::protocol::Outcome::Error { error } => {
                return Err(CampaignError::Rejected {
                    request_id,
                    code: error.code.as_str(),
                    message: error.message,
                })
            }
        }
        Ok(record)
    }

    fn checkpoint(&self, dir: &Path, records: &[ExperimentRecord]) -> Result<(), CampaignError> {
        let rows: Vec<DatasetRow> = records
            .iter()
            .filter_map(|r| {
                r.shape.as_ref().map(|s| DatasetRow {
                    input: r.actuation.0,
                    outputs: outputs(s, self.config.target.nominal_radius),
                    timestamp: r.time_s,
                })
            })
            .collect();
        write_atomic(&dir.join(DATASET), &formats::write_dataset(&rows)?)?;
        Ok(())
    }
}

/// Final metrics of a log; `None` if no experiment succeeded.
pub fn summarize(records: &[ExperimentRecord]) -> Option<Summary> {
    let collapses = records.iter().filter(|r| r.shape.is_none()).count();
    let (best_objective, best) = records
        .iter()
        .filter_map(|r| r.objective.map(|j| (j, r)))
        .fold(None::<(f64, &ExperimentRecord)>, |acc, (j, r)| match acc {
            Some((b, _)) if b <= j => acc,
            _ => Some((j, r)),
        })?;
    let circle_objective = records
        .iter()
        .find(|r| r.actuation == Actuation::ZERO)
        .and_then(|r| r.objective);
    Some(Summary {
        experiments: records.len(),
        collapses,
        best_index: best.index,
        best_objective,
        best_actuation: best.actuation,
        circle_objective,
        error_mm: best.error_mm?,
        final_spread_factor: records
            .iter()
            .rev()
            .find_map(|r| r.shape.as_ref().map(|s| s.spread_factor))
            .unwrap_or(1.0),
    })
}

/// Reads a finished (or interrupted) campaign directory back into memory.
pub fn load_log(dir: &Path) -> Result<CampaignLog, CampaignError> {
    let records = read_experiments(dir)?;
    let summary = summarize(&records).ok_or_else(|| {
        CampaignError::Config(format!("{}: no successful experiments to report", dir.display()))
    })?;
    Ok(CampaignLog {
        target: read_target(dir)?,
        batches: read_batches(dir)?,
        records,
        summary,
    })
}

pub fn summary_text(s: &Summary) -> String {
    let mut t = String::new();
    writeln!(t, "experiments = {}", s.experiments).unwrap();
    writeln!(t, "collapses = {}", s.collapses).unwrap();
    writeln!(t, "best_index = {}", s.best_index).unwrap();
    writeln!(t, "best_j = {}", s.best_objective).unwrap();
    let b: Vec<String> = s.best_actuation.0.iter().map(|v| v.to_string()).collect();
    writeln!(t, "best_actuation = {}", b.join(",")).unwrap();
    writeln!(t, "circle_j = {}", opt(s.circle_objective)).unwrap();
    writeln!(t, "radii_error_mean_mm = {}", s.error_mm.mean).unwrap();
    writeln!(t, "radii_error_sd_mm = {}", s.error_mm.sd).unwrap();
    writeln!(t, "radii_error_max_mm = {}", s.error_mm.max).unwrap();
    writeln!(t, "final_spread_factor = {}", s.final_spread_factor).unwrap();
    t
}

/// Runs the configured campaign (BO, or random search when `baseline = random_search`).
pub fn run_campaign<R: ExperimentRunner>(
    config: &CampaignConfig,
    runner: &mut R,
    opts: RunOptions,
) -> Result<CampaignLog, CampaignError> {
    Campaign::new(config, runner)?.run(opts)
}

/// Matched-budget random-search baseline for `config`.
pub fn run_baseline<R: ExperimentRunner>(
    config: &CampaignConfig,
    runner: &mut R,
    opts: RunOptions,
) -> Result<CampaignLog, CampaignError> {
    let mut cfg = config.clone();
    cfg.baseline = Baseline::RandomSearch;
    run_campaign(&cfg, runner, opts)
}

/// Files whose bytes must not depend on wall-clock timing.
pub const DETERMINISTIC_FILES: &[&str] = &[CONFIG, TARGET, EXPERIMENTS, BATCHES, DATASET, SUMMARY];
