//! Text file formats: `key = value` headers, target outlines, plant
//! parameters and the dataset checkpoint table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ferroshape_core::gp::{INPUT_DIM, OUTPUT_DIM};
use ferroshape_core::plant::PlantParams;
use ferroshape_core::{Point, SolenoidMask, TargetKind, TargetSpec, SEGMENTS};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("`{key}`: {message}")]
    Value { key: String, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    InFile { path: PathBuf, source: Box<FormatError> },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn read_file(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn in_file<T>(path: &Path, r: Result<T, FormatError>) -> Result<T, FormatError> {
    r.map_err(|e| FormatError::InFile {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}

/// Parsed `key = value` lines plus an optional trailing `vertices:` block.
/// `#` starts a comment. Keys are case-sensitive; later duplicates win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    pub vertices: Option<Vec<Point>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut kv = KeyValues::default();
        let mut in_vertices = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: &str| FormatError::Syntax {
                line: i + 1,
                message: message.to_string(),
            };
            if in_vertices {
                let nums: Vec<&str> = line
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .collect();
                if nums.len() != 2 {
                    return Err(syntax("vertex lines hold two numbers: x y"));
                }
                let x = nums[0].parse().map_err(|_| syntax("bad x coordinate"))?;
                let y = nums[1].parse().map_err(|_| syntax("bad y coordinate"))?;
                kv.vertices.get_or_insert_with(Vec::new).push(Point::new(x, y));
                continue;
            }
            if line == "vertices:" {
                in_vertices = true;
                kv.vertices = Some(Vec::new());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| syntax("expected `key = value`"))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(syntax("empty key"));
            }
            kv.entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(kv)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, FormatError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| FormatError::Value {
                    key: key.to_string(),
                    message: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, FormatError>
    where
        T::Err: std::fmt::Display,
    {
        self.parsed(key)?.ok_or_else(|| FormatError::Missing(key.to_string()))
    }

    /// Fails on the first key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), FormatError> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(FormatError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }
}

pub const TARGET_KEYS: &[&str] = &[
    "kind",
    "hbr",
    "aspect",
    "axis_ratio",
    "corner_radius",
    "nominal_radius",
    "rotation",
    "rotation_deg",
    "optimize_mask",
    "solenoid_mask",
];

/// Target spec from parsed keys. Masks default per shape family.
pub fn target_from_kv(kv: &KeyValues) -> Result<TargetSpec, FormatError> {
    let kind: String = kv.require("kind")?;
    let mut spec = match kind.as_str() {
        "triangle" => TargetSpec::triangle(kv.require("hbr")?),
        "rectangle" => TargetSpec::rectangle(kv.require("aspect")?),
        "ellipse" => TargetSpec::ellipse(kv.require("axis_ratio")?),
        "letter" => {
            let vertices = kv.vertices.clone().ok_or_else(|| FormatError::Missing("vertices".into()))?;
            TargetSpec::new(TargetKind::Letter { vertices }, SolenoidMask::ALL)
        }
        other => {
            return Err(FormatError::Value {
                key: "kind".into(),
                message: format!("unknown target kind `{other}`"),
            })
        }
    };
    if let Some(v) = kv.parsed("corner_radius")? {
        spec.corner_radius = v;
    }
    if let Some(v) = kv.parsed("nominal_radius")? {
        spec.nominal_radius = v;
    }
    if let Some(v) = kv.parsed::<f64>("rotation_deg")? {
        spec.rotation = v.to_radians();
    }
    if let Some(v) = kv.parsed("rotation")? {
        spec.rotation = v;
    }
    if let Some(v) = kv.parsed("optimize_mask")? {
        spec.optimize_mask = v;
    }
    if let Some(v) = kv.parsed("solenoid_mask")? {
        spec.solenoid_mask = v;
    }
    spec.validate().map_err(|e| FormatError::Value {
        key: "kind".into(),
        message: e.to_string(),
    })?;
    Ok(spec)
}

pub fn parse_target(text: &str) -> Result<TargetSpec, FormatError> {
    let kv = KeyValues::parse(text)?;
    kv.check_keys(TARGET_KEYS)?;
    target_from_kv(&kv)
}

pub fn load_target(path: &Path) -> Result<TargetSpec, FormatError> {
    in_file(path, parse_target(&read_file(path)?))
}

/// Target file text; `parse_target` reads it back to an equal spec.
pub fn write_target(spec: &TargetSpec) -> String {
    let mut s = String::new();
    match &spec.kind {
        TargetKind::Triangle { hbr } => writeln!(s, "kind = triangle\nhbr = {hbr}"),
        TargetKind::Rectangle { aspect } => writeln!(s, "kind = rectangle\naspect = {aspect}"),
        TargetKind::Ellipse { axis_ratio } => writeln!(s, "kind = ellipse\naxis_ratio = {axis_ratio}"),
        TargetKind::Letter { .. } => writeln!(s, "kind = letter"),
    }
    .unwrap();
    writeln!(s, "corner_radius = {}", spec.corner_radius).unwrap();
    writeln!(s, "nominal_radius = {}", spec.nominal_radius).unwrap();
    writeln!(s, "rotation = {}", spec.rotation).unwrap();
    writeln!(s, "optimize_mask = {}", spec.optimize_mask).unwrap();
    writeln!(s, "solenoid_mask = {}", spec.solenoid_mask).unwrap();
    if let TargetKind::Letter { vertices } = &spec.kind {
        s.push_str("vertices:\n");
        for v in vertices {
            writeln!(s, "{} {}", v.x, v.y).unwrap();
        }
    }
    s
}

pub const PLANT_KEYS: &[&str] = &[
    "nominal_radius",
    "dish_radius",
    "repulsion_gain",
    "bump_width",
    "smoothing_passes",
    "spread_rate",
    "obs_noise",
    "resolution",
];

/// Plant parameters; absent keys keep their defaults.
pub fn parse_plant_params(text: &str) -> Result<PlantParams, FormatError> {
    let kv = KeyValues::parse(text)?;
    kv.check_keys(PLANT_KEYS)?;
    let mut p = PlantParams::default();
    macro_rules! field {
        ($($name:ident),*) => {$(
            if let Some(v) = kv.parsed(stringify!($name))? {
                p.$name = v;
            }
        )*};
    }
    field!(
        nominal_radius,
        dish_radius,
        repulsion_gain,
        bump_width,
        smoothing_passes,
        spread_rate,
        obs_noise,
        resolution
    );
    p.validate().map_err(|e| FormatError::Value {
        key: "plant".into(),
        message: e.to_string(),
    })?;
    Ok(p)
}

pub fn load_plant_params(path: &Path) -> Result<PlantParams, FormatError> {
    in_file(path, parse_plant_params(&read_file(path)?))
}

pub fn write_plant_params(p: &PlantParams) -> String {
    format!(
        "nominal_radius = {}\ndish_radius = {}\nrepulsion_gain = {}\nbump_width = {}\n\
         smoothing_passes = {}\nspread_rate = {}\nobs_noise = {}\nresolution = {}\n",
        p.nominal_radius,
        p.dish_radius,
        p.repulsion_gain,
        p.bump_width,
        p.smoothing_passes,
        p.spread_rate,
        p.obs_noise,
        p.resolution
    )
}

/// One checkpoint row: actuation, 32 ratios + 2 center coordinates, timestamp (s).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub input: [f64; INPUT_DIM],
    pub outputs: [f64; OUTPUT_DIM],
    pub timestamp: f64,
}

pub fn dataset_header() -> Vec<String> {
    let mut h: Vec<String> = (1..=INPUT_DIM).map(|i| format!("b{i}")).collect();
    h.extend((1..=SEGMENTS).map(|i| format!("sr{i}")));
    h.extend(["cx".to_string(), "cy".to_string(), "timestamp".to_string()]);
    h
}

pub fn write_dataset(rows: &[DatasetRow]) -> Result<String, FormatError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(dataset_header())?;
    for r in rows {
        let fields = r
            .input
            .iter()
            .chain(r.outputs.iter())
            .chain(std::iter::once(&r.timestamp))
            .map(|v| v.to_string());
        w.write_record(fields)?;
    }
    let bytes = w.into_inner().map_err(|e| FormatError::Io {
        path: PathBuf::from("<dataset>"),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("numbers are ascii"))
}

pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRow>, FormatError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != dataset_header() {
        return Err(FormatError::Syntax {
            line: 1,
            message: "unexpected dataset header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| FormatError::Syntax {
                line: i + 2,
                message: e.to_string(),
            })?;
        let mut row = DatasetRow {
            input: [0.0; INPUT_DIM],
            outputs: [0.0; OUTPUT_DIM],
            timestamp: vals[INPUT_DIM + OUTPUT_DIM],
        };
        row.input.copy_from_slice(&vals[..INPUT_DIM]);
        row.outputs.copy_from_slice(&vals[INPUT_DIM..INPUT_DIM + OUTPUT_DIM]);
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `contents` to `path` through a sibling temp file and a rename, so a
/// crash never leaves a half-written file behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), FormatError> {
    let tmp = path.with_extension("tmp");
    let io = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::write(&tmp, contents).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}
