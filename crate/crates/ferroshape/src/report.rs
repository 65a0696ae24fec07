//! Campaign report: objective trace, per-sector radius errors of the best
//! response, and an SVG overlay of target and best response.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ferroshape_core::actuation::{solenoid_bearing, SOLENOID_NAMES};
use ferroshape_core::codec::{generate_target, radii_error_mm, segment_bearing, target_outline, CodecError};
use ferroshape_core::plant::PlantParams;
use ferroshape_core::{SEGMENTS, SOLENOIDS};
use thiserror::Error;

use crate::campaign::CampaignLog;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("log has no successful experiment")]
    Empty,
}

/// `index,j,best_j`, one row per experiment (empty `j` for collapsed ones).
pub fn trace_csv(log: &CampaignLog) -> String {
    let mut s = String::from("index,j,best_j\n");
    for r in &log.records {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{}", r.index, f(r.objective), f(r.best_objective)).unwrap();
    }
    s
}

/// Per-sector radii of target and best response, mm.
pub fn radii_csv(log: &CampaignLog) -> Result<String, ReportError> {
    let target = generate_target(&log.target)?;
    let best = best_shape(log)?;
    let err = radii_error_mm(&target, &best)?;
    let (t, r) = (target.radii_mm(), best.radii_mm());
    let mut s = String::from("segment,bearing_deg,target_mm,response_mm,error_mm\n");
    for i in 0..SEGMENTS {
        writeln!(
            s,
            "{i},{},{},{},{}",
            segment_bearing(i).to_degrees(),
            t[i],
            r[i],
            err.per_segment[i]
        )
        .unwrap();
    }
    Ok(s)
}

fn best_shape(log: &CampaignLog) -> Result<ferroshape_core::ShapeDescriptor, ReportError> {
    log.records
        .get(log.summary.best_index)
        .and_then(|r| r.shape.as_ref())
        .map(|s| s.descriptor())
        .ok_or(ReportError::Empty)
}

const SIZE: f64 = 480.0;
const ACTIVE_COLOR: &str = "#2ca02c";
const INACTIVE_COLOR: &str = "#d62728";

/// Overlay drawing in millimeters, y up, centered on the dish.
pub fn overlay_svg(log: &CampaignLog) -> Result<String, ReportError> {
    let dish = PlantParams::default().dish_radius;
    let half = dish + 1.6;
    let k = SIZE / (2.0 * half);
    let px = |x: f64, y: f64| (SIZE / 2.0 + k * x, SIZE / 2.0 - k * y);

    let target = generate_target(&log.target)?;
    let outline = target_outline(&log.target)?;
    let best = best_shape(log)?;
    let err = radii_error_mm(&target, &best)?;

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>").unwrap();
    let (cx, cy) = px(0.0, 0.0);
    writeln!(
        s,
        "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"#999999\" stroke-width=\"1\"/>",
        k * dish
    )
    .unwrap();

    // Target around its centroid; every eighth outline point is plenty for drawing.
    let c = outline.centroid().ok_or(ReportError::Empty)?;
    let pts: Vec<String> = outline
        .points
        .iter()
        .step_by(8)
        .map(|p| {
            let (x, y) = px(p.x - c.x, p.y - c.y);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    writeln!(
        s,
        "<polygon id=\"target\" points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" stroke-dasharray=\"6 4\"/>",
        pts.join(" ")
    )
    .unwrap();

    // Best response, recentered on the origin for comparison.
    let t_r = target.radii_mm();
    let b_r = best.radii_mm();
    let pts: Vec<String> = (0..SEGMENTS)
        .map(|i| {
            let a = segment_bearing(i);
            let (x, y) = px(b_r[i] * a.cos(), b_r[i] * a.sin());
            format!("{x:.2},{y:.2}")
        })
        .collect();
    writeln!(
        s,
        "<polygon id=\"response\" points=\"{}\" fill=\"none\" stroke=\"#000000\" stroke-width=\"2\"/>",
        pts.join(" ")
    )
    .unwrap();

    writeln!(s, "<g id=\"whiskers\" stroke=\"#ff7f0e\" stroke-width=\"1.5\">").unwrap();
    for i in 0..SEGMENTS {
        let a = segment_bearing(i);
        let (x1, y1) = px(t_r[i] * a.cos(), t_r[i] * a.sin());
        let (x2, y2) = px(b_r[i] * a.cos(), b_r[i] * a.sin());
        writeln!(
            s,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\"><title>sector {i}: {:.3} mm</title></line>",
            err.per_segment[i]
        )
        .unwrap();
    }
    writeln!(s, "</g>").unwrap();

    writeln!(s, "<g id=\"solenoids\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">").unwrap();
    for i in 0..SOLENOIDS {
        let a = solenoid_bearing(i);
        let (x, y) = px((dish + 0.6) * a.cos(), (dish + 0.6) * a.sin());
        let active = log.target.solenoid_mask.contains(i);
        let color = if active { ACTIVE_COLOR } else { INACTIVE_COLOR };
        writeln!(
            s,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"7\" fill=\"{color}\" class=\"{}\"/>",
            if active { "active" } else { "inactive" }
        )
        .unwrap();
        writeln!(s, "<text x=\"{x:.2}\" y=\"{:.2}\" fill=\"white\">{}</text>", y + 4.0, SOLENOID_NAMES[i]).unwrap();
    }
    writeln!(s, "</g>").unwrap();

    writeln!(
        s,
        "<text x=\"8\" y=\"16\" font-family=\"sans-serif\" font-size=\"12\">best J = {:.4} (experiment {}), radii error {:.2} \u{b1} {:.2} mm, max {:.2} mm</text>",
        log.summary.best_objective,
        log.summary.best_index,
        log.summary.error_mm.mean,
        log.summary.error_mm.sd,
        log.summary.error_mm.max
    )
    .unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes `trace.csv`, `radii_errors.csv` and `overlay.svg` into `dir`.
pub fn emit_report(log: &CampaignLog, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let files = [
        ("trace.csv", trace_csv(log)),
        ("radii_errors.csv", radii_csv(log)?),
        ("overlay.svg", overlay_svg(log)?),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
