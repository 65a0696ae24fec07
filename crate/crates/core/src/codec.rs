//! Angular shape-ratio encoding of closed droplet contours.
//!
//! A contour is resampled uniformly by arc length, its boundary points are
//! binned by bearing around the area centroid into 32 equal sectors, and the
//! mean centroid distance per sector is normalized by the largest one.
//!
//! Sector `i` is centered on bearing `2πi/32`, counter-clockwise from +x
//! (East), and spans `[2πi/32 − π/32, 2πi/32 + π/32)`. Every fourth sector is
//! therefore aligned with a solenoid.

use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use thiserror::Error;

use crate::actuation::SolenoidMask;

/// Number of angular sectors in a shape descriptor.
pub const SEGMENTS: usize = 32;

/// Boundary points used after arc-length resampling.
pub const RESAMPLE_POINTS: usize = 4096;

const MIN_CONTOUR_POINTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("degenerate contour: {0}")]
    DegenerateContour(&'static str),
    #[error("centroid is outside the contour or a sector has no boundary points")]
    CentroidOutside,
    #[error("invalid target spec: {0}")]
    InvalidSpec(String),
    #[error("corner radius {radius} mm cannot be fitted on an edge of {edge} mm")]
    UnroundableCorner { radius: f64, edge: f64 },
    #[error("objective mask is empty")]
    EmptyMask,
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn rotated(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Closed planar outline in millimeters. The last point connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub points: Vec<Point>,
}

impl Contour {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    /// Signed shoelace area (positive for counter-clockwise winding).
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Area centroid of the polygon.
    pub fn centroid(&self) -> Option<Point> {
        centroid(&self.points)
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| self.points[(i + 1) % n].sub(self.points[i]).norm())
            .sum()
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_polygon(&self.points, p)
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Contour {
        Contour::new(self.points.iter().map(|&p| f(p)).collect())
    }

    /// Uniform arc-length resampling starting at the first vertex.
    pub fn resample(&self, count: usize) -> Vec<Point> {
        let pts = &self.points;
        let n = pts.len();
        let total = self.perimeter();
        let mut out = Vec::with_capacity(count);
        let step = total / count as f64;
        let mut edge = 0;
        let mut edge_start = 0.0;
        let mut edge_len = pts[1 % n].sub(pts[0]).norm();
        for k in 0..count {
            let s = step * k as f64;
            while edge_start + edge_len < s && edge + 1 < n {
                edge_start += edge_len;
                edge += 1;
                edge_len = pts[(edge + 1) % n].sub(pts[edge]).norm();
            }
            let a = pts[edge];
            let b = pts[(edge + 1) % n];
            let t = if edge_len > 0.0 {
                ((s - edge_start) / edge_len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            out.push(a.add(b.sub(a).scale(t)));
        }
        out
    }
}

fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let p = points[i];
        let q = points[(i + 1) % n];
        acc += p.x * q.y - q.x * p.y;
    }
    0.5 * acc
}

fn centroid(points: &[Point]) -> Option<Point> {
    let n = points.len();
    // Shift to the first vertex so large offsets do not cancel badly.
    let o = *points.first()?;
    let mut a = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let p = points[i].sub(o);
        let q = points[(i + 1) % n].sub(o);
        let cross = p.x * q.y - q.x * p.y;
        a += cross;
        cx += (p.x + q.x) * cross;
        cy += (p.y + q.y) * cross;
    }
    if a == 0.0 {
        return None;
    }
    Some(Point::new(o.x + cx / (3.0 * a), o.y + cy / (3.0 * a)))
}

fn point_in_polygon(points: &[Point], p: Point) -> bool {
    let n = points.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = points[i];
        let b = points[j];
        if (a.y > p.y) != (b.y > p.y) {
            let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Sector containing a bearing in radians.
pub fn segment_of(bearing: f64) -> usize {
    let width = 2.0 * PI / SEGMENTS as f64;
    let shifted = wrap_angle(bearing + 0.5 * width);
    ((shifted / width) as usize) % SEGMENTS
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a % (2.0 * PI);
    if w < 0.0 {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Center bearing of sector `i`.
pub fn segment_bearing(i: usize) -> f64 {
    2.0 * PI * i as f64 / SEGMENTS as f64
}

/// 32 normalized shape ratios plus the centroid and the normalization divisor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeDescriptor {
    pub ratios: [f64; SEGMENTS],
    pub center: Point,
    pub max_radius: f64,
}

impl ShapeDescriptor {
    /// Descriptor of a circle: every ratio is one.
    pub fn circle(center: Point, radius: f64) -> Self {
        Self {
            ratios: [1.0; SEGMENTS],
            center,
            max_radius: radius,
        }
    }

    /// Sector distances in millimeters.
    pub fn radii_mm(&self) -> [f64; SEGMENTS] {
        self.ratios.map(|r| r * self.max_radius)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.max_radius > 0.0) || !self.max_radius.is_finite() {
            return Err(CodecError::InvalidDescriptor("max_radius must be positive"));
        }
        if self.ratios.iter().any(|r| !r.is_finite()) {
            return Err(CodecError::InvalidDescriptor("non-finite shape ratio"));
        }
        Ok(())
    }

    /// Outline through the sector distances at sector-center bearings.
    pub fn outline(&self) -> Vec<Point> {
        (0..SEGMENTS)
            .map(|i| {
                let r = self.ratios[i] * self.max_radius;
                let t = segment_bearing(i);
                Point::new(self.center.x + r * t.cos(), self.center.y + r * t.sin())
            })
            .collect()
    }
}

/// Encodes a closed contour as 32 shape ratios.
pub fn encode_contour(contour: &Contour) -> Result<ShapeDescriptor, CodecError> {
    if contour.points.len() < MIN_CONTOUR_POINTS {
        return Err(CodecError::DegenerateContour("fewer than 32 points"));
    }
    if contour.points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(CodecError::DegenerateContour("non-finite coordinate"));
    }
    let area = contour.area();
    if !(area > 0.0) {
        return Err(CodecError::DegenerateContour("zero enclosed area"));
    }
    let center = contour
        .centroid()
        .ok_or(CodecError::DegenerateContour("zero enclosed area"))?;
    if !contour.contains(center) {
        return Err(CodecError::CentroidOutside);
    }

    let mut sums = [0.0_f64; SEGMENTS];
    let mut counts = [0usize; SEGMENTS];
    for p in contour.resample(RESAMPLE_POINTS) {
        let d = p.sub(center);
        let seg = segment_of(d.y.atan2(d.x));
        sums[seg] += d.norm();
        counts[seg] += 1;
    }
    if counts.contains(&0) {
        return Err(CodecError::CentroidOutside);
    }
    let mut ratios = [0.0; SEGMENTS];
    for i in 0..SEGMENTS {
        ratios[i] = sums[i] / counts[i] as f64;
    }
    let max_radius = ratios.iter().copied().fold(0.0_f64, f64::max);
    if !(max_radius > 0.0) {
        return Err(CodecError::DegenerateContour("zero radius"));
    }
    for r in ratios.iter_mut() {
        *r /= max_radius;
    }
    Ok(ShapeDescriptor {
        ratios,
        center,
        max_radius,
    })
}

/// Subset of the 32 sectors entering the objective.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentMask(u32);

impl SegmentMask {
    pub const ALL: SegmentMask = SegmentMask(u32::MAX);
    pub const EMPTY: SegmentMask = SegmentMask(0);

    pub fn from_bits(bits: u32) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = 0u32;
        for i in indices {
            assert!(i < SEGMENTS, "segment index {i} out of range");
            bits |= 1 << i;
        }
        Self(bits)
    }

    pub fn contains(self, i: usize) -> bool {
        i < SEGMENTS && self.0 & (1 << i) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..SEGMENTS).filter(move |&i| self.contains(i))
    }

    pub fn indices(self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl fmt::Debug for SegmentMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SegmentMask({self})")
    }
}

/// `all`, or comma-separated 0-based sector indices.
impl fmt::Display for SegmentMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::ALL {
            return f.write_str("all");
        }
        let mut first = true;
        for i in self.iter() {
            if !first {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for SegmentMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::ALL);
        }
        let mut bits = 0u32;
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let i: usize = token
                .parse()
                .map_err(|_| alloc::format!("bad segment index `{token}`"))?;
            if i >= SEGMENTS {
                return Err(alloc::format!("segment index {i} out of range 0..32"));
            }
            bits |= 1 << i;
        }
        Ok(Self(bits))
    }
}

/// Root-mean-square difference of the masked shape ratios.
pub fn rmse_objective(
    target: &ShapeDescriptor,
    response: &ShapeDescriptor,
    mask: SegmentMask,
) -> Result<f64, CodecError> {
    rmse_ratios(&target.ratios, &response.ratios, mask)
}

/// [`rmse_objective`] on raw ratio arrays.
pub fn rmse_ratios(
    target: &[f64; SEGMENTS],
    response: &[f64; SEGMENTS],
    mask: SegmentMask,
) -> Result<f64, CodecError> {
    if mask.is_empty() {
        return Err(CodecError::EmptyMask);
    }
    let sum: f64 = mask
        .iter()
        .map(|i| {
            let d = target[i] - response[i];
            d * d
        })
        .sum();
    Ok((sum / mask.len() as f64).sqrt())
}

/// Per-sector radius error in millimeters with summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiiError {
    pub per_segment: [f64; SEGMENTS],
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
    pub max: f64,
}

pub fn radii_error_mm(
    target: &ShapeDescriptor,
    response: &ShapeDescriptor,
) -> Result<RadiiError, CodecError> {
    target.validate()?;
    response.validate()?;
    let t = target.radii_mm();
    let r = response.radii_mm();
    let mut per_segment = [0.0; SEGMENTS];
    for i in 0..SEGMENTS {
        per_segment[i] = (t[i] - r[i]).abs();
    }
    let n = SEGMENTS as f64;
    let mean = per_segment.iter().sum::<f64>() / n;
    let var = per_segment.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    let max = per_segment.iter().copied().fold(0.0_f64, f64::max);
    Ok(RadiiError {
        per_segment,
        mean,
        sd: var.sqrt(),
        max,
    })
}

/// Parametric family of a target outline.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetKind {
    /// Isosceles triangle, apex toward North, with the given height-to-base ratio.
    Triangle { hbr: f64 },
    /// Rectangle with its long side along East-West.
    Rectangle { aspect: f64 },
    /// Ellipse with its major axis along East-West.
    Ellipse { axis_ratio: f64 },
    /// Closed polyline in millimeters (letters and other free outlines).
    Letter { vertices: Vec<Point> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub corner_radius: f64,
    pub nominal_radius: f64,
    /// Counter-clockwise rotation applied to the outline, radians.
    pub rotation: f64,
    pub optimize_mask: SegmentMask,
    pub solenoid_mask: SolenoidMask,
}

pub const DEFAULT_CORNER_RADIUS: f64 = 0.4;
pub const DEFAULT_NOMINAL_RADIUS: f64 = 3.0;

impl TargetSpec {
    pub fn new(kind: TargetKind, solenoid_mask: SolenoidMask) -> Self {
        Self {
            kind,
            corner_radius: DEFAULT_CORNER_RADIUS,
            nominal_radius: DEFAULT_NOMINAL_RADIUS,
            rotation: 0.0,
            optimize_mask: SegmentMask::ALL,
            solenoid_mask,
        }
    }

    pub fn triangle(hbr: f64) -> Self {
        Self::new(TargetKind::Triangle { hbr }, default_solenoids_for_triangle(hbr))
    }

    pub fn rectangle(aspect: f64) -> Self {
        Self::new(TargetKind::Rectangle { aspect }, "N,E,W,S".parse().unwrap())
    }

    pub fn ellipse(axis_ratio: f64) -> Self {
        Self::new(TargetKind::Ellipse { axis_ratio }, "E,W".parse().unwrap())
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |m: &str| Err(CodecError::InvalidSpec(m.into()));
        match &self.kind {
            TargetKind::Triangle { hbr } if !(0.25..=2.0).contains(hbr) => {
                return bad("hbr must lie in [0.25, 2.0]")
            }
            TargetKind::Rectangle { aspect } if !(1.0..=3.0).contains(aspect) => {
                return bad("aspect must lie in [1.0, 3.0]")
            }
            TargetKind::Ellipse { axis_ratio } if !(*axis_ratio > 0.0 && axis_ratio.is_finite()) => {
                return bad("axis_ratio must be positive")
            }
            TargetKind::Letter { vertices } if vertices.len() < 3 => {
                return bad("letter outline needs at least 3 vertices")
            }
            _ => {}
        }
        if !(self.corner_radius > 0.0) || !self.corner_radius.is_finite() {
            return bad("corner_radius must be positive");
        }
        if !(self.nominal_radius > 0.0) || !self.nominal_radius.is_finite() {
            return bad("nominal_radius must be positive");
        }
        if !self.rotation.is_finite() {
            return bad("rotation must be finite");
        }
        if self.optimize_mask.is_empty() {
            return bad("optimize_mask must be nonempty");
        }
        Ok(())
    }
}

/// Solenoid subsets used for triangles: three for flat ones, five otherwise.
pub fn default_solenoids_for_triangle(hbr: f64) -> SolenoidMask {
    if hbr <= 0.5 {
        "NW,NE,S".parse().unwrap()
    } else {
        "NW,NE,W,E,S".parse().unwrap()
    }
}

const OUTLINE_POINTS: usize = 2048;

/// Builds the corner-rounded target outline scaled to area `π·nominal_radius²`.
pub fn target_outline(spec: &TargetSpec) -> Result<Contour, CodecError> {
    spec.validate()?;
    let area = PI * spec.nominal_radius * spec.nominal_radius;
    let points = match &spec.kind {
        TargetKind::Ellipse { axis_ratio } => {
            let a = spec.nominal_radius * axis_ratio.sqrt();
            let b = spec.nominal_radius / axis_ratio.sqrt();
            (0..OUTLINE_POINTS)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / OUTLINE_POINTS as f64;
                    Point::new(a * t.cos(), b * t.sin()).rotated(spec.rotation)
                })
                .collect()
        }
        TargetKind::Triangle { hbr } => {
            let v = [
                Point::new(-0.5, 0.0),
                Point::new(0.5, 0.0),
                Point::new(0.0, *hbr),
            ];
            rounded_polygon(&v, spec.corner_radius, area, spec.rotation)?
        }
        TargetKind::Rectangle { aspect } => {
            let (w, h) = (0.5 * aspect, 0.5);
            let v = [
                Point::new(-w, -h),
                Point::new(w, -h),
                Point::new(w, h),
                Point::new(-w, h),
            ];
            rounded_polygon(&v, spec.corner_radius, area, spec.rotation)?
        }
        TargetKind::Letter { vertices } => {
            rounded_polygon(vertices, spec.corner_radius, area, spec.rotation)?
        }
    };
    let mut contour = Contour::new(points);
    // Arc sampling loses a sliver of area; restore it exactly.
    let s = (area / contour.area()).sqrt();
    contour = contour.map(|p| p.scale(s));
    Ok(contour)
}

/// Target descriptor for a spec: outline, then [`encode_contour`].
pub fn generate_target(spec: &TargetSpec) -> Result<ShapeDescriptor, CodecError> {
    encode_contour(&target_outline(spec)?)
}

struct Corner {
    vertex: Point,
    u_in: Point,
    u_out: Point,
    /// Signed turning angle, positive for a left (convex, in CCW order) turn.
    turn: f64,
}

fn corners(v: &[Point]) -> Result<Vec<Corner>, CodecError> {
    let n = v.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let prev = v[(i + n - 1) % n];
        let next = v[(i + 1) % n];
        let a = v[i].sub(prev);
        let b = next.sub(v[i]);
        let (la, lb) = (a.norm(), b.norm());
        if !(la > 0.0 && lb > 0.0) {
            return Err(CodecError::InvalidSpec("repeated outline vertex".into()));
        }
        let u_in = a.scale(1.0 / la);
        let u_out = b.scale(1.0 / lb);
        let cross = u_in.x * u_out.y - u_in.y * u_out.x;
        let dot = u_in.x * u_out.x + u_in.y * u_out.y;
        out.push(Corner {
            vertex: v[i],
            u_in,
            u_out,
            turn: cross.atan2(dot),
        });
    }
    Ok(out)
}

fn rounded_polygon(
    vertices: &[Point],
    radius: f64,
    area: f64,
    rotation: f64,
) -> Result<Vec<Point>, CodecError> {
    let mut v: Vec<Point> = vertices.iter().map(|p| p.rotated(rotation)).collect();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    let base_area = signed_area(&v);
    if !(base_area > 0.0) {
        return Err(CodecError::InvalidSpec("outline encloses no area".into()));
    }
    // Filleting a corner with turning angle φ removes r²(tan(φ/2) − φ/2) of
    // area at convex corners and adds it at reflex ones.
    let unit = corners(&v)?;
    let removed: f64 = unit
        .iter()
        .map(|c| {
            let phi = c.turn.abs();
            c.turn.signum() * ((0.5 * phi).tan() - 0.5 * phi)
        })
        .sum::<f64>()
        * radius
        * radius;
    let k2 = (area + removed) / base_area;
    if !(k2 > 0.0) {
        return Err(CodecError::UnroundableCorner {
            radius,
            edge: 0.0,
        });
    }
    let k = k2.sqrt();
    let v: Vec<Point> = v.iter().map(|p| p.scale(k)).collect();
    let cs = corners(&v)?;
    let n = v.len();

    let tangent: Vec<f64> = cs.iter().map(|c| radius * (0.5 * c.turn.abs()).tan()).collect();
    let mut shortest = f64::INFINITY;
    for i in 0..n {
        let len = v[(i + 1) % n].sub(v[i]).norm();
        shortest = shortest.min(len);
        if tangent[i] + tangent[(i + 1) % n] > len * (1.0 + 1e-12) {
            return Err(CodecError::UnroundableCorner { radius, edge: len });
        }
    }
    if radius > 0.5 * shortest {
        return Err(CodecError::UnroundableCorner {
            radius,
            edge: shortest,
        });
    }

    let perimeter: f64 = (0..n)
        .map(|i| v[(i + 1) % n].sub(v[i]).norm())
        .sum();
    let ds = perimeter / OUTLINE_POINTS as f64;
    let mut out = Vec::with_capacity(OUTLINE_POINTS + 2 * n);
    for i in 0..n {
        let c = &cs[i];
        let t = tangent[i];
        let start = c.vertex.sub(c.u_in.scale(t));
        if c.turn.abs() > 1e-12 {
            let left = Point::new(-c.u_in.y, c.u_in.x);
            let center = start.add(left.scale(radius * c.turn.signum()));
            let a0 = {
                let d = start.sub(center);
                d.y.atan2(d.x)
            };
            let steps = ((radius * c.turn.abs() / ds).ceil() as usize).max(4);
            for s in 0..steps {
                let a = a0 + c.turn * s as f64 / steps as f64;
                out.push(Point::new(center.x + radius * a.cos(), center.y + radius * a.sin()));
            }
        } else {
            out.push(start);
        }
        // straight run to the next corner's tangent point
        let next = &cs[(i + 1) % n];
        let from = c.vertex.add(c.u_out.scale(t));
        let to = next.vertex.sub(next.u_in.scale(tangent[(i + 1) % n]));
        let len = to.sub(from).norm();
        let steps = (len / ds).ceil() as usize;
        for s in 0..steps {
            out.push(from.add(to.sub(from).scale(s as f64 / steps as f64)));
        }
    }
    Ok(out)
}

/// Indices of cyclic local maxima of a ratio vector (strictly above both neighbors
/// after merging plateaus).
pub fn local_maxima(ratios: &[f64; SEGMENTS]) -> Vec<usize> {
    let mut out = vec![];
    for i in 0..SEGMENTS {
        let prev = ratios[(i + SEGMENTS - 1) % SEGMENTS];
        let next = ratios[(i + 1) % SEGMENTS];
        if ratios[i] > prev && ratios[i] >= next {
            out.push(i);
        }
    }
    out
}
