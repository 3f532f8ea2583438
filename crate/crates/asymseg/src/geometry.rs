//! Aspect-ratio annotation geometry.
//!
//! A clinical aspect-ratio annotation is a pair of crossing measurement
//! axes: the longest chord of the nodule (major) and the widest chord
//! perpendicular to it (minor). This module validates such annotations,
//! expands them into the six filled pseudo-label shapes, rasterizes the
//! annotation cross, applies rigid angular perturbations, and recovers an
//! annotation from a reference mask by brute-force chord search.
//!
//! Rasterization rule used by every shape: pixel (r, c) is foreground iff
//! its centre (c + 0.5, r + 0.5) lies inside the shape, with centres
//! exactly on the boundary counting as inside. Filling identical inputs is
//! deterministic, so nested shapes stay nested after rasterization.

use crate::mask::BinaryMask;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Accepted deviation from perpendicularity between the two axes.
pub const PERP_TOLERANCE_DEG: f64 = 15.0;
/// How far the line-line intersection may fall outside either segment.
pub const INTERSECT_TOLERANCE_PX: f64 = 0.5;
/// Minimum admissible axis length.
pub const MIN_AXIS_LEN_PX: f64 = 2.0;

/// Samples per quarter arc when polygonizing curved shapes.
const ARC_SAMPLES: usize = 32;
/// Slack for "centre exactly on an edge" tests.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("annotation axes do not intersect (tolerance {INTERSECT_TOLERANCE_PX} px)")]
    NonIntersecting,
    #[error("angle between axes is {found:.2} deg, outside 90 +/- {PERP_TOLERANCE_DEG} deg")]
    AngleOutOfRange { found: f64 },
    #[error("axis shorter than {MIN_AXIS_LEN_PX} px")]
    Degenerate,
    #[error("coordinates must be finite")]
    NonFinite,
    #[error("empty point set")]
    EmptyInput,
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("mask admits no perpendicular chord of length >= {MIN_AXIS_LEN_PX} px")]
    TooThin,
}

/// A point in image coordinates: x = column, y = row, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

fn seg_len(seg: &[Point2; 2]) -> f64 {
    seg[0].dist(seg[1])
}

/// Distance from `p` to the closed segment `a`-`b`.
fn point_segment_dist(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(Point2::new(a.x + t * dx, a.y + t * dy))
}

/// Intersection of the infinite lines through the two segments, if the
/// lines are not parallel.
fn line_intersection(a: &[Point2; 2], b: &[Point2; 2]) -> Option<Point2> {
    let (d1x, d1y) = (a[1].x - a[0].x, a[1].y - a[0].y);
    let (d2x, d2y) = (b[1].x - b[0].x, b[1].y - b[0].y);
    let denom = d1x * d2y - d1y * d2x;
    let scale = (d1x.abs() + d1y.abs()) * (d2x.abs() + d2y.abs());
    if denom.abs() <= 1e-12 * scale.max(1.0) {
        return None;
    }
    let t = ((b[0].x - a[0].x) * d2y - (b[0].y - a[0].y) * d2x) / denom;
    Some(Point2::new(a[0].x + t * d1x, a[0].y + t * d1y))
}

/// Two crossing measurement axes; `major` is at least as long as `minor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectAnnotation {
    pub major: [Point2; 2],
    pub minor: [Point2; 2],
}

impl AspectAnnotation {
    pub fn new(major: [Point2; 2], minor: [Point2; 2]) -> Self {
        Self { major, minor }
    }

    /// Point where the two axes cross.
    pub fn intersection(&self) -> Point2 {
        line_intersection(&self.major, &self.minor)
            .expect("validated annotation axes always intersect")
    }

    /// The four axis endpoints: major pair then minor pair.
    pub fn endpoints(&self) -> [Point2; 4] {
        [self.major[0], self.major[1], self.minor[0], self.minor[1]]
    }

    pub fn major_len(&self) -> f64 {
        seg_len(&self.major)
    }

    pub fn minor_len(&self) -> f64 {
        seg_len(&self.minor)
    }
}

/// The six pseudo-label shapes derivable from an annotation.
///
/// `Quadrilateral` and `Concavity` under-segment (conservative);
/// the other four over-segment (radical).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Quadrilateral,
    Concavity,
    Box,
    RotatedRect,
    Circle,
    IrregularEllipse,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Quadrilateral,
        ShapeKind::Concavity,
        ShapeKind::Box,
        ShapeKind::RotatedRect,
        ShapeKind::Circle,
        ShapeKind::IrregularEllipse,
    ];

    pub fn is_conservative(self) -> bool {
        matches!(self, ShapeKind::Quadrilateral | ShapeKind::Concavity)
    }

    pub fn is_radical(self) -> bool {
        !self.is_conservative()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Quadrilateral => "quadrilateral",
            ShapeKind::Concavity => "concavity",
            ShapeKind::Box => "box",
            ShapeKind::RotatedRect => "rotrect",
            ShapeKind::Circle => "circle",
            ShapeKind::IrregularEllipse => "ellipse",
        }
    }

    pub fn parse(name: &str) -> Option<ShapeKind> {
        match name {
            "quadrilateral" | "quad" => Some(ShapeKind::Quadrilateral),
            "concavity" => Some(ShapeKind::Concavity),
            "box" => Some(ShapeKind::Box),
            "rotrect" | "rotated_rect" => Some(ShapeKind::RotatedRect),
            "circle" => Some(ShapeKind::Circle),
            "ellipse" | "irregular_ellipse" => Some(ShapeKind::IrregularEllipse),
            _ => None,
        }
    }
}

/// A generated pseudo-label mask plus a flag saying whether any part of
/// the shape boundary fell outside the grid and was clipped away.
#[derive(Debug, Clone)]
pub struct LabelMask {
    pub mask: BinaryMask,
    pub clipped: bool,
}

/// Canonicalize and check an annotation.
///
/// Swaps the axes so `major` is the longer one, then requires finite
/// coordinates, both axis lengths >= [`MIN_AXIS_LEN_PX`], a crossing point
/// lying on both segments (within [`INTERSECT_TOLERANCE_PX`]), and an
/// inter-axis angle within [`PERP_TOLERANCE_DEG`] of perpendicular.
pub fn validate_annotation(ann: &AspectAnnotation) -> Result<AspectAnnotation, GeometryError> {
    if !ann.endpoints().iter().all(Point2::is_finite) {
        return Err(GeometryError::NonFinite);
    }
    let mut ann = *ann;
    if seg_len(&ann.minor) > seg_len(&ann.major) {
        std::mem::swap(&mut ann.major, &mut ann.minor);
    }
    if seg_len(&ann.minor) < MIN_AXIS_LEN_PX {
        return Err(GeometryError::Degenerate);
    }
    let cross = match line_intersection(&ann.major, &ann.minor) {
        Some(p) => p,
        None => return Err(GeometryError::NonIntersecting),
    };
    if point_segment_dist(cross, ann.major[0], ann.major[1]) > INTERSECT_TOLERANCE_PX
        || point_segment_dist(cross, ann.minor[0], ann.minor[1]) > INTERSECT_TOLERANCE_PX
    {
        return Err(GeometryError::NonIntersecting);
    }
    let (ux, uy) = (ann.major[1].x - ann.major[0].x, ann.major[1].y - ann.major[0].y);
    let (vx, vy) = (ann.minor[1].x - ann.minor[0].x, ann.minor[1].y - ann.minor[0].y);
    let cos = (ux * vx + uy * vy) / (ux.hypot(uy) * vx.hypot(vy));
    let angle = cos.clamp(-1.0, 1.0).acos().to_degrees();
    if (angle - 90.0).abs() > PERP_TOLERANCE_DEG {
        return Err(GeometryError::AngleOutOfRange { found: angle });
    }
    Ok(ann)
}

/// Exact minimum enclosing circle of up to a few points, by enumerating
/// every 2-point (diametral) and 3-point (circumscribed) candidate and
/// keeping the smallest one that contains the whole set.
pub fn min_enclosing_circle(points: &[Point2]) -> Result<(Point2, f64), GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let mut best: Option<(Point2, f64)> = None;
    let mut consider = |center: Point2, radius: f64| {
        let tol = 1e-9 * (1.0 + radius);
        if points.iter().all(|p| p.dist(center) <= radius + tol) {
            match best {
                Some((_, r)) if r <= radius => {}
                _ => best = Some((center, radius)),
            }
        }
    };

    consider(points[0], 0.0);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let c = Point2::new(
                0.5 * (points[i].x + points[j].x),
                0.5 * (points[i].y + points[j].y),
            );
            consider(c, c.dist(points[i]).max(c.dist(points[j])));
            for k in (j + 1)..points.len() {
                if let Some(c) = circumcenter(points[i], points[j], points[k]) {
                    let r = c
                        .dist(points[i])
                        .max(c.dist(points[j]))
                        .max(c.dist(points[k]));
                    consider(c, r);
                }
            }
        }
    }
    best.ok_or(GeometryError::EmptyInput)
}

fn circumcenter(a: Point2, b: Point2, c: Point2) -> Option<Point2> {
    let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    let scale = (a.x.abs() + a.y.abs() + b.x.abs() + b.y.abs() + c.x.abs() + c.y.abs()).max(1.0);
    if d.abs() <= 1e-12 * scale * scale {
        return None; // collinear
    }
    let (a2, b2, c2) = (
        a.x * a.x + a.y * a.y,
        b.x * b.x + b.y * b.y,
        c.x * c.x + c.y * c.y,
    );
    Some(Point2::new(
        (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d,
        (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d,
    ))
}

/// The four endpoints sorted counter-clockwise by angle about the axis
/// crossing point. Gives a simple polygon for any valid annotation because
/// the axes are its diagonals and they cross in the interior.
fn angular_order(ann: &AspectAnnotation) -> [Point2; 4] {
    let c = ann.intersection();
    let mut pts = ann.endpoints();
    pts.sort_by(|p, q| {
        let ap = (p.y - c.y).atan2(p.x - c.x);
        let aq = (q.y - c.y).atan2(q.x - c.x);
        ap.partial_cmp(&aq).expect("finite angles")
    });
    pts
}

/// Generate the filled pseudo-label mask of `kind` on an `h` x `w` grid.
///
/// The annotation must already be validated. Shapes reaching outside the
/// grid are clipped and reported via [`LabelMask::clipped`].
///
/// Besides the centre-based fill, the pixel containing each axis endpoint
/// is always set. Sharp shapes (a thin quadrilateral, the concavity cusps)
/// can otherwise cover no pixel centre near an endpoint, and the endpoint
/// pixels are the clinically marked positions. The same four pixels are
/// stamped for every kind, so shape nesting is unaffected.
pub fn generate_pseudo_label(
    ann: &AspectAnnotation,
    kind: ShapeKind,
    h: usize,
    w: usize,
) -> LabelMask {
    let mut label = match kind {
        ShapeKind::Quadrilateral => fill_polygon(&angular_order(ann), h, w),
        ShapeKind::Concavity => fill_polygon(&concavity_polygon(ann), h, w),
        ShapeKind::Box => fill_box(ann, h, w),
        ShapeKind::RotatedRect => fill_polygon(&rotated_rect_corners(ann), h, w),
        ShapeKind::Circle => fill_circle(ann, h, w),
        ShapeKind::IrregularEllipse => fill_polygon(&ellipse_polygon(ann), h, w),
    };
    for e in ann.endpoints() {
        let (c, r) = (e.x.floor(), e.y.floor());
        if c >= 0.0 && r >= 0.0 && (c as usize) < w && (r as usize) < h {
            label.mask.set(r as usize, c as usize, true);
        }
    }
    label
}

/// Quarter-arc between adjacent endpoints `a` and `b` around centre `c`:
/// p(t) = c + cos(t) (a - c) + sin(t) (b - c), t in [0, pi/2].
///
/// An exact quarter ellipse when the axes are perpendicular, degrading
/// gracefully to an affine arc when the crossing is off-centre.
fn quarter_arc(c: Point2, a: Point2, b: Point2, out: &mut Vec<Point2>) {
    for s in 0..ARC_SAMPLES {
        let t = std::f64::consts::FRAC_PI_2 * (s as f64) / (ARC_SAMPLES as f64);
        let (ct, st) = (t.cos(), t.sin());
        out.push(Point2::new(
            c.x + ct * (a.x - c.x) + st * (b.x - c.x),
            c.y + ct * (a.y - c.y) + st * (b.y - c.y),
        ));
    }
}

fn ellipse_polygon(ann: &AspectAnnotation) -> Vec<Point2> {
    let c = ann.intersection();
    let pts = angular_order(ann);
    let mut poly = Vec::with_capacity(4 * ARC_SAMPLES);
    for i in 0..4 {
        quarter_arc(c, pts[i], pts[(i + 1) % 4], &mut poly);
    }
    poly
}

/// Reflect `p` across the line through `a` and `b`.
fn reflect_across_line(p: Point2, a: Point2, b: Point2) -> Point2 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
    let foot = Point2::new(a.x + t * dx, a.y + t * dy);
    Point2::new(2.0 * foot.x - p.x, 2.0 * foot.y - p.y)
}

/// Concavity boundary: each quarter arc reflected across its chord, which
/// pulls the curve inside the quadrilateral and yields a star-shaped
/// region around the crossing point.
fn concavity_polygon(ann: &AspectAnnotation) -> Vec<Point2> {
    let c = ann.intersection();
    let pts = angular_order(ann);
    let mut poly = Vec::with_capacity(4 * ARC_SAMPLES);
    for i in 0..4 {
        let (a, b) = (pts[i], pts[(i + 1) % 4]);
        let mut arc = Vec::with_capacity(ARC_SAMPLES);
        quarter_arc(c, a, b, &mut arc);
        poly.extend(arc.into_iter().map(|p| reflect_across_line(p, a, b)));
    }
    poly
}

/// Rectangle aligned with the major axis direction, spanning the min/max
/// projections of the four endpoints onto that direction and its
/// perpendicular.
fn rotated_rect_corners(ann: &AspectAnnotation) -> Vec<Point2> {
    let (ux, uy) = (
        ann.major[1].x - ann.major[0].x,
        ann.major[1].y - ann.major[0].y,
    );
    let len = ux.hypot(uy);
    let (ux, uy) = (ux / len, uy / len);
    let (vx, vy) = (-uy, ux);
    let mut umin = f64::INFINITY;
    let mut umax = f64::NEG_INFINITY;
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for p in ann.endpoints() {
        let pu = p.x * ux + p.y * uy;
        let pv = p.x * vx + p.y * vy;
        umin = umin.min(pu);
        umax = umax.max(pu);
        vmin = vmin.min(pv);
        vmax = vmax.max(pv);
    }
    [(umin, vmin), (umax, vmin), (umax, vmax), (umin, vmax)]
        .iter()
        .map(|&(pu, pv)| Point2::new(pu * ux + pv * vx, pu * uy + pv * vy))
        .collect()
}

fn fill_box(ann: &AspectAnnotation, h: usize, w: usize) -> LabelMask {
    let pts = ann.endpoints();
    let xmin = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let xmax = pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let ymin = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let ymax = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let clipped = xmin < 0.0 || ymin < 0.0 || xmax > w as f64 || ymax > h as f64;
    let mut mask = BinaryMask::zeros(h, w);
    for r in 0..h {
        let y = r as f64 + 0.5;
        if y < ymin || y > ymax {
            continue;
        }
        for c in 0..w {
            let x = c as f64 + 0.5;
            if x >= xmin && x <= xmax {
                mask.set(r, c, true);
            }
        }
    }
    LabelMask { mask, clipped }
}

fn fill_circle(ann: &AspectAnnotation, h: usize, w: usize) -> LabelMask {
    let (center, radius) =
        min_enclosing_circle(&ann.endpoints()).expect("four finite endpoints");
    let clipped = center.x - radius < 0.0
        || center.y - radius < 0.0
        || center.x + radius > w as f64
        || center.y + radius > h as f64;
    let mut mask = BinaryMask::zeros(h, w);
    let r2 = radius * radius;
    let tol = EDGE_EPS * (1.0 + r2);
    for r in 0..h {
        let dy = r as f64 + 0.5 - center.y;
        for c in 0..w {
            let dx = c as f64 + 0.5 - center.x;
            if dx * dx + dy * dy <= r2 + tol {
                mask.set(r, c, true);
            }
        }
    }
    LabelMask { mask, clipped }
}

/// Scanline even-odd fill at pixel centres, plus an explicit pass setting
/// pixels whose centre lies exactly on a polygon edge.
fn fill_polygon(poly: &[Point2], h: usize, w: usize) -> LabelMask {
    let mut mask = BinaryMask::zeros(h, w);
    let mut clipped = false;
    for p in poly {
        if p.x < 0.0 || p.y < 0.0 || p.x > w as f64 || p.y > h as f64 {
            clipped = true;
        }
    }
    let n = poly.len();
    let mut crossings: Vec<f64> = Vec::with_capacity(8);
    for r in 0..h {
        let y = r as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            // Half-open rule in y so shared vertices count once.
            if (p.y <= y && q.y > y) || (q.y <= y && p.y > y) {
                crossings.push(p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y));
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).expect("finite crossings"));
        for pair in crossings.chunks_exact(2) {
            let c0 = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let c1 = (pair[1] - 0.5).floor().min(w as f64 - 1.0);
            if c1 < 0.0 {
                continue;
            }
            for c in c0..=(c1 as usize) {
                if c < w {
                    mask.set(r, c, true);
                }
            }
        }
    }
    // Centres sitting exactly on an edge count as inside but can be missed
    // by the parity rule; walk each edge and set them explicitly.
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let len = p.dist(q);
        let steps = (len * 2.0).ceil() as usize + 1;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = p.x + t * (q.x - p.x);
            let y = p.y + t * (q.y - p.y);
            for (cr, cc) in [
                (y.floor() - 1.0, x.floor() - 1.0),
                (y.floor() - 1.0, x.floor()),
                (y.floor(), x.floor() - 1.0),
                (y.floor(), x.floor()),
            ] {
                if cr < 0.0 || cc < 0.0 || cr >= h as f64 || cc >= w as f64 {
                    continue;
                }
                let centre = Point2::new(cc + 0.5, cr + 0.5);
                if point_segment_dist(centre, p, q) <= EDGE_EPS {
                    mask.set(cr as usize, cc as usize, true);
                }
            }
        }
    }
    LabelMask { mask, clipped }
}

/// Rasterize both annotation axes as 1-px Bresenham lines (union), clipped
/// to the grid. This is the anatomical-position cross used by the
/// projection prior loss.
pub fn rasterize_cross(ann: &AspectAnnotation, h: usize, w: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(h, w);
    for seg in [&ann.major, &ann.minor] {
        draw_line(
            &mut mask,
            seg[0].x.round() as i64,
            seg[0].y.round() as i64,
            seg[1].x.round() as i64,
            seg[1].y.round() as i64,
        );
    }
    mask
}

fn draw_line(mask: &mut BinaryMask, x0: i64, y0: i64, x1: i64, y1: i64) {
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y) = (x0, y0);
    let mut err = dx + dy;
    loop {
        if x >= 0 && x < w && y >= 0 && y < h {
            mask.set(y as usize, x as usize, true);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Rotate both axes rigidly by `direction * degrees` about their crossing
/// point. Axis lengths and the crossing point are preserved; the result is
/// re-validated so an over-rotated annotation is rejected.
pub fn perturb_annotation(
    ann: &AspectAnnotation,
    degrees: f64,
    direction: i32,
) -> Result<AspectAnnotation, GeometryError> {
    assert!(direction == 1 || direction == -1, "direction must be +/-1");
    let c = ann.intersection();
    let theta = (direction as f64 * degrees).to_radians();
    let (ct, st) = (theta.cos(), theta.sin());
    let rot = |p: Point2| {
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        Point2::new(c.x + ct * dx - st * dy, c.y + st * dx + ct * dy)
    };
    validate_annotation(&AspectAnnotation::new(
        [rot(ann.major[0]), rot(ann.major[1])],
        [rot(ann.minor[0]), rot(ann.minor[1])],
    ))
}

/// Recover an annotation from a reference mask by brute force: the major
/// axis is the longest chord between boundary pixels that stays inside
/// the mask; the minor axis is the longest chord perpendicular to it
/// (within 1 deg) that crosses the major segment. Endpoints are integer
/// pixel coordinates, matching how clinical axes are clicked.
pub fn annotation_from_mask(gt: &BinaryMask) -> Result<AspectAnnotation, GeometryError> {
    if gt.is_empty() {
        return Err(GeometryError::EmptyMask);
    }
    let boundary = gt.boundary_pixels();
    let coords: Vec<Point2> = boundary
        .iter()
        .map(|&(r, c)| Point2::new(c as f64, r as f64))
        .collect();

    let mut major: Option<(Point2, Point2)> = None;
    let mut major_len2 = 0.0;
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            let len2 = (coords[i].x - coords[j].x).powi(2)
                + (coords[i].y - coords[j].y).powi(2);
            if len2 > major_len2 && chord_inside(gt, coords[i], coords[j]) {
                major_len2 = len2;
                major = Some((coords[i], coords[j]));
            }
        }
    }
    let (ma, mb) = major.ok_or(GeometryError::TooThin)?;
    if major_len2.sqrt() < MIN_AXIS_LEN_PX {
        return Err(GeometryError::TooThin);
    }
    let (ux, uy) = ((mb.x - ma.x) / major_len2.sqrt(), (mb.y - ma.y) / major_len2.sqrt());

    // cos(89 deg): admissible deviation of a chord from perpendicular.
    let perp_cos = 1f64.to_radians().sin();
    let mut minor: Option<(Point2, Point2)> = None;
    let mut minor_len2 = 0.0;
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            let (dx, dy) = (coords[j].x - coords[i].x, coords[j].y - coords[i].y);
            let len2 = dx * dx + dy * dy;
            if len2 <= minor_len2 || len2 < MIN_AXIS_LEN_PX * MIN_AXIS_LEN_PX {
                continue;
            }
            let len = len2.sqrt();
            if ((dx * ux + dy * uy) / len).abs() > perp_cos {
                continue;
            }
            if !segments_cross(ma, mb, coords[i], coords[j]) {
                continue;
            }
            if chord_inside(gt, coords[i], coords[j]) {
                minor_len2 = len2;
                minor = Some((coords[i], coords[j]));
            }
        }
    }
    let (na, nb) = minor.ok_or(GeometryError::TooThin)?;
    validate_annotation(&AspectAnnotation::new([ma, mb], [na, nb]))
}

/// True when every sample along the open chord lands on a foreground pixel.
fn chord_inside(mask: &BinaryMask, a: Point2, b: Point2) -> bool {
    let len = a.dist(b);
    let steps = (len * 2.0).ceil() as usize + 1;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.x + t * (b.x - a.x);
        let y = a.y + t * (b.y - a.y);
        let (c, r) = (x.floor() as i64, y.floor() as i64);
        if c < 0 || r < 0 || c >= mask.width() as i64 || r >= mask.height() as i64 {
            return false;
        }
        if !mask.get(r as usize, c as usize) {
            return false;
        }
    }
    true
}

fn segments_cross(a0: Point2, a1: Point2, b0: Point2, b1: Point2) -> bool {
    let d = |p: Point2, q: Point2, r: Point2| (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
    let d1 = d(a0, a1, b0);
    let d2 = d(a0, a1, b1);
    let d3 = d(b0, b1, a0);
    let d4 = d(b0, b1, a1);
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}
