//! Explicit yarn geometry: B-spline centerlines swept by a radius,
//! rotation-minimizing reference frames, and ray intersection producing the
//! azimuthal phase / longitudinal length parameterization used by the
//! implicit ply and fiber stages.
//!
//! The longitudinal coordinate `v` is *arclength* from the curve root, backed
//! by a per-span Gauss-Legendre lookup table, so twist rates expressed in
//! radians per unit length stay physically meaningful.

use crate::error::{Error, Result};
use crate::math::{perpendicular_smallest_axis, wrap_angle, Vec3};

/// 16-node Gauss-Legendre abscissae (positive half) and weights on [-1, 1].
const GL16_X: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_91,
    0.457_016_777_657_227_39,
    0.617_876_244_402_643_75,
    0.755_404_408_355_003_03,
    0.865_631_202_387_831_74,
    0.944_575_023_073_232_58,
    0.989_400_934_991_649_93,
];
const GL16_W: [f64; 8] = [
    0.189_450_610_455_068_50,
    0.182_603_415_044_923_59,
    0.169_156_519_395_002_54,
    0.149_595_988_816_576_73,
    0.124_628_971_255_533_87,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_09,
];

/// Default linear segments per knot span for the intersection tessellation.
pub const DEFAULT_SEGMENTS_PER_SPAN: usize = 8;

/// A ray with a parametric validity range.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_min: f64,
    pub t_max: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Ray {
            origin,
            direction: direction.normalize(),
            t_min: 0.0,
            t_max: f64::INFINITY,
        }
    }

    pub fn with_range(origin: Vec3, direction: Vec3, t_min: f64, t_max: f64) -> Self {
        debug_assert!(t_min >= 0.0 && t_min < t_max);
        Ray {
            origin,
            direction: direction.normalize(),
            t_min,
            t_max,
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Result of intersecting a ray with the swept yarn cylinder.
#[derive(Debug, Clone, Copy)]
pub struct YarnHit {
    /// Ray parameter where the ray enters the cylinder.
    pub t_enter: f64,
    /// Ray parameter where the ray leaves the cylinder.
    pub t_exit: f64,
    /// Entry point on the yarn surface.
    pub point: Vec3,
    /// Arclength of the entry point along the centerline.
    pub v_yarn: f64,
    /// Azimuthal phase in `[0, 2π)`, measured from the reference normal
    /// around the tangent (`u_yarn = 0` means the surface normal equals the
    /// reference normal).
    pub u_yarn: f64,
    /// Centerline tangent at `v_yarn`.
    pub tangent: Vec3,
    /// Outward cylinder normal at the entry point.
    pub surface_normal: Vec3,
}

/// One sample of the rotation-minimizing frame field along a curve.
#[derive(Debug, Clone, Copy)]
pub struct FrameSample {
    /// Arclength from the curve root.
    pub v: f64,
    pub position: Vec3,
    pub tangent: Vec3,
    /// The static reference normal (rotation-minimizing).
    pub ref_normal: Vec3,
}

/// Rotation-minimizing frame field, sampled densely along a yarn.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    samples: Vec<FrameSample>,
}

impl FrameSequence {
    pub fn samples(&self) -> &[FrameSample] {
        &self.samples
    }

    pub fn total_length(&self) -> f64 {
        self.samples.last().map(|s| s.v).unwrap_or(0.0)
    }

    /// Interpolated frame at arclength `v` (clamped to the sampled range).
    /// Returns `(tangent, ref_normal)`, re-orthonormalized.
    pub fn frame_at(&self, v: f64) -> (Vec3, Vec3) {
        let s = &self.samples;
        if v <= s[0].v {
            return (s[0].tangent, s[0].ref_normal);
        }
        if v >= s[s.len() - 1].v {
            let l = &s[s.len() - 1];
            return (l.tangent, l.ref_normal);
        }
        let idx = s.partition_point(|f| f.v <= v).min(s.len() - 1);
        let (a, b) = (&s[idx - 1], &s[idx]);
        let t = (v - a.v) / (b.v - a.v);
        let tangent = (a.tangent + (b.tangent - a.tangent) * t).normalize();
        let n = a.ref_normal + (b.ref_normal - a.ref_normal) * t;
        let n = (n - tangent * n.dot(tangent)).normalize();
        (tangent, n)
    }

    /// RMF reference normal at arclength `v`, orthogonalized against an
    /// externally supplied (exact) tangent. Interpolating only the normal
    /// keeps the azimuthal frame accurate where the tangent is known
    /// analytically.
    pub fn normal_at(&self, v: f64, tangent: Vec3) -> Vec3 {
        let (_, n) = self.frame_at(v);
        let proj = n - tangent * n.dot(tangent);
        let len = proj.length();
        if len > 1e-12 {
            proj / len
        } else {
            perpendicular_smallest_axis(tangent)
        }
    }
}

/// Centerline sample returned by [`YarnCurve::eval_centerline`].
#[derive(Debug, Clone, Copy)]
pub struct CenterlineSample {
    pub point: Vec3,
    pub tangent: Vec3,
    /// Set when the requested arclength fell outside the curve and was
    /// clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    /// Chord endpoints (on the curve).
    a: Vec3,
    b: Vec3,
    /// Spline parameters at the endpoints.
    u0: f64,
    u1: f64,
    /// Miter plane normals bounding the piece at each end.
    m0: Vec3,
    m1: Vec3,
}

#[derive(Debug, Clone, Copy)]
struct Chunk {
    lo: Vec3,
    hi: Vec3,
    start: usize,
    end: usize,
}

/// Explicit yarn geometry: a B-spline centerline swept by a constant radius.
///
/// Immutable after construction; the arclength table and intersection
/// tessellation are precomputed.
#[derive(Debug, Clone)]
pub struct YarnCurve {
    control_points: Vec<Vec3>,
    radius: f64,
    degree: usize,
    knots: Vec<f64>,
    /// Span boundaries in parameter space (non-degenerate knot intervals).
    span_params: Vec<f64>,
    /// Control points and knots of the first/second derivative splines.
    d1_pts: Vec<Vec3>,
    d1_knots: Vec<f64>,
    d2_pts: Vec<Vec3>,
    d2_knots: Vec<f64>,
    /// Cumulative arclength at slice boundaries; `arc_params` are the
    /// matching parameter values.
    arc_params: Vec<f64>,
    arc_lengths: Vec<f64>,
    segments: Vec<Segment>,
    chunks: Vec<Chunk>,
}

const ARC_SLICES_PER_SPAN: usize = 16;

impl YarnCurve {
    /// Cubic (or lower degree when too few points) clamped uniform B-spline.
    pub fn new(control_points: Vec<Vec3>, radius: f64) -> Result<Self> {
        let degree = control_points.len().saturating_sub(1).min(3).max(1);
        let knots = clamped_uniform_knots(control_points.len(), degree)?;
        Self::with_options(
            control_points,
            radius,
            degree,
            knots,
            DEFAULT_SEGMENTS_PER_SPAN,
        )
    }

    pub fn with_options(
        control_points: Vec<Vec3>,
        radius: f64,
        degree: usize,
        knots: Vec<f64>,
        segments_per_span: usize,
    ) -> Result<Self> {
        if control_points.len() < degree + 1 {
            return Err(Error::InvalidGeometry(format!(
                "need at least degree+1 = {} control points, got {}",
                degree + 1,
                control_points.len()
            )));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidGeometry(format!("radius must be > 0, got {radius}")));
        }
        if knots.len() != control_points.len() + degree + 1 {
            return Err(Error::InvalidGeometry(format!(
                "knot count {} != control points {} + degree {} + 1",
                knots.len(),
                control_points.len(),
                degree
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidGeometry("knots must be nondecreasing".into()));
        }
        if control_points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite control point".into()));
        }

        let mut curve = YarnCurve {
            control_points,
            radius,
            degree,
            knots,
            span_params: Vec::new(),
            d1_pts: Vec::new(),
            d1_knots: Vec::new(),
            d2_pts: Vec::new(),
            d2_knots: Vec::new(),
            arc_params: Vec::new(),
            arc_lengths: Vec::new(),
            segments: Vec::new(),
            chunks: Vec::new(),
        };
        curve.build_derivative_splines();
        curve.span_params = curve.compute_span_params()?;
        curve.build_arclength_table();
        if !(curve.total_length() > 0.0) {
            return Err(Error::DegenerateCurve("curve has zero length".into()));
        }
        curve.build_tessellation(segments_per_span.max(1));
        Ok(curve)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn control_points(&self) -> &[Vec3] {
        &self.control_points
    }

    pub fn total_length(&self) -> f64 {
        *self.arc_lengths.last().unwrap_or(&0.0)
    }

    fn param_domain(&self) -> (f64, f64) {
        (
            self.knots[self.degree],
            self.knots[self.control_points.len()],
        )
    }

    fn compute_span_params(&self) -> Result<Vec<f64>> {
        let (lo, hi) = self.param_domain();
        if !(hi > lo) {
            return Err(Error::DegenerateCurve("empty parameter domain".into()));
        }
        let mut params = vec![lo];
        for i in self.degree..self.control_points.len() {
            let (a, b) = (self.knots[i], self.knots[i + 1]);
            if b > a && b > *params.last().unwrap() {
                params.push(b);
            }
        }
        Ok(params)
    }

    /// de Boor evaluation at parameter `u` (clamped to the domain).
    pub fn point_at_param(&self, u: f64) -> Vec3 {
        let (lo, hi) = self.param_domain();
        let u = u.clamp(lo, hi);
        let k = self.find_span(u);
        let p = self.degree;
        let mut d: Vec<Vec3> = (0..=p).map(|j| self.control_points[k - p + j]).collect();
        for r in 1..=p {
            for j in (r..=p).rev() {
                let i = k - p + j;
                let denom = self.knots[i + p - r + 1] - self.knots[i];
                let alpha = if denom > 0.0 {
                    (u - self.knots[i]) / denom
                } else {
                    0.0
                };
                d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
            }
        }
        d[p]
    }

    fn build_derivative_splines(&mut self) {
        let (pts1, knots1) = derivative_spline(&self.control_points, &self.knots, self.degree);
        if self.degree >= 2 {
            let (pts2, knots2) = derivative_spline(&pts1, &knots1, self.degree - 1);
            self.d2_pts = pts2;
            self.d2_knots = knots2;
        }
        self.d1_pts = pts1;
        self.d1_knots = knots1;
    }

    /// First derivative with respect to the spline parameter.
    pub fn derivative_at_param(&self, u: f64) -> Vec3 {
        if self.degree < 1 {
            return Vec3::ZERO;
        }
        eval_bspline(&self.d1_pts, &self.d1_knots, self.degree - 1, u)
    }

    /// Second derivative with respect to the spline parameter.
    pub fn second_derivative_at_param(&self, u: f64) -> Vec3 {
        if self.degree < 2 {
            return Vec3::ZERO;
        }
        eval_bspline(&self.d2_pts, &self.d2_knots, self.degree - 2, u)
    }

    fn find_span(&self, u: f64) -> usize {
        let n = self.control_points.len();
        if u >= self.knots[n] {
            // Last non-empty span.
            let mut k = n - 1;
            while self.knots[k + 1] <= self.knots[k] {
                k -= 1;
            }
            return k;
        }
        let mut k = self.degree;
        while k + 1 < self.knots.len() && self.knots[k + 1] <= u {
            k += 1;
        }
        k
    }

    fn speed(&self, u: f64) -> f64 {
        self.derivative_at_param(u).length()
    }

    fn build_arclength_table(&mut self) {
        let mut params = vec![];
        let mut lengths = vec![];
        let mut acc = 0.0;
        params.push(self.span_params[0]);
        lengths.push(0.0);
        for w in self.span_params.clone().windows(2) {
            let (a, b) = (w[0], w[1]);
            let step = (b - a) / ARC_SLICES_PER_SPAN as f64;
            for s in 0..ARC_SLICES_PER_SPAN {
                let u0 = a + step * s as f64;
                let u1 = u0 + step;
                acc += self.gauss_length(u0, u1);
                params.push(u1);
                lengths.push(acc);
            }
        }
        self.arc_params = params;
        self.arc_lengths = lengths;
    }

    fn gauss_length(&self, u0: f64, u1: f64) -> f64 {
        let c = 0.5 * (u0 + u1);
        let h = 0.5 * (u1 - u0);
        let mut sum = 0.0;
        for i in 0..8 {
            sum += GL16_W[i] * (self.speed(c - h * GL16_X[i]) + self.speed(c + h * GL16_X[i]));
        }
        sum * h
    }

    /// Arclength from the root at spline parameter `u`.
    pub fn arclength_of_param(&self, u: f64) -> f64 {
        let (lo, hi) = self.param_domain();
        let u = u.clamp(lo, hi);
        let idx = self
            .arc_params
            .partition_point(|&p| p <= u)
            .clamp(1, self.arc_params.len() - 1);
        let u0 = self.arc_params[idx - 1];
        self.arc_lengths[idx - 1] + self.gauss_length(u0, u)
    }

    /// Spline parameter at arclength `v` (clamped to `[0, length]`).
    pub fn param_of_arclength(&self, v: f64) -> f64 {
        let total = self.total_length();
        let v = v.clamp(0.0, total);
        let idx = self
            .arc_lengths
            .partition_point(|&l| l <= v)
            .clamp(1, self.arc_lengths.len() - 1);
        let (l0, l1) = (self.arc_lengths[idx - 1], self.arc_lengths[idx]);
        let (u0, u1) = (self.arc_params[idx - 1], self.arc_params[idx]);
        let mut u = if l1 > l0 {
            u0 + (u1 - u0) * (v - l0) / (l1 - l0)
        } else {
            u0
        };
        // Newton polish on s(u) = v.
        for _ in 0..8 {
            let err = self.arclength_of_param(u) - v;
            let sp = self.speed(u);
            if sp <= 1e-14 {
                break;
            }
            let step = err / sp;
            u -= step;
            u = u.clamp(u0.min(u1), u0.max(u1).max(u0));
            if step.abs() < 1e-14 * (1.0 + u.abs()) {
                break;
            }
        }
        u
    }

    /// Evaluate the centerline at arclength `v`. Out-of-range values are
    /// clamped and flagged.
    pub fn eval_centerline(&self, v: f64) -> CenterlineSample {
        let total = self.total_length();
        let clamped = v < 0.0 || v > total;
        let u = self.param_of_arclength(v);
        let point = self.point_at_param(u);
        let tangent = self.derivative_at_param(u).normalize();
        CenterlineSample {
            point,
            tangent,
            clamped,
        }
    }

    fn build_tessellation(&mut self, segments_per_span: usize) {
        let mut params = Vec::new();
        for w in self.span_params.clone().windows(2) {
            for s in 0..segments_per_span {
                params.push(w[0] + (w[1] - w[0]) * s as f64 / segments_per_span as f64);
            }
        }
        params.push(*self.span_params.last().unwrap());

        let pts: Vec<Vec3> = params.iter().map(|&u| self.point_at_param(u)).collect();
        let mut dirs: Vec<Vec3> = Vec::with_capacity(pts.len() - 1);
        for i in 0..pts.len() - 1 {
            let d = pts[i + 1] - pts[i];
            let len = d.length();
            dirs.push(if len > 1e-14 {
                d / len
            } else {
                self.derivative_at_param(params[i]).normalize()
            });
        }

        let mut segments = Vec::with_capacity(dirs.len());
        for i in 0..dirs.len() {
            let m0 = if i == 0 {
                dirs[0]
            } else {
                (dirs[i - 1] + dirs[i]).normalize()
            };
            let m1 = if i + 1 == dirs.len() {
                dirs[i]
            } else {
                (dirs[i] + dirs[i + 1]).normalize()
            };
            segments.push(Segment {
                a: pts[i],
                b: pts[i + 1],
                u0: params[i],
                u1: params[i + 1],
                m0,
                m1,
            });
        }

        // Conservative AABB margin: radius plus chord sag.
        let mut chunks = Vec::new();
        const CHUNK: usize = 32;
        let mut start = 0;
        while start < segments.len() {
            let end = (start + CHUNK).min(segments.len());
            let mut lo = Vec3::splat(f64::INFINITY);
            let mut hi = Vec3::splat(f64::NEG_INFINITY);
            for seg in &segments[start..end] {
                let mid = self.point_at_param(0.5 * (seg.u0 + seg.u1));
                let chord_mid = (seg.a + seg.b) * 0.5;
                let sag = (mid - chord_mid).length();
                let margin = Vec3::splat(self.radius + sag + 1e-9);
                lo = lo.min(seg.a.min(seg.b) - margin);
                hi = hi.max(seg.a.max(seg.b) + margin);
            }
            chunks.push(Chunk { lo, hi, start, end });
            start = end;
        }
        self.segments = segments;
        self.chunks = chunks;
    }

    /// Axis-aligned bounds of the swept cylinder (conservative).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for c in &self.chunks {
            lo = lo.min(c.lo);
            hi = hi.max(c.hi);
        }
        (lo, hi)
    }

    /// Spline parameter of the point on the centerline closest to `p`,
    /// starting the search at `u_init`. Newton on the perpendicularity
    /// residual with backtracking, so wiggly spans cannot make it settle on
    /// a non-perpendicular foot.
    pub fn closest_param(&self, p: Vec3, u_init: f64) -> f64 {
        let (lo, hi) = self.param_domain();
        let residual = |u: f64| (p - self.point_at_param(u)).dot(self.derivative_at_param(u));
        let mut u = u_init.clamp(lo, hi);
        let mut g = residual(u);
        for _ in 0..24 {
            let d1 = self.derivative_at_param(u);
            let d2 = self.second_derivative_at_param(u);
            let diff = p - self.point_at_param(u);
            let h = -d1.length_squared() + diff.dot(d2);
            let speed2 = d1.length_squared().max(1e-30);
            if g.abs() < 1e-14 * speed2 {
                break;
            }
            let mut step = if h.abs() > 1e-30 { g / h } else { g / speed2 };
            let max_step = 0.25 * (hi - lo);
            step = step.clamp(-max_step, max_step);
            let mut u_new = (u - step).clamp(lo, hi);
            let mut g_new = residual(u_new);
            let mut backtracks = 0;
            while g_new.abs() > g.abs() && backtracks < 6 {
                u_new = 0.5 * (u + u_new);
                g_new = residual(u_new);
                backtracks += 1;
            }
            if (u_new - u).abs() < 1e-15 * (hi - lo) {
                u = u_new;
                break;
            }
            u = u_new;
            g = g_new;
        }
        u
    }
}

fn derivative_spline(pts: &[Vec3], knots: &[f64], degree: usize) -> (Vec<Vec3>, Vec<f64>) {
    let mut next = Vec::with_capacity(pts.len() - 1);
    for i in 0..pts.len() - 1 {
        let denom = knots[i + degree + 1] - knots[i + 1];
        if denom > 0.0 {
            next.push((pts[i + 1] - pts[i]) * (degree as f64 / denom));
        } else {
            next.push(Vec3::ZERO);
        }
    }
    (next, knots[1..knots.len() - 1].to_vec())
}

fn eval_bspline(pts: &[Vec3], knots: &[f64], degree: usize, u: f64) -> Vec3 {
    let n = pts.len();
    let lo = knots[degree];
    let hi = knots[n];
    let u = u.clamp(lo, hi);
    let mut k = degree;
    if u >= knots[n] {
        k = n - 1;
        while knots[k + 1] <= knots[k] {
            k -= 1;
        }
    } else {
        while k + 1 < knots.len() && knots[k + 1] <= u {
            k += 1;
        }
    }
    let p = degree;
    let mut d: Vec<Vec3> = (0..=p).map(|j| pts[k - p + j]).collect();
    for r in 1..=p {
        for j in (r..=p).rev() {
            let i = k - p + j;
            let denom = knots[i + p - r + 1] - knots[i];
            let alpha = if denom > 0.0 {
                (u - knots[i]) / denom
            } else {
                0.0
            };
            d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
        }
    }
    d[p]
}

fn clamped_uniform_knots(n_points: usize, degree: usize) -> Result<Vec<f64>> {
    if n_points < degree + 1 {
        return Err(Error::InvalidGeometry(format!(
            "need at least {} control points for degree {degree}",
            degree + 1
        )));
    }
    let interior = n_points - degree;
    let mut knots = Vec::with_capacity(n_points + degree + 1);
    for _ in 0..=degree {
        knots.push(0.0);
    }
    for i in 1..interior {
        knots.push(i as f64 / interior as f64);
    }
    for _ in 0..=degree {
        knots.push(1.0);
    }
    Ok(knots)
}

/// Build rotation-minimizing frames along `curve` with the double-reflection
/// method. The root normal defaults to the axis least aligned with the
/// initial tangent; pass `root_normal` to override (it is projected
/// perpendicular to the initial tangent).
pub fn build_reference_frames(curve: &YarnCurve, samples_per_span: usize) -> Result<FrameSequence> {
    build_reference_frames_with_normal(curve, samples_per_span, None)
}

pub fn build_reference_frames_with_normal(
    curve: &YarnCurve,
    samples_per_span: usize,
    root_normal: Option<Vec3>,
) -> Result<FrameSequence> {
    if samples_per_span < 2 {
        return Err(Error::InvalidGeometry(
            "samples_per_span must be >= 2".into(),
        ));
    }
    let mut params = Vec::new();
    for w in curve.span_params.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::DegenerateCurve(format!(
                "zero-length knot span at u = {}",
                w[0]
            )));
        }
        for s in 0..samples_per_span {
            params.push(w[0] + (w[1] - w[0]) * s as f64 / samples_per_span as f64);
        }
    }
    params.push(*curve.span_params.last().unwrap());

    let mut positions = Vec::with_capacity(params.len());
    let mut tangents = Vec::with_capacity(params.len());
    let mut arcs = Vec::with_capacity(params.len());
    for &u in &params {
        let d = curve.derivative_at_param(u);
        let len = d.length();
        if len < 1e-12 {
            return Err(Error::DegenerateCurve(format!(
                "vanishing tangent at parameter {u} (coincident control points?)"
            )));
        }
        positions.push(curve.point_at_param(u));
        tangents.push(d / len);
        arcs.push(curve.arclength_of_param(u));
    }

    let t0 = tangents[0];
    let n0 = match root_normal {
        Some(n) => {
            let proj = n - t0 * n.dot(t0);
            if proj.length() < 1e-9 {
                return Err(Error::InvalidGeometry(
                    "root normal is parallel to the initial tangent".into(),
                ));
            }
            proj.normalize()
        }
        None => perpendicular_smallest_axis(t0),
    };

    let mut samples = Vec::with_capacity(params.len());
    samples.push(FrameSample {
        v: arcs[0],
        position: positions[0],
        tangent: t0,
        ref_normal: n0,
    });
    let mut normal = n0;
    for i in 1..params.len() {
        // Double reflection (Wang et al. 2008).
        let v1 = positions[i] - positions[i - 1];
        let c1 = v1.length_squared();
        let (r_l, t_l) = if c1 > 1e-28 {
            (
                normal - v1 * (2.0 / c1) * v1.dot(normal),
                tangents[i - 1] - v1 * (2.0 / c1) * v1.dot(tangents[i - 1]),
            )
        } else {
            (normal, tangents[i - 1])
        };
        let v2 = tangents[i] - t_l;
        let c2 = v2.length_squared();
        let mut n_next = if c2 > 1e-28 {
            r_l - v2 * (2.0 / c2) * v2.dot(r_l)
        } else {
            r_l
        };
        n_next = (n_next - tangents[i] * n_next.dot(tangents[i])).normalize();
        normal = n_next;
        if arcs[i] > samples.last().unwrap().v {
            samples.push(FrameSample {
                v: arcs[i],
                position: positions[i],
                tangent: tangents[i],
                ref_normal: normal,
            });
        }
    }
    if samples.len() < 2 {
        return Err(Error::DegenerateCurve(
            "curve too short to carry a frame field".into(),
        ));
    }
    Ok(FrameSequence { samples })
}

/// Intersect a ray with the swept yarn cylinder. Returns the nearest
/// crossing in `[t_min, t_max]` together with the exit parameter of the same
/// crossing interval.
pub fn intersect_yarn(ray: &Ray, curve: &YarnCurve, frames: &FrameSequence) -> Option<YarnHit> {
    // Gather candidate (t0, t1, u_mid) intervals from the tessellation.
    let mut intervals: Vec<(f64, f64, f64)> = Vec::new();
    for chunk in &curve.chunks {
        if !ray_aabb(ray, chunk.lo, chunk.hi) {
            continue;
        }
        for seg in &curve.segments[chunk.start..chunk.end] {
            if let Some((t0, t1)) = ray_segment_cylinder(ray, seg, curve.radius) {
                intervals.push((t0, t1, 0.5 * (seg.u0 + seg.u1)));
            }
        }
    }
    if intervals.is_empty() {
        return None;
    }
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Merge abutting intervals (miter joints tile the tube, so adjacent
    // segment crossings touch up to floating-point slack).
    let scale = intervals
        .iter()
        .map(|i| i.1.abs())
        .fold(curve.radius, f64::max);
    let join_eps = 1e-7 * scale + 1e-12;
    let mut merged: Vec<(f64, f64, f64)> = Vec::new();
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv.0 <= last.1 + join_eps => {
                if iv.1 > last.1 {
                    last.1 = iv.1;
                }
            }
            _ => merged.push(iv),
        }
    }

    for (t0_raw, t1_raw, u_seed) in merged {
        if t1_raw < ray.t_min || t0_raw > ray.t_max {
            continue;
        }
        // Polish both ends against the true swept surface; the tessellation
        // only nominates candidates and may produce grazing false positives.
        let Some((t0, t1, u0)) = solve_interval(ray, curve, t0_raw, t1_raw, u_seed) else {
            continue;
        };
        if t1 < ray.t_min || t0 > ray.t_max {
            continue;
        }
        let t_enter = t0.max(ray.t_min);
        if t_enter > ray.t_max {
            continue;
        }
        let point = ray.at(t0.max(ray.t_min));
        let u_closest = curve.closest_param(point, u0);
        let v_yarn = curve.arclength_of_param(u_closest);
        let center = curve.point_at_param(u_closest);
        let tangent = curve.derivative_at_param(u_closest).normalize();
        let ref_normal = frames.normal_at(v_yarn, tangent);
        let radial = point - center;
        let radial = (radial - tangent * radial.dot(tangent)).normalize();
        let binormal = tangent.cross(ref_normal);
        let u_yarn = wrap_angle(radial.dot(binormal).atan2(radial.dot(ref_normal)));
        return Some(YarnHit {
            t_enter,
            t_exit: t1.min(ray.t_max),
            point,
            v_yarn,
            u_yarn,
            tangent,
            surface_normal: radial,
        });
    }
    None
}

fn ray_aabb(ray: &Ray, lo: Vec3, hi: Vec3) -> bool {
    let mut t0 = ray.t_min;
    let mut t1 = ray.t_max;
    for axis in 0..3 {
        let inv = 1.0 / ray.direction[axis];
        let mut near = (lo[axis] - ray.origin[axis]) * inv;
        let mut far = (hi[axis] - ray.origin[axis]) * inv;
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Intersect a ray with the finite cylinder around one tessellation segment,
/// clipped by its miter planes. Returns the ray-parameter interval inside.
fn ray_segment_cylinder(ray: &Ray, seg: &Segment, radius: f64) -> Option<(f64, f64)> {
    let axis = seg.b - seg.a;
    let axis_len = axis.length();
    if axis_len < 1e-14 {
        return None;
    }
    let axis = axis / axis_len;

    let oc = ray.origin - seg.a;
    let d_perp = ray.direction - axis * ray.direction.dot(axis);
    let o_perp = oc - axis * oc.dot(axis);
    let a = d_perp.length_squared();
    let b = 2.0 * d_perp.dot(o_perp);
    let c = o_perp.length_squared() - radius * radius;

    let (mut t0, mut t1) = if a < 1e-16 {
        // Ray parallel to the axis: inside or outside for all t.
        if c > 0.0 {
            return None;
        }
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a))
    };

    // Clip by the miter planes: keep (x - a)·m0 >= 0 and (x - b)·m1 <= 0.
    for (p, m, keep_positive) in [(seg.a, seg.m0, true), (seg.b, seg.m1, false)] {
        let denom = ray.direction.dot(m);
        let num = (p - ray.origin).dot(m);
        if denom.abs() < 1e-16 {
            let side = (ray.origin - p).dot(m);
            if (keep_positive && side < 0.0) || (!keep_positive && side > 0.0) {
                return None;
            }
            continue;
        }
        let t_plane = num / denom;
        let enters_positive = denom > 0.0;
        if enters_positive == keep_positive {
            t0 = t0.max(t_plane);
        } else {
            t1 = t1.min(t_plane);
        }
    }
    if t0 > t1 {
        return None;
    }
    Some((t0, t1))
}

/// Signed distance from the ray point at `t` to the swept surface
/// (`dist(ray(t), centerline) - R`), together with the closest spline
/// parameter.
fn surface_excess(ray: &Ray, curve: &YarnCurve, t: f64, u_seed: f64) -> (f64, f64) {
    let p = ray.at(t);
    let u = curve.closest_param(p, u_seed);
    let dist = (p - curve.point_at_param(u)).length();
    (dist - curve.radius, u)
}

/// Polish a tessellated candidate interval against the true swept surface.
/// Returns `(t_enter, t_exit, u_at_enter)` or `None` when the candidate is a
/// grazing false positive (the true tube is never reached).
fn solve_interval(
    ray: &Ray,
    curve: &YarnCurve,
    t0_raw: f64,
    t1_raw: f64,
    u_seed: f64,
) -> Option<(f64, f64, f64)> {
    let tol = 1e-10 * curve.radius;
    let t_mid = 0.5 * (t0_raw + t1_raw);
    let (f_mid, u_mid) = surface_excess(ray, curve, t_mid, u_seed);

    if f_mid < -tol {
        // Interior confirmed: bracket both crossings.
        let pad = 0.5 * (t1_raw - t0_raw) + 0.1 * curve.radius;
        let enter = bracket_root(ray, curve, t_mid, -1.0, pad, u_mid)?;
        let exit = bracket_root(ray, curve, t_mid, 1.0, pad, u_mid)?;
        Some((enter.0, exit.0, enter.1))
    } else {
        // Tangential candidate: minimize the excess along the ray; accept
        // only if the surface is actually reached.
        let mut t = t_mid;
        let mut u = u_mid;
        let mut best = (f_mid, t, u);
        // Golden-section-ish scan over an expanded interval.
        let lo = t0_raw - 0.25 * (t1_raw - t0_raw) - 0.05 * curve.radius;
        let hi = t1_raw + 0.25 * (t1_raw - t0_raw) + 0.05 * curve.radius;
        for k in 0..=16 {
            let tt = lo + (hi - lo) * k as f64 / 16.0;
            let (f, uu) = surface_excess(ray, curve, tt, u);
            if f < best.0 {
                best = (f, tt, uu);
            }
        }
        if best.0 > tol * 10.0 {
            return None;
        }
        t = best.1;
        u = best.2;
        if best.0 < -tol {
            let pad = 0.5 * (hi - lo);
            let enter = bracket_root(ray, curve, t, -1.0, pad, u)?;
            let exit = bracket_root(ray, curve, t, 1.0, pad, u)?;
            return Some((enter.0, exit.0, enter.1));
        }
        // Touching contact.
        Some((t, t, u))
    }
}

/// From an interior point `t_in` (excess < 0), walk in `dir` (±1) until the
/// excess turns positive, then bisection/Newton to the crossing.
fn bracket_root(
    ray: &Ray,
    curve: &YarnCurve,
    t_in: f64,
    dir: f64,
    pad: f64,
    u_seed: f64,
) -> Option<(f64, f64)> {
    let mut step = pad.max(1e-6 * curve.radius);
    let mut t_neg = t_in; // excess < 0 side
    let mut u = u_seed;
    let mut t_pos = None;
    for _ in 0..24 {
        let t_try = t_neg + dir * step;
        let (f, uu) = surface_excess(ray, curve, t_try, u);
        if f >= 0.0 {
            t_pos = Some(t_try);
            u = uu;
            break;
        }
        t_neg = t_try;
        u = uu;
        step *= 2.0;
    }
    let mut t_pos = t_pos?;
    // Bisection with a Newton accelerant.
    let tol = 1e-12 * curve.radius.max(1e-9);
    let mut t = 0.5 * (t_neg + t_pos);
    for _ in 0..60 {
        let (f, uu) = surface_excess(ray, curve, t, u);
        u = uu;
        if f.abs() < tol || (t_pos - t_neg).abs() < 1e-16 * (1.0 + t.abs()) {
            return Some((t, u));
        }
        if f > 0.0 {
            t_pos = t;
        } else {
            t_neg = t;
        }
        // Newton step from the current point; fall back to bisection when it
        // leaves the bracket.
        let p = ray.at(t);
        let c = curve.point_at_param(u);
        let d = (p - c).length();
        let df = if d > 1e-14 {
            ((p - c) / d).dot(ray.direction)
        } else {
            0.0
        };
        let t_newton = if df.abs() > 1e-12 { t - f / df } else { f64::NAN };
        t = if t_newton.is_finite()
            && t_newton > t_neg.min(t_pos)
            && t_newton < t_neg.max(t_pos)
        {
            t_newton
        } else {
            0.5 * (t_neg + t_pos)
        };
    }
    Some((t, u))
}

/// Parse the plaintext curve format:
///
/// ```text
/// yarns <count>
/// yarn <n_points> <radius>
/// x y z
/// ...
/// ```
pub fn parse_curve_file(path: &std::path::Path) -> Result<Vec<YarnCurve>> {
    let text = std::fs::read_to_string(path)?;
    parse_curves(&text).map_err(|(line, msg)| Error::CurveFile {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

pub fn parse_curves(text: &str) -> std::result::Result<Vec<YarnCurve>, (usize, String)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (lno, header) = lines.next().ok_or((0, "empty curve file".to_string()))?;
    let count: usize = match header.strip_prefix("yarns") {
        Some(rest) => rest
            .trim()
            .parse()
            .map_err(|_| (lno, format!("bad yarn count in header: {header:?}")))?,
        None => return Err((lno, format!("expected `yarns <count>`, got {header:?}"))),
    };

    let mut curves = Vec::with_capacity(count);
    for _ in 0..count {
        let (lno, decl) = lines
            .next()
            .ok_or((0, "unexpected end of file: missing `yarn` line".to_string()))?;
        let parts: Vec<&str> = decl.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "yarn" {
            return Err((lno, format!("expected `yarn <n_points> <radius>`, got {decl:?}")));
        }
        let n_points: usize = parts[1]
            .parse()
            .map_err(|_| (lno, format!("bad point count {:?}", parts[1])))?;
        let radius: f64 = parts[2]
            .parse()
            .map_err(|_| (lno, format!("bad radius {:?}", parts[2])))?;
        let mut pts = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            let (lno, coords) = lines
                .next()
                .ok_or((0, "unexpected end of file: missing point line".to_string()))?;
            let xyz: Vec<f64> = coords
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| (lno, format!("bad point {coords:?}")))?;
            if xyz.len() != 3 {
                return Err((lno, format!("expected 3 coordinates, got {}", xyz.len())));
            }
            pts.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
        }
        curves.push(YarnCurve::new(pts, radius).map_err(|e| (lno, e.to_string()))?);
    }
    Ok(curves)
}

pub fn write_curve_file(path: &std::path::Path, curves: &[YarnCurve]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "yarns {}", curves.len())?;
    for c in curves {
        writeln!(f, "yarn {} {}", c.control_points().len(), c.radius())?;
        for p in c.control_points() {
            writeln!(f, "{} {} {}", p.x, p.y, p.z)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::angle_between;

    pub(crate) fn straight_yarn(radius: f64) -> YarnCurve {
        YarnCurve::new(
            vec![
                Vec3::new(-2.0, 0.0, 0.0),
                Vec3::new(-0.7, 0.0, 0.0),
                Vec3::new(0.7, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
            ],
            radius,
        )
        .unwrap()
    }

    #[test]
    fn eval_straight_segment_midpoint() {
        let c = YarnCurve::new(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)], 0.1).unwrap();
        let s = c.eval_centerline(0.5);
        assert!((s.point - Vec3::new(0.5, 0.0, 0.0)).length() < 1e-12);
        assert!((s.tangent - Vec3::X).length() < 1e-12);
        assert!(!s.clamped);
    }

    #[test]
    fn eval_endpoint_interpolation() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 2.0, 0.0),
            Vec3::new(3.0, 2.0, 1.0),
            Vec3::new(4.0, 0.0, 0.0),
        ];
        let c = YarnCurve::new(pts.clone(), 0.1).unwrap();
        let s0 = c.eval_centerline(0.0);
        assert!((s0.point - pts[0]).length() < 1e-12, "clamped knots interpolate the first point");
        let s1 = c.eval_centerline(c.total_length());
        assert!((s1.point - pts[3]).length() < 1e-10);
    }

    #[test]
    fn eval_out_of_range_clamps_with_flag() {
        let c = straight_yarn(0.1);
        let s = c.eval_centerline(c.total_length() + 1.0);
        assert!(s.clamped);
        let end = c.eval_centerline(c.total_length());
        assert!((s.point - end.point).length() < 1e-12);
    }

    #[test]
    fn arclength_matches_dense_polyline_oracle() {
        // Independent oracle: 10^6-segment polyline arclength.
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 2.0, -0.5),
            Vec3::new(3.0, 2.5, 1.0),
            Vec3::new(4.0, 0.0, 0.5),
            Vec3::new(5.5, -1.0, 0.0),
        ];
        let c = YarnCurve::new(pts, 0.1).unwrap();
        let n = 1_000_000usize;
        let (lo, hi) = c.param_domain();
        let mut poly_len = 0.0;
        let mut prev = c.point_at_param(lo);
        let mut oracle_at_frac = 0.0; // arclength at 30% of total, by the polyline
        let total_est = {
            let mut acc = 0.0;
            let mut prev2 = c.point_at_param(lo);
            for i in 1..=n {
                let u = lo + (hi - lo) * i as f64 / n as f64;
                let p = c.point_at_param(u);
                acc += (p - prev2).length();
                prev2 = p;
            }
            acc
        };
        let target = 0.3 * total_est;
        let mut u_at_target = lo;
        for i in 1..=n {
            let u = lo + (hi - lo) * i as f64 / n as f64;
            let p = c.point_at_param(u);
            poly_len += (p - prev).length();
            prev = p;
            if poly_len <= target {
                u_at_target = u;
                oracle_at_frac = poly_len;
            }
        }
        let total = c.total_length();
        assert!(
            (total - poly_len).abs() < 1e-4 * poly_len,
            "table total {total} vs polyline {poly_len}"
        );
        // Point at v = 0.3 L matches the polyline reparameterization.
        let s = c.eval_centerline(oracle_at_frac);
        let oracle_pt = c.point_at_param(u_at_target);
        assert!(
            (s.point - oracle_pt).length() < 1e-4 * total,
            "reparameterization error {}",
            (s.point - oracle_pt).length()
        );
    }

    #[test]
    fn rmf_straight_curve_constant_normal() {
        let c = straight_yarn(0.1);
        let frames = build_reference_frames_with_normal(&c, 8, Some(Vec3::Z)).unwrap();
        for s in frames.samples() {
            assert!((s.ref_normal - Vec3::Z).length() < 1e-12);
            assert!((s.tangent - Vec3::X).length() < 1e-12);
        }
    }

    #[test]
    fn rmf_quarter_circle_small_steps() {
        // Quarter circle in the xy-plane, approximated by a cubic B-spline.
        let n_cp = 12;
        let pts: Vec<Vec3> = (0..n_cp)
            .map(|i| {
                let a = std::f64::consts::FRAC_PI_2 * i as f64 / (n_cp - 1) as f64;
                Vec3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        let c = YarnCurve::new(pts, 0.05).unwrap();
        let frames = build_reference_frames(&c, 8).unwrap();
        // Oracle: dense double-reflection at 4096 samples per span.
        let dense = build_reference_frames(&c, 4096).unwrap();
        let mut max_step = 0.0f64;
        for w in frames.samples().windows(2) {
            max_step = max_step.max(angle_between(w[0].ref_normal, w[1].ref_normal));
        }
        assert!(
            max_step.to_degrees() < 3.0,
            "max consecutive normal rotation {}°",
            max_step.to_degrees()
        );
        // Terminal normals agree with the dense oracle.
        let coarse_end = frames.samples().last().unwrap().ref_normal;
        let dense_end = dense.samples().last().unwrap().ref_normal;
        assert!(
            angle_between(coarse_end, dense_end).to_degrees() < 0.1,
            "end normal deviates {}°",
            angle_between(coarse_end, dense_end).to_degrees()
        );
    }

    #[test]
    fn rmf_helix_matches_parallel_transport_oracle() {
        // Helix centerline; RMF must match fine-step parallel transport.
        let n_cp = 40;
        let pts: Vec<Vec3> = (0..n_cp)
            .map(|i| {
                let t = 4.0 * std::f64::consts::PI * i as f64 / (n_cp - 1) as f64;
                Vec3::new(t.cos(), t.sin(), 0.3 * t)
            })
            .collect();
        let c = YarnCurve::new(pts, 0.05).unwrap();
        let frames = build_reference_frames(&c, 128).unwrap();

        // Parallel-transport oracle: rotate the normal by the minimal rotation
        // aligning consecutive tangents, integrated at fine steps.
        let fine = 20_000usize;
        let (lo, hi) = c.param_domain();
        let mut normal = frames.samples()[0].ref_normal;
        let mut prev_t = c.derivative_at_param(lo).normalize();
        for i in 1..=fine {
            let u = lo + (hi - lo) * i as f64 / fine as f64;
            let t = c.derivative_at_param(u).normalize();
            let axis = prev_t.cross(t);
            let s = axis.length();
            if s > 1e-15 {
                let angle = s.asin().min(angle_between(prev_t, t));
                let axis = axis / s;
                // Rodrigues rotation.
                normal = normal * angle.cos()
                    + axis.cross(normal) * angle.sin()
                    + axis * axis.dot(normal) * (1.0 - angle.cos());
            }
            normal = (normal - t * normal.dot(t)).normalize();
            prev_t = t;
        }
        let rmf_end = frames.samples().last().unwrap().ref_normal;
        let err = angle_between(rmf_end, normal).to_degrees();
        assert!(err < 0.5, "total twist error vs parallel transport: {err}°");
    }

    #[test]
    fn rmf_rejects_degenerate_curve() {
        let c = YarnCurve::new(
            vec![Vec3::ZERO, Vec3::ZERO, Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)],
            0.1,
        );
        // Either construction or framing must reject it.
        match c {
            Err(_) => {}
            Ok(c) => {
                assert!(build_reference_frames(&c, 8).is_err());
            }
        }
    }

    #[test]
    fn intersect_axis_aligned_straight_yarn() {
        let c = straight_yarn(0.1);
        let frames = build_reference_frames_with_normal(&c, 8, Some(Vec3::Z)).unwrap();
        let ray = Ray::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -1.0));
        let hit = intersect_yarn(&ray, &c, &frames).expect("hit");
        assert!((hit.t_enter - 0.9).abs() < 1e-9, "t_enter {}", hit.t_enter);
        assert!((hit.t_exit - 1.1).abs() < 1e-9, "t_exit {}", hit.t_exit);
        assert!(hit.u_yarn < 1e-6 || hit.u_yarn > crate::math::TWO_PI - 1e-6);
        assert!((hit.v_yarn - 2.0).abs() < 1e-6, "v_yarn {}", hit.v_yarn);
        assert!((hit.surface_normal - Vec3::Z).length() < 1e-9);
    }

    #[test]
    fn intersect_miss_outside_radius() {
        let c = straight_yarn(0.1);
        let frames = build_reference_frames(&c, 8).unwrap();
        let ray = Ray::new(Vec3::new(0.0, 0.2, 1.0), Vec3::new(0.0, 0.0, -1.0));
        assert!(intersect_yarn(&ray, &c, &frames).is_none());
    }

    #[test]
    fn intersect_oblique_matches_infinite_cylinder_quadratic() {
        let c = straight_yarn(0.1);
        let frames = build_reference_frames(&c, 8).unwrap();
        let dir = Vec3::new(1.0, 0.0, -1.0).normalize();
        let ray = Ray::new(Vec3::new(-0.5, 0.03, 1.0), dir);
        let hit = intersect_yarn(&ray, &c, &frames).expect("hit");

        // Analytic oracle: infinite cylinder about the x-axis, radius 0.1.
        let (oy, oz) = (ray.origin.y, ray.origin.z);
        let (dy, dz) = (dir.y, dir.z);
        let a = dy * dy + dz * dz;
        let b = 2.0 * (oy * dy + oz * dz);
        let cc = oy * oy + oz * oz - 0.01;
        let disc = (b * b - 4.0 * a * cc).sqrt();
        let t0 = (-b - disc) / (2.0 * a);
        let t1 = (-b + disc) / (2.0 * a);
        assert!((hit.t_enter - t0).abs() < 1e-6, "{} vs {}", hit.t_enter, t0);
        assert!((hit.t_exit - t1).abs() < 1e-6, "{} vs {}", hit.t_exit, t1);
    }

    #[test]
    fn hit_point_reconstruction_from_uv() {
        // Invariant: (v_yarn, u_yarn, R, frames) reproduce the hit point.
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.8, 0.3),
            Vec3::new(2.0, 1.0, -0.4),
            Vec3::new(3.0, 0.2, 0.1),
            Vec3::new(4.0, -0.5, 0.6),
        ];
        let c = YarnCurve::new(pts, 0.12).unwrap();
        let frames = build_reference_frames(&c, 16).unwrap();
        let mut tested = 0;
        for i in 0..200 {
            let s = i as f64 / 200.0;
            let origin = Vec3::new(0.3 + 3.4 * s, -2.0, 2.0);
            let target = Vec3::new(0.3 + 3.4 * s, 0.5, 0.0);
            let ray = Ray::new(origin, (target - origin).normalize());
            if let Some(hit) = intersect_yarn(&ray, &c, &frames) {
                let sample = c.eval_centerline(hit.v_yarn);
                let center = sample.point;
                let tangent = sample.tangent;
                let normal = frames.normal_at(hit.v_yarn, tangent);
                let binormal = tangent.cross(normal);
                let rec = center
                    + (normal * hit.u_yarn.cos() + binormal * hit.u_yarn.sin()) * c.radius();
                let err = (rec - hit.point).length();
                assert!(
                    err < 1e-5 * c.radius(),
                    "reconstruction error {err} at i={i}"
                );
                // And the distance invariant.
                let d = (hit.point - center).length();
                assert!((d - c.radius()).abs() < 1e-5 * c.radius());
                tested += 1;
            }
        }
        assert!(tested > 100, "only {tested} rays hit");
    }

    #[test]
    fn t_enter_is_minimal_crossing_marching_oracle() {
        // Segment-marching oracle: march the ray densely, find the first
        // parameter where the distance to the centerline drops below R.
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 1.2, 0.0),
            Vec3::new(2.0, -0.8, 0.0),
            Vec3::new(3.0, 0.6, 0.0),
        ];
        let c = YarnCurve::new(pts, 0.15).unwrap();
        let frames = build_reference_frames(&c, 16).unwrap();
        let dist_to_curve = |p: Vec3| -> f64 {
            let mut best = f64::INFINITY;
            for j in 0..=12 {
                let uu = c.closest_param(p, j as f64 / 12.0);
                best = best.min((p - c.point_at_param(uu)).length());
            }
            best
        };
        for i in 0..24 {
            let s = i as f64 / 24.0;
            let ray = Ray::new(
                Vec3::new(3.0 * s, -2.5, 0.05),
                Vec3::new(0.02 * (i % 5) as f64, 1.0, -0.01).normalize(),
            );
            let hit = intersect_yarn(&ray, &c, &frames);
            // Brute-force march.
            let steps = 12_000;
            let dt = 6.0 / steps as f64;
            let mut t_march = None;
            for k in 0..steps {
                if dist_to_curve(ray.at(k as f64 * dt)) <= c.radius() {
                    t_march = Some(k as f64 * dt);
                    break;
                }
            }
            match (hit, t_march) {
                (Some(h), Some(tm)) => {
                    assert!(
                        (h.t_enter - tm).abs() < 2.0 * dt + 1e-3,
                        "t_enter {} vs march {}",
                        h.t_enter,
                        tm
                    );
                }
                (None, None) => {}
                (Some(h), None) => {
                    // A grazing hit the march can step over is acceptable if
                    // shallower than one march step.
                    assert!(
                        dist_to_curve(ray.at(h.t_enter)) <= c.radius() + 1e-9,
                        "tracer hit at {} is not on the tube",
                        h.t_enter
                    );
                }
                (None, Some(tm)) => panic!("march hit at {tm} but tracer missed"),
            }
        }
    }

    #[test]
    fn u_yarn_invariant_under_rigid_rotation() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.5, 0.2),
            Vec3::new(2.0, 0.3, -0.3),
            Vec3::new(3.0, -0.2, 0.1),
        ];
        let c = YarnCurve::new(pts.clone(), 0.1).unwrap();
        let frames = build_reference_frames(&c, 16).unwrap();
        let ray = Ray::new(Vec3::new(1.5, -1.5, 0.8), Vec3::new(0.0, 1.0, -0.45).normalize());
        let hit = intersect_yarn(&ray, &c, &frames).expect("hit");

        // Rotate scene + ray by 40° about a skew axis, then re-root the frame
        // with the rotated root normal.
        let axis = Vec3::new(0.3, 0.8, 0.5).normalize();
        let angle = 40.0f64.to_radians();
        let rot = |p: Vec3| {
            p * angle.cos() + axis.cross(p) * angle.sin() + axis * axis.dot(p) * (1.0 - angle.cos())
        };
        let pts_r: Vec<Vec3> = pts.iter().map(|&p| rot(p)).collect();
        let c_r = YarnCurve::new(pts_r, 0.1).unwrap();
        let root_n = frames.samples()[0].ref_normal;
        let frames_r = build_reference_frames_with_normal(&c_r, 16, Some(rot(root_n))).unwrap();
        let ray_r = Ray::new(rot(ray.origin), rot(ray.direction));
        let hit_r = intersect_yarn(&ray_r, &c_r, &frames_r).expect("hit");
        assert!(
            crate::math::angle_distance(hit.u_yarn, hit_r.u_yarn) < 1e-6,
            "u_yarn {} vs rotated {}",
            hit.u_yarn,
            hit_r.u_yarn
        );
        assert!((hit.v_yarn - hit_r.v_yarn).abs() < 1e-6);
    }

    #[test]
    fn curve_file_roundtrip_and_errors() {
        let text = "yarns 1\nyarn 4 0.1\n0 0 0\n1 0 0\n2 0.5 0\n3 0.5 0\n";
        let curves = parse_curves(text).unwrap();
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].control_points().len(), 4);
        assert!((curves[0].radius() - 0.1).abs() < 1e-12);

        let bad = "yarns 1\nyarn 4 0.1\n0 0 0\n1 0\n2 0.5 0\n3 0.5 0\n";
        let err = parse_curves(bad).unwrap_err();
        assert_eq!(err.0, 4, "error should carry the line number");
    }
}
