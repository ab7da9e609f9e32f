//! Implicit ply geometry.
//!
//! A yarn hit defines a cutting plane that contains the incident ray; the
//! yarn cylinder meets it in an ellipse. Each ply centerline is a helix
//! around the yarn axis, and a fixed-point iteration walks the helix until
//! its center lies in the cutting plane. The converged centers become 2D
//! disks in the plane, traced against the in-plane ray to select the hit
//! ply, count crossed plies, and emit the ply-local frame.

use crate::curve::{FrameSequence, Ray, YarnCurve, YarnHit};
use crate::error::{Error, Result};
use crate::math::{orthogonalize, wrap_angle, Vec3};

/// Rays closer than `asin(ε)` to the yarn tangent use the circular fallback
/// section; the ellipse eccentricity is clamped at `R / ε`.
pub const GRAZING_EPSILON: f64 = 0.05;

/// Maximum fixed-point iterations before falling back to the circular
/// section answer.
pub const NEWTON_MAX_ITERS: usize = 10;

/// Helix parameters of the plies inside one yarn.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlyLayout {
    /// Number of plies (1 to 12).
    pub n_plies: usize,
    /// Distance of ply centers from the yarn axis.
    pub orbit_radius: f64,
    /// Ply cross-section radius.
    pub ply_radius: f64,
    /// Signed twist in radians per unit yarn arclength (sign selects S/Z).
    pub twist_rate: f64,
}

impl PlyLayout {
    pub fn validate(&self, yarn_radius: f64) -> Result<()> {
        if self.n_plies < 1 || self.n_plies > 12 {
            return Err(Error::InvalidGeometry(format!(
                "n_plies must be in [1, 12], got {}",
                self.n_plies
            )));
        }
        if !(self.ply_radius > 0.0) {
            return Err(Error::InvalidGeometry("ply_radius must be > 0".into()));
        }
        if self.orbit_radius < 0.0 {
            return Err(Error::InvalidGeometry("orbit_radius must be >= 0".into()));
        }
        if self.orbit_radius + self.ply_radius > yarn_radius * (1.0 + 1e-9) {
            return Err(Error::InvalidGeometry(format!(
                "plies must fit in the yarn: orbit {} + ply radius {} > yarn radius {}",
                self.orbit_radius, self.ply_radius, yarn_radius
            )));
        }
        Ok(())
    }

    /// Azimuthal phase offset of ply `j`.
    pub fn phase_offset(&self, j: usize) -> f64 {
        crate::math::TWO_PI * j as f64 / self.n_plies as f64
    }

    /// Ply arclength per unit yarn arclength for a straight yarn.
    pub fn helix_arc_scale(&self) -> f64 {
        (1.0 + (self.orbit_radius * self.twist_rate).powi(2)).sqrt()
    }
}

/// The elliptical cross-section cut by a plane that contains the incident
/// ray.
#[derive(Debug, Clone, Copy)]
pub struct EllipseSection {
    pub center: Vec3,
    /// Unit plane normal (the component of the yarn tangent perpendicular to
    /// the ray; equals the tangent when the ray is perpendicular).
    pub plane_normal: Vec3,
    /// In-plane unit direction of the semi-major axis.
    pub basis_major: Vec3,
    /// In-plane unit direction of the semi-minor axis (length `R`).
    pub basis_minor: Vec3,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Set when the ray was close enough to the tangent that the
    /// eccentricity was clamped; tracing then falls back to the circular
    /// section.
    pub grazing: bool,
}

/// Build the cutting section for a yarn hit. The plane contains the ray; for
/// rays perpendicular to the yarn tangent it degenerates to the familiar
/// perpendicular circular cross-section.
pub fn make_ellipse_section(hit: &YarnHit, ray: &Ray, curve: &YarnCurve) -> EllipseSection {
    let radius = curve.radius();
    let t = hit.tangent;
    let d = ray.direction;
    let t_perp = t - d * t.dot(d);
    let sin_theta = t_perp.length();
    let axis_point = hit.point - hit.surface_normal * radius;

    if sin_theta < GRAZING_EPSILON {
        // Grazing: clamped eccentricity, flagged; the perpendicular circle
        // at the hit is used for tracing.
        let plane_normal = if sin_theta > 1e-12 {
            t_perp / sin_theta
        } else {
            t
        };
        let basis_minor = safe_minor_axis(plane_normal, t, d);
        let basis_major = basis_minor.cross(plane_normal);
        return EllipseSection {
            center: axis_point,
            plane_normal,
            basis_major,
            basis_minor,
            semi_major: radius / GRAZING_EPSILON,
            semi_minor: radius,
            grazing: true,
        };
    }

    let m = t_perp / sin_theta;
    // Intersect the local cylinder axis with the plane through the ray.
    let mu = m.dot(t);
    let s = (ray.origin - axis_point).dot(m) / mu;
    let center = axis_point + t * s;
    let basis_minor = safe_minor_axis(m, t, d);
    let basis_major = basis_minor.cross(m);
    EllipseSection {
        center,
        plane_normal: m,
        basis_major,
        basis_minor,
        semi_major: radius / mu,
        semi_minor: radius,
        grazing: false,
    }
}

fn safe_minor_axis(m: Vec3, t: Vec3, ray_dir: Vec3) -> Vec3 {
    let cross = m.cross(t);
    let len = cross.length();
    if len > 1e-9 {
        cross / len
    } else {
        // Perpendicular section: any in-plane axis works; pick the one
        // orthogonal to the ray for a stable 2D frame.
        orthogonalize(m.cross(ray_dir), m)
    }
}

/// Ply helix center at yarn arclength `v`:
/// `c_j(v) = centerline(v) + R_p (cos(ω v + φ_j) e1 + sin(ω v + φ_j) e2)`
/// with `(e1, e2)` the RMF normal/binormal.
pub fn ply_center_at(
    layout: &PlyLayout,
    curve: &YarnCurve,
    frames: &FrameSequence,
    v: f64,
    j: usize,
) -> Vec3 {
    let sample = curve.eval_centerline(v);
    let e1 = frames.normal_at(v, sample.tangent);
    let e2 = sample.tangent.cross(e1);
    let phase = layout.twist_rate * v + layout.phase_offset(j);
    sample.point + (e1 * phase.cos() + e2 * phase.sin()) * layout.orbit_radius
}

/// `d/dv` of [`ply_center_at`], central finite difference.
pub fn ply_center_derivative(
    layout: &PlyLayout,
    curve: &YarnCurve,
    frames: &FrameSequence,
    v: f64,
    j: usize,
) -> Vec3 {
    let twist_scale = if layout.twist_rate.abs() > 1e-9 {
        crate::math::TWO_PI / layout.twist_rate.abs()
    } else {
        f64::INFINITY
    };
    let h = 1e-4 * twist_scale.min(curve.total_length()).max(1e-9);
    let a = ply_center_at(layout, curve, frames, v - h, j);
    let b = ply_center_at(layout, curve, frames, v + h, j);
    (b - a) / (2.0 * h)
}

/// Outcome of the ellipse/helix fixed-point iteration for one ply.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOutcome {
    /// Converged yarn arclength of the ply center in the cutting plane.
    pub v: f64,
    /// Ply center at `v`.
    pub center: Vec3,
    pub iterations: usize,
    pub converged: bool,
}

/// Walk ply `j`'s helix until its center lies in the section plane: at the
/// current `v`, cast a line from the ply center along the yarn tangent to
/// the plane, and let the landing arclength seed the next step.
pub fn newton_ellipse_helix(
    section: &EllipseSection,
    layout: &PlyLayout,
    curve: &YarnCurve,
    frames: &FrameSequence,
    j: usize,
    v0: f64,
) -> NewtonOutcome {
    newton_ellipse_helix_traced(section, layout, curve, frames, j, v0, None)
}

/// Same as [`newton_ellipse_helix`] but optionally records each iterate
/// (used by the section-dump debug CLI).
pub fn newton_ellipse_helix_traced(
    section: &EllipseSection,
    layout: &PlyLayout,
    curve: &YarnCurve,
    frames: &FrameSequence,
    j: usize,
    v0: f64,
    mut trace: Option<&mut Vec<f64>>,
) -> NewtonOutcome {
    let m = section.plane_normal;
    let plane_point = section.center;
    let tol = 1e-6 * curve.radius();
    let mut v = v0;
    if let Some(t) = trace.as_deref_mut() {
        t.push(v);
    }
    for iter in 1..=NEWTON_MAX_ITERS {
        let c = ply_center_at(layout, curve, frames, v, j);
        let tangent = curve.eval_centerline(v).tangent;
        let denom = tangent.dot(m);
        if denom.abs() < 1e-6 {
            return NewtonOutcome {
                v: v0,
                center: ply_center_at(layout, curve, frames, v0, j),
                iterations: iter,
                converged: false,
            };
        }
        let s = (plane_point - c).dot(m) / denom;
        let v_next = v + s;
        if let Some(t) = trace.as_deref_mut() {
            t.push(v_next);
        }
        if s.abs() < tol {
            return NewtonOutcome {
                v: v_next,
                center: ply_center_at(layout, curve, frames, v_next, j),
                iterations: iter,
                converged: true,
            };
        }
        v = v_next;
    }
    NewtonOutcome {
        v: v0,
        center: ply_center_at(layout, curve, frames, v0, j),
        iterations: NEWTON_MAX_ITERS,
        converged: false,
    }
}

/// Which cross-section the 2D trace runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionMode {
    /// The cutting plane contains the ray (accurate, default).
    Elliptical,
    /// The perpendicular circle at the yarn hit (comparison baseline and
    /// grazing fallback).
    Circular,
}

/// Result of the implicit ply trace at a yarn hit.
#[derive(Debug, Clone, Copy)]
pub struct PlyHit {
    pub ply_index: usize,
    /// 3D hit point on the ply boundary circle, in the section plane.
    pub point: Vec3,
    /// Azimuthal phase on the ply in `[0, 2π)`, measured from the projection
    /// of the yarn reference normal into the section plane.
    pub u_ply: f64,
    /// Longitudinal length along the ply helix.
    pub v_ply: f64,
    /// Yarn arclength of the converged ply center.
    pub v_yarn: f64,
    /// Ply-local outward normal (unit, perpendicular to `tangent`).
    pub normal: Vec3,
    /// Ply-local tangent: normalized helix derivative.
    pub tangent: Vec3,
    /// Number of distinct ply disks the in-plane ray segment between yarn
    /// entry and exit crosses.
    pub n_intersected: u32,
    /// Distance from the ply hit to the yarn exit along the ray.
    pub path_length: f64,
    /// Largest per-ply iteration count spent in the helix/plane iteration.
    pub newton_iterations: usize,
    /// Set when the grazing or non-converged fallback produced this hit.
    pub used_fallback: bool,
}

/// Trace the plies at a yarn hit with the elliptical section (grazing rays
/// fall back to the circular section). Returns `None` when the ray passes
/// between the plies.
pub fn trace_plies(
    hit: &YarnHit,
    ray: &Ray,
    layout: &PlyLayout,
    curve: &YarnCurve,
    frames: &FrameSequence,
) -> Option<PlyHit> {
    trace_plies_with_mode(hit, ray, layout, curve, frames, SectionMode::Elliptical)
}

pub fn trace_plies_with_mode(
    hit: &YarnHit,
    ray: &Ray,
    layout: &PlyLayout,
    curve: &YarnCurve,
    frames: &FrameSequence,
    mode: SectionMode,
) -> Option<PlyHit> {
    let section = make_ellipse_section(hit, ray, curve);
    let circular = mode == SectionMode::Circular || section.grazing;

    let mut centers = [Vec3::ZERO; 12];
    let mut v_stars = [0.0f64; 12];
    let mut max_iters = 0usize;
    let mut any_fallback = section.grazing;

    let (plane_origin, e_u, e_v, plane_normal);
    if circular {
        // Perpendicular circle at the hit: ply centers need no iteration.
        let sample = curve.eval_centerline(hit.v_yarn);
        let tangent = sample.tangent;
        let e1 = frames.normal_at(hit.v_yarn, tangent);
        plane_origin = sample.point;
        e_u = e1;
        e_v = tangent.cross(e1);
        plane_normal = tangent;
        for j in 0..layout.n_plies {
            centers[j] = ply_center_at(layout, curve, frames, hit.v_yarn, j);
            v_stars[j] = hit.v_yarn;
        }
    } else {
        plane_origin = section.center;
        e_u = section.basis_major;
        e_v = section.basis_minor;
        plane_normal = section.plane_normal;
        for j in 0..layout.n_plies {
            let out = newton_ellipse_helix(&section, layout, curve, frames, j, hit.v_yarn);
            max_iters = max_iters.max(out.iterations);
            if out.converged {
                centers[j] = out.center;
                v_stars[j] = out.v;
            } else {
                any_fallback = true;
                centers[j] = ply_center_at(layout, curve, frames, hit.v_yarn, j);
                v_stars[j] = hit.v_yarn;
            }
        }
    }

    let project = |p: Vec3| {
        let d = p - plane_origin;
        glam::DVec2::new(d.dot(e_u), d.dot(e_v))
    };

    // In-plane segment between yarn entry and exit. For the elliptical
    // section the ray lies in the plane, so 2D distances equal ray distances;
    // the circular fallback projects the ray.
    let entry2 = project(hit.point);
    let exit2 = project(ray.at(hit.t_exit));
    let delta = exit2 - entry2;
    let seg_len = delta.length();
    let dir2 = if seg_len > 1e-12 {
        delta / seg_len
    } else {
        glam::DVec2::X
    };

    // 2D ray-circle tests against every ply disk.
    let mut best: Option<(f64, usize)> = None;
    let mut crossed = 0u32;
    let r2 = layout.ply_radius * layout.ply_radius;
    for j in 0..layout.n_plies {
        let c2 = project(centers[j]);
        let oc = entry2 - c2;
        let b = oc.dot(dir2);
        let c = oc.length_squared() - r2;
        let disc = b * b - c;
        if disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        let s_in = -b - sq;
        let s_out = -b + sq;
        // Disk crossed strictly between yarn entry and exit; a ply counts
        // once even when its disk is pierced twice.
        if s_out > 1e-9 && s_in < seg_len - 1e-9 {
            crossed += 1;
        }
        // Nearest boundary crossing along the forward ray.
        let tol = 1e-7 * curve.radius();
        let s_hit = if s_in >= -tol {
            Some(s_in.max(0.0))
        } else if s_out >= -tol {
            Some(s_out.max(0.0))
        } else {
            None
        };
        if let Some(s) = s_hit {
            match best {
                None => best = Some((s, j)),
                Some((s_best, j_best)) => {
                    // Equal-distance tie: lower ply index wins.
                    if s < s_best - 1e-9 || (s < s_best + 1e-9 && j < j_best) {
                        best = Some((s, j));
                    }
                }
            }
        }
    }

    let (s_hit, j_hit) = best?;
    let hit2 = entry2 + dir2 * s_hit;
    let point = plane_origin + e_u * hit2.x + e_v * hit2.y;
    let v_star = v_stars[j_hit];
    let center = centers[j_hit];

    let (normal, tangent) = ply_local_frame(layout, curve, frames, v_star, j_hit, point);

    // Azimuth on the ply, measured from the yarn reference normal projected
    // into the section plane.
    let (_, ref_normal) = frames.frame_at(v_star);
    let ref_in_plane = ref_normal - plane_normal * ref_normal.dot(plane_normal);
    let ref_in_plane = if ref_in_plane.length() > 1e-9 {
        ref_in_plane.normalize()
    } else {
        e_u
    };
    let radial = point - center;
    let radial_in_plane = radial - plane_normal * radial.dot(plane_normal);
    let u_ply = wrap_angle(
        radial_in_plane
            .dot(plane_normal.cross(ref_in_plane))
            .atan2(radial_in_plane.dot(ref_in_plane)),
    );

    Some(PlyHit {
        ply_index: j_hit,
        point,
        u_ply,
        v_ply: v_star * layout.helix_arc_scale(),
        v_yarn: v_star,
        normal,
        tangent,
        n_intersected: crossed.max(1),
        path_length: (ray.at(hit.t_exit) - point).length(),
        newton_iterations: max_iters,
        used_fallback: any_fallback,
    })
}

/// Ply-local frame at the converged arclength: tangent from the helix
/// derivative, normal pointing away from the ply center (orthogonalized).
pub fn ply_local_frame(
    layout: &PlyLayout,
    curve: &YarnCurve,
    frames: &FrameSequence,
    v_star: f64,
    j: usize,
    point: Vec3,
) -> (Vec3, Vec3) {
    let tangent = ply_center_derivative(layout, curve, frames, v_star, j).normalize();
    let center = ply_center_at(layout, curve, frames, v_star, j);
    let radial = point - center;
    let normal = if radial.length() > 1e-12 {
        orthogonalize(radial, tangent)
    } else {
        crate::math::perpendicular_smallest_axis(tangent)
    };
    (normal, tangent)
}

/// Count of distinct ply disks crossed by the chord between two interior
/// points (used when re-tracing refracted chords for the exit point).
pub fn count_plies_on_chord(
    layout: &PlyLayout,
    curve: &YarnCurve,
    frames: &FrameSequence,
    from: Vec3,
    to: Vec3,
    v_hint: f64,
) -> u32 {
    let dir = to - from;
    let len = dir.length();
    if len < 1e-12 {
        return 0;
    }
    let dir = dir / len;
    let tangent = curve.eval_centerline(v_hint).tangent;
    let t_perp = tangent - dir * tangent.dot(dir);
    let sin_theta = t_perp.length();
    let oblique = sin_theta > GRAZING_EPSILON;
    let m = if oblique { t_perp / sin_theta } else { tangent };
    let section = EllipseSection {
        center: from,
        plane_normal: m,
        basis_major: Vec3::ZERO,
        basis_minor: Vec3::ZERO,
        semi_major: 0.0,
        semi_minor: 0.0,
        grazing: false,
    };
    let mut crossed = 0u32;
    let r2 = layout.ply_radius * layout.ply_radius;
    for j in 0..layout.n_plies {
        let center = if oblique {
            let out = newton_ellipse_helix(&section, layout, curve, frames, j, v_hint);
            out.center
        } else {
            ply_center_at(layout, curve, frames, v_hint, j)
        };
        // Project onto the plane orthogonal to m and test the 2D segment
        // against the disk.
        let rel_c = (center - from) - m * (center - from).dot(m);
        let d2 = dir - m * dir.dot(m);
        let d2len = d2.length();
        if d2len < 1e-12 {
            if rel_c.length_squared() <= r2 {
                crossed += 1;
            }
            continue;
        }
        let d2n = d2 / d2len;
        let b = (-rel_c).dot(d2n);
        let c = rel_c.length_squared() - r2;
        let disc = b * b - c;
        if disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        let s_in = -b - sq;
        let s_out = -b + sq;
        let seg = len * d2len;
        if s_out > 1e-9 && s_in < seg - 1e-9 {
            crossed += 1;
        }
    }
    crossed
}
