//! Small math helpers shared across the crate. All geometry is `f64`.

pub use glam::DVec3 as Vec3;

pub const TWO_PI: f64 = std::f64::consts::TAU;

/// Linear RGB triple used for radiance, albedos and extinction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Rgb {
    pub const BLACK: Rgb = Rgb::splat(0.0);
    pub const WHITE: Rgb = Rgb::splat(1.0);

    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Rgb { r, g, b }
    }

    pub const fn splat(v: f64) -> Self {
        Rgb { r: v, g: v, b: v }
    }

    pub fn exp(self) -> Self {
        Rgb::new(self.r.exp(), self.g.exp(), self.b.exp())
    }

    pub fn powi(self, n: i32) -> Self {
        Rgb::new(self.r.powi(n), self.g.powi(n), self.b.powi(n))
    }

    pub fn max_component(self) -> f64 {
        self.r.max(self.g).max(self.b)
    }

    pub fn mean(self) -> f64 {
        (self.r + self.g + self.b) / 3.0
    }

    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.g.is_finite() && self.b.is_finite()
    }

    pub fn lerp(self, other: Rgb, t: f64) -> Rgb {
        self + (other - self) * t
    }
}

impl std::ops::Add for Rgb {
    type Output = Rgb;
    fn add(self, o: Rgb) -> Rgb {
        Rgb::new(self.r + o.r, self.g + o.g, self.b + o.b)
    }
}

impl std::ops::AddAssign for Rgb {
    fn add_assign(&mut self, o: Rgb) {
        *self = *self + o;
    }
}

impl std::ops::Sub for Rgb {
    type Output = Rgb;
    fn sub(self, o: Rgb) -> Rgb {
        Rgb::new(self.r - o.r, self.g - o.g, self.b - o.b)
    }
}

impl std::ops::Mul for Rgb {
    type Output = Rgb;
    fn mul(self, o: Rgb) -> Rgb {
        Rgb::new(self.r * o.r, self.g * o.g, self.b * o.b)
    }
}

impl std::ops::Mul<f64> for Rgb {
    type Output = Rgb;
    fn mul(self, s: f64) -> Rgb {
        Rgb::new(self.r * s, self.g * s, self.b * s)
    }
}

impl std::ops::Div<f64> for Rgb {
    type Output = Rgb;
    fn div(self, s: f64) -> Rgb {
        Rgb::new(self.r / s, self.g / s, self.b / s)
    }
}

/// Wrap an angle to `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % TWO_PI;
    if a < 0.0 {
        a += TWO_PI;
    }
    // `-1e-17 % TAU` rounds back to TAU.
    if a >= TWO_PI {
        a = 0.0;
    }
    a
}

/// Smallest absolute difference between two angles, in `[0, π]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TWO_PI - d)
}

/// Angle between two vectors in radians, robust near 0 and π.
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    let cross = a.cross(b).length();
    let dot = a.dot(b);
    cross.atan2(dot)
}

pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Deterministic unit vector perpendicular to `v`, picked along the
/// coordinate axis least aligned with `v`.
pub fn perpendicular_smallest_axis(v: Vec3) -> Vec3 {
    let a = v.abs();
    let axis = if a.x <= a.y && a.x <= a.z {
        Vec3::X
    } else if a.y <= a.z {
        Vec3::Y
    } else {
        Vec3::Z
    };
    (axis - v * axis.dot(v)).normalize()
}

/// Gram-Schmidt: component of `v` perpendicular to unit vector `n`, normalized.
pub fn orthogonalize(v: Vec3, n: Vec3) -> Vec3 {
    (v - n * v.dot(n)).normalize()
}

/// SplitMix64 integer mix; the workhorse for deterministic hashing of seeds,
/// texture variants and per-pixel RNG streams.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Combine hash state with another word.
pub fn hash_combine(seed: u64, v: u64) -> u64 {
    splitmix64(seed ^ v.wrapping_mul(0x9e3779b97f4a7c15))
}

/// Orthonormal basis around a unit vector `n`; returns `(t, b)` so that
/// `(t, b, n)` is right-handed. Branchless Duff et al. construction.
pub fn onb(n: Vec3) -> (Vec3, Vec3) {
    let sign = 1.0_f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    (
        Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x),
        Vec3::new(b, sign + n.y * n.y * a, -n.y),
    )
}
