//! Exact 2-D geometry for the continuous world: wall segments, range-sensor
//! ray casting and swept-path collision tests.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `|direction| = 1` for rays.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("zero-length segment at ({x}, {y})")]
    ZeroLengthSegment { x: f64, y: f64 },
    #[error("ray direction is not a unit vector (norm {norm})")]
    NotUnit { norm: f64 },
    #[error("ray range must be positive, got {0}")]
    BadRange(f64),
    #[error("point ({x}, {y}) is not strictly inside the world bounds")]
    OutsideBounds { x: f64, y: f64 },
    #[error("world bounds must be positive and finite, got {width} x {height}")]
    BadBounds { width: f64, height: f64 },
    #[error("wall {index} leaves the world bounds")]
    WallOutOfBounds { index: usize },
    #[error("world file line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `angle` radians from the +x axis.
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c, s)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Rotation by `angle` radians counter-clockwise.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand normal, i.e. rotation by +pi/2.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A wall segment with distinct endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Segment {
    a: Vec2,
    b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Result<Self, GeomError> {
        if a == b {
            return Err(GeomError::ZeroLengthSegment { x: a.x, y: a.y });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> Vec2 {
        self.a
    }

    pub fn b(&self) -> Vec2 {
        self.b
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    /// Same segment expressed in a frame rotated by `angle` and shifted by `offset`.
    pub fn transformed(&self, angle: f64, offset: Vec2) -> Self {
        Self {
            a: self.a.rotate(angle) + offset,
            b: self.b.rotate(angle) + offset,
        }
    }
}

impl TryFrom<[f64; 4]> for Segment {
    type Error = GeomError;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Segment::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]))
    }
}

impl From<Segment> for [f64; 4] {
    fn from(s: Segment) -> Self {
        [s.a.x, s.a.y, s.b.x, s.b.y]
    }
}

/// Axis-aligned world rectangle `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub width: f64,
    pub height: f64,
}

impl Bounds {
    pub fn new(width: f64, height: f64) -> Result<Self, GeomError> {
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(GeomError::BadBounds { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn strictly_contains(&self, p: Vec2) -> bool {
        p.x > 0.0 && p.x < self.width && p.y > 0.0 && p.y < self.height
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    fn corners(&self) -> [Vec2; 4] {
        [
            Vec2::new(0.0, 0.0),
            Vec2::new(self.width, 0.0),
            Vec2::new(self.width, self.height),
            Vec2::new(0.0, self.height),
        ]
    }
}

/// World bounds plus every wall, boundary walls first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldSpec", into = "WorldSpec")]
pub struct WorldGeometry {
    bounds: Bounds,
    walls: Vec<Segment>,
}

#[derive(Serialize, Deserialize)]
struct WorldSpec {
    width: f64,
    height: f64,
    walls: Vec<Segment>,
}

impl TryFrom<WorldSpec> for WorldGeometry {
    type Error = GeomError;
    fn try_from(s: WorldSpec) -> Result<Self, GeomError> {
        WorldGeometry::new(Bounds::new(s.width, s.height)?, s.walls)
    }
}

impl From<WorldGeometry> for WorldSpec {
    fn from(w: WorldGeometry) -> Self {
        WorldSpec {
            width: w.bounds.width,
            height: w.bounds.height,
            walls: w.internal_walls().to_vec(),
        }
    }
}

/// Default internal layout shipped as `worlds/canonical_v1.world`.
pub const CANONICAL_WORLD: &str = include_str!("../../../worlds/canonical_v1.world");

impl WorldGeometry {
    /// Builds a world from its bounds and internal walls; the four boundary
    /// walls are added implicitly.
    pub fn new(bounds: Bounds, internal: Vec<Segment>) -> Result<Self, GeomError> {
        for (index, w) in internal.iter().enumerate() {
            if !(bounds.contains(w.a) && bounds.contains(w.b)) {
                return Err(GeomError::WallOutOfBounds { index });
            }
        }
        let c = bounds.corners();
        let mut walls = Vec::with_capacity(internal.len() + 4);
        for k in 0..4 {
            walls.push(Segment::new(c[k], c[(k + 1) % 4])?);
        }
        walls.extend(internal);
        Ok(Self { bounds, walls })
    }

    /// Box with only the boundary walls.
    pub fn empty(width: f64, height: f64) -> Result<Self, GeomError> {
        Self::new(Bounds::new(width, height)?, Vec::new())
    }

    pub fn canonical() -> Self {
        CANONICAL_WORLD
            .parse()
            .expect("bundled world file is valid")
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn walls(&self) -> &[Segment] {
        &self.walls
    }

    pub fn internal_walls(&self) -> &[Segment] {
        &self.walls[4..]
    }

    /// Serializes to the line-oriented world file format.
    pub fn to_world_file(&self) -> String {
        let mut out = format!("bounds {} {}\n", self.bounds.width, self.bounds.height);
        for w in self.internal_walls() {
            out.push_str(&format!("wall {} {} {} {}\n", w.a.x, w.a.y, w.b.x, w.b.y));
        }
        out
    }
}

impl FromStr for WorldGeometry {
    type Err = GeomError;

    /// Parses `bounds W H` followed by `wall x1 y1 x2 y2` lines. Blank lines
    /// and `#` comments are skipped.
    fn from_str(text: &str) -> Result<Self, GeomError> {
        let mut bounds = None;
        let mut walls = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let keyword = tokens.next().unwrap_or_default();
            let nums = tokens
                .map(|t| {
                    t.parse::<f64>().map_err(|e| GeomError::Parse {
                        line: line_no,
                        message: format!("bad number {t:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let expect = |n: usize| {
                if nums.len() == n {
                    Ok(())
                } else {
                    Err(GeomError::Parse {
                        line: line_no,
                        message: format!("`{keyword}` takes {n} numbers, got {}", nums.len()),
                    })
                }
            };
            match keyword {
                "bounds" => {
                    if bounds.is_some() {
                        return Err(GeomError::Parse {
                            line: line_no,
                            message: "duplicate bounds line".into(),
                        });
                    }
                    expect(2)?;
                    bounds = Some(Bounds::new(nums[0], nums[1])?);
                }
                "wall" => {
                    if bounds.is_none() {
                        return Err(GeomError::Parse {
                            line: line_no,
                            message: "wall before bounds header".into(),
                        });
                    }
                    expect(4)?;
                    walls.push(Segment::new(
                        Vec2::new(nums[0], nums[1]),
                        Vec2::new(nums[2], nums[3]),
                    )?);
                }
                other => {
                    return Err(GeomError::Parse {
                        line: line_no,
                        message: format!("unknown keyword {other:?}"),
                    })
                }
            }
        }
        let bounds = bounds.ok_or(GeomError::Parse {
            line: 0,
            message: "missing bounds header".into(),
        })?;
        WorldGeometry::new(bounds, walls)
    }
}

impl fmt::Display for WorldGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} world, {} internal walls",
            self.bounds.width,
            self.bounds.height,
            self.internal_walls().len()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    origin: Vec2,
    direction: Vec2,
    max_range: f64,
}

impl Ray {
    pub fn new(origin: Vec2, direction: Vec2, max_range: f64) -> Result<Self, GeomError> {
        let norm = direction.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(GeomError::NotUnit { norm });
        }
        if !(max_range > 0.0 && max_range.is_finite()) {
            return Err(GeomError::BadRange(max_range));
        }
        Ok(Self {
            origin,
            direction,
            max_range,
        })
    }

    pub fn from_angle(origin: Vec2, angle: f64, max_range: f64) -> Result<Self, GeomError> {
        Self::new(origin, Vec2::from_angle(angle), max_range)
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn direction(&self) -> Vec2 {
        self.direction
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }
}

/// Distance along `ray` to the nearest wall, clamped to `[0, max_range]`.
pub fn ray_cast(ray: &Ray, world: &WorldGeometry) -> Result<f64, GeomError> {
    let o = ray.origin;
    if !world.bounds.strictly_contains(o) {
        return Err(GeomError::OutsideBounds { x: o.x, y: o.y });
    }
    let best = world
        .walls
        .iter()
        .filter_map(|w| ray_segment_distance(o, ray.direction, w))
        .fold(f64::INFINITY, f64::min);
    Ok(best.clamp(0.0, ray.max_range))
}

/// Ray parameter of the first hit with `seg`, if any. A collinear overlap
/// reports the nearest overlapping point.
fn ray_segment_distance(o: Vec2, d: Vec2, seg: &Segment) -> Option<f64> {
    let e = seg.b - seg.a;
    let denom = d.cross(e);
    let ao = seg.a - o;
    if denom == 0.0 {
        if ao.cross(d) != 0.0 {
            return None;
        }
        // Collinear: project both endpoints onto the ray.
        let ta = ao.dot(d);
        let tb = (seg.b - o).dot(d);
        let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        if hi < 0.0 {
            return None;
        }
        return Some(lo.max(0.0));
    }
    let t = ao.cross(e) / denom;
    let u = ao.cross(d) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

fn orientation(p: Vec2, q: Vec2, r: Vec2) -> f64 {
    (q - p).cross(r - p)
}

fn on_segment_bbox(p: Vec2, q: Vec2, r: Vec2) -> bool {
    r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
}

/// Closed segment intersection, counting touching and collinear overlap.
pub fn segments_intersect(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> bool {
    let d1 = orientation(q0, q1, p0);
    let d2 = orientation(q0, q1, p1);
    let d3 = orientation(p0, p1, q0);
    let d4 = orientation(p0, p1, q1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment_bbox(q0, q1, p0))
        || (d2 == 0.0 && on_segment_bbox(q0, q1, p1))
        || (d3 == 0.0 && on_segment_bbox(p0, p1, q0))
        || (d4 == 0.0 && on_segment_bbox(p0, p1, q1))
}

/// Whether moving in a straight line from `p0` to `p1` hits or touches a wall,
/// or ends outside the world.
pub fn path_collides(p0: Vec2, p1: Vec2, world: &WorldGeometry) -> bool {
    if !world.bounds.strictly_contains(p0) || !world.bounds.strictly_contains(p1) {
        return true;
    }
    // Canonical endpoint order makes the floating-point result symmetric.
    let (a, b) = if (p0.x, p0.y) <= (p1.x, p1.y) {
        (p0, p1)
    } else {
        (p1, p0)
    };
    world
        .internal_walls()
        .iter()
        .any(|w| segments_intersect(a, b, w.a, w.b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn box40() -> WorldGeometry {
        WorldGeometry::empty(40.0, 40.0).unwrap()
    }

    fn with_wall(x1: f64, y1: f64, x2: f64, y2: f64) -> WorldGeometry {
        WorldGeometry::new(
            Bounds::new(40.0, 40.0).unwrap(),
            vec![Segment::new(Vec2::new(x1, y1), Vec2::new(x2, y2)).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn zero_length_segment_rejected() {
        let p = Vec2::new(1.0, 2.0);
        assert!(matches!(
            Segment::new(p, p),
            Err(GeomError::ZeroLengthSegment { .. })
        ));
    }

    #[test]
    fn ray_clamps_to_range() {
        let ray = Ray::new(Vec2::new(20.0, 20.0), Vec2::new(1.0, 0.0), 10.0).unwrap();
        assert_eq!(ray_cast(&ray, &box40()).unwrap(), 10.0);
    }

    #[test]
    fn ray_hits_boundary() {
        let ray = Ray::new(Vec2::new(35.0, 20.0), Vec2::new(1.0, 0.0), 10.0).unwrap();
        assert_eq!(ray_cast(&ray, &box40()).unwrap(), 5.0);
    }

    #[test]
    fn diagonal_ray_hits_internal_wall() {
        let world = with_wall(22.0, 18.0, 22.0, 26.0);
        let ray = Ray::from_angle(Vec2::new(20.0, 20.0), FRAC_PI_4, 10.0).unwrap();
        let d = ray_cast(&ray, &world).unwrap();
        assert!((d - 2.0 * 2f64.sqrt()).abs() < 1e-12, "{d}");
    }

    #[test]
    fn ray_origin_outside_is_error() {
        let ray = Ray::new(Vec2::new(40.0, 20.0), Vec2::new(1.0, 0.0), 10.0).unwrap();
        assert!(matches!(
            ray_cast(&ray, &box40()),
            Err(GeomError::OutsideBounds { .. })
        ));
    }

    #[test]
    fn non_unit_direction_rejected() {
        assert!(Ray::new(Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn collinear_overlap_hits_nearest_point() {
        let world = with_wall(25.0, 20.0, 30.0, 20.0);
        let ray = Ray::new(Vec2::new(20.0, 20.0), Vec2::new(1.0, 0.0), 10.0).unwrap();
        assert_eq!(ray_cast(&ray, &world).unwrap(), 5.0);
        let world = with_wall(15.0, 20.0, 30.0, 20.0);
        assert_eq!(ray_cast(&ray, &world).unwrap(), 0.0);
    }

    #[test]
    fn path_examples() {
        let w = box40();
        assert!(!path_collides(Vec2::new(20.0, 20.0), Vec2::new(21.0, 20.0), &w));
        assert!(path_collides(Vec2::new(39.5, 20.0), Vec2::new(40.5, 20.0), &w));
        let w = with_wall(22.0, 18.0, 22.0, 26.0);
        assert!(path_collides(Vec2::new(20.0, 17.0), Vec2::new(24.0, 23.0), &w));
    }

    #[test]
    fn touching_wall_endpoint_collides() {
        let w = with_wall(22.0, 18.0, 22.0, 26.0);
        assert!(path_collides(Vec2::new(20.0, 18.0), Vec2::new(22.0, 18.0), &w));
        assert!(path_collides(Vec2::new(20.0, 16.0), Vec2::new(24.0, 20.0), &w));
        assert!(!path_collides(Vec2::new(20.0, 17.0), Vec2::new(21.9, 17.0), &w));
    }

    #[test]
    fn world_file_round_trip() {
        let w = WorldGeometry::canonical();
        assert_eq!(w.bounds(), Bounds::new(40.0, 40.0).unwrap());
        assert!(!w.internal_walls().is_empty());
        let again: WorldGeometry = w.to_world_file().parse().unwrap();
        assert_eq!(again, w);
    }

    #[test]
    fn world_file_errors() {
        assert!(matches!(
            "wall 1 1 2 2".parse::<WorldGeometry>(),
            Err(GeomError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            "bounds 10 10\nwall 1 1 20 2".parse::<WorldGeometry>(),
            Err(GeomError::WallOutOfBounds { index: 0 })
        ));
        assert!(matches!(
            "bounds 10 10\nwall 1 x 2 2".parse::<WorldGeometry>(),
            Err(GeomError::Parse { line: 2, .. })
        ));
        assert!("# header\nbounds 10 10 # box\n\n".parse::<WorldGeometry>().is_ok());
    }

    #[test]
    fn world_serde_keeps_walls() {
        let w = WorldGeometry::canonical();
        let json = serde_json::to_string(&w).unwrap();
        let back: WorldGeometry = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);
    }
}
