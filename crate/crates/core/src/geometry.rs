//! Planar geometry kernel: polyline resampling, oriented rectangles with a
//! separating-axis overlap test, and rigid frame transforms.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate polyline: arc length is zero")]
    DegeneratePolyline,
    #[error("target segment length must be positive, got {0}")]
    BadTargetLength(f64),
    #[error("degenerate segment: endpoints coincide at ({0}, {1})")]
    DegenerateSegment(f64, f64),
    #[error("rectangle extents must be positive (half_length {0}, half_width {1})")]
    BadExtents(f64, f64),
}

/// A point or vector in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    /// Rotates counter-clockwise by `angle` radians.
    pub fn rotate(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, o: Point2, t: f64) -> Point2 {
        Point2::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }

    pub fn heading(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// A directed lane segment `p1 -> p2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub p1: Point2,
    pub p2: Point2,
}

impl Segment {
    pub fn new(p1: Point2, p2: Point2) -> Result<Self, GeometryError> {
        if p1 == p2 {
            return Err(GeometryError::DegenerateSegment(p1.x, p1.y));
        }
        Ok(Self { p1, p2 })
    }

    pub fn midpoint(&self) -> Point2 {
        self.p1.lerp(self.p2, 0.5)
    }

    /// Vector form `p2 - p1`.
    pub fn vector(&self) -> Point2 {
        self.p2 - self.p1
    }

    pub fn length(&self) -> f64 {
        self.vector().norm()
    }

    pub fn heading(&self) -> f64 {
        self.vector().heading()
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn distance_to(&self, p: Point2) -> f64 {
        let v = self.vector();
        let t = ((p - self.p1).dot(v) / v.dot(v)).clamp(0.0, 1.0);
        p.distance(self.p1 + v * t)
    }
}

/// Splits a polyline into `max(1, round(L / target_len))` pieces of equal arc
/// length. Piece endpoints lie on the polyline and interior source vertices
/// are not preserved.
pub fn resample_polyline(points: &[Point2], target_len: f64) -> Result<Vec<Segment>, GeometryError> {
    if !(target_len > 0.0) || !target_len.is_finite() {
        return Err(GeometryError::BadTargetLength(target_len));
    }
    let mut cumulative = Vec::with_capacity(points.len());
    let mut total = 0.0;
    cumulative.push(0.0);
    for w in points.windows(2) {
        total += w[0].distance(w[1]);
        cumulative.push(total);
    }
    if points.len() < 2 || !(total > 0.0) {
        return Err(GeometryError::DegeneratePolyline);
    }
    let n = ((total / target_len).round() as usize).max(1);
    let step = total / n as f64;

    let point_at = |s: f64, cursor: &mut usize| -> Point2 {
        while *cursor + 2 < points.len() && cumulative[*cursor + 1] < s {
            *cursor += 1;
        }
        let (a, b) = (cumulative[*cursor], cumulative[*cursor + 1]);
        let t = if b > a { ((s - a) / (b - a)).clamp(0.0, 1.0) } else { 0.0 };
        points[*cursor].lerp(points[*cursor + 1], t)
    };

    let mut cursor = 0;
    let mut segments = Vec::with_capacity(n);
    let mut prev = points[0];
    for k in 1..=n {
        let next = if k == n {
            *points.last().unwrap()
        } else {
            point_at(step * k as f64, &mut cursor)
        };
        segments.push(Segment::new(prev, next)?);
        prev = next;
    }
    Ok(segments)
}

/// A closed rectangle with arbitrary heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Point2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn new(center: Point2, heading: f64, half_length: f64, half_width: f64) -> Result<Self, GeometryError> {
        if !(half_length > 0.0 && half_width > 0.0) {
            return Err(GeometryError::BadExtents(half_length, half_width));
        }
        Ok(Self { center, heading: wrap_angle(heading), half_length, half_width })
    }

    /// Unit vectors along the length and width directions.
    pub fn axes(&self) -> (Point2, Point2) {
        let (s, c) = self.heading.sin_cos();
        (Point2::new(c, s), Point2::new(-s, c))
    }

    pub fn corners(&self) -> [Point2; 4] {
        let (u, v) = self.axes();
        let a = u * self.half_length;
        let b = v * self.half_width;
        let c = self.center;
        [c + a + b, c - a + b, c - a - b, c + a - b]
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_length * self.half_width
    }

    pub fn circumradius(&self) -> f64 {
        self.half_length.hypot(self.half_width)
    }

    /// Closed containment test.
    pub fn contains(&self, p: Point2) -> bool {
        let (u, v) = self.axes();
        let d = p - self.center;
        d.dot(u).abs() <= self.half_length && d.dot(v).abs() <= self.half_width
    }

    /// Half-extent of the projection of this rectangle onto unit axis `axis`.
    fn projected_radius(&self, axis: Point2) -> f64 {
        let (u, v) = self.axes();
        self.half_length * u.dot(axis).abs() + self.half_width * v.dot(axis).abs()
    }
}

/// Expands a lane segment to a rectangle spanning the lane width.
pub fn expand_segment(seg: &Segment, lane_width: f64) -> Result<OrientedRect, GeometryError> {
    OrientedRect::new(seg.midpoint(), seg.heading(), seg.length() / 2.0, lane_width / 2.0)
}

/// Separating-axis overlap test for closed rectangles; touching counts.
pub fn rects_intersect(a: &OrientedRect, b: &OrientedRect) -> bool {
    let d = b.center - a.center;
    let (au, av) = a.axes();
    let (bu, bv) = b.axes();
    [au, av, bu, bv]
        .iter()
        .all(|&axis| d.dot(axis).abs() <= a.projected_radius(axis) + b.projected_radius(axis))
}

/// A rigid 2D frame: origin and heading of its x axis in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame2D {
    pub origin: Point2,
    pub heading: f64,
}

impl Frame2D {
    pub fn new(origin: Point2, heading: f64) -> Self {
        Self { origin, heading: wrap_angle(heading) }
    }

    pub fn identity() -> Self {
        Self { origin: Point2::ORIGIN, heading: 0.0 }
    }
}

/// World to frame coordinates: `R(-heading) * (p - origin)`.
pub fn to_frame(p: Point2, f: &Frame2D) -> Point2 {
    (p - f.origin).rotate(-f.heading)
}

/// Frame to world coordinates; inverse of [`to_frame`].
pub fn from_frame(p: Point2, f: &Frame2D) -> Point2 {
    p.rotate(f.heading) + f.origin
}
