//! Planar geometry primitives shared by the world model, obstacle
//! selection, and motion planning.

use serde::{Deserialize, Serialize};

pub const TAU: f64 = std::f64::consts::TAU;
pub const PI: f64 = std::f64::consts::PI;

/// 2D point / vector, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn add_scaled(&self, dir: Point, t: f64) -> Point {
        Point::new(self.x + dir.x * t, self.y + dir.y * t)
    }

    pub fn sub(&self, other: &Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Polar angle of the vector, in (-pi, pi].
    pub fn angle(&self) -> f64 {
        self.y.atan2(self.x)
    }
}

/// Unit vector at the given angle.
pub fn unit(angle: f64) -> Point {
    Point::new(angle.cos(), angle.sin())
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// Axis-aligned rectangle, min corner plus extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect { x, y, w, h }
    }

    pub fn max_x(&self) -> f64 {
        self.x + self.w
    }

    pub fn max_y(&self) -> f64 {
        self.y + self.h
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x && p.x <= self.max_x() && p.y >= self.y && p.y <= self.max_y()
    }

    /// True when the disc lies entirely inside the rectangle.
    pub fn contains_disc(&self, center: &Point, radius: f64) -> bool {
        center.x - radius >= self.x
            && center.x + radius <= self.max_x()
            && center.y - radius >= self.y
            && center.y + radius <= self.max_y()
    }

    /// True when the point lies strictly inside (boundary excluded).
    pub fn contains_strict(&self, p: &Point) -> bool {
        p.x > self.x && p.x < self.max_x() && p.y > self.y && p.y < self.max_y()
    }

    /// True when the two rectangles share interior area.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.x < other.max_x()
            && other.x < self.max_x()
            && self.y < other.max_y()
            && other.y < self.max_y()
    }

    /// Smallest rectangle covering both.
    pub fn union(&self, other: &Rect) -> Rect {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.max_x().max(other.max_x());
        let y1 = self.max_y().max(other.max_y());
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn expand(&self, margin: f64) -> Rect {
        Rect::new(
            self.x - margin,
            self.y - margin,
            self.w + 2.0 * margin,
            self.h + 2.0 * margin,
        )
    }
}

/// Two discs overlap when their centers are strictly closer than the sum of
/// radii. Touching discs do not overlap (closed free space).
pub fn discs_overlap(c1: &Point, r1: f64, c2: &Point, r2: f64) -> bool {
    c1.dist(c2) < r1 + r2
}

/// Distance from a point to a segment [a, b].
pub fn dist_point_segment(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(&ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(&ab) / len2).clamp(0.0, 1.0);
    p.dist(&a.add_scaled(ab, t))
}

/// Circular-sector region: apex `apex`, directions `axis + phi` for
/// `phi in [beta, alpha]`, radial extent `[0, length]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub apex: Point,
    pub axis: f64,
    pub alpha: f64,
    pub beta: f64,
    pub length: f64,
}

impl Sector {
    /// Exact Euclidean distance from a point to the sector (0 inside).
    pub fn distance(&self, p: &Point) -> f64 {
        let v = p.sub(&self.apex);
        let d = v.norm();
        if d == 0.0 {
            return 0.0;
        }
        let phi = wrap_angle(v.angle() - self.axis);
        if phi >= self.beta && phi <= self.alpha {
            return (d - self.length).max(0.0);
        }
        let end_a = self.apex.add_scaled(unit(self.axis + self.alpha), self.length);
        let end_b = self.apex.add_scaled(unit(self.axis + self.beta), self.length);
        dist_point_segment(p, &self.apex, &end_a).min(dist_point_segment(p, &self.apex, &end_b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * PI) - PI).abs() < 1e-12);
        assert_eq!(wrap_angle(0.5), 0.5);
    }

    #[test]
    fn tangent_discs_do_not_overlap() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(0.1, 0.0);
        assert!(!discs_overlap(&a, 0.05, &b, 0.05));
        assert!(discs_overlap(&a, 0.051, &b, 0.05));
    }

    #[test]
    fn segment_distance() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(1.0, 0.0);
        assert!((dist_point_segment(&Point::new(0.5, 0.3), &a, &b) - 0.3).abs() < 1e-12);
        assert!((dist_point_segment(&Point::new(-0.4, 0.0), &a, &b) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn sector_distance_interior_and_edges() {
        let s = Sector {
            apex: Point::new(0.0, 0.0),
            axis: 0.0,
            alpha: PI / 4.0,
            beta: -PI / 4.0,
            length: 1.0,
        };
        assert_eq!(s.distance(&Point::new(0.5, 0.0)), 0.0);
        assert!((s.distance(&Point::new(2.0, 0.0)) - 1.0).abs() < 1e-12);
        // Behind the apex.
        assert!((s.distance(&Point::new(-1.0, 0.0)) - 1.0).abs() < 1e-12);
        // Degenerate zero-width sector behaves like a segment.
        let seg = Sector { alpha: 0.0, beta: 0.0, ..s };
        assert!((seg.distance(&Point::new(0.5, 0.2)) - 0.2).abs() < 1e-12);
    }
}
