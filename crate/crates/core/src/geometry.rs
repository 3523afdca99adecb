//! Planar geometry in local meters, generic over the float type.

use std::ops::{Add, Mul, Sub};

use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Float> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Point2 { x, y }
    }

    pub fn origin() -> Self {
        Point2::new(T::zero(), T::zero())
    }

    pub fn distance(self, other: Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    /// Unit vector at `heading` radians (counter-clockwise from +x) scaled by `len`.
    pub fn polar(len: T, heading: T) -> Self {
        Point2::new(len * heading.cos(), len * heading.sin())
    }

    /// Heading of this vector, radians from +x.
    pub fn heading(self) -> T {
        self.y.atan2(self.x)
    }

    pub fn lerp(self, other: Self, frac: T) -> Self {
        Point2::new(self.x + (other.x - self.x) * frac, self.y + (other.y - self.y) * frac)
    }
}

impl<T: Float> Add for Point2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Float> Sub for Point2<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Float> Mul<T> for Point2<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        Point2::new(self.x * k, self.y * k)
    }
}

/// Axis-aligned rectangle, inclusive of its boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect<T> {
    pub min: Point2<T>,
    pub max: Point2<T>,
}

impl<T: Float> Rect<T> {
    pub fn new(min: Point2<T>, max: Point2<T>) -> Self {
        Rect { min, max }
    }

    pub fn is_well_formed(&self) -> bool {
        self.min.x <= self.max.x && self.min.y <= self.max.y
    }

    pub fn contains(&self, p: Point2<T>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Mean Earth radius used for the equirectangular projection.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Equirectangular projection of `(lat, lon)` degrees about `(lat0, lon0)`.
pub fn project_equirectangular<T: Float>(lat: T, lon: T, lat0: T, lon0: T) -> Point2<T> {
    let r = T::from(EARTH_RADIUS_M).expect("earth radius fits any float");
    let x = r * (lon - lon0).to_radians() * lat0.to_radians().cos();
    let y = r * (lat - lat0).to_radians();
    Point2::new(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn distance_and_polar_work_for_both_widths() {
        let a = Point2::<f64>::new(0.0, 0.0);
        let b = Point2::<f64>::new(3.0, 4.0);
        assert_eq!(a.distance(b), 5.0);
        let c = Point2::<f32>::new(3.0, 4.0);
        assert_eq!(c.norm(), 5.0f32);
        let p = Point2::<f64>::polar(2.0, std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 2.0);
    }

    #[test]
    fn rect_contains_boundary() {
        let r = Rect::new(Point2::new(0.0, 0.0), Point2::new(10.0, 5.0));
        assert!(r.contains(Point2::new(10.0, 5.0)));
        assert!(!r.contains(Point2::new(10.0001, 5.0)));
    }

    #[test]
    fn projection_scale_near_origin() {
        // One millidegree of latitude is ~111.2 m everywhere.
        let p = project_equirectangular(34.001_f64, -118.25, 34.0, -118.25);
        assert_relative_eq!(p.y, 111.195, epsilon = 0.01);
        assert_eq!(p.x, 0.0);
        let q = project_equirectangular(34.0_f64, -118.249, 34.0, -118.25);
        assert_relative_eq!(q.x, 111.195 * 34.0_f64.to_radians().cos(), epsilon = 0.01);
    }
}
