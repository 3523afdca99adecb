//! Pedestrian dead reckoning from IMU step events.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2<T> {
    pub position: Point2<T>,
    /// Radians, counter-clockwise from +x.
    pub heading: T,
}

/// One detected step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stride<T> {
    pub heading: T,
    pub length: T,
}

/// Advances the pose one stride along the stride's heading.
pub fn pdr_update<T: Float>(pose: Pose2<T>, step: Stride<T>) -> Pose2<T> {
    Pose2 {
        position: pose.position + Point2::polar(step.length, step.heading),
        heading: step.heading,
    }
}

pub fn pdr_track<T: Float>(start: Pose2<T>, steps: impl IntoIterator<Item = Stride<T>>) -> Pose2<T> {
    steps.into_iter().fold(start, pdr_update)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn square_walk_returns_home() {
        let start = Pose2 {
            position: Point2::new(3.0_f64, 4.0),
            heading: 0.0,
        };
        let q = std::f64::consts::FRAC_PI_2;
        let steps = (0..4).map(|i| Stride {
            heading: q * i as f64,
            length: 10.0,
        });
        let end = pdr_track(start, steps);
        assert_relative_eq!(end.position.x, 3.0, epsilon = 1e-9);
        assert_relative_eq!(end.position.y, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn works_in_single_precision() {
        let p = pdr_update(
            Pose2 {
                position: Point2::new(0.0_f32, 0.0),
                heading: 0.0,
            },
            Stride {
                heading: 0.0,
                length: 0.7,
            },
        );
        assert_eq!(p.position.x, 0.7_f32);
    }

    proptest! {
        /// Straight-line oracle: constant heading moves `n * L` along it.
        #[test]
        fn straight_walk_matches_closed_form(n in 0usize..200, len in 0.1f64..2.0, h in -std::f64::consts::PI..std::f64::consts::PI) {
            let start = Pose2 { position: Point2::new(0.0, 0.0), heading: 0.0 };
            let end = pdr_track(start, std::iter::repeat_n(Stride { heading: h, length: len }, n));
            let d = n as f64 * len;
            prop_assert!((end.position.x - d * h.cos()).abs() < 1e-9 * (1.0 + d));
            prop_assert!((end.position.y - d * h.sin()).abs() < 1e-9 * (1.0 + d));
        }
    }
}
