use serde::{Deserialize, Serialize};

use super::FieldError;

/// How integrals over the domain are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    /// Rectangle rule with uniform step `1 / n_points` on the unit-length circle.
    Lebesgue,
    /// Every point carries weight one (finite Wilson-Cowan network).
    Counting,
}

/// Distance used when a kernel depends on `|r - r'|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// Arc length along the circle, `min(|r - r'|, 1 - |r - r'|)`.
    #[default]
    Geodesic,
    /// Straight-line chord between the two points of the embedded circle.
    Chordal,
}

/// Sample points `k / N` of the unit circle parameterized by `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
    measure: MeasureKind,
    distance: DistanceKind,
}

impl SpatialGrid {
    pub fn new(n_points: usize, measure: MeasureKind) -> Result<Self, FieldError> {
        if n_points == 0 {
            return Err(FieldError::EmptyGrid);
        }
        let step = 1.0 / n_points as f64;
        let points = (0..n_points).map(|k| k as f64 / n_points as f64).collect();
        let weight = match measure {
            MeasureKind::Lebesgue => step,
            MeasureKind::Counting => 1.0,
        };
        Ok(Self {
            points,
            weights: vec![weight; n_points],
            measure,
            distance: DistanceKind::Geodesic,
        })
    }

    pub fn with_distance(mut self, distance: DistanceKind) -> Self {
        self.distance = distance;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, k: usize) -> f64 {
        self.points[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn measure(&self) -> MeasureKind {
        self.measure
    }

    pub fn distance_kind(&self) -> DistanceKind {
        self.distance
    }

    /// Total measure of the domain, `mu(Omega)`.
    pub fn domain_measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Distance between grid points `i` and `j`.
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.distance_between(self.points[i], self.points[j])
    }

    pub fn distance_between(&self, a: f64, b: f64) -> f64 {
        let raw = (a - b).abs().rem_euclid(1.0);
        let arc = raw.min(1.0 - raw);
        match self.distance {
            DistanceKind::Geodesic => arc,
            // circumference one => radius 1 / (2 pi)
            DistanceKind::Chordal => (std::f64::consts::PI * arc).sin() / std::f64::consts::PI,
        }
    }
}

/// Uniform grid of `n_points` on the unit circle.
pub fn build_grid(n_points: usize, measure: MeasureKind) -> Result<SpatialGrid, FieldError> {
    SpatialGrid::new(n_points, measure)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_point_lebesgue_grid_has_step_one_twentieth() {
        let g = build_grid(20, MeasureKind::Lebesgue).unwrap();
        assert_eq!(g.len(), 20);
        for (k, p) in g.points().iter().enumerate() {
            assert_eq!(*p, k as f64 / 20.0);
        }
        assert!(g.weights().iter().all(|&w| w == 1.0 / 20.0));
        assert!((g.domain_measure() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_counting_point() {
        let g = build_grid(1, MeasureKind::Counting).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.weight(0), 1.0);
        assert_eq!(g.dist(0, 0), 0.0);
    }

    #[test]
    fn periodic_wraparound() {
        let g = build_grid(4, MeasureKind::Lebesgue).unwrap();
        assert_eq!(g.distance_between(0.0, 0.75), 0.25);
        assert_eq!(g.dist(0, 3), 0.25);
        assert_eq!(g.dist(3, 0), 0.25);
        assert_eq!(g.dist(1, 3), 0.5);
    }

    #[test]
    fn zero_points_rejected() {
        assert_eq!(build_grid(0, MeasureKind::Counting), Err(FieldError::EmptyGrid));
    }

    #[test]
    fn chordal_is_shorter_than_arc() {
        let g = build_grid(8, MeasureKind::Lebesgue)
            .unwrap()
            .with_distance(DistanceKind::Chordal);
        assert!((g.dist(0, 4) - 1.0 / std::f64::consts::PI).abs() < 1e-15);
        for j in 1..8 {
            let arc = build_grid(8, MeasureKind::Lebesgue).unwrap().dist(0, j);
            assert!(g.dist(0, j) <= arc);
        }
    }

    #[test]
    fn metric_is_symmetric_with_zero_diagonal() {
        let g = build_grid(13, MeasureKind::Lebesgue).unwrap();
        for i in 0..13 {
            assert_eq!(g.dist(i, i), 0.0);
            for j in 0..13 {
                assert_eq!(g.dist(i, j), g.dist(j, i));
                assert!(g.dist(i, j) <= 0.5);
            }
        }
    }
}
