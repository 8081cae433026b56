use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::Point;

/// Open region of coordinate space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bounds {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// Spherical shell `inner < |x - center| < outer`.
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
}

/// A single coordinate chart: an open subset of n-space with n >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartDomain {
    dimension: usize,
    bounds: Bounds,
}

impl ChartDomain {
    pub fn new(dimension: usize, bounds: Bounds) -> std::result::Result<Self, String> {
        if dimension < 2 {
            return Err(format!("dimension must be at least 2, got {dimension}"));
        }
        let check_len = |v: &[f64], what: &str| {
            if v.len() != dimension {
                Err(format!("{what} has {} entries, expected {dimension}", v.len()))
            } else {
                Ok(())
            }
        };
        match &bounds {
            Bounds::Box { lo, hi } => {
                check_len(lo, "lo")?;
                check_len(hi, "hi")?;
                if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err("box must satisfy lo < hi on every axis".into());
                }
            }
            Bounds::Ball { center, radius } => {
                check_len(center, "center")?;
                if !(*radius > 0.0) {
                    return Err("ball radius must be positive".into());
                }
            }
            Bounds::Annulus { center, inner, outer } => {
                check_len(center, "center")?;
                if !(*inner >= 0.0 && inner < outer) {
                    return Err("annulus must satisfy 0 <= inner < outer".into());
                }
            }
        }
        Ok(Self { dimension, bounds })
    }

    pub fn ball(dimension: usize, radius: f64) -> Self {
        Self::new(dimension, Bounds::Ball { center: vec![0.0; dimension], radius })
            .expect("valid ball")
    }

    pub fn cube(dimension: usize, half_width: f64) -> Self {
        Self::new(
            dimension,
            Bounds::Box { lo: vec![-half_width; dimension], hi: vec![half_width; dimension] },
        )
        .expect("valid box")
    }

    pub fn annulus(dimension: usize, inner: f64, outer: f64) -> Self {
        Self::new(dimension, Bounds::Annulus { center: vec![0.0; dimension], inner, outer })
            .expect("valid annulus")
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn contains(&self, p: &Point) -> bool {
        if p.len() != self.dimension || p.iter().any(|x| !x.is_finite()) {
            return false;
        }
        match &self.bounds {
            Bounds::Box { lo, hi } => p.iter().zip(lo.iter().zip(hi)).all(|(x, (a, b))| a < x && x < b),
            Bounds::Ball { center, radius } => dist(p, center) < *radius,
            Bounds::Annulus { center, inner, outer } => {
                let d = dist(p, center);
                *inner < d && d < *outer
            }
        }
    }

    pub fn check(&self, p: &Point) -> Result<()> {
        if p.len() != self.dimension {
            return Err(GeomError::DimensionMismatch { expected: self.dimension, got: p.len() });
        }
        if self.contains(p) {
            Ok(())
        } else {
            Err(GeomError::OutsideDomain(p.iter().copied().collect()))
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.bounds {
            Bounds::Box { lo, hi } => (lo.clone(), hi.clone()),
            Bounds::Ball { center, radius } | Bounds::Annulus { center, outer: radius, .. } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Regular lattice of interior points, roughly `samples` of them.
    pub fn lattice(&self, samples: usize) -> Vec<Point> {
        let per_axis = ((samples.max(1) as f64).powf(1.0 / self.dimension as f64).ceil() as usize).max(2);
        let (lo, hi) = self.bounding_box();
        let mut out = Vec::new();
        let mut idx = vec![0usize; self.dimension];
        loop {
            let p = Point::from_iterator(
                self.dimension,
                (0..self.dimension).map(|k| {
                    let frac = (idx[k] as f64 + 0.5) / per_axis as f64;
                    lo[k] + frac * (hi[k] - lo[k])
                }),
            );
            if self.contains(&p) {
                out.push(p);
            }
            let mut k = 0;
            loop {
                if k == self.dimension {
                    return out;
                }
                idx[k] += 1;
                if idx[k] < per_axis {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

fn dist(p: &Point, c: &[f64]) -> f64 {
    p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}
