//! Homogeneous Poisson point processes on a rectangle and radius queries.
//!
//! All coordinates are in kilometres with the region anchored at the origin.
//! Range queries use a closed ball: a point at distance exactly `radius`
//! counts as in range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub width: f64,
    pub height: f64,
}

impl Region {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        let region = Region { width, height };
        region.validate()?;
        Ok(region)
    }

    /// Square region with the given side.
    pub fn square(side: f64) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0) || !(self.height.is_finite() && self.height > 0.0) {
            return Err(Error::invalid(format!(
                "region must have positive finite sides, got {} x {}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn distance_sq(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn distance(&self, other: &Point) -> f64 {
        self.distance_sq(other).sqrt()
    }
}

/// A realization of a point process. Immutable once sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub positions: Vec<Point>,
    pub intensity: f64,
    pub region: Region,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of points among `filter` within `radius` of `center`.
    pub fn points_within(&self, center: Point, radius: f64, filter: &[usize]) -> usize {
        let r2 = radius * radius;
        filter
            .iter()
            .filter(|&&i| self.positions[i].distance_sq(&center) <= r2)
            .count()
    }

    /// Number of points within `radius` of `center`, over the whole set.
    pub fn count_within(&self, center: Point, radius: f64) -> usize {
        let r2 = radius * radius;
        self.positions
            .iter()
            .filter(|p| p.distance_sq(&center) <= r2)
            .count()
    }
}

/// Sample a homogeneous PPP with a fresh RNG derived from `seed`.
pub fn sample_ppp(intensity: f64, region: &Region, seed: u64) -> Result<PointSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_ppp_with(intensity, region, &mut rng)
}

/// Sample a homogeneous PPP: Poisson(intensity * area) points, i.i.d. uniform.
pub fn sample_ppp_with<R: Rng + ?Sized>(intensity: f64, region: &Region, rng: &mut R) -> Result<PointSet> {
    if !intensity.is_finite() || intensity < 0.0 {
        return Err(Error::invalid(format!("intensity must be finite and >= 0, got {intensity}")));
    }
    region.validate()?;
    let n = poisson_count(intensity * region.area(), rng)?;
    let positions = (0..n)
        .map(|_| Point::new(rng.random::<f64>() * region.width, rng.random::<f64>() * region.height))
        .collect();
    Ok(PointSet {
        positions,
        intensity,
        region: *region,
    })
}

pub(crate) fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize> {
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::invalid(format!("poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as usize)
}

/// Uniform bucket grid over a region for fixed-radius queries.
///
/// Buckets are `cell` km on a side; a query with `radius <= cell` only
/// needs to scan the 3x3 neighbourhood of the center's bucket.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: f64,
    cols: usize,
    rows: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl GridIndex {
    /// Index the given positions. `cell` must be positive.
    pub fn build(positions: &[Point], region: &Region, cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        // Cap the bucket count so huge regions with tiny radii stay bounded.
        let cell = cell.max((region.area() / 4_000_000.0).sqrt());
        let cols = ((region.width / cell).ceil() as usize).max(1);
        let rows = ((region.height / cell).ceil() as usize).max(1);

        let mut counts = vec![0usize; cols * rows + 1];
        let keys: Vec<usize> = positions
            .iter()
            .map(|p| Self::bucket(p, cell, cols, rows))
            .collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0usize; positions.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k]] = i;
            fill[k] += 1;
        }
        GridIndex {
            cell,
            cols,
            rows,
            starts,
            items,
        }
    }

    fn bucket(p: &Point, cell: f64, cols: usize, rows: usize) -> usize {
        let cx = ((p.x / cell).floor().max(0.0) as usize).min(cols - 1);
        let cy = ((p.y / cell).floor().max(0.0) as usize).min(rows - 1);
        cy * cols + cx
    }

    /// Visit candidate indices whose bucket intersects the query square.
    fn for_candidates(&self, center: Point, radius: f64, mut visit: impl FnMut(usize) -> bool) -> bool {
        let span = (radius / self.cell).ceil() as isize;
        let cx = (center.x / self.cell).floor() as isize;
        let cy = (center.y / self.cell).floor() as isize;
        let x_lo = (cx - span).max(0);
        let x_hi = (cx + span).min(self.cols as isize - 1);
        let y_lo = (cy - span).max(0);
        let y_hi = (cy + span).min(self.rows as isize - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let b = y as usize * self.cols + x as usize;
                for &i in &self.items[self.starts[b]..self.starts[b + 1]] {
                    if visit(i) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Whether some indexed point within `radius` of `center` satisfies `pred`.
    pub fn any_within(&self, positions: &[Point], center: Point, radius: f64, pred: impl Fn(usize) -> bool) -> bool {
        let r2 = radius * radius;
        self.for_candidates(center, radius, |i| positions[i].distance_sq(&center) <= r2 && pred(i))
    }

    pub fn count_within(&self, positions: &[Point], center: Point, radius: f64) -> usize {
        let r2 = radius * radius;
        let mut n = 0;
        self.for_candidates(center, radius, |i| {
            if positions[i].distance_sq(&center) <= r2 {
                n += 1;
            }
            false
        });
        n
    }
}
