//! Deterministic spatial sample sets on periodic boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::Domain;

/// A fixed list of sample points, stored flat (`n · d` coordinates).
///
/// Equidistant sets are tensor grids `x_i = lo + (i + offset)·h` per axis; on
/// a periodic box their sample mean is the trapezoidal rule, which is
/// spectrally accurate for smooth fields. The `offset` (in units of the cell
/// width) shifts evaluation grids off training grids so the two never share
/// points.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    coords: Vec<f64>,
}

impl SampleSet {
    /// Tensor grid with `per_axis[j]` points along axis `j`, shifted by
    /// `offset` cells.
    pub fn equidistant(domain: &Domain, per_axis: &[usize], offset: f64) -> Self {
        assert_eq!(per_axis.len(), domain.dim());
        assert!(per_axis.iter().all(|n| *n > 0));
        let d = domain.dim();
        let n_total: usize = per_axis.iter().product();
        let lengths = domain.lengths();
        let mut coords = Vec::with_capacity(n_total * d);
        let mut idx = vec![0usize; d];
        for _ in 0..n_total {
            for j in 0..d {
                let h = lengths[j] / per_axis[j] as f64;
                coords.push(domain.lo[j] + (idx[j] as f64 + offset) * h);
            }
            // Odometer increment, last axis fastest.
            for j in (0..d).rev() {
                idx[j] += 1;
                if idx[j] < per_axis[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
        SampleSet { dim: d, coords }
    }

    /// `n` points drawn uniformly from the box, seeded.
    pub fn random(domain: &Domain, n: usize, seed: u64) -> Self {
        let d = domain.dim();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut coords = Vec::with_capacity(n * d);
        for _ in 0..n {
            for j in 0..d {
                coords.push(rng.gen_range(domain.lo[j]..domain.hi[j]));
            }
        }
        SampleSet { dim: d, coords }
    }

    pub fn from_coords(dim: usize, coords: Vec<f64>) -> Self {
        assert_eq!(coords.len() % dim, 0);
        SampleSet { dim, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Smallest pairwise distance between this set and another (used to check
    /// that evaluation points stay off training points).
    pub fn min_distance_to(&self, other: &SampleSet) -> f64 {
        let mut best = f64::INFINITY;
        for a in self.iter() {
            for b in other.iter() {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                best = best.min(d2.sqrt());
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistant_grid_1d() {
        let dom = Domain::symmetric(1.0, 1);
        let s = SampleSet::equidistant(&dom, &[4], 0.0);
        let xs: Vec<f64> = s.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![-1.0, -0.5, 0.0, 0.5]);
        let shifted = SampleSet::equidistant(&dom, &[4], 0.5);
        let xs: Vec<f64> = shifted.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![-0.75, -0.25, 0.25, 0.75]);
    }

    #[test]
    fn equidistant_grid_2d_is_row_major() {
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 2.0]);
        let s = SampleSet::equidistant(&dom, &[2, 2], 0.0);
        assert_eq!(s.len(), 4);
        assert_eq!(s.point(0), &[0.0, 0.0]);
        assert_eq!(s.point(1), &[0.0, 1.0]);
        assert_eq!(s.point(2), &[0.5, 0.0]);
        assert_eq!(s.point(3), &[0.5, 1.0]);
    }

    #[test]
    fn random_sets_are_seed_deterministic_and_inside() {
        let dom = Domain::symmetric(2.0, 2);
        let a = SampleSet::random(&dom, 50, 9);
        let b = SampleSet::random(&dom, 50, 9);
        assert_eq!(a, b);
        assert!(a.coords().iter().all(|v| (-2.0..2.0).contains(v)));
    }

    #[test]
    fn offset_grids_avoid_training_points() {
        let dom = Domain::symmetric(1.0, 1);
        let train = SampleSet::equidistant(&dom, &[200], 0.0);
        // Evaluation grid offset: a quarter of the *training* cell, expressed
        // in evaluation cells (400 points → factor 400/200 · 1/4 = 1/2).
        let test = SampleSet::equidistant(&dom, &[400], 0.5);
        assert!(test.min_distance_to(&train) > 1e-4);
    }
}
