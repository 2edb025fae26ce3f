//! Fourier transforms and spectral calculus on periodic tensor grids.
//!
//! Fields live on equidistant row-major grids (last axis fastest, matching
//! [`crate::models::SampleSet::equidistant`]). The forward transform is
//! normalized so coefficients are trigonometric-series coefficients:
//! `u(x) = Σ_k c_k exp(i k̃ · (x − lo))` with `k̃ = 2π k / L` per axis.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct GridFft {
    n: Vec<usize>,
    lengths: Vec<f64>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl GridFft {
    pub fn new(n: &[usize], lengths: &[f64]) -> Self {
        assert_eq!(n.len(), lengths.len());
        let mut planner = FftPlanner::new();
        let fwd = n.iter().map(|&len| planner.plan_fft_forward(len)).collect();
        let inv = n.iter().map(|&len| planner.plan_fft_inverse(len)).collect();
        Self { n: n.to_vec(), lengths: lengths.to_vec(), fwd, inv }
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.n
    }

    pub fn total(&self) -> usize {
        self.n.iter().product()
    }

    /// Signed mode index for slot `idx` along `axis`.
    pub fn mode(&self, axis: usize, idx: usize) -> i64 {
        let n = self.n[axis];
        if idx <= n / 2 { idx as i64 } else { idx as i64 - n as i64 }
    }

    /// Physical wavenumber `2π k / L` for slot `idx` along `axis`.
    pub fn wavenumber(&self, axis: usize, idx: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.mode(axis, idx) as f64 / self.lengths[axis]
    }

    /// Normalized forward transform of a real field.
    pub fn forward(&self, phys: &[f64]) -> Vec<Complex64> {
        assert_eq!(phys.len(), self.total());
        let mut data: Vec<Complex64> =
            phys.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for axis in 0..self.dim() {
            self.transform_axis(&mut data, axis, true);
        }
        let scale = 1.0 / self.total() as f64;
        for c in &mut data {
            *c *= scale;
        }
        data
    }

    /// Inverse transform back to a real field (imaginary parts are dropped;
    /// they are roundoff for conjugate-symmetric spectra).
    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        assert_eq!(spec.len(), self.total());
        let mut data = spec.to_vec();
        for axis in 0..self.dim() {
            self.transform_axis(&mut data, axis, false);
        }
        data.into_iter().map(|c| c.re).collect()
    }

    /// Multiply by `i k̃_axis`, the spectral derivative along one axis. The
    /// Nyquist slot (even sizes) is zeroed: its derivative sign is ambiguous
    /// for real data.
    pub fn derivative(&self, spec: &[Complex64], axis: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); spec.len()];
        let n = self.n[axis];
        self.for_each_slot(|flat, idx| {
            let slot = idx[axis];
            if n % 2 == 0 && slot == n / 2 {
                return;
            }
            let k = self.wavenumber(axis, slot);
            out[flat] = Complex64::new(0.0, k) * spec[flat];
        });
        out
    }

    /// Multiply by `−|k̃|²` (the Laplacian symbol).
    pub fn laplacian(&self, spec: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); spec.len()];
        self.for_each_slot(|flat, idx| {
            let mut k_sq = 0.0;
            for (axis, &slot) in idx.iter().enumerate() {
                let k = self.wavenumber(axis, slot);
                k_sq += k * k;
            }
            out[flat] = -k_sq * spec[flat];
        });
        out
    }

    /// Zero every mode with `|k| > n/3` on any axis (the 2/3 rule), so that
    /// pointwise products of filtered fields are alias-free after filtering.
    pub fn dealias(&self, spec: &mut [Complex64]) {
        let cuts: Vec<i64> = self.n.iter().map(|&n| (n / 3) as i64).collect();
        self.for_each_slot(|flat, idx| {
            for (axis, &slot) in idx.iter().enumerate() {
                if self.mode(axis, slot).abs() > cuts[axis] {
                    spec[flat] = Complex64::new(0.0, 0.0);
                    return;
                }
            }
        });
    }

    /// Visit every spectral slot with its flat index and per-axis indices.
    fn for_each_slot(&self, mut f: impl FnMut(usize, &[usize])) {
        let d = self.dim();
        let mut idx = vec![0usize; d];
        for flat in 0..self.total() {
            f(flat, &idx);
            for axis in (0..d).rev() {
                idx[axis] += 1;
                if idx[axis] < self.n[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }

    fn transform_axis(&self, data: &mut [Complex64], axis: usize, forward: bool) {
        let n_axis = self.n[axis];
        let inner: usize = self.n[axis + 1..].iter().product();
        let outer: usize = self.n[..axis].iter().product();
        let fft = if forward { &self.fwd[axis] } else { &self.inv[axis] };
        let mut line = vec![Complex64::new(0.0, 0.0); n_axis];
        for o in 0..outer {
            for i in 0..inner {
                let start = o * n_axis * inner + i;
                for t in 0..n_axis {
                    line[t] = data[start + t * inner];
                }
                fft.process(&mut line);
                for t in 0..n_axis {
                    data[start + t * inner] = line[t];
                }
            }
        }
    }
}
