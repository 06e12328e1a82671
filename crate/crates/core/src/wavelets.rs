//! 2D wavelet transforms over square power-of-two grids and nonlinear
//! coefficient truncation.
//!
//! Both transforms use the pyramid (Mallat) layout: each level filters the
//! rows and then the columns of the current low-pass block, and the recursion
//! continues down to a single DC coefficient. Haar is orthonormal. The 9/7
//! transform is the biorthogonal CDF pair in lifting form with whole-sample
//! symmetric extension; it is only approximately energy preserving.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

/// Lifting constants of the CDF 9/7 factorization.
pub mod cdf97_lifting {
    pub const ALPHA: f64 = -1.586_134_342_059_924;
    pub const BETA: f64 = -0.052_980_118_572_961;
    pub const GAMMA: f64 = 0.882_911_075_530_934;
    pub const DELTA: f64 = 0.443_506_852_043_971;
    /// Low-pass gain after lifting is `√2 / ZETA`.
    pub const ZETA: f64 = 1.149_604_398_860_241;
}

/// Square grid of side `2ⁿ`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub side: usize,
    pub values: Vec<f64>,
}

impl Grid2D {
    pub fn new(side: usize, values: Vec<f64>) -> Self {
        assert!(side.is_power_of_two(), "grid side {side} is not a power of two");
        assert_eq!(values.len(), side * side, "grid data length");
        Grid2D { side, values }
    }

    pub fn zeros(side: usize) -> Self {
        Self::new(side, vec![0.0; side * side])
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Which transform to apply to a grid or a stack of grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wavelet {
    Haar,
    Cdf97,
}

impl Wavelet {
    pub fn forward(self, values: &mut [f64], side: usize) {
        match self {
            Wavelet::Haar => haar2d_in_place(values, side),
            Wavelet::Cdf97 => cdf97_in_place(values, side),
        }
    }

    pub fn inverse(self, values: &mut [f64], side: usize) {
        match self {
            Wavelet::Haar => haar2d_inverse_in_place(values, side),
            Wavelet::Cdf97 => cdf97_inverse_in_place(values, side),
        }
    }

    /// Transforms consecutive `side × side` blocks independently.
    pub fn forward_parts(self, values: &mut [f64], side: usize) {
        for chunk in values.chunks_exact_mut(side * side) {
            self.forward(chunk, side);
        }
    }

    pub fn inverse_parts(self, values: &mut [f64], side: usize) {
        for chunk in values.chunks_exact_mut(side * side) {
            self.inverse(chunk, side);
        }
    }
}

fn haar_step(x: &mut [f64], scratch: &mut [f64]) {
    let half = x.len() / 2;
    for i in 0..half {
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        scratch[i] = (a + b) * FRAC_1_SQRT_2;
        scratch[half + i] = (a - b) * FRAC_1_SQRT_2;
    }
    x.copy_from_slice(&scratch[..x.len()]);
}

fn haar_step_inverse(x: &mut [f64], scratch: &mut [f64]) {
    let half = x.len() / 2;
    for i in 0..half {
        let (a, d) = (x[i], x[half + i]);
        scratch[2 * i] = (a + d) * FRAC_1_SQRT_2;
        scratch[2 * i + 1] = (a - d) * FRAC_1_SQRT_2;
    }
    x.copy_from_slice(&scratch[..x.len()]);
}

fn cdf97_step(x: &mut [f64], scratch: &mut [f64]) {
    use cdf97_lifting::*;
    let n = x.len();
    let half = n / 2;
    let (s, d) = scratch[..n].split_at_mut(half);
    for i in 0..half {
        s[i] = x[2 * i];
        d[i] = x[2 * i + 1];
    }
    predict(s, d, ALPHA);
    update(s, d, BETA);
    predict(s, d, GAMMA);
    update(s, d, DELTA);
    for v in s.iter_mut() {
        *v *= ZETA;
    }
    for v in d.iter_mut() {
        *v /= ZETA;
    }
    x.copy_from_slice(&scratch[..n]);
}

fn cdf97_step_inverse(x: &mut [f64], scratch: &mut [f64]) {
    use cdf97_lifting::*;
    let n = x.len();
    let half = n / 2;
    {
        let (s, d) = x.split_at_mut(half);
        for v in s.iter_mut() {
            *v /= ZETA;
        }
        for v in d.iter_mut() {
            *v *= ZETA;
        }
        update(s, d, -DELTA);
        predict(s, d, -GAMMA);
        update(s, d, -BETA);
        predict(s, d, -ALPHA);
    }
    for i in 0..half {
        scratch[2 * i] = x[i];
        scratch[2 * i + 1] = x[half + i];
    }
    x.copy_from_slice(&scratch[..n]);
}

/// `d[i] += c (s[i] + s[i+1])`, mirroring `s[half] = s[half-1]`.
#[inline]
fn predict(s: &[f64], d: &mut [f64], c: f64) {
    let last = s.len() - 1;
    for i in 0..d.len() {
        d[i] += c * (s[i] + s[(i + 1).min(last)]);
    }
}

/// `s[i] += c (d[i-1] + d[i])`, mirroring `d[-1] = d[0]`.
#[inline]
fn update(s: &mut [f64], d: &[f64], c: f64) {
    for i in 0..s.len() {
        s[i] += c * (d[i.saturating_sub(1)] + d[i]);
    }
}

type Step = fn(&mut [f64], &mut [f64]);

fn forward_pyramid(values: &mut [f64], side: usize, step: Step) {
    assert!(side.is_power_of_two(), "grid side {side} is not a power of two");
    assert_eq!(values.len(), side * side);
    let mut scratch = vec![0.0; side];
    let mut column = vec![0.0; side];
    let mut size = side;
    while size >= 2 {
        for row in 0..size {
            step(&mut values[row * side..row * side + size], &mut scratch);
        }
        for col in 0..size {
            for row in 0..size {
                column[row] = values[row * side + col];
            }
            step(&mut column[..size], &mut scratch);
            for row in 0..size {
                values[row * side + col] = column[row];
            }
        }
        size /= 2;
    }
}

fn inverse_pyramid(values: &mut [f64], side: usize, step: Step) {
    assert!(side.is_power_of_two(), "grid side {side} is not a power of two");
    assert_eq!(values.len(), side * side);
    let mut scratch = vec![0.0; side];
    let mut column = vec![0.0; side];
    let mut size = 2;
    while size <= side {
        for col in 0..size {
            for row in 0..size {
                column[row] = values[row * side + col];
            }
            step(&mut column[..size], &mut scratch);
            for row in 0..size {
                values[row * side + col] = column[row];
            }
        }
        for row in 0..size {
            step(&mut values[row * side..row * side + size], &mut scratch);
        }
        size *= 2;
    }
}

pub fn haar2d_in_place(values: &mut [f64], side: usize) {
    forward_pyramid(values, side, haar_step);
}

pub fn haar2d_inverse_in_place(values: &mut [f64], side: usize) {
    inverse_pyramid(values, side, haar_step_inverse);
}

pub fn cdf97_in_place(values: &mut [f64], side: usize) {
    forward_pyramid(values, side, cdf97_step);
}

pub fn cdf97_inverse_in_place(values: &mut [f64], side: usize) {
    inverse_pyramid(values, side, cdf97_step_inverse);
}

pub fn haar2d(grid: &Grid2D) -> Grid2D {
    let mut out = grid.clone();
    haar2d_in_place(&mut out.values, out.side);
    out
}

pub fn haar2d_inverse(grid: &Grid2D) -> Grid2D {
    let mut out = grid.clone();
    haar2d_inverse_in_place(&mut out.values, out.side);
    out
}

pub fn cdf97(grid: &Grid2D) -> Grid2D {
    let mut out = grid.clone();
    cdf97_in_place(&mut out.values, out.side);
    out
}

pub fn cdf97_inverse(grid: &Grid2D) -> Grid2D {
    let mut out = grid.clone();
    cdf97_inverse_in_place(&mut out.values, out.side);
    out
}

/// Retained wavelet coefficients of a signal of length `len`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseSpectrum {
    pub len: usize,
    /// Ascending, unique.
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    /// Energy of every coefficient before truncation.
    pub total_energy: f64,
    /// Energy of the retained coefficients.
    pub kept_energy: f64,
}

impl SparseSpectrum {
    /// All non-zero coefficients of a dense vector.
    pub fn from_dense(coeffs: &[f64]) -> Self {
        let mut s = SparseSpectrum { len: coeffs.len(), ..Default::default() };
        for (i, &v) in coeffs.iter().enumerate() {
            s.total_energy += v * v;
            if v != 0.0 {
                s.indices.push(i as u32);
                s.values.push(v);
            }
        }
        s.kept_energy = s.total_energy;
        s
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    pub fn get(&self, index: u32) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(p) => self.values[p],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Adds `scale · self` into a dense accumulator.
    pub fn axpy_into(&self, scale: f64, out: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] += scale * v;
        }
    }
}

/// Indices of non-zero coefficients ordered by descending magnitude, ties by index.
fn magnitude_order(coeffs: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..coeffs.len() as u32).filter(|&i| coeffs[i as usize] != 0.0).collect();
    order.sort_unstable_by(|&a, &b| {
        coeffs[b as usize].abs().total_cmp(&coeffs[a as usize].abs()).then(a.cmp(&b))
    });
    order
}

fn build_spectrum(coeffs: &[f64], mut keep: Vec<u32>, total_energy: f64) -> SparseSpectrum {
    keep.sort_unstable();
    let values: Vec<f64> = keep.iter().map(|&i| coeffs[i as usize]).collect();
    let kept_energy = values.iter().map(|v| v * v).sum();
    SparseSpectrum { len: coeffs.len(), indices: keep, values, total_energy, kept_energy }
}

fn energy(coeffs: &[f64]) -> f64 {
    coeffs.iter().map(|v| v * v).sum()
}

/// Keeps the `n` largest-magnitude coefficients (ties go to the lower index).
/// Exact zeros are never stored.
pub fn compress_top_n(coeffs: &[f64], n: usize) -> SparseSpectrum {
    let total = energy(coeffs);
    let mut candidates: Vec<u32> = (0..coeffs.len() as u32).filter(|&i| coeffs[i as usize] != 0.0).collect();
    if n < candidates.len() {
        let cmp = |a: &u32, b: &u32| {
            coeffs[*b as usize].abs().total_cmp(&coeffs[*a as usize].abs()).then(a.cmp(b))
        };
        if n == 0 {
            candidates.clear();
        } else {
            candidates.select_nth_unstable_by(n - 1, cmp);
            candidates.truncate(n);
        }
    }
    build_spectrum(coeffs, candidates, total)
}

/// Keeps the shortest magnitude-sorted prefix whose energy reaches
/// `fraction` of the total.
pub fn compress_energy(coeffs: &[f64], fraction: f64) -> SparseSpectrum {
    let total = energy(coeffs);
    let target = fraction.clamp(0.0, 1.0) * total;
    let order = magnitude_order(coeffs);
    let mut kept = 0.0;
    let mut count = 0;
    if fraction >= 1.0 {
        count = order.len();
    } else {
        while count < order.len() && kept < target {
            let v = coeffs[order[count] as usize];
            kept += v * v;
            count += 1;
        }
    }
    let mut keep = order;
    keep.truncate(count);
    build_spectrum(coeffs, keep, total)
}

/// Inner product of two spectra over their shared indices.
pub fn sparse_dot(a: &SparseSpectrum, b: &SparseSpectrum) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut acc = 0.0;
    while i < a.indices.len() && j < b.indices.len() {
        match a.indices[i].cmp(&b.indices[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                acc += a.values[i] * b.values[j];
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// `‖x‖₂` helper for tests and validation.
pub fn l2_norm(x: &[f64]) -> f64 {
    sqrt(energy(x))
}
