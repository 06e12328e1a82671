//! Material-independent radial bases for the dipole profile.
//!
//! `R_d(r, σ)` is sampled on a log-spaced distance grid for a lattice of
//! materials, weighted by the square root of the trapezoid quadrature weights
//! and factored by SVD. The leading right singular vectors, un-weighted, are
//! the radial bases `b_k(r)`; they are orthonormal under the quadrature inner
//! product, so the weights `s_k(σ)` of any material are plain inner products.

use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use nalgebra::DMatrix;

use crate::dipole::{DipoleDerived, OpticalMaterial};
use crate::error::{Error, Result};
use crate::math::{exp, ln, sqrt};
use crate::par;

/// Rectangular region of `(σ'_s, σ_a)` space covered by a basis, mm⁻¹.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaBox {
    pub sigma_s_prime: (f64, f64),
    pub sigma_a: (f64, f64),
}

impl SigmaBox {
    pub fn contains(&self, sigma_s_prime: f64, sigma_a: f64) -> bool {
        sigma_s_prime >= self.sigma_s_prime.0
            && sigma_s_prime <= self.sigma_s_prime.1
            && sigma_a >= self.sigma_a.0
            && sigma_a <= self.sigma_a.1
    }

    /// Clamps every channel into the box. The flag reports whether anything moved.
    pub fn clamp(&self, material: &OpticalMaterial) -> (OpticalMaterial, bool) {
        let mut out = *material;
        let mut clamped = false;
        for c in 0..3 {
            let s = material.sigma_s_prime[c].clamp(self.sigma_s_prime.0, self.sigma_s_prime.1);
            let a = material.sigma_a[c].clamp(self.sigma_a.0, self.sigma_a.1);
            clamped |= s != material.sigma_s_prime[c] || a != material.sigma_a[c];
            out.sigma_s_prime[c] = s;
            out.sigma_a[c] = a;
        }
        (out, clamped)
    }

    fn corners(&self) -> [(f64, f64); 4] {
        let (s0, s1) = self.sigma_s_prime;
        let (a0, a1) = self.sigma_a;
        [(s0, a0), (s0, a1), (s1, a0), (s1, a1)]
    }
}

impl Default for SigmaBox {
    fn default() -> Self {
        SigmaBox { sigma_s_prime: (0.1, 10.0), sigma_a: (0.001, 1.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub sigma_box: SigmaBox,
    pub sigma_s_prime_count: usize,
    pub sigma_a_count: usize,
    pub r_count: usize,
    /// First positive distance node; the grid is log-spaced from here to `r_max`.
    pub r_first: f64,
    /// `r_max` is placed where `R_d(r_max) / R_d(0)` drops below this for every box corner.
    pub decay_ratio: f64,
    pub eta: f64,
    pub g: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            sigma_box: SigmaBox::default(),
            sigma_s_prime_count: 32,
            sigma_a_count: 32,
            r_count: 512,
            r_first: 1e-3,
            decay_ratio: 1e-9,
            eta: 1.3,
            g: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    pub r_nodes: Vec<f64>,
    /// Trapezoid weights matching `r_nodes`.
    pub r_weights: Vec<f64>,
    /// `(σ'_s, σ_a)` pairs.
    pub sigma_nodes: Vec<(f64, f64)>,
    pub sigma_box: SigmaBox,
    pub eta: f64,
    pub g: f64,
}

fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (l0, l1) = (ln(lo), ln(hi));
    (0..count)
        .map(|i| {
            if i == count - 1 {
                hi
            } else {
                exp(l0 + (l1 - l0) * i as f64 / (count - 1) as f64)
            }
        })
        .collect()
}

/// Trapezoid rule weights for arbitrary ascending nodes.
pub fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|j| {
            let left = if j > 0 { nodes[j] - nodes[j - 1] } else { 0.0 };
            let right = if j + 1 < n { nodes[j + 1] - nodes[j] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Distance at which `R_d(r) / R_d(0)` falls below `ratio`, found by bisection.
pub fn decay_radius(derived: &DipoleDerived, ratio: f64) -> f64 {
    let target = ratio * derived.eval_rd(0.0);
    let mut hi = 1.0;
    while derived.eval_rd(hi) >= target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if derived.eval_rd(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    hi
}

pub fn build_sample_grid(config: &GridConfig) -> Result<SampleGrid> {
    let b = &config.sigma_box;
    let ranges = [("sigma_s_prime", b.sigma_s_prime), ("sigma_a", b.sigma_a)];
    for (name, (lo, hi)) in ranges {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidGrid(format!("{name} range [{lo}, {hi}] is empty or inverted")));
        }
    }
    if config.sigma_s_prime_count == 0 || config.sigma_a_count == 0 {
        return Err(Error::InvalidGrid("empty sigma lattice".into()));
    }
    if config.r_count < 3 {
        return Err(Error::InvalidGrid(format!("r_count {} < 3", config.r_count)));
    }
    if !(config.decay_ratio > 0.0 && config.decay_ratio < 1.0) {
        return Err(Error::InvalidGrid(format!("decay ratio {} outside (0, 1)", config.decay_ratio)));
    }
    let r_max = b
        .corners()
        .iter()
        .map(|&(s, a)| decay_radius(&DipoleDerived::from_coefficients(s, a, config.eta), config.decay_ratio))
        .fold(0.0, f64::max);
    if !(config.r_first > 0.0 && config.r_first < r_max) {
        return Err(Error::InvalidGrid(format!(
            "first distance node {} must lie in (0, {r_max})",
            config.r_first
        )));
    }
    let mut r_nodes = Vec::with_capacity(config.r_count);
    r_nodes.push(0.0);
    r_nodes.extend(log_space(config.r_first, r_max, config.r_count - 1));
    let r_weights = trapezoid_weights(&r_nodes);

    let s_axis = log_space(b.sigma_s_prime.0, b.sigma_s_prime.1, config.sigma_s_prime_count);
    let a_axis = log_space(b.sigma_a.0, b.sigma_a.1, config.sigma_a_count);
    let mut sigma_nodes = Vec::with_capacity(s_axis.len() * a_axis.len());
    for &s in &s_axis {
        for &a in &a_axis {
            sigma_nodes.push((s, a));
        }
    }
    Ok(SampleGrid { r_nodes, r_weights, sigma_nodes, sigma_box: *b, eta: config.eta, g: config.g })
}

/// Quadrature-weighted samples of `R_d`, one row per material node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSampleMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `√w_j · R_d(r_j, σ_i)`.
    pub values: Vec<f64>,
    pub sigma_nodes: Vec<(f64, f64)>,
    pub r_nodes: Vec<f64>,
    pub r_weights: Vec<f64>,
    pub sigma_box: SigmaBox,
    pub eta: f64,
    pub g: f64,
}

impl ScatterSampleMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Un-weighted `R_d` sample at `(i, j)`.
    pub fn rd(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j] / sqrt(self.r_weights[j])
    }
}

pub fn assemble_matrix(grid: &SampleGrid) -> ScatterSampleMatrix {
    let cols = grid.r_nodes.len();
    let sqrt_w: Vec<f64> = grid.r_weights.iter().map(|&w| sqrt(w)).collect();
    let rows: Vec<Vec<f64>> = par::map_indexed(grid.sigma_nodes.len(), |i| {
        let (s, a) = grid.sigma_nodes[i];
        let d = DipoleDerived::from_coefficients(s, a, grid.eta);
        grid.r_nodes.iter().zip(&sqrt_w).map(|(&r, &sw)| sw * d.eval_rd(r)).collect()
    });
    ScatterSampleMatrix {
        rows: grid.sigma_nodes.len(),
        cols,
        values: rows.concat(),
        sigma_nodes: grid.sigma_nodes.clone(),
        r_nodes: grid.r_nodes.clone(),
        r_weights: grid.r_weights.clone(),
        sigma_box: grid.sigma_box,
        eta: grid.eta,
        g: grid.g,
    }
}

/// Radial bases sampled on the distance grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionBasis {
    pub r_nodes: Vec<f64>,
    pub r_weights: Vec<f64>,
    /// `count × r_nodes.len()` row-major, quadrature-unweighted.
    pub bases: Vec<f64>,
    /// All singular values of the factorization, descending.
    pub singular_values: Vec<f64>,
    pub count: usize,
    pub sigma_box: SigmaBox,
    pub eta: f64,
    pub g: f64,
}

/// Position of a distance on the node grid: left node index and lerp factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeLocation {
    pub index: usize,
    pub t: f64,
}

impl DiffusionBasis {
    pub fn r_max(&self) -> f64 {
        *self.r_nodes.last().unwrap()
    }

    pub fn node_count(&self) -> usize {
        self.r_nodes.len()
    }

    pub fn basis(&self, k: usize) -> &[f64] {
        let n = self.node_count();
        &self.bases[k * n..(k + 1) * n]
    }

    /// `None` beyond `r_max`.
    pub fn locate(&self, r: f64) -> Option<NodeLocation> {
        let n = self.node_count();
        if !(r >= 0.0) || r > self.r_max() {
            return None;
        }
        let upper = self.r_nodes.partition_point(|&x| x <= r);
        let index = upper.saturating_sub(1);
        if index + 1 >= n {
            return Some(NodeLocation { index: n - 1, t: 0.0 });
        }
        let (r0, r1) = (self.r_nodes[index], self.r_nodes[index + 1]);
        Some(NodeLocation { index, t: (r - r0) / (r1 - r0) })
    }

    #[inline]
    pub fn eval_at(&self, k: usize, loc: NodeLocation) -> f64 {
        let b = self.basis(k);
        if loc.t == 0.0 {
            b[loc.index]
        } else {
            b[loc.index] + loc.t * (b[loc.index + 1] - b[loc.index])
        }
    }

    /// Linear interpolation of `b_k`; zero beyond `r_max`.
    pub fn eval_basis(&self, k: usize, r: f64) -> f64 {
        match self.locate(r) {
            Some(loc) => self.eval_at(k, loc),
            None => 0.0,
        }
    }

    /// Keeps the first `count` bases.
    pub fn truncated(&self, count: usize) -> Result<DiffusionBasis> {
        if count == 0 || count > self.count {
            return Err(Error::BasisCount { requested: count, available: self.count });
        }
        let n = self.node_count();
        Ok(DiffusionBasis {
            bases: self.bases[..count * n].to_vec(),
            count,
            ..self.clone()
        })
    }

    /// `s_k = ⟨R_d(·, σ), b_k⟩_w` for one channel's dipole constants.
    pub fn project(&self, derived: &DipoleDerived) -> Vec<f64> {
        let profile: Vec<f64> = self
            .r_nodes
            .iter()
            .zip(&self.r_weights)
            .map(|(&r, &w)| w * derived.eval_rd(r))
            .collect();
        (0..self.count)
            .map(|k| self.basis(k).iter().zip(&profile).map(|(b, p)| b * p).sum())
            .collect()
    }

    /// `Σ_k s_k b_k(r)` using the first `weights.len()` bases.
    pub fn reconstruct(&self, weights: &[f64], r: f64) -> f64 {
        match self.locate(r) {
            Some(loc) => weights.iter().enumerate().map(|(k, s)| s * self.eval_at(k, loc)).sum(),
            None => 0.0,
        }
    }

    /// Weighted relative L² error of the `K = self.count` reconstruction of one
    /// material profile on the node grid.
    pub fn relative_error(&self, derived: &DipoleDerived) -> f64 {
        let s = self.project(derived);
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, (&r, &w)) in self.r_nodes.iter().zip(&self.r_weights).enumerate() {
            let exact = derived.eval_rd(r);
            let approx: f64 = s.iter().enumerate().map(|(k, sk)| sk * self.basis(k)[j]).sum();
            num += w * (approx - exact) * (approx - exact);
            den += w * exact * exact;
        }
        sqrt(num / den)
    }

    /// Gram matrix of the bases under the quadrature inner product.
    pub fn gram(&self) -> Vec<f64> {
        let k = self.count;
        let mut g = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                let v: f64 = self
                    .basis(i)
                    .iter()
                    .zip(self.basis(j))
                    .zip(&self.r_weights)
                    .map(|((a, b), w)| a * b * w)
                    .sum();
                g[i * k + j] = v;
                g[j * k + i] = v;
            }
        }
        g
    }
}

/// SVD of the sample matrix, keeping the top `count` right singular vectors.
pub fn decompose(matrix: &ScatterSampleMatrix, count: usize) -> Result<DiffusionBasis> {
    let rank = matrix.rows.min(matrix.cols);
    if count == 0 || count > rank {
        return Err(Error::BasisCount { requested: count, available: rank });
    }
    let m = DMatrix::from_row_slice(matrix.rows, matrix.cols, &matrix.values);
    let svd = m
        .try_svd(false, true, f64::EPSILON, 100_000)
        .ok_or(Error::SvdNoConvergence)?;
    let v_t = svd.v_t.ok_or(Error::SvdNoConvergence)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();

    let n = matrix.cols;
    let inv_sqrt_w: Vec<f64> = matrix.r_weights.iter().map(|&w| 1.0 / sqrt(w)).collect();
    let mut bases = Vec::with_capacity(count * n);
    for &row in order.iter().take(count) {
        let v: Vec<f64> = (0..n).map(|j| v_t[(row, j)]).collect();
        let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let first = v.iter().find(|x| x.abs() > 1e-9 * peak).copied().unwrap_or(1.0);
        let sign = if first < 0.0 { -1.0 } else { 1.0 };
        bases.extend(v.iter().zip(&inv_sqrt_w).map(|(x, iw)| sign * x * iw));
    }
    Ok(DiffusionBasis {
        r_nodes: matrix.r_nodes.clone(),
        r_weights: matrix.r_weights.clone(),
        bases,
        singular_values,
        count,
        sigma_box: matrix.sigma_box,
        eta: matrix.eta,
        g: matrix.g,
    })
}

/// Per-channel projection weights of a material.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialWeights {
    pub s: [Vec<f64>; 3],
}

pub fn project_material(basis: &DiffusionBasis, material: &OpticalMaterial) -> MaterialWeights {
    let s = core::array::from_fn(|c| basis.project(&crate::dipole::derive_dipole(material, c)));
    MaterialWeights { s }
}

/// Truncation error of the basis over the whole sample grid at one basis count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub count: usize,
    /// Quadrature-weighted Frobenius error relative to the grid's norm.
    pub l2_rel: f64,
    /// Largest absolute pointwise error, mm⁻².
    pub linf_abs: f64,
    /// Largest per-material sup error divided by that material's peak value.
    pub linf_rel: f64,
}

pub fn error_report(basis: &DiffusionBasis, matrix: &ScatterSampleMatrix, counts: &[usize]) -> Result<Vec<ErrorRow>> {
    let max_k = counts.iter().copied().max().unwrap_or(0);
    if let Some(&bad) = counts.iter().find(|&&k| k == 0 || k > basis.count) {
        return Err(Error::BasisCount { requested: bad, available: basis.count });
    }
    if matrix.cols != basis.node_count() {
        return Err(Error::DimensionMismatch { expected: basis.node_count(), actual: matrix.cols });
    }
    let n = matrix.cols;
    // per-row partial sums: (norm², one (weighted err², max abs err) per requested count, peak)
    type RowSums = (f64, Vec<(f64, f64)>, f64);
    let per_row: Vec<RowSums> = par::map_indexed(matrix.rows, |i| {
        let exact: Vec<f64> = (0..n).map(|j| matrix.rd(i, j)).collect();
        let weighted: Vec<f64> = exact.iter().zip(&basis.r_weights).map(|(e, w)| e * w).collect();
        let norm2: f64 = exact.iter().zip(&weighted).map(|(e, we)| e * we).sum();
        let peak = exact.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut approx = vec![0.0; n];
        let mut out = Vec::with_capacity(counts.len());
        let mut done = 0;
        let mut sorted: Vec<usize> = counts.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut at_count = Vec::with_capacity(sorted.len());
        for k in 0..max_k {
            let b = basis.basis(k);
            let s: f64 = b.iter().zip(&weighted).map(|(x, y)| x * y).sum();
            for (a, x) in approx.iter_mut().zip(b) {
                *a += s * x;
            }
            while done < sorted.len() && sorted[done] == k + 1 {
                let mut e2 = 0.0;
                let mut emax = 0.0f64;
                for j in 0..n {
                    let e = approx[j] - exact[j];
                    e2 += basis.r_weights[j] * e * e;
                    emax = emax.max(e.abs());
                }
                at_count.push((sorted[done], (e2, emax)));
                done += 1;
            }
        }
        for &c in counts {
            let (_, v) = at_count.iter().find(|(k, _)| *k == c).unwrap();
            out.push(*v);
        }
        (norm2, out, peak)
    });
    let total_norm2: f64 = per_row.iter().map(|r| r.0).sum();
    Ok(counts
        .iter()
        .enumerate()
        .map(|(ci, &count)| {
            let mut e2 = 0.0;
            let mut linf_abs = 0.0f64;
            let mut linf_rel = 0.0f64;
            for (_, errs, peak) in &per_row {
                let (re2, rmax) = errs[ci];
                e2 += re2;
                linf_abs = linf_abs.max(rmax);
                linf_rel = linf_rel.max(rmax / peak);
            }
            ErrorRow { count, l2_rel: sqrt(e2 / total_norm2), linf_abs, linf_rel }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GridConfig {
        GridConfig { sigma_s_prime_count: 8, sigma_a_count: 8, r_count: 96, ..GridConfig::default() }
    }

    #[test]
    fn default_grid_shape() {
        let g = build_sample_grid(&GridConfig::default()).unwrap();
        assert_eq!(g.r_nodes.len(), 512);
        assert_eq!(g.r_nodes[0], 0.0);
        assert_eq!(g.sigma_nodes.len(), 1024);
        assert!(g.r_nodes.windows(2).all(|w| w[0] < w[1]));
        let b = g.sigma_box;
        assert!(g.sigma_nodes.iter().all(|&(s, a)| b.contains(s, a)));
    }

    #[test]
    fn r_max_reaches_decay_target_for_most_translucent_corner() {
        let g = build_sample_grid(&GridConfig::default()).unwrap();
        let d = DipoleDerived::from_coefficients(0.1, 0.001, 1.3);
        let r_max = *g.r_nodes.last().unwrap();
        assert!(d.eval_rd(r_max) / d.eval_rd(0.0) < 1e-9);
    }

    #[test]
    fn rejects_inverted_range() {
        let mut c = GridConfig::default();
        c.sigma_box.sigma_a = (1.0, 0.001);
        assert!(matches!(build_sample_grid(&c), Err(Error::InvalidGrid(_))));
        let c = GridConfig { sigma_s_prime_count: 0, ..GridConfig::default() };
        assert!(build_sample_grid(&c).is_err());
    }

    #[test]
    fn single_node_matrix_entry() {
        let grid = SampleGrid {
            r_nodes: vec![1.0],
            r_weights: vec![1.0],
            sigma_nodes: vec![(1.0, 0.1)],
            sigma_box: SigmaBox::default(),
            eta: 1.3,
            g: 0.0,
        };
        let m = assemble_matrix(&grid);
        assert_eq!(m.values.len(), 1);
        assert!((m.values[0] - 0.02301).abs() < 1e-4);
    }

    #[test]
    fn identical_sigma_rows_are_identical() {
        let mut grid = build_sample_grid(&small_config()).unwrap();
        grid.sigma_nodes = vec![(2.0, 0.05), (2.0, 0.05)];
        let m = assemble_matrix(&grid);
        assert_eq!(m.row(0), m.row(1));
        assert!(m.values.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn rank_one_matrix() {
        let u = [1.0, 2.0, -0.5, 3.0];
        let v = [0.5, 1.0, 0.25];
        let values: Vec<f64> = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
        let m = ScatterSampleMatrix {
            rows: 4,
            cols: 3,
            values: values.clone(),
            sigma_nodes: vec![(1.0, 0.1); 4],
            r_nodes: vec![0.0, 1.0, 2.0],
            r_weights: vec![1.0; 3],
            sigma_box: SigmaBox::default(),
            eta: 1.3,
            g: 0.0,
        };
        let basis = decompose(&m, 1).unwrap();
        let sv = &basis.singular_values;
        assert!(sv[1..].iter().all(|s| *s < 1e-10 * sv[0]));
        for i in 0..4 {
            let row = &values[i * 3..i * 3 + 3];
            let s: f64 = row.iter().zip(basis.basis(0)).map(|(a, b)| a * b).sum();
            for j in 0..3 {
                assert!((s * basis.basis(0)[j] - row[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bases_orthonormal_and_sign_fixed() {
        let grid = build_sample_grid(&small_config()).unwrap();
        let m = assemble_matrix(&grid);
        let basis = decompose(&m, 20).unwrap();
        let g = basis.gram();
        for i in 0..20 {
            for j in 0..20 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g[i * 20 + j] - target).abs() < 1e-8);
            }
            let b = basis.basis(i);
            let peak = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let first = b.iter().zip(&basis.r_weights).find(|(x, w)| (**x * sqrt(**w)).abs() > 1e-9 * peak);
            assert!(first.is_none_or(|(x, _)| *x > 0.0));
        }
        assert!(basis.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(basis.singular_values.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let grid = build_sample_grid(&small_config()).unwrap();
        let m = assemble_matrix(&grid);
        let basis = decompose(&m, 64).unwrap();
        let report = error_report(&basis, &m, &[64]).unwrap();
        assert!(report[0].l2_rel < 1e-8, "{:?}", report);
    }

    #[test]
    fn eval_basis_interpolation_contract() {
        let grid = build_sample_grid(&small_config()).unwrap();
        let basis = decompose(&assemble_matrix(&grid), 4).unwrap();
        for j in [0, 1, 17, 95] {
            assert_eq!(basis.eval_basis(2, basis.r_nodes[j]), basis.basis(2)[j]);
        }
        assert_eq!(basis.eval_basis(0, basis.r_max() * 1.0001), 0.0);
        let mid = 0.5 * (basis.r_nodes[10] + basis.r_nodes[11]);
        let expect = 0.5 * (basis.basis(1)[10] + basis.basis(1)[11]);
        assert!((basis.eval_basis(1, mid) - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn projection_is_linear_in_profile() {
        let grid = build_sample_grid(&small_config()).unwrap();
        let basis = decompose(&assemble_matrix(&grid), 6).unwrap();
        let d = DipoleDerived::from_coefficients(1.0, 0.1, 1.3);
        let s = basis.project(&d);
        // doubling α' doubles R_d
        let mut doubled = d;
        doubled.alpha_prime *= 2.0;
        let s2 = basis.project(&doubled);
        for (a, b) in s.iter().zip(&s2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn error_report_monotone_in_count() {
        let grid = build_sample_grid(&small_config()).unwrap();
        let m = assemble_matrix(&grid);
        let basis = decompose(&m, 16).unwrap();
        let rows = error_report(&basis, &m, &[4, 8, 12, 16]).unwrap();
        for w in rows.windows(2) {
            assert!(w[0].l2_rel >= w[1].l2_rel);
        }
        assert!(basis.truncated(0).is_err());
        assert!(basis.truncated(17).is_err());
        assert_eq!(basis.truncated(8).unwrap().count, 8);
    }
}
