//! Self-check: wavelet and PCA property suites plus the brute-force oracle
//! comparison of a rendered scene.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lucent_core::basisgen::{assemble_matrix, build_sample_grid, error_report, project_material, DiffusionBasis};
use lucent_core::dipole::derive_dipole;
use lucent_core::math::Rgb;
use lucent_core::runtime::{oracle_radiance, NullClock, Scene};
use lucent_core::wavelets::{compress_energy, l2_norm, Wavelet};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Relative RMS, absolute and relative maximum error of a radiance field.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorMetrics {
    pub relative_rms: f64,
    pub max_abs: f64,
    /// `max_abs` over the largest reference value.
    pub max_rel: f64,
}

pub fn error_metrics(approx: &[Rgb], reference: &[Rgb]) -> ErrorMetrics {
    let (mut num, mut den, mut max_abs, mut peak) = (0.0, 0.0, 0.0f64, 0.0f64);
    for (a, r) in approx.iter().zip(reference) {
        for c in 0..3 {
            let d = a[c] - r[c];
            num += d * d;
            den += r[c] * r[c];
            max_abs = max_abs.max(d.abs());
            peak = peak.max(r[c].abs());
        }
    }
    ErrorMetrics {
        relative_rms: if den > 0.0 { (num / den).sqrt() } else { num.sqrt() },
        max_abs,
        max_rel: if peak > 0.0 { max_abs / peak } else { max_abs },
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Against the kernel the basis represents (compression error only).
    pub compression: ErrorMetrics,
    /// Against the exact dipole kernel.
    pub end_to_end: ErrorMetrics,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn check(&mut self, name: &str, value: f64, bound: f64) {
        self.checks.push(Check { name: name.into(), value, bound, passed: value < bound });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<44} {:>12.4e}  (bound {:.1e})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.bound
            )?;
        }
        for (label, m) in [("compression", self.compression), ("end-to-end", self.end_to_end)] {
            writeln!(
                f,
                "{label:<12} relative RMS {:.4e}  max abs {:.4e}  max rel {:.4e}",
                m.relative_rms, m.max_abs, m.max_rel
            )?;
        }
        Ok(())
    }
}

/// Perfect reconstruction, Parseval and the truncation identity on random grids.
pub fn wavelet_checks(report: &mut ValidationReport, max_side: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut recon_haar, mut recon_97, mut parseval, mut identity) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut side = 2;
    while side <= max_side {
        let x: Vec<f64> = (0..side * side).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = l2_norm(&x);
        for w in [Wavelet::Haar, Wavelet::Cdf97] {
            let mut y = x.clone();
            w.forward(&mut y, side);
            if w == Wavelet::Haar {
                parseval = parseval.max((l2_norm(&y).powi(2) - norm * norm).abs() / (norm * norm));
                let s = compress_energy(&y, 0.9);
                let mut rest = y.clone();
                for (i, v) in s.iter() {
                    rest[i as usize] -= v;
                }
                let dropped = l2_norm(&rest).powi(2);
                identity = identity.max((dropped - (s.total_energy - s.kept_energy)).abs() / s.total_energy);
            }
            w.inverse(&mut y, side);
            let err = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / norm;
            match w {
                Wavelet::Haar => recon_haar = recon_haar.max(err),
                Wavelet::Cdf97 => recon_97 = recon_97.max(err),
            }
        }
        side *= 2;
    }
    report.check("Haar perfect reconstruction", recon_haar, 1e-9);
    report.check("CDF 9/7 perfect reconstruction", recon_97, 1e-9);
    report.check("Haar Parseval", parseval, 1e-10);
    report.check("truncation energy identity", identity, 1e-9);
}

/// Grid-wide relative L² error of the basis in use.
pub fn pca_check(report: &mut ValidationReport, basis: &DiffusionBasis, grid: &lucent_core::basisgen::GridConfig) -> Result<()> {
    let matrix = assemble_matrix(&build_sample_grid(grid)?);
    let row = error_report(basis, &matrix, &[basis.count])?;
    let bound = if basis.count >= 15 { 1e-4 } else if basis.count >= 12 { 1e-3 } else { 1e-2 };
    report.check(&format!("PCA relative L2 error, K={}", basis.count), row[0].l2_rel, bound);
    Ok(())
}

/// Relights `scene` and compares against brute-force sums with the
/// represented kernel and with the exact dipole kernel.
pub fn oracle_checks(report: &mut ValidationReport, scene: &mut Scene, compression_bound: f64) -> Result<()> {
    let frame = scene.relight(&NullClock)?;
    let material = *scene.material();
    let viewer = scene.camera().position;
    let weights = project_material(&scene.basis, &material);
    let basis = scene.basis.clone();
    let represented = move |c: usize, r: f64| basis.reconstruct(&weights.s[c], r);
    let want = oracle_radiance(&scene.samples, scene.irradiance(), &represented, material.eta, viewer);
    report.compression = error_metrics(&frame.unclamped, &want);
    let dipoles = [0, 1, 2].map(|c| derive_dipole(&material, c));
    let exact = move |c: usize, r: f64| dipoles[c].eval_rd(r);
    let want = oracle_radiance(&scene.samples, scene.irradiance(), &exact, material.eta, viewer);
    report.end_to_end = error_metrics(&frame.unclamped, &want);
    report.check("oracle relative RMS, compression", report.compression.relative_rms, compression_bound);
    report.check("oracle relative RMS, end-to-end", report.end_to_end.relative_rms, 0.02);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_of_identical_fields_are_zero() {
        let a = vec![[1.0, 2.0, 3.0]; 4];
        assert_eq!(error_metrics(&a, &a), ErrorMetrics::default());
        let b: Vec<Rgb> = a.iter().map(|v| v.map(|x| x * 1.1)).collect();
        let m = error_metrics(&b, &a);
        assert!((m.relative_rms - 0.1).abs() < 1e-12);
        assert!((m.max_rel - 0.1).abs() < 1e-12);
    }

    #[test]
    fn wavelet_suite_passes() {
        let mut r = ValidationReport::default();
        wavelet_checks(&mut r, 64, 1);
        assert!(r.passed(), "{r}");
        assert_eq!(r.checks.len(), 4);
    }
}
