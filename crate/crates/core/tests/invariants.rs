use lucent_core::dipole::{fresnel_transmittance, DipoleDerived};
use lucent_core::wavelets::{compress_energy, compress_top_n, l2_norm, sparse_dot, SparseSpectrum, Wavelet};
use proptest::prelude::*;

fn grid() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1u32..=6).prop_flat_map(|p| {
        let side = 1usize << p;
        (Just(side), prop::collection::vec(-1e3f64..1e3, side * side))
    })
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2_norm(&d) / l2_norm(b).max(1e-300)
}

proptest! {
    #[test]
    fn wavelets_reconstruct((side, x) in grid()) {
        for w in [Wavelet::Haar, Wavelet::Cdf97] {
            let mut y = x.clone();
            w.forward(&mut y, side);
            w.inverse(&mut y, side);
            prop_assert!(rel_err(&y, &x) < 1e-9);
        }
    }

    #[test]
    fn haar_preserves_energy((side, x) in grid()) {
        let mut y = x.clone();
        Wavelet::Haar.forward(&mut y, side);
        let (a, b) = (l2_norm(&x).powi(2), l2_norm(&y).powi(2));
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn energy_truncation_is_minimal(x in prop::collection::vec(-10f64..10.0, 1..200), f in 0.0f64..1.0) {
        let s = compress_energy(&x, f);
        let target = f * s.total_energy;
        prop_assert!(s.kept_energy >= target * (1.0 - 1e-12));
        // dropping the smallest kept coefficient falls short of the target
        if let Some(min) = s.values.iter().map(|v| v * v).min_by(f64::total_cmp) {
            prop_assert!(s.kept_energy - min < target || s.nnz() == 1);
        }
        let mut rest = x.clone();
        for (i, v) in s.iter() {
            rest[i as usize] -= v;
        }
        let dropped = l2_norm(&rest).powi(2);
        prop_assert!((dropped - (s.total_energy - s.kept_energy)).abs() <= 1e-9 * s.total_energy.max(1.0));
    }

    #[test]
    fn top_n_keeps_the_largest(x in prop::collection::vec(-10f64..10.0, 1..200), n in 0usize..50) {
        let s = compress_top_n(&x, n);
        prop_assert!(s.nnz() <= n);
        prop_assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
        let smallest_kept = s.values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let dense = s.to_dense();
        for (i, v) in x.iter().enumerate() {
            if dense[i] == 0.0 && s.nnz() == n {
                prop_assert!(v.abs() <= smallest_kept);
            }
        }
    }

    #[test]
    fn sparse_dot_matches_dense(
        a in prop::collection::vec(prop_oneof![Just(0.0), -5f64..5.0], 64),
        b in prop::collection::vec(prop_oneof![Just(0.0), -5f64..5.0], 64),
    ) {
        let dense: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let got = sparse_dot(&SparseSpectrum::from_dense(&a), &SparseSpectrum::from_dense(&b));
        prop_assert!((got - dense).abs() < 1e-9);
    }

    #[test]
    fn profile_positive_and_decreasing(
        ss in 0.1f64..10.0, sa in 0.001f64..1.0, eta in 1.05f64..1.8, r in 0.0f64..20.0, dr in 1e-3f64..1.0,
    ) {
        let d = DipoleDerived::from_coefficients(ss, sa, eta);
        let (a, b) = (d.eval_rd(r), d.eval_rd(r + dr));
        prop_assert!(a > 0.0 && a.is_finite());
        prop_assert!(b < a);
    }

    #[test]
    fn fresnel_transmittance_is_a_fraction(eta in 1.0f64..2.5, c in -1.0f64..1.0) {
        let t = fresnel_transmittance(eta, c);
        prop_assert!((0.0..=1.0).contains(&t));
        if c > 0.0 {
            prop_assert!(fresnel_transmittance(eta, c.max(0.999)) >= t - 1e-12);
        }
    }
}
