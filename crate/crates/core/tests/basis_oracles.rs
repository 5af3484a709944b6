use amswarm_core::basis::{build_basis, build_time_grid, BasisKind};
use proptest::prelude::*;

/// de Casteljau evaluation of a Bernstein polynomial with control points `c`.
fn de_casteljau(c: &[f64], tau: f64) -> f64 {
    let mut b = c.to_vec();
    for k in 1..b.len() {
        for i in 0..b.len() - k {
            b[i] = (1.0 - tau) * b[i] + tau * b[i + 1];
        }
    }
    b[0]
}

fn horner(c: &[f64], tau: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, ci| acc * tau + ci)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #[test]
    fn bernstein_matches_de_casteljau(
        c in prop::collection::vec(-5.0f64..5.0, 6..14),
        tau in 0.0f64..=1.0,
    ) {
        let degree = c.len() - 1;
        let v = dot(&BasisKind::Bernstein.evaluate(degree, tau, 0), &c);
        prop_assert!((v - de_casteljau(&c, tau)).abs() < 1e-10);
    }

    #[test]
    fn monomial_matches_horner(
        c in prop::collection::vec(-5.0f64..5.0, 6..14),
        tau in 0.0f64..=1.0,
    ) {
        let degree = c.len() - 1;
        let v = dot(&BasisKind::Monomial.evaluate(degree, tau, 0), &c);
        prop_assert!((v - horner(&c, tau)).abs() < 1e-10);
    }

    #[test]
    fn bernstein_partition_of_unity(degree in 5usize..16, tau in 0.0f64..=1.0) {
        let s: f64 = BasisKind::Bernstein.evaluate(degree, tau, 0).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        let ds: f64 = BasisKind::Bernstein.evaluate(degree, tau, 1).iter().sum();
        prop_assert!(ds.abs() < 1e-9);
    }
}

#[test]
fn derivatives_match_central_differences() {
    let h = 1e-5;
    for kind in [BasisKind::Bernstein, BasisKind::Monomial] {
        for degree in [5, 8, 10] {
            for &tau in &[0.1, 0.37, 0.5, 0.82] {
                let lo = kind.evaluate(degree, tau - h, 0);
                let hi = kind.evaluate(degree, tau + h, 0);
                let mid = kind.evaluate(degree, tau, 0);
                let d1 = kind.evaluate(degree, tau, 1);
                let d2 = kind.evaluate(degree, tau, 2);
                for k in 0..=degree {
                    let fd1 = (hi[k] - lo[k]) / (2.0 * h);
                    let fd2 = (hi[k] - 2.0 * mid[k] + lo[k]) / (h * h);
                    assert!(
                        (d1[k] - fd1).abs() < 1e-6 * (1.0 + d1[k].abs()),
                        "{kind:?} d1 k={k}"
                    );
                    assert!(
                        (d2[k] - fd2).abs() < 1e-3 * (1.0 + d2[k].abs()),
                        "{kind:?} d2 k={k}"
                    );
                }
            }
        }
    }
}

#[test]
fn matrices_scale_with_duration() {
    let grid = build_time_grid(40, 5.0).unwrap();
    let b = build_basis(&grid, 10, BasisKind::Bernstein).unwrap();
    assert_eq!(b.p.shape(), (40, 11));
    for (r, &t) in grid.samples().iter().enumerate() {
        let tau = t / 5.0;
        let d1 = BasisKind::Bernstein.evaluate(10, tau, 1);
        let d2 = BasisKind::Bernstein.evaluate(10, tau, 2);
        for k in 0..11 {
            assert!((b.pdot[(r, k)] - d1[k] / 5.0).abs() < 1e-12);
            assert!((b.pddot[(r, k)] - d2[k] / 25.0).abs() < 1e-12);
        }
    }
}

#[test]
fn quadratic_in_time_has_constant_acceleration() {
    // x(t) = t^2 on [0, T] has Bernstein control points from degree elevation
    let duration = 4.0;
    let grid = build_time_grid(25, duration).unwrap();
    let degree = 6;
    let b = build_basis(&grid, degree, BasisKind::Bernstein).unwrap();
    // tau^2 = sum_k C(k,2)/C(N,2) b_k
    let n = degree as f64;
    let c: Vec<f64> = (0..=degree)
        .map(|k| {
            let k = k as f64;
            duration * duration * k * (k - 1.0) / (n * (n - 1.0))
        })
        .collect();
    let c = nalgebra::DVector::from_vec(c);
    let pos = &b.p * &c;
    let acc = &b.pddot * &c;
    for (r, &t) in grid.samples().iter().enumerate() {
        assert!((pos[r] - t * t).abs() < 1e-10);
        assert!((acc[r] - 2.0).abs() < 1e-9);
    }
}

#[test]
fn fingerprint_hash_tracks_inputs() {
    let g = build_time_grid(50, 10.0).unwrap();
    let a = build_basis(&g, 10, BasisKind::Bernstein).unwrap();
    let same = build_basis(&g, 10, BasisKind::Bernstein).unwrap();
    let other_degree = build_basis(&g, 9, BasisKind::Bernstein).unwrap();
    let other_kind = build_basis(&g, 10, BasisKind::Monomial).unwrap();
    let other_t = build_basis(&build_time_grid(50, 8.0).unwrap(), 10, BasisKind::Bernstein).unwrap();
    assert_eq!(a.fingerprint_hash(), same.fingerprint_hash());
    for b in [&other_degree, &other_kind, &other_t] {
        assert_ne!(a.fingerprint_hash(), b.fingerprint_hash());
    }
}
