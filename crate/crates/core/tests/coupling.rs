use std::f64::consts::PI;

use proptest::prelude::*;
use starwave::coupling::{cosine_integral, position_integral, verify, MatrixKind};
use starwave::{CouplingSet, LatticePotentialSpec, SpectralBasis, StarGraph, VerifyMode};

fn trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, points: usize) -> f64 {
    let h = (b - a) / (points - 1) as f64;
    let inner: f64 = (1..points - 1).map(|i| f(a + i as f64 * h)).sum();
    h * (inner + 0.5 * (f(a) + f(b)))
}

fn small_graph() -> StarGraph {
    StarGraph::new(vec![3.0, 3.0 + 2f64.sqrt(), 3.0 + 3f64.sqrt()]).unwrap()
}

#[test]
fn unit_interval_position_entry() {
    // ψ = √2 cos(πx/2); ∫ x ψ² = 1/2 − 2/π².
    let basis = SpectralBasis::new(StarGraph::new(vec![1.0]).unwrap(), 2.0).unwrap();
    let set = CouplingSet::assemble(&basis, &LatticePotentialSpec::new(1.0, 1.0).unwrap()).unwrap();
    let exact = 0.5 - 2.0 / (PI * PI);
    let trap = trapezoid(|x| x * basis.eval(0, 0, x).powi(2), 0.0, 1.0, 1_000_000);
    assert!((set.position[0][(0, 0)] - exact).abs() < 1e-14);
    assert!((trap - exact).abs() < 1e-10);
}

#[test]
fn cosine_entry_against_dense_trapezoid() {
    let basis = SpectralBasis::new(small_graph(), 12.0).unwrap();
    let set = CouplingSet::assemble(&basis, &LatticePotentialSpec::new(1.0, 1.0).unwrap()).unwrap();
    let w = 2.0 * PI;
    let (n, m) = (2, 4);
    let trap: f64 = (0..3)
        .map(|arm| {
            let l = basis.graph().arm_length(arm);
            trapezoid(
                |x| basis.eval(n, arm, x) * (w * x).cos() * basis.eval(m, arm, x),
                0.0,
                l,
                1_000_000,
            )
        })
        .sum();
    let analytic = set.iv_unit[(n, m)];
    assert!(
        (analytic - trap).abs() < 1e-8 * trap.abs().max(1e-2),
        "{analytic} vs {trap}"
    );
}

#[test]
fn full_oracle_pass_on_small_graph() {
    let basis = SpectralBasis::new(small_graph(), 30.0).unwrap();
    let set =
        CouplingSet::assemble(&basis, &LatticePotentialSpec::new(16.7875, 1.0).unwrap()).unwrap();
    let (report, digest) = verify(&basis, &set, VerifyMode::Full).unwrap();
    assert_eq!(digest.mismatches, 0, "first: {:?}", report.first_mismatch());
    let n = basis.len();
    assert_eq!(digest.entries_checked, (2 * 3 + 1) * n * (n + 1) / 2);
    for kind in [
        MatrixKind::CosineUnit,
        MatrixKind::Position,
        MatrixKind::Overlap,
    ] {
        assert!(report.max_rel_err_of(kind) < 1e-8);
    }
    assert!(digest.completeness_defect < 1e-8);
    assert_eq!(digest.symmetry_defect, 0.0);
}

#[test]
fn limit_branches_are_continuous() {
    // k_n − k_m → ω_d: the closed form at a separation of 1e-7 against the
    // Taylor branch at 1e-9, and both against the exact value at 0.
    let (b, l, w) = (7.3, 4.1, 2.0 * PI);
    let far = cosine_integral(b + w + 1e-7, b, l, w);
    let near = cosine_integral(b + w + 1e-9, b, l, w);
    let at = cosine_integral(b + w, b, l, w);
    assert!((far - near).abs() < 1e-6 * near.abs());
    assert!((near - at).abs() < 1e-8 * at.abs());
    let far = position_integral(b + 1e-7, b, l);
    let near = position_integral(b + 1e-9, b, l);
    assert!((far - near).abs() < 1e-6 * near.abs());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn assembled_sets_are_symmetric_complete_and_match_quadrature(
        lengths in prop::collection::vec(1.5f64..5.0, 1..4),
        v0 in 0.5f64..20.0,
        period in 0.5f64..2.0,
    ) {
        let Ok(basis) = SpectralBasis::new(StarGraph::new(lengths).unwrap(), 14.0) else { return Ok(()) };
        let set = CouplingSet::assemble(&basis, &LatticePotentialSpec::new(v0, period).unwrap()).unwrap();
        prop_assert!(set.symmetry_defect() <= 1e-12);
        prop_assert!(set.completeness_defect() < 1e-8);
        let (report, digest) = verify(&basis, &set, VerifyMode::Sample).unwrap();
        prop_assert_eq!(digest.mismatches, 0, "{:?}", report.first_mismatch());
    }
}
