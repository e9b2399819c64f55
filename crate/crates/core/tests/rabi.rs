use dicke3::model::{ModelParams, Parity};
use dicke3::oracle::{oracle_x, HamiltonianKind};
use dicke3::rabi::{
    rabi_g_value, rabi_roots, rabi_sweep, rabi_values_at_zero, RabiOptions, RabiSeries,
};
use dicke3::roots::ScanOptions;
use dicke3::spectrum::{g_grid, match_values, SweepOptions, XWindow};
use proptest::prelude::*;

fn roots(params: &ModelParams, parity: Parity, lo: f64, hi: f64) -> Vec<f64> {
    rabi_roots(params, parity, lo, hi, &ScanOptions::default(), &RabiOptions::default())
        .unwrap()
        .eigenvalues
        .iter()
        .map(|e| e.x)
        .collect()
}

#[test]
fn roots_match_the_sector_oracle() {
    for g in [0.25, 0.6, 1.0] {
        let params = ModelParams::new(g, 0.7).unwrap();
        let mut found = roots(&params, Parity::Plus, -0.8, 6.0);
        found.extend(roots(&params, Parity::Minus, -0.8, 6.0));
        found.sort_by(f64::total_cmp);
        let reference: Vec<f64> = oracle_x(&params, HamiltonianKind::RabiSector, 120, 30)
            .unwrap()
            .into_iter()
            .filter(|x| *x > -0.8 && *x < 6.0)
            .collect();
        let report = match_values(&found, &reference, 1e-8);
        assert!(report.is_complete(1e-8), "g={g}: {report:?}");
    }
}

#[test]
fn parity_identities_at_the_origin() {
    let params = ModelParams::new(0.25, 0.7).unwrap();
    let opts = RabiOptions::default();
    for x in [-0.45, 0.2, 0.9, 1.6, 3.3] {
        let (p_plus, q_plus) = rabi_values_at_zero(&params, Parity::Plus, x, &opts).unwrap();
        let (p_minus, q_minus) = rabi_values_at_zero(&params, Parity::Minus, x, &opts).unwrap();
        let scale = p_plus.abs().max(q_plus.abs());
        assert!((p_minus - p_plus).abs() <= 1e-12 * scale);
        assert!((q_minus + q_plus).abs() <= 1e-12 * scale);
        let sum = rabi_g_value(&params, Parity::Plus, x, &opts).unwrap()
            + rabi_g_value(&params, Parity::Minus, x, &opts).unwrap();
        assert!((sum + 2.0 * p_plus).abs() <= 1e-12 * scale);
    }
}

#[test]
fn parities_never_share_a_regular_root() {
    let params = ModelParams::new(0.25, 0.7).unwrap();
    let plus = roots(&params, Parity::Plus, -0.8, 8.0);
    let minus = roots(&params, Parity::Minus, -0.8, 8.0);
    for a in &plus {
        for b in &minus {
            assert!((a - b).abs() > 1e-6, "{a} {b}");
        }
    }
}

#[test]
fn about_one_level_per_parity_per_unit_at_strong_coupling() {
    let params = ModelParams::new(1.2, 0.7).unwrap();
    for parity in Parity::BOTH {
        let oracle = oracle_x(&params, HamiltonianKind::RabiParityBlock(parity), 200, 20).unwrap();
        let found = roots(&params, parity, -0.8, 12.0);
        let below = |v: &[f64], top: f64| v.iter().filter(|x| **x < top).count() as i64;
        for top in [4.0, 8.0, 12.0] {
            // One level per baseline plus the one below x = 1.
            assert!((below(&oracle, top) - top as i64).abs() <= 1, "{parity} below {top}");
        }
        let reference: Vec<f64> = oracle.into_iter().filter(|x| *x < 12.0).collect();
        assert!(match_values(&found, &reference, 1e-8).is_complete(1e-8), "{parity}");
    }
}

#[test]
fn pole_guard_is_enforced() {
    let params = ModelParams::new(0.25, 0.7).unwrap();
    assert!(rabi_g_value(&params, Parity::Plus, 2.0 + 1e-8, &RabiOptions::default()).is_err());
    assert!(rabi_g_value(&params, Parity::Plus, 2.0 + 1e-5, &RabiOptions::default()).is_ok());
}

#[test]
fn coarse_sweep_places_degeneracies_on_baselines() {
    let grid = g_grid(0.2, 1.0, 30).unwrap();
    let opts = SweepOptions { window: XWindow::Lowest { levels: 6 }, ..SweepOptions::default() };
    let s = rabi_sweep(0.7, &grid, &opts).unwrap();
    assert!(!s.degeneracies.is_empty());
    for d in &s.degeneracies {
        assert!(d.integer_distance < 1e-6, "{d:?}");
    }
    assert_eq!(s.sweep.ambiguous_steps, 0);
    assert!(s.sweep.min_same_parity_gap > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn series_solves_the_equations(
        g in 0.05f64..1.5,
        delta in 0.1f64..1.5,
        x in -1.5f64..8.0,
        t in -0.95f64..0.95,
        minus in any::<bool>(),
    ) {
        prop_assume!((x - x.round()).abs() > 1e-3);
        let params = ModelParams::new(g, delta).unwrap();
        let parity = if minus { Parity::Minus } else { Parity::Plus };
        let s = RabiSeries::new(&params, parity, x, &RabiOptions::default()).unwrap();
        let z = g + t * g;
        let r = s.ode_residual(&params, z).unwrap();
        prop_assert!(r[0] < 1e-11 && r[1] < 1e-11, "{r:?}");
    }
}
