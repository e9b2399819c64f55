use dicke3::model::{baseline, baselines, BaselineKind, ModelParams, Parity};
use dicke3::oracle::{oracle_x, HamiltonianKind};
use dicke3::series::{OrderPolicy, SeriesOptions};
use dicke3::spectrum::{
    assemble_eigenfunction, exceptional_probe, exceptional_probe_at, find_roots, g_grid,
    lifting_scan, match_values, sweep_g, EigenClass, ProbeOptions, RootOptions, SweepOptions,
    XWindow,
};

fn params() -> ModelParams {
    ModelParams::new(0.25, 0.7).unwrap()
}

fn roots(params: &ModelParams, parity: Parity, lo: f64, hi: f64, opts: &RootOptions) -> Vec<f64> {
    find_roots(params, parity, lo, hi, opts).unwrap().eigenvalues.iter().map(|e| e.x).collect()
}

#[test]
fn roots_match_the_oracle_one_to_one() {
    let p = params();
    for parity in Parity::BOTH {
        let found = roots(&p, parity, -0.4, 6.0, &RootOptions::default());
        let reference: Vec<f64> = oracle_x(&p, HamiltonianKind::ParityBlock(parity), 100, 40)
            .unwrap()
            .into_iter()
            .filter(|x| *x > -0.4 && *x < 6.0)
            .collect();
        let report = match_values(&found, &reference, 1e-7);
        assert!(report.is_complete(1e-7), "{parity}: {report:?}");
    }
}

#[test]
fn minus_window_below_one() {
    // The window (−0.4, 0.9) holds two odd levels; the odd ground state
    // sits lower, near x = −2.13.
    let p = params();
    let opts = RootOptions::default();
    let window = roots(&p, Parity::Minus, -0.4, 0.9, &opts);
    let reference: Vec<f64> = oracle_x(&p, HamiltonianKind::ParityBlock(Parity::Minus), 100, 12)
        .unwrap()
        .into_iter()
        .filter(|x| *x > -0.4 && *x < 0.9)
        .collect();
    assert_eq!(window.len(), 2);
    assert!(match_values(&window, &reference, 1e-7).is_complete(1e-7));

    let lower = -8.0 * 0.0625 - 3.0 * 0.7 - 0.05;
    let minus = roots(&p, Parity::Minus, lower, 0.9, &opts);
    let plus = roots(&p, Parity::Plus, lower, 0.9, &opts);
    assert!(minus[0] < plus[0]);
    assert!((minus[0] + 2.1276).abs() < 1e-3);
}

#[test]
fn empty_range_is_empty() {
    assert!(roots(&params(), Parity::Plus, 2.0, 2.0, &RootOptions::default()).is_empty());
}

#[test]
fn window_edges_on_baselines_lose_nothing() {
    let p = params();
    for parity in Parity::BOTH {
        let reference = oracle_x(&p, HamiltonianKind::ParityBlock(parity), 100, 40).unwrap();
        for (lo, hi) in [(0.0, 2.0), (0.5, 1.5), (1.0, 3.0)] {
            let found = roots(&p, parity, lo, hi, &RootOptions::default());
            let inside: Vec<f64> = reference.iter().copied().filter(|x| *x > lo && *x < hi).collect();
            let report = match_values(&found, &inside, 1e-7);
            assert!(report.is_complete(1e-7), "{parity} ({lo}, {hi}): {report:?}");
        }
    }
}

#[test]
fn every_root_is_regular_with_small_residual() {
    let p = params();
    for parity in Parity::BOTH {
        let scan = find_roots(&p, parity, -2.5, 6.0, &RootOptions::default()).unwrap();
        assert!(scan.warnings.is_empty(), "{:?}", scan.warnings);
        for e in &scan.eigenvalues {
            assert_eq!(e.class, EigenClass::Regular);
            assert!((e.e - (e.x - 0.0625)).abs() < 1e-15);
            assert!(e.residual < 1e-8, "{e:?}");
            assert!(e.bracket.0 <= e.x && e.x <= e.bracket.1);
            let near = baselines(&p, e.x - 1e-3, e.x + 1e-3);
            assert!(near.is_empty(), "{} inside a guard zone", e.x);
        }
    }
}

#[test]
fn baseline_free_intervals_hold_as_many_roots_as_oracle_levels() {
    let p = params();
    let cuts: Vec<f64> = baselines(&p, -0.4, 6.0).iter().map(|b| b.x).collect();
    for parity in Parity::BOTH {
        let reference = oracle_x(&p, HamiltonianKind::ParityBlock(parity), 100, 40).unwrap();
        let found = roots(&p, parity, -0.4, 6.0, &RootOptions::default());
        let mut edges = vec![-0.4];
        edges.extend(&cuts);
        edges.push(6.0);
        for w in edges.windows(2) {
            let count = |v: &[f64]| v.iter().filter(|x| **x > w[0] && **x < w[1]).count();
            assert_eq!(count(&found), count(&reference), "{parity} in ({}, {})", w[0], w[1]);
        }
    }
}

#[test]
fn roots_are_stable_under_matching_point_order_and_step() {
    let p = params();
    let base = RootOptions::default();
    let mut variants = Vec::new();
    for z0 in [0.4, 0.5, 0.6] {
        variants.push(RootOptions { z0: Some(z0), ..base });
    }
    variants.push(RootOptions {
        series: SeriesOptions::default().with_policy(OrderPolicy::Adaptive { tol: 1e-20 }),
        ..base
    });
    let mut fine = base;
    fine.scan.step *= 0.5;
    variants.push(fine);
    for parity in Parity::BOTH {
        let reference = roots(&p, parity, -2.5, 6.0, &base);
        for v in &variants {
            let other = roots(&p, parity, -2.5, 6.0, v);
            let report = match_values(&other, &reference, 1e-8);
            assert!(report.is_complete(1e-8), "{parity} {v:?}: {}", report.max_deviation);
        }
    }
}

#[test]
fn generic_baseline_carries_a_pole() {
    let p = params();
    let b = baseline(&p, BaselineKind::First, 1);
    let d = exceptional_probe(&p, Parity::Plus, &b, &ProbeOptions::default()).unwrap();
    assert!(!d.lifted);
    assert!([1, 3].contains(&d.pole_order), "order {}", d.pole_order);
    assert!(d.residue() != 0.0);
}

#[test]
fn probe_requires_a_baseline() {
    let p = params();
    assert!(exceptional_probe_at(&p, Parity::Plus, 1.3, &ProbeOptions::default()).is_err());
    assert!(exceptional_probe_at(&p, Parity::Plus, 1.5, &ProbeOptions::default()).is_ok());
}

/// Couplings in the grid range where an oracle level of `parity` crosses
/// the baseline `(kind, n)`, bisected in `g`.
fn oracle_baseline_crossings(parity: Parity, kind: BaselineKind, n: u32, grid: &[f64]) -> Vec<f64> {
    let gap = |g: f64| {
        let p = ModelParams::new(g, 0.7).unwrap();
        let b = baseline(&p, kind, n).x;
        let xs = oracle_x(&p, HamiltonianKind::ParityBlock(parity), 120, 16).unwrap();
        xs.iter().map(|x| x - b).min_by(|a, c| a.abs().total_cmp(&c.abs())).unwrap()
    };
    let values: Vec<f64> = grid.iter().map(|&g| gap(g)).collect();
    let mut out = Vec::new();
    for i in 1..grid.len() {
        let (a, b) = (values[i - 1], values[i]);
        // Sign flips of the nearest-level gap also happen halfway between
        // two levels; those have a large gap on both sides.
        if a.signum() == b.signum() || a.abs() > 0.05 || b.abs() > 0.05 {
            continue;
        }
        let (mut lo, mut hi) = (grid[i - 1], grid[i]);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if gap(mid).signum() == a.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    out
}

#[test]
fn lifting_coincides_with_oracle_levels_on_baselines() {
    let grid = g_grid(0.1, 0.6, 100).unwrap();
    let cases = [
        (Parity::Plus, BaselineKind::First, 1),
        (Parity::Minus, BaselineKind::First, 1),
        (Parity::Minus, BaselineKind::Second, 1),
        (Parity::Plus, BaselineKind::Second, 2),
    ];
    for (parity, kind, n) in cases {
        let points = lifting_scan(0.7, parity, kind, n, &grid, &ProbeOptions::default()).unwrap();
        let crossings = oracle_baseline_crossings(parity, kind, n, &grid);
        assert!(!crossings.is_empty(), "{parity} {kind:?} {n}");
        assert_eq!(points.len(), crossings.len(), "{parity} {kind:?} {n}");
        for (pt, gc) in points.iter().zip(&crossings) {
            assert!(pt.lifted(), "{pt:?}");
            assert!((pt.g - gc).abs() < 1e-8, "{} vs {gc}", pt.g);
            // At the lifting coupling the oracle has a level on the baseline.
            let p = ModelParams::new(pt.g, 0.7).unwrap();
            let xs = oracle_x(&p, HamiltonianKind::ParityBlock(parity), 120, 16).unwrap();
            let dist = xs.iter().map(|x| (x - pt.baseline.x).abs()).fold(f64::INFINITY, f64::min);
            assert!(dist < 1e-6, "{dist}");
        }
    }
}

/// Low-discrepancy points across the four disks, away from the singular points.
fn sample_points(g: f64, count: usize) -> Vec<f64> {
    let golden = 0.618_033_988_749_894_9;
    let mut out = Vec::new();
    let mut u = 0.5f64;
    while out.len() < count {
        u = (u + golden).fract();
        let z = (2.0 * u - 1.0) * 4.7 * g;
        if [g, 3.0 * g, -g, -3.0 * g].iter().all(|c| (z - c).abs() > 0.02 * g) {
            out.push(z);
        }
    }
    out
}

#[test]
fn assembled_eigenfunctions_solve_the_equations() {
    let p = params();
    let opts = RootOptions::default();
    let points = sample_points(p.g(), 20);
    for parity in Parity::BOTH {
        for e in find_roots(&p, parity, -2.5, 6.0, &opts).unwrap().eigenvalues {
            let f = assemble_eigenfunction(&p, parity, &e, &opts).unwrap();
            assert_eq!(f.kernel.kernel_dim, 1);
            let report = f.report(&points).unwrap();
            assert!(report.ode_residual < 1e-7, "x={}: {report:?}", e.x);
            assert!(report.parity_at_zero < 1e-7, "x={}: {report:?}", e.x);
            assert!(report.overlap_d2 < 1e-7, "x={}: {report:?}", e.x);
            assert!(report.overlap_d0 < 1e-7, "x={}: {report:?}", e.x);
        }
    }
}

#[test]
fn non_roots_have_no_eigenfunction() {
    let p = params();
    let mut e = find_roots(&p, Parity::Plus, 0.0, 0.1, &RootOptions::default()).unwrap().eigenvalues[0];
    e.x += 0.05;
    let f = assemble_eigenfunction(&p, Parity::Plus, &e, &RootOptions::default());
    assert!(f.is_err());
}

#[test]
fn short_sweep_keeps_levels_sorted_and_gapped() {
    let opts = SweepOptions { window: XWindow::Lowest { levels: 6 }, ..SweepOptions::default() };
    let s = sweep_g(0.7, 0.2, 0.4, 20, &RootOptions::default(), &opts).unwrap();
    assert_eq!(s.g_grid.len(), 20);
    for (gi, lv) in s.levels.iter().enumerate() {
        for side in lv {
            assert_eq!(side.len(), 6, "g = {}", s.g_grid[gi]);
            assert!(side.windows(2).all(|w| w[0].x < w[1].x));
        }
    }
    assert!(s.ground_parities().iter().all(|p| *p == Some(Parity::Minus)));
    assert!(s.min_same_parity_gap > 0.0);
    for c in &s.crossings {
        assert_eq!(c.parities, (Parity::Plus, Parity::Minus));
    }
    assert!(s.overlay.iter().all(|row| row.iter().all(|b| b.kind == BaselineKind::Second)));
}

#[test]
fn levels_close_to_a_baseline_are_still_resolved() {
    // Next to a lifting coupling a level sits arbitrarily close to the baseline.
    let grid = g_grid(0.1, 0.6, 40).unwrap();
    let parity = Parity::Minus;
    let pts = lifting_scan(0.7, parity, BaselineKind::First, 1, &grid, &ProbeOptions::default()).unwrap();
    let g_star = pts[0].g;
    for dg in [1e-3, -1e-4, 1e-5, -1e-6] {
        let p = ModelParams::new(g_star + dg, 0.7).unwrap();
        let b = baseline(&p, BaselineKind::First, 1).x;
        let found = roots(&p, parity, b - 0.3, b + 0.3, &RootOptions::default());
        let reference: Vec<f64> = oracle_x(&p, HamiltonianKind::ParityBlock(parity), 120, 16)
            .unwrap()
            .into_iter()
            .filter(|x| (x - b).abs() < 0.3)
            .collect();
        let report = match_values(&found, &reference, 1e-9);
        assert!(report.is_complete(1e-9), "dg = {dg}: {report:?}");
        let closest = found.iter().map(|x| (x - b).abs()).fold(f64::INFINITY, f64::min);
        assert!(closest < 3.0 * dg.abs(), "dg = {dg}: {closest}");
    }
}
