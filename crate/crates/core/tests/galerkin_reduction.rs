use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nslog_core::duhamel::rows_to_csv;
use nslog_core::error::Error;
use nslog_core::families::{random_band, taylor_green, two_cell_mix};
use nslog_core::field::Field;
use nslog_core::galerkin::{
    build_basis, coeff_b, coeff_c, coeff_c_cached, coeff_c_pairing, energy_report,
    integrate_galerkin, DriftLoad, GalerkinSystem,
};
use nslog_core::mild::{solve_mild, MildConfig};
use nslog_core::spectral::divergence;
use nslog_core::time::{make_time_grid, PathSample};
use nslog_core::{make_grid, Grid};

fn grid2d(m: usize) -> Grid {
    make_grid(2, m, 1.0).unwrap()
}

fn l2_of(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn basis_is_orthonormal_and_canonically_ordered() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, 2.0).unwrap();
    // Representatives with |k| <= 2: (0,1), (1,0), (1,-1), (1,1), (0,2), (2,0).
    assert_eq!(basis.n(), 12);
    assert_eq!(basis.elements()[0].k, vec![0, 1]);
    assert!(!basis.elements()[0].sine);
    assert_eq!(basis.elements()[1].k, vec![0, 1]);
    assert!(basis.elements()[1].sine);
    assert_eq!(basis.elements()[2].k, vec![1, 0]);

    for i in 0..basis.n() {
        let wi = basis.field(i);
        assert!(divergence(wi).l2_norm() <= 1e-10, "mode {i} is not solenoidal");
        for j in i..basis.n() {
            let pair = basis.project(wi).unwrap()[j];
            let want = if i == j { 1.0 } else { 0.0 };
            assert!(
                (pair - want).abs() <= 1e-12,
                "gram defect at ({i},{j}): {pair:.3e}"
            );
        }
    }
}

#[test]
fn basis_reproduces_solenoidal_fields_in_its_band() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, 3.0).unwrap();
    let f = random_band(&grid, 1.0, 3.0, 0.8, 97).unwrap();
    let back = basis.synthesize(&basis.project(&f).unwrap()).unwrap();
    let gap = back.sub(&f).l2_norm() / f.l2_norm();
    assert!(gap <= 1e-12, "round trip misses by {gap:.3e}");

    // A field with modes outside the band is genuinely truncated.
    let wide = random_band(&grid, 1.0, 5.0, 0.8, 98).unwrap();
    let lost = basis
        .synthesize(&basis.project(&wide).unwrap())
        .unwrap()
        .sub(&wide)
        .l2_norm()
        / wide.l2_norm();
    assert!(lost > 1e-3, "projection should truncate out-of-band modes");
}

#[test]
fn convection_tensor_routes_agree_and_conserve_energy() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, 2.3).unwrap();
    let n = basis.n();
    let a = coeff_c(&basis).unwrap().dense();
    let b = coeff_c_pairing(&basis).unwrap().dense();
    let route_gap = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(route_gap <= 1e-11, "assembly routes disagree by {route_gap:.3e}");

    let mut skew = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                skew = skew.max((a[(i * n + j) * n + k] + a[(i * n + k) * n + j]).abs());
            }
        }
    }
    assert!(skew <= 1e-11, "transport term is not skew: {skew:.3e}");

    let mut rng = ChaCha8Rng::seed_from_u64(515);
    for _ in 0..20 {
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut cubic = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    cubic += a[(i * n + j) * n + k] * g[i] * g[j] * g[k];
                }
            }
        }
        let scale = l2_of(&g).powi(3).max(1.0);
        assert!(
            cubic.abs() <= 1e-11 * scale,
            "energy production {cubic:.3e} does not cancel"
        );
    }
}

#[test]
fn single_cell_flows_are_silent_in_the_reduced_system() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, 2.3).unwrap();
    let tensor = coeff_c(&basis).unwrap();
    for (m, n) in [(1, 1), (2, 1), (1, 2)] {
        let g = basis.project(&taylor_green(&grid, m, n, 1.0).unwrap()).unwrap();
        let mut out = vec![0.0; basis.n()];
        tensor.quadratic_into(&g, &mut out, 1.0);
        assert!(
            l2_of(&out) <= 1e-11,
            "cell flow ({m},{n}) self-advects: {:.3e}",
            l2_of(&out)
        );
    }
    // The two-cell superposition is genuinely active.
    let g = basis.project(&two_cell_mix(&grid, 1.0).unwrap()).unwrap();
    let mut out = vec![0.0; basis.n()];
    tensor.quadratic_into(&g, &mut out, 1.0);
    assert!(l2_of(&out) > 1e-3, "mixed datum should be active");
}

#[test]
fn convection_tensor_cache_round_trips_and_survives_corruption() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, 2.0).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let first = coeff_c_cached(&basis, Some(dir.path())).unwrap();
    let files: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    assert_eq!(files.len(), 1, "expected exactly one cache entry");

    let second = coeff_c_cached(&basis, Some(dir.path())).unwrap();
    assert_eq!(first.entries(), second.entries(), "cache reload altered the tensor");

    std::fs::write(&files[0], "not json").unwrap();
    let third = coeff_c_cached(&basis, Some(dir.path())).unwrap();
    assert_eq!(first.entries(), third.entries(), "corrupt cache was not recomputed");
    let reread = std::fs::read_to_string(&files[0]).unwrap();
    assert!(reread.starts_with('{'), "cache file was not rewritten");
}

#[test]
fn linear_matrix_is_the_stokes_diagonal_with_exact_advection_blocks() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, 2.0).unwrap();
    let n = basis.n();

    let stokes = coeff_b(&basis, None).unwrap();
    for k in 0..n {
        for j in 0..n {
            let want = if k == j { -basis.kappa_sq()[k] } else { 0.0 };
            assert_eq!(stokes[k * n + j], want, "stokes entry ({k},{j})");
        }
    }

    // Constant drift translates the flow: each mode pair rotates at a*k/L,
    // with no coupling anywhere else in the column.
    let a = Field::from_fn(&grid, |_| vec![0.3, -0.7]).with_flags(true, false);
    let b = coeff_b(&basis, Some(&a)).unwrap();
    let cos01 = 0usize;
    let sin01 = 1usize;
    let adotk = -0.7;
    for k in 0..n {
        let want_cos_col = if k == sin01 { adotk } else { 0.0 };
        let got = b[k * n + cos01] - stokes[k * n + cos01];
        assert!(
            (got - want_cos_col).abs() <= 1e-12,
            "drift column entry ({k},{cos01}): {got:.3e} vs {want_cos_col:.3e}"
        );
        let want_sin_col = if k == cos01 { -adotk } else { 0.0 };
        let got = b[k * n + sin01] - stokes[k * n + sin01];
        assert!(
            (got - want_sin_col).abs() <= 1e-12,
            "drift column entry ({k},{sin01}): {got:.3e} vs {want_sin_col:.3e}"
        );
    }

    // The drift block is linear in the drift.
    let b2 = coeff_b(&basis, Some(&a.scale(2.0))).unwrap();
    for idx in 0..n * n {
        let one = b[idx] - stokes[idx];
        let two = b2[idx] - stokes[idx];
        assert!((two - 2.0 * one).abs() <= 1e-12, "drift part is not linear at {idx}");
    }
}

#[test]
fn lone_mode_relaxes_at_the_heat_rate_with_exact_energy_budget() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, 2.0).unwrap();
    let tensor = coeff_c(&basis).unwrap();
    let sys = GalerkinSystem::new(&basis, &tensor).unwrap();
    let tg = make_time_grid(1.0, 32, 2.0, 3).unwrap();

    let mut g0 = vec![0.0; basis.n()];
    g0[0] = 1.0;
    let path = integrate_galerkin(&sys, &g0, &tg, 1e-12, 1e-9).unwrap();
    assert!(!path.blown_up);
    assert_eq!(path.times.len(), tg.len());

    for (j, &t) in path.times.iter().enumerate() {
        let want = (-t).exp();
        assert!(
            (path.coeffs[j][0] - want).abs() <= 1e-8,
            "mode amplitude at t={t}: {} vs {want}",
            path.coeffs[j][0]
        );
        let others = l2_of(&path.coeffs[j][1..]);
        assert!(others <= 1e-10, "phantom excitation {others:.3e} at t={t}");
        let budget = path.energy[j] + 2.0 * path.dissipation[j];
        assert!((budget - 1.0).abs() <= 1e-8, "energy budget drifts: {budget}");
    }
}

#[test]
fn frozen_and_sampled_drift_assemblies_integrate_identically() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, 2.3).unwrap();
    let tensor = coeff_c(&basis).unwrap();
    let tg = make_time_grid(1.0, 24, 2.0, 3).unwrap();

    let a0 = two_cell_mix(&grid, 0.5).unwrap();
    let constant_path = PathSample::new(
        tg.clone(),
        vec![a0.clone(); tg.len()],
        Some(a0.clone()),
    )
    .unwrap();

    let g0 = basis.project(&taylor_green(&grid, 1, 1, 0.1).unwrap()).unwrap();
    let frozen = GalerkinSystem::new(&basis, &tensor)
        .unwrap()
        .with_static_drift(&a0)
        .unwrap();
    let sampled = GalerkinSystem::new(&basis, &tensor)
        .unwrap()
        .with_drift_path(&constant_path)
        .unwrap();

    let p1 = integrate_galerkin(&frozen, &g0, &tg, 1e-13, 1e-10).unwrap();
    let p2 = integrate_galerkin(&sampled, &g0, &tg, 1e-13, 1e-10).unwrap();
    let mut gap = 0.0f64;
    for j in 0..tg.len() {
        for i in 0..basis.n() {
            gap = gap.max((p1.coeffs[j][i] - p2.coeffs[j][i]).abs());
        }
    }
    assert!(gap <= 1e-8, "drift assembly routes diverge by {gap:.3e}");
}

#[test]
fn reduced_trajectories_match_the_fixed_point_solver() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, grid.kmax_lattice() + 1.0).unwrap();
    let tensor = coeff_c(&basis).unwrap();
    let sys = GalerkinSystem::new(&basis, &tensor).unwrap();
    let u0 = two_cell_mix(&grid, 0.02).unwrap();
    let g0 = basis.project(&u0).unwrap();

    let mut errs = Vec::new();
    for j in [96usize, 192] {
        let tg = make_time_grid(1.0, j, 2.0, 3).unwrap();
        let cfg = MildConfig::new(0.8, 40, 1e-12, 1.0).unwrap();
        let mild = solve_mild(&u0, &cfg, &tg).unwrap();
        let reduced = integrate_galerkin(&sys, &g0, &tg, 1e-14, 1e-10).unwrap();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for node in 0..tg.len() {
            let u_reduced = basis.synthesize(&reduced.coeffs[node]).unwrap();
            worst = worst.max(u_reduced.sub(mild.path.field(node)).l2_norm());
            scale = scale.max(mild.path.field(node).l2_norm());
        }
        errs.push(worst / scale);
    }
    assert!(errs[0] <= 0.02, "solvers disagree at coarse mesh: {:.3e}", errs[0]);
    assert!(
        errs[1] <= 0.8 * errs[0],
        "quadrature refinement does not close the gap: {:.3e} -> {:.3e}",
        errs[0],
        errs[1]
    );
}

#[test]
fn strong_drift_trips_the_blowup_guard() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, 2.0).unwrap();
    let tensor = coeff_c(&basis).unwrap();
    let tg = make_time_grid(1.0, 16, 2.0, 3).unwrap();

    let sys = GalerkinSystem::new(&basis, &tensor)
        .unwrap()
        .with_static_drift(&two_cell_mix(&grid, 800.0).unwrap())
        .unwrap();
    let g0 = basis.project(&taylor_green(&grid, 1, 1, 1e-3).unwrap()).unwrap();
    let path = integrate_galerkin(&sys, &g0, &tg, 1e-12, 1e-6).unwrap();
    assert!(path.blown_up, "linearized pumping should exceed the growth guard");
    assert!(path.times.len() < tg.len(), "trajectory should stop early");
}

#[test]
fn integrator_and_system_validation_reject_bad_inputs() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, 2.0).unwrap();
    let tensor = coeff_c(&basis).unwrap();
    let sys = GalerkinSystem::new(&basis, &tensor).unwrap();
    let tg = make_time_grid(1.0, 16, 2.0, 3).unwrap();
    let g0 = vec![0.1; basis.n()];

    assert!(integrate_galerkin(&sys, &g0[..3], &tg, 1e-12, 1e-9).is_err());
    assert!(integrate_galerkin(&sys, &g0, &tg, -1.0, 1e-9).is_err());
    assert!(integrate_galerkin(&sys, &g0, &tg, 1e-12, 1e-14).is_err());

    // A mismatched tensor is refused up front.
    let small = build_basis(&grid, 1.0).unwrap();
    let small_tensor = coeff_c(&small).unwrap();
    assert!(GalerkinSystem::new(&basis, &small_tensor).is_err());

    // Drift paths must stay in the span.
    let wide = PathSample::heat_flow(
        &random_band(&grid, 1.0, 4.0, 1.0, 7).unwrap(),
        &tg,
    )
    .unwrap();
    match GalerkinSystem::new(&basis, &tensor).unwrap().with_drift_path(&wide) {
        Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, "drift"),
        other => panic!("expected a span rejection, got {:?}", other.map(|_| ())),
    }

    // An overflowing right-hand side collapses the step size and reports it.
    let mut huge = vec![0.0; basis.n()];
    for (i, h) in huge.iter_mut().enumerate() {
        *h = 1e200 * ((i % 3) as f64 - 1.0);
    }
    match integrate_galerkin(&sys, &huge, &tg, 1e-12, 1e-9) {
        Err(Error::StepUnderflow { last_t }) => assert!(last_t >= 0.0),
        other => panic!("expected step underflow, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn energy_report_certifies_the_exponential_bound() {
    let grid = grid2d(16);
    let basis = build_basis(&grid, 2.3).unwrap();
    let tensor = coeff_c(&basis).unwrap();
    let tg = make_time_grid(1.0, 32, 2.0, 3).unwrap();
    let g0 = basis.project(&two_cell_mix(&grid, 0.1).unwrap()).unwrap();

    // Without drift the budget is conserved and the constant is zero.
    let plain = GalerkinSystem::new(&basis, &tensor).unwrap();
    let free = integrate_galerkin(&plain, &g0, &tg, 1e-13, 1e-10).unwrap();
    let report = energy_report(&free, &g0, &[]).unwrap();
    assert_eq!(report.constant, 0.0);
    for row in &report.rows {
        assert!(
            (row.lhs - report.initial_energy).abs() <= 1e-8 * report.initial_energy,
            "budget drifts without drift: {} vs {}",
            row.lhs,
            report.initial_energy
        );
    }

    // With a drift the fitted constant certifies the bound at every node.
    let a = PathSample::heat_flow(&taylor_green(&grid, 1, 1, 2.0).unwrap(), &tg).unwrap();
    let driven = GalerkinSystem::new(&basis, &tensor)
        .unwrap()
        .with_drift_path(&a)
        .unwrap();
    let forced = integrate_galerkin(&driven, &g0, &tg, 1e-13, 1e-10).unwrap();
    let report = energy_report(&forced, &g0, &[DriftLoad::Bounded(&a)]).unwrap();
    assert!(report.constant.is_finite() && report.constant >= 0.0);
    for row in &report.rows {
        assert!(
            row.lhs <= row.rhs * (1.0 + 1e-12),
            "bound violated at t={}: {} > {}",
            row.t,
            row.lhs,
            row.rhs
        );
    }
    let csv = rows_to_csv(&report.rows);
    assert!(csv.starts_with("t,lhs,rhs,ratio\n"));

    // The bounded load is exactly quadratic in the drift amplitude.
    let loads1 = energy_report(&forced, &g0, &[DriftLoad::Bounded(&a)]).unwrap().loads;
    let loads2 = energy_report(&forced, &g0, &[DriftLoad::Bounded(&a.scale(2.0))])
        .unwrap()
        .loads;
    for (l1, l2) in loads1.iter().zip(&loads2) {
        assert!((l2 - 4.0 * l1).abs() <= 1e-12 * l1.max(1e-300));
    }

    // The smoothing load scales at its critical power 2/(1-r).
    let s1 = energy_report(&forced, &g0, &[DriftLoad::Smoothing(&a, 0.5)]).unwrap().loads;
    let s2 = energy_report(&forced, &g0, &[DriftLoad::Smoothing(&a.scale(2.0), 0.5)])
        .unwrap()
        .loads;
    for (l1, l2) in s1.iter().zip(&s2) {
        assert!(
            (l2 - 16.0 * l1).abs() <= 1e-8 * l1.max(1e-300),
            "smoothing load scaling: {l1:.6e} vs {l2:.6e}"
        );
    }
}

#[test]
fn energy_constant_is_stable_under_band_refinement() {
    let grid = grid2d(16);
    let tg = make_time_grid(1.0, 32, 2.0, 3).unwrap();
    let u0 = two_cell_mix(&grid, 0.1).unwrap();
    // A mixed-phase drift: a single symmetric wave couples to the band
    // through an exactly skew matrix, conserves the budget, and leaves
    // nothing to fit but integrator noise.
    let a_field = random_band(&grid, 1.0, 2.0, 0.8, 11).unwrap();
    let a = PathSample::heat_flow(&a_field, &tg).unwrap();

    let mut constants = Vec::new();
    for kcut in [2.5, 3.5, 4.5] {
        let basis = build_basis(&grid, kcut).unwrap();
        let tensor = coeff_c(&basis).unwrap();
        let g0 = basis.project(&u0).unwrap();
        let sys = GalerkinSystem::new(&basis, &tensor)
            .unwrap()
            .with_drift_path(&a)
            .unwrap();
        let path = integrate_galerkin(&sys, &g0, &tg, 1e-13, 1e-10).unwrap();
        let report = energy_report(&path, &g0, &[DriftLoad::Bounded(&a)]).unwrap();
        constants.push(report.constant);
    }
    assert!(constants[0] > 1e-4, "budget growth should be real, got {:.3e}", constants[0]);
    for pair in constants.windows(2) {
        let ratio = pair[1] / pair[0];
        assert!(
            (0.75..=4.0 / 3.0).contains(&ratio),
            "fitted constant unstable across bands: {:.6e} vs {:.6e}",
            pair[0],
            pair[1]
        );
    }
}
