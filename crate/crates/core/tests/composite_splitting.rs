use nslog_core::duhamel::{path_norm_x, path_norms_v};
use nslog_core::error::Error;
use nslog_core::families::{random_band, rotated_mode, taylor_green, two_cell_mix};
use nslog_core::field::Field;
use nslog_core::splitting::{
    dyadic_segments, solve_composite, split_initial_data, standard_battery, weak_residual,
    CompositeConfig, CompositeRunRecord, SplitConfig,
};
use nslog_core::time::{make_time_grid, PathSample, TimeGrid};
use nslog_core::{make_grid, Grid};

const R: f64 = 0.5;

fn grid2d(m: usize) -> Grid {
    make_grid(2, m, 1.0).unwrap()
}

fn tgrid(j: usize) -> TimeGrid {
    make_time_grid(0.4, j, 2.0, 4).unwrap()
}

/// Low cell flow, one mid-band mode, one mode near the dealiasing cutoff;
/// representable on every grid with M >= 16.
fn banded_datum(grid: &Grid) -> Field {
    let low = two_cell_mix(grid, 0.3).unwrap();
    let mid = rotated_mode(grid, &[3, 2], 0.05).unwrap();
    let high = rotated_mode(grid, &[4, 3], 0.02).unwrap();
    low.add(&mid).add(&high)
}

/// Spectral mass of a field outside the radial annulus [lo, hi].
fn mass_outside(f: &Field, lo: f64, hi: f64) -> f64 {
    f.apply_symbol(|k2| {
        let k = k2.sqrt();
        if k >= lo - 1e-9 && k <= hi + 1e-9 {
            0.0
        } else {
            1.0
        }
    })
    .l2_norm()
}

#[test]
fn segments_partition_the_field_and_respect_their_shells() {
    let grid = grid2d(16);
    let u0 = banded_datum(&grid);
    let segments = dyadic_segments(&u0).unwrap();
    assert_eq!(segments.len(), 4, "low block, two rings, one leftover");

    let sum = segments.iter().fold(Field::zero(&grid), |a, s| a.add(s));
    assert!(sum.sub(&u0).l2_norm() <= 1e-12 * u0.l2_norm());

    // Nominal supports: cutoff block [0, 2], ring j in (2^{j-1}, 2^{j+1}),
    // leftover beyond the last full-pass radius 2^{j_max}.
    let shells = [(0.0, 2.0), (1.0, 4.0), (2.0, 8.0), (4.0, f64::INFINITY)];
    for (seg, (lo, hi)) in segments.iter().zip(shells) {
        assert!(mass_outside(seg, lo, hi) <= 1e-13 * u0.l2_norm());
    }

    // A field inside the full-pass region of the top ring reassembles from
    // the blocks alone, so its leftover segment holds only transform noise.
    let low_only = two_cell_mix(&grid, 0.2).unwrap();
    let segs_low = dyadic_segments(&low_only).unwrap();
    assert!(segs_low[3].l2_norm() <= 1e-14 * low_only.l2_norm());
}

#[test]
fn split_respects_budgets_and_reassembles() {
    let grid = grid2d(16);
    let tg = tgrid(64);
    let u0 = banded_datum(&grid);
    let cfg = SplitConfig::new(0.2, 0.7, R, 0).unwrap();
    let s = split_initial_data(&u0, &cfg, &tg).unwrap();

    assert_eq!(s.segments, 4);
    assert_eq!(s.tail_start, 2, "tail takes the top ring and the leftover");
    assert_eq!(s.core_end, 1, "core capacity is the cutoff block only");

    assert!(s.tail_norm < cfg.eps_tail);
    assert!(s.mid_norm < cfg.eps_mid);
    assert!(s.tail_norm > 0.0 && s.mid_norm > 0.0 && s.core_energy > 0.0);

    // The recorded norms are exactly the gate functionals of the parts.
    let tail_flow = PathSample::heat_flow(&s.rough, &tg).unwrap();
    assert_eq!(s.tail_norm, path_norm_x(&tail_flow).x_norm);
    let mid_flow = PathSample::heat_flow(&s.mid, &tg).unwrap();
    assert_eq!(s.mid_norm, path_norms_v(&mid_flow, R).unwrap().v_total());
    assert_eq!(s.core_energy, s.core.l2_norm());

    // Exact reassembly and band placement of the core.
    let sum = s.rough.add(&s.mid).add(&s.core);
    assert!(sum.sub(&u0).l2_norm() <= 1e-12 * u0.l2_norm());
    assert!(mass_outside(&s.core, 0.0, 2.0) <= 1e-13 * u0.l2_norm());
}

#[test]
fn split_tail_is_greedy_and_monotone_in_its_budget() {
    let grid = grid2d(16);
    let tg = tgrid(64);
    let u0 = banded_datum(&grid);

    let mut starts = Vec::new();
    for eps_tail in [0.02, 0.05, 0.6, 0.72] {
        let cfg = SplitConfig::new(eps_tail, 1.5, R, 0).unwrap();
        let s = split_initial_data(&u0, &cfg, &tg).unwrap();
        assert!(s.tail_norm < eps_tail);
        starts.push(s.tail_start);
    }
    assert_eq!(starts, vec![3, 2, 1, 0], "larger budgets absorb more shells");

    // With the whole datum in the tail the other two parts are empty.
    let cfg = SplitConfig::new(0.72, 1.5, R, 0).unwrap();
    let s = split_initial_data(&u0, &cfg, &tg).unwrap();
    assert!(s.rough.sub(&u0).l2_norm() <= 1e-12 * u0.l2_norm());
    assert_eq!(s.mid.l2_norm(), 0.0);
    assert_eq!(s.core.l2_norm(), 0.0);
}

#[test]
fn split_reports_the_infeasible_mid_band_with_both_norms() {
    let grid = grid2d(16);
    let tg = tgrid(64);
    let u0 = random_band(&grid, 1.0, 5.0, 0.3, 99).unwrap();
    let cfg = SplitConfig::new(0.05, 0.05, R, 0).unwrap();
    match split_initial_data(&u0, &cfg, &tg) {
        Err(Error::SplitInfeasible { best_tail, eps1, best_mid, eps2 }) => {
            assert!(best_tail < 0.05, "the tail side stayed within its budget");
            assert_eq!(eps1, 0.05);
            assert!(best_mid >= 0.05 && best_mid < 1.0);
            assert_eq!(eps2, 0.05);
        }
        other => panic!("expected an infeasible split, got {other:?}"),
    }
}

#[test]
fn split_validation_rejects_bad_inputs() {
    assert!(SplitConfig::new(0.0, 0.1, R, 0).is_err());
    assert!(SplitConfig::new(0.1, -1.0, R, 0).is_err());
    assert!(SplitConfig::new(0.1, 0.1, 1.0, 0).is_err());
    assert!(SplitConfig::new(0.1, 0.1, 0.0, 0).is_err());

    let grid = grid2d(16);
    let tg = tgrid(64);
    let u0 = banded_datum(&grid);
    let cfg = SplitConfig::new(0.1, 0.1, R, 3).unwrap();
    match split_initial_data(&u0, &cfg, &tg) {
        Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, "z_band"),
        other => panic!("expected a z_band rejection, got {other:?}"),
    }
}

#[test]
fn zero_datum_splits_and_solves_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let grid = grid2d(16);
    let tg = tgrid(64);
    let u0 = Field::zero(&grid);
    let cfg = CompositeConfig::new(SplitConfig::new(0.1, 0.1, R, 0).unwrap(), 40, 1e-10).unwrap();
    let sol = solve_composite(&u0, &cfg, &tg, Some(dir.path())).unwrap();

    assert_eq!(sol.record.tail_start, 0, "empty shells all land in the tail");
    assert_eq!(sol.record.core_end, 0);
    assert_eq!(sol.record.weak_residual_max, 0.0);
    for f in sol.total.fields() {
        assert_eq!(f.l2_norm(), 0.0);
    }
}

#[test]
fn composite_stages_chain_on_three_band_data() {
    let dir = tempfile::tempdir().unwrap();
    let grid = grid2d(16);
    let tg = tgrid(64);
    let u0 = banded_datum(&grid);
    let cfg = CompositeConfig::new(SplitConfig::new(0.2, 0.7, R, 0).unwrap(), 60, 1e-10).unwrap();
    let sol = solve_composite(&u0, &cfg, &tg, Some(dir.path())).unwrap();

    // Split layout and gates.
    assert_eq!(sol.record.tail_start, 2);
    assert_eq!(sol.record.core_end, 1);
    assert!(sol.record.rough.gate_value < 0.2);
    assert!(sol.record.mid.gate_value < 0.7);
    assert!(sol.record.mid.drift_gate < 0.5);
    assert_eq!(sol.record.mid.halvings, 0);
    assert!(!sol.core.blown_up);
    assert!(sol.record.core_accepted > 0);

    // The three parts reassemble the datum and the three paths sum to the
    // reported total.
    let sum0 = sol.split.rough.add(&sol.split.mid).add(&sol.split.core);
    assert!(sum0.sub(&u0).l2_norm() <= 1e-12 * u0.l2_norm());
    for j in 0..tg.len() {
        let s = sol.rough.path.field(j).add(sol.mid.path.field(j)).add(sol.core_path.field(j));
        assert!(s.sub(sol.total.field(j)).l2_norm() <= 1e-13 * u0.l2_norm());
    }

    // Weak-form certificate of the sum.
    assert!(sol.record.weak_residual_scale > 0.1);
    let rel = sol.record.weak_residual_max / sol.record.weak_residual_scale;
    assert!(rel <= 5e-4, "relative weak residual {rel:.3e}");
}

#[test]
fn composite_weak_residual_decreases_under_mesh_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let grid = grid2d(16);
    let u0 = banded_datum(&grid);
    let cfg = CompositeConfig::new(SplitConfig::new(0.2, 0.7, R, 0).unwrap(), 60, 1e-10).unwrap();

    let mut rels = Vec::new();
    let mut layouts = Vec::new();
    for j in [64usize, 128] {
        let sol = solve_composite(&u0, &cfg, &tgrid(j), Some(dir.path())).unwrap();
        rels.push(sol.record.weak_residual_max / sol.record.weak_residual_scale);
        layouts.push((sol.record.tail_start, sol.record.core_end));
    }
    assert_eq!(layouts[0], layouts[1], "the split layout is mesh-stable");
    assert!(rels[0] <= 1e-3, "coarse residual {:.3e}", rels[0]);
    assert!(rels[1] <= 0.5 * rels[0], "refinement must pay off: {rels:?}");
}

#[test]
fn weak_residual_separates_solutions_from_impostors() {
    let grid = grid2d(16);
    let battery = standard_battery();
    assert_eq!(battery.len(), 16);
    let uniform = make_time_grid(0.4, 512, 1.0, 4).unwrap();

    // A single cell flow is nonlinearly silent, so its heat flow solves the
    // full equation and the residual is pure quadrature noise.
    let silent = taylor_green(&grid, 1, 1, 0.3).unwrap();
    let flow = PathSample::heat_flow(&silent, &uniform).unwrap();
    let rep = weak_residual(&flow, 4.0, &battery).unwrap();
    assert!(rep.max_residual() <= 1e-7 * rep.scale);

    // The heat flow of an active field ignores its own advection and is
    // caught by the certificate.
    let active = two_cell_mix(&grid, 0.1).unwrap();
    let flow = PathSample::heat_flow(&active, &uniform).unwrap();
    let rep = weak_residual(&flow, 4.0, &battery).unwrap();
    assert!(rep.max_residual() >= 1e-4 * rep.scale);

    // A frozen-in-time field is off at order one.
    let tg256 = make_time_grid(0.4, 256, 1.0, 4).unwrap();
    let big = two_cell_mix(&grid, 0.3).unwrap();
    let frozen =
        PathSample::new(tg256.clone(), vec![big.clone(); tg256.len()], Some(big.clone())).unwrap();
    let rep = weak_residual(&frozen, 4.0, &battery).unwrap();
    assert!(rep.max_residual() >= 1e-2 * rep.scale);
}

#[test]
fn weak_residual_of_the_fixed_point_path_vanishes_under_refinement() {
    use nslog_core::mild::{solve_mild, MildConfig};
    let grid = grid2d(16);
    let battery = standard_battery();
    let u0 = two_cell_mix(&grid, 0.1).unwrap();
    let cfg = MildConfig::new(0.8, 40, 1e-11, 0.4).unwrap();

    let mut rels = Vec::new();
    for j in [128usize, 512] {
        let tg = make_time_grid(0.4, j, 1.0, 4).unwrap();
        let sol = solve_mild(&u0, &cfg, &tg).unwrap();
        let rep = weak_residual(&sol.path, 4.0, &battery).unwrap();
        rels.push(rep.max_residual() / rep.scale);
    }
    assert!(rels[0] <= 1e-4, "coarse residual {:.3e}", rels[0]);
    assert!(rels[1] <= 0.5 * rels[0]);
    assert!(rels[1] <= 1e-7);
}

#[test]
fn composite_surfaces_stage_tagged_failures() {
    let dir = tempfile::tempdir().unwrap();
    let grid = grid2d(16);
    let tg = tgrid(64);

    // Split stage: infeasible mid band.
    let broad = random_band(&grid, 1.0, 5.0, 0.3, 99).unwrap();
    let cfg = CompositeConfig::new(SplitConfig::new(0.05, 0.05, R, 0).unwrap(), 60, 1e-10).unwrap();
    match solve_composite(&broad, &cfg, &tg, Some(dir.path())) {
        Err(e) => {
            assert_eq!(e.stage(), Some("split"));
            match e {
                Error::Stage { source, .. } => {
                    assert!(matches!(*source, Error::SplitInfeasible { .. }))
                }
                other => panic!("expected a stage wrapper, got {other:?}"),
            }
        }
        Ok(_) => panic!("expected the split stage to fail"),
    }

    // Rough stage: iteration budget too small for the tail fixed point.
    let u0 = banded_datum(&grid);
    let cfg = CompositeConfig::new(SplitConfig::new(0.2, 0.7, R, 0).unwrap(), 1, 1e-10).unwrap();
    match solve_composite(&u0, &cfg, &tg, Some(dir.path())) {
        Err(e) => assert_eq!(e.stage(), Some("rough")),
        Ok(_) => panic!("expected the rough stage to fail"),
    }

    // Mid stage: budget passes the rough solve but not the drifted one.
    let cfg = CompositeConfig::new(SplitConfig::new(0.2, 0.7, R, 0).unwrap(), 4, 1e-10).unwrap();
    match solve_composite(&u0, &cfg, &tg, Some(dir.path())) {
        Err(e) => assert_eq!(e.stage(), Some("mid")),
        Ok(_) => panic!("expected the mid stage to fail"),
    }
}

#[test]
fn composite_record_round_trips_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let grid = grid2d(16);
    let tg = tgrid(64);
    let u0 = banded_datum(&grid);
    let cfg = CompositeConfig::new(SplitConfig::new(0.2, 0.7, R, 0).unwrap(), 60, 1e-10).unwrap();
    let sol = solve_composite(&u0, &cfg, &tg, Some(dir.path())).unwrap();

    let text = serde_json::to_string_pretty(&sol.record).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in [
        "horizon",
        "segments",
        "tail_start",
        "core_end",
        "tail_norm",
        "mid_norm",
        "core_energy",
        "rough",
        "mid",
        "core_accepted",
        "core_rejected",
        "weak_residual_max",
        "weak_residual_scale",
    ] {
        assert!(value.get(key).is_some(), "missing key {key}");
    }
    assert!(value["rough"].get("gate_value").is_some());
    assert!(value["mid"].get("drift_gate").is_some());

    let back: CompositeRunRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(back.tail_norm, sol.record.tail_norm);
    assert_eq!(back.mid_norm, sol.record.mid_norm);
    assert_eq!(back.weak_residual_max, sol.record.weak_residual_max);
    assert_eq!(back.rough.gate_value, sol.record.rough.gate_value);
    assert_eq!(back.mid.residual, sol.record.mid.residual);
}

#[test]
fn weak_residual_validates_inputs() {
    let grid = grid2d(16);
    let u0 = taylor_green(&grid, 1, 1, 0.1).unwrap();

    let tg = make_time_grid(0.4, 4, 1.0, 4).unwrap();
    let short = PathSample::heat_flow(&u0, &tg).unwrap();
    assert!(weak_residual(&short, 4.0, &standard_battery()).is_err());

    let tg = make_time_grid(0.4, 64, 1.0, 4).unwrap();
    let flow = PathSample::heat_flow(&u0, &tg).unwrap();
    assert!(weak_residual(&flow, 4.0, &[]).is_err());
    assert!(weak_residual(&flow, 0.5, &standard_battery()).is_err());
    assert!(weak_residual(&flow, 40.0, &standard_battery()).is_err());
}
