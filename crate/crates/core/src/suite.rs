//! Cross-module invariant battery: one cheap deterministic check per module,
//! each reduced to a measured value against a fixed threshold. The command
//! line front end prints these rows as CSV.

use crate::duhamel::{bilinear_b, bilinear_b_symmetric, logweight_convolution_check};
use crate::error::Result;
use crate::families::{random_band, rotated_mode, taylor_green, three_band, two_cell_mix};
use crate::field::Field;
use crate::galerkin::{build_basis, coeff_c, coeff_c_pairing};
use crate::grid::make_grid;
use crate::io::{read_field_from_path, write_field_to_path};
use crate::mild::{solve_mild, MildConfig};
use crate::perturbed::{apply_l, invert_i_minus_l};
use crate::quad::gauss_legendre_on;
use crate::spaces::{dyadic_bump, radial_cutoff, xr_norm};
use crate::spectral::{advection_term, heat_semigroup};
use crate::splitting::{dyadic_segments, standard_battery, weak_residual};
use crate::time::{make_time_grid, PathSample};

/// One suite check: a measured value that must not exceed its threshold.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SuiteRow {
    pub module: &'static str,
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn row(module: &'static str, name: &'static str, value: f64, threshold: f64) -> SuiteRow {
    SuiteRow { module, name, value, threshold, pass: value <= threshold }
}

/// Runs every check (or only those of one module) and reports the rows.
/// Rows are deterministic: fixed seeds, fixed grids, no wall-clock inputs.
pub fn run_suite(filter: Option<&str>) -> Result<Vec<SuiteRow>> {
    let mut rows = Vec::new();
    let wanted = |m: &str| filter.is_none_or(|f| f == m);

    let grid = make_grid(2, 16, 1.0)?;
    let band = random_band(&grid, 1.0, 5.0, 1.0, 3)?;

    if wanted("grid") {
        let phys = band.to_physical();
        let back =
            Field::from_spectral(&grid, phys.iter().map(|p| grid.to_spectral(p)).collect());
        rows.push(row(
            "grid",
            "transform_round_trip",
            band.sub(&back).l2_norm() / band.l2_norm(),
            1e-13,
        ));
        rows.push(row(
            "grid",
            "parseval_identity",
            (band.lp_norm(2.0) / band.l2_norm() - 1.0).abs(),
            1e-12,
        ));
    }

    if wanted("field") {
        let raw = Field::from_fn(&grid, |x| {
            vec![(x[0].sin() * (2.0 * x[1]).cos()), ((x[0] + x[1]).sin())]
        });
        let projected = crate::spectral::leray_project(&raw);
        rows.push(row("field", "projection_kills_divergence", projected.divergence_defect(), 1e-12));
        rows.push(row(
            "field",
            "real_data_conjugate_symmetry",
            raw.conjugate_symmetry_defect(),
            1e-12,
        ));
    }

    if wanted("spectral") {
        let tg = taylor_green(&grid, 1, 1, 1.0)?;
        rows.push(row(
            "spectral",
            "symmetric_wave_self_advection_vanishes",
            advection_term(&tg, &tg)?.l2_norm(),
            1e-12,
        ));
        rows.push(row(
            "spectral",
            "heat_flow_contracts_energy",
            heat_semigroup(&band, 0.1)?.l2_norm() / band.l2_norm(),
            1.0,
        ));
    }

    if wanted("spaces") {
        let mut worst = 0.0f64;
        for i in 0..=600 {
            let x = i as f64 * 0.1;
            let mut sum = radial_cutoff(x);
            for j in 1..=6 {
                sum += dyadic_bump(x, j);
            }
            worst = worst.max((sum - radial_cutoff(x / 64.0)).abs());
        }
        rows.push(row("spaces", "cutoff_partition_of_unity", worst, 1e-12));
        let x1 = xr_norm(&band, 0.5, 1e-11, 20_000)?.value;
        let x2 = xr_norm(&band.scale(2.0), 0.5, 1e-11, 20_000)?.value;
        rows.push(row("spaces", "multiplier_norm_homogeneity", (x2 / x1 - 2.0).abs(), 1e-8));
    }

    if wanted("quad") {
        let (xs, ws) = gauss_legendre_on(4, 0.0, 1.0);
        let integral: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x.powi(7)).sum();
        rows.push(row("quad", "degree_seven_exactness", (integral - 0.125).abs(), 1e-14));
    }

    if wanted("time") {
        let tg = make_time_grid(0.4, 24, 2.0, 4)?;
        let nodes = tg.nodes();
        let mut defect = (nodes[nodes.len() - 1] - 0.4).abs();
        if !(nodes[0] > 0.0) {
            defect += 1.0;
        }
        for w in nodes.windows(2) {
            if w[1] <= w[0] {
                defect += 1.0;
            }
        }
        rows.push(row("time", "graded_mesh_anchored_and_monotone", defect, 1e-14));
    }

    if wanted("duhamel") {
        let tg = make_time_grid(0.4, 24, 2.0, 4)?;
        let u = PathSample::heat_flow(&two_cell_mix(&grid, 0.1)?, &tg)?;
        let b1 = bilinear_b(&u, &u)?;
        let b2 = bilinear_b_symmetric(&u, &u)?;
        let mut gap = 0.0f64;
        for (f, g) in b1.fields().iter().zip(b2.fields()) {
            gap = gap.max(f.sub(g).l2_norm());
        }
        rows.push(row("duhamel", "bilinear_symmetrization_agrees", gap, 1e-12));
        let check = logweight_convolution_check(0.1, 0.4, 64)?;
        rows.push(row("duhamel", "logweight_kernel_bound", check.ratio(), 10.0));
    }

    if wanted("families") {
        let wide = make_grid(2, 32, 1.0)?;
        let members = [
            taylor_green(&wide, 1, 1, 0.5)?,
            two_cell_mix(&wide, 0.3)?,
            rotated_mode(&wide, &[2, 1], 0.4)?,
            random_band(&wide, 1.0, 4.0, 1.0, 9)?,
            three_band(&wide, 0.3, 0.1, 0.02)?,
        ];
        let worst = members.iter().map(|f| f.divergence_defect()).fold(0.0, f64::max);
        rows.push(row("families", "catalogue_is_solenoidal", worst, 1e-12));
    }

    if wanted("io") {
        let path = std::env::temp_dir().join(format!("nslog-suite-{}.nslg", std::process::id()));
        write_field_to_path(&band, &path)?;
        let back = read_field_from_path(&path)?;
        let _ = std::fs::remove_file(&path);
        rows.push(row("io", "binary_container_round_trip", band.sub(&back).l2_norm(), 0.0));
    }

    if wanted("mild") {
        let tg = make_time_grid(0.4, 32, 2.0, 4)?;
        let cfg = MildConfig::new(0.4, 40, 1e-10, 0.4)?;
        let sol = solve_mild(&two_cell_mix(&grid, 0.05)?, &cfg, &tg)?;
        rows.push(row("mild", "small_data_fixed_point_residual", sol.residual, 1e-9));
    }

    if wanted("perturbed") {
        let tg = make_time_grid(0.4, 24, 2.0, 4)?;
        let a = PathSample::heat_flow(&random_band(&grid, 1.0, 2.0, 0.3, 5)?, &tg)?;
        let rhs = PathSample::heat_flow(&two_cell_mix(&grid, 0.05)?, &tg)?;
        let res = invert_i_minus_l(&a, &rhs, 0.5, 1e-10, 200)?;
        let applied = apply_l(&a, &res.path)?;
        let mut gap = 0.0f64;
        let mut scale = 0.0f64;
        for ((u, lu), r) in res.path.fields().iter().zip(applied.fields()).zip(rhs.fields()) {
            gap = gap.max(u.sub(lu).sub(r).l2_norm());
            scale = scale.max(r.l2_norm());
        }
        rows.push(row("perturbed", "resolvent_inverts_its_operator", gap / scale, 1e-6));
    }

    if wanted("galerkin") {
        let basis = build_basis(&grid, 2.3)?;
        let a = coeff_c(&basis)?.dense();
        let b = coeff_c_pairing(&basis)?.dense();
        let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        rows.push(row("galerkin", "tensor_routes_agree", gap, 1e-11));
        let n = basis.n();
        let mut skew = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    skew = skew.max((a[(i * n + j) * n + k] + a[(i * n + k) * n + j]).abs());
                }
            }
        }
        rows.push(row("galerkin", "transport_skew_symmetry", skew, 1e-11));
    }

    if wanted("splitting") {
        let segments = dyadic_segments(&band)?;
        let mut sum = Field::zero(&grid);
        for s in &segments {
            sum = sum.add(s);
        }
        rows.push(row(
            "splitting",
            "dyadic_partition_reassembles",
            sum.sub(&band).l2_norm() / band.l2_norm(),
            1e-12,
        ));
        let tg = make_time_grid(0.4, 512, 1.0, 4)?;
        let u = PathSample::heat_flow(&taylor_green(&grid, 1, 1, 0.3)?, &tg)?;
        let report = weak_residual(&u, 4.0, &standard_battery())?;
        rows.push(row(
            "splitting",
            "exact_flow_passes_weak_certificate",
            report.max_residual() / report.scale,
            1e-7,
        ));
    }

    Ok(rows)
}

/// CSV rendering with full-precision values, one row per check.
pub fn suite_csv(rows: &[SuiteRow]) -> String {
    let mut out = String::from("module,name,value,threshold,pass\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.16e},{:.16e},{}\n",
            r.module, r.name, r.value, r.threshold, r.pass
        ));
    }
    out
}
