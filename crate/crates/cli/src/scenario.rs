//! Scenario configs and their runners. A scenario is one JSON document that
//! names an experiment kind, the grid and time mesh, the initial data, and
//! the solver knobs. Everything is validated before any compute starts, and
//! every run ends with a manifest hashing the emitted artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nslog_core::duhamel::{bilinear_estimate_sweep, rows_to_csv};
use nslog_core::families::{catalogue, FamilyRecipe};
use nslog_core::galerkin::{
    build_basis, cache_dir_from_env, coeff_c_cached, energy_report, integrate_galerkin,
    DriftLoad, GalerkinSystem,
};
use nslog_core::io::read_field_from_path;
use nslog_core::spaces::{
    besov_norm_heat, besov_norm_lp, log_besov_norm, max_block_index, xr_norm, BaseSpace,
    BesovIndex, NormReport,
};
use nslog_core::time::{make_time_grid, PathSample, TimeGrid};
use nslog_core::{
    make_grid, run_suite, solve_composite, solve_mild, solve_perturbed, suite_csv,
    CompositeConfig, Error, Field, Grid, MildConfig, PerturbedConfig, Result, SplitConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    NormStudy,
    EstimateSweep,
    MildRun,
    PerturbedRun,
    GalerkinRun,
    CompositeRun,
    PropertySuite,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dim: usize,
    pub modes_per_axis: usize,
    pub period: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    pub horizon: f64,
    pub steps: usize,
    pub grade: f64,
    pub quad_order: usize,
}

/// Initial data: a named analytic family or a field container on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataRecipe {
    Family(FamilyRecipe),
    File { file: PathBuf },
}

impl DataRecipe {
    fn build(&self, grid: &Grid) -> Result<Field> {
        match self {
            DataRecipe::Family(f) => f.build(grid),
            DataRecipe::File { file } => {
                let f = read_field_from_path(file)?;
                if f.grid() != grid {
                    return Err(Error::GridMismatch(format!(
                        "field file {} was written on a different grid",
                        file.display()
                    )));
                }
                Ok(f)
            }
        }
    }

    fn check_exists(&self) -> Result<()> {
        if let DataRecipe::File { file } = self {
            if !file.is_file() {
                return Err(Error::invalid(
                    "initial_data",
                    format!("field file {} does not exist", file.display()),
                ));
            }
        }
        Ok(())
    }
}

/// Per-kind solver knobs. Unset fields take the documented defaults during
/// resolution, so the embedded config in every record is complete.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub r: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub eps_ball: Option<f64>,
    pub eps_data: Option<f64>,
    pub eps_tail: Option<f64>,
    pub eps_mid: Option<f64>,
    pub z_band: Option<usize>,
    pub kcut: Option<f64>,
    pub atol: Option<f64>,
    pub rtol: Option<f64>,
    pub n_pairs: Option<usize>,
    pub drift: Option<DataRecipe>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: Kind,
    pub grid: GridBlock,
    pub mesh: MeshBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    pub initial_data: DataRecipe,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    /// Fills every knob the kind consumes, leaving the rest untouched, so
    /// the run record never depends on hidden defaults.
    fn resolved(mut self) -> Scenario {
        let s = &mut self.solver;
        match self.kind {
            Kind::NormStudy => {
                s.r.get_or_insert(0.5);
            }
            Kind::EstimateSweep => {
                s.r.get_or_insert(0.5);
                s.n_pairs.get_or_insert(6);
            }
            Kind::MildRun => {
                s.eps_ball.get_or_insert(0.4);
                s.max_iter.get_or_insert(60);
                s.tol.get_or_insert(1e-10);
            }
            Kind::PerturbedRun => {
                s.r.get_or_insert(0.5);
                s.eps_data.get_or_insert(0.4);
                s.max_iter.get_or_insert(60);
                s.tol.get_or_insert(1e-10);
            }
            Kind::GalerkinRun => {
                s.kcut.get_or_insert(2.5);
                s.atol.get_or_insert(1e-11);
                s.rtol.get_or_insert(1e-9);
            }
            Kind::CompositeRun => {
                s.r.get_or_insert(0.5);
                s.eps_tail.get_or_insert(0.05);
                s.eps_mid.get_or_insert(0.5);
                s.z_band.get_or_insert(0);
                s.max_iter.get_or_insert(60);
                s.tol.get_or_insert(1e-10);
            }
            Kind::PropertySuite => {}
        }
        self
    }
}

fn read_config(path: &Path) -> Result<Scenario> {
    let raw = std::fs::read_to_string(path)?;
    let scenario: Scenario =
        serde_json::from_str(&raw).map_err(|e| Error::Format(format!("config: {e}")))?;
    Ok(scenario)
}

/// Artifact written by a runner: relative name and content bytes.
struct Artifact {
    name: &'static str,
    bytes: Vec<u8>,
}

fn json_artifact(name: &'static str, value: &serde_json::Value) -> Result<Artifact> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Format(format!("serializing {name}: {e}")))?;
    bytes.push(b'\n');
    Ok(Artifact { name, bytes })
}

fn to_json<T: Serialize>(label: &'static str, v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Format(format!("serializing {label}: {e}")))
}

pub fn run_scenario(config_path: &Path) -> Result<u8> {
    let scenario = read_config(config_path)?.resolved();

    // Everything below validates; no artifact is written until compute ends.
    let grid = make_grid(
        scenario.grid.dim,
        scenario.grid.modes_per_axis,
        scenario.grid.period,
    )?;
    let tgrid = make_time_grid(
        scenario.mesh.horizon,
        scenario.mesh.steps,
        scenario.mesh.grade,
        scenario.mesh.quad_order,
    )?;
    scenario.initial_data.check_exists()?;
    if let Some(d) = &scenario.solver.drift {
        d.check_exists()?;
    }
    let u0 = scenario.initial_data.build(&grid)?;

    let mut exit = 0u8;
    let (results, mut artifacts) = match scenario.kind {
        Kind::NormStudy => run_norm_study(&scenario, &u0)?,
        Kind::EstimateSweep => run_estimate_sweep(&scenario, &grid, &tgrid)?,
        Kind::MildRun => run_mild(&scenario, &u0, &tgrid)?,
        Kind::PerturbedRun => run_perturbed(&scenario, &grid, &u0, &tgrid)?,
        Kind::GalerkinRun => run_galerkin(&scenario, &grid, &u0, &tgrid)?,
        Kind::CompositeRun => run_composite(&scenario, &u0, &tgrid)?,
        Kind::PropertySuite => {
            let (pair, all_pass) = run_property_suite()?;
            if !all_pass {
                exit = 4;
            }
            pair
        }
    };

    let record = serde_json::json!({
        "config": to_json("config", &scenario)?,
        "results": results,
    });
    artifacts.push(json_artifact("record.json", &record)?);

    std::fs::create_dir_all(&scenario.output_dir)?;
    for a in &artifacts {
        std::fs::write(scenario.output_dir.join(a.name), &a.bytes)?;
    }
    write_manifest(&scenario.output_dir)?;
    println!(
        "wrote {} artifacts to {}",
        artifacts.len() + 1,
        scenario.output_dir.display()
    );
    Ok(exit)
}

fn norm_csv(rows: &[NormReport]) -> String {
    let mut out = String::from("space,value,base_term,tail_term\n");
    for r in rows {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.16e},{},{}\n",
            r.space,
            r.value,
            opt(r.base_term),
            opt(r.tail_term)
        ));
    }
    out
}

fn run_norm_study(
    scenario: &Scenario,
    u0: &Field,
) -> Result<(serde_json::Value, Vec<Artifact>)> {
    let r = scenario.solver.r.unwrap();
    let horizon = scenario.mesh.horizon;
    let idx = BesovIndex::from_r(r)?;
    let e = BaseSpace::Lp(2.0);
    let j_max = max_block_index(u0.grid());

    let mut rows = vec![
        besov_norm_lp(u0, &idx, &e, j_max)?,
        besov_norm_heat(u0, &idx, &e, horizon, 1.0, None)?,
        log_besov_norm(u0, &e, horizon, None)?,
        xr_norm(u0, r, 1e-11, 20_000)?,
    ];
    for (space, value) in [("L2", u0.l2_norm()), ("Linf", u0.linf_norm())] {
        rows.push(NormReport {
            value,
            space: space.to_string(),
            indices: None,
            mesh: None,
            iterations: None,
            seed: None,
            base_term: None,
            tail_term: None,
        });
    }

    println!("norm_study: {} norms of the datum", rows.len());
    for row in &rows {
        println!("  {} = {:.16e}", row.space, row.value);
    }
    let artifacts = vec![Artifact {
        name: "norms.csv",
        bytes: norm_csv(&rows).into_bytes(),
    }];
    Ok((to_json("norms", &rows)?, artifacts))
}

fn run_estimate_sweep(
    scenario: &Scenario,
    grid: &Grid,
    tgrid: &TimeGrid,
) -> Result<(serde_json::Value, Vec<Artifact>)> {
    let r = scenario.solver.r.unwrap();
    let n_pairs = scenario.solver.n_pairs.unwrap();
    let reports = bilinear_estimate_sweep(grid, tgrid, r, n_pairs, scenario.seed)?;
    let mut csv = String::from("name,constant\n");
    for rep in &reports {
        csv.push_str(&format!("{},{:.16e}\n", rep.name, rep.constant));
        println!("estimate {}: constant {:.16e}", rep.name, rep.constant);
    }
    let artifacts = vec![Artifact {
        name: "constants.csv",
        bytes: csv.into_bytes(),
    }];
    Ok((to_json("estimates", &reports)?, artifacts))
}

fn run_mild(
    scenario: &Scenario,
    u0: &Field,
    tgrid: &TimeGrid,
) -> Result<(serde_json::Value, Vec<Artifact>)> {
    let s = &scenario.solver;
    let cfg = MildConfig::new(
        s.eps_ball.unwrap(),
        s.max_iter.unwrap(),
        s.tol.unwrap(),
        scenario.mesh.horizon,
    )?;
    let sol = solve_mild(u0, &cfg, tgrid)?;
    println!(
        "mild_run: gate {:.16e} (limit {:.16e}), residual {:.16e} after {} iterates",
        sol.gate_value,
        cfg.gate_limit(),
        sol.residual,
        sol.iterates
    );
    sol.path.save_dir(scenario.output_dir.join("solution"))?;
    Ok((to_json("mild", &sol.run_record())?, Vec::new()))
}

fn heat_drift(scenario: &Scenario, grid: &Grid, tgrid: &TimeGrid) -> Result<PathSample> {
    let recipe = scenario
        .solver
        .drift
        .as_ref()
        .ok_or_else(|| Error::invalid("drift", "this scenario kind needs a drift recipe"))?;
    PathSample::heat_flow(&recipe.build(grid)?, tgrid)
}

fn run_perturbed(
    scenario: &Scenario,
    grid: &Grid,
    u0: &Field,
    tgrid: &TimeGrid,
) -> Result<(serde_json::Value, Vec<Artifact>)> {
    let s = &scenario.solver;
    let cfg = PerturbedConfig::new(
        s.r.unwrap(),
        s.eps_data.unwrap(),
        s.max_iter.unwrap(),
        s.tol.unwrap(),
        scenario.mesh.horizon,
    )?;
    let a = heat_drift(scenario, grid, tgrid)?;
    let sol = solve_perturbed(&a, u0, &cfg, tgrid)?;
    println!(
        "perturbed_run: drift gate {:.16e}, data gate {:.16e}, residual {:.16e}, halvings {}",
        sol.drift_gate, sol.data_gate, sol.residual, sol.halvings
    );
    sol.path.save_dir(scenario.output_dir.join("solution"))?;
    Ok((to_json("perturbed", &sol.run_record())?, Vec::new()))
}

fn run_galerkin(
    scenario: &Scenario,
    grid: &Grid,
    u0: &Field,
    tgrid: &TimeGrid,
) -> Result<(serde_json::Value, Vec<Artifact>)> {
    let s = &scenario.solver;
    let basis = build_basis(grid, s.kcut.unwrap())?;
    let tensor = coeff_c_cached(&basis, cache_dir_from_env().as_deref())?;
    let g0 = basis.project(u0)?;
    let mut sys = GalerkinSystem::new(&basis, &tensor)?;
    let drift = match &scenario.solver.drift {
        Some(_) => Some(heat_drift(scenario, grid, tgrid)?),
        None => None,
    };
    if let Some(a) = &drift {
        sys = sys.with_drift_path(a)?;
    }
    let path = integrate_galerkin(&sys, &g0, tgrid, s.atol.unwrap(), s.rtol.unwrap())?;
    let loads: Vec<DriftLoad> = drift.iter().map(DriftLoad::Bounded).collect();
    let report = energy_report(&path, &g0, &loads)?;
    println!(
        "galerkin_run: {} modes, energy constant {:.16e}, initial energy {:.16e}",
        basis.n(),
        report.constant,
        report.initial_energy
    );

    let mut trajectory = String::from("t,energy,dissipation\n");
    for j in 0..path.times.len() {
        trajectory.push_str(&format!(
            "{:.16e},{:.16e},{:.16e}\n",
            path.times[j], path.energy[j], path.dissipation[j]
        ));
    }
    let artifacts = vec![
        Artifact { name: "trajectory.csv", bytes: trajectory.into_bytes() },
        Artifact { name: "energy.csv", bytes: rows_to_csv(&report.rows).into_bytes() },
    ];
    let results = serde_json::json!({
        "modes": basis.n(),
        "blown_up": path.blown_up,
        "energy_constant": report.constant,
        "initial_energy": report.initial_energy,
    });
    Ok((results, artifacts))
}

fn run_composite(
    scenario: &Scenario,
    u0: &Field,
    tgrid: &TimeGrid,
) -> Result<(serde_json::Value, Vec<Artifact>)> {
    let s = &scenario.solver;
    let split = SplitConfig::new(
        s.eps_tail.unwrap(),
        s.eps_mid.unwrap(),
        s.r.unwrap(),
        s.z_band.unwrap(),
    )?;
    let cfg = CompositeConfig::new(split, s.max_iter.unwrap(), s.tol.unwrap())?;
    let sol = solve_composite(u0, &cfg, tgrid, cache_dir_from_env().as_deref())?;
    println!(
        "composite_run: bands rough/mid/core = {}/{}/{} of {}, weak residual {:.16e} (scale {:.16e})",
        sol.record.segments - sol.record.tail_start,
        sol.record.tail_start - sol.record.core_end,
        sol.record.core_end,
        sol.record.segments,
        sol.record.weak_residual_max,
        sol.record.weak_residual_scale
    );
    sol.total.save_dir(scenario.output_dir.join("total"))?;
    Ok((to_json("composite", &sol.record)?, Vec::new()))
}

fn run_property_suite() -> Result<((serde_json::Value, Vec<Artifact>), bool)> {
    let rows = run_suite(None)?;
    let all_pass = rows.iter().all(|r| r.pass);
    let artifacts = vec![Artifact {
        name: "suite.csv",
        bytes: suite_csv(&rows).into_bytes(),
    }];
    println!(
        "property_suite: {}/{} checks pass",
        rows.iter().filter(|r| r.pass).count(),
        rows.len()
    );
    Ok(((to_json("suite", &rows)?, artifacts), all_pass))
}

/// Walks the output directory and records every file's size and SHA-256,
/// then writes manifest.json alongside them.
fn write_manifest(dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut entries = Vec::new();
    for rel in files {
        if rel == "manifest.json" {
            continue;
        }
        let bytes = std::fs::read(dir.join(&rel))?;
        let mut h = Sha256::new();
        h.update(&bytes);
        let mut row = BTreeMap::new();
        row.insert("path".to_string(), serde_json::json!(rel));
        row.insert("bytes".to_string(), serde_json::json!(bytes.len()));
        let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        row.insert("sha256".to_string(), serde_json::json!(hex));
        entries.push(row);
    }
    let manifest = serde_json::json!({ "artifacts": entries });
    let mut bytes = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(dir.join("manifest.json"), bytes)?;
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .map_err(|e| Error::Format(format!("path outside output dir: {e}")))?;
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

pub fn list_families() -> Result<u8> {
    // The catalogue instantiates each family on a small grid so the listing
    // itself certifies the divergence-free promise.
    let grid = make_grid(2, 32, 1.0)?;
    let samples: Vec<FamilyRecipe> = vec![
        FamilyRecipe::TaylorGreen { m: 1, n: 1, amplitude: 1.0 },
        FamilyRecipe::TwoCellMix { amplitude: 1.0 },
        FamilyRecipe::RotatedMode { k: vec![2, 1], amplitude: 1.0 },
        FamilyRecipe::RandomBand { kmin: 1.0, kmax: 4.0, amplitude: 1.0, seed: 1 },
        FamilyRecipe::ThreeBand {
            low_amplitude: 0.3,
            mid_amplitude: 0.1,
            high_amplitude: 0.02,
        },
    ];
    for ((name, schema), recipe) in catalogue().iter().zip(&samples) {
        let defect = recipe.build(&grid)?.divergence_defect();
        println!("{name}: {schema}");
        println!("  divergence defect of a sample member on 32^2: {defect:.3e}");
    }
    Ok(0)
}

pub fn print_suite(filter: Option<&str>) -> Result<u8> {
    let rows = run_suite(filter)?;
    print!("{}", suite_csv(&rows));
    Ok(if rows.iter().all(|r| r.pass) { 0 } else { 4 })
}
