//! Frequency splitting of initial data and the composite three-stage solve.
//!
//! The datum is cut along dyadic shells into a high `rough` tail (handled by
//! the log-weighted fixed point), a `mid` band (handled by the drifted
//! smoothing fixed point with the rough flow as drift), and a low `core`
//! (handled by the reduced energy system with the sum of the other two flows
//! as drift).  Summing the three stage solutions gives a candidate solution
//! of the full equation, certified a posteriori by a weak-form residual
//! against a battery of divergence-free probes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::duhamel::{path_norm_x, path_norms_v};
use crate::error::{Error, Gate, Result};
use crate::families::random_band;
use crate::field::Field;
use crate::galerkin::{
    build_basis, coeff_c_cached, integrate_galerkin, GalerkinPath, GalerkinSystem, BLOWUP_FACTOR,
};
use crate::mild::{solve_mild, MildConfig, MildRunRecord, MildSolution};
use crate::perturbed::{
    probe_drift_norm, solve_perturbed, PerturbedConfig, PerturbedRunRecord, PerturbedSolution,
    DRIFT_LIMIT,
};
use crate::quad::integrate_samples;
use crate::spaces::{lp_blocks, max_block_index, radial_cutoff};
use crate::spectral::{project_divergence, tensor_product};
use crate::time::{PathSample, TimeGrid};

/// L2 pairing of two real fields through the Parseval identity.
fn l2_pair(u: &Field, v: &Field) -> f64 {
    let mut s = 0.0;
    for a in 0..u.grid().dim() {
        s += u
            .comp(a)
            .iter()
            .zip(v.comp(a).iter())
            .map(|(x, y)| (x * y.conj()).re)
            .sum::<f64>();
    }
    s * u.grid().volume()
}

/// Cuts a field into dyadic shells: the low-pass block, the ring blocks up
/// to the largest admissible index, and one extra segment holding everything
/// the rings do not reach (the corner modes past the last full-pass radius).
/// The segments sum back to the field up to rounding.
pub fn dyadic_segments(f: &Field) -> Result<Vec<Field>> {
    let j_max = max_block_index(f.grid());
    let mut segments = lp_blocks(f, j_max)?;
    let top = 2f64.powi(j_max as i32);
    let leftover = f.apply_symbol(|k2| 1.0 - radial_cutoff(k2.sqrt() / top));
    segments.push(leftover);
    Ok(segments)
}

/// Budgets and band layout for the initial-data split.  `eps_tail` caps the
/// log-weighted gate norm of the rough part, `eps_mid` caps the smoothing
/// gate norm of the mid band, and `z_band` is the largest segment index the
/// energy core is allowed to hold.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitConfig {
    pub eps_tail: f64,
    pub eps_mid: f64,
    pub r: f64,
    pub z_band: usize,
}

impl SplitConfig {
    pub fn new(eps_tail: f64, eps_mid: f64, r: f64, z_band: usize) -> Result<Self> {
        if !(eps_tail > 0.0 && eps_tail.is_finite()) {
            return Err(Error::invalid("eps_tail", format!("must be positive, got {eps_tail}")));
        }
        if !(eps_mid > 0.0 && eps_mid.is_finite()) {
            return Err(Error::invalid("eps_mid", format!("must be positive, got {eps_mid}")));
        }
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid("r", format!("smoothing order must lie in (0, 1), got {r}")));
        }
        Ok(SplitConfig { eps_tail, eps_mid, r, z_band })
    }
}

/// Outcome of the split: three band-limited fields that sum to the datum,
/// the segment layout, and the gate norms that admitted each part.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub rough: Field,
    pub mid: Field,
    pub core: Field,
    /// First segment index of the rough tail (== `segments` for an empty tail).
    pub tail_start: usize,
    /// One past the last segment index of the core.
    pub core_end: usize,
    /// Total number of dyadic segments on this grid.
    pub segments: usize,
    pub tail_norm: f64,
    pub mid_norm: f64,
    pub core_energy: f64,
}

/// Greedy descending split.  The tail absorbs whole segments from the top
/// while its heat-flow gate norm stays under `eps_tail`; everything between
/// the core capacity `z_band` and the tail is forced into the mid band and
/// must pass the smoothing gate, else the split is infeasible.
pub fn split_initial_data(u0: &Field, cfg: &SplitConfig, tgrid: &TimeGrid) -> Result<SplitData> {
    let grid = u0.grid();
    let j_max = max_block_index(grid);
    if cfg.z_band > j_max {
        return Err(Error::invalid(
            "z_band",
            format!("core may hold at most the resolved rings (index <= {j_max}), got {}", cfg.z_band),
        ));
    }
    let segments = dyadic_segments(u0)?;
    let total = segments.len();

    let mut rough = Field::zero(grid);
    let mut tail_norm = 0.0;
    let mut tail_start = total;
    while tail_start > 0 {
        let trial = rough.add(&segments[tail_start - 1]);
        let flow = PathSample::heat_flow(&trial, tgrid)?;
        let norm = path_norm_x(&flow).x_norm;
        if norm < cfg.eps_tail {
            rough = trial;
            tail_norm = norm;
            tail_start -= 1;
        } else {
            break;
        }
    }

    let core_end = tail_start.min(cfg.z_band + 1);
    let mut mid = Field::zero(grid);
    for seg in &segments[core_end..tail_start] {
        mid = mid.add(seg);
    }
    let mid_norm = path_norms_v(&PathSample::heat_flow(&mid, tgrid)?, cfg.r)?.v_total();
    if mid_norm >= cfg.eps_mid {
        return Err(Error::SplitInfeasible {
            best_tail: tail_norm,
            eps1: cfg.eps_tail,
            best_mid: mid_norm,
            eps2: cfg.eps_mid,
        });
    }

    let mut core = Field::zero(grid);
    for seg in &segments[..core_end] {
        core = core.add(seg);
    }
    let core_energy = core.l2_norm();

    Ok(SplitData {
        rough,
        mid,
        core,
        tail_start,
        core_end,
        segments: total,
        tail_norm,
        mid_norm,
        core_energy,
    })
}

fn smooth_ramp(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }
}

fn ramp_slope(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        30.0 * x * x * (1.0 - x) * (1.0 - x)
    }
}

/// C^2 bump supported on [0.1 T, 0.9 T] and its derivative; localizes the
/// weak pairing away from both endpoints so no boundary terms appear.
fn time_bump(t: f64, horizon: f64) -> (f64, f64) {
    let w = 0.2 * horizon;
    let up = (t - 0.1 * horizon) / w;
    let down = (0.9 * horizon - t) / w;
    let value = smooth_ramp(up) * smooth_ramp(down);
    let slope = (ramp_slope(up) * smooth_ramp(down) - smooth_ramp(up) * ramp_slope(down)) / w;
    (value, slope)
}

/// Weak-form defect of a sampled path against random solenoidal probes.
/// `residuals[i]` is the absolute value of the time integral
/// `<u, psi_i> phi' + <u, lap psi_i> phi - <P div(u (x) u), psi_i> phi`,
/// which vanishes for exact solutions; `scale` is the triangle bound of the
/// worst integrand times the horizon, the yardstick for relative smallness.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeakResidualReport {
    pub residuals: Vec<f64>,
    pub scale: f64,
}

impl WeakResidualReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(*r))
    }
}

/// Fixed 16-member probe battery used by the composite certificate.
pub fn standard_battery() -> Vec<u64> {
    (0..16).map(|i| 0x5EED + i as u64).collect()
}

/// `band_top` caps the probe wavenumbers; keeping it fixed makes reports on
/// different grids comparable, since the probe fields then agree exactly.
pub fn weak_residual(u: &PathSample, band_top: f64, seeds: &[u64]) -> Result<WeakResidualReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one probe"));
    }
    let tgrid = u.tgrid();
    if tgrid.len() < 8 {
        return Err(Error::invalid("u", "need at least 8 time samples for the weak pairing"));
    }
    let grid = u.grid();
    if !(band_top >= 1.0 && band_top <= grid.kmax_dealias() as f64) {
        return Err(Error::invalid(
            "band_top",
            format!("probe band must lie in [1, {}], got {band_top}", grid.kmax_dealias()),
        ));
    }
    let horizon = tgrid.horizon();
    let nodes = tgrid.nodes();

    // Advective flux at every node, shared across probes.
    let mut flux = Vec::with_capacity(nodes.len());
    for f in u.fields() {
        flux.push(project_divergence(&tensor_product(f, f, false)?));
    }

    let mut residuals = Vec::with_capacity(seeds.len());
    let mut scale = 0.0f64;
    for &seed in seeds {
        let psi = random_band(grid, 1.0, band_top, 1.0, seed)?;
        let psi = psi.scale(1.0 / psi.l2_norm().max(1e-300));
        let lap = psi.apply_symbol(|k2| -k2);
        let mut g = Vec::with_capacity(nodes.len());
        let mut bound = 0.0f64;
        for (j, &t) in nodes.iter().enumerate() {
            let (phi, dphi) = time_bump(t, horizon);
            let f = u.field(j);
            let mass = l2_pair(f, &psi);
            let diffuse = l2_pair(f, &lap);
            let advect = l2_pair(&flux[j], &psi);
            g.push(mass * dphi + (diffuse - advect) * phi);
            bound = bound.max(mass.abs() * dphi.abs() + (diffuse.abs() + advect.abs()) * phi);
        }
        residuals.push(integrate_samples(nodes, &g)?.abs());
        scale = scale.max(bound * horizon);
    }
    Ok(WeakResidualReport { residuals, scale: scale.max(1e-300) })
}

/// Split budgets plus the shared iteration controls of the two fixed-point
/// stages.  The rough stage admits a ball of radius `2 eps_tail`, so its
/// data gate is exactly the split budget.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CompositeConfig {
    pub split: SplitConfig,
    pub max_iter: usize,
    pub tol: f64,
}

impl CompositeConfig {
    pub fn new(split: SplitConfig, max_iter: usize, tol: f64) -> Result<Self> {
        if max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be at least 1"));
        }
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::invalid("tol", format!("must be positive, got {tol}")));
        }
        Ok(CompositeConfig { split, max_iter, tol })
    }
}

/// Serializable sidecar of a composite run: the split layout, the per-stage
/// solver records, and the weak-form certificate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompositeRunRecord {
    pub horizon: f64,
    pub segments: usize,
    pub tail_start: usize,
    pub core_end: usize,
    pub tail_norm: f64,
    pub mid_norm: f64,
    pub core_energy: f64,
    pub rough: MildRunRecord,
    pub mid: PerturbedRunRecord,
    pub core_accepted: usize,
    pub core_rejected: usize,
    pub weak_residual_max: f64,
    pub weak_residual_scale: f64,
}

/// The three stage solutions, their sum, and the run record.
pub struct CompositeSolution {
    pub split: SplitData,
    pub rough: MildSolution,
    pub mid: PerturbedSolution,
    pub core: GalerkinPath,
    pub core_path: PathSample,
    pub total: PathSample,
    pub record: CompositeRunRecord,
}

fn coeff_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs the full pipeline: split, rough fixed point, drifted mid fixed
/// point, reduced energy core under the combined drift, then the weak-form
/// certificate of the summed path.  Errors are tagged with the stage that
/// produced them.  `cache` optionally persists the convection tensor.
pub fn solve_composite(
    u0: &Field,
    cfg: &CompositeConfig,
    tgrid: &TimeGrid,
    cache: Option<&Path>,
) -> Result<CompositeSolution> {
    let horizon = tgrid.horizon();
    let split =
        split_initial_data(u0, &cfg.split, tgrid).map_err(|e| e.at_stage("split"))?;

    let mild_cfg = MildConfig::new(2.0 * cfg.split.eps_tail, cfg.max_iter, cfg.tol, horizon)?;
    let rough = solve_mild(&split.rough, &mild_cfg, tgrid).map_err(|e| e.at_stage("rough"))?;

    // Pre-check the drift gate so the mid stage cannot fall back to horizon
    // halving, which would leave the stages on different meshes.
    let drift_gate = probe_drift_norm(&rough.path, cfg.split.r).map_err(|e| e.at_stage("mid"))?;
    if drift_gate > DRIFT_LIMIT {
        return Err(Error::GateFailed {
            gate: Gate::Drift,
            measured: drift_gate,
            limit: DRIFT_LIMIT,
        }
        .at_stage("mid"));
    }
    let mid_cfg =
        PerturbedConfig::new(cfg.split.r, cfg.split.eps_mid, cfg.max_iter, cfg.tol, horizon)?;
    let mid =
        solve_perturbed(&rough.path, &split.mid, &mid_cfg, tgrid).map_err(|e| e.at_stage("mid"))?;
    assert_eq!(mid.halvings, 0, "drift pre-check rules out horizon halving");

    let grid = u0.grid();
    let basis =
        build_basis(grid, grid.kmax_lattice() + 1.0).map_err(|e| e.at_stage("core"))?;
    let g0 = basis.project(&split.core).map_err(|e| e.at_stage("core"))?;
    let back = basis.synthesize(&g0).map_err(|e| e.at_stage("core"))?;
    if back.sub(&split.core).l2_norm() > 1e-8 * split.core.l2_norm().max(1.0) {
        return Err(Error::invalid("u0", "core band content escapes the reduced basis")
            .at_stage("core"));
    }
    let tensor = coeff_c_cached(&basis, cache).map_err(|e| e.at_stage("core"))?;
    let drift = rough.path.add(&mid.path).map_err(|e| e.at_stage("core"))?;
    let sys = GalerkinSystem::new(&basis, &tensor)
        .and_then(|s| s.with_drift_path(&drift))
        .map_err(|e| e.at_stage("core"))?;
    let core =
        integrate_galerkin(&sys, &g0, tgrid, 1e-11, 1e-9).map_err(|e| e.at_stage("core"))?;
    if core.blown_up {
        let t = core.times.last().copied().unwrap_or(0.0);
        let increment = core.coeffs.last().map(|c| coeff_norm(c)).unwrap_or(0.0);
        return Err(Error::CflViolation {
            t,
            increment,
            limit: BLOWUP_FACTOR * coeff_norm(&g0).max(1e-30),
        }
        .at_stage("core"));
    }
    let mut core_fields = Vec::with_capacity(core.coeffs.len());
    for c in &core.coeffs {
        core_fields.push(basis.synthesize(c).map_err(|e| e.at_stage("core"))?);
    }
    let core_path = PathSample::new(tgrid.clone(), core_fields, Some(split.core.clone()))
        .map_err(|e| e.at_stage("core"))?;

    let total = drift.add(&core_path)?;
    let band_top = (grid.kmax_dealias() - 1).max(1) as f64;
    let weak = weak_residual(&total, band_top, &standard_battery())?;

    let record = CompositeRunRecord {
        horizon,
        segments: split.segments,
        tail_start: split.tail_start,
        core_end: split.core_end,
        tail_norm: split.tail_norm,
        mid_norm: split.mid_norm,
        core_energy: split.core_energy,
        rough: rough.run_record(),
        mid: mid.run_record(),
        core_accepted: core.accepted,
        core_rejected: core.rejected,
        weak_residual_max: weak.max_residual(),
        weak_residual_scale: weak.scale,
    };

    Ok(CompositeSolution { split, rough, mid, core, core_path, total, record })
}
