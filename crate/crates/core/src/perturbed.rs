//! Fixed-point solver for the Navier-Stokes equation linearly perturbed by a
//! divergence-free drift path a(t): the drift operator L(a) u = -B(a, u) -
//! B(u, a), the Neumann resolvent of I - L(a) under a probe-measured
//! smallness gate, and the gated Picard iteration for
//! u = [I - L(a)]^{-1} [e^{t Delta} u0 - B(u, u)] in the three-part
//! smoothing norm.

use serde::{Deserialize, Serialize};

use crate::duhamel::{bilinear_b, bilinear_b_symmetric, path_norms_v, PathNorms};
use crate::error::{Error, Gate, Result};
use crate::families::random_band;
use crate::field::Field;
use crate::time::{PathSample, TimeGrid};

/// Gates and iteration parameters.  `eps_data` bounds the full smoothing
/// norm of the heat flow of the data; the drift gate itself is measured from
/// the supplied path at solve time and must come out at most 1/2.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PerturbedConfig {
    pub r: f64,
    pub eps_data: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub horizon: f64,
}

impl PerturbedConfig {
    pub fn new(r: f64, eps_data: f64, max_iter: usize, tol: f64, horizon: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid("r", format!("smoothing index must lie in (0,1), got {r}")));
        }
        if !(eps_data > 0.0 && eps_data.is_finite()) {
            return Err(Error::invalid("eps_data", format!("must be positive, got {eps_data}")));
        }
        if max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be at least 1"));
        }
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::invalid("tol", format!("must be positive, got {tol}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon", format!("must be positive, got {horizon}")));
        }
        Ok(PerturbedConfig { r, eps_data, max_iter, tol, horizon })
    }
}

/// Drift term of the perturbed equation, assembled in one quadrature pass
/// through the symmetrized product: L(a) u = -2 B_sym(a, u).
pub fn apply_l(a: &PathSample, u: &PathSample) -> Result<PathSample> {
    Ok(bilinear_b_symmetric(a, u)?.scale(-2.0))
}

/// Reference assembly of the drift term from two plain bilinear calls,
/// kept as an independent cross-check of the symmetrized route.
pub fn apply_l_split(a: &PathSample, u: &PathSample) -> Result<PathSample> {
    bilinear_b(a, u)?.scale(-1.0).sub(&bilinear_b(u, a)?)
}

const DRIFT_PROBES: usize = 12;
const DRIFT_SAFETY: f64 = 1.25;
/// Largest admissible probe-estimated drift amplification.
pub const DRIFT_LIMIT: f64 = 0.5;

/// Probe estimate of the operator norm of L(a) on the smoothing-norm space:
/// the largest amplification over a fixed battery of random heat-flow paths,
/// inflated by a 25 % safety factor.
pub fn probe_drift_norm(a: &PathSample, r: f64) -> Result<f64> {
    let grid = a.grid();
    let kmax = (grid.kmax_dealias() as f64 - 1.0).max(2.0);
    let mut worst = 0.0_f64;
    for i in 0..DRIFT_PROBES {
        let p0 = random_band(grid, 1.0, kmax, 1.0, 0xD00D + i as u64)?;
        let p = PathSample::heat_flow(&p0, a.tgrid())?;
        let denom = path_norms_v(&p, r)?.v_total();
        if denom == 0.0 {
            continue;
        }
        let image = path_norms_v(&apply_l(a, &p)?, r)?.v_total();
        worst = worst.max(image / denom);
    }
    Ok(DRIFT_SAFETY * worst)
}

/// Neumann solve of x = rhs + L(a) x with its certificate.
#[derive(Clone, Debug)]
pub struct Resolvent {
    pub path: PathSample,
    pub drift_gate: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Per-sweep update norms; filled only by the tracked entry point.
    pub history: Vec<f64>,
}

fn resolve_with_gate(
    a: &PathSample,
    rhs: &PathSample,
    r: f64,
    drift_gate: f64,
    tol: f64,
    max_iter: usize,
    track: bool,
) -> Result<Resolvent> {
    // One operator application per sweep.  The update rhs + L x - x is also
    // the equation defect of x, so a single norm serves as both the decay
    // monitor and the convergence certificate.
    let mut x = rhs.clone();
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    for it in 1..=max_iter {
        let step = rhs.add(&apply_l(a, &x)?)?;
        let defect = path_norms_v(&step.sub(&x)?, r)?.v_total();
        if track {
            history.push(defect);
        }
        best = best.min(defect);
        if defect <= tol {
            return Ok(Resolvent {
                path: x,
                drift_gate,
                iterations: it,
                residual: defect,
                history,
            });
        }
        x = step;
    }
    Err(Error::MaxIter { iters: max_iter, best })
}

/// Inverts I - L(a) on a right-hand side by Richardson iteration, gated by
/// the probe-measured drift norm (must be at most 1/2).
pub fn invert_i_minus_l(
    a: &PathSample,
    rhs: &PathSample,
    r: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Resolvent> {
    a.same_mesh(rhs)?;
    let drift_gate = probe_drift_norm(a, r)?;
    if drift_gate > DRIFT_LIMIT {
        return Err(Error::GateFailed {
            gate: Gate::Drift,
            measured: drift_gate,
            limit: DRIFT_LIMIT,
        });
    }
    resolve_with_gate(a, rhs, r, drift_gate, tol, max_iter, false)
}

/// Same solve recording the norm of every update, for decay-rate studies.
pub fn invert_i_minus_l_tracked(
    a: &PathSample,
    rhs: &PathSample,
    r: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Resolvent> {
    a.same_mesh(rhs)?;
    let drift_gate = probe_drift_norm(a, r)?;
    if drift_gate > DRIFT_LIMIT {
        return Err(Error::GateFailed {
            gate: Gate::Drift,
            measured: drift_gate,
            limit: DRIFT_LIMIT,
        });
    }
    resolve_with_gate(a, rhs, r, drift_gate, tol, max_iter, true)
}

/// Converged perturbed fixed point with gate values and iteration history.
#[derive(Clone, Debug)]
pub struct PerturbedSolution {
    pub path: PathSample,
    pub iterates: usize,
    pub contraction_ratios: Vec<f64>,
    pub residual: f64,
    pub drift_gate: f64,
    pub data_gate: f64,
    pub eps: f64,
    pub norms: PathNorms,
    pub resolvent_iterations: usize,
    pub horizon: f64,
    pub halvings: usize,
}

/// Serializable sidecar of a perturbed run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbedRunRecord {
    pub gate_value: f64,
    pub eps: f64,
    pub iterations: usize,
    pub ratios: Vec<f64>,
    pub residual: f64,
    pub drift_gate: f64,
    pub resolvent_iterations: usize,
    pub v_norm_components: PathNorms,
    pub horizon: f64,
    pub halvings: usize,
}

impl PerturbedSolution {
    pub fn run_record(&self) -> PerturbedRunRecord {
        PerturbedRunRecord {
            gate_value: self.data_gate,
            eps: self.eps,
            iterations: self.iterates,
            ratios: self.contraction_ratios.clone(),
            residual: self.residual,
            drift_gate: self.drift_gate,
            resolvent_iterations: self.resolvent_iterations,
            v_norm_components: self.norms.clone(),
            horizon: self.horizon,
            halvings: self.halvings,
        }
    }
}

fn attempt_solve(
    a: &PathSample,
    u0: &Field,
    cfg: &PerturbedConfig,
    tgrid: &TimeGrid,
) -> Result<PerturbedSolution> {
    let drift_gate = probe_drift_norm(a, cfg.r)?;
    if drift_gate > DRIFT_LIMIT {
        return Err(Error::GateFailed {
            gate: Gate::Drift,
            measured: drift_gate,
            limit: DRIFT_LIMIT,
        });
    }
    let heat = PathSample::heat_flow(u0, tgrid)?;
    let data_gate = path_norms_v(&heat, cfg.r)?.v_total();
    if data_gate > cfg.eps_data {
        return Err(Error::GateFailed {
            gate: Gate::PerturbedData,
            measured: data_gate,
            limit: cfg.eps_data,
        });
    }

    let mut resolvent_iterations = 0usize;
    let first = resolve_with_gate(a, &heat, cfg.r, drift_gate, cfg.tol, cfg.max_iter * 64, false)?;
    resolvent_iterations += first.iterations;
    let mut u = first.path;
    let mut ratios = Vec::new();
    let mut d_prev: Option<f64> = None;
    let mut bad_streak = 0usize;
    let mut best = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let rhs = heat.sub(&bilinear_b(&u, &u)?)?;
        let step = resolve_with_gate(a, &rhs, cfg.r, drift_gate, cfg.tol, cfg.max_iter * 64, false)?;
        resolvent_iterations += step.iterations;
        let next = step.path;
        let d = path_norms_v(&next.sub(&u)?, cfg.r)?.v_total();
        best = best.min(d);
        if !d.is_finite() {
            return Err(Error::NonContraction { ratios });
        }
        if let Some(dp) = d_prev {
            if dp > 0.0 {
                let ratio = d / dp;
                ratios.push(ratio);
                if ratio >= 1.0 {
                    bad_streak += 1;
                    if bad_streak >= 3 {
                        return Err(Error::NonContraction { ratios });
                    }
                } else {
                    bad_streak = 0;
                }
            }
        }
        u = next;
        if d <= cfg.tol {
            // Equation-level defect: u - L(a)u - e^{t Delta}u0 + B(u, u).
            let defect = u
                .sub(&apply_l(a, &u)?)?
                .sub(&heat)?
                .add(&bilinear_b(&u, &u)?)?;
            let residual = path_norms_v(&defect, cfg.r)?.v_total();
            let norms = path_norms_v(&u, cfg.r)?;
            return Ok(PerturbedSolution {
                path: u,
                iterates: it,
                contraction_ratios: ratios,
                residual,
                drift_gate,
                data_gate,
                eps: cfg.eps_data,
                norms,
                resolvent_iterations,
                horizon: tgrid.horizon(),
                halvings: 0,
            });
        }
        d_prev = Some(d);
    }
    Err(Error::MaxIter { iters: cfg.max_iter, best })
}

/// Gated fixed point of u = [I - L(a)]^{-1} [e^{t Delta} u0 - B(u, u)].
/// On a gate failure the horizon is halved (drift and data are resampled
/// onto the shorter mesh) and the solve retried, at most six times.
pub fn solve_perturbed(
    a: &PathSample,
    u0: &Field,
    cfg: &PerturbedConfig,
    tgrid: &TimeGrid,
) -> Result<PerturbedSolution> {
    if (tgrid.horizon() - cfg.horizon).abs() > 1e-12 * cfg.horizon {
        return Err(Error::MeshMismatch(format!(
            "config horizon {} vs mesh horizon {}",
            cfg.horizon,
            tgrid.horizon()
        )));
    }
    if a.grid() != u0.grid() {
        return Err(Error::GridMismatch("drift path and datum on different grids".into()));
    }
    if a.tgrid().nodes() != tgrid.nodes() {
        return Err(Error::MeshMismatch("drift path sampled on a different time mesh".into()));
    }

    let mut tg = tgrid.clone();
    let mut drift = a.clone();
    let mut halvings = 0usize;
    loop {
        match attempt_solve(&drift, u0, cfg, &tg) {
            Ok(mut sol) => {
                sol.halvings = halvings;
                return Ok(sol);
            }
            Err(Error::GateFailed { gate, measured, limit }) => {
                if halvings >= 6 {
                    return Err(Error::GateFailed { gate, measured, limit });
                }
                tg = tg.with_horizon(0.5 * tg.horizon())?;
                drift = drift.resample(&tg);
                halvings += 1;
            }
            Err(e) => return Err(e),
        }
    }
}
