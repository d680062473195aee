//! Picard fixed-point solver for the mild Navier-Stokes equation
//! u(t) = e^{t Delta} u0 - B(u, u)(t) on a graded time mesh, with a smallness
//! gate on the heat flow of the data, contraction bookkeeping in the
//! log-weighted sup norm, and an independent integrating-factor Runge-Kutta
//! time stepper for cross-validation.

use serde::{Deserialize, Serialize};

use crate::duhamel::{bilinear_b, path_norm_x};
use crate::error::{Error, Gate, Result};
use crate::field::Field;
use crate::spectral::{heat_semigroup, project_divergence, tensor_product};
use crate::time::{PathSample, TimeGrid};

/// Iteration parameters.  `eps_ball` is the radius of the closed ball the
/// iteration lives in; the data gate admits only heat flows of norm at most
/// `eps_ball / 2`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MildConfig {
    pub eps_ball: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub horizon: f64,
}

impl MildConfig {
    pub fn new(eps_ball: f64, max_iter: usize, tol: f64, horizon: f64) -> Result<Self> {
        if !(eps_ball > 0.0 && eps_ball.is_finite()) {
            return Err(Error::invalid("eps_ball", format!("must be positive, got {eps_ball}")));
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
        Ok(MildConfig { eps_ball, max_iter, tol, horizon })
    }

    /// Builds the gate from a measured bilinear constant: the contraction
    /// argument needs 4 C_B eps < 1, and the admitted ball then has radius
    /// 2 eps.
    pub fn from_measured(c_b: f64, eps: f64, max_iter: usize, tol: f64, horizon: f64) -> Result<Self> {
        if !(c_b > 0.0 && eps > 0.0) {
            return Err(Error::invalid("c_b", "measured constant and eps must be positive"));
        }
        if 4.0 * c_b * eps >= 1.0 {
            return Err(Error::invalid(
                "eps",
                format!("contraction requires 4*C_B*eps < 1, got {}", 4.0 * c_b * eps),
            ));
        }
        MildConfig::new(2.0 * eps, max_iter, tol, horizon)
    }

    pub fn gate_limit(&self) -> f64 {
        0.5 * self.eps_ball
    }
}

/// Converged fixed point with its iteration history.
#[derive(Clone, Debug)]
pub struct MildSolution {
    pub path: PathSample,
    pub iterates: usize,
    pub contraction_ratios: Vec<f64>,
    pub residual: f64,
    pub gate_value: f64,
    pub eps: f64,
}

/// Serializable sidecar of a solver run (everything but the fields).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MildRunRecord {
    pub gate_value: f64,
    pub eps: f64,
    pub iterations: usize,
    pub ratios: Vec<f64>,
    pub residual: f64,
}

impl MildSolution {
    pub fn run_record(&self) -> MildRunRecord {
        MildRunRecord {
            gate_value: self.gate_value,
            eps: self.eps,
            iterations: self.iterates,
            ratios: self.contraction_ratios.clone(),
            residual: self.residual,
        }
    }
}

fn require_solenoidal(u0: &Field) -> Result<()> {
    let scale = u0.coeff_l2().max(1.0);
    if u0.divergence_defect() > 1e-8 * scale {
        return Err(Error::invalid("u0", "initial datum must be divergence-free"));
    }
    if u0.mean_magnitude() > 1e-10 * scale {
        return Err(Error::invalid("u0", "initial datum must have zero mean"));
    }
    Ok(())
}

/// Picard iteration u_{n+1} = e^{t Delta} u0 - B(u_n, u_n) starting from the
/// heat flow, in the log-weighted sup norm.  Fails if the data gate is
/// violated, if the iteration stops contracting for three consecutive steps,
/// or if `max_iter` is exhausted.
pub fn solve_mild(u0: &Field, cfg: &MildConfig, tgrid: &TimeGrid) -> Result<MildSolution> {
    if (tgrid.horizon() - cfg.horizon).abs() > 1e-12 * cfg.horizon {
        return Err(Error::MeshMismatch(format!(
            "config horizon {} vs mesh horizon {}",
            cfg.horizon,
            tgrid.horizon()
        )));
    }
    require_solenoidal(u0)?;
    let heat = PathSample::heat_flow(u0, tgrid)?;
    let eps = cfg.gate_limit();
    let gate_value = path_norm_x(&heat).x_norm;
    if gate_value > eps {
        return Err(Error::GateFailed {
            gate: Gate::MildData,
            measured: gate_value,
            limit: eps,
        });
    }

    let mut u = heat.clone();
    let mut ratios = Vec::new();
    let mut d_prev: Option<f64> = None;
    let mut bad_streak = 0usize;
    let mut best = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let next = heat.sub(&bilinear_b(&u, &u)?)?;
        let d = path_norm_x(&next.sub(&u)?).x_norm;
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
            // One extra operator application certifies the fixed point.
            let residual = path_norm_x(&u.sub(&heat.sub(&bilinear_b(&u, &u)?)?)?).x_norm;
            return Ok(MildSolution {
                path: u,
                iterates: it,
                contraction_ratios: ratios,
                residual,
                gate_value,
                eps,
            });
        }
        d_prev = Some(d);
    }
    Err(Error::MaxIter {
        iters: cfg.max_iter,
        best,
    })
}

fn nonlinear_term(u: &Field) -> Result<Field> {
    Ok(project_divergence(&tensor_product(u, u, false)?).scale(-1.0))
}

/// Integrating-factor Runge-Kutta (order 4) time stepper for
/// d/dt u = Delta u - P div(u ⊗ u), sampled exactly onto the mesh nodes.
/// The linear part is applied by its exact per-mode symbol; with the
/// nonlinearity switched off the scheme is the heat flow itself.  Substeps
/// never exceed T/steps, and each step checks an advective stability bound
/// h * ||u||_inf * kappa_max before proceeding.
pub fn oracle_timestep(
    u0: &Field,
    tgrid: &TimeGrid,
    steps: usize,
    nonlinear: bool,
) -> Result<PathSample> {
    if steps < 64 {
        return Err(Error::invalid("steps", format!("need at least 64 steps, got {steps}")));
    }
    require_solenoidal(u0)?;
    let grid = u0.grid().clone();
    let h_max = tgrid.horizon() / steps as f64;
    let kappa_max = (grid.kmax_dealias() as f64) / grid.period() * (grid.dim() as f64).sqrt();

    let mut u = u0.clone();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(tgrid.len());
    for &target in tgrid.nodes() {
        let span = target - t;
        let n_sub = (span / h_max).ceil().max(1.0) as usize;
        let h = span / n_sub as f64;
        for _ in 0..n_sub {
            if nonlinear {
                let speed = u.linf_norm();
                let increment = h * speed * kappa_max;
                if increment > 1.0 {
                    return Err(Error::CflViolation {
                        t,
                        increment,
                        limit: 1.0,
                    });
                }
                let k1 = nonlinear_term(&u)?;
                let half = heat_semigroup(&u.add(&k1.scale(0.5 * h)), 0.5 * h)?;
                let k2 = nonlinear_term(&half)?;
                let u_half = heat_semigroup(&u, 0.5 * h)?;
                let k3 = nonlinear_term(&u_half.add(&k2.scale(0.5 * h)))?;
                let u_full = heat_semigroup(&u, h)?;
                let k4 = nonlinear_term(&u_full.add(&heat_semigroup(&k3, 0.5 * h)?.scale(h)))?;
                let increment = heat_semigroup(&k1, h)?
                    .add(&heat_semigroup(&k2.add(&k3), 0.5 * h)?.scale(2.0))
                    .add(&k4)
                    .scale(h / 6.0);
                u = u_full.add(&increment);
            } else {
                u = heat_semigroup(&u, h)?;
            }
            t += h;
        }
        t = target;
        out.push(u.clone());
    }
    PathSample::new(tgrid.clone(), out, Some(u0.clone()))
}

/// Lipschitz-stability report of the data-to-solution map.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub eta: f64,
    pub ratios: Vec<f64>,
    pub lipschitz: f64,
}

/// Solves from `u0` and from `u0 + eta * phi` for each probe field and
/// reports the solution-distance ratios ||u' - u||_X / (eta ||e^{t Delta}
/// phi||_X).  Both data must pass the gate.
pub fn wellposedness_probe(
    u0: &Field,
    eta: f64,
    battery: &[Field],
    cfg: &MildConfig,
    tgrid: &TimeGrid,
) -> Result<ProbeReport> {
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::invalid("eta", format!("must be >= 0, got {eta}")));
    }
    if battery.is_empty() {
        return Err(Error::invalid("battery", "need at least one probe field"));
    }
    let base = solve_mild(u0, cfg, tgrid)?;
    let mut ratios = Vec::with_capacity(battery.len());
    for phi in battery {
        if eta == 0.0 {
            ratios.push(0.0);
            continue;
        }
        let shifted = solve_mild(&u0.add(&phi.scale(eta)), cfg, tgrid)?;
        let dist = path_norm_x(&shifted.path.sub(&base.path)?).x_norm;
        let phi_norm = path_norm_x(&PathSample::heat_flow(phi, tgrid)?).x_norm;
        ratios.push(dist / (eta * phi_norm));
    }
    let lipschitz = ratios.iter().cloned().fold(0.0_f64, f64::max);
    Ok(ProbeReport { eta, ratios, lipschitz })
}
