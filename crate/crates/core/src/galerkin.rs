//! Divergence-free Galerkin reduction of the torus Navier-Stokes system:
//! an orthonormal trigonometric basis of solenoidal modes, the projected
//! convection tensor with an optional disk cache, linear matrices for the
//! Stokes operator with frozen drift, an adaptive Runge-Kutta integrator
//! with an augmented dissipation state, and a Gronwall-type energy report.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::duhamel::CheckRow;
use crate::error::{Error, Result};
use crate::families::{half_lattice_reps, polarization};
use crate::field::Field;
use crate::grid::Grid;
use crate::spaces::xr_norm;
use crate::spectral::{project_divergence, tensor_product};
use crate::time::{PathSample, TimeGrid};

/// One real basis mode: a unit-norm solenoidal cosine or sine wave.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisElement {
    pub k: Vec<i64>,
    pub polarization: usize,
    pub sine: bool,
}

/// Orthonormal basis of the divergence-free trigonometric subspace with
/// |k| <= kcut (and every |k_a| within the dealiased band).
pub struct GalerkinBasis {
    grid: Grid,
    elements: Vec<BasisElement>,
    fields: Vec<Field>,
    kappa_sq: Vec<f64>,
    kcut: f64,
}

/// L2 pairing of two real fields through the Parseval identity.
fn l2_inner(u: &Field, v: &Field) -> f64 {
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

/// Enumerates the solenoidal modes of the band in a reproducible order:
/// representatives by |k|^2 then lexicographically, polarizations in their
/// canonical order, cosine before sine.
pub fn build_basis(grid: &Grid, kcut: f64) -> Result<GalerkinBasis> {
    if !(kcut >= 1.0 && kcut.is_finite()) {
        return Err(Error::invalid("kcut", format!("must be >= 1, got {kcut}")));
    }
    let dim = grid.dim();
    let l = grid.period();
    let amp = (2.0 / grid.volume()).sqrt();
    let reps = half_lattice_reps(grid, 1.0, kcut);
    if reps.is_empty() {
        return Err(Error::invalid("kcut", "band contains no modes"));
    }
    let mut elements = Vec::new();
    let mut fields = Vec::new();
    let mut kappa_sq = Vec::new();
    for k in &reps {
        let kf: Vec<f64> = k.iter().map(|&a| a as f64).collect();
        let ksq = kf.iter().map(|a| a * a).sum::<f64>() / (l * l);
        for pol in 0..dim - 1 {
            let e = polarization(&kf, pol);
            for sine in [false, true] {
                let kc = k.clone();
                let ec = e.clone();
                let field = Field::from_fn(grid, |x| {
                    let phase: f64 =
                        kc.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi / l).sum();
                    let wave = if sine { phase.sin() } else { phase.cos() };
                    ec.iter().map(|&ea| amp * ea * wave).collect()
                })
                .with_flags(true, true);
                elements.push(BasisElement { k: k.clone(), polarization: pol, sine });
                fields.push(field);
                kappa_sq.push(ksq);
            }
        }
    }
    Ok(GalerkinBasis { grid: grid.clone(), elements, fields, kappa_sq, kcut })
}

impl GalerkinBasis {
    pub fn n(&self) -> usize {
        self.fields.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kcut(&self) -> f64 {
        self.kcut
    }

    pub fn field(&self, i: usize) -> &Field {
        &self.fields[i]
    }

    pub fn elements(&self) -> &[BasisElement] {
        &self.elements
    }

    /// |k/L|^2 per element: the decay rate of the mode under the heat flow.
    pub fn kappa_sq(&self) -> &[f64] {
        &self.kappa_sq
    }

    /// Basis coefficients of a field (its L2 projection onto the span).
    pub fn project(&self, f: &Field) -> Result<Vec<f64>> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch("projection input on a different grid".into()));
        }
        Ok(self.fields.iter().map(|w| l2_inner(f, w)).collect())
    }

    /// Field with the given basis coefficients.
    pub fn synthesize(&self, coeffs: &[f64]) -> Result<Field> {
        if coeffs.len() != self.n() {
            return Err(Error::invalid(
                "coeffs",
                format!("expected {} coefficients, got {}", self.n(), coeffs.len()),
            ));
        }
        let dim = self.grid.dim();
        let mut comps: Vec<ArrayD<Complex64>> =
            (0..dim).map(|_| ArrayD::zeros(IxDyn(self.grid.shape()))).collect();
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for a in 0..dim {
                Zip::from(&mut comps[a])
                    .and(self.fields[i].comp(a))
                    .for_each(|z, &w| *z += c * w);
            }
        }
        Ok(Field::from_spectral(&self.grid, comps).with_flags(true, true))
    }
}

const COUPLING_CUTOFF: f64 = 1e-11;

/// Sparse projected convection tensor c[i][j][k] = <P div(w_i (x) w_j), w_k>.
/// The quadratic Galerkin term is N_k(g) = -sum_ij c_ijk g_i g_j, matching
/// the sign convention of the spectral solvers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvectionTensor {
    n: usize,
    entries: Vec<(u32, u32, u32, f64)>,
}

impl ConvectionTensor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(u32, u32, u32, f64)] {
        &self.entries
    }

    /// Dense n^3 copy in (i, j, k) row-major order, for small test bases.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n * n];
        for &(i, j, k, c) in &self.entries {
            out[(i as usize * n + j as usize) * n + k as usize] = c;
        }
        out
    }

    /// out_k += scale * sum_ij c_ijk g_i g_j.
    pub fn quadratic_into(&self, g: &[f64], out: &mut [f64], scale: f64) {
        for &(i, j, k, c) in &self.entries {
            out[k as usize] += scale * c * g[i as usize] * g[j as usize];
        }
    }

    /// out_k += scale * sum_ij (c_ijk + c_jik) alpha_i g_j, the linearization
    /// of the quadratic term around a drift with coefficients alpha.
    pub fn drift_into(&self, alpha: &[f64], g: &[f64], out: &mut [f64], scale: f64) {
        for &(i, j, k, c) in &self.entries {
            out[k as usize] +=
                scale * c * (alpha[i as usize] * g[j as usize] + g[i as usize] * alpha[j as usize]);
        }
    }
}

fn collect_tensor<F>(n: usize, per_pair: F) -> Result<ConvectionTensor>
where
    F: Fn(usize, usize) -> Result<Vec<(u32, u32, u32, f64)>> + Sync,
{
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let chunks: Vec<Vec<(u32, u32, u32, f64)>> = pairs
        .par_iter()
        .map(|&(i, j)| per_pair(i, j))
        .collect::<Result<Vec<_>>>()?;
    let entries: Vec<(u32, u32, u32, f64)> = chunks.into_iter().flatten().collect();
    Ok(ConvectionTensor { n, entries })
}

/// Half-lattice representative of a wavevector (first nonzero component
/// positive), or None for the zero mode.
fn canonical_rep(k: &[i64]) -> Option<Vec<i64>> {
    let lead = k.iter().find(|&&a| a != 0)?;
    Some(if *lead > 0 {
        k.to_vec()
    } else {
        k.iter().map(|a| -a).collect()
    })
}

/// Assembles the convection tensor through the solver-side operator:
/// the dealiased product followed by the Leray-projected divergence.
/// Every basis mode is one wave, so its spectrum is two atoms at +-k and a
/// pairwise product is supported on the (at most four) sums k_i +- k_j. The
/// whole chain (product, dealias drop, divergence, projection, pairing) is
/// evaluated in closed form on those atoms; the pairing route below goes
/// through the gridded transforms instead and cross-checks both the
/// selection rule and the arithmetic.
pub fn coeff_c(basis: &GalerkinBasis) -> Result<ConvectionTensor> {
    let n = basis.n();
    let grid = basis.grid();
    let dim = grid.dim();
    let l = grid.period();
    let kd = grid.kmax_dealias();
    let volume = grid.volume();
    let elements = basis.elements();
    let mut by_rep: HashMap<&[i64], Vec<usize>> = HashMap::new();
    for (idx, e) in elements.iter().enumerate() {
        by_rep.entry(e.k.as_slice()).or_default().push(idx);
    }
    // Spectral coefficients of each mode at +k and -k, one entry per
    // component, read off the stored field.
    let mut atoms: Vec<[Vec<Complex64>; 2]> = Vec::with_capacity(n);
    for (e, f) in elements.iter().zip(0..n).map(|(e, i)| (e, basis.field(i))) {
        let mut pair = [Vec::with_capacity(dim), Vec::with_capacity(dim)];
        for (side, sign) in [1i64, -1].into_iter().enumerate() {
            let k: Vec<i64> = e.k.iter().map(|&a| sign * a).collect();
            let idx = grid
                .index_of(&k)
                .ok_or_else(|| Error::invalid("basis", "mode outside the lattice"))?;
            for a in 0..dim {
                pair[side].push(f.comp(a)[idx.as_slice()]);
            }
        }
        atoms.push(pair);
    }
    collect_tensor(n, |i, j| {
        // Product atoms: accumulated unprojected divergence i (kappa . u) v
        // per surviving wavevector q = +-k_i +- k_j.
        let mut prods: Vec<(Vec<i64>, Vec<Complex64>)> = Vec::with_capacity(4);
        for (si, ui) in [(1i64, &atoms[i][0]), (-1, &atoms[i][1])] {
            for (sj, vj) in [(1i64, &atoms[j][0]), (-1, &atoms[j][1])] {
                let q: Vec<i64> = elements[i]
                    .k
                    .iter()
                    .zip(&elements[j].k)
                    .map(|(a, b)| si * a + sj * b)
                    .collect();
                if q.iter().all(|&a| a == 0) || q.iter().any(|&a| a.abs() > kd) {
                    continue;
                }
                let kdotu: Complex64 =
                    q.iter().zip(ui).map(|(&qa, &ua)| qa as f64 / l * ua).sum();
                let s = Complex64::new(0.0, 1.0) * kdotu;
                match prods.iter_mut().find(|(p, _)| p == &q) {
                    Some((_, d)) => {
                        for (db, &vb) in d.iter_mut().zip(vj) {
                            *db += s * vb;
                        }
                    }
                    None => prods.push((q, vj.iter().map(|&vb| s * vb).collect())),
                }
            }
        }
        for (q, d) in prods.iter_mut() {
            let kap: Vec<f64> = q.iter().map(|&a| a as f64 / l).collect();
            let k2: f64 = kap.iter().map(|a| a * a).sum();
            let dot: Complex64 = kap.iter().zip(d.iter()).map(|(&ka, &db)| ka * db).sum();
            let s = dot / k2;
            for (db, &ka) in d.iter_mut().zip(&kap) {
                *db -= ka * s;
            }
        }
        let mut targets: Vec<usize> = Vec::with_capacity(8);
        for sign in [1i64, -1] {
            let combined: Vec<i64> = elements[i]
                .k
                .iter()
                .zip(&elements[j].k)
                .map(|(a, b)| a + sign * b)
                .collect();
            let Some(rep) = canonical_rep(&combined) else { continue };
            if let Some(ids) = by_rep.get(rep.as_slice()) {
                for &k in ids {
                    if !targets.contains(&k) {
                        targets.push(k);
                    }
                }
            }
        }
        targets.sort_unstable();
        let mut out = Vec::new();
        for t in targets {
            let kt = &elements[t].k;
            let mut acc = Complex64::default();
            for (q, w) in &prods {
                let side = if q == kt {
                    0
                } else if q.iter().zip(kt).all(|(&a, &b)| a == -b) {
                    1
                } else {
                    continue;
                };
                for (wb, &cb) in w.iter().zip(&atoms[t][side]) {
                    acc += wb * cb.conj();
                }
            }
            let c = acc.re * volume;
            if c.abs() > COUPLING_CUTOFF {
                out.push((i as u32, j as u32, t as u32, c));
            }
        }
        Ok(out)
    })
}

/// Independent assembly through integration by parts:
/// c_ijk = -<w_i (x) w_j, grad w_k>, no divergence and no projection taken.
pub fn coeff_c_pairing(basis: &GalerkinBasis) -> Result<ConvectionTensor> {
    let n = basis.n();
    let grid = basis.grid();
    let dim = grid.dim();
    // Gradient tensors G[k][a*dim + b] = d_a (w_k)_b.
    let grads: Vec<Vec<ArrayD<Complex64>>> = (0..n)
        .map(|k| {
            let mut g = Vec::with_capacity(dim * dim);
            for a in 0..dim {
                for b in 0..dim {
                    let mut d = basis.field(k).comp(b).clone();
                    Zip::from(&mut d)
                        .and(grid.kappa(a))
                        .for_each(|z, &ka| *z *= Complex64::new(0.0, ka));
                    g.push(d);
                }
            }
            g
        })
        .collect();
    let volume = grid.volume();
    collect_tensor(n, |i, j| {
        let t = tensor_product(basis.field(i), basis.field(j), false)?;
        let mut out = Vec::new();
        for k in 0..n {
            let mut s = 0.0;
            for a in 0..dim {
                for b in 0..dim {
                    s += t
                        .comp(a, b)
                        .iter()
                        .zip(grads[k][a * dim + b].iter())
                        .map(|(x, y)| (x * y.conj()).re)
                        .sum::<f64>();
                }
            }
            let c = -s * volume;
            if c.abs() > COUPLING_CUTOFF {
                out.push((i as u32, j as u32, k as u32, c));
            }
        }
        Ok(out)
    })
}

fn cache_key(basis: &GalerkinBasis) -> String {
    let grid = basis.grid();
    let mut h = Sha256::new();
    h.update(format!(
        "{}:{}:{:e}:{:e}:{}",
        grid.dim(),
        grid.modes_per_axis(),
        grid.period(),
        basis.kcut(),
        basis.n()
    ));
    for e in basis.elements() {
        h.update(format!(";{:?}:{}:{}", e.k, e.polarization, e.sine));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Cache directory advertised through the NSLOG_CACHE_DIR variable.
pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os("NSLOG_CACHE_DIR").map(PathBuf::from)
}

/// Convection tensor with a content-addressed disk cache. An unreadable or
/// stale cache entry is recomputed and rewritten, never trusted.
pub fn coeff_c_cached(basis: &GalerkinBasis, dir: Option<&Path>) -> Result<ConvectionTensor> {
    let Some(dir) = dir else {
        return coeff_c(basis);
    };
    let path = dir.join(format!("ctensor-{}.json", cache_key(basis)));
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(tensor) = serde_json::from_str::<ConvectionTensor>(&text) {
            if tensor.n == basis.n() {
                return Ok(tensor);
            }
        }
    }
    let tensor = coeff_c(basis)?;
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string(&tensor).map_err(|e| Error::Format(e.to_string()))?;
    let tmp = dir.join(format!("ctensor-{}.json.tmp", cache_key(basis)));
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, &path)?;
    Ok(tensor)
}

/// Linear Galerkin matrix, row-major over (output k, input j): the exact
/// Stokes diagonal -|kappa_k|^2, plus the frozen-drift advection
/// -<div(a (x) w_j + w_j (x) a), w_k> when a drift field is supplied.
pub fn coeff_b(basis: &GalerkinBasis, drift: Option<&Field>) -> Result<Vec<f64>> {
    let n = basis.n();
    let mut b = vec![0.0; n * n];
    for k in 0..n {
        b[k * n + k] = -basis.kappa_sq()[k];
    }
    if let Some(a) = drift {
        if a.grid() != basis.grid() {
            return Err(Error::GridMismatch("drift field on a different grid".into()));
        }
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let col =
                    project_divergence(&tensor_product(a, basis.field(j), true)?).scale(-2.0);
                Ok((0..n).map(|k| l2_inner(&col, basis.field(k))).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        for (j, col) in cols.iter().enumerate() {
            for k in 0..n {
                b[k * n + j] += col[k];
            }
        }
    }
    Ok(b)
}

/// Drift coefficients sampled on a time mesh, interpolated like the field
/// paths: linear in ln t, clamped outside the sampled range.
struct AlphaPath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl AlphaPath {
    fn accumulate(&self, t: f64, out: &mut [f64]) {
        let m = self.times.len();
        let (lo, hi, w) = if t <= self.times[0] {
            (0, 0, 0.0)
        } else if t >= self.times[m - 1] {
            (m - 1, m - 1, 0.0)
        } else {
            let hi = self.times.partition_point(|&s| s < t).min(m - 1);
            let lo = hi - 1;
            let w = (t.ln() - self.times[lo].ln()) / (self.times[hi].ln() - self.times[lo].ln());
            (lo, hi, w)
        };
        for (o, (a, b)) in out.iter_mut().zip(self.values[lo].iter().zip(&self.values[hi])) {
            *o += a + w * (b - a);
        }
    }
}

/// Right-hand side of the reduced system: Stokes diagonal, optional frozen
/// and time-dependent drifts, and the quadratic convection term.
pub struct GalerkinSystem<'a> {
    basis: &'a GalerkinBasis,
    tensor: &'a ConvectionTensor,
    lin: Option<Vec<f64>>,
    alphas: Vec<AlphaPath>,
    nonlinear: bool,
}

impl<'a> GalerkinSystem<'a> {
    pub fn new(basis: &'a GalerkinBasis, tensor: &'a ConvectionTensor) -> Result<Self> {
        if tensor.n() != basis.n() {
            return Err(Error::invalid(
                "tensor",
                format!("tensor rank {} vs basis size {}", tensor.n(), basis.n()),
            ));
        }
        Ok(GalerkinSystem { basis, tensor, lin: None, alphas: Vec::new(), nonlinear: true })
    }

    /// Adds a frozen drift field through its full advection matrix. The
    /// field need not lie in the basis span.
    pub fn with_static_drift(mut self, a: &Field) -> Result<Self> {
        let mat = coeff_b(self.basis, Some(a))?;
        let n = self.basis.n();
        let mut drift_part = mat;
        for k in 0..n {
            drift_part[k * n + k] += self.basis.kappa_sq()[k];
        }
        match &mut self.lin {
            Some(lin) => {
                for (l, d) in lin.iter_mut().zip(&drift_part) {
                    *l += d;
                }
            }
            None => self.lin = Some(drift_part),
        }
        Ok(self)
    }

    /// Adds a time-dependent drift path that must stay inside the basis
    /// span; its action is contracted through the convection tensor.
    pub fn with_drift_path(mut self, a: &PathSample) -> Result<Self> {
        if a.grid() != self.basis.grid() {
            return Err(Error::GridMismatch("drift path on a different grid".into()));
        }
        let mut values = Vec::with_capacity(a.tgrid().len());
        for j in 0..a.tgrid().len() {
            values.push(self.basis.project(a.field(j))?);
        }
        for j in [0, a.tgrid().len() - 1] {
            let back = self.basis.synthesize(&values[j])?;
            let scale = a.field(j).l2_norm().max(1e-300);
            let defect = back.sub(a.field(j)).l2_norm() / scale;
            if defect > 1e-8 {
                return Err(Error::invalid(
                    "drift",
                    format!("path leaves the basis span (defect {defect:.3e} at node {j})"),
                ));
            }
        }
        self.alphas.push(AlphaPath { times: a.tgrid().nodes().to_vec(), values });
        Ok(self)
    }

    /// Drops the quadratic term, leaving the linear (possibly drifted) flow.
    pub fn without_nonlinearity(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    fn rhs(&self, t: f64, g: &[f64], dg: &mut [f64]) {
        let n = self.basis.n();
        for k in 0..n {
            dg[k] = -self.basis.kappa_sq()[k] * g[k];
        }
        if let Some(lin) = &self.lin {
            for k in 0..n {
                let row = &lin[k * n..(k + 1) * n];
                dg[k] += row.iter().zip(g).map(|(b, x)| b * x).sum::<f64>();
            }
        }
        if !self.alphas.is_empty() {
            let mut alpha = vec![0.0; n];
            for ap in &self.alphas {
                ap.accumulate(t, &mut alpha);
            }
            self.tensor.drift_into(&alpha, g, dg, -1.0);
        }
        if self.nonlinear {
            self.tensor.quadratic_into(g, dg, -1.0);
        }
    }
}

/// Trajectory of the reduced system sampled at the requested nodes, with the
/// dissipation integral carried as an extra quadrature state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GalerkinPath {
    pub times: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub blown_up: bool,
}

impl GalerkinPath {
    pub fn final_coeffs(&self) -> &[f64] {
        self.coeffs.last().expect("empty trajectory")
    }
}

pub const BLOWUP_FACTOR: f64 = 1e6;

struct Tableau;
impl Tableau {
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A2: [f64; 1] = [1.0 / 5.0];
    const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
    const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
    const A5: [f64; 4] =
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
    const A6: [f64; 5] = [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ];
    const A7: [f64; 6] =
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
    const E: [f64; 7] = [
        35.0 / 384.0 - 5179.0 / 57600.0,
        0.0,
        500.0 / 1113.0 - 7571.0 / 16695.0,
        125.0 / 192.0 - 393.0 / 640.0,
        -2187.0 / 6784.0 + 92097.0 / 339200.0,
        11.0 / 84.0 - 187.0 / 2100.0,
        -1.0 / 40.0,
    ];
}

/// Integrates the reduced system from t = 0 with a fifth-order embedded
/// Runge-Kutta pair under proportional-integral step control, landing
/// exactly on every mesh node. The state is augmented with the cumulative
/// enstrophy integral. A trajectory that grows past 1e6 times its initial
/// size stops early with the blow-up flag set instead of erroring.
pub fn integrate_galerkin(
    sys: &GalerkinSystem,
    g0: &[f64],
    tgrid: &TimeGrid,
    atol: f64,
    rtol: f64,
) -> Result<GalerkinPath> {
    let n = sys.n();
    if g0.len() != n {
        return Err(Error::invalid(
            "g0",
            format!("expected {} coefficients, got {}", n, g0.len()),
        ));
    }
    if !(atol > 0.0 && atol.is_finite()) {
        return Err(Error::invalid("atol", format!("must be positive, got {atol}")));
    }
    if !(rtol >= 1e-13 && rtol.is_finite()) {
        return Err(Error::invalid("rtol", format!("must be >= 1e-13, got {rtol}")));
    }
    let horizon = tgrid.horizon();
    let scale0 = g0.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-30);

    // Augmented state: basis coefficients plus the dissipation integral.
    let dno = n;
    let full_rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        sys.rhs(t, &y[..n], &mut dy[..n]);
        dy[dno] = y[..n]
            .iter()
            .zip(sys.basis.kappa_sq())
            .map(|(g, ks)| ks * g * g)
            .sum::<f64>();
    };

    let mut y = g0.to_vec();
    y.push(0.0);
    let mut t = 0.0;
    let mut k1 = vec![0.0; n + 1];
    full_rhs(t, &y, &mut k1);

    let mut h = (tgrid.node(0)).min(1e-2 * horizon);
    let mut err_prev: f64 = 1e-4;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut blown_up = false;

    let mut times = Vec::with_capacity(tgrid.len());
    let mut coeffs = Vec::with_capacity(tgrid.len());
    let mut energy = Vec::with_capacity(tgrid.len());
    let mut dissipation = Vec::with_capacity(tgrid.len());

    let mut stage = vec![vec![0.0; n + 1]; 6];
    let mut ytmp = vec![0.0; n + 1];
    let mut y5 = vec![0.0; n + 1];

    'nodes: for &node in tgrid.nodes() {
        while t < node - 1e-14 * horizon {
            let h_step = h.min(node - t);
            if h_step < 1e-14 * horizon {
                return Err(Error::StepUnderflow { last_t: t });
            }
            let axpy = |out: &mut [f64], base: &[f64], terms: &[(&[f64], f64)], hh: f64| {
                for i in 0..base.len() {
                    let mut s = 0.0;
                    for (v, c) in terms {
                        s += c * v[i];
                    }
                    out[i] = base[i] + hh * s;
                }
            };
            axpy(&mut ytmp, &y, &[(&k1, Tableau::A2[0])], h_step);
            full_rhs(t + Tableau::C[0] * h_step, &ytmp, &mut stage[0]);
            axpy(
                &mut ytmp,
                &y,
                &[(&k1, Tableau::A3[0]), (&stage[0], Tableau::A3[1])],
                h_step,
            );
            full_rhs(t + Tableau::C[1] * h_step, &ytmp, &mut stage[1]);
            {
                let (s01, rest) = stage.split_at_mut(2);
                axpy(
                    &mut ytmp,
                    &y,
                    &[
                        (&k1, Tableau::A4[0]),
                        (&s01[0], Tableau::A4[1]),
                        (&s01[1], Tableau::A4[2]),
                    ],
                    h_step,
                );
                full_rhs(t + Tableau::C[2] * h_step, &ytmp, &mut rest[0]);
            }
            {
                let (s, rest) = stage.split_at_mut(3);
                axpy(
                    &mut ytmp,
                    &y,
                    &[
                        (&k1, Tableau::A5[0]),
                        (&s[0], Tableau::A5[1]),
                        (&s[1], Tableau::A5[2]),
                        (&s[2], Tableau::A5[3]),
                    ],
                    h_step,
                );
                full_rhs(t + Tableau::C[3] * h_step, &ytmp, &mut rest[0]);
            }
            {
                let (s, rest) = stage.split_at_mut(4);
                axpy(
                    &mut ytmp,
                    &y,
                    &[
                        (&k1, Tableau::A6[0]),
                        (&s[0], Tableau::A6[1]),
                        (&s[1], Tableau::A6[2]),
                        (&s[2], Tableau::A6[3]),
                        (&s[3], Tableau::A6[4]),
                    ],
                    h_step,
                );
                full_rhs(t + Tableau::C[4] * h_step, &ytmp, &mut rest[0]);
            }
            axpy(
                &mut y5,
                &y,
                &[
                    (&k1, Tableau::A7[0]),
                    (&stage[0], Tableau::A7[1]),
                    (&stage[1], Tableau::A7[2]),
                    (&stage[2], Tableau::A7[3]),
                    (&stage[3], Tableau::A7[4]),
                    (&stage[4], Tableau::A7[5]),
                ],
                h_step,
            );
            full_rhs(t + h_step, &y5, &mut stage[5]);

            let mut err = 0.0;
            for i in 0..=n {
                let e = Tableau::E[0] * k1[i]
                    + Tableau::E[1] * stage[0][i]
                    + Tableau::E[2] * stage[1][i]
                    + Tableau::E[3] * stage[2][i]
                    + Tableau::E[4] * stage[3][i]
                    + Tableau::E[5] * stage[4][i]
                    + Tableau::E[6] * stage[5][i];
                let sc = atol + rtol * y[i].abs().max(y5[i].abs());
                err += (h_step * e / sc).powi(2);
            }
            let err = (err / (n + 1) as f64).sqrt();

            if err.is_finite() && err <= 1.0 {
                t += h_step;
                y.copy_from_slice(&y5);
                k1.copy_from_slice(&stage[5]);
                accepted += 1;
                let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
                h = h_step * fac.clamp(0.2, 5.0);
                err_prev = err.max(1e-10);
                let gnorm = y[..n].iter().map(|x| x * x).sum::<f64>().sqrt();
                if gnorm > BLOWUP_FACTOR * scale0 {
                    blown_up = true;
                    break 'nodes;
                }
            } else {
                rejected += 1;
                h = if err.is_finite() {
                    h_step * (0.9 * err.powf(-0.7 / 5.0)).clamp(0.1, 0.5)
                } else {
                    h_step * 0.1
                };
            }
        }
        if !blown_up {
            times.push(node);
            coeffs.push(y[..n].to_vec());
            energy.push(y[..n].iter().map(|x| x * x).sum::<f64>());
            dissipation.push(y[n]);
        }
    }

    if times.is_empty() && !blown_up {
        return Err(Error::Quadrature("no nodes recorded".into()));
    }
    Ok(GalerkinPath { times, coeffs, energy, dissipation, accepted, rejected, blown_up })
}

/// How a drift path enters the energy budget: through the square of its sup
/// norm, or through the critical power of its multiplier norm.
pub enum DriftLoad<'a> {
    Bounded(&'a PathSample),
    Smoothing(&'a PathSample, f64),
}

/// Energy inequality certificate for a computed trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Smallest Gronwall constant making the bound hold at every node.
    pub constant: f64,
    pub initial_energy: f64,
    /// Cumulative drift load integral at each node.
    pub loads: Vec<f64>,
    /// t, lhs = running sup of energy + 2 dissipation, rhs = e0 exp(C load).
    pub rows: Vec<CheckRow>,
}

/// Compares the energy budget sup_s [|u(s)|^2 + 2 int |grad u|^2] against
/// the exponential drift bound and fits the smallest constant certifying it.
/// Without drift the budget is exactly conserved, so the constant is zero.
pub fn energy_report(
    path: &GalerkinPath,
    g0: &[f64],
    loads: &[DriftLoad],
) -> Result<EnergyReport> {
    let e0: f64 = g0.iter().map(|x| x * x).sum();
    if e0 <= 0.0 {
        return Err(Error::invalid("g0", "initial energy must be positive"));
    }
    let m = path.times.len();
    if m == 0 {
        return Err(Error::invalid("path", "empty trajectory"));
    }
    let mut integrand = vec![0.0; m];
    for (j, &t) in path.times.iter().enumerate() {
        for load in loads {
            integrand[j] += match load {
                DriftLoad::Bounded(a) => a.at(t).linf_norm().powi(2),
                DriftLoad::Smoothing(a, r) => {
                    if !(*r > 0.0 && *r < 1.0) {
                        return Err(Error::invalid(
                            "r",
                            format!("smoothing index must lie in (0,1), got {r}"),
                        ));
                    }
                    let x = xr_norm(&a.at(t), *r, 1e-9, 20_000)?.value;
                    x.powf(2.0 / (1.0 - r))
                }
            };
        }
    }
    let mut cumulative = vec![0.0; m];
    cumulative[0] = integrand[0] * path.times[0];
    for j in 1..m {
        cumulative[j] = cumulative[j - 1]
            + 0.5 * (integrand[j - 1] + integrand[j]) * (path.times[j] - path.times[j - 1]);
    }
    let mut constant: f64 = 0.0;
    let mut sup_budget: f64 = 0.0;
    let mut lhs = vec![0.0; m];
    for j in 0..m {
        sup_budget = sup_budget.max(path.energy[j] + 2.0 * path.dissipation[j]);
        lhs[j] = sup_budget;
        if cumulative[j] > 1e-300 && lhs[j] > e0 {
            constant = constant.max((lhs[j] / e0).ln() / cumulative[j]);
        }
    }
    let rows = (0..m)
        .map(|j| CheckRow {
            t: path.times[j],
            lhs: lhs[j],
            rhs: e0 * (constant * cumulative[j]).exp(),
        })
        .collect();
    Ok(EnergyReport { constant, initial_energy: e0, loads: cumulative, rows })
}
