use std::sync::Arc;

use ndarray::{ArrayD, Axis, Dimension, IxDyn};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Periodic torus discretization of [0, 2*pi*L)^N with M collocation points per
/// axis and the signed frequency lattice k in {-M/2+1, ..., M/2}^N scaled by 1/L.
///
/// Cheap to clone; transform plans and precomputed symbol arrays are shared.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

struct GridInner {
    dim: usize,
    m: usize,
    period: f64,
    shape: Vec<usize>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Signed integer wavenumber for each index along one axis.
    kline: Vec<i64>,
    /// |k/L|^2 per mode.
    ksq: ArrayD<f64>,
    /// Scaled wavenumber k_a/L per mode, one array per axis.
    kappa: Vec<ArrayD<f64>>,
    /// 2/3-rule keep mask: true where every |k_a| <= kmax_dealias.
    dealias: ArrayD<bool>,
    kmax_dealias: i64,
}

/// Validates parameters and prepares transform plans and per-mode symbol arrays.
pub fn make_grid(dim: usize, modes_per_axis: usize, period: f64) -> Result<Grid> {
    if !(dim == 2 || dim == 3) {
        return Err(Error::invalid("dim", format!("must be 2 or 3, got {dim}")));
    }
    if modes_per_axis < 8 || modes_per_axis % 2 != 0 {
        return Err(Error::invalid(
            "modes_per_axis",
            format!("must be even and >= 8, got {modes_per_axis}"),
        ));
    }
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::invalid(
            "period",
            format!("must be positive and finite, got {period}"),
        ));
    }

    let m = modes_per_axis;
    let shape = vec![m; dim];
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);

    let half = (m / 2) as i64;
    let kline: Vec<i64> = (0..m as i64).map(|j| if j <= half { j } else { j - m as i64 }).collect();
    let kmax_dealias = ((m as i64) - 1) / 3;

    let mut ksq = ArrayD::zeros(IxDyn(&shape));
    let mut kappa: Vec<ArrayD<f64>> = (0..dim).map(|_| ArrayD::zeros(IxDyn(&shape))).collect();
    let mut dealias = ArrayD::from_elem(IxDyn(&shape), true);
    for idx in ndarray::indices(&shape[..]) {
        let ix = idx.slice();
        let mut s = 0.0;
        let mut keep = true;
        for a in 0..dim {
            let k = kline[ix[a]];
            let ka = k as f64 / period;
            s += ka * ka;
            kappa[a][ix] = ka;
            keep &= k.abs() <= kmax_dealias;
        }
        ksq[ix] = s;
        dealias[ix] = keep;
    }

    Ok(Grid {
        inner: Arc::new(GridInner {
            dim,
            m,
            period,
            shape,
            fwd,
            inv,
            kline,
            ksq,
            kappa,
            dealias,
            kmax_dealias,
        }),
    })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn modes_per_axis(&self) -> usize {
        self.inner.m
    }

    pub fn period(&self) -> f64 {
        self.inner.period
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn n_points(&self) -> usize {
        self.inner.m.pow(self.inner.dim as u32)
    }

    /// Torus volume (2*pi*L)^N.
    pub fn volume(&self) -> f64 {
        (2.0 * std::f64::consts::PI * self.inner.period).powi(self.inner.dim as i32)
    }

    /// Signed wavenumber along one axis for a given array index.
    pub fn wavenumber(&self, index: usize) -> i64 {
        self.inner.kline[index]
    }

    /// Integer wavevector at a mode index.
    pub fn kvec(&self, idx: &[usize]) -> Vec<i64> {
        idx.iter().map(|&j| self.inner.kline[j]).collect()
    }

    /// |k/L|^2 per mode.
    pub fn ksq(&self) -> &ArrayD<f64> {
        &self.inner.ksq
    }

    /// Scaled wavenumber array k_a/L for an axis.
    pub fn kappa(&self, axis: usize) -> &ArrayD<f64> {
        &self.inner.kappa[axis]
    }

    /// 2/3-rule keep mask.
    pub fn dealias_mask(&self) -> &ArrayD<bool> {
        &self.inner.dealias
    }

    /// Largest per-axis |k| kept by the 2/3 rule. Chosen as floor((M-1)/3) so
    /// that alias images of kept-band products always land outside the kept band.
    pub fn kmax_dealias(&self) -> i64 {
        self.inner.kmax_dealias
    }

    /// Largest |k| representable on the lattice (corner mode).
    pub fn kmax_lattice(&self) -> f64 {
        let half = (self.inner.m / 2) as f64;
        half * (self.inner.dim as f64).sqrt()
    }

    /// Array index of a signed wavevector.
    pub fn index_of(&self, k: &[i64]) -> Option<Vec<usize>> {
        let m = self.inner.m as i64;
        let half = m / 2;
        let mut idx = Vec::with_capacity(self.inner.dim);
        for &ka in k {
            if ka > half || ka <= -half {
                return None;
            }
            idx.push(ka.rem_euclid(m) as usize);
        }
        Some(idx)
    }

    fn transform(&self, data: &mut ArrayD<Complex64>, forward: bool) {
        let plan = if forward { &self.inner.fwd } else { &self.inner.inv };
        let mut buf = vec![Complex64::default(); self.inner.m];
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        for axis in 0..self.inner.dim {
            for mut lane in data.lanes_mut(Axis(axis)) {
                for (b, v) in buf.iter_mut().zip(lane.iter()) {
                    *b = *v;
                }
                plan.process_with_scratch(&mut buf, &mut scratch);
                for (v, b) in lane.iter_mut().zip(buf.iter()) {
                    *v = *b;
                }
            }
        }
    }

    /// Spectral coefficients to collocation values (unnormalized synthesis).
    pub fn to_physical(&self, coeff: &ArrayD<Complex64>) -> ArrayD<Complex64> {
        let mut out = coeff.clone();
        self.transform(&mut out, false);
        out
    }

    /// Collocation values to spectral coefficients (analysis with 1/M^N).
    pub fn to_spectral(&self, phys: &ArrayD<Complex64>) -> ArrayD<Complex64> {
        let mut out = phys.clone();
        self.transform(&mut out, true);
        let scale = 1.0 / self.n_points() as f64;
        out.mapv_inplace(|z| z * scale);
        out
    }

    /// Collocation point coordinates for an array index.
    pub fn point(&self, idx: &[usize]) -> Vec<f64> {
        let h = 2.0 * std::f64::consts::PI * self.inner.period / self.inner.m as f64;
        idx.iter().map(|&j| j as f64 * h).collect()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.inner.dim == other.inner.dim
            && self.inner.m == other.inner.m
            && self.inner.period == other.inner.period
    }
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.inner.dim)
            .field("modes_per_axis", &self.inner.m)
            .field("period", &self.inner.period)
            .finish()
    }
}
