use ndarray::{ArrayD, Dimension, IxDyn, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Scalar function on the torus held as spectral coefficients.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Grid,
    coeff: ArrayD<Complex64>,
}

impl ScalarField {
    pub fn zero(grid: &Grid) -> Self {
        ScalarField {
            grid: grid.clone(),
            coeff: ArrayD::zeros(IxDyn(grid.shape())),
        }
    }

    pub fn from_spectral(grid: &Grid, coeff: ArrayD<Complex64>) -> Self {
        assert_eq!(coeff.shape(), grid.shape(), "coefficient shape mismatch");
        ScalarField {
            grid: grid.clone(),
            coeff,
        }
    }

    pub fn from_physical(grid: &Grid, values: &ArrayD<Complex64>) -> Self {
        ScalarField {
            grid: grid.clone(),
            coeff: grid.to_spectral(values),
        }
    }

    /// Samples a real-valued function at the collocation points.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut phys = ArrayD::zeros(IxDyn(grid.shape()));
        for idx in ndarray::indices(grid.shape()) {
            let x = grid.point(idx.slice());
            phys[idx.slice()] = Complex64::new(f(&x), 0.0);
        }
        ScalarField::from_physical(grid, &phys)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeff(&self) -> &ArrayD<Complex64> {
        &self.coeff
    }

    pub fn to_physical(&self) -> ArrayD<Complex64> {
        self.grid.to_physical(&self.coeff)
    }

    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.coeff.iter().map(|z| z.norm_sqr()).sum();
        (self.grid.volume() * s).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.to_physical().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// N-component vector field on the torus in spectral representation.
///
/// The flags are promises checked by `verify_flags`; operators that guarantee
/// them (e.g. the Leray projection) set them on their output.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid,
    comps: Vec<ArrayD<Complex64>>,
    pub divergence_free: bool,
    pub mean_zero: bool,
}

impl Field {
    pub fn zero(grid: &Grid) -> Self {
        let comps = (0..grid.dim())
            .map(|_| ArrayD::zeros(IxDyn(grid.shape())))
            .collect();
        Field {
            grid: grid.clone(),
            comps,
            divergence_free: true,
            mean_zero: true,
        }
    }

    pub fn from_spectral(grid: &Grid, comps: Vec<ArrayD<Complex64>>) -> Self {
        assert_eq!(comps.len(), grid.dim(), "component count mismatch");
        for c in &comps {
            assert_eq!(c.shape(), grid.shape(), "coefficient shape mismatch");
        }
        Field {
            grid: grid.clone(),
            comps,
            divergence_free: false,
            mean_zero: false,
        }
    }

    /// Samples real-valued component functions at the collocation points.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut phys: Vec<ArrayD<Complex64>> = (0..grid.dim())
            .map(|_| ArrayD::zeros(IxDyn(grid.shape())))
            .collect();
        let probe = grid.point(&vec![0; grid.dim()]);
        assert_eq!(f(&probe).len(), grid.dim(), "component count mismatch");
        for idx in ndarray::indices(grid.shape()) {
            let x = grid.point(idx.slice());
            let vals = f(&x);
            for (c, v) in vals.iter().enumerate() {
                phys[c][idx.slice()] = Complex64::new(*v, 0.0);
            }
        }
        let comps = phys.iter().map(|p| grid.to_spectral(p)).collect();
        Field::from_spectral(grid, comps)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn comp(&self, i: usize) -> &ArrayD<Complex64> {
        &self.comps[i]
    }

    pub fn comps(&self) -> &[ArrayD<Complex64>] {
        &self.comps
    }

    pub fn comps_mut(&mut self) -> &mut [ArrayD<Complex64>] {
        &mut self.comps
    }

    pub fn to_physical(&self) -> Vec<ArrayD<Complex64>> {
        self.comps.iter().map(|c| self.grid.to_physical(c)).collect()
    }

    pub fn with_flags(mut self, divergence_free: bool, mean_zero: bool) -> Self {
        self.divergence_free = divergence_free;
        self.mean_zero = mean_zero;
        self
    }

    /// L2 norm over the torus via Parseval.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self
            .comps
            .iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum();
        (self.grid.volume() * s).sqrt()
    }

    /// Sup norm of the pointwise Euclidean magnitude on the collocation grid.
    pub fn linf_norm(&self) -> f64 {
        let phys = self.to_physical();
        let mut best = 0.0f64;
        for i in 0..phys[0].len() {
            let mut s = 0.0;
            for p in &phys {
                s += p.as_slice().unwrap()[i].norm_sqr();
            }
            best = best.max(s);
        }
        best.sqrt()
    }

    /// Lp norm of the pointwise Euclidean magnitude; `p = f64::INFINITY` gives the sup norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.linf_norm();
        }
        let phys = self.to_physical();
        let cell = self.grid.volume() / self.grid.n_points() as f64;
        let mut acc = 0.0;
        for i in 0..phys[0].len() {
            let mut s = 0.0;
            for c in &phys {
                s += c.as_slice().unwrap()[i].norm_sqr();
            }
            acc += s.sqrt().powf(p);
        }
        (cell * acc).powf(1.0 / p)
    }

    /// Discrete L2 inner product.
    pub fn inner(&self, other: &Field) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let mut s = 0.0;
        for (a, b) in self.comps.iter().zip(&other.comps) {
            s += a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x * y.conj()).re)
                .sum::<f64>();
        }
        self.grid.volume() * s
    }

    /// Euclidean norm of the raw coefficient vector (no volume factor).
    pub fn coeff_l2(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// max_k |k . u(k)| / ||u|| over modes, the divergence-free defect.
    pub fn divergence_defect(&self) -> f64 {
        let denom = self.coeff_l2();
        if denom == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        let grid = &self.grid;
        let shape = grid.shape().to_vec();
        let mut idx = vec![0usize; shape.len()];
        loop {
            let mut dot = Complex64::default();
            for a in 0..grid.dim() {
                dot += Complex64::new(grid.kappa(a)[idx.as_slice()], 0.0) * self.comps[a][idx.as_slice()];
            }
            worst = worst.max(dot.norm());
            if !advance(&mut idx, &shape) {
                break;
            }
        }
        worst / denom
    }

    /// Max conjugate-symmetry defect |u(-k) - conj(u(k))| over non-Nyquist modes,
    /// relative to the coefficient norm.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let denom = self.coeff_l2();
        if denom == 0.0 {
            return 0.0;
        }
        let grid = &self.grid;
        let m = grid.modes_per_axis() as i64;
        let shape = grid.shape().to_vec();
        let mut worst = 0.0f64;
        let mut idx = vec![0usize; shape.len()];
        loop {
            let k = grid.kvec(&idx);
            if k.iter().all(|&ka| ka.abs() < m / 2) {
                let neg: Vec<i64> = k.iter().map(|&ka| -ka).collect();
                let nidx = grid.index_of(&neg).expect("negation stays on lattice");
                for c in &self.comps {
                    let defect = (c[nidx.as_slice()] - c[idx.as_slice()].conj()).norm();
                    worst = worst.max(defect);
                }
            }
            if !advance(&mut idx, &shape) {
                break;
            }
        }
        worst / denom
    }

    /// Zero-frequency (mean) coefficient magnitude across components.
    pub fn mean_magnitude(&self) -> f64 {
        let zero = vec![0usize; self.grid.dim()];
        self.comps
            .iter()
            .map(|c| c[zero.as_slice()].norm())
            .fold(0.0, f64::max)
    }

    /// Checks that any set flags actually hold.
    pub fn verify_flags(&self, tol: f64) -> Result<()> {
        if self.divergence_free {
            let d = self.divergence_defect();
            if d > tol {
                return Err(Error::invalid(
                    "divergence_free",
                    format!("flag set but defect is {d:.3e}"),
                ));
            }
        }
        if self.mean_zero && self.mean_magnitude() > 0.0 {
            return Err(Error::invalid("mean_zero", "flag set but mean is nonzero"));
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Field {
        let comps = self
            .comps
            .iter()
            .map(|c| c.mapv(|z| z * alpha))
            .collect();
        Field {
            grid: self.grid.clone(),
            comps,
            divergence_free: self.divergence_free,
            mean_zero: self.mean_zero,
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| {
                let mut out = a.clone();
                Zip::from(&mut out).and(b).for_each(|x, &y| *x += y);
                out
            })
            .collect();
        Field {
            grid: self.grid.clone(),
            comps,
            divergence_free: self.divergence_free && other.divergence_free,
            mean_zero: self.mean_zero && other.mean_zero,
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.add(&other.scale(-1.0))
    }

    /// Applies a real per-mode multiplier to every component.
    pub fn apply_symbol(&self, symbol: impl Fn(f64) -> f64 + Sync) -> Field {
        let comps = self
            .comps
            .iter()
            .map(|c| {
                let mut out = c.clone();
                Zip::from(&mut out)
                    .and(self.grid.ksq())
                    .for_each(|z, &k2| *z *= symbol(k2));
                out
            })
            .collect();
        Field {
            grid: self.grid.clone(),
            comps,
            divergence_free: self.divergence_free,
            mean_zero: self.mean_zero,
        }
    }
}

/// N x N tensor field in spectral representation; component (a, b) holds the
/// entry in row a, column b.
#[derive(Clone, Debug)]
pub struct TensorField {
    grid: Grid,
    comps: Vec<ArrayD<Complex64>>,
}

impl TensorField {
    pub fn zero(grid: &Grid) -> Self {
        let n = grid.dim() * grid.dim();
        TensorField {
            grid: grid.clone(),
            comps: (0..n).map(|_| ArrayD::zeros(IxDyn(grid.shape()))).collect(),
        }
    }

    pub fn from_spectral(grid: &Grid, comps: Vec<ArrayD<Complex64>>) -> Self {
        assert_eq!(comps.len(), grid.dim() * grid.dim());
        TensorField {
            grid: grid.clone(),
            comps,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn comp(&self, a: usize, b: usize) -> &ArrayD<Complex64> {
        &self.comps[a * self.grid.dim() + b]
    }

    pub fn comp_mut(&mut self, a: usize, b: usize) -> &mut ArrayD<Complex64> {
        let d = self.grid.dim();
        &mut self.comps[a * d + b]
    }

    pub fn comps(&self) -> &[ArrayD<Complex64>] {
        &self.comps
    }

    /// Sup norm of the pointwise Frobenius magnitude.
    pub fn linf_norm(&self) -> f64 {
        let phys: Vec<ArrayD<Complex64>> =
            self.comps.iter().map(|c| self.grid.to_physical(c)).collect();
        let mut best = 0.0f64;
        for i in 0..phys[0].len() {
            let mut s = 0.0;
            for p in &phys {
                s += p.as_slice().unwrap()[i].norm_sqr();
            }
            best = best.max(s);
        }
        best.sqrt()
    }

    pub fn scale(&self, alpha: f64) -> TensorField {
        TensorField {
            grid: self.grid.clone(),
            comps: self.comps.iter().map(|c| c.mapv(|z| z * alpha)).collect(),
        }
    }
}

/// Odometer-style advance over a multi-index; returns false after the last index.
pub(crate) fn advance(idx: &mut [usize], shape: &[usize]) -> bool {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < shape[a] {
            return true;
        }
        idx[a] = 0;
    }
    false
}
