use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;

/// Built-in analytic initial-data families. All members are divergence-free and
/// mean-zero by construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum FamilyRecipe {
    /// Counter-rotating cell pattern with wavenumbers (m, n) on the first two
    /// axes. In 2-D every single (m, n) member has an eigenfunction stream
    /// function, hence is a steady Euler flow whose projected self-advection
    /// vanishes; superpositions of members with different m^2 + n^2 are
    /// nonlinearly active.
    TaylorGreen { m: i64, n: i64, amplitude: f64 },
    /// Superposition of the (1,1) and (2,1) cell patterns. Unlike any single
    /// cell pattern, the cross term of its self-advection survives the Leray
    /// projection, which makes it the standard nonlinearly active probe.
    TwoCellMix { amplitude: f64 },
    /// Single real cosine mode polarized orthogonally to its wavevector.
    RotatedMode { k: Vec<i64>, amplitude: f64 },
    /// Random solenoidal field with spectral support in kmin <= |k| <= kmax,
    /// scaled to the requested sup norm; bit-exact reproducible from the seed.
    RandomBand {
        kmin: f64,
        kmax: f64,
        amplitude: f64,
        seed: u64,
    },
    /// Low + mid + high frequency composite used by the splitting pipeline.
    ThreeBand {
        low_amplitude: f64,
        mid_amplitude: f64,
        high_amplitude: f64,
    },
}

impl FamilyRecipe {
    pub fn build(&self, grid: &Grid) -> Result<Field> {
        match self {
            FamilyRecipe::TaylorGreen { m, n, amplitude } => {
                taylor_green(grid, *m, *n, *amplitude)
            }
            FamilyRecipe::TwoCellMix { amplitude } => two_cell_mix(grid, *amplitude),
            FamilyRecipe::RotatedMode { k, amplitude } => rotated_mode(grid, k, *amplitude),
            FamilyRecipe::RandomBand {
                kmin,
                kmax,
                amplitude,
                seed,
            } => random_band(grid, *kmin, *kmax, *amplitude, *seed),
            FamilyRecipe::ThreeBand {
                low_amplitude,
                mid_amplitude,
                high_amplitude,
            } => three_band(grid, *low_amplitude, *mid_amplitude, *high_amplitude),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilyRecipe::TaylorGreen { .. } => "taylor_green",
            FamilyRecipe::TwoCellMix { .. } => "two_cell_mix",
            FamilyRecipe::RotatedMode { .. } => "rotated_mode",
            FamilyRecipe::RandomBand { .. } => "random_band",
            FamilyRecipe::ThreeBand { .. } => "three_band",
        }
    }
}

/// One-line schema descriptions for the catalogue listing.
pub fn catalogue() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "taylor_green",
            "{m: int >= 1, n: int >= 1, amplitude: float} counter-rotating cells; every single member is nonlinearly silent in 2-D",
        ),
        (
            "two_cell_mix",
            "{amplitude: float} (1,1) + (2,1) cell superposition, nonlinearly active",
        ),
        (
            "rotated_mode",
            "{k: [int; N], amplitude: float} single solenoidal cosine mode",
        ),
        (
            "random_band",
            "{kmin: float, kmax: float, amplitude: float, seed: u64} random solenoidal band-limited field",
        ),
        (
            "three_band",
            "{low_amplitude, mid_amplitude, high_amplitude: float} low/mid/high frequency composite",
        ),
    ]
}

fn set_conjugate_pair(comps: &mut [ArrayD<Complex64>], grid: &Grid, k: &[i64], values: &[Complex64]) {
    let idx = grid.index_of(k).expect("wavevector on lattice");
    let neg: Vec<i64> = k.iter().map(|&a| -a).collect();
    let nidx = grid.index_of(&neg).expect("negated wavevector on lattice");
    for (c, v) in comps.iter_mut().zip(values) {
        c[idx.as_slice()] += v;
        c[nidx.as_slice()] += v.conj();
    }
}

fn check_wavevector(grid: &Grid, k: &[i64]) -> Result<()> {
    if k.len() != grid.dim() {
        return Err(Error::invalid(
            "k",
            format!("expected {} components, got {}", grid.dim(), k.len()),
        ));
    }
    if k.iter().all(|&a| a == 0) {
        return Err(Error::invalid("k", "wavevector must be nonzero"));
    }
    let half = (grid.modes_per_axis() / 2) as i64;
    if k.iter().any(|&a| a.abs() >= half) {
        return Err(Error::invalid(
            "k",
            format!("|k_a| must stay below the Nyquist row {half}"),
        ));
    }
    Ok(())
}

/// Deterministic unit polarization vector orthogonal to k: the rotation of the
/// unit wavevector in 2-D, a cross-product construction in 3-D.
pub fn polarization(k: &[f64], which: usize) -> Vec<f64> {
    let norm = k.iter().map(|a| a * a).sum::<f64>().sqrt();
    if k.len() == 2 {
        return vec![-k[1] / norm, k[0] / norm];
    }
    let pick = if k[0].abs() <= k[1].abs() && k[0].abs() <= k[2].abs() {
        [1.0, 0.0, 0.0]
    } else if k[1].abs() <= k[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let cross = |a: &[f64], b: &[f64]| {
        vec![
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let e1 = cross(k, &pick);
    let n1 = e1.iter().map(|a| a * a).sum::<f64>().sqrt();
    let e1: Vec<f64> = e1.iter().map(|a| a / n1).collect();
    if which == 0 {
        e1
    } else {
        let e2 = cross(k, &e1);
        let n2 = e2.iter().map(|a| a * a).sum::<f64>().sqrt();
        e2.iter().map(|a| a / n2).collect()
    }
}

/// Counter-rotating cell flow with wavenumbers (m, n) on the first two axes.
/// In 3-D the pattern is modulated by cos(x_3) in the third direction.
pub fn taylor_green(grid: &Grid, m: i64, n: i64, amplitude: f64) -> Result<Field> {
    if m < 1 || n < 1 {
        return Err(Error::invalid("m/n", "wavenumbers must be >= 1"));
    }
    let half = (grid.modes_per_axis() / 2) as i64;
    if m >= half || n >= half {
        return Err(Error::invalid("m/n", "wavenumbers must stay below Nyquist"));
    }
    let (mf, nf) = (m as f64, n as f64);
    let l = grid.period();
    let field = if grid.dim() == 2 {
        Field::from_fn(grid, |x| {
            vec![
                amplitude * nf * (mf * x[0] / l).sin() * (nf * x[1] / l).cos(),
                -amplitude * mf * (mf * x[0] / l).cos() * (nf * x[1] / l).sin(),
            ]
        })
    } else {
        Field::from_fn(grid, |x| {
            vec![
                amplitude * nf * (mf * x[0] / l).sin() * (nf * x[1] / l).cos() * (x[2] / l).cos(),
                -amplitude * mf * (mf * x[0] / l).cos() * (nf * x[1] / l).sin() * (x[2] / l).cos(),
                0.0,
            ]
        })
    };
    Ok(field.with_flags(true, true))
}

/// Equal-amplitude superposition of the (1,1) and (2,1) cell patterns. The
/// two stream functions belong to different Laplacian eigenvalues, so the
/// cross term of the self-advection survives the Leray projection.
pub fn two_cell_mix(grid: &Grid, amplitude: f64) -> Result<Field> {
    let a = taylor_green(grid, 1, 1, amplitude)?;
    let b = taylor_green(grid, 2, 1, amplitude)?;
    Ok(a.add(&b))
}

/// Single solenoidal cosine mode u(x) = amplitude * e * cos(k.x / L) with e
/// the canonical polarization orthogonal to k.
pub fn rotated_mode(grid: &Grid, k: &[i64], amplitude: f64) -> Result<Field> {
    check_wavevector(grid, k)?;
    let kf: Vec<f64> = k.iter().map(|&a| a as f64).collect();
    let e = polarization(&kf, 0);
    let mut comps: Vec<ArrayD<Complex64>> = (0..grid.dim())
        .map(|_| ArrayD::zeros(IxDyn(grid.shape())))
        .collect();
    // cos(k.x/L) has coefficient 1/2 at +-k.
    let values: Vec<Complex64> = e
        .iter()
        .map(|&ea| Complex64::new(0.5 * amplitude * ea, 0.0))
        .collect();
    set_conjugate_pair(&mut comps, grid, k, &values);
    Ok(Field::from_spectral(grid, comps).with_flags(true, true))
}

/// Enumerates half-lattice representatives (first nonzero component positive)
/// sorted by |k|^2 then lexicographically.
pub fn half_lattice_reps(grid: &Grid, kmin: f64, kmax: f64) -> Vec<Vec<i64>> {
    let kd = grid.kmax_dealias();
    let dim = grid.dim();
    let mut reps = Vec::new();
    let mut k = vec![-kd; dim];
    'outer: loop {
        let norm2: i64 = k.iter().map(|a| a * a).sum();
        let norm = (norm2 as f64).sqrt();
        let leading = k.iter().find(|&&a| a != 0);
        if let Some(&lead) = leading {
            if lead > 0 && norm >= kmin - 1e-12 && norm <= kmax + 1e-12 {
                reps.push(k.clone());
            }
        }
        for a in (0..dim).rev() {
            k[a] += 1;
            if k[a] <= kd {
                continue 'outer;
            }
            k[a] = -kd;
        }
        break;
    }
    reps.sort_by(|a, b| {
        let na: i64 = a.iter().map(|x| x * x).sum();
        let nb: i64 = b.iter().map(|x| x * x).sum();
        na.cmp(&nb).then_with(|| a.cmp(b))
    });
    reps
}

/// Random solenoidal band-limited field, reproducible bit-exact from the seed.
pub fn random_band(grid: &Grid, kmin: f64, kmax: f64, amplitude: f64, seed: u64) -> Result<Field> {
    if !(kmin >= 0.0 && kmax >= kmin) {
        return Err(Error::invalid("kmin/kmax", "need 0 <= kmin <= kmax"));
    }
    let reps = half_lattice_reps(grid, kmin.max(1e-9), kmax);
    if reps.is_empty() {
        return Err(Error::invalid(
            "kmin/kmax",
            "band contains no dealiased lattice modes",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comps: Vec<ArrayD<Complex64>> = (0..grid.dim())
        .map(|_| ArrayD::zeros(IxDyn(grid.shape())))
        .collect();
    let n_pol = if grid.dim() == 2 { 1 } else { 2 };
    for k in &reps {
        let kf: Vec<f64> = k.iter().map(|&a| a as f64).collect();
        for pol in 0..n_pol {
            let e = polarization(&kf, pol);
            let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let values: Vec<Complex64> = e.iter().map(|&ea| c * ea).collect();
            set_conjugate_pair(&mut comps, grid, k, &values);
        }
    }
    let field = Field::from_spectral(grid, comps).with_flags(true, true);
    let sup = field.linf_norm();
    if sup == 0.0 {
        return Ok(field);
    }
    Ok(field.scale(amplitude / sup))
}

/// Three-band composite: a low-frequency cell flow, one mid-band mode and one
/// high-band mode near the dealiasing cutoff.
pub fn three_band(
    grid: &Grid,
    low_amplitude: f64,
    mid_amplitude: f64,
    high_amplitude: f64,
) -> Result<Field> {
    let (mid, high): (Vec<i64>, Vec<i64>) = if grid.dim() == 2 {
        (vec![3, 2], vec![8, 5])
    } else {
        (vec![2, 1, 1], vec![4, 3, 1])
    };
    let kd = grid.kmax_dealias();
    if high.iter().any(|&a| a > kd) {
        return Err(Error::invalid(
            "modes_per_axis",
            format!("grid too coarse for the high band (needs kmax_dealias >= {high:?})"),
        ));
    }
    let low = taylor_green(grid, 1, 1, low_amplitude)?;
    let midf = rotated_mode(grid, &mid, mid_amplitude)?;
    let highf = rotated_mode(grid, &high, high_amplitude)?;
    Ok(low.add(&midf).add(&highf))
}
