use ndarray::{ArrayD, IxDyn, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{advance, Field, ScalarField, TensorField};

/// Applies the heat semigroup: multiplies every coefficient by exp(-|k|^2 t).
pub fn heat_semigroup(f: &Field, t: f64) -> Result<Field> {
    if !(t >= 0.0) {
        return Err(Error::invalid("t", format!("must be >= 0, got {t}")));
    }
    Ok(f.apply_symbol(|k2| (-k2 * t).exp()))
}

/// Scalar-field version of the heat semigroup.
pub fn heat_semigroup_scalar(f: &ScalarField, t: f64) -> Result<ScalarField> {
    if !(t >= 0.0) {
        return Err(Error::invalid("t", format!("must be >= 0, got {t}")));
    }
    let grid = f.grid().clone();
    let mut coeff = f.coeff().clone();
    Zip::from(&mut coeff)
        .and(grid.ksq())
        .for_each(|z, &k2| *z *= (-k2 * t).exp());
    Ok(ScalarField::from_spectral(&grid, coeff))
}

/// Orthogonal projection onto divergence-free fields: at each mode
/// u(k) -> u(k) - k (k.u(k)) / |k|^2, with the mean annihilated.
pub fn leray_project(f: &Field) -> Field {
    let grid = f.grid().clone();
    let dim = grid.dim();
    let mut out: Vec<ArrayD<Complex64>> = f.comps().to_vec();
    let shape = grid.shape().to_vec();
    let mut idx = vec![0usize; dim];
    loop {
        let k2 = grid.ksq()[idx.as_slice()];
        if k2 == 0.0 {
            for c in out.iter_mut() {
                c[idx.as_slice()] = Complex64::default();
            }
        } else {
            let mut dot = Complex64::default();
            for a in 0..dim {
                dot += Complex64::new(grid.kappa(a)[idx.as_slice()], 0.0)
                    * f.comp(a)[idx.as_slice()];
            }
            let scale = dot / k2;
            for (a, c) in out.iter_mut().enumerate() {
                c[idx.as_slice()] -= Complex64::new(grid.kappa(a)[idx.as_slice()], 0.0) * scale;
            }
        }
        if !advance(&mut idx, &shape) {
            break;
        }
    }
    Field::from_spectral(&grid, out).with_flags(true, true)
}

/// Spectral divergence: i k . u(k).
pub fn divergence(f: &Field) -> ScalarField {
    let grid = f.grid().clone();
    let mut coeff: ArrayD<Complex64> = ArrayD::zeros(IxDyn(grid.shape()));
    for a in 0..grid.dim() {
        Zip::from(&mut coeff)
            .and(f.comp(a))
            .and(grid.kappa(a))
            .for_each(|d, &u, &ka| *d += Complex64::new(0.0, ka) * u);
    }
    ScalarField::from_spectral(&grid, coeff)
}

/// Spectral gradient of a scalar field: component a is i k_a s(k).
pub fn gradient(s: &ScalarField) -> Field {
    let grid = s.grid().clone();
    let comps = (0..grid.dim())
        .map(|a| {
            let mut c = s.coeff().clone();
            Zip::from(&mut c)
                .and(grid.kappa(a))
                .for_each(|z, &ka| *z *= Complex64::new(0.0, ka));
            c
        })
        .collect();
    Field::from_spectral(&grid, comps)
}

/// Jacobian tensor of a vector field: entry (a, b) holds d_a u_b as i k_a u_b(k).
pub fn jacobian(f: &Field) -> TensorField {
    let grid = f.grid().clone();
    let dim = grid.dim();
    let mut comps = Vec::with_capacity(dim * dim);
    for a in 0..dim {
        for b in 0..dim {
            let mut c = f.comp(b).clone();
            Zip::from(&mut c)
                .and(grid.kappa(a))
                .for_each(|z, &ka| *z *= Complex64::new(0.0, ka));
            comps.push(c);
        }
    }
    TensorField::from_spectral(&grid, comps)
}

/// Pointwise tensor product u_a v_b (optionally symmetrized), dealiased by the
/// 2/3 rule and returned in spectral form.
pub fn tensor_product(u: &Field, v: &Field, symmetrize: bool) -> Result<TensorField> {
    if u.grid() != v.grid() {
        return Err(Error::GridMismatch(format!(
            "tensor_product: {:?} vs {:?}",
            u.grid(),
            v.grid()
        )));
    }
    let grid = u.grid().clone();
    let dim = grid.dim();
    let up = u.to_physical();
    let vp = v.to_physical();
    let mut comps = Vec::with_capacity(dim * dim);
    for a in 0..dim {
        for b in 0..dim {
            let mut prod = ArrayD::<Complex64>::zeros(IxDyn(grid.shape()));
            if symmetrize {
                Zip::from(&mut prod)
                    .and(&up[a])
                    .and(&vp[b])
                    .and(&vp[a])
                    .and(&up[b])
                    .for_each(|p, &ua, &vb, &va, &ub| *p = 0.5 * (ua * vb + va * ub));
            } else {
                Zip::from(&mut prod)
                    .and(&up[a])
                    .and(&vp[b])
                    .for_each(|p, &ua, &vb| *p = ua * vb);
            }
            let mut spec = grid.to_spectral(&prod);
            Zip::from(&mut spec).and(grid.dealias_mask()).for_each(|z, &keep| {
                if !keep {
                    *z = Complex64::default();
                }
            });
            comps.push(spec);
        }
    }
    Ok(TensorField::from_spectral(&grid, comps))
}

/// Tensor divergence without projection: component b is i sum_a k_a S_ab(k).
pub fn tensor_divergence(s: &TensorField) -> Field {
    let grid = s.grid().clone();
    let dim = grid.dim();
    let mut comps: Vec<ArrayD<Complex64>> =
        (0..dim).map(|_| ArrayD::zeros(IxDyn(grid.shape()))).collect();
    for b in 0..dim {
        for a in 0..dim {
            Zip::from(&mut comps[b])
                .and(s.comp(a, b))
                .and(grid.kappa(a))
                .for_each(|d, &sab, &ka| *d += Complex64::new(0.0, ka) * sab);
        }
    }
    Field::from_spectral(&grid, comps)
}

/// Leray projection of the tensor divergence: P (i k . S(k)), mean annihilated.
pub fn project_divergence(s: &TensorField) -> Field {
    let grid = s.grid().clone();
    let dim = grid.dim();
    let shape = grid.shape().to_vec();
    let mut out: Vec<ArrayD<Complex64>> =
        (0..dim).map(|_| ArrayD::zeros(IxDyn(grid.shape()))).collect();
    let mut idx = vec![0usize; dim];
    loop {
        let k2 = grid.ksq()[idx.as_slice()];
        if k2 > 0.0 {
            // w_b = i sum_a k_a S_ab
            let mut w = [Complex64::default(); 3];
            for b in 0..dim {
                let mut acc = Complex64::default();
                for a in 0..dim {
                    acc += Complex64::new(0.0, grid.kappa(a)[idx.as_slice()])
                        * s.comp(a, b)[idx.as_slice()];
                }
                w[b] = acc;
            }
            let mut dot = Complex64::default();
            for (b, wb) in w.iter().enumerate().take(dim) {
                dot += Complex64::new(grid.kappa(b)[idx.as_slice()], 0.0) * wb;
            }
            let scale = dot / k2;
            for (b, c) in out.iter_mut().enumerate() {
                c[idx.as_slice()] =
                    w[b] - Complex64::new(grid.kappa(b)[idx.as_slice()], 0.0) * scale;
            }
        }
        if !advance(&mut idx, &shape) {
            break;
        }
    }
    Field::from_spectral(&grid, out).with_flags(true, true)
}

/// One-pass application of e^{t Delta} P (div S): per-mode exact symbol.
pub fn pdiv_semigroup(s: &TensorField, t: f64) -> Result<Field> {
    if !(t > 0.0) {
        return Err(Error::invalid("t", format!("must be > 0, got {t}")));
    }
    let projected = project_divergence(s);
    Ok(projected.apply_symbol(|k2| (-k2 * t).exp()))
}

/// The projected advection term P div (u x u), the nonlinearity of the
/// integral equation.
pub fn advection_term(u: &Field, v: &Field) -> Result<Field> {
    let s = tensor_product(u, v, false)?;
    Ok(project_divergence(&s))
}
