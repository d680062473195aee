use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use proptest::prelude::*;

use nslog_core::families::{random_band, taylor_green, two_cell_mix};
use nslog_core::field::{Field, ScalarField, TensorField};
use nslog_core::grid::make_grid;
use nslog_core::spectral::{
    advection_term, divergence, gradient, heat_semigroup, leray_project, pdiv_semigroup,
    project_divergence, tensor_divergence, tensor_product,
};

fn grid2() -> nslog_core::Grid {
    make_grid(2, 16, 1.0).unwrap()
}

fn single_mode(grid: &nslog_core::Grid, k: &[i64], comp: usize, amp: f64) -> Field {
    let mut comps: Vec<ArrayD<Complex64>> = (0..grid.dim())
        .map(|_| ArrayD::zeros(IxDyn(grid.shape())))
        .collect();
    let idx = grid.index_of(k).unwrap();
    let nidx = grid.index_of(&k.iter().map(|&a| -a).collect::<Vec<_>>()).unwrap();
    comps[comp][idx.as_slice()] = Complex64::new(0.5 * amp, 0.0);
    comps[comp][nidx.as_slice()] += Complex64::new(0.5 * amp, 0.0);
    Field::from_spectral(grid, comps)
}

#[test]
fn grid_constructor_echoes_lattice() {
    let g = make_grid(2, 16, 1.0).unwrap();
    assert_eq!(g.dim(), 2);
    assert_eq!(g.modes_per_axis(), 16);
    let ks: Vec<i64> = (0..16).map(|j| g.wavenumber(j)).collect();
    assert_eq!(ks.iter().min(), Some(&-7));
    assert_eq!(ks.iter().max(), Some(&8));

    let g3 = make_grid(3, 8, 1.0).unwrap();
    assert_eq!(g3.shape(), &[8, 8, 8]);
}

#[test]
fn grid_rejects_bad_parameters() {
    assert!(make_grid(2, 7, 1.0).is_err());
    assert!(make_grid(2, 6, 1.0).is_err());
    assert!(make_grid(4, 16, 1.0).is_err());
    assert!(make_grid(2, 16, 0.0).is_err());
}

#[test]
fn lattice_closed_under_negation_below_nyquist() {
    let g = grid2();
    for j in 0..16 {
        let k = g.wavenumber(j);
        if k.abs() < 8 {
            assert!(g.index_of(&[-k, 0]).is_some());
        }
    }
    // The Nyquist row +M/2 has no negative partner on the lattice.
    assert!(g.index_of(&[8, 0]).is_some());
    assert!(g.index_of(&[-8, 0]).is_none());
}

#[test]
fn round_trip_physical_spectral() {
    let g = grid2();
    let u = random_band(&g, 1.0, 5.0, 1.0, 17).unwrap();
    for c in u.comps() {
        let phys = g.to_physical(c);
        let back = g.to_spectral(&phys);
        let num: f64 = c
            .iter()
            .zip(back.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = c.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        assert!(num <= 1e-13 * den, "round trip defect {:.3e}", num / den);
    }
}

#[test]
fn heat_identity_at_zero_and_eigenmode_decay() {
    let g = grid2();
    let f = single_mode(&g, &[1, 0], 1, 1.0);
    let f0 = heat_semigroup(&f, 0.0).unwrap();
    for (a, b) in f.comps().iter().zip(f0.comps()) {
        assert_eq!(a, b);
    }
    let f1 = heat_semigroup(&f, 0.5).unwrap();
    let idx = g.index_of(&[1, 0]).unwrap();
    let got = f1.comp(1)[idx.as_slice()].re;
    let expected = 0.5 * (-0.5f64).exp();
    assert!((got - expected).abs() < 1e-15, "got {got}, expected {expected}");
    assert!(heat_semigroup(&f, -0.1).is_err());
}

#[test]
fn heat_semigroup_law_and_contraction() {
    let g = grid2();
    let u = random_band(&g, 1.0, 5.0, 1.0, 3).unwrap();
    let two_step = heat_semigroup(&heat_semigroup(&u, 0.1).unwrap(), 0.2).unwrap();
    let one_step = heat_semigroup(&u, 0.1 + 0.2).unwrap();
    let defect = two_step.sub(&one_step).coeff_l2() / u.coeff_l2();
    assert!(defect <= 1e-13, "semigroup law defect {defect:.3e}");
    for &t in &[0.0, 1e-4, 0.3, 2.0] {
        assert!(heat_semigroup(&u, t).unwrap().l2_norm() <= u.l2_norm() * (1.0 + 1e-14));
    }
}

#[test]
fn leray_annihilates_gradients() {
    let g = grid2();
    let phi = ScalarField::from_fn(&g, |x| x[0].sin());
    let gradf = gradient(&phi);
    let projected = leray_project(&gradf);
    assert!(projected.coeff_l2() <= 1e-13 * gradf.coeff_l2().max(1.0));
}

#[test]
fn leray_idempotent_self_adjoint_and_fixes_solenoidal_fields() {
    let g = grid2();
    let u = random_band(&g, 1.0, 5.0, 1.0, 11).unwrap();
    // Already divergence-free: projection acts as the identity.
    let pu = leray_project(&u);
    assert!(pu.sub(&u).coeff_l2() <= 1e-13 * u.coeff_l2());

    let chaos = {
        let a = random_band(&g, 1.0, 5.0, 1.0, 5).unwrap();
        let phi = ScalarField::from_fn(&g, |x| (x[0] + 2.0 * x[1]).cos());
        a.add(&gradient(&phi))
    };
    let p1 = leray_project(&chaos);
    let p2 = leray_project(&p1);
    assert!(p2.sub(&p1).coeff_l2() <= 1e-13 * p1.coeff_l2());

    // Self-adjointness in the discrete L2 inner product.
    let v = random_band(&g, 1.0, 6.0, 1.0, 23).unwrap();
    let w = {
        let phi = ScalarField::from_fn(&g, |x| (3.0 * x[1]).sin());
        v.add(&gradient(&phi))
    };
    let lhs = leray_project(&chaos).inner(&w);
    let rhs = chaos.inner(&leray_project(&w));
    let scale = chaos.l2_norm() * w.l2_norm();
    assert!((lhs - rhs).abs() <= 1e-13 * scale, "adjoint defect {:.3e}", (lhs - rhs).abs() / scale);

    // The classic swap field is already solenoidal.
    let swap = Field::from_fn(&g, |x| vec![x[1].sin(), x[0].sin()]);
    let pswap = leray_project(&swap);
    assert!(pswap.sub(&swap).coeff_l2() <= 1e-13 * swap.coeff_l2());
}

#[test]
fn leray_matches_dense_symbol_matrix_on_coarse_grid() {
    // Independent construction: assemble the 2x2 projection matrix at every
    // mode of an 8^2 grid and apply it densely.
    let g = make_grid(2, 8, 1.0).unwrap();
    let u = {
        let a = random_band(&g, 1.0, 2.0, 1.0, 7).unwrap();
        let phi = ScalarField::from_fn(&g, |x| (x[0] - x[1]).sin());
        a.add(&gradient(&phi))
    };
    let fast = leray_project(&u);

    let mut comps: Vec<ArrayD<Complex64>> = (0..2)
        .map(|_| ArrayD::zeros(IxDyn(g.shape())))
        .collect();
    for i in 0..8 {
        for j in 0..8 {
            let idx = [i, j];
            let k = [g.wavenumber(i) as f64, g.wavenumber(j) as f64];
            let k2 = k[0] * k[0] + k[1] * k[1];
            let uin = [u.comp(0)[idx.as_slice()], u.comp(1)[idx.as_slice()]];
            let mut out = [Complex64::default(); 2];
            if k2 > 0.0 {
                for a in 0..2 {
                    for b in 0..2 {
                        let p = (if a == b { 1.0 } else { 0.0 }) - k[a] * k[b] / k2;
                        out[a] += p * uin[b];
                    }
                }
            }
            comps[0][idx.as_slice()] = out[0];
            comps[1][idx.as_slice()] = out[1];
        }
    }
    let dense = Field::from_spectral(&g, comps);
    assert!(dense.sub(&fast).coeff_l2() <= 1e-13 * u.coeff_l2().max(1.0));
}

#[test]
fn divergence_of_constant_and_analytic_mode() {
    let g = grid2();
    let constant = Field::from_fn(&g, |_| vec![0.7, -0.3]);
    assert!(divergence(&constant).l2_norm() <= 1e-14);

    let f = Field::from_fn(&g, |x| vec![x[0].sin(), 0.0]);
    let d = divergence(&f);
    let expected = ScalarField::from_fn(&g, |x| x[0].cos());
    let defect: f64 = d
        .coeff()
        .iter()
        .zip(expected.coeff().iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    assert!(defect <= 1e-13);
}

#[test]
fn projection_output_is_divergence_free() {
    let g = grid2();
    let u = {
        let a = random_band(&g, 1.0, 5.0, 1.0, 31).unwrap();
        let phi = ScalarField::from_fn(&g, |x| (2.0 * x[0] + x[1]).sin());
        a.add(&gradient(&phi))
    };
    let p = leray_project(&u);
    assert!(p.divergence_defect() <= 1e-12);
    assert!(divergence(&p).linf_norm() <= 1e-12 * p.coeff_l2().max(1.0));
    assert!(p.divergence_free && p.mean_zero);
    p.verify_flags(1e-12).unwrap();
}

#[test]
fn tensor_product_constants_and_symmetry() {
    let g = grid2();
    let u = Field::from_fn(&g, |_| vec![1.0, 0.0]);
    let s = tensor_product(&u, &u, false).unwrap();
    let zero_idx = vec![0usize, 0usize];
    assert!((s.comp(0, 0)[zero_idx.as_slice()].re - 1.0).abs() <= 1e-14);
    for (a, b) in [(0, 1), (1, 0), (1, 1)] {
        assert!(s.comp(a, b).iter().map(|z| z.norm()).fold(0.0, f64::max) <= 1e-14);
    }

    let v = random_band(&g, 1.0, 4.0, 1.0, 2).unwrap();
    let w = random_band(&g, 1.0, 4.0, 1.0, 4).unwrap();
    let s1 = tensor_product(&v, &w, true).unwrap();
    let s2 = tensor_product(&w, &v, true).unwrap();
    for (a, b) in s1.comps().iter().zip(s2.comps()) {
        assert_eq!(a, b, "symmetrized product must be exactly symmetric");
    }
}

#[test]
fn tensor_product_matches_analytic_expansion() {
    let g = grid2();
    let u = Field::from_fn(&g, |x| vec![x[0].cos(), 0.0]);
    let s = tensor_product(&u, &u, false).unwrap();
    // cos^2 x = 1/2 + cos(2x)/2
    let expected = ScalarField::from_fn(&g, |x| 0.5 + 0.5 * (2.0 * x[0]).cos());
    let defect: f64 = s
        .comp(0, 0)
        .iter()
        .zip(expected.coeff().iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    assert!(defect <= 1e-14, "defect {defect:.3e}");
}

#[test]
fn tensor_product_rejects_grid_mismatch() {
    let g1 = grid2();
    let g2 = make_grid(2, 32, 1.0).unwrap();
    let u = taylor_green(&g1, 1, 1, 1.0).unwrap();
    let v = taylor_green(&g2, 1, 1, 1.0).unwrap();
    assert!(tensor_product(&u, &v, false).is_err());
}

#[test]
fn pdiv_semigroup_contract() {
    let g = grid2();
    let zero = nslog_core::TensorField::zero(&g);
    let out = pdiv_semigroup(&zero, 0.3).unwrap();
    assert_eq!(out.coeff_l2(), 0.0);

    let u = random_band(&g, 1.0, 4.0, 1.0, 5).unwrap();
    let v = random_band(&g, 1.0, 4.0, 1.0, 6).unwrap();
    let s = tensor_product(&u, &v, false).unwrap();
    let w = pdiv_semigroup(&s, 0.1).unwrap();
    assert!(w.divergence_defect() <= 1e-12);

    // Composition of the separately tested operators.
    let composed = heat_semigroup(&project_divergence(&s), 0.1).unwrap();
    assert!(w.sub(&composed).coeff_l2() <= 1e-13 * composed.coeff_l2().max(1.0));

    assert!(pdiv_semigroup(&s, 0.0).is_err());
    assert!(pdiv_semigroup(&s, -1.0).is_err());
}

#[test]
fn advection_skew_symmetry() {
    // Integral of (u . grad u) . u over the torus vanishes for solenoidal u in
    // the dealiased band; this is the mechanism behind the energy identity.
    let g = grid2();
    for seed in [1u64, 9, 42] {
        let u = random_band(&g, 1.0, g.kmax_dealias() as f64, 1.0, seed).unwrap();
        let s = tensor_product(&u, &u, false).unwrap();
        let pairing = tensor_divergence(&s).inner(&u);
        let scale = u.l2_norm().powi(2).max(1.0);
        assert!(
            pairing.abs() <= 1e-11 * scale,
            "seed {seed}: pairing {pairing:.3e} vs scale {scale:.3e}"
        );
    }
}

#[test]
fn advection_of_classic_cell_flow_vanishes() {
    // Every single (m, n) cell flow in 2-D has an eigenfunction stream
    // function, so its self-advection is a pure gradient and the projection
    // removes it entirely. Mixing two cells with different eigenvalues leaves
    // an active cross term.
    let g = grid2();
    for (m, n) in [(1, 1), (1, 2), (2, 3)] {
        let tg = taylor_green(&g, m, n, 1.0).unwrap();
        let silent = advection_term(&tg, &tg).unwrap();
        assert!(
            silent.coeff_l2() <= 1e-13,
            "({m},{n}) advection survived: {}",
            silent.coeff_l2()
        );
    }

    let mix = two_cell_mix(&g, 1.0).unwrap();
    let active = advection_term(&mix, &mix).unwrap();
    assert!(active.coeff_l2() > 1e-2, "mix too quiet: {}", active.coeff_l2());
}

fn white_tensor(grid: &nslog_core::Grid, seed: u64) -> TensorField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let comps: Vec<ArrayD<Complex64>> = (0..grid.dim() * grid.dim())
        .map(|_| {
            let mut phys = ArrayD::<Complex64>::zeros(IxDyn(grid.shape()));
            for z in phys.iter_mut() {
                *z = Complex64::new(rng.random_range(-1.0..1.0), 0.0);
            }
            grid.to_spectral(&phys)
        })
        .collect();
    let s = TensorField::from_spectral(grid, comps);
    let n = s.linf_norm();
    s.scale(1.0 / n)
}

#[test]
fn halfroot_scaling_band_of_projected_divergence_semigroup() {
    // sqrt(t) * ||e^{tD} P div S||_inf / ||S||_inf stays within a fixed factor-3
    // band over t in [1e-3, 1e-1] for random unit tensors. White-noise tensors
    // carry spectral weight all the way to Nyquist, so every t in the window
    // can realize its 1/sqrt(t) share.
    let g = grid2();
    let mut ratios = Vec::new();
    for i in 0..7 {
        let t = 1e-3 * (100.0f64).powf(i as f64 / 6.0);
        let mut sup: f64 = 0.0;
        for seed in 0..12u64 {
            let s = white_tensor(&g, 90 + seed);
            let w = pdiv_semigroup(&s, t).unwrap();
            sup = sup.max(t.sqrt() * w.linf_norm());
        }
        ratios.push(sup);
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
    assert!(
        hi / lo <= 3.0,
        "scaling band too wide: [{lo:.3}, {hi:.3}] ratio {:.2}",
        hi / lo
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn prop_heat_semigroup_law(seed in 0u64..256, t1 in 1e-4f64..0.5, t2 in 1e-4f64..0.5) {
        let g = grid2();
        let u = random_band(&g, 1.0, 5.0, 1.0, seed).unwrap();
        let a = heat_semigroup(&heat_semigroup(&u, t1).unwrap(), t2).unwrap();
        let b = heat_semigroup(&u, t1 + t2).unwrap();
        let defect = a.sub(&b).coeff_l2() / u.coeff_l2();
        prop_assert!(defect <= 1e-13, "defect {}", defect);
    }

    #[test]
    fn prop_leray_idempotent(seed in 0u64..256) {
        let g = grid2();
        let u = random_band(&g, 1.0, 5.0, 1.0, seed).unwrap();
        let phi = ScalarField::from_fn(&g, |x| (x[0] + x[1]).sin());
        let mixed = u.add(&gradient(&phi));
        let p1 = leray_project(&mixed);
        let p2 = leray_project(&p1);
        prop_assert!(p2.sub(&p1).coeff_l2() <= 1e-13 * p1.coeff_l2().max(1.0));
        prop_assert!(p1.divergence_defect() <= 1e-12);
    }

    #[test]
    fn prop_bilinearity_of_tensor_product(seed in 0u64..256, alpha in -3.0f64..3.0) {
        let g = grid2();
        let u = random_band(&g, 1.0, 4.0, 1.0, seed).unwrap();
        let v = random_band(&g, 1.0, 4.0, 1.0, seed + 1000).unwrap();
        let s1 = tensor_product(&u.scale(alpha), &v, false).unwrap();
        let s2 = tensor_product(&u, &v, false).unwrap().scale(alpha);
        let num: f64 = s1
            .comps()
            .iter()
            .zip(s2.comps())
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let den: f64 = s2
            .comps()
            .iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        prop_assert!(num <= 1e-12 * den.max(1e-12), "defect {}", num / den.max(1e-12));
    }
}
