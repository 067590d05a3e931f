use knfp::besov::DyadicPartition;
use knfp::grid::{read_snapshot, write_snapshot, Integrability, PhaseField, PhaseGrid};
use knfp::kernels::{convolve_drift, KernelSpec};
use knfp::semigroup::{isotropic_apply, kinetic_apply};
use proptest::prelude::*;

fn field(grid: &PhaseGrid, values: Vec<f64>) -> PhaseField {
    PhaseField::new(grid.clone(), values).unwrap()
}

fn kinetic_grid() -> impl Strategy<Value = PhaseGrid> {
    (prop::sample::select(vec![8usize, 16, 32]), prop::sample::select(vec![8usize, 16]), 1.0..10.0f64, 1.0..10.0f64)
        .prop_map(|(nx, nv, bx, bv)| PhaseGrid::kinetic(1, nx, bx, nv, bv).unwrap())
}

fn kinetic_field() -> impl Strategy<Value = PhaseField> {
    kinetic_grid().prop_flat_map(|g| {
        let n = g.len();
        prop::collection::vec(-1.0..1.0f64, n).prop_map(move |v| field(&g, v))
    })
}

fn band_limited(f: &PhaseField) -> PhaseField {
    // keep the lower half of the spectrum on every axis
    let g = f.grid().clone();
    let mut half = vec![0.0; g.len()];
    g.for_each_frequency(|i, xi| {
        let inside = (0..g.ndim()).all(|a| xi[a].abs() <= 0.25 * std::f64::consts::PI * g.n(a) as f64 / g.box_len(a));
        half[i] = if inside { 1.0 } else { 0.0 };
    });
    f.apply_real_table(&half)
}

fn rel(a: &PhaseField, b: &PhaseField) -> f64 {
    a.sub(b).unwrap().l2_norm() / b.l2_norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spectral_round_trip(f in kinetic_field()) {
        let back = PhaseField::from_spectrum(f.grid(), f.spectrum().to_vec());
        prop_assert!(rel(&back, &f) <= 1e-12);
    }

    #[test]
    fn real_fields_have_conjugate_symmetric_spectra(f in kinetic_field()) {
        let g = f.grid();
        let (nx, nv) = (g.n_x, g.n_v);
        let s = f.spectrum();
        let scale = s.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for ix in 0..nx {
            for iv in 0..nv {
                let mirror = ((nx - ix) % nx) * nv + (nv - iv) % nv;
                prop_assert!((s[ix * nv + iv] - s[mirror].conj()).norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn shear_group_law_and_isometry(f in kinetic_field(), s in -2.0..2.0f64, t in -2.0..2.0f64) {
        let f = band_limited(&f);
        let two = f.shear(s).unwrap().shear(t).unwrap();
        let one = f.shear(s + t).unwrap();
        prop_assert!(rel(&two, &one) <= 1e-12);
        let n = f.mixed_lp_norm(Integrability::TWO);
        prop_assert!((one.mixed_lp_norm(Integrability::TWO) - n).abs() <= 1e-12 * n);
    }

    #[test]
    fn equal_exponents_give_the_plain_norm(f in kinetic_field(), p in 1.0..6.0f64) {
        let mixed = f.mixed_lp_norm(Integrability::uniform(p));
        let plain = f.lp_norm(p);
        prop_assert!((mixed - plain).abs() <= 1e-12 * plain);
        prop_assert!((f.mixed_lp_norm(Integrability::INF) - f.max_abs()).abs() == 0.0);
    }

    #[test]
    fn blocks_reconstruct_the_field(f in kinetic_field(), alpha in 1.05..2.0f64) {
        let part = DyadicPartition::new(f.grid(), alpha).unwrap();
        let mut acc = PhaseField::zeros(f.grid());
        for b in part.blocks(&f).unwrap() {
            acc = acc.add(&b).unwrap();
        }
        prop_assert!(acc.sub(&f).unwrap().max_abs() <= 1e-10 * f.max_abs().max(1e-300));
    }

    #[test]
    fn semigroup_conserves_mass_and_contracts(f in kinetic_field(), t in 0.0..3.0f64, alpha in 1.05..2.0f64) {
        let out = kinetic_apply(&f, t, alpha).unwrap();
        let scale = f.lp_norm(1.0);
        prop_assert!((out.total_mass() - f.total_mass()).abs() <= 1e-12 * scale);
        prop_assert!(out.l2_norm() <= f.l2_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn drift_is_linear(a in -3.0..3.0f64, seed_values in prop::collection::vec(-1.0..1.0f64, 2 * 16 * 16)) {
        let g = PhaseGrid::position(2, 16, 6.0).unwrap();
        let (u, w) = seed_values.split_at(g.len());
        let (u, w) = (field(&g, u.to_vec()), field(&g, w.to_vec()));
        for spec in [KernelSpec::biot_savart_2d(), KernelSpec::sqg_riesz_2d(), KernelSpec::riesz_grad(1.5)] {
            let lhs = convolve_drift(&spec, &u.axpy(a, &w).unwrap()).unwrap();
            let du = convolve_drift(&spec, &u).unwrap();
            let dw = convolve_drift(&spec, &w).unwrap();
            for c in 0..2 {
                let rhs = du[c].axpy(a, &dw[c]).unwrap();
                prop_assert!(lhs[c].sub(&rhs).unwrap().max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));
            }
        }
    }

    #[test]
    fn isotropic_heat_flow_is_positive_on_resolved_data(width in 0.3..1.0f64, t in 0.0..1.0f64) {
        let g = PhaseGrid::position(1, 128, 16.0).unwrap();
        let f = PhaseField::from_fn(&g, |z| (-0.5 * (z[0] / width).powi(2)).exp());
        let out = isotropic_apply(&f, t, 2.0).unwrap();
        prop_assert!(out.min() >= -1e-6 * out.max());
    }

    #[test]
    fn snapshots_round_trip(f in kinetic_field()) {
        let mut bytes = Vec::new();
        write_snapshot(&f, &mut bytes).unwrap();
        let back = read_snapshot(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.grid(), f.grid());
        prop_assert_eq!(back.values(), f.values());
    }
}
