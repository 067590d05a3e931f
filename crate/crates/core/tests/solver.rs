use knfp::fpe::*;
use knfp::grid::{random_band_limited, Integrability, PhaseField, PhaseGrid};
use knfp::kernels::{Cutoff, KernelSpec};

fn kernel() -> KernelSpec {
    KernelSpec::riesz_grad(2.0).with_cutoff(Cutoff::Gaussian { eps: 0.5 }).with_sign(-1.0)
}

fn config(scheme: Scheme, steps: usize) -> SolverConfig {
    SolverConfig {
        mode: Mode::Kinetic,
        alpha: 1.5,
        kernel: kernel(),
        grid: PhaseGrid::kinetic(1, 32, 8.0, 64, 24.0).unwrap(),
        horizon: 0.5,
        steps,
        scheme,
        picard_max_iters: 40,
        picard_tol: 1e-11,
        dealias: Dealias::TwoThirds,
        monitors: vec![],
        snapshot_every: 1,
        memory_budget: 1 << 28,
        smallness: None,
    }
}

// Lattice powers of P_h only compose to P_{mh} when the velocity tails are
// negligible, so step refinement is checked with Gaussian tails.
fn gaussian_config(scheme: Scheme, steps: usize) -> SolverConfig {
    SolverConfig { alpha: 2.0, ..config(scheme, steps) }
}

fn datum(grid: &PhaseGrid, mass: f64) -> PhaseField {
    InitialData::Gaussian { mass, mean: vec![0.0, 0.0], sigma: vec![0.6, 1.0], modulation: Some((0.5, 0.785398)) }
        .build(grid)
        .unwrap()
}

fn rel(a: &PhaseField, b: &PhaseField) -> f64 {
    a.sub(b).unwrap().l2_norm() / b.l2_norm()
}

#[test]
fn marching_is_second_order() {
    let u0 = datum(&config(Scheme::ExpMarch, 8).grid, 2.0);
    let reference = march_solve(&u0, &gaussian_config(Scheme::ExpMarch, 512)).unwrap();
    let errs: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| rel(march_solve(&u0, &gaussian_config(Scheme::ExpMarch, n)).unwrap().terminal(), reference.terminal()))
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.2..4.8).contains(&ratio), "{errs:?}");
    }
}

#[test]
fn picard_limit_satisfies_the_mild_equation() {
    let cfg = config(Scheme::GlobalPicard, 32);
    let u0 = datum(&cfg.grid, 0.5);
    let run = picard_solve(&u0, &cfg).unwrap();
    assert_eq!(run.status, RunStatus::Converged);
    let ratios = &run.picard.as_ref().unwrap().ratios;
    assert!(ratios.iter().skip(1).all(|r| *r < 1.0), "{ratios:?}");
    assert!(mild_residual(&run, &cfg, None).unwrap() <= 10.0 * cfg.picard_tol);
    assert!(mild_residual(&run, &cfg, Some(4)).unwrap() <= 10.0 * cfg.picard_tol);
}

#[test]
fn mild_residual_tracks_a_perturbed_snapshot() {
    let cfg = config(Scheme::GlobalPicard, 16);
    let u0 = datum(&cfg.grid, 0.5);
    let run = picard_solve(&u0, &cfg).unwrap();
    let noise = random_band_limited(&cfg.grid, 4, 17);
    let mut last = Vec::new();
    for delta in [1e-4, 1e-6] {
        let mut bad = run.clone();
        let n = bad.snapshots.len() - 1;
        bad.snapshots[n] = bad.snapshots[n].axpy(delta, &noise).unwrap();
        let r = mild_residual(&bad, &cfg, None).unwrap();
        let predicted = delta * noise.l2_norm() / u0.l2_norm();
        assert!((r / predicted - 1.0).abs() < 0.05, "{r} vs {predicted}");
        last.push(r);
    }
    assert!((last[0] / last[1] / 100.0 - 1.0).abs() < 0.05);
}

#[test]
fn weak_form_defects() {
    let cfg = gaussian_config(Scheme::GlobalPicard, 32);
    let u0 = datum(&cfg.grid, 0.5);
    let run = picard_solve(&u0, &cfg).unwrap();
    let one = PhaseField::constant(&cfg.grid, 1.0);
    assert!(weak_residual(&run, &cfg, &[one]).unwrap() <= 1e-10);
    // the defect of a smooth test function is a time-quadrature error
    let phi = [bump_field(&cfg.grid, &[0.5, 0.3], 2.5), bump_field(&cfg.grid, &[-1.0, -0.5], 2.0)];
    let coarse = weak_residual(&run, &cfg, &phi).unwrap();
    let cfg_fine = gaussian_config(Scheme::GlobalPicard, 64);
    let fine = weak_residual(&picard_solve(&u0, &cfg_fine).unwrap(), &cfg_fine, &phi).unwrap();
    assert!((3.0..5.0).contains(&(coarse / fine)), "{coarse} {fine}");
    let free_cfg = SolverConfig { kernel: KernelSpec::zero(), ..gaussian_config(Scheme::ExpMarch, 64) };
    let free = march_solve(&u0, &free_cfg).unwrap();
    assert!(weak_residual(&free, &free_cfg, &phi).unwrap() < fine);
}

#[test]
fn schemes_agree_within_their_discretisation_errors() {
    let u0 = datum(&config(Scheme::ExpMarch, 8).grid, 1.0);
    let term = |scheme, n| {
        let cfg = gaussian_config(scheme, n);
        solve(&u0, &cfg).unwrap().terminal().clone()
    };
    let (m16, m32) = (term(Scheme::ExpMarch, 16), term(Scheme::ExpMarch, 32));
    let (p16, p32) = (term(Scheme::GlobalPicard, 16), term(Scheme::GlobalPicard, 32));
    let tol_m = rel(&m16, &m32) * 4.0 / 3.0;
    let tol_p = rel(&p16, &p32) * 4.0 / 3.0 + 1e-11;
    assert!(rel(&m16, &p16) <= 5.0 * (tol_m + tol_p), "{} vs {tol_m} + {tol_p}", rel(&m16, &p16));
}

#[test]
fn invariants_hold_on_nonnegative_data() {
    for scheme in [Scheme::ExpMarch, Scheme::GlobalPicard] {
        let cfg = SolverConfig { grid: PhaseGrid::kinetic(1, 64, 8.0, 128, 24.0).unwrap(), ..config(scheme, 32) };
        let run = solve(&datum(&cfg.grid, 1.0), &cfg).unwrap();
        let inv = check_invariants(&run).unwrap();
        assert!(inv.passes(1e-10, 1e-6, 1e-6), "{inv:?}");
    }
}

#[test]
fn stability_ratios_are_consistent_across_perturbation_sizes() {
    let cfg = config(Scheme::ExpMarch, 32);
    let u0 = datum(&cfg.grid, 1.0);
    let base = march_solve(&u0, &cfg).unwrap();
    let noise = random_band_limited(&cfg.grid, 3, 5);
    let noise = noise.scaled(1.0 / noise.l2_norm());
    let maxes: Vec<f64> = [1e-3, 1e-4]
        .iter()
        .map(|&delta| {
            let run = march_solve(&u0.axpy(delta, &noise).unwrap(), &cfg).unwrap();
            stability_compare(&base, &run, delta, cfg.alpha, (0.0, 0.0)).unwrap().max_ratio()
        })
        .collect();
    assert!(maxes.iter().all(|m| m.is_finite() && *m > 0.0));
    assert!(maxes[0] / maxes[1] < 3.0 && maxes[1] / maxes[0] < 3.0, "{maxes:?}");
    // perturbing the kernel strength only
    let b_maxes: Vec<f64> = [1e-3, 1e-4]
        .iter()
        .map(|&delta| {
            let cfg_b = SolverConfig { kernel: kernel().with_strength(1.0 + delta), ..cfg.clone() };
            let run = march_solve(&u0, &cfg_b).unwrap();
            stability_compare(&base, &run, delta, cfg.alpha, (0.0, 0.0)).unwrap().max_ratio()
        })
        .collect();
    assert!(b_maxes[0] / b_maxes[1] < 3.0 && b_maxes[1] / b_maxes[0] < 3.0, "{b_maxes:?}");
    let other = march_solve(&u0, &config(Scheme::ExpMarch, 16)).unwrap();
    assert!(stability_compare(&base, &other, 1.0, 1.5, (0.0, 0.0)).is_err());
}

#[test]
fn free_heat_flow_decays_at_the_gaussian_rate() {
    let cfg = SolverConfig {
        mode: Mode::Nondegenerate,
        alpha: 2.0,
        kernel: KernelSpec::zero(),
        grid: PhaseGrid::position(1, 1024, 200.0).unwrap(),
        horizon: 20.0,
        steps: 200,
        scheme: Scheme::ExpMarch,
        snapshot_every: 0,
        ..config(Scheme::ExpMarch, 8)
    };
    let u0 = InitialData::Gaussian { mass: 1.0, mean: vec![0.0], sigma: vec![0.5], modulation: None }
        .build(&cfg.grid)
        .unwrap();
    let run = march_solve(&u0, &cfg).unwrap();
    assert_eq!(run.snapshots.len(), 2);
    let fit = decay_rate(&run, "linf", (2.0, 20.0)).unwrap();
    assert!((fit.slope + 0.5).abs() < 0.05, "{}", fit.slope);
    assert!(decay_rate(&run, "mass", (2.0, 20.0)).unwrap().slope.abs() < 1e-6);
}

#[test]
fn smallness_margin_is_homogeneous() {
    let mut cfg = config(Scheme::GlobalPicard, 16);
    let u0 = datum(&cfg.grid, 1.0);
    assert!(smallness_margin(&u0, &cfg.kernel, &cfg).is_err());
    cfg.smallness = Some(SmallnessIndices {
        c0: 0.7,
        beta0: -0.5,
        p0: Integrability::new(1.0, 1.0),
        beta_b: -0.5,
        p_b: 1.0,
        provenance: String::new(),
    });
    let zero = PhaseField::zeros(&cfg.grid);
    assert_eq!(smallness_margin(&zero, &cfg.kernel, &cfg).unwrap(), 0.7);
    let p1 = smallness_product(&u0, &cfg.kernel, &cfg).unwrap();
    let p3 = smallness_product(&u0.scaled(3.0), &cfg.kernel, &cfg).unwrap();
    assert!(p1 > 0.0 && (p3 / p1 - 3.0).abs() < 1e-12);
}

#[test]
fn runaway_runs_are_flagged() {
    let strong = SolverConfig { kernel: kernel().with_strength(1e4), ..config(Scheme::ExpMarch, 16) };
    let u0 = datum(&strong.grid, 1.0);
    let run = march_solve(&u0, &strong).unwrap();
    assert_eq!(run.status, RunStatus::BlowUp);
    assert!(run.diagnostic.is_some());
    let picard = picard_solve(&u0, &SolverConfig { scheme: Scheme::GlobalPicard, ..strong.clone() }).unwrap();
    assert!(matches!(picard.status, RunStatus::Diverged | RunStatus::BlowUp), "{:?}", picard.status);
    let tight = SolverConfig { memory_budget: 1000, ..config(Scheme::GlobalPicard, 16) };
    assert!(picard_solve(&u0, &tight).is_err());
}

#[test]
fn monitor_csv_has_one_row_per_step() {
    let mut cfg = config(Scheme::ExpMarch, 16);
    cfg.monitors.push(BesovMonitor {
        name: "b0".into(),
        s: 0.0,
        q: f64::INFINITY,
        p: Integrability::TWO,
        gamma0: 0.0,
        gamma1: 0.0,
    });
    let run = march_solve(&datum(&cfg.grid, 1.0), &cfg).unwrap();
    let csv = run.monitors.to_csv();
    assert_eq!(csv.lines().count(), 18);
    assert!(csv.lines().next().unwrap().starts_with("t,b0,div_deficit_integral,l1"));
}
