//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 unless `KNFP_ACCEPT_STRICT=1` is set, in which case any failing
//! criterion gives exit status 1.

use std::path::PathBuf;
use std::time::Instant;

use knfp::besov::DyadicPartition;
use knfp::fpe::*;
use knfp::grid::{random_band_limited, Integrability, PhaseField, PhaseGrid};
use knfp::kernels::{cutoff_rate, Cutoff, KernelSpec};
use knfp::mckv::*;
use knfp::semigroup::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
    info: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into(), info: Vec::new() }
    }

    fn with_info(mut self, line: impl Into<String>) -> Self {
        self.info.push(line.into());
        self
    }
}

fn preset(name: &str) -> (SolverConfig, InitialData, Value) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(format!("{name}.cfg"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let v: Value = serde_json::from_str(&text).expect("preset is JSON");
    let cfg: SolverConfig = serde_json::from_value(v["solver"].clone()).expect("preset solver block");
    let init: InitialData = serde_json::from_value(v["initial"].clone()).expect("preset initial block");
    (cfg, init, v)
}

fn rel(a: &PhaseField, b: &PhaseField) -> f64 {
    a.sub(b).unwrap().l2_norm() / b.l2_norm()
}

fn ac1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let d = if rng.random_bool(0.5) { 1 } else { 2 };
        let xi_x: Vec<f64> = (0..d).map(|_| rng.random_range(-40.0..40.0)).collect();
        let xi_v: Vec<f64> = (0..d).map(|_| rng.random_range(-40.0..40.0)).collect();
        let t: f64 = rng.random_range(0.01..2.0);
        let q = symbol_quadrature(&xi_x, &xi_v, t, 2.0);
        // |xi_v - s xi_x|^2 integrated exactly
        let vv: f64 = xi_v.iter().map(|a| a * a).sum();
        let xv: f64 = xi_x.iter().zip(&xi_v).map(|(a, b)| a * b).sum();
        let xx: f64 = xi_x.iter().map(|a| a * a).sum();
        let exact = t * vv - t * t * xv + t.powi(3) * xx / 3.0;
        if exact > 0.0 {
            worst = worst.max((q - exact).abs() / exact);
        }
    }
    Outcome::new(worst <= 1e-12, format!("max relative error {worst:.2e} (tol 1e-12)"))
}

fn ac2() -> Outcome {
    let tau = 2.0 * std::f64::consts::PI;
    let grids = [PhaseGrid::kinetic(1, 64, tau, 64, 4.0 * tau).unwrap(), PhaseGrid::kinetic(2, 8, tau, 32, 4.0 * tau).unwrap()];
    let (s, t) = (0.25, 0.5);
    let mut worst = 0.0f64;
    for g in &grids {
        let f = random_band_limited(g, 2, 7);
        for alpha in [1.2, 1.5, 1.8, 2.0] {
            let composed = kinetic_apply(&kinetic_apply(&f, t, alpha).unwrap(), s, alpha).unwrap();
            let direct = kinetic_apply(&f, s + t, alpha).unwrap();
            worst = worst.max(composed.sub(&direct).unwrap().l2_norm() / f.l2_norm());
        }
    }
    Outcome::new(worst <= 1e-10, format!("max ||P_s P_t f - P_(s+t) f|| / ||f|| = {worst:.2e} (tol 1e-10)"))
}

fn ac3() -> Outcome {
    let t = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let probes: Vec<(f64, f64)> = (0..20).map(|_| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for alpha in [1.5, 2.0] {
        let pairs = sample_kinetic_pair(alpha, t, 1, 1_000_000, 64, 11).unwrap();
        let joint: Vec<f64> = pairs.integral.iter().zip(&pairs.endpoint).flat_map(|(a, l)| [*a, *l]).collect();
        let mut w = 0.0f64;
        for &(kx, kv) in &probes {
            let cf = empirical_cf(&joint, 2, &[kx, kv]);
            // the transport shear enters the characteristic function with -xi_x
            let exact = (-symbol_exponent(&[-kx], &[kv], t, alpha).unwrap()).exp();
            w = w.max((cf - exact).norm());
        }
        parts.push(format!("alpha {alpha}: {w:.2e}"));
        worst = worst.max(w);
    }
    Outcome::new(worst <= 5e-3, format!("max |cf - exp(-symbol)| over 20 probes, N = 1e6: {} (tol 5e-3)", parts.join(", ")))
}

fn ac4() -> Outcome {
    let g = PhaseGrid::kinetic(1, 128, 8.0, 128, 16.0).unwrap();
    // strictly positive, so |f|^p stays band-limited to rounding
    let g0 = random_band_limited(&g, 4, 9);
    let f = g0.map(|x| x + 2.0 * g0.max_abs());
    let mut worst_two = 0.0f64;
    let mut worst_p = 0.0f64;
    for t in [0.1, 0.37, 1.0, 2.9] {
        let sheared = f.shear(t).unwrap();
        let two = Integrability::TWO;
        worst_two = worst_two.max((sheared.mixed_lp_norm(two) / f.mixed_lp_norm(two) - 1.0).abs());
        for p in [Integrability::new(1.0, 1.0), Integrability::new(3.0, 2.0), Integrability::new(4.0, 1.5), Integrability::new(1.5, 4.0)] {
            worst_p = worst_p.max((sheared.mixed_lp_norm(p) / f.mixed_lp_norm(p) - 1.0).abs());
        }
    }
    Outcome::new(
        worst_two <= 1e-12 && worst_p <= 1e-8,
        format!("relative norm change: p = 2 {worst_two:.2e} (tol 1e-12), other p {worst_p:.2e} (tol 1e-8)"),
    )
}

fn bernstein_sup(grid: &PhaseGrid, levels: usize) -> f64 {
    let f = PhaseField::from_fn(grid, |z| {
        (-(z[0] * z[0]) / 0.08 - z[1] * z[1] / 0.5).exp() + 0.5 * (-((z[0] - 1.0).powi(2)) / 0.3 - (z[1] + 0.7).powi(2) / 0.2).exp()
    });
    let part = DyadicPartition::new(grid, 2.0).unwrap();
    let pairs = [
        (Integrability::ONE, Integrability::TWO),
        (Integrability::TWO, Integrability::TWO),
        (Integrability::TWO, Integrability::INF),
        (Integrability::ONE, Integrability::INF),
    ];
    let mut sup = 0.0f64;
    for j in 1..=levels {
        for k in [(1, 0), (0, 1), (1, 1)] {
            for (p, pp) in pairs {
                sup = sup.max(part.bernstein_ratio(&f, j, k, p, pp).unwrap());
            }
        }
    }
    sup
}

fn ac5() -> Outcome {
    // coarse-lattice sup (0.687) rounded up
    const CALIBRATED: f64 = 0.75;
    let coarse = PhaseGrid::kinetic(1, 64, 8.0, 64, 8.0).unwrap();
    let levels = DyadicPartition::new(&coarse, 2.0).unwrap().j_max() - 1;
    let c = bernstein_sup(&coarse, levels);
    let f = bernstein_sup(&coarse.refined(2), levels);
    let drift = (f / c - 1.0).abs();
    Outcome::new(
        c <= CALIBRATED && f <= CALIBRATED && drift <= 0.2,
        format!("sup ratio {c:.3} -> {f:.3} under doubling (change {:.1}%, tol 20%), bound {CALIBRATED}", 100.0 * drift),
    )
}

fn ac6() -> Outcome {
    let g = PhaseGrid::kinetic(1, 4096, 2.0, 128, 4.0).unwrap();
    let mut delta = PhaseField::zeros(&g).into_values();
    delta[(g.n_x / 2) * g.n_v + g.n_v / 2] = 1.0 / g.cell_volume();
    let delta = PhaseField::new(g.clone(), delta).unwrap();
    let times: Vec<f64> = (0..8).map(|i| 0.02 * 5f64.powf(i as f64 / 7.0)).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut info = Vec::new();
    for alpha in [1.5, 2.0] {
        for pp in [1.0, 2.0, f64::INFINITY] {
            let p_prime = Integrability::uniform(pp);
            let series = smoothing_slope(&delta, alpha, 1.0, p_prime, &times).unwrap();
            let expected = expected_smoothing_slope(alpha, 1.0, 1, Integrability::ONE, p_prime);
            let line = format!("(alpha {alpha}, p' {pp}): {:.3} vs {expected:.3}", series.fit.slope);
            if pp == 1.0 {
                info.push(format!("outside the matrix {line}"));
            } else {
                pass &= (series.fit.slope - expected).abs() <= 0.1;
                parts.push(line);
            }
        }
    }
    let mut out = Outcome::new(pass, format!("p = 1, gamma = 1: {} (tol 0.1)", parts.join("; ")));
    for l in info {
        out = out.with_info(l);
    }
    out
}

fn vp_picard(cfg: &SolverConfig, u0: &PhaseField) -> SolverRun {
    picard_solve(u0, &SolverConfig { scheme: Scheme::GlobalPicard, ..cfg.clone() }).unwrap()
}

fn ac7() -> Outcome {
    let (cfg, init, _) = preset("vpfp1d");
    let u0 = init.build(&cfg.grid).unwrap();
    let run = vp_picard(&cfg, &u0);
    let ratios = run.picard.as_ref().unwrap().ratios.clone();
    // ratios[0] compares iterations 2 and 1, ratios[1] iterations 3 and 2
    let early = ratios.iter().take(2).copied().fold(f64::INFINITY, f64::min);
    let mild = mild_residual(&run, &cfg, None).unwrap();
    let big = vp_picard(&cfg, &u0.scaled(4.0));
    let big_ratios = big.picard.as_ref().unwrap().ratios.clone();
    let flagged = big.status != RunStatus::Converged || big_ratios.iter().any(|r| *r >= 1.0);
    let margin = smallness_margin(&u0, &cfg.kernel, &cfg).unwrap();
    let margin4 = smallness_margin(&u0.scaled(4.0), &cfg.kernel, &cfg).unwrap();
    Outcome::new(
        run.status == RunStatus::Converged && early < 0.5 && mild <= 1e-6 && flagged,
        format!(
            "ratio by iteration 3 = {early:.3} (< 0.5), mild residual {mild:.2e} (<= 1e-6), 4x datum {:?} with ratios {:.2?}",
            big.status,
            &big_ratios[..big_ratios.len().min(3)]
        ),
    )
    .with_info(format!("smallness margin {margin:.2} at 1x, {margin4:.2} at 4x"))
}

fn ac8() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["free_flow", "vpfp1d", "nse2d", "sqg2d", "pme1d"] {
        let (cfg, init, _) = preset(name);
        let run = solve(&init.build(&cfg.grid).unwrap(), &cfg).unwrap();
        let inv = check_invariants(&run).unwrap();
        let ok = inv.passes(1e-10, 1e-6, 1e-6);
        pass &= ok;
        parts.push(format!(
            "{name} {} (mass {:.1e}, L1 {:.1e}, Linf {:.1e})",
            if ok { "ok" } else { "FAIL" },
            inv.mass_drift,
            inv.l1_excess,
            inv.linf_excess
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

/// Heat-evolved centred Gaussian of total `mass` and variance `var` per axis.
fn heat_gaussian(grid: &PhaseGrid, mass: f64, var: f64) -> PhaseField {
    PhaseField::from_fn(grid, |z| {
        let r2: f64 = z.iter().map(|c| c * c).sum();
        mass * (-r2 / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var)
    })
}

fn ac9() -> Outcome {
    let (cfg, _, _) = preset("nse2d");
    let cfg = SolverConfig { snapshot_every: 10, ..cfg };
    let g = &cfg.grid;
    let (s1, s2) = (0.36, 1.0);
    let w0 = heat_gaussian(g, 1.0, s1).sub(&heat_gaussian(g, 1.0, s2)).unwrap();
    let nonlin = Nonlinearity::new(&cfg.kernel, g, cfg.dealias).unwrap();
    let term = nonlin.div_flux(&w0).unwrap().l2_norm() / w0.l2_norm();
    let run = march_solve(&w0, &cfg).unwrap();
    let mut worst = 0.0f64;
    for (t, snap) in run.times.iter().zip(&run.snapshots) {
        // u_t = Laplacian u: the variance grows by 2t
        let exact = heat_gaussian(g, 1.0, s1 + 2.0 * t).sub(&heat_gaussian(g, 1.0, s2 + 2.0 * t)).unwrap();
        worst = worst.max(rel(snap, &exact));
    }
    let single = heat_gaussian(g, 1.0, s1);
    let single_term = nonlin.div_flux(&single).unwrap().l2_norm() / single.l2_norm();
    Outcome::new(
        term <= 1e-8 && worst <= 1e-8,
        format!("zero-circulation radial vorticity: nonlinear term {term:.2e}, max deviation from heat flow {worst:.2e} (tol 1e-8)"),
    )
    .with_info(format!("single Gaussian nonlinear term {single_term:.2e}: strain from periodic images"))
}

fn ac10() -> Outcome {
    let cases = [
        (1usize, 0.5, PhaseGrid::position(1, 4096, 8.0).unwrap(), [8.0, 16.0, 32.0, 64.0]),
        (2usize, 1.0, PhaseGrid::position(2, 512, 8.0).unwrap(), [4.0, 8.0, 16.0, 32.0]),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (d, gamma, grid, cells) in cases {
        let h = grid.spacing(0);
        let eps: Vec<f64> = cells.iter().map(|c| c * h).collect();
        let rate = cutoff_rate(gamma, &grid, 1.0, 1.0, &eps).unwrap();
        let slope = rate.fit.as_ref().unwrap().slope;
        let expected = d as f64 / 1.0 - d as f64 + gamma;
        pass &= (slope - expected).abs() <= 0.15;
        parts.push(format!("(d {d}, gamma {gamma}, r 1): {slope:.3} vs {expected:.3}"));
    }
    Outcome::new(pass, format!("{} (tol 0.15)", parts.join("; ")))
}

fn ac11() -> Outcome {
    let alpha = 1.5;
    let cfg = SolverConfig {
        mode: Mode::Nondegenerate,
        alpha,
        kernel: KernelSpec::riesz_grad(0.5).with_cutoff(Cutoff::Gaussian { eps: 0.5 }),
        grid: PhaseGrid::position(1, 2048, 400.0).unwrap(),
        horizon: 50.0,
        steps: 1000,
        scheme: Scheme::ExpMarch,
        picard_max_iters: 10,
        picard_tol: 1e-10,
        dealias: Dealias::TwoThirds,
        monitors: vec![],
        snapshot_every: 0,
        memory_budget: 1 << 28,
        smallness: None,
    };
    let u0 = InitialData::Gaussian { mass: 0.1, mean: vec![0.0], sigma: vec![0.5], modulation: None }.build(&cfg.grid).unwrap();
    let run = march_solve(&u0, &cfg).unwrap();
    let slope = decay_rate(&run, "linf", (5.0, 50.0)).unwrap().slope;
    let expected = -1.0 / alpha;
    Outcome::new(
        run.status == RunStatus::Completed && (slope - expected).abs() <= 0.15,
        format!("L^inf slope over [5, 50] = {slope:.4} vs {expected:.4} (tol 0.15)"),
    )
}

fn ac12() -> Outcome {
    let (cfg, init, _) = preset("vpfp1d");
    let u0 = init.build(&cfg.grid).unwrap();
    let march = SolverConfig { scheme: Scheme::ExpMarch, snapshot_every: 0, ..cfg.clone() };
    let run = march_solve(&u0, &march).unwrap();
    let mass = u0.total_mass();
    let target = run.terminal().scaled(1.0 / mass);
    let inter = Interaction::new(&cfg.kernel.clone().with_strength(cfg.kernel.strength * mass), &cfg.grid).unwrap();
    let step = StepConfig::new(cfg.alpha, cfg.step(), ForceMethod::Binned);
    let mut medians = Vec::new();
    for n in [1_000usize, 10_000, 100_000] {
        let mut l1: Vec<f64> = (0..5u64)
            .map(|seed| {
                let ens = ParticleEnsemble::sample_from(&u0, n, 100 + seed).unwrap();
                let end = run_ensemble(&ens, &inter, &step, cfg.steps).unwrap();
                chaos_distance(&end, &target).unwrap().l1
            })
            .collect();
        l1.sort_by(f64::total_cmp);
        medians.push(l1[2]);
    }
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    Outcome::new(decreasing, format!("median L1 chaos distance for N = 1e3, 1e4, 1e5: {medians:.4?}"))
}

fn ac13() -> Outcome {
    let (cfg, init, _) = preset("vpfp1d");
    let u0 = init.build(&cfg.grid).unwrap();
    let terminal = |scheme, steps| {
        let c = SolverConfig { scheme, steps, snapshot_every: 0, ..cfg.clone() };
        solve(&u0, &c).unwrap().terminal().clone()
    };
    let n = cfg.steps;
    let (m1, m2) = (terminal(Scheme::ExpMarch, n), terminal(Scheme::ExpMarch, 2 * n));
    let (p1, p2) = (terminal(Scheme::GlobalPicard, n), terminal(Scheme::GlobalPicard, 2 * n));
    // Richardson estimates of the O(h^2) error of each scheme
    let tol_m = rel(&m1, &m2) * 4.0 / 3.0;
    let tol_p = rel(&p1, &p2) * 4.0 / 3.0 + cfg.picard_tol;
    let dist = rel(&m1, &p1);
    Outcome::new(
        dist <= 5.0 * (tol_m + tol_p),
        format!("||march - picard|| / ||picard|| = {dist:.2e} vs 5 x ({tol_m:.2e} + {tol_p:.2e})"),
    )
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 13] = [
        ("semigroup exactness at alpha = 2", 1.0, ac1),
        ("semigroup law", 10.0, ac2),
        ("Monte Carlo symbol consistency", 60.0, ac3),
        ("shear isometry", 5.0, ac4),
        ("Bernstein sweep", 30.0, ac5),
        ("smoothing slope", 120.0, ac6),
        ("Picard contraction under smallness", 180.0, ac7),
        ("conservation and a priori bounds", f64::INFINITY, ac8),
        ("radial vorticity exactness", 60.0, ac9),
        ("cutoff kernel rate", 60.0, ac10),
        ("large-time decay", 300.0, ac11),
        ("propagation-of-chaos trend", 600.0, ac12),
        ("scheme cross-check", 180.0, ac13),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let id = format!("AC{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| f.eq_ignore_ascii_case(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let secs = start.elapsed().as_secs_f64();
        let in_time = secs <= *budget;
        let pass = out.pass && in_time;
        failed += usize::from(!pass);
        let budget_s = if budget.is_finite() { format!(", budget {budget:.0} s") } else { String::new() };
        let late = if in_time { "" } else { " [over budget]" };
        println!("{id:<5} {} {name}: {} ({secs:.1} s{budget_s}){late}", if pass { "PASS" } else { "FAIL" }, out.detail);
        for line in out.info {
            println!("      info: {line}");
        }
    }
    println!("{failed} criteria failed");
    if failed > 0 && std::env::var("KNFP_ACCEPT_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
