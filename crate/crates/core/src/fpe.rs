//! Nonlinear kinetic and nondegenerate Fokker-Planck solvers.
//!
//! Both modes solve the mild form
//!
//! ```text
//! u(t) = P_t u_0 - int_0^t P_{t-s} div_v((b * u_s) u_s) ds
//! ```
//!
//! where `P_t` is the kinetic semigroup on a phase-space grid and the
//! fractional heat semigroup on a position grid (in which case `div_v` is the
//! full divergence). [`picard_solve`] iterates the whole space-time map;
//! [`march_solve`] steps it with an exponential trapezoid rule.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::besov::DyadicPartition;
use crate::error::{Error, Result};
use crate::fit::{fit_loglog, LinearFit};
use crate::grid::{Integrability, PhaseField, PhaseGrid};
use crate::kernels::{divergence, kernel_field, DriftOperator, KernelSpec};
use crate::semigroup::{check_alpha, Generator, SemigroupPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Kinetic,
    Nondegenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    GlobalPicard,
    ExpMarch,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dealias {
    #[default]
    TwoThirds,
    None,
}

/// A weighted Besov monitor `w(t) ||u(t)||_{B^{s,q}_{p;a}}` with
/// `w(t) = (1 ^ t)^{gamma0/alpha} (1 v t)^{gamma1/alpha}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovMonitor {
    pub name: String,
    pub s: f64,
    #[serde(default = "inf", with = "crate::grid::extended")]
    pub q: f64,
    pub p: Integrability,
    #[serde(default)]
    pub gamma0: f64,
    #[serde(default)]
    pub gamma1: f64,
}

fn inf() -> f64 {
    f64::INFINITY
}

/// Index data of the smallness product `||u_0||_{B^{beta0,inf}_{p0;a}} ||b||_{B^{beta_b,inf}_{p_b}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallnessIndices {
    /// Empirical contraction threshold for the product.
    pub c0: f64,
    pub beta0: f64,
    pub p0: Integrability,
    pub beta_b: f64,
    #[serde(with = "crate::grid::extended")]
    pub p_b: f64,
    /// Where `c0` came from.
    #[serde(default)]
    pub provenance: String,
}

fn default_iters() -> usize {
    40
}

fn default_tol() -> f64 {
    1e-10
}

fn default_budget() -> usize {
    1 << 30
}

fn default_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub mode: Mode,
    pub alpha: f64,
    pub kernel: KernelSpec,
    pub grid: PhaseGrid,
    pub horizon: f64,
    pub steps: usize,
    pub scheme: Scheme,
    #[serde(default = "default_iters")]
    pub picard_max_iters: usize,
    #[serde(default = "default_tol")]
    pub picard_tol: f64,
    #[serde(default)]
    pub dealias: Dealias,
    #[serde(default)]
    pub monitors: Vec<BesovMonitor>,
    /// Store a snapshot every this many steps (0 keeps only the endpoints).
    #[serde(default = "default_every")]
    pub snapshot_every: usize,
    /// Upper bound in bytes on the space-time storage of a Picard run.
    #[serde(default = "default_budget")]
    pub memory_budget: usize,
    #[serde(default)]
    pub smallness: Option<SmallnessIndices>,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        check_alpha(self.alpha)?;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.steps < 8 {
            return bad(format!("steps = {} (need at least 8)", self.steps));
        }
        if !(self.picard_tol > 0.0) {
            return bad("picard_tol must be positive".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon = {} (must be positive)", self.horizon));
        }
        match (self.mode, self.grid.kinetic) {
            (Mode::Kinetic, false) => return bad("kinetic mode needs a kinetic grid".into()),
            (Mode::Nondegenerate, true) => return bad("nondegenerate mode needs a position grid".into()),
            _ => {}
        }
        self.kernel.validate(self.grid.d)
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn generator(&self) -> Generator {
        match self.mode {
            Mode::Kinetic => Generator::Kinetic,
            Mode::Nondegenerate => Generator::Isotropic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Converged,
    /// Picard differences grew for three consecutive iterations.
    Diverged,
    /// Picard stopped at the iteration cap above tolerance.
    NotConverged,
    BlowUp,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PicardReport {
    pub residuals: Vec<f64>,
    pub ratios: Vec<f64>,
    pub iterations: usize,
}

/// Time series of monitor channels.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Monitors {
    pub times: Vec<f64>,
    pub channels: BTreeMap<String, Vec<f64>>,
}

impl Monitors {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels.get(name).map(|v| v.as_slice())
    }

    fn push(&mut self, name: &str, value: f64) {
        self.channels.entry(name.to_string()).or_default().push(value);
    }

    /// One row per time, one column per channel.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for k in self.channels.keys() {
            out.push(',');
            out.push_str(k);
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:.12e}"));
            for v in self.channels.values() {
                out.push_str(&format!(",{:.12e}", v[i]));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SolverRun {
    pub times: Vec<f64>,
    pub snapshots: Vec<PhaseField>,
    pub monitors: Monitors,
    pub picard: Option<PicardReport>,
    pub status: RunStatus,
    pub diagnostic: Option<String>,
    pub wall_time: f64,
}

impl SolverRun {
    pub fn initial(&self) -> &PhaseField {
        &self.snapshots[0]
    }

    pub fn terminal(&self) -> &PhaseField {
        self.snapshots.last().expect("runs keep at least one snapshot")
    }
}

/// Everything needed to evaluate the nonlinear term on one lattice.
#[derive(Clone, Debug)]
pub struct Nonlinearity {
    drift: DriftOperator,
    mask: Option<Vec<f64>>,
}

impl Nonlinearity {
    pub fn new(spec: &KernelSpec, grid: &PhaseGrid, dealias: Dealias) -> Result<Self> {
        let drift = DriftOperator::new(spec, grid)?;
        let mask = match dealias {
            Dealias::None => None,
            Dealias::TwoThirds => Some(two_thirds_mask(grid)),
        };
        Ok(Self { drift, mask })
    }

    pub fn is_zero(&self) -> bool {
        self.drift.is_zero()
    }

    pub fn drift(&self, u: &PhaseField) -> Result<Vec<PhaseField>> {
        self.drift.apply(u)
    }

    /// `F = (b * u) u` per velocity direction.
    pub fn flux(&self, u: &PhaseField) -> Result<Vec<PhaseField>> {
        let h = self.drift.apply(u)?;
        let u = match &self.mask {
            Some(m) => u.apply_real_table(m),
            None => u.clone(),
        };
        h.iter()
            .map(|c| {
                if let Some(i) = c.values().iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { index: i, value: c.values()[i] });
                }
                let c = match &self.mask {
                    Some(m) => c.apply_real_table(m),
                    None => c.clone(),
                };
                let prod = c.mul(&u)?;
                Ok(match &self.mask {
                    Some(m) => prod.apply_real_table(m),
                    None => prod,
                })
            })
            .collect()
    }

    /// `G(u) = div_v F(u)`.
    pub fn div_flux(&self, u: &PhaseField) -> Result<PhaseField> {
        if self.is_zero() {
            return Ok(PhaseField::zeros(u.grid()));
        }
        divergence(&self.flux(u)?)
    }

    /// `||(div_v H)^-||_inf`.
    pub fn drift_divergence_deficit(&self, u: &PhaseField) -> Result<f64> {
        if self.is_zero() {
            return Ok(0.0);
        }
        Ok(divergence(&self.drift.apply(u)?)?.values().iter().fold(0.0, |m, v| m.max(-v)))
    }
}

/// Keeps `|k_a| < n_a / 3` on every axis.
pub fn two_thirds_mask(grid: &PhaseGrid) -> Vec<f64> {
    let shape = grid.shape();
    let mut mask = vec![0.0; grid.len()];
    crate::grid::for_each_multi(&shape, |flat, idx| {
        let keep = idx.iter().zip(&shape).all(|(&i, &n)| {
            let k = if i < n / 2 { i } else { n - i };
            3 * k < n
        });
        mask[flat] = if keep { 1.0 } else { 0.0 };
    });
    mask
}

/// `(b * u) u` with the configured dealiasing.
pub fn nonlinear_flux(u: &PhaseField, spec: &KernelSpec, dealias: Dealias) -> Result<Vec<PhaseField>> {
    Nonlinearity::new(spec, u.grid(), dealias)?.flux(u)
}

struct Recorder<'a> {
    cfg: &'a SolverConfig,
    partition: Option<DyadicPartition>,
    nonlin: &'a Nonlinearity,
    monitors: Monitors,
    deficit_prev: Option<(f64, f64)>,
    deficit_integral: f64,
    linf0: f64,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a SolverConfig, nonlin: &'a Nonlinearity, u0: &PhaseField) -> Result<Self> {
        let partition = if cfg.monitors.is_empty() { None } else { Some(DyadicPartition::new(&cfg.grid, cfg.alpha)?) };
        Ok(Self {
            cfg,
            partition,
            nonlin,
            monitors: Monitors::default(),
            deficit_prev: None,
            deficit_integral: 0.0,
            linf0: u0.max_abs(),
        })
    }

    fn record(&mut self, t: f64, u: &PhaseField) -> Result<()> {
        let deficit = self.nonlin.drift_divergence_deficit(u)?;
        if let Some((t0, d0)) = self.deficit_prev {
            self.deficit_integral += 0.5 * (t - t0) * (d0 + deficit);
        }
        self.deficit_prev = Some((t, deficit));
        let m = &mut self.monitors;
        m.times.push(t);
        m.push("mass", u.total_mass());
        m.push("l1", u.lp_norm(1.0));
        m.push("linf", u.max_abs());
        m.push("min", u.min());
        m.push("div_deficit_integral", self.deficit_integral);
        m.push("linf_bound", self.linf0 * self.deficit_integral.exp());
        if let Some(part) = &self.partition {
            for mon in &self.cfg.monitors {
                let a = self.cfg.alpha;
                let w = t.min(1.0).powf(mon.gamma0 / a) * t.max(1.0).powf(mon.gamma1 / a);
                let v = part.besov_norm(u, mon.s, mon.q, mon.p)?;
                self.monitors.push(&mon.name, w * v);
            }
        }
        Ok(())
    }
}

fn snapshot_indices(cfg: &SolverConfig) -> impl Fn(usize) -> bool + '_ {
    move |n| n == 0 || n == cfg.steps || (cfg.snapshot_every > 0 && n % cfg.snapshot_every == 0)
}

fn check_initial(u0: &PhaseField, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    if u0.grid() != &cfg.grid {
        return Err(Error::GridMismatch("initial datum lives on another lattice".into()));
    }
    Ok(())
}

/// Exponential trapezoid marching with a predictor-corrector flux:
///
/// ```text
/// u~      = P_h (u_n - h G(u_n))
/// u_{n+1} = P_h u_n - h/2 (P_h G(u_n) + G(u~))
/// ```
pub fn march_solve(u0: &PhaseField, cfg: &SolverConfig) -> Result<SolverRun> {
    check_initial(u0, cfg)?;
    let start = Instant::now();
    let h = cfg.step();
    let plan = SemigroupPlan::new(cfg.generator(), &cfg.grid, h, cfg.alpha)?;
    let nonlin = Nonlinearity::new(&cfg.kernel, &cfg.grid, cfg.dealias)?;
    let mut rec = Recorder::new(cfg, &nonlin, u0)?;
    let keep = snapshot_indices(cfg);
    let mut u = u0.clone();
    let mut times = vec![0.0];
    let mut snapshots = vec![u0.clone()];
    rec.record(0.0, &u)?;
    let mut status = RunStatus::Completed;
    let mut diagnostic = None;
    for n in 0..cfg.steps {
        let next = if nonlin.is_zero() {
            plan.apply(&u)?
        } else {
            let g0 = nonlin.div_flux(&u)?;
            let pu = plan.apply(&u)?;
            let pg = plan.apply(&g0)?;
            let pred = pu.axpy(-h, &pg)?;
            let g1 = nonlin.div_flux(&pred)?;
            pu.axpy(-0.5 * h, &pg.add(&g1)?)?
        };
        let t = (n + 1) as f64 * h;
        let grow = next.max_abs();
        if !grow.is_finite() || grow > 10.0 * u.max_abs() {
            status = RunStatus::BlowUp;
            diagnostic = Some(format!("L^inf jumped from {:.3e} to {:.3e} at t = {t:.6}", u.max_abs(), grow));
            break;
        }
        u = next;
        rec.record(t, &u)?;
        if keep(n + 1) {
            times.push(t);
            snapshots.push(u.clone());
        }
    }
    Ok(SolverRun {
        times,
        snapshots,
        monitors: rec.monitors,
        picard: None,
        status,
        diagnostic,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Trapezoid Duhamel integrals at every node of a uniform time lattice,
/// built with the shift identity `D_{n+1} = P_h D_n + h/2 (P_h g_n + g_{n+1})`.
fn duhamel_path(plan: &SemigroupPlan, g: &[PhaseField], h: f64) -> Result<Vec<PhaseField>> {
    let mut out = Vec::with_capacity(g.len());
    let mut d = PhaseField::zeros(g[0].grid());
    out.push(d.clone());
    for n in 0..g.len() - 1 {
        d = plan.apply(&d.axpy(0.5 * h, &g[n])?)?.axpy(0.5 * h, &g[n + 1])?;
        out.push(d.clone());
    }
    Ok(out)
}

/// Picard iteration of `U(u)(t) = P_t u_0 - int_0^t P_{t-s} div_v F(u_s) ds`
/// on the whole time lattice, starting from the free flow.
///
/// The recorded residual is `sup_t ||u^{k+1}(t) - u^k(t)||_2 / ||u_0||_2`.
pub fn picard_solve(u0: &PhaseField, cfg: &SolverConfig) -> Result<SolverRun> {
    check_initial(u0, cfg)?;
    let bytes = (cfg.steps + 1) * cfg.grid.len() * 8 * 3;
    if bytes > cfg.memory_budget {
        return Err(Error::InvalidParameter(format!(
            "Picard storage of {bytes} bytes exceeds the budget of {} bytes",
            cfg.memory_budget
        )));
    }
    let start = Instant::now();
    let h = cfg.step();
    let plan = SemigroupPlan::new(cfg.generator(), &cfg.grid, h, cfg.alpha)?;
    let nonlin = Nonlinearity::new(&cfg.kernel, &cfg.grid, cfg.dealias)?;
    let mut free = Vec::with_capacity(cfg.steps + 1);
    free.push(u0.clone());
    for n in 0..cfg.steps {
        free.push(plan.apply(&free[n])?);
    }
    let norm0 = u0.l2_norm().max(f64::MIN_POSITIVE);
    let mut report = PicardReport::default();
    let mut u = free.clone();
    let mut status = RunStatus::NotConverged;
    let mut diagnostic = None;
    let mut growth = 0;
    for _ in 0..cfg.picard_max_iters {
        let g = u.iter().map(|f| nonlin.div_flux(f)).collect::<Result<Vec<_>>>()?;
        let d = duhamel_path(&plan, &g, h)?;
        let next = free.iter().zip(&d).map(|(a, b)| a.sub(b)).collect::<Result<Vec<_>>>()?;
        let r = next.iter().zip(&u).map(|(a, b)| a.sub(b).map(|x| x.l2_norm())).collect::<Result<Vec<_>>>()?;
        let r = r.into_iter().fold(0.0, f64::max) / norm0;
        report.iterations += 1;
        if let Some(&prev) = report.residuals.last() {
            report.ratios.push(r / prev);
            growth = if r > prev { growth + 1 } else { 0 };
        }
        report.residuals.push(r);
        if !r.is_finite() || next.iter().any(|f| !f.max_abs().is_finite()) {
            status = RunStatus::BlowUp;
            diagnostic = Some(format!("non-finite iterate after {} Picard iterations", report.iterations));
            break;
        }
        u = next;
        if r <= cfg.picard_tol {
            status = RunStatus::Converged;
            break;
        }
        if growth >= 3 {
            status = RunStatus::Diverged;
            diagnostic = Some(format!(
                "Picard differences grew for 3 consecutive iterations (last ratio {:.3})",
                report.ratios.last().copied().unwrap_or(f64::NAN)
            ));
            break;
        }
    }
    if status == RunStatus::NotConverged {
        diagnostic = Some(format!(
            "no convergence after {} iterations (residual {:.3e})",
            report.iterations,
            report.residuals.last().copied().unwrap_or(f64::NAN)
        ));
    }
    let mut rec = Recorder::new(cfg, &nonlin, u0)?;
    let keep = snapshot_indices(cfg);
    let mut times = Vec::new();
    let mut snapshots = Vec::new();
    for (n, f) in u.into_iter().enumerate() {
        let t = n as f64 * h;
        if status != RunStatus::BlowUp {
            rec.record(t, &f)?;
        }
        if keep(n) {
            times.push(t);
            snapshots.push(f);
        }
    }
    Ok(SolverRun {
        times,
        snapshots,
        monitors: rec.monitors,
        picard: Some(report),
        status,
        diagnostic,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Runs the configured scheme.
pub fn solve(u0: &PhaseField, cfg: &SolverConfig) -> Result<SolverRun> {
    match cfg.scheme {
        Scheme::GlobalPicard => picard_solve(u0, cfg),
        Scheme::ExpMarch => march_solve(u0, cfg),
    }
}

fn uniform_snapshots(run: &SolverRun) -> Result<f64> {
    if run.times.len() < 2 {
        return Err(Error::InvalidParameter("run keeps fewer than two snapshots".into()));
    }
    let h = run.times[1] - run.times[0];
    let uniform = run.times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h);
    if !uniform || run.times[0] != 0.0 {
        return Err(Error::InvalidParameter("residuals need snapshots on a uniform lattice from t = 0".into()));
    }
    Ok(h)
}

/// `sup_t ||u(t) - P_t u_0 + int_0^t P_{t-s} div_v F(u_s) ds||_2 / ||u_0||_2`
/// with the integral taken by the trapezoid rule over the stored snapshots
/// (every snapshot time, or `max_times` evenly spread ones).
///
/// Propagators on the snapshot lattice are powers of the one-step plan, the
/// same operators both solvers use.
pub fn mild_residual(run: &SolverRun, cfg: &SolverConfig, max_times: Option<usize>) -> Result<f64> {
    let h = uniform_snapshots(run)?;
    let nonlin = Nonlinearity::new(&cfg.kernel, &cfg.grid, cfg.dealias)?;
    let plan = SemigroupPlan::new(cfg.generator(), &cfg.grid, h, cfg.alpha)?;
    let n = run.snapshots.len();
    let targets: Vec<usize> = match max_times {
        Some(k) if k < n - 1 => (1..=k).map(|i| i * (n - 1) / k).collect(),
        _ => (1..n).collect(),
    };
    let top = *targets.last().unwrap();
    let u0 = run.initial();
    let norm0 = u0.l2_norm().max(f64::MIN_POSITIVE);
    let duhamel = if nonlin.is_zero() {
        None
    } else {
        let g = run.snapshots[..=top].iter().map(|f| nonlin.div_flux(f)).collect::<Result<Vec<_>>>()?;
        Some(duhamel_path(&plan, &g, h)?)
    };
    let mut free = u0.clone();
    let mut worst = 0.0f64;
    let mut next = targets.iter().peekable();
    for m in 1..=top {
        free = plan.apply(&free)?;
        if next.peek() == Some(&&m) {
            next.next();
            let mut acc = run.snapshots[m].sub(&free)?;
            if let Some(d) = &duhamel {
                acc = acc.add(&d[m])?;
            }
            worst = worst.max(acc.l2_norm() / norm0);
        }
    }
    Ok(worst)
}

/// A smooth bump `exp(1 - 1 / (1 - |z - c|^2 / r^2))` supported in a ball.
pub fn bump_field(grid: &PhaseGrid, center: &[f64], radius: f64) -> PhaseField {
    PhaseField::from_fn(grid, |z| {
        let q: f64 = z.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (radius * radius);
        if q < 1.0 {
            (1.0 - 1.0 / (1.0 - q)).exp()
        } else {
            0.0
        }
    })
}

fn inner(a: &PhaseField, b: &PhaseField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>() * a.grid().cell_volume()
}

/// `L* phi`: `Delta_v^{alpha/2} phi + v . nabla_x phi` (kinetic) or
/// `Delta^{alpha/2} phi` (nondegenerate), derivatives taken spectrally.
fn adjoint_generator(phi: &PhaseField, alpha: f64) -> Result<PhaseField> {
    let g = phi.grid().clone();
    let d = g.d;
    let frac = phi.apply_multiplier(|xi| {
        let r2: f64 = if g.kinetic { xi[d..].iter().map(|k| k * k).sum() } else { xi.iter().map(|k| k * k).sum() };
        num_complex::Complex64::new(-r2.powf(0.5 * alpha), 0.0)
    });
    if !g.kinetic {
        return Ok(frac);
    }
    let mut acc = frac;
    let nv = g.v_block_len();
    let vs = g.coords(d);
    for a in 0..d {
        let dx = phi.partial(a, 1);
        let vals: Vec<f64> = dx
            .values()
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let iv = i % nv;
                let va = if d == 1 { vs[iv] } else if a == 0 { vs[iv / g.n_v] } else { vs[iv % g.n_v] };
                w * va
            })
            .collect();
        acc = acc.add(&PhaseField::new(g.clone(), vals)?)?;
    }
    Ok(acc)
}

/// Defect of the weak formulation
/// `<u_t, phi> = <u_0, phi> + int_0^t <u, L* phi> + <(b * u) u, nabla_v phi> ds`,
/// maximised over test functions and snapshot times (trapezoid in time).
pub fn weak_residual(run: &SolverRun, cfg: &SolverConfig, test_fns: &[PhaseField]) -> Result<f64> {
    let h = uniform_snapshots(run)?;
    let nonlin = Nonlinearity::new(&cfg.kernel, &cfg.grid, cfg.dealias)?;
    let fluxes = run.snapshots.iter().map(|f| nonlin.flux(f)).collect::<Result<Vec<_>>>()?;
    let g = &cfg.grid;
    let v_axes = if g.kinetic { g.v_axes() } else { g.x_axes() };
    let mut worst = 0.0f64;
    for phi in test_fns {
        let lphi = adjoint_generator(phi, cfg.alpha)?;
        let grads: Vec<PhaseField> = v_axes.iter().map(|&a| phi.partial(a, 1)).collect();
        let integrand: Vec<f64> = run
            .snapshots
            .iter()
            .zip(&fluxes)
            .map(|(u, f)| inner(u, &lphi) + f.iter().zip(&grads).map(|(fa, ga)| inner(fa, ga)).sum::<f64>())
            .collect();
        let base = inner(run.initial(), phi);
        let mut integral = 0.0;
        for n in 1..run.snapshots.len() {
            integral += 0.5 * h * (integrand[n - 1] + integrand[n]);
            let defect = inner(&run.snapshots[n], phi) - base - integral;
            worst = worst.max(defect.abs());
        }
    }
    Ok(worst)
}

/// `c0 - ||u_0||_{B^{beta0,inf}_{p0;a}} ||b||_{B^{beta_b,inf}_{p_b}}`.
pub fn smallness_margin(u0: &PhaseField, spec: &KernelSpec, cfg: &SolverConfig) -> Result<f64> {
    let Some(ix) = &cfg.smallness else {
        return Err(Error::InvalidParameter("smallness indices are not configured".into()));
    };
    Ok(ix.c0 - smallness_product(u0, spec, cfg)?)
}

/// `||u_0||_{B^{beta0,inf}_{p0;a}} ||b||_{B^{beta_b,inf}_{p_b}}`.
pub fn smallness_product(u0: &PhaseField, spec: &KernelSpec, cfg: &SolverConfig) -> Result<f64> {
    let Some(ix) = &cfg.smallness else {
        return Err(Error::InvalidParameter("smallness indices are not configured".into()));
    };
    let u_norm = DyadicPartition::new(u0.grid(), cfg.alpha)?.besov_norm(u0, ix.beta0, f64::INFINITY, ix.p0)?;
    if u_norm == 0.0 {
        return Ok(0.0);
    }
    let g = &cfg.grid;
    let base = if !g.kinetic {
        g.clone()
    } else {
        match spec.lift {
            crate::kernels::Lift::Marginal => PhaseGrid::position(g.d, g.n_x, g.box_x)?,
            crate::kernels::Lift::DiracX => PhaseGrid::position(g.d, g.n_v, g.box_v)?,
        }
    };
    let k = kernel_field(spec, &base)?;
    let part = DyadicPartition::isotropic(&base)?;
    let mut b_norm = 0.0f64;
    for c in &k {
        b_norm = b_norm.max(part.besov_norm(c, ix.beta_b, f64::INFINITY, Integrability::uniform(ix.p_b))?);
    }
    Ok(u_norm * b_norm)
}

/// Whether global Picard iteration converges for `u0` under `cfg`.
pub fn picard_contracts(u0: &PhaseField, cfg: &SolverConfig) -> Result<bool> {
    let cfg = SolverConfig { scheme: Scheme::GlobalPicard, snapshot_every: 0, monitors: Vec::new(), ..cfg.clone() };
    Ok(picard_solve(u0, &cfg)?.status == RunStatus::Converged)
}

/// Scale factor `lambda` at which Picard iteration for `lambda u0` stops
/// converging, located by bisection in `[lo, hi]` on a log scale.
///
/// `lo` must contract and `hi` must not.
pub fn contraction_threshold(u0: &PhaseField, cfg: &SolverConfig, lo: f64, hi: f64, bisections: usize) -> Result<f64> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!("threshold bracket [{lo}, {hi}] is not increasing and positive")));
    }
    if !picard_contracts(&u0.scaled(lo), cfg)? {
        return Err(Error::InvalidParameter(format!("scale {lo} already fails to contract")));
    }
    if picard_contracts(&u0.scaled(hi), cfg)? {
        return Err(Error::InvalidParameter(format!("scale {hi} still contracts")));
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..bisections {
        let mid = (a * b).sqrt();
        if picard_contracts(&u0.scaled(mid), cfg)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((a * b).sqrt())
}

/// Least-squares slope of `ln channel` against `ln t` over `window = (t0, t1)`.
pub fn decay_rate(run: &SolverRun, channel: &str, window: (f64, f64)) -> Result<LinearFit> {
    let values = run
        .monitors
        .channel(channel)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown monitor channel {channel}")))?;
    let (t, y): (Vec<f64>, Vec<f64>) = run
        .monitors
        .times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1 && **t > 0.0)
        .map(|(t, v)| (*t, v.abs()))
        .unzip();
    if t.len() < 5 {
        return Err(Error::DegenerateFit(format!("{} samples in the window (need at least 5)", t.len())));
    }
    fit_loglog(&t, &y)
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub times: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Both runs coincide exactly and the input distance is zero.
    pub identical: bool,
}

impl StabilityReport {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// `w(t) ||u_A(t) - u_B(t)||_2 / input_distance` at every shared snapshot,
/// with `w(t) = (1 ^ t)^{gamma0/alpha} (1 v t)^{gamma1/alpha}`.
pub fn stability_compare(
    a: &SolverRun,
    b: &SolverRun,
    input_distance: f64,
    alpha: f64,
    weights: (f64, f64),
) -> Result<StabilityReport> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-12) {
        return Err(Error::GridMismatch("runs have different snapshot times".into()));
    }
    let diffs =
        a.snapshots.iter().zip(&b.snapshots).map(|(x, y)| x.sub(y).map(|d| d.l2_norm())).collect::<Result<Vec<_>>>()?;
    if input_distance == 0.0 {
        if diffs.iter().all(|&d| d == 0.0) {
            return Ok(StabilityReport { times: a.times.clone(), ratios: vec![0.0; diffs.len()], identical: true });
        }
        return Err(Error::InvalidParameter("zero input distance but the runs differ".into()));
    }
    let ratios = a
        .times
        .iter()
        .zip(&diffs)
        .map(|(&t, &d)| t.min(1.0).powf(weights.0 / alpha) * t.max(1.0).powf(weights.1 / alpha) * d / input_distance)
        .collect();
    Ok(StabilityReport { times: a.times.clone(), ratios, identical: false })
}

/// Conservation and a priori bounds of a finished run.
#[derive(Clone, Debug, Serialize)]
pub struct InvariantReport {
    /// `max_t |mass(t) - mass(0)| / max(1, |mass(0)|)`.
    pub mass_drift: f64,
    /// `max_t (||u(t)||_1 - ||u(0)||_1)`, positive part.
    pub l1_excess: f64,
    /// `max_t (||u(t)||_inf - ||u(0)||_inf exp(int ||(div_v H)^-||_inf))`, positive part.
    pub linf_excess: f64,
}

impl InvariantReport {
    pub fn passes(&self, mass_tol: f64, l1_tol: f64, linf_tol: f64) -> bool {
        self.mass_drift <= mass_tol && self.l1_excess <= l1_tol && self.linf_excess <= linf_tol
    }
}

pub fn check_invariants(run: &SolverRun) -> Result<InvariantReport> {
    let m = &run.monitors;
    let get = |k: &str| m.channel(k).ok_or_else(|| Error::InvalidParameter(format!("run lacks the {k} channel")));
    let mass = get("mass")?;
    let l1 = get("l1")?;
    let linf = get("linf")?;
    let bound = get("linf_bound")?;
    let scale = mass[0].abs().max(1.0);
    Ok(InvariantReport {
        mass_drift: mass.iter().map(|v| (v - mass[0]).abs()).fold(0.0, f64::max) / scale,
        l1_excess: l1.iter().map(|v| v - l1[0]).fold(0.0, f64::max),
        linf_excess: linf.iter().zip(bound).map(|(v, b)| v - b).fold(0.0, f64::max),
    })
}

/// Initial data families accepted in run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// A Gaussian with the given mean and per-axis standard deviations,
    /// optionally modulated by `1 + amp cos(k x_1)`, scaled to total `mass`
    /// on the lattice.
    Gaussian {
        mass: f64,
        mean: Vec<f64>,
        sigma: Vec<f64>,
        #[serde(default)]
        modulation: Option<(f64, f64)>,
    },
    /// Random band-limited field (for linearity and norm checks).
    BandLimited { max_mode: usize, seed: u64, amplitude: f64 },
    /// A field snapshot on disk.
    Snapshot { path: String },
    /// Pointwise sum of several data.
    Sum { terms: Vec<InitialData> },
}

impl InitialData {
    pub fn build(&self, grid: &PhaseGrid) -> Result<PhaseField> {
        match self {
            InitialData::Gaussian { mass, mean, sigma, modulation } => {
                let nd = grid.ndim();
                if mean.len() != nd || sigma.len() != nd || sigma.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::InvalidParameter(format!("gaussian needs {nd} means and positive sigmas")));
                }
                let shape = PhaseField::from_fn(grid, |z| {
                    let q: f64 = z.iter().zip(mean).zip(sigma).map(|((x, m), s)| ((x - m) / s).powi(2)).sum();
                    let modf = modulation.map_or(1.0, |(amp, k)| 1.0 + amp * (k * z[0]).cos());
                    (-0.5 * q).exp() * modf
                });
                let total = shape.total_mass();
                if !(total > 0.0) {
                    return Err(Error::InvalidParameter("gaussian datum has no mass on this lattice".into()));
                }
                Ok(shape.scaled(mass / total))
            }
            InitialData::BandLimited { max_mode, seed, amplitude } => {
                Ok(crate::grid::random_band_limited(grid, *max_mode, *seed).scaled(*amplitude))
            }
            InitialData::Snapshot { path } => {
                let f = crate::grid::read_snapshot(std::io::BufReader::new(std::fs::File::open(path)?))?;
                if f.grid() != grid {
                    return Err(Error::GridMismatch(format!("snapshot {path} lives on another lattice")));
                }
                Ok(f)
            }
            InitialData::Sum { terms } => {
                let mut acc = PhaseField::zeros(grid);
                for t in terms {
                    acc = acc.add(&t.build(grid)?)?;
                }
                Ok(acc)
            }
        }
    }
}
