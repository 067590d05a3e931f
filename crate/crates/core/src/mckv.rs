//! Stable McKean-Vlasov particle systems.
//!
//! First order: `dX = (K_eps * mu_t)(X) dt + dL`. Second order:
//! `dX = V dt, dV = (K_eps * mu_t)(X) dt + dL`, with `mu_t` the empirical
//! measure of the positions. Positions live in the periodic box
//! `[-L/2, L/2)^d`; velocities are unbounded.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{for_each_multi, PhaseField, PhaseGrid};
use crate::kernels::{kernel_field, multiplier_table, Cutoff, KernelFamily, KernelSpec, Lift};
use crate::semigroup::check_alpha;

const CHUNK: usize = 4096;

/// A generator for stream `stream` and chunk `chunk` of a seeded run.
fn chunk_rng(seed: u64, stream: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ chunk as u64);
    rng
}

/// Symmetric standard stable variable, `E exp(i xi X) = exp(-|xi|^alpha)`.
fn cms(alpha: f64, rng: &mut impl Rng) -> f64 {
    let u = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    (alpha * u).sin() / u.cos().powf(1.0 / alpha) * (((1.0 - alpha) * u).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Positive stable variable with `E exp(-lambda A) = exp(-lambda^beta)`.
fn positive_stable(beta: f64, rng: &mut impl Rng) -> f64 {
    let u = PI * rng.random::<f64>();
    let w: f64 = Exp1.sample(rng);
    (beta * u).sin() / u.sin().powf(1.0 / beta) * (((1.0 - beta) * u).sin() / w).powf((1.0 - beta) / beta)
}

/// Fills `out` with one isotropic increment `E exp(i xi.X) = exp(-|xi|^alpha)`.
fn stable_unit(alpha: f64, out: &mut [f64], rng: &mut impl Rng) {
    if alpha == 2.0 {
        for o in out.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *o = std::f64::consts::SQRT_2 * g;
        }
    } else if out.len() == 1 {
        out[0] = cms(alpha, rng);
    } else {
        let a = positive_stable(0.5 * alpha, rng).sqrt();
        for o in out.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *o = a * std::f64::consts::SQRT_2 * g;
        }
    }
}

/// `n` draws of `L_t` in `R^d` for the generator `Delta^{alpha/2}`
/// (`E exp(i xi.L_t) = exp(-t |xi|^alpha)`), returned row-major (`n x d`).
///
/// Uses Chambers-Mallows-Stuck for `d = 1`, a sub-Gaussian mixture for
/// `d > 1` and plain Gaussians (`L_t = sqrt(2) W_t`) at `alpha = 2`.
pub fn sample_stable(alpha: f64, t: f64, d: usize, n: usize, seed: u64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if !(t >= 0.0 && t.is_finite()) || d == 0 {
        return Err(Error::InvalidParameter(format!("stable sample with t = {t}, d = {d}")));
    }
    let mut out = vec![0.0; n * d];
    if t == 0.0 {
        return Ok(out);
    }
    let scale = t.powf(1.0 / alpha);
    out.par_chunks_mut(CHUNK * d).enumerate().for_each(|(c, block)| {
        let mut rng = chunk_rng(seed, 0, c);
        for row in block.chunks_mut(d) {
            stable_unit(alpha, row, &mut rng);
            row.iter_mut().for_each(|x| *x *= scale);
        }
    });
    Ok(out)
}

/// Samples of the kinetic pair `(int_0^t L_s ds, L_t)`.
#[derive(Clone, Debug)]
pub struct KineticPairs {
    pub d: usize,
    /// `int_0^t L_s ds`, row-major `n x d`.
    pub integral: Vec<f64>,
    /// `L_t`, row-major `n x d`.
    pub endpoint: Vec<f64>,
}

fn kinetic_pair_into(alpha: f64, t: f64, substeps: usize, a: &mut [f64], l: &mut [f64], rng: &mut impl Rng) {
    let d = a.len();
    if alpha == 2.0 {
        // (A, L) is Gaussian with covariance 2 [[t^3/3, t^2/2], [t^2/2, t]] per axis
        for k in 0..d {
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            let sl = (2.0 * t).sqrt();
            l[k] = sl * z1;
            a[k] = 0.5 * t * sl * z1 + (t * t * t / 6.0).sqrt() * z2;
        }
        return;
    }
    let h = t / substeps as f64;
    let scale = h.powf(1.0 / alpha);
    let mut inc = [0.0; 3];
    a.fill(0.0);
    l.fill(0.0);
    for k in 0..substeps {
        let w = t - (k as f64 + 0.5) * h;
        stable_unit(alpha, &mut inc[..d], rng);
        for j in 0..d {
            let x = scale * inc[j];
            l[j] += x;
            a[j] += w * x;
        }
    }
}

/// `n` draws of `(int_0^t L_s ds, L_t)`. Exact at `alpha = 2`; otherwise the
/// integral is a midpoint sum over `substeps` independent increments.
pub fn sample_kinetic_pair(alpha: f64, t: f64, d: usize, n: usize, substeps: usize, seed: u64) -> Result<KineticPairs> {
    check_alpha(alpha)?;
    if !(t > 0.0 && t.is_finite()) || !(1..=3).contains(&d) || substeps == 0 {
        return Err(Error::InvalidParameter(format!("kinetic pair with t = {t}, d = {d}, substeps = {substeps}")));
    }
    let mut integral = vec![0.0; n * d];
    let mut endpoint = vec![0.0; n * d];
    integral.par_chunks_mut(CHUNK * d).zip(endpoint.par_chunks_mut(CHUNK * d)).enumerate().for_each(
        |(c, (ab, lb))| {
            let mut rng = chunk_rng(seed, 1, c);
            for (a, l) in ab.chunks_mut(d).zip(lb.chunks_mut(d)) {
                kinetic_pair_into(alpha, t, substeps, a, l, &mut rng);
            }
        },
    );
    Ok(KineticPairs { d, integral, endpoint })
}

/// Empirical characteristic function `(1/n) sum exp(i xi.X_k)` of row-major samples.
pub fn empirical_cf(samples: &[f64], dim: usize, xi: &[f64]) -> Complex64 {
    let n = samples.len() / dim;
    let (mut re, mut im) = (0.0, 0.0);
    for row in samples.chunks_exact(dim) {
        let phase: f64 = row.iter().zip(xi).map(|(a, b)| a * b).sum();
        let (s, c) = phase.sin_cos();
        re += c;
        im += s;
    }
    Complex64::new(re / n as f64, im / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub order: Order,
    pub d: usize,
    pub box_x: f64,
    /// Positions, row-major `n x d`, wrapped into `[-L/2, L/2)`.
    pub x: Vec<f64>,
    /// Velocities, row-major `n x d` (empty for first order).
    pub v: Vec<f64>,
    pub seed: u64,
    /// Number of steps taken; drives the random streams.
    pub step: u64,
}

fn wrap(x: f64, l: f64) -> f64 {
    let y = x - l * ((x + 0.5 * l) / l).floor();
    if y >= 0.5 * l {
        y - l
    } else {
        y
    }
}

impl ParticleEnsemble {
    pub fn new(order: Order, d: usize, box_x: f64, mut x: Vec<f64>, v: Vec<f64>, seed: u64) -> Result<Self> {
        if d == 0 || !(box_x > 0.0) || x.len() % d != 0 {
            return Err(Error::InvalidParameter("particle positions must be n x d with a positive box".into()));
        }
        match order {
            Order::First if !v.is_empty() => {
                return Err(Error::InvalidParameter("first-order ensembles carry no velocities".into()))
            }
            Order::Second if v.len() != x.len() => {
                return Err(Error::InvalidParameter("velocities must match positions".into()))
            }
            _ => {}
        }
        if let Some(i) = x.iter().chain(&v).position(|z| !z.is_finite()) {
            return Err(Error::NonFinite { index: i, value: f64::NAN });
        }
        x.iter_mut().for_each(|z| *z = wrap(*z, box_x));
        Ok(Self { order, d, box_x, x, v, seed, step: 0 })
    }

    /// `n` particles drawn from a nonnegative density on a lattice: a cell is
    /// picked with probability proportional to its value, then the point is
    /// uniform in the cell around the node.
    pub fn sample_from(field: &PhaseField, n: usize, seed: u64) -> Result<Self> {
        let g = field.grid();
        if field.min() < 0.0 || field.max() <= 0.0 {
            return Err(Error::InvalidParameter("sampling needs a nonnegative, nonzero density".into()));
        }
        let mut cdf = Vec::with_capacity(g.len());
        let mut acc = 0.0;
        for &w in field.values() {
            acc += w;
            cdf.push(acc);
        }
        let shape = g.shape();
        let axes = g.axes();
        let coords: Vec<Vec<f64>> = axes.iter().map(|&a| g.coords(a)).collect();
        let spacing: Vec<f64> = axes.iter().map(|&a| g.spacing(a)).collect();
        let nd = g.ndim();
        let mut z = vec![0.0; n * nd];
        z.par_chunks_mut(CHUNK * nd).enumerate().for_each(|(c, block)| {
            let mut rng = chunk_rng(seed, 2, c);
            let mut idx = vec![0usize; nd];
            for row in block.chunks_mut(nd) {
                let r = rng.random::<f64>() * acc;
                let mut flat = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
                for a in (0..nd).rev() {
                    idx[a] = flat % shape[a];
                    flat /= shape[a];
                }
                for a in 0..nd {
                    row[a] = coords[a][idx[a]] + spacing[a] * (rng.random::<f64>() - 0.5);
                }
            }
        });
        let d = g.d;
        if g.kinetic {
            let mut x = Vec::with_capacity(n * d);
            let mut v = Vec::with_capacity(n * d);
            for row in z.chunks(nd) {
                x.extend_from_slice(&row[..d]);
                v.extend_from_slice(&row[d..]);
            }
            Self::new(Order::Second, d, g.box_x, x, v, seed)
        } else {
            Self::new(Order::First, d, g.box_x, z, Vec::new(), seed)
        }
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Phase-space dimension of one particle.
    pub fn state_dim(&self) -> usize {
        match self.order {
            Order::First => self.d,
            Order::Second => 2 * self.d,
        }
    }

    /// The state of particle `i`, positions first.
    pub fn state(&self, i: usize) -> Vec<f64> {
        let d = self.d;
        let mut s = self.x[i * d..(i + 1) * d].to_vec();
        if self.order == Order::Second {
            s.extend_from_slice(&self.v[i * d..(i + 1) * d]);
        }
        s
    }

    /// Applies `perm` to the particle labels: particle `k` of the result is
    /// particle `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.d;
        let pick = |src: &[f64]| -> Vec<f64> {
            if src.is_empty() {
                return Vec::new();
            }
            perm.iter().flat_map(|&i| src[i * d..(i + 1) * d].iter().copied()).collect()
        };
        Self { x: pick(&self.x), v: pick(&self.v), ..self.clone() }
    }
}

/// How the mean-field sum `(1/N) sum_j K(X_i - X_j)` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ForceMethod {
    /// Pairwise sums with minimum-image separations.
    Direct,
    /// Cloud-in-cell deposit, spectral convolution, cloud-in-cell readout.
    Binned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub alpha: f64,
    pub dt: f64,
    pub force: ForceMethod,
    /// Substeps used to sample `int L ds` over one step when `alpha < 2`.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Optional cap on the size of each noise increment (plots only).
    #[serde(default)]
    pub clip: Option<f64>,
}

fn default_substeps() -> usize {
    8
}

impl StepConfig {
    pub fn new(alpha: f64, dt: f64, force: ForceMethod) -> Self {
        Self { alpha, dt, force, substeps: default_substeps(), clip: None }
    }
}

/// A mollified kernel prepared for particle forces on one position lattice.
#[derive(Clone, Debug)]
pub struct Interaction {
    spec: KernelSpec,
    grid: PhaseGrid,
    kind: InteractionKind,
}

#[derive(Clone, Debug)]
enum InteractionKind {
    Zero,
    /// Sign times strength; the pointwise capped gradient.
    Capped { gamma: f64, eps: f64, scale: f64 },
    /// Odd part of the kernel sampled on a finer lattice.
    Tabulated(Table),
}

const REFINE: usize = 4;

impl Interaction {
    /// `grid` is the position lattice used for binning; direct sums tabulate
    /// the kernel on a lattice four times finer.
    pub fn new(spec: &KernelSpec, grid: &PhaseGrid) -> Result<Self> {
        let base = if grid.kinetic { PhaseGrid::position(grid.d, grid.n_x, grid.box_x)? } else { grid.clone() };
        spec.validate(base.d)?;
        if spec.lift == Lift::DiracX {
            return Err(Error::InvalidParameter("particle systems interact through positions only".into()));
        }
        let kind = if spec.is_zero() {
            InteractionKind::Zero
        } else {
            match (&spec.family, spec.cutoff) {
                (_, Cutoff::None) if !matches!(spec.family, KernelFamily::GridCustom { .. }) => {
                    return Err(Error::InvalidParameter("particle forces need a cutoff kernel".into()))
                }
                (KernelFamily::RieszGrad { gamma }, Cutoff::Capped { eps }) => {
                    InteractionKind::Capped { gamma: *gamma, eps, scale: spec.sign * spec.strength }
                }
                (KernelFamily::GridCustom { .. }, _) => {
                    InteractionKind::Tabulated(Table::new(&base, &odd_parts(&kernel_field(spec, &base)?)))
                }
                _ => {
                    let fine = base.refined(REFINE);
                    InteractionKind::Tabulated(Table::new(&fine, &odd_parts(&kernel_field(spec, &fine)?)))
                }
            }
        };
        Ok(Self { spec: spec.clone(), grid: base, kind })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, InteractionKind::Zero)
    }

    /// `K_eps(z)` for a minimum-image separation `z`.
    pub fn kernel(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        self.kernel_into(z, &mut out);
        out
    }

    fn kernel_into(&self, z: &[f64], out: &mut [f64]) {
        match &self.kind {
            InteractionKind::Zero => out.fill(0.0),
            InteractionKind::Capped { gamma, eps, scale } => {
                let d = z.len() as f64;
                let r2: f64 = z.iter().map(|c| c * c).sum();
                if r2 < eps * eps {
                    out.fill(0.0);
                    return;
                }
                let c = if (gamma - d).abs() < 1e-14 { 1.0 } else { gamma - d } * r2.powf(0.5 * (gamma - d) - 1.0);
                for (o, v) in out.iter_mut().zip(z) {
                    *o = scale * c * v;
                }
            }
            InteractionKind::Tabulated(table) => table.eval(z, Stencil::CatmullRom, out),
        }
    }

    /// Mean-field drift at every particle position.
    pub fn forces(&self, ens: &ParticleEnsemble, method: ForceMethod) -> Result<Vec<f64>> {
        if ens.d != self.grid.d || (ens.box_x - self.grid.box_x).abs() > 1e-12 * ens.box_x {
            return Err(Error::GridMismatch("ensemble box differs from the interaction lattice".into()));
        }
        let d = ens.d;
        let n = ens.len();
        let mut out = vec![0.0; n * d];
        if self.is_zero() || n == 0 {
            return Ok(out);
        }
        match method {
            ForceMethod::Direct => {
                let l = ens.box_x;
                let inv = 1.0 / n as f64;
                out.par_chunks_mut(d).enumerate().for_each(|(i, f)| {
                    let xi = &ens.x[i * d..(i + 1) * d];
                    let mut z = [0.0; 3];
                    let mut k = [0.0; 3];
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let xj = &ens.x[j * d..(j + 1) * d];
                        for a in 0..d {
                            z[a] = wrap(xi[a] - xj[a], l);
                        }
                        self.kernel_into(&z[..d], &mut k[..d]);
                        for a in 0..d {
                            f[a] += k[a];
                        }
                    }
                    f.iter_mut().for_each(|v| *v *= inv);
                });
            }
            ForceMethod::Binned => {
                let g = &self.grid;
                let rho = deposit(g, &ens.x, d);
                let tables = multiplier_table(&self.spec, g)?;
                let sinc = cic_transfer(g);
                let fields: Vec<Vec<f64>> = tables
                    .iter()
                    .map(|t| {
                        let t: Vec<Complex64> = t.iter().zip(&sinc).map(|(m, s)| m / (s * s)).collect();
                        rho.apply_table(&t).into_values()
                    })
                    .collect();
                let table = Table::new(g, &fields);
                out.par_chunks_mut(d).enumerate().for_each(|(i, f)| {
                    table.eval(&ens.x[i * d..(i + 1) * d], Stencil::Linear, f);
                });
            }
        }
        Ok(out)
    }
}

fn odd_parts(fields: &[PhaseField]) -> Vec<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            let g = f.grid();
            let shape = g.shape();
            let vals = f.values();
            let mut out = vec![0.0; vals.len()];
            for_each_multi(&shape, |flat, idx| {
                let mut mirror = 0;
                for (a, &i) in idx.iter().enumerate() {
                    mirror = mirror * shape[a] + (shape[a] - i) % shape[a];
                }
                out[flat] = 0.5 * (vals[flat] - vals[mirror]);
            });
            out
        })
        .collect()
}

/// `prod_a sinc^2(xi_a Delta_a / 2)`, the cloud-in-cell transfer function.
fn cic_transfer(g: &PhaseGrid) -> Vec<f64> {
    let mut out = vec![1.0; g.len()];
    let h: Vec<f64> = g.axes().iter().map(|&a| g.spacing(a)).collect();
    g.for_each_frequency(|i, xi| {
        out[i] = xi
            .iter()
            .zip(&h)
            .map(|(k, h)| {
                let s = 0.5 * k * h;
                if s == 0.0 {
                    1.0
                } else {
                    (s.sin() / s).powi(2)
                }
            })
            .product();
    });
    out
}

#[derive(Clone, Copy)]
enum Stencil {
    Linear,
    CatmullRom,
}

fn stencil(s: Stencil, f: f64) -> ([f64; 4], i64) {
    match s {
        Stencil::Linear => ([1.0 - f, f, 0.0, 0.0], 0),
        Stencil::CatmullRom => {
            let f2 = f * f;
            let f3 = f2 * f;
            (
                [
                    0.5 * (-f3 + 2.0 * f2 - f),
                    0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
                    0.5 * (-3.0 * f3 + 4.0 * f2 + f),
                    0.5 * (f3 - f2),
                ],
                -1,
            )
        }
    }
}

/// Vector-valued samples on a periodic lattice, components interleaved.
#[derive(Clone, Debug)]
struct Table {
    dim: usize,
    comps: usize,
    n: [usize; 3],
    h: [f64; 3],
    half: [f64; 3],
    values: Vec<f64>,
}

impl Table {
    fn new(g: &PhaseGrid, fields: &[Vec<f64>]) -> Self {
        let axes = g.axes();
        let dim = axes.len();
        let (mut n, mut h, mut half) = ([1; 3], [1.0; 3], [0.0; 3]);
        for (a, &ax) in axes.iter().enumerate() {
            n[a] = g.n(ax);
            h[a] = g.spacing(ax);
            half[a] = 0.5 * g.box_len(ax);
        }
        let comps = fields.len();
        let mut values = vec![0.0; g.len() * comps];
        for (c, f) in fields.iter().enumerate() {
            for (i, v) in f.iter().enumerate() {
                values[i * comps + c] = *v;
            }
        }
        Self { dim, comps, n, h, half, values }
    }

    /// Periodic tensor-product interpolation at `z`.
    fn eval(&self, z: &[f64], s: Stencil, out: &mut [f64]) {
        let mut base = [0i64; 3];
        let mut w = [[0.0; 4]; 3];
        for a in 0..self.dim {
            let u = (z[a] + self.half[a]) / self.h[a];
            let i0 = u.floor();
            let (wa, off) = stencil(s, u - i0);
            w[a] = wa;
            base[a] = i0 as i64 + off;
        }
        let taps: usize = match s {
            Stencil::Linear => 2,
            Stencil::CatmullRom => 4,
        };
        out.fill(0.0);
        for c in 0..taps.pow(self.dim as u32) {
            let mut rem = c;
            let mut flat = 0usize;
            let mut weight = 1.0;
            for a in 0..self.dim {
                let t = rem % taps;
                rem /= taps;
                let n = self.n[a] as i64;
                flat = flat * self.n[a] + (base[a] + t as i64).rem_euclid(n) as usize;
                weight *= w[a][t];
            }
            let v = &self.values[flat * self.comps..(flat + 1) * self.comps];
            for (o, x) in out.iter_mut().zip(v) {
                *o += weight * x;
            }
        }
    }
}

/// Cloud-in-cell density of row-major points (mass one in total).
fn deposit(g: &PhaseGrid, points: &[f64], dim: usize) -> PhaseField {
    let shape = g.shape();
    let axes = g.axes();
    let n = points.len() / dim;
    let mut rho = vec![0.0; g.len()];
    let w0 = 1.0 / (n as f64 * g.cell_volume());
    let corners = 1usize << dim;
    for p in points.chunks_exact(dim) {
        let mut i0 = [0usize; 4];
        let mut fr = [0.0; 4];
        for a in 0..dim {
            let ax = axes[a];
            let l = g.box_len(ax);
            let u = (wrap(p[a], l) + 0.5 * l) / g.spacing(ax);
            let fl = u.floor();
            i0[a] = (fl as usize) % shape[a];
            fr[a] = u - fl;
        }
        for c in 0..corners {
            let mut flat = 0;
            let mut weight = w0;
            for a in 0..dim {
                let up = (c >> a) & 1;
                flat = flat * shape[a] + (i0[a] + up) % shape[a];
                weight *= if up == 1 { fr[a] } else { 1.0 - fr[a] };
            }
            rho[flat] += weight;
        }
    }
    PhaseField::new(g.clone(), rho).expect("finite deposit")
}

/// One Euler-Maruyama step. Second-order systems use the exact free
/// transport of the kinetic pair plus a constant-force kick:
///
/// ```text
/// X' = X + V dt + F dt^2 / 2 + int_0^dt L ds
/// V' = V + F dt + L_dt
/// ```
pub fn step_ensemble(ens: &ParticleEnsemble, inter: &Interaction, cfg: &StepConfig) -> Result<ParticleEnsemble> {
    check_alpha(cfg.alpha)?;
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt = {} (must be positive)", cfg.dt)));
    }
    if cfg.substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be positive".into()));
    }
    let d = ens.d;
    let dt = cfg.dt;
    let force = inter.forces(ens, cfg.force)?;
    let mut next = ens.clone();
    next.step += 1;
    let stream = 16 + ens.step;
    let clip = |x: &mut [f64]| {
        if let Some(c) = cfg.clip {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > c {
                x.iter_mut().for_each(|v| *v *= c / r);
            }
        }
    };
    let l = ens.box_x;
    match ens.order {
        Order::First => {
            let scale = dt.powf(1.0 / cfg.alpha);
            next.x.par_chunks_mut(CHUNK * d).enumerate().for_each(|(c, block)| {
                let mut rng = chunk_rng(ens.seed, stream, c);
                let mut inc = vec![0.0; d];
                for (k, x) in block.chunks_mut(d).enumerate() {
                    let i = c * CHUNK + k;
                    stable_unit(cfg.alpha, &mut inc, &mut rng);
                    clip(&mut inc);
                    for a in 0..d {
                        x[a] = wrap(x[a] + force[i * d + a] * dt + scale * inc[a], l);
                    }
                }
            });
        }
        Order::Second => {
            next.x.par_chunks_mut(CHUNK * d).zip(next.v.par_chunks_mut(CHUNK * d)).enumerate().for_each(
                |(c, (xb, vb))| {
                    let mut rng = chunk_rng(ens.seed, stream, c);
                    let mut a_int = vec![0.0; d];
                    let mut l_end = vec![0.0; d];
                    for (k, (x, v)) in xb.chunks_mut(d).zip(vb.chunks_mut(d)).enumerate() {
                        let i = c * CHUNK + k;
                        kinetic_pair_into(cfg.alpha, dt, cfg.substeps, &mut a_int, &mut l_end, &mut rng);
                        clip(&mut l_end);
                        for a in 0..d {
                            let f = force[i * d + a];
                            x[a] = wrap(x[a] + v[a] * dt + 0.5 * f * dt * dt + a_int[a], l);
                            v[a] += f * dt + l_end[a];
                        }
                    }
                },
            );
        }
    }
    Ok(next)
}

/// Advances `steps` steps.
pub fn run_ensemble(
    ens: &ParticleEnsemble,
    inter: &Interaction,
    cfg: &StepConfig,
    steps: usize,
) -> Result<ParticleEnsemble> {
    let mut e = ens.clone();
    for _ in 0..steps {
        e = step_ensemble(&e, inter, cfg)?;
    }
    Ok(e)
}

fn check_kde_grid(ens: &ParticleEnsemble, grid: &PhaseGrid) -> Result<()> {
    let ok = grid.d == ens.d
        && grid.kinetic == (ens.order == Order::Second)
        && (grid.box_x - ens.box_x).abs() <= 1e-12 * ens.box_x;
    if !ok {
        return Err(Error::GridMismatch("lattice does not match the ensemble".into()));
    }
    Ok(())
}

/// Gaussian kernel density estimate with per-axis bandwidths; velocities
/// are wrapped into the velocity box. Total mass is one.
pub fn empirical_density_with(ens: &ParticleEnsemble, grid: &PhaseGrid, bandwidths: &[f64]) -> Result<PhaseField> {
    check_kde_grid(ens, grid)?;
    let nd = grid.ndim();
    if bandwidths.len() != nd {
        return Err(Error::InvalidParameter(format!("{} bandwidths for {nd} axes", bandwidths.len())));
    }
    for (a, &h) in grid.axes().iter().zip(bandwidths) {
        if !(h >= grid.spacing(*a)) {
            return Err(Error::InvalidParameter(format!("bandwidth {h} below the lattice spacing on axis {a}")));
        }
    }
    if ens.is_empty() {
        return Err(Error::InvalidParameter("empty ensemble".into()));
    }
    let points: Vec<f64> = (0..ens.len()).flat_map(|i| ens.state(i)).collect();
    let rho = deposit(grid, &points, nd);
    let var: Vec<f64> =
        grid.axes().iter().zip(bandwidths).map(|(&a, h)| h * h - grid.spacing(a).powi(2) / 6.0).collect();
    Ok(rho.apply_multiplier(|xi| {
        let q: f64 = xi.iter().zip(&var).map(|(k, s)| k * k * s).sum();
        Complex64::new((-0.5 * q).exp(), 0.0)
    }))
}

/// Scott's rule `sigma_a N^{-1/(D+4)}` per axis, floored at the lattice spacing.
pub fn scott_bandwidths(ens: &ParticleEnsemble, grid: &PhaseGrid) -> Vec<f64> {
    let n = ens.len() as f64;
    let nd = grid.ndim();
    let factor = n.powf(-1.0 / (nd as f64 + 4.0));
    (0..nd)
        .map(|a| {
            let vals: Vec<f64> = (0..ens.len()).map(|i| ens.state(i)[a]).collect();
            let m = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            (sd * factor).max(grid.spacing(grid.axes()[a]))
        })
        .collect()
}

/// Isotropic-bandwidth KDE.
pub fn empirical_density(ens: &ParticleEnsemble, grid: &PhaseGrid, bandwidth: f64) -> Result<PhaseField> {
    empirical_density_with(ens, grid, &vec![bandwidth; grid.ndim()])
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChaosDistance {
    /// Lattice `L^1` distance between the KDE and the reference density.
    pub l1: f64,
    /// Wasserstein-1 distance of the `x` marginals (`d = 1` only).
    pub w1: Option<f64>,
}

/// Distance between an ensemble and a reference density, with Scott bandwidths.
pub fn chaos_distance(ens: &ParticleEnsemble, field: &PhaseField) -> Result<ChaosDistance> {
    let h = scott_bandwidths(ens, field.grid());
    chaos_distance_with(ens, field, &h)
}

pub fn chaos_distance_with(ens: &ParticleEnsemble, field: &PhaseField, bandwidths: &[f64]) -> Result<ChaosDistance> {
    let g = field.grid();
    let kde = empirical_density_with(ens, g, bandwidths)?;
    let l1 = kde.sub(field)?.lp_norm(1.0);
    let w1 = if g.d == 1 {
        let nv = g.v_block_len();
        let dv = if g.kinetic { g.spacing(1) } else { 1.0 };
        let marginal: Vec<f64> = field.values().chunks(nv).map(|c| c.iter().sum::<f64>() * dv).collect();
        let xs: Vec<f64> = (0..ens.len()).map(|i| ens.x[i]).collect();
        Some(wasserstein_marginal(&xs, &marginal, g.box_x)?)
    } else {
        None
    };
    Ok(ChaosDistance { l1, w1 })
}

/// `int |F_particles - F_density| dx` on `[-L/2, L/2)`, where the density is
/// given by node values spread uniformly over the cells around the nodes.
pub fn wasserstein_marginal(points: &[f64], density: &[f64], box_len: f64) -> Result<f64> {
    let n = density.len();
    let h = box_len / n as f64;
    let total: f64 = density.iter().sum::<f64>() * h;
    if !(total > 0.0) || points.is_empty() {
        return Err(Error::InvalidParameter("Wasserstein distance needs mass on both sides".into()));
    }
    // breakpoints -L/2, -L/2 + h/2, ..., L/2 - h/2, L/2
    let mut knots = vec![-0.5 * box_len];
    let mut cdf = vec![0.0];
    let mut acc = 0.0;
    let mut push = |x: f64, m: f64, knots: &mut Vec<f64>, cdf: &mut Vec<f64>| {
        acc += m / total;
        knots.push(x);
        cdf.push(acc);
    };
    push(-0.5 * box_len + 0.5 * h, 0.5 * density[0] * h, &mut knots, &mut cdf);
    for (i, &m) in density.iter().enumerate().skip(1) {
        push(-0.5 * box_len + (i as f64 + 0.5) * h, m * h, &mut knots, &mut cdf);
    }
    push(0.5 * box_len, 0.5 * density[0] * h, &mut knots, &mut cdf);
    let mut xs: Vec<f64> = points.iter().map(|&x| wrap(x, box_len)).collect();
    xs.sort_by(f64::total_cmp);
    let np = xs.len() as f64;
    let mut w = 0.0;
    let mut k = 0;
    for s in 0..knots.len() - 1 {
        let (a, b) = (knots[s], knots[s + 1]);
        let (fa, fb) = (cdf[s], cdf[s + 1]);
        let lin = |x: f64| fa + (fb - fa) * (x - a) / (b - a);
        let mut lo = a;
        while k < xs.len() && xs[k] < a {
            k += 1;
        }
        loop {
            let hi = if k < xs.len() && xs[k] < b { xs[k] } else { b };
            let e = k as f64 / np;
            w += abs_linear_integral(lin(lo) - e, lin(hi) - e, hi - lo);
            if hi >= b {
                break;
            }
            lo = hi;
            k += 1;
        }
    }
    Ok(w * box_len.signum())
}

/// `int_0^len |y|` for `y` linear from `y0` to `y1`.
fn abs_linear_integral(y0: f64, y1: f64, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    if y0 * y1 >= 0.0 {
        0.5 * (y0.abs() + y1.abs()) * len
    } else {
        0.5 * (y0 * y0 + y1 * y1) / (y0 - y1).abs() * len
    }
}

const DUMP_MAGIC: &[u8; 4] = b"KNPD";
const DUMP_VERSION: u32 = 1;
pub const DUMP_HEADER_LEN: usize = 64;

/// Header of 64 bytes, then positions and velocities as little-endian `f64`.
pub fn write_particles(ens: &ParticleEnsemble, mut w: impl Write) -> Result<()> {
    let mut header = [0u8; DUMP_HEADER_LEN];
    header[0..4].copy_from_slice(DUMP_MAGIC);
    header[4..8].copy_from_slice(&DUMP_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&(ens.d as u32).to_le_bytes());
    header[12..16].copy_from_slice(&((ens.order == Order::Second) as u32).to_le_bytes());
    header[16..24].copy_from_slice(&(ens.len() as u64).to_le_bytes());
    header[24..32].copy_from_slice(&ens.box_x.to_le_bytes());
    header[32..40].copy_from_slice(&ens.seed.to_le_bytes());
    header[40..48].copy_from_slice(&ens.step.to_le_bytes());
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(8 * (ens.x.len() + ens.v.len()));
    for z in ens.x.iter().chain(&ens.v) {
        body.extend_from_slice(&z.to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn read_particles(mut r: impl Read) -> Result<ParticleEnsemble> {
    let mut header = [0u8; DUMP_HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[0..4] != DUMP_MAGIC {
        return Err(Error::Format("bad particle dump magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    if u32_at(4) != DUMP_VERSION {
        return Err(Error::Format(format!("unsupported particle dump version {}", u32_at(4))));
    }
    let d = u32_at(8) as usize;
    let order = if u32_at(12) != 0 { Order::Second } else { Order::First };
    let n = u64_at(16) as usize;
    let box_x = f64::from_le_bytes(header[24..32].try_into().unwrap());
    let count = n * d * if order == Order::Second { 2 } else { 1 };
    let mut body = vec![0u8; 8 * count];
    r.read_exact(&mut body)?;
    let mut vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let v = vals.split_off(n * d);
    let mut ens = ParticleEnsemble::new(order, d, box_x, vals, v, u64_at(32))?;
    ens.step = u64_at(40);
    Ok(ens)
}
