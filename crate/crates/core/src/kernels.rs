//! Singular interaction kernels, their cutoffs and drift convolution.
//!
//! Kernels are stored as Fourier multipliers on the torus with the zero mode
//! gauged to 0. With the lattice convention of [`crate::grid`], the
//! multiplier of a kernel sampled at the nodes is `dx^d (-1)^k DFT[K]_k`,
//! and `K * u` has lattice spectrum `m(xi) u^(xi)`.
//!
//! | family | kernel | multiplier |
//! |---|---|---|
//! | `riesz_grad(gamma)` | `nabla |x|^{gamma-d}` | `i xi C |xi|^{-gamma}` |
//! | `biot_savart_2d` | `(-x_2, x_1) / (2 pi |x|^2)` | `(i xi_2, -i xi_1) / |xi|^2` |
//! | `sqg_riesz_2d` | `(-R_2, R_1)` | `(i xi_2, -i xi_1) / |xi|` |
//! | `porous_medium(s)` | `nabla (-Delta)^{-s}` | `i xi |xi|^{-2s}` |
//!
//! with `C = pi^{d/2} 2^gamma Gamma(gamma/2) / Gamma((d-gamma)/2)`. At
//! `gamma = d` the potential is `log |x|` and `C = -pi` (d = 1) or `-2 pi`
//! (d = 2).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use crate::besov::DyadicPartition;
use crate::error::{Error, Result};
use crate::fft;
use crate::fit::{fit_line, fit_loglog, LinearFit};
use crate::grid::{Integrability, PhaseField, PhaseGrid};

/// Kernel families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    Zero,
    RieszGrad {
        gamma: f64,
    },
    BiotSavart2d,
    SqgRiesz2d,
    PorousMedium {
        s: f64,
    },
    /// Samples of each vector component at the nodes of a position lattice.
    GridCustom {
        n: usize,
        box_len: f64,
        components: Vec<Vec<f64>>,
    },
}

/// Regularisation of the singularity at the origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Cutoff {
    #[default]
    None,
    /// `nabla (|x| v eps)^{gamma-d}`, sampled on the lattice.
    Capped { eps: f64 },
    /// Multiplier damped by `exp(-eps^2 |xi|^2 / 2)`.
    Gaussian { eps: f64 },
}

/// How a position kernel acts on a phase-space density.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lift {
    /// `b(x, v) = K(x)`: convolves the x-marginal, the drift is v-independent.
    #[default]
    Marginal,
    /// `b(x, v) = delta(x) K(v)`: convolves in v separately for every x.
    DiracX,
}

fn one() -> f64 {
    1.0
}

/// Declarative description of an interaction kernel `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub family: KernelFamily,
    #[serde(default = "one")]
    pub sign: f64,
    #[serde(default = "one")]
    pub strength: f64,
    #[serde(default)]
    pub cutoff: Cutoff,
    #[serde(default)]
    pub lift: Lift,
}

impl KernelSpec {
    pub fn new(family: KernelFamily) -> Self {
        Self { family, sign: 1.0, strength: 1.0, cutoff: Cutoff::None, lift: Lift::Marginal }
    }

    pub fn zero() -> Self {
        Self::new(KernelFamily::Zero)
    }

    pub fn riesz_grad(gamma: f64) -> Self {
        Self::new(KernelFamily::RieszGrad { gamma })
    }

    pub fn biot_savart_2d() -> Self {
        Self::new(KernelFamily::BiotSavart2d)
    }

    pub fn sqg_riesz_2d() -> Self {
        Self::new(KernelFamily::SqgRiesz2d)
    }

    pub fn porous_medium(s: f64) -> Self {
        Self::new(KernelFamily::PorousMedium { s })
    }

    pub fn with_sign(mut self, sign: f64) -> Self {
        self.sign = sign;
        self
    }

    pub fn with_strength(mut self, strength: f64) -> Self {
        self.strength = strength;
        self
    }

    pub fn with_cutoff(mut self, cutoff: Cutoff) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn with_lift(mut self, lift: Lift) -> Self {
        self.lift = lift;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.family == KernelFamily::Zero || self.strength == 0.0
    }

    pub fn is_divergence_free(&self) -> bool {
        matches!(self.family, KernelFamily::BiotSavart2d | KernelFamily::SqgRiesz2d | KernelFamily::Zero)
    }

    /// Checks parameters against the kernel dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.sign.abs() != 1.0 {
            return bad(format!("sign = {} (must be +1 or -1)", self.sign));
        }
        if !self.strength.is_finite() {
            return bad("kernel strength must be finite".into());
        }
        match &self.family {
            KernelFamily::RieszGrad { gamma } => {
                if !(*gamma > 0.0 && *gamma <= d as f64 + 1.0) {
                    return bad(format!("riesz_grad gamma = {gamma} (must lie in (0, {}])", d + 1));
                }
            }
            KernelFamily::BiotSavart2d | KernelFamily::SqgRiesz2d if d != 2 => {
                return bad("Biot-Savart and SQG kernels are two-dimensional".into());
            }
            KernelFamily::PorousMedium { s } if !(*s > 0.0 && *s <= 1.0) => {
                return bad(format!("porous_medium s = {s} (must lie in (0, 1])"));
            }
            KernelFamily::GridCustom { n, box_len, components } => {
                PhaseGrid::position(d, *n, *box_len)?;
                if components.len() != d || components.iter().any(|c| c.len() != n.pow(d as u32)) {
                    return bad("grid_custom needs d components of n^d samples".into());
                }
            }
            _ => {}
        }
        match self.cutoff {
            Cutoff::Capped { eps } | Cutoff::Gaussian { eps } if !(eps > 0.0 && eps.is_finite()) => {
                bad(format!("cutoff eps = {eps} (must be positive)"))
            }
            Cutoff::Capped { .. } if !matches!(self.family, KernelFamily::RieszGrad { .. }) => {
                bad("capped cutoffs are defined for riesz_grad only".into())
            }
            _ => Ok(()),
        }
    }

    /// Multiplier at one frequency, including sign, strength and a Gaussian
    /// cutoff. Capped and sampled kernels need a lattice; see [`DriftOperator`].
    pub fn multiplier(&self, xi: &[f64]) -> Result<Vec<Complex64>> {
        let d = xi.len();
        self.validate(d)?;
        if matches!(self.cutoff, Cutoff::Capped { .. }) || matches!(self.family, KernelFamily::GridCustom { .. }) {
            return Err(Error::InvalidParameter("sampled kernels have no pointwise multiplier".into()));
        }
        let mut m = raw_multiplier(&self.family, xi);
        let scale = self.sign * self.strength * self.damping(xi);
        for c in &mut m {
            *c *= scale;
        }
        Ok(m)
    }

    fn damping(&self, xi: &[f64]) -> f64 {
        match self.cutoff {
            Cutoff::Gaussian { eps } => (-0.5 * eps * eps * xi.iter().map(|k| k * k).sum::<f64>()).exp(),
            _ => 1.0,
        }
    }
}

/// Fourier constant of `|x|^{gamma-d}` (log kernel at `gamma = d`).
pub fn riesz_constant(d: usize, gamma: f64) -> f64 {
    let df = d as f64;
    if (gamma - df).abs() < 1e-14 {
        return -std::f64::consts::PI * df;
    }
    std::f64::consts::PI.powf(0.5 * df) * 2f64.powf(gamma) * gamma_fn(0.5 * gamma) / gamma_fn(0.5 * (df - gamma))
}

fn raw_multiplier(family: &KernelFamily, xi: &[f64]) -> Vec<Complex64> {
    let d = xi.len();
    let r2: f64 = xi.iter().map(|k| k * k).sum();
    if r2 == 0.0 {
        return vec![Complex64::default(); d];
    }
    let r = r2.sqrt();
    let i = Complex64::i();
    match family {
        KernelFamily::Zero | KernelFamily::GridCustom { .. } => vec![Complex64::default(); d],
        KernelFamily::RieszGrad { gamma } => {
            let c = riesz_constant(d, *gamma) * r.powf(-gamma);
            xi.iter().map(|k| i * k * c).collect()
        }
        KernelFamily::BiotSavart2d => vec![i * xi[1] / r2, -i * xi[0] / r2],
        KernelFamily::SqgRiesz2d => vec![i * xi[1] / r, -i * xi[0] / r],
        KernelFamily::PorousMedium { s } => {
            let c = r.powf(-2.0 * s);
            xi.iter().map(|k| i * k * c).collect()
        }
    }
}

/// `nabla (|x| v eps)^{gamma-d}` at a point.
pub fn capped_gradient(x: &[f64], gamma: f64, eps: f64) -> Vec<f64> {
    let d = x.len() as f64;
    let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
    if r < eps {
        return vec![0.0; x.len()];
    }
    let c = if (gamma - d).abs() < 1e-14 { 1.0 } else { gamma - d } * r.powf(gamma - d - 2.0);
    x.iter().map(|v| c * v).collect()
}

/// Capped kernel sampled at the nodes of `grid` (no image sums); components
/// on the `-L/2` face are zeroed so the samples stay odd.
pub fn cutoff_kernel(gamma: f64, eps: f64, grid: &PhaseGrid) -> Result<KernelSpec> {
    if grid.kinetic {
        return Err(Error::InvalidGrid("cutoff kernels are sampled on position grids".into()));
    }
    let spec = KernelSpec::riesz_grad(gamma).with_cutoff(Cutoff::Capped { eps });
    spec.validate(grid.d)?;
    if eps < 2.0 * grid.spacing(0) {
        return Err(Error::InvalidParameter(format!(
            "eps = {eps} is below two lattice spacings ({})",
            2.0 * grid.spacing(0)
        )));
    }
    let d = grid.d;
    let half = 0.5 * grid.box_x;
    let mut components = vec![vec![0.0; grid.len()]; d];
    grid.for_each_node(|i, x| {
        let k = capped_gradient(x, gamma, eps);
        for a in 0..d {
            components[a][i] = if (x[a] + half).abs() < 1e-12 * half { 0.0 } else { k[a] };
        }
    });
    Ok(KernelSpec::new(KernelFamily::GridCustom { n: grid.n_x, box_len: grid.box_x, components }))
}

/// Multiplier table of `spec` on a position lattice, one vector per component.
pub fn multiplier_table(spec: &KernelSpec, grid: &PhaseGrid) -> Result<Vec<Vec<Complex64>>> {
    if grid.kinetic {
        return Err(Error::InvalidGrid("multiplier tables live on position grids".into()));
    }
    let d = grid.d;
    spec.validate(d)?;
    let scale = spec.sign * spec.strength;
    let sampled = match (&spec.family, spec.cutoff) {
        (KernelFamily::RieszGrad { gamma }, Cutoff::Capped { eps }) => Some(cutoff_kernel(*gamma, eps, grid)?),
        (KernelFamily::GridCustom { .. }, _) => Some(spec.clone()),
        _ => None,
    };
    if let Some(KernelSpec { family: KernelFamily::GridCustom { n, box_len, components }, .. }) = sampled {
        if n != grid.n_x || (box_len - grid.box_x).abs() > 1e-12 * box_len {
            return Err(Error::GridMismatch("sampled kernel lattice differs from the field lattice".into()));
        }
        let vol = grid.cell_volume();
        return Ok(components
            .iter()
            .map(|c| {
                let mut buf: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                fft::fft_all(&mut buf, &grid.shape(), false);
                let mut out = buf;
                crate::grid::for_each_multi(&grid.shape(), |flat, idx| {
                    let parity: usize = idx.iter().sum();
                    let sgn = if parity % 2 == 0 { 1.0 } else { -1.0 };
                    let damp = {
                        let xi: Vec<f64> = idx
                            .iter()
                            .map(|&i| {
                                let k = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
                                2.0 * std::f64::consts::PI * k / box_len
                            })
                            .collect();
                        spec.damping(&xi)
                    };
                    out[flat] *= sgn * vol * scale * damp;
                });
                out
            })
            .collect());
    }
    let mut table = vec![vec![Complex64::default(); grid.len()]; d];
    grid.for_each_frequency(|i, xi| {
        let m = raw_multiplier(&spec.family, xi);
        let s = scale * spec.damping(xi);
        for a in 0..d {
            table[a][i] = m[a] * s;
        }
    });
    Ok(table)
}

/// Precomputed drift convolution `H = b * u` on one lattice.
#[derive(Clone, Debug)]
pub struct DriftOperator {
    grid: PhaseGrid,
    base: PhaseGrid,
    lift: Lift,
    tables: Vec<Vec<Complex64>>,
    zero: bool,
}

impl DriftOperator {
    pub fn new(spec: &KernelSpec, grid: &PhaseGrid) -> Result<Self> {
        let base = if !grid.kinetic {
            grid.clone()
        } else {
            match spec.lift {
                Lift::Marginal => PhaseGrid::position(grid.d, grid.n_x, grid.box_x)?,
                Lift::DiracX => PhaseGrid::position(grid.d, grid.n_v, grid.box_v)?,
            }
        };
        let tables = multiplier_table(spec, &base)?;
        Ok(Self { grid: grid.clone(), base, lift: spec.lift, tables, zero: spec.is_zero() })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    /// Multiplier tables on the lattice the kernel acts on.
    pub fn tables(&self) -> &[Vec<Complex64>] {
        &self.tables
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// The drift components (velocity directions on kinetic grids).
    pub fn apply(&self, u: &PhaseField) -> Result<Vec<PhaseField>> {
        if u.grid() != &self.grid {
            return Err(Error::GridMismatch("drift operator built for another lattice".into()));
        }
        if self.zero {
            return Ok(vec![PhaseField::zeros(&self.grid); self.grid.d]);
        }
        if !self.grid.kinetic {
            return Ok(self.tables.iter().map(|t| u.apply_table(t)).collect());
        }
        match self.lift {
            Lift::DiracX => {
                let nv = self.grid.v_block_len();
                let spec = u.spectrum();
                Ok(self
                    .tables
                    .iter()
                    .map(|t| {
                        let s: Vec<Complex64> = spec.iter().enumerate().map(|(i, z)| z * t[i % nv]).collect();
                        PhaseField::from_spectrum(&self.grid, s)
                    })
                    .collect())
            }
            Lift::Marginal => {
                let rho = self.marginal(u);
                let nv = self.grid.v_block_len();
                Ok(self
                    .tables
                    .iter()
                    .map(|t| {
                        let h = rho.apply_table(t);
                        let values = (0..self.grid.len()).map(|i| h.values()[i / nv]).collect();
                        PhaseField::new(self.grid.clone(), values).expect("finite drift")
                    })
                    .collect())
            }
        }
    }

    /// `rho(x) = int u(x, v) dv` on the x lattice.
    pub fn marginal(&self, u: &PhaseField) -> PhaseField {
        marginal_x(u, &self.base)
    }
}

pub(crate) fn marginal_x(u: &PhaseField, base: &PhaseGrid) -> PhaseField {
    let g = u.grid();
    let nv = g.v_block_len();
    let dv = g.spacing(g.d).powi(g.d as i32);
    let values = u.values().chunks(nv).map(|c| c.iter().sum::<f64>() * dv).collect();
    PhaseField::new(base.clone(), values).expect("finite marginal")
}

/// `b * u` for a single field.
pub fn convolve_drift(spec: &KernelSpec, u: &PhaseField) -> Result<Vec<PhaseField>> {
    DriftOperator::new(spec, u.grid())?.apply(u)
}

/// Spectral divergence of a vector field over the velocity axes (all axes on
/// position grids).
pub fn divergence(components: &[PhaseField]) -> Result<PhaseField> {
    let g = components[0].grid().clone();
    let axes = if g.kinetic { g.v_axes() } else { g.x_axes() };
    let mut acc = PhaseField::zeros(&g);
    for (c, &a) in components.iter().zip(&axes) {
        acc = acc.add(&c.partial(a, 1))?;
    }
    Ok(acc)
}

/// The kernel as a sampled vector field on a position lattice.
pub fn kernel_field(spec: &KernelSpec, grid: &PhaseGrid) -> Result<Vec<PhaseField>> {
    let tables = multiplier_table(spec, grid)?;
    Ok(tables.iter().map(|t| multiplier_to_field(t, grid)).collect())
}

/// Inverse of the node-sample/multiplier relation.
pub fn multiplier_to_field(table: &[Complex64], grid: &PhaseGrid) -> PhaseField {
    let vol = grid.cell_volume();
    let mut spec = table.to_vec();
    crate::grid::for_each_multi(&grid.shape(), |flat, idx| {
        let parity: usize = idx.iter().sum();
        spec[flat] *= if parity % 2 == 0 { 1.0 / vol } else { -1.0 / vol };
    });
    PhaseField::from_spectrum(grid, spec)
}

fn magnitude(components: &[PhaseField]) -> PhaseField {
    let g = components[0].grid();
    let mut sq = vec![0.0; g.len()];
    for c in components {
        for (s, v) in sq.iter_mut().zip(c.values()) {
            *s += v * v;
        }
    }
    PhaseField::new(g.clone(), sq.into_iter().map(f64::sqrt).collect()).expect("finite")
}

/// Per-level block norms of a kernel.
#[derive(Clone, Debug, Serialize)]
pub struct KernelProfile {
    pub levels: Vec<(usize, f64)>,
}

impl KernelProfile {
    /// Least-squares slope of `log2 ||R_j K||_p` against `j` over `lo..=hi`.
    pub fn slope(&self, lo: usize, hi: usize) -> Result<LinearFit> {
        let pts: Vec<&(usize, f64)> = self.levels.iter().filter(|(j, n)| *j >= lo && *j <= hi && *n > 0.0).collect();
        let x: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1.log2()).collect();
        fit_line(&x, &y)
    }
}

/// `||R_j K||_p` per level (isotropic blocks, Euclidean magnitude of vector kernels).
pub fn kernel_besov_profile(spec: &KernelSpec, grid: &PhaseGrid, p: f64) -> Result<KernelProfile> {
    profile_of(&kernel_field(spec, grid)?, p)
}

pub fn profile_of(components: &[PhaseField], p: f64) -> Result<KernelProfile> {
    let part = DyadicPartition::isotropic(components[0].grid())?;
    let levels = (0..=part.j_max())
        .map(|j| {
            let blocks = components.iter().map(|c| part.block(c, j)).collect::<Result<Vec<_>>>()?;
            Ok((j, magnitude(&blocks).lp_norm(p)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelProfile { levels })
}

/// `|x|^{gamma-d} - (|x| v eps)^{gamma-d}` averaged over each lattice cell.
pub fn cutoff_potential_difference(gamma: f64, eps: f64, grid: &PhaseGrid) -> Result<PhaseField> {
    let d = grid.d;
    let df = d as f64;
    if grid.kinetic || !(gamma > 0.0 && gamma < df) {
        return Err(Error::InvalidParameter(format!("need a position grid and gamma in (0, {d})")));
    }
    let h = grid.spacing(0);
    if eps < 2.0 * h {
        return Err(Error::InvalidParameter(format!("eps = {eps} is below two lattice spacings")));
    }
    let cap = eps.powf(gamma - df);
    let diff = |x: &[f64]| -> f64 {
        let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        if r >= eps {
            0.0
        } else {
            r.powf(gamma - df) - cap
        }
    };
    // 16 midpoint subcells per axis
    let nodes: Vec<(f64, f64)> = (0..16).map(|i| ((i as f64 + 0.5) / 16.0 - 0.5, 1.0 / 16.0)).collect();
    let origin_integral = if d == 1 {
        2.0 * (0.5 * h).powf(gamma) / gamma
    } else {
        // int over [0, a]^2 of r^{gamma-2} is a^gamma (2/gamma) int_0^{pi/4} sec^gamma
        let m = 2000;
        let th = std::f64::consts::FRAC_PI_4;
        let s: f64 = (0..m).map(|k| (th * (k as f64 + 0.5) / m as f64).cos().powf(-gamma)).sum::<f64>() * th / m as f64;
        4.0 * (0.5 * h).powf(gamma) * 2.0 / gamma * s
    };
    let reach = (eps / h).ceil() as i64 + 1;
    let mut out = PhaseField::zeros(grid).into_values();
    grid.for_each_node(|i, x| {
        let cells: Vec<i64> = x.iter().map(|c| (c / h).round() as i64).collect();
        if cells.iter().any(|c| c.abs() > reach) {
            return;
        }
        if cells.iter().all(|&c| c == 0) {
            out[i] = (origin_integral - h.powi(d as i32) * cap) / h.powi(d as i32);
            return;
        }
        let mut acc = 0.0;
        if d == 1 {
            for &(a, w) in &nodes {
                acc += w * diff(&[x[0] + a * h]);
            }
        } else {
            for &(a, wa) in &nodes {
                for &(b, wb) in &nodes {
                    acc += wa * wb * diff(&[x[0] + a * h, x[1] + b * h]);
                }
            }
        }
        out[i] = acc;
    });
    PhaseField::new(grid.clone(), out)
}

/// Result of a cutoff-rate study.
#[derive(Clone, Debug, Serialize)]
pub struct CutoffRate {
    pub eps: Vec<f64>,
    pub norms: Vec<f64>,
    pub beta: f64,
    pub expected: f64,
    /// `None` for regular kernels (`gamma = d`), where the difference vanishes.
    pub fit: Option<LinearFit>,
}

/// Fits `log ||D_eps||_{B^{beta,inf}_p}` against `log eps` for the potential
/// difference `D_eps = |x|^{gamma-d} - (|x| v eps)^{gamma-d}`, with
/// `beta = d/p - d/r`. The gradient difference `K - K_eps` has the same
/// rate in `B^{beta-1,inf}_p`.
pub fn cutoff_rate(gamma: f64, grid: &PhaseGrid, p: f64, r: f64, eps_grid: &[f64]) -> Result<CutoffRate> {
    let df = grid.d as f64;
    if eps_grid.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} eps values (need at least 3)", eps_grid.len())));
    }
    let beta = df / p - df / r;
    let expected = df / r - df + gamma;
    if (gamma - df).abs() < 1e-14 {
        return Ok(CutoffRate { eps: eps_grid.to_vec(), norms: vec![0.0; eps_grid.len()], beta, expected, fit: None });
    }
    if !(r >= 1.0 && r < df / (df - gamma)) {
        return Err(Error::InvalidParameter(format!("r = {r} (must lie in [1, d/(d-gamma)))")));
    }
    let part = DyadicPartition::isotropic(grid)?;
    let norms = eps_grid
        .iter()
        .map(|&eps| {
            let diff = cutoff_potential_difference(gamma, eps, grid)?;
            part.besov_norm(&diff, beta, f64::INFINITY, Integrability::uniform(p))
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_loglog(eps_grid, &norms)?;
    Ok(CutoffRate { eps: eps_grid.to_vec(), norms, beta, expected, fit: Some(fit) })
}
