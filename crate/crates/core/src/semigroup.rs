//! Spectral kinetic and isotropic semigroups and the Duhamel integral.
//!
//! The kinetic semigroup of `Delta_v^{alpha/2} - v . nabla_x` factorises as a
//! Fourier multiplier followed by the free-transport shear,
//!
//! ```text
//! P_t f = Gamma_t (M_t f),   M_t^(xi) = exp(-int_0^t |xi_v - s xi_x|^alpha ds).
//! ```
//!
//! If `(X_0, V_0)` has density `f`, then `P_t f` is the density of
//! `(X_0 + t V_0 + int_0^t L_s ds, V_0 + L_t)` for an alpha-stable process `L`
//! with generator `Delta^{alpha/2}`. The characteristic function of the pair
//! `(int_0^t L_s ds, L_t)` at `(xi_x, xi_v)` is therefore
//! `exp(-symbol_exponent(-xi_x, xi_v, t, alpha))`.

use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::besov::DyadicPartition;
use crate::error::{Error, Result};
use crate::fft;
use crate::fit::{fit_loglog, LinearFit};
use crate::grid::{shear_phase, Integrability, PhaseField, PhaseGrid};

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 1.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha = {alpha} (must lie in (1, 2])")))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("t = {t} (must be finite and >= 0)")))
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> &'static [(f64, f64)] {
    static CACHE: [OnceLock<Vec<(f64, f64)>>; 4] = [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match n {
        8 => 0,
        16 => 1,
        32 => 2,
        64 => 3,
        _ => panic!("unsupported Gauss-Legendre order {n}"),
    };
    CACHE[slot].get_or_init(|| {
        (0..n)
            .map(|i| {
                let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=n {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    })
}

fn gl_panel(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    gauss_legendre(n).iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// Integral over `[a, b]` of a function that is smooth except at `near`
/// (the endpoint closest to a kink), using panels graded geometrically
/// toward `near` down to the length scale `floor`.
fn graded(f: &impl Fn(f64) -> f64, a: f64, b: f64, toward_a: bool, floor: f64, n: usize) -> f64 {
    let len = b - a;
    if len <= 0.0 {
        return 0.0;
    }
    let levels = if floor >= len { 0 } else { ((len / floor.max(1e-16 * len)).log2().ceil() as usize).min(60) };
    let mut total = 0.0;
    let mut w = len;
    for _ in 0..levels {
        let half = 0.5 * w;
        total += if toward_a { gl_panel(f, a + half, a + w, n) } else { gl_panel(f, b - w, b - half, n) };
        w = half;
    }
    total + if toward_a { gl_panel(f, a, a + w, n) } else { gl_panel(f, b - w, b, n) }
}

/// `int_0^t |xi_v - s xi_x|^alpha ds` by Gauss-Legendre quadrature split at
/// the minimiser of `|xi_v - s xi_x|`, with node doubling until the relative
/// change is below `1e-10`.
pub fn symbol_quadrature(xi_x: &[f64], xi_v: &[f64], t: f64, alpha: f64) -> f64 {
    let kx2: f64 = xi_x.iter().map(|k| k * k).sum();
    let f = |s: f64| -> f64 {
        let r2: f64 = xi_x.iter().zip(xi_v).map(|(kx, kv)| (kv - s * kx).powi(2)).sum();
        r2.powf(0.5 * alpha)
    };
    if t == 0.0 {
        return 0.0;
    }
    if kx2 == 0.0 {
        return t * f(0.0);
    }
    let s_star = xi_x.iter().zip(xi_v).map(|(kx, kv)| kx * kv).sum::<f64>() / kx2;
    let m2: f64 = (xi_v.iter().map(|k| k * k).sum::<f64>() - s_star * s_star * kx2).max(0.0);
    // below this distance from s* the integrand is smooth again
    let smooth_scale = (m2 / kx2).sqrt();
    let eval = |n: usize| -> f64 {
        if s_star <= 0.0 {
            graded(&f, 0.0, t, true, (-s_star).max(smooth_scale), n)
        } else if s_star >= t {
            graded(&f, 0.0, t, false, (s_star - t).max(smooth_scale), n)
        } else {
            graded(&f, 0.0, s_star, false, smooth_scale, n) + graded(&f, s_star, t, true, smooth_scale, n)
        }
    };
    let mut prev = eval(16);
    for n in [32, 64] {
        let next = eval(n);
        if (next - prev).abs() <= 1e-10 * next.abs() {
            return next;
        }
        prev = next;
    }
    prev
}

/// `int_0^t |xi_v - s xi_x|^alpha ds`.
///
/// Uses the closed-form cubic for `alpha = 2`, the exact antiderivative of
/// `|u|^alpha` in one dimension, and [`symbol_quadrature`] otherwise.
pub fn symbol_exponent(xi_x: &[f64], xi_v: &[f64], t: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_time(t)?;
    if xi_x.len() != xi_v.len() {
        return Err(Error::InvalidParameter("xi_x and xi_v differ in dimension".into()));
    }
    Ok(symbol_unchecked(xi_x, xi_v, t, alpha))
}

fn symbol_unchecked(xi_x: &[f64], xi_v: &[f64], t: f64, alpha: f64) -> f64 {
    if alpha == 2.0 {
        let mut a = 0.0;
        let mut kx2 = 0.0;
        for (kx, kv) in xi_x.iter().zip(xi_v) {
            a += (kv - 0.5 * t * kx).powi(2);
            kx2 += kx * kx;
        }
        return t * a + t * t * t * kx2 / 12.0;
    }
    if xi_x.len() == 1 {
        let (kx, kv) = (xi_x[0], xi_v[0]);
        if kx == 0.0 {
            return t * kv.abs().powf(alpha);
        }
        let lo = kv - t * kx;
        // cancellation in the antiderivative is harmless once the interval is not tiny
        if (t * kx).abs() >= 1e-4 * kv.abs() {
            let anti = |u: f64| u.signum() * u.abs().powf(alpha + 1.0) / (alpha + 1.0);
            return (anti(kv) - anti(lo)).abs() / kx.abs();
        }
    }
    symbol_quadrature(xi_x, xi_v, t, alpha)
}

/// Which generator a semigroup belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// `Delta_v^{alpha/2} - v . nabla_x` on a phase-space grid.
    Kinetic,
    /// `Delta^{alpha/2}` on a position grid.
    Isotropic,
}

/// A precomputed semigroup operator `P_t` on one lattice.
#[derive(Clone, Debug)]
pub struct SemigroupPlan {
    grid: PhaseGrid,
    generator: Generator,
    alpha: f64,
    t: f64,
    multiplier: Vec<f64>,
}

impl SemigroupPlan {
    pub fn kinetic(grid: &PhaseGrid, t: f64, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_time(t)?;
        if !grid.kinetic {
            return Err(Error::InvalidGrid("kinetic semigroup needs a kinetic grid".into()));
        }
        let d = grid.d;
        let freqs = frequency_table(grid);
        let multiplier = freqs
            .par_chunks(2 * d)
            .map(|xi| (-symbol_unchecked(&xi[..d], &xi[d..], t, alpha)).exp())
            .collect();
        Ok(Self { grid: grid.clone(), generator: Generator::Kinetic, alpha, t, multiplier })
    }

    pub fn isotropic(grid: &PhaseGrid, t: f64, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_time(t)?;
        if grid.kinetic {
            return Err(Error::InvalidGrid("isotropic semigroup needs a position grid".into()));
        }
        let mut multiplier = vec![0.0; grid.len()];
        grid.for_each_frequency(|i, xi| {
            let r2: f64 = xi.iter().map(|k| k * k).sum();
            multiplier[i] = (-t * r2.powf(0.5 * alpha)).exp();
        });
        Ok(Self { grid: grid.clone(), generator: Generator::Isotropic, alpha, t, multiplier })
    }

    pub fn new(generator: Generator, grid: &PhaseGrid, t: f64, alpha: f64) -> Result<Self> {
        match generator {
            Generator::Kinetic => Self::kinetic(grid, t, alpha),
            Generator::Isotropic => Self::isotropic(grid, t, alpha),
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn generator(&self) -> Generator {
        self.generator
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    /// The multiplier `m_t` at every lattice frequency.
    pub fn multiplier(&self) -> &[f64] {
        &self.multiplier
    }

    pub fn apply(&self, f: &PhaseField) -> Result<PhaseField> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch("semigroup plan built for another lattice".into()));
        }
        if self.t == 0.0 {
            return Ok(f.clone());
        }
        if self.generator == Generator::Isotropic {
            return Ok(f.apply_real_table(&self.multiplier));
        }
        let mut buf: Vec<Complex64> = f.spectrum().iter().zip(&self.multiplier).map(|(z, m)| z * m).collect();
        let shape = self.grid.shape();
        fft::fft_axes(&mut buf, &shape, &self.grid.v_axes(), true);
        shear_phase(&self.grid, &mut buf, self.t);
        fft::fft_axes(&mut buf, &shape, &self.grid.x_axes(), true);
        PhaseField::new(self.grid.clone(), buf.iter().map(|z| z.re).collect())
    }
}

fn frequency_table(grid: &PhaseGrid) -> Vec<f64> {
    let nd = grid.ndim();
    let mut out = vec![0.0; grid.len() * nd];
    grid.for_each_frequency(|i, xi| out[i * nd..(i + 1) * nd].copy_from_slice(xi));
    out
}

/// `P_t f` for the kinetic generator.
pub fn kinetic_apply(f: &PhaseField, t: f64, alpha: f64) -> Result<PhaseField> {
    SemigroupPlan::kinetic(f.grid(), t, alpha)?.apply(f)
}

/// `exp(t Delta^{alpha/2}) f` on a position grid.
pub fn isotropic_apply(f: &PhaseField, t: f64, alpha: f64) -> Result<PhaseField> {
    SemigroupPlan::isotropic(f.grid(), t, alpha)?.apply(f)
}

/// `P_t` for either generator, picked from the grid type.
pub fn semigroup_apply(f: &PhaseField, t: f64, alpha: f64) -> Result<PhaseField> {
    let generator = if f.grid().kinetic { Generator::Kinetic } else { Generator::Isotropic };
    SemigroupPlan::new(generator, f.grid(), t, alpha)?.apply(f)
}

/// Composite-trapezoid approximation of `int_0^t P_{t-s} g_s ds` from samples
/// `g_{s_k}` at `s_k = k t / (K - 1)`.
pub fn duhamel(series: &[PhaseField], t: f64, alpha: f64) -> Result<PhaseField> {
    check_time(t)?;
    let Some(first) = series.first() else {
        return Err(Error::InvalidParameter("empty flux series has no lattice".into()));
    };
    let k = series.len();
    if k == 1 || t == 0.0 {
        return Ok(PhaseField::zeros(first.grid()));
    }
    let h = t / (k - 1) as f64;
    let grid = first.grid().clone();
    let generator = if grid.kinetic { Generator::Kinetic } else { Generator::Isotropic };
    let terms: Vec<PhaseField> = series
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let w = if i == 0 || i == k - 1 { 0.5 * h } else { h };
            let plan = SemigroupPlan::new(generator, &grid, (k - 1 - i) as f64 * h, alpha)?;
            Ok(plan.apply(g)?.scaled(w))
        })
        .collect::<Result<_>>()?;
    let mut acc = PhaseField::zeros(&grid);
    for term in &terms {
        acc = acc.add(term)?;
    }
    Ok(acc)
}

/// Expected short-time exponent `-(gamma + A) / alpha` with
/// `A = a . (d/p - d/p')` for the kinetic scaling `a = (1 + alpha, 1)`.
pub fn expected_smoothing_slope(alpha: f64, gamma: f64, d: usize, p: Integrability, p_prime: Integrability) -> f64 {
    let d = d as f64;
    let a = (1.0 + alpha) * (d / p.x - d / p_prime.x) + (d / p.v - d / p_prime.v);
    -(gamma + a) / alpha
}

/// Samples of a smoothing-slope experiment.
#[derive(Clone, Debug, Serialize)]
pub struct SlopeSeries {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub fit: LinearFit,
}

/// Fits `ln ||P_t f||_{B^{gamma,1}_{p';a}}` against `ln t`.
pub fn smoothing_slope(f: &PhaseField, alpha: f64, gamma: f64, p_prime: Integrability, t_grid: &[f64]) -> Result<SlopeSeries> {
    if t_grid.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} times (need at least 3)", t_grid.len())));
    }
    let part = DyadicPartition::new(f.grid(), alpha)?;
    let norms = t_grid
        .iter()
        .map(|&t| part.besov_norm(&semigroup_apply(f, t, alpha)?, gamma, 1.0, p_prime))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_loglog(t_grid, &norms)?;
    Ok(SlopeSeries { times: t_grid.to_vec(), norms, fit })
}
