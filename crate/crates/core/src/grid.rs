//! Periodic lattices, spectral transforms, mixed-integrability norms and the
//! free-transport shear.
//!
//! A [`PhaseGrid`] is either a kinetic phase-space lattice (axes `x_1..x_d`
//! followed by `v_1..v_d`) or a position-only lattice with `d` axes. Nodes
//! sit at `-L/2 + i L/n` and the wavenumbers follow the usual FFT ordering,
//! `xi_k = 2 pi k / L` with `k` in `-n/2..n/2`.
//!
//! Fields are stored row-major, so on a kinetic grid the flat index is
//! `ix * n_v^d + iv`.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// A uniform periodic lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGrid {
    pub d: usize,
    pub kinetic: bool,
    pub box_x: f64,
    pub box_v: f64,
    pub n_x: usize,
    pub n_v: usize,
}

impl PhaseGrid {
    /// Phase-space lattice on `[-box_x/2, box_x/2)^d x [-box_v/2, box_v/2)^d`.
    pub fn kinetic(d: usize, n_x: usize, box_x: f64, n_v: usize, box_v: f64) -> Result<Self> {
        let g = Self { d, kinetic: true, box_x, box_v, n_x, n_v };
        g.validate()?;
        Ok(g)
    }

    /// Position-only lattice on `[-box/2, box/2)^d`.
    pub fn position(d: usize, n: usize, box_len: f64) -> Result<Self> {
        let g = Self { d, kinetic: false, box_x: box_len, box_v: 0.0, n_x: n, n_v: 0 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.d) {
            return Err(Error::InvalidGrid(format!("d = {} (must be 1 or 2)", self.d)));
        }
        let check_n = |n: usize, name: &str| {
            if n < 8 || !n.is_power_of_two() {
                Err(Error::InvalidGrid(format!("{name} = {n} (must be a power of two >= 8)")))
            } else {
                Ok(())
            }
        };
        let check_box = |l: f64, name: &str| {
            if !(l.is_finite() && l > 0.0) {
                Err(Error::InvalidGrid(format!("{name} = {l} (must be positive)")))
            } else {
                Ok(())
            }
        };
        check_n(self.n_x, "n_x")?;
        check_box(self.box_x, "box_x")?;
        if self.kinetic {
            check_n(self.n_v, "n_v")?;
            check_box(self.box_v, "box_v")?;
        }
        Ok(())
    }

    pub fn ndim(&self) -> usize {
        if self.kinetic {
            2 * self.d
        } else {
            self.d
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        (0..self.ndim()).map(|a| self.n(a)).collect()
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_velocity_axis(&self, axis: usize) -> bool {
        self.kinetic && axis >= self.d
    }

    pub fn n(&self, axis: usize) -> usize {
        if self.is_velocity_axis(axis) {
            self.n_v
        } else {
            self.n_x
        }
    }

    pub fn box_len(&self, axis: usize) -> f64 {
        if self.is_velocity_axis(axis) {
            self.box_v
        } else {
            self.box_x
        }
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.box_len(axis) / self.n(axis) as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.ndim()).map(|a| self.spacing(a)).product()
    }

    pub fn volume(&self) -> f64 {
        (0..self.ndim()).map(|a| self.box_len(a)).product()
    }

    /// Number of lattice points in the x block (`n_x^d`).
    pub fn x_block_len(&self) -> usize {
        self.n_x.pow(self.d as u32)
    }

    /// Number of lattice points in the v block (`n_v^d`, or 1 on position grids).
    pub fn v_block_len(&self) -> usize {
        if self.kinetic {
            self.n_v.pow(self.d as u32)
        } else {
            1
        }
    }

    pub fn coords(&self, axis: usize) -> Vec<f64> {
        let (n, l) = (self.n(axis), self.box_len(axis));
        (0..n).map(|i| -0.5 * l + i as f64 * l / n as f64).collect()
    }

    /// Wavenumbers along `axis` in FFT order.
    pub fn wavenumbers(&self, axis: usize) -> Vec<f64> {
        let (n, l) = (self.n(axis), self.box_len(axis));
        (0..n)
            .map(|i| {
                let k = if i < n / 2 { i as i64 } else { i as i64 - n as i64 };
                TWO_PI * k as f64 / l
            })
            .collect()
    }

    pub fn axes(&self) -> Vec<usize> {
        (0..self.ndim()).collect()
    }

    pub fn x_axes(&self) -> Vec<usize> {
        (0..self.d).collect()
    }

    pub fn v_axes(&self) -> Vec<usize> {
        if self.kinetic {
            (self.d..2 * self.d).collect()
        } else {
            Vec::new()
        }
    }

    /// The same box with every axis refined by `factor` (a power of two).
    pub fn refined(&self, factor: usize) -> Self {
        let mut g = self.clone();
        g.n_x *= factor;
        if g.kinetic {
            g.n_v *= factor;
        }
        g
    }

    /// Whether `shear(t)` maps lattice spectra onto lattice spectra exactly,
    /// i.e. `t * box_v / box_x` is an integer.
    pub fn is_commensurate_time(&self, t: f64) -> bool {
        if !self.kinetic {
            return true;
        }
        let q = t * self.box_v / self.box_x;
        (q - q.round()).abs() < 1e-9 * q.abs().max(1.0)
    }

    /// Calls `f(flat_index, coords)` for every lattice node.
    pub fn for_each_node(&self, mut f: impl FnMut(usize, &[f64])) {
        let axes: Vec<Vec<f64>> = self.axes().iter().map(|&a| self.coords(a)).collect();
        for_each_multi(&self.shape(), |flat, idx| {
            let z: Vec<f64> = idx.iter().enumerate().map(|(a, &i)| axes[a][i]).collect();
            f(flat, &z);
        });
    }

    /// Calls `f(flat_index, wavevector)` for every lattice frequency.
    pub fn for_each_frequency(&self, mut f: impl FnMut(usize, &[f64])) {
        let axes: Vec<Vec<f64>> = self.axes().iter().map(|&a| self.wavenumbers(a)).collect();
        let mut xi = vec![0.0; self.ndim()];
        for_each_multi(&self.shape(), |flat, idx| {
            for (a, &i) in idx.iter().enumerate() {
                xi[a] = axes[a][i];
            }
            f(flat, &xi);
        });
    }

    fn check_same(&self, other: &PhaseGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

pub(crate) fn for_each_multi(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..total {
        f(flat, &idx);
        for a in (0..shape.len()).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// A pair of integrability exponents `(p_x, p_v)`; `f64::INFINITY` means sup.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Integrability {
    #[serde(with = "extended")]
    pub x: f64,
    #[serde(with = "extended")]
    pub v: f64,
}

/// Serde adapter for exponents in `[1, inf]`: infinity is written as `"inf"`.
pub mod extended {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Infinity") => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", found {t:?}"))),
        }
    }
}

impl Integrability {
    pub const fn new(x: f64, v: f64) -> Self {
        Self { x, v }
    }

    pub const fn uniform(p: f64) -> Self {
        Self { x: p, v: p }
    }

    pub const INF: Self = Self::uniform(f64::INFINITY);
    pub const ONE: Self = Self::uniform(1.0);
    pub const TWO: Self = Self::uniform(2.0);

    pub fn is_valid(&self) -> bool {
        self.x >= 1.0 && self.v >= 1.0
    }

    pub fn inv_x(&self) -> f64 {
        1.0 / self.x
    }

    pub fn inv_v(&self) -> f64 {
        1.0 / self.v
    }
}

/// Real samples on a [`PhaseGrid`] with a lazily computed spectrum.
#[derive(Clone, Debug)]
pub struct PhaseField {
    grid: PhaseGrid,
    values: Vec<f64>,
    spectrum: std::sync::OnceLock<Vec<Complex64>>,
}

impl PhaseField {
    pub fn new(grid: PhaseGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a lattice of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self { grid, values, spectrum: Default::default() })
    }

    pub fn zeros(grid: &PhaseGrid) -> Self {
        Self { values: vec![0.0; grid.len()], grid: grid.clone(), spectrum: Default::default() }
    }

    pub fn constant(grid: &PhaseGrid, c: f64) -> Self {
        Self { values: vec![c; grid.len()], grid: grid.clone(), spectrum: Default::default() }
    }

    /// Samples `f` at the lattice nodes.
    pub fn from_fn(grid: &PhaseGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut values = vec![0.0; grid.len()];
        grid.for_each_node(|i, z| values[i] = f(z));
        Self { values, grid: grid.clone(), spectrum: Default::default() }
    }

    /// Builds a field from lattice DFT coefficients (real part of the inverse).
    pub fn from_spectrum(grid: &PhaseGrid, mut spectrum: Vec<Complex64>) -> Self {
        assert_eq!(spectrum.len(), grid.len());
        fft::fft_all(&mut spectrum, &grid.shape(), true);
        let values = spectrum.iter().map(|z| z.re).collect();
        Self { values, grid: grid.clone(), spectrum: Default::default() }
    }

    pub(crate) fn from_values_unchecked(grid: &PhaseGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { values, grid: grid.clone(), spectrum: Default::default() }
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Lattice DFT of the samples (unnormalized forward convention).
    pub fn spectrum(&self) -> &[Complex64] {
        self.spectrum.get_or_init(|| {
            let mut buf: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft::fft_all(&mut buf, &self.grid.shape(), false);
            buf
        })
    }

    /// Validates the samples and populates the spectrum.
    pub fn to_spectral(self) -> Result<Self> {
        check_finite(&self.values)?;
        let _ = self.spectrum();
        Ok(self)
    }

    pub fn has_spectrum(&self) -> bool {
        self.spectrum.get().is_some()
    }

    /// Multiplies the spectrum by `m(xi)` and transforms back.
    pub fn apply_multiplier(&self, m: impl Fn(&[f64]) -> Complex64) -> PhaseField {
        let mut spec = self.spectrum().to_vec();
        self.grid.for_each_frequency(|i, xi| spec[i] *= m(xi));
        PhaseField::from_spectrum(&self.grid, spec)
    }

    /// Multiplies the spectrum by a precomputed table.
    pub fn apply_table(&self, table: &[Complex64]) -> PhaseField {
        assert_eq!(table.len(), self.values.len());
        let spec: Vec<Complex64> = self.spectrum().iter().zip(table).map(|(a, b)| a * b).collect();
        PhaseField::from_spectrum(&self.grid, spec)
    }

    /// Same as [`apply_table`](Self::apply_table) for a real table.
    pub fn apply_real_table(&self, table: &[f64]) -> PhaseField {
        assert_eq!(table.len(), self.values.len());
        let spec: Vec<Complex64> = self.spectrum().iter().zip(table).map(|(a, b)| a * b).collect();
        PhaseField::from_spectrum(&self.grid, spec)
    }

    /// Spectral partial derivative of the given order along `axis`.
    pub fn partial(&self, axis: usize, order: u32) -> PhaseField {
        if order == 0 {
            return self.clone();
        }
        let n = self.grid.n(axis);
        let shape = self.grid.shape();
        let k = self.grid.wavenumbers(axis);
        let inner: usize = shape[axis + 1..].iter().product();
        let mut spec = self.spectrum().to_vec();
        let i_pow = Complex64::new(0.0, 1.0).powu(order);
        for (flat, z) in spec.iter_mut().enumerate() {
            let i = (flat / inner) % n;
            // the Nyquist mode has no real-valued odd derivative
            if order % 2 == 1 && i == n / 2 {
                *z = Complex64::default();
            } else {
                *z *= i_pow * k[i].powi(order as i32);
            }
        }
        PhaseField::from_spectrum(&self.grid, spec)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PhaseField {
        Self::from_values_unchecked(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, a: f64) -> PhaseField {
        self.map(|v| a * v)
    }

    pub fn zip_with(&self, other: &PhaseField, f: impl Fn(f64, f64) -> f64) -> Result<PhaseField> {
        self.grid.check_same(&other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_values_unchecked(&self.grid, values))
    }

    pub fn add(&self, other: &PhaseField) -> Result<PhaseField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &PhaseField) -> Result<PhaseField> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &PhaseField) -> Result<PhaseField> {
        self.zip_with(other, |x, y| x + a * y)
    }

    pub fn mul(&self, other: &PhaseField) -> Result<PhaseField> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Lattice integral (midpoint rule).
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Plain lattice `L^p` norm over all axes; `p = inf` gives the lattice max.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp(&self.values, p, self.grid.cell_volume())
    }

    pub fn l2_norm(&self) -> f64 {
        self.lp_norm(2.0)
    }

    /// Mixed norm `(int ||f(., v)||_{p_x}^{p_v} dv)^{1/p_v}`, x first.
    ///
    /// On position grids this is the plain `L^{p_x}` norm.
    pub fn mixed_lp_norm(&self, p: Integrability) -> f64 {
        if !self.grid.kinetic {
            return self.lp_norm(p.x);
        }
        let nx = self.grid.x_block_len();
        let nv = self.grid.v_block_len();
        let dx = self.grid.spacing(0).powi(self.grid.d as i32);
        let dv = self.grid.spacing(self.grid.d).powi(self.grid.d as i32);
        let mut column = vec![0.0; nx];
        let inner: Vec<f64> = (0..nv)
            .map(|iv| {
                for (ix, c) in column.iter_mut().enumerate() {
                    *c = self.values[ix * nv + iv];
                }
                lp(&column, p.x, dx)
            })
            .collect();
        lp(&inner, p.v, dv)
    }

    /// Periodic convolution `(f * g)(z) = int f(z - y) g(y) dy` on the lattice.
    pub fn convolve(&self, other: &PhaseField) -> Result<PhaseField> {
        self.grid.check_same(&other.grid)?;
        let h = self.grid.cell_volume();
        let spec: Vec<Complex64> =
            self.spectrum().iter().zip(other.spectrum()).map(|(a, b)| a * b * h).collect();
        Ok(PhaseField::from_spectrum(&self.grid, spec))
    }

    /// Cyclic translation by whole lattice cells, `g(z) = f(z + offset * spacing)`.
    pub fn roll(&self, offset: &[i64]) -> PhaseField {
        let shape = self.grid.shape();
        let mut out = vec![0.0; self.values.len()];
        let mut strides = vec![1usize; shape.len()];
        for a in (0..shape.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        for_each_multi(&shape, |flat, idx| {
            let src: usize = idx
                .iter()
                .enumerate()
                .map(|(a, &i)| ((i as i64 + offset[a]).rem_euclid(shape[a] as i64)) as usize * strides[a])
                .sum();
            out[flat] = self.values[src];
        });
        Self::from_values_unchecked(&self.grid, out)
    }

    /// Free-transport shear `f(x, v) -> f(x - t v, v)`.
    ///
    /// Implemented as a per-velocity phase `exp(-i t v . xi_x)` on the
    /// x-spectrum, which translates band-limited data exactly. The map is an
    /// exact lattice automorphism when `t * box_v / box_x` is an integer.
    pub fn shear(&self, t: f64) -> Result<PhaseField> {
        if !self.grid.kinetic {
            return Err(Error::InvalidGrid("shear needs a kinetic grid".into()));
        }
        if t == 0.0 {
            return Ok(self.clone());
        }
        let mut buf: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let shape = self.grid.shape();
        let x_axes = self.grid.x_axes();
        fft::fft_axes(&mut buf, &shape, &x_axes, false);
        self.shear_phase(&mut buf, t);
        fft::fft_axes(&mut buf, &shape, &x_axes, true);
        Ok(Self::from_values_unchecked(&self.grid, buf.iter().map(|z| z.re).collect()))
    }

    /// Multiplies an x-transformed, v-physical buffer by `exp(-i t v . xi_x)`.
    pub(crate) fn shear_phase(&self, buf: &mut [Complex64], t: f64) {
        shear_phase(&self.grid, buf, t);
    }
}

pub(crate) fn shear_phase(grid: &PhaseGrid, buf: &mut [Complex64], t: f64) {
    let d = grid.d;
    let nv = grid.v_block_len();
    let kx: Vec<f64> = grid.wavenumbers(0);
    let v: Vec<f64> = grid.coords(d);
    let n_x = grid.n_x;
    let n_v = grid.n_v;
    for (flat, z) in buf.iter_mut().enumerate() {
        let ix = flat / nv;
        let iv = flat % nv;
        let phase = if d == 1 {
            kx[ix] * v[iv]
        } else {
            kx[ix / n_x] * v[iv / n_v] + kx[ix % n_x] * v[iv % n_v]
        };
        *z *= Complex64::from_polar(1.0, -t * phase);
    }
}

fn lp(values: &[f64], p: f64, weight: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        values.iter().map(|v| v.abs()).sum::<f64>() * weight
    } else if p == 2.0 {
        (values.iter().map(|v| v * v).sum::<f64>() * weight).sqrt()
    } else {
        (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * weight).powf(1.0 / p)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index, value: values[index] }),
        None => Ok(()),
    }
}

/// Random real trigonometric polynomial with wave indices `|k_a| <= max_mode`
/// on every axis. Coefficients depend only on `seed` and the mode, so the
/// same continuum function is produced on refined lattices.
pub fn random_band_limited(grid: &PhaseGrid, max_mode: usize, seed: u64) -> PhaseField {
    random_band_limited_axes(grid, &vec![max_mode; grid.ndim()], seed)
}

/// Like [`random_band_limited`] with a per-axis mode limit.
pub fn random_band_limited_axes(grid: &PhaseGrid, max_modes: &[usize], seed: u64) -> PhaseField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ndim = grid.ndim();
    let span: Vec<usize> = max_modes.iter().map(|&m| 2 * m + 1).collect();
    let mut modes: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    for_each_multi(&span, |_, idx| {
        let k: Vec<i64> = idx.iter().zip(max_modes).map(|(&i, &m)| i as i64 - m as i64).collect();
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        // keep one representative of each +-k pair
        let first = k.iter().find(|&&c| c != 0).copied().unwrap_or(0);
        if first < 0 {
            return;
        }
        let xi: Vec<f64> = (0..ndim).map(|ax| TWO_PI * k[ax] as f64 / grid.box_len(ax)).collect();
        let b = if first == 0 { 0.0 } else { b };
        modes.push((xi, a, b));
    });
    PhaseField::from_fn(grid, |z| {
        modes
            .iter()
            .map(|(xi, a, b)| {
                let ph: f64 = xi.iter().zip(z).map(|(k, x)| k * x).sum();
                a * ph.cos() + b * ph.sin()
            })
            .sum()
    })
}

const MAGIC: &[u8; 4] = b"KNFP";
const VERSION: u32 = 1;
pub const SNAPSHOT_HEADER_LEN: usize = 64;

/// Writes the 64-byte header followed by the row-major samples, all
/// little-endian.
pub fn write_snapshot(field: &PhaseField, mut w: impl Write) -> Result<()> {
    let g = field.grid();
    let mut header = [0u8; SNAPSHOT_HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4..8].copy_from_slice(&VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&(g.d as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(g.kinetic as u32).to_le_bytes());
    header[16..20].copy_from_slice(&(g.n_x as u32).to_le_bytes());
    header[20..24].copy_from_slice(&(g.n_v as u32).to_le_bytes());
    header[24..32].copy_from_slice(&g.box_x.to_le_bytes());
    header[32..40].copy_from_slice(&g.box_v.to_le_bytes());
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(8 * field.values().len());
    for v in field.values() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn read_snapshot(mut r: impl Read) -> Result<PhaseField> {
    let mut header = [0u8; SNAPSHOT_HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format("bad snapshot magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported snapshot version {version}")));
    }
    let grid = PhaseGrid {
        d: u32_at(8) as usize,
        kinetic: u32_at(12) != 0,
        n_x: u32_at(16) as usize,
        n_v: u32_at(20) as usize,
        box_x: f64_at(24),
        box_v: f64_at(32),
    };
    grid.validate()?;
    let mut body = vec![0u8; 8 * grid.len()];
    r.read_exact(&mut body)?;
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    PhaseField::new(grid, values)
}

/// CSV export of a 1-D or 2-D slice. Fields with more than two axes are cut
/// through the central node of the trailing axes of each block, keeping
/// `x_1` and `v_1`.
pub fn write_csv(field: &PhaseField, mut w: impl Write) -> Result<()> {
    let g = field.grid();
    let keep: Vec<usize> = if g.ndim() <= 2 {
        g.axes()
    } else if g.kinetic {
        vec![0, g.d]
    } else {
        vec![0, 1]
    };
    let names: Vec<String> = keep
        .iter()
        .map(|&a| {
            let base = if g.is_velocity_axis(a) { "v" } else { "x" };
            let k = if g.is_velocity_axis(a) { a - g.d } else { a };
            format!("{base}{}", k + 1)
        })
        .collect();
    writeln!(w, "{},value", names.join(","))?;
    let shape = g.shape();
    let coords: Vec<Vec<f64>> = g.axes().iter().map(|&a| g.coords(a)).collect();
    for_each_multi(&shape, |flat, idx| {
        let on_slice = idx.iter().enumerate().all(|(a, &i)| keep.contains(&a) || i == shape[a] / 2);
        if on_slice {
            let cs: Vec<String> = keep.iter().map(|&a| format!("{:.12e}", coords[a][idx[a]])).collect();
            let _ = writeln!(w, "{},{:.12e}", cs.join(","), field.values()[flat]);
        }
    });
    Ok(())
}
