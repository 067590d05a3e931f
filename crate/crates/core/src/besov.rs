//! Anisotropic Littlewood-Paley blocks and Besov norms.
//!
//! On a kinetic grid the dyadic annuli are taken in the gauge
//! `|xi|_a = |xi_x|^{1/(1+alpha)} + |xi_v|`, which makes the kinetic operator
//! scale-homogeneous. Position grids (and the isotropic variant) use the
//! Euclidean length of the full frequency vector.
//!
//! Level `j` keeps frequencies with `2^{j-1} <= |xi| <= 2^{j+1}`. The top
//! level is fixed by the lattice Nyquist frequency, so every norm computed
//! here is the norm of the band-limited representative.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{Integrability, PhaseField, PhaseGrid};

fn psi(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth radial profile equal to 1 on `[0, 1]` and 0 on `[2, inf)`.
pub fn chi0(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let a = psi(2.0 - r);
        a / (a + psi(r - 1.0))
    }
}

/// Cached dyadic masks on a frequency lattice.
#[derive(Clone, Debug)]
pub struct DyadicPartition {
    grid: PhaseGrid,
    alpha: f64,
    anisotropic: bool,
    gauge: Vec<f64>,
    masks: Vec<Vec<f64>>,
}

impl DyadicPartition {
    /// Anisotropic partition (isotropic on position grids).
    pub fn new(grid: &PhaseGrid, alpha: f64) -> Result<Self> {
        Self::with_gauge(grid, alpha, grid.kinetic)
    }

    /// Standard dyadic annuli on the full frequency vector.
    pub fn isotropic(grid: &PhaseGrid) -> Result<Self> {
        Self::with_gauge(grid, 2.0, false)
    }

    pub fn with_gauge(grid: &PhaseGrid, alpha: f64, anisotropic: bool) -> Result<Self> {
        if !(alpha > 1.0 && alpha <= 2.0) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} (must lie in (1, 2])")));
        }
        if anisotropic && !grid.kinetic {
            return Err(Error::InvalidGrid("anisotropic gauge needs a kinetic grid".into()));
        }
        let d = grid.d;
        let mut gauge = vec![0.0; grid.len()];
        grid.for_each_frequency(|i, xi| {
            gauge[i] = if anisotropic {
                let x: f64 = xi[..d].iter().map(|k| k * k).sum::<f64>().sqrt();
                let v: f64 = xi[d..].iter().map(|k| k * k).sum::<f64>().sqrt();
                x.powf(1.0 / (1.0 + alpha)) + v
            } else {
                xi.iter().map(|k| k * k).sum::<f64>().sqrt()
            };
        });
        let top = gauge.iter().copied().fold(0.0, f64::max);
        let j_max = top.log2().ceil().max(0.0) as usize + 1;
        let masks = (0..=j_max)
            .map(|j| {
                gauge
                    .iter()
                    .map(|&r| {
                        if j == 0 {
                            chi0(r)
                        } else {
                            chi0(r / 2f64.powi(j as i32)) - chi0(r / 2f64.powi(j as i32 - 1))
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { grid: grid.clone(), alpha, anisotropic, gauge, masks })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_anisotropic(&self) -> bool {
        self.anisotropic
    }

    pub fn j_max(&self) -> usize {
        self.masks.len() - 1
    }

    /// `|xi|_a` (or `|xi|`) at every lattice frequency.
    pub fn gauge(&self) -> &[f64] {
        &self.gauge
    }

    pub fn mask(&self, j: usize) -> Result<&[f64]> {
        self.masks.get(j).map(|m| m.as_slice()).ok_or(Error::LevelOutOfRange { level: j, max: self.j_max() })
    }

    /// The block `R_j f`.
    pub fn block(&self, f: &PhaseField, j: usize) -> Result<PhaseField> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch("field and partition live on different lattices".into()));
        }
        Ok(f.apply_real_table(self.mask(j)?))
    }

    pub fn blocks(&self, f: &PhaseField) -> Result<Vec<PhaseField>> {
        (0..=self.j_max()).map(|j| self.block(f, j)).collect()
    }

    /// `||R_j f||_p` for every level.
    pub fn block_norms(&self, f: &PhaseField, p: Integrability) -> Result<Vec<f64>> {
        Ok(self.blocks(f)?.iter().map(|b| b.mixed_lp_norm(p)).collect())
    }

    /// `(sum_j (2^{js} ||R_j f||_p)^q)^{1/q}`.
    pub fn besov_norm(&self, f: &PhaseField, s: f64, q: f64, p: Integrability) -> Result<f64> {
        let norms = self.block_norms(f, p)?;
        Ok(sequence_norm(norms.iter().enumerate().map(|(j, n)| 2f64.powf(j as f64 * s) * n), q))
    }

    /// Scaling exponent of `nabla_x^{k.0} nabla_v^{k.1}` from `L^p` to `L^{p'}` on one block.
    pub fn bernstein_exponent(&self, k: (u32, u32), p: Integrability, p_prime: Integrability) -> f64 {
        let d = self.grid.d as f64;
        if self.grid.kinetic && self.anisotropic {
            (1.0 + self.alpha) * (k.0 as f64 + d / p.x - d / p_prime.x) + (k.1 as f64 + d / p.v - d / p_prime.v)
        } else if self.grid.kinetic {
            (k.0 + k.1) as f64 + d * (1.0 / p.x - 1.0 / p_prime.x + 1.0 / p.v - 1.0 / p_prime.v)
        } else {
            k.0 as f64 + d / p.x - d / p_prime.x
        }
    }

    /// `||nabla^k R_j f||_{p'} / (2^{j a.(k + d/p - d/p')} ||R_j f||_p)`, or 0 on a vanishing block.
    pub fn bernstein_ratio(
        &self,
        f: &PhaseField,
        j: usize,
        k: (u32, u32),
        p: Integrability,
        p_prime: Integrability,
    ) -> Result<f64> {
        if p.x > p_prime.x || p.v > p_prime.v {
            return Err(Error::InvalidParameter("Bernstein needs p <= p' componentwise".into()));
        }
        let b = self.block(f, j)?;
        let den = b.mixed_lp_norm(p);
        if !(den > 1e-300) || den < 1e-13 * f.max_abs() * self.grid.volume().max(1.0) {
            return Ok(0.0);
        }
        let grad = gradient_magnitude(&b, k);
        let scale = 2f64.powf(j as f64 * self.bernstein_exponent(k, p, p_prime));
        Ok(grad.mixed_lp_norm(p_prime) / (scale * den))
    }

    /// Writes `j, 2^{js} ||R_j f||_p` rows.
    pub fn write_profile_csv(&self, f: &PhaseField, s: f64, p: Integrability, mut w: impl Write) -> Result<()> {
        writeln!(w, "j,weighted_norm")?;
        for (j, n) in self.block_norms(f, p)?.iter().enumerate() {
            writeln!(w, "{j},{:.12e}", 2f64.powf(j as f64 * s) * n)?;
        }
        Ok(())
    }
}

/// `l^q` norm of a nonnegative sequence.
pub fn sequence_norm(terms: impl Iterator<Item = f64>, q: f64) -> f64 {
    if q.is_infinite() {
        terms.fold(0.0, f64::max)
    } else {
        terms.map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// Convenience wrapper building a partition per call.
pub fn besov_norm(f: &PhaseField, s: f64, q: f64, p: Integrability, alpha: f64, anisotropic: bool) -> Result<f64> {
    DyadicPartition::with_gauge(f.grid(), alpha, anisotropic && f.grid().kinetic)?.besov_norm(f, s, q, p)
}

/// Pointwise Frobenius norm of the tensor `nabla_x^{k.0} nabla_v^{k.1} f`.
pub fn gradient_magnitude(f: &PhaseField, k: (u32, u32)) -> PhaseField {
    let g = f.grid();
    let x_axes = g.x_axes();
    let v_axes = g.v_axes();
    let mut parts = vec![f.clone()];
    for (order, axes) in [(k.0, &x_axes), (k.1, &v_axes)] {
        for _ in 0..order {
            parts = parts.iter().flat_map(|p| axes.iter().map(move |&a| p.partial(a, 1))).collect();
        }
    }
    if parts.len() == 1 {
        return parts.pop().unwrap().map(f64::abs);
    }
    let mut sq = vec![0.0; f.values().len()];
    for p in &parts {
        for (s, v) in sq.iter_mut().zip(p.values()) {
            *s += v * v;
        }
    }
    PhaseField::new(g.clone(), sq.into_iter().map(f64::sqrt).collect()).expect("finite gradient")
}

/// Lattice offsets used by [`holder_seminorm`]: 0 and `+-2^k` cells per axis.
fn offsets(n: usize) -> Vec<i64> {
    let mut out = vec![0i64];
    let mut k = 1i64;
    while k <= n as i64 / 2 {
        out.push(k);
        out.push(-k);
        k *= 2;
    }
    out
}

/// `sup_h ||f(. + h) - f||_inf / |h|_a^s` over dyadic lattice offsets.
pub fn holder_seminorm(f: &PhaseField, s: f64, alpha: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidParameter(format!("s = {s} (must lie in (0, 1))")));
    }
    let g = f.grid();
    let ndim = g.ndim();
    let choices: Vec<Vec<i64>> = (0..ndim).map(|a| offsets(g.n(a))).collect();
    let shape: Vec<usize> = choices.iter().map(|c| c.len()).collect();
    let mut best = 0.0f64;
    crate::grid::for_each_multi(&shape, |_, idx| {
        let h: Vec<i64> = idx.iter().enumerate().map(|(a, &i)| choices[a][i]).collect();
        if h.iter().all(|&c| c == 0) {
            return;
        }
        let len = |axes: &[usize]| -> f64 {
            axes.iter().map(|&a| (h[a] as f64 * g.spacing(a)).powi(2)).sum::<f64>().sqrt()
        };
        let dist = if g.kinetic {
            len(&g.x_axes()).powf(1.0 / (1.0 + alpha)) + len(&g.v_axes())
        } else {
            len(&g.x_axes())
        };
        let diff = f.roll(&h).sub(f).expect("same grid").max_abs();
        best = best.max(diff / dist.powf(s));
    });
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::random_band_limited;
    use std::f64::consts::PI;

    #[test]
    fn chi0_profile() {
        assert_eq!(chi0(0.3), 1.0);
        assert_eq!(chi0(2.5), 0.0);
        assert!((chi0(1.5) - 0.5).abs() < 1e-15);
        let mut last = 1.0;
        for i in 0..=100 {
            let c = chi0(1.0 + i as f64 / 100.0);
            assert!(c <= last + 1e-15 && (0.0..=1.0).contains(&c));
            last = c;
        }
    }

    #[test]
    fn partition_of_unity_and_support() {
        let g = PhaseGrid::kinetic(1, 64, 2.0 * PI, 32, 8.0).unwrap();
        let part = DyadicPartition::new(&g, 1.5).unwrap();
        for i in 0..g.len() {
            let total: f64 = (0..=part.j_max()).map(|j| part.mask(j).unwrap()[i]).sum();
            assert!((total - 1.0).abs() < 1e-12);
            let r = part.gauge()[i];
            for j in 1..=part.j_max() {
                let m = part.mask(j).unwrap()[i];
                assert!((0.0..=1.0).contains(&m));
                let lo = 2f64.powi(j as i32 - 1);
                if r < lo || r > 4.0 * lo {
                    assert_eq!(m, 0.0);
                }
            }
        }
        assert!(part.mask(part.j_max() + 1).is_err());
    }

    #[test]
    fn constant_lives_in_block_zero() {
        let g = PhaseGrid::kinetic(1, 16, 1.0, 16, 1.0).unwrap();
        let part = DyadicPartition::new(&g, 2.0).unwrap();
        let f = PhaseField::constant(&g, 3.0);
        let norms = part.block_norms(&f, Integrability::INF).unwrap();
        assert!((norms[0] - 3.0).abs() < 1e-12);
        assert!(norms[1..].iter().all(|&n| n < 1e-12));
    }

    #[test]
    fn single_mode_on_an_annulus_edge() {
        let g = PhaseGrid::kinetic(1, 16, 2.0 * PI, 128, 2.0 * PI).unwrap();
        let part = DyadicPartition::new(&g, 2.0).unwrap();
        let f = PhaseField::from_fn(&g, |z| (32.0 * z[1]).cos());
        let sum = part.block(&f, 5).unwrap().add(&part.block(&f, 6).unwrap()).unwrap();
        assert!(sum.sub(&f).unwrap().max_abs() < 1e-12);
        for j in (0..=part.j_max()).filter(|j| !(5..=6).contains(j)) {
            assert!(part.block(&f, j).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction() {
        let g = PhaseGrid::kinetic(1, 32, 4.0, 32, 6.0).unwrap();
        let f = random_band_limited(&g, 12, 11);
        let part = DyadicPartition::new(&g, 1.2).unwrap();
        let mut acc = PhaseField::zeros(&g);
        for b in part.blocks(&f).unwrap() {
            acc = acc.add(&b).unwrap();
        }
        assert!(acc.sub(&f).unwrap().max_abs() < 1e-10 * f.max_abs());
    }

    #[test]
    fn one_block_field_norm() {
        let g = PhaseGrid::kinetic(1, 16, 2.0 * PI, 64, 2.0 * PI).unwrap();
        let part = DyadicPartition::new(&g, 2.0).unwrap();
        let f = PhaseField::from_fn(&g, |z| (12.0 * z[1]).sin());
        let s = 0.7;
        let n = part.besov_norm(&f, s, f64::INFINITY, Integrability::TWO).unwrap();
        let lower = 2f64.powf(3.0 * s) * f.l2_norm();
        assert!(n >= 0.5 * lower && n <= 2.0 * 2f64.powf(s) * lower, "{n} vs {lower}");
    }

    #[test]
    fn bernstein_identity_case_and_zero_block() {
        let g = PhaseGrid::kinetic(1, 16, 2.0 * PI, 64, 2.0 * PI).unwrap();
        let part = DyadicPartition::new(&g, 2.0).unwrap();
        let f = PhaseField::from_fn(&g, |z| (16.0 * z[1]).cos());
        let r = part.bernstein_ratio(&f, 4, (0, 0), Integrability::TWO, Integrability::TWO).unwrap();
        assert!(r <= 1.0 + 1e-10);
        let r0 = part.bernstein_ratio(&f, 1, (0, 1), Integrability::TWO, Integrability::TWO).unwrap();
        assert_eq!(r0, 0.0);
    }

    #[test]
    fn holder_of_constant_and_sine() {
        let g = PhaseGrid::kinetic(1, 16, 2.0 * PI, 64, 2.0 * PI).unwrap();
        assert_eq!(holder_seminorm(&PhaseField::constant(&g, 1.0), 0.5, 2.0).unwrap(), 0.0);
        let f = PhaseField::from_fn(&g, |z| z[1].sin());
        let h = holder_seminorm(&f, 0.5, 2.0).unwrap();
        // sup_h 2 sin(h/2) / sqrt(h) over dyadic lattice offsets
        let direct = (0..=5)
            .map(|k| {
                let h = 2f64.powi(k) * 2.0 * PI / 64.0;
                2.0 * (h / 2.0).sin() / h.sqrt()
            })
            .fold(0.0, f64::max);
        assert!((h - direct).abs() < 1e-12, "{h} vs {direct}");
        let b = besov_norm(&f, 0.5, f64::INFINITY, Integrability::INF, 2.0, true).unwrap();
        assert!(h / b < 10.0 && b / h < 10.0);
    }
}
