//! N-dimensional complex FFT over a flat row-major buffer.
//!
//! Forward transforms are unnormalized (`X_k = sum_j x_j e^{-2 pi i jk/n}`);
//! inverse transforms divide by the number of points along each
//! transformed axis, so `inverse(forward(x)) == x`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Transforms `data` along every axis listed in `axes`.
pub(crate) fn fft_axes(data: &mut [Complex64], shape: &[usize], axes: &[usize], inverse: bool) {
    for &axis in axes {
        fft_axis(data, shape, axis, inverse);
    }
}

pub(crate) fn fft_all(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let axes: Vec<usize> = (0..shape.len()).collect();
    fft_axes(data, shape, &axes, inverse);
}

fn fft_axis(data: &mut [Complex64], shape: &[usize], axis: usize, inverse: bool) {
    let n = shape[axis];
    if n <= 1 {
        return;
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let scale = if inverse { 1.0 / n as f64 } else { 1.0 };
    let fft = plan(n, inverse);

    if inner == 1 {
        // lines are contiguous
        data.par_chunks_mut(n * 64).for_each(|chunk| {
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(chunk, &mut scratch);
        });
        if inverse {
            data.par_iter_mut().for_each(|z| *z *= scale);
        }
        return;
    }

    // Strided lines: each outer block holds `inner` interleaved lines of length n.
    let block = n * inner;
    data.par_chunks_mut(block).for_each(|blk| {
        let mut line = vec![Complex64::default(); n * inner];
        // gather: transpose (n, inner) -> (inner, n)
        for k in 0..n {
            for i in 0..inner {
                line[i * n + k] = blk[k * inner + i];
            }
        }
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(&mut line, &mut scratch);
        for k in 0..n {
            for i in 0..inner {
                blk[k * inner + i] = line[i * n + k] * scale;
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let ang = -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_along_each_axis() {
        let shape = [4, 8];
        let x: Vec<Complex64> = (0..32)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
            .collect();
        let mut y = x.clone();
        fft_axes(&mut y, &shape, &[1], false);
        for r in 0..4 {
            let expect = naive_dft(&x[r * 8..(r + 1) * 8]);
            for c in 0..8 {
                assert!((y[r * 8 + c] - expect[c]).norm() < 1e-12);
            }
        }
        let mut z = x.clone();
        fft_axes(&mut z, &shape, &[0], false);
        for c in 0..8 {
            let col: Vec<Complex64> = (0..4).map(|r| x[r * 8 + c]).collect();
            let expect = naive_dft(&col);
            for r in 0..4 {
                assert!((z[r * 8 + c] - expect[r]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        let shape = [8, 4, 16];
        let x: Vec<Complex64> = (0..512)
            .map(|i| Complex64::new((i as f64).sqrt().sin(), 0.5 * (i as f64 * 0.1).cos()))
            .collect();
        let mut y = x.clone();
        fft_all(&mut y, &shape, false);
        fft_all(&mut y, &shape, true);
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-13, "{err}");
    }
}
