//! Temporal convolution whose input taps are scaled by a per-frame affinity mask.
//!
//! For output frame `t` and tap `i` the kernel reads input frame
//! `t - h/2 + i`, multiplied by `mask[i, t]`; frames outside `[0, T)` are zero.
//! Without a mask this is a plain zero-padded temporal convolution.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::affinity::AffinityMask;
use crate::error::{CoreError, Result};
use crate::matrix::{gemm_acc, Matrix, View};

/// Borrowed convolution weights `[tap][in][out]` and bias `[out]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvKernel<'a> {
    pub weight: &'a [f64],
    pub bias: &'a [f64],
    pub taps: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<'a> ConvKernel<'a> {
    pub fn new(weight: &'a [f64], bias: &'a [f64], taps: usize, in_dim: usize, out_dim: usize) -> Self {
        ConvKernel { weight, bias, taps, in_dim, out_dim }
    }

    fn check(&self) -> Result<()> {
        if self.taps % 2 == 0 {
            return Err(CoreError::invalid("kernel size must be odd"));
        }
        if self.weight.len() != self.taps * self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(CoreError::shape("kernel buffers do not match declared dimensions"));
        }
        Ok(())
    }

    #[inline]
    pub fn w(&self, tap: usize, i: usize, o: usize) -> f64 {
        self.weight[(tap * self.in_dim + i) * self.out_dim + o]
    }

    fn tap_weights(&self, tap: usize) -> &'a [f64] {
        let n = self.in_dim * self.out_dim;
        &self.weight[tap * n..(tap + 1) * n]
    }

    fn half(&self) -> usize {
        self.taps / 2
    }
}

/// Source frame for output frame `t` at `tap`, if inside the sequence.
#[inline]
pub(crate) fn source_frame(t: usize, tap: usize, half: usize, len: usize) -> Option<usize> {
    let s = (t + tap).checked_sub(half)?;
    (s < len).then_some(s)
}

/// Input rows as seen by one tap: row `t` holds `x[t - h/2 + tap] * mask[tap, t]`.
fn tap_input(x: &Matrix, tap: usize, half: usize, mask: Option<&AffinityMask>, buf: &mut Vec<f64>) {
    let (len, dim) = (x.rows(), x.cols());
    buf.clear();
    buf.resize(len * dim, 0.0);
    for t in 0..len {
        let Some(s) = source_frame(t, tap, half, len) else { continue };
        let dst = &mut buf[t * dim..(t + 1) * dim];
        match mask {
            Some(m) => {
                let a = m.get(tap, t);
                for (d, &v) in dst.iter_mut().zip(x.row(s)) {
                    *d = v * a;
                }
            }
            None => dst.copy_from_slice(x.row(s)),
        }
    }
}

fn check_shapes(k: &ConvKernel<'_>, x: &Matrix, mask: Option<&AffinityMask>) -> Result<()> {
    k.check()?;
    if x.cols() != k.in_dim {
        return Err(CoreError::shape(format!("input has {} channels, kernel expects {}", x.cols(), k.in_dim)));
    }
    if let Some(m) = mask {
        if m.taps() != k.taps || m.len() != x.rows() {
            return Err(CoreError::shape(format!(
                "mask is {}x{}, expected {}x{}",
                m.taps(),
                m.len(),
                k.taps,
                x.rows()
            )));
        }
    }
    Ok(())
}

/// Affinity-modulated temporal convolution of `x` (`T x D_in`) into `T x D_out`.
pub fn modulated_temporal_conv(k: &ConvKernel<'_>, x: &Matrix, mask: Option<&AffinityMask>) -> Result<Matrix> {
    check_shapes(k, x, mask)?;
    Ok(conv_forward(k, x, mask))
}

pub(crate) fn conv_forward(k: &ConvKernel<'_>, x: &Matrix, mask: Option<&AffinityMask>) -> Matrix {
    let len = x.rows();
    let mut out = Matrix::zeros(len, k.out_dim);
    for t in 0..len {
        out.row_mut(t).copy_from_slice(k.bias);
    }
    let mut buf = Vec::new();
    for tap in 0..k.taps {
        tap_input(x, tap, k.half(), mask, &mut buf);
        gemm_acc(
            View::row_major(&buf, len, k.in_dim),
            View::row_major(k.tap_weights(tap), k.in_dim, k.out_dim),
            out.as_mut_slice(),
        );
    }
    out
}

/// Gradients of one convolution. `dw`/`db` are accumulated into; `dx` and
/// `dmask`, when given, are accumulated into as well.
pub(crate) fn conv_backward(
    k: &ConvKernel<'_>,
    x: &Matrix,
    mask: Option<&AffinityMask>,
    dout: &Matrix,
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut Matrix>,
    mut dmask: Option<&mut AffinityMask>,
) {
    let len = x.rows();
    let (din, dout_dim) = (k.in_dim, k.out_dim);
    debug_assert_eq!(dout.cols(), dout_dim);
    for t in 0..len {
        for (g, &d) in db.iter_mut().zip(dout.row(t)) {
            *g += d;
        }
    }
    let need_input_grad = dx.is_some() || (dmask.is_some() && mask.is_some());
    let mut buf = Vec::new();
    let mut dtap = vec![0.0; if need_input_grad { len * din } else { 0 }];
    for tap in 0..k.taps {
        tap_input(x, tap, k.half(), mask, &mut buf);
        let n = din * dout_dim;
        // dW_tap += tap_input^T * dout
        gemm_acc(
            View::transposed(&buf, din, len),
            View::row_major(dout.as_slice(), len, dout_dim),
            &mut dw[tap * n..(tap + 1) * n],
        );
        if !need_input_grad {
            continue;
        }
        dtap.iter_mut().for_each(|v| *v = 0.0);
        // d(tap_input) = dout * W_tap^T
        gemm_acc(
            View::row_major(dout.as_slice(), len, dout_dim),
            View::transposed(k.tap_weights(tap), dout_dim, din),
            &mut dtap,
        );
        for t in 0..len {
            let Some(s) = source_frame(t, tap, k.half(), len) else { continue };
            let g = &dtap[t * din..(t + 1) * din];
            let a = mask.map_or(1.0, |m| m.get(tap, t));
            if let Some(dx) = dx.as_deref_mut() {
                for (d, &v) in dx.row_mut(s).iter_mut().zip(g) {
                    *d += v * a;
                }
            }
            if let (Some(dm), Some(_)) = (dmask.as_deref_mut(), mask) {
                let v = crate::math::dot(g, x.row(s));
                dm.add(tap, t, v);
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of the modulated convolution, one scalar at a time.
    pub(crate) fn naive_conv(
        weight: &[f64],
        bias: &[f64],
        taps: usize,
        din: usize,
        dout: usize,
        x: &Matrix,
        mask: Option<&AffinityMask>,
    ) -> Matrix {
        let len = x.rows() as isize;
        let half = (taps / 2) as isize;
        let mut out = Matrix::zeros(x.rows(), dout);
        for t in 0..len {
            for m in 0..dout {
                let mut acc = bias[m];
                for i in 0..taps {
                    let s = t - half + i as isize;
                    if s < 0 || s >= len {
                        continue;
                    }
                    let a = mask.map_or(1.0, |mk| mk.get(i, t as usize));
                    for d in 0..din {
                        acc += weight[(i * din + d) * dout + m] * (x.get(s as usize, d) * a);
                    }
                }
                out.set(t as usize, m, acc);
            }
        }
        out
    }

    pub(crate) fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (taps, din, dout, len) = (3, 4, 5, 7);
        let w: Vec<f64> = (0..taps * din * dout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..dout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = random_matrix(&mut rng, len, din);
        let mask = AffinityMask::from_matrix(random_matrix(&mut rng, taps, len));
        let k = ConvKernel::new(&w, &b, taps, din, dout);
        let fast = modulated_temporal_conv(&k, &x, Some(&mask)).unwrap();
        let slow = naive_conv(&w, &b, taps, din, dout, &x, Some(&mask));
        assert!(fast.max_abs_diff(&slow) < 1e-12);
    }

    #[test]
    fn unit_mask_equals_vanilla_exactly_and_zero_mask_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (taps, din, dout, len) = (5, 3, 2, 9);
        let w: Vec<f64> = (0..taps * din * dout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = vec![0.25, -0.5];
        let x = random_matrix(&mut rng, len, din);
        let k = ConvKernel::new(&w, &b, taps, din, dout);
        let ones = AffinityMask::filled(taps, len, 1.0);
        assert_eq!(conv_forward(&k, &x, Some(&ones)), conv_forward(&k, &x, None));
        let zeros = AffinityMask::filled(taps, len, 0.0);
        let out = conv_forward(&k, &x, Some(&zeros));
        for t in 0..len {
            assert_eq!(out.row(t), &b[..]);
        }
    }

    #[test]
    fn shape_errors() {
        let w = vec![0.0; 3 * 2 * 2];
        let b = vec![0.0; 2];
        let k = ConvKernel::new(&w, &b, 3, 2, 2);
        assert!(modulated_temporal_conv(&k, &Matrix::zeros(4, 3), None).is_err());
        let bad_mask = AffinityMask::filled(3, 5, 1.0);
        assert!(modulated_temporal_conv(&k, &Matrix::zeros(4, 2), Some(&bad_mask)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (taps, din, dout, len) = (3, 3, 2, 6);
        let w: Vec<f64> = (0..taps * din * dout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..dout).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = random_matrix(&mut rng, len, din);
        let mask = AffinityMask::from_matrix(random_matrix(&mut rng, taps, len));
        let upstream = random_matrix(&mut rng, len, dout);
        let objective = |w: &[f64], x: &Matrix, m: &AffinityMask| {
            let k = ConvKernel::new(w, &b, taps, din, dout);
            let y = conv_forward(&k, x, Some(m));
            crate::math::dot(y.as_slice(), upstream.as_slice())
        };
        let k = ConvKernel::new(&w, &b, taps, din, dout);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; dout];
        let mut dx = Matrix::zeros(len, din);
        let mut dm = AffinityMask::filled(taps, len, 0.0);
        conv_backward(&k, &x, Some(&mask), &upstream, &mut dw, &mut db, Some(&mut dx), Some(&mut dm));
        let eps = 1e-6;
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += eps;
            m[i] -= eps;
            let fd = (objective(&p, &x, &mask) - objective(&m, &x, &mask)) / (2.0 * eps);
            assert!((fd - dw[i]).abs() < 1e-8);
        }
        for i in 0..len * din {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.as_mut_slice()[i] += eps;
            m.as_mut_slice()[i] -= eps;
            let fd = (objective(&w, &p, &mask) - objective(&w, &m, &mask)) / (2.0 * eps);
            assert!((fd - dx.as_slice()[i]).abs() < 1e-8);
        }
        for tap in 0..taps {
            for t in 0..len {
                let (mut p, mut m) = (mask.clone(), mask.clone());
                p.add(tap, t, eps);
                m.add(tap, t, -eps);
                let fd = (objective(&w, &x, &p) - objective(&w, &x, &m)) / (2.0 * eps);
                assert!((fd - dm.get(tap, t)).abs() < 1e-8);
            }
        }
        let total: f64 = (0..len).map(|t| upstream.get(t, 0)).sum();
        assert!((db[0] - total).abs() < 1e-12);
    }
}
