//! Frame embeddings and the local cosine-affinity mask built from them.

use alloc::vec;
use alloc::vec::Vec;

use super::conv::{conv_forward, source_frame, ConvKernel};
use crate::error::{CoreError, Result};
use crate::math::{dot, norm};
use crate::matrix::Matrix;

/// Added to the norm before dividing; keeps all-zero pre-embeddings finite.
pub const NORM_EPS: f64 = 1e-8;
/// Lower bound on the product of norms in the cosine.
const COSINE_EPS: f64 = 1e-12;

/// Affinity of every frame to its `h` neighbours, `mask[i, t]` for tap `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMask {
    taps: usize,
    len: usize,
    data: Vec<f64>,
}

impl AffinityMask {
    pub fn filled(taps: usize, len: usize, value: f64) -> Self {
        AffinityMask { taps, len, data: vec![value; taps * len] }
    }

    /// `m` is `taps x T`.
    pub fn from_matrix(m: Matrix) -> Self {
        AffinityMask { taps: m.rows(), len: m.cols(), data: m.into_vec() }
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, tap: usize, t: usize) -> f64 {
        self.data[tap * self.len + t]
    }

    #[inline]
    pub fn set(&mut self, tap: usize, t: usize, v: f64) {
        self.data[tap * self.len + t] = v;
    }

    #[inline]
    pub fn add(&mut self, tap: usize, t: usize, v: f64) {
        self.data[tap * self.len + t] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Cosine similarity with a guarded denominator.
///
/// Bitwise-identical arguments give exactly 1 (this also covers two zero
/// vectors, which share the same regularised direction).
pub fn cosine_affinity(u: &[f64], v: &[f64]) -> f64 {
    if u == v {
        return 1.0;
    }
    let den = (norm(u) * norm(v)).max(COSINE_EPS);
    (dot(u, v) / den).clamp(-1.0, 1.0)
}

/// Adds `scale * d cos(u, v) / du` and `/ dv` into `du` and `dv`.
pub fn cosine_affinity_grad(u: &[f64], v: &[f64], scale: f64, du: &mut [f64], dv: &mut [f64]) {
    if u == v || scale == 0.0 {
        return;
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu * nv < COSINE_EPS {
        return;
    }
    let inv = 1.0 / (nu * nv);
    let cos = dot(u, v) * inv;
    let (cu, cv) = (cos / (nu * nu), cos / (nv * nv));
    for k in 0..u.len() {
        du[k] += scale * (v[k] * inv - cu * u[k]);
        dv[k] += scale * (u[k] * inv - cv * v[k]);
    }
}

/// Pre-normalisation embeddings and their norms, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct EmbeddingCache {
    pub raw: Matrix,
    pub norms: Vec<f64>,
}

pub(crate) fn embed_forward(kernel: &ConvKernel<'_>, x: &Matrix) -> (Matrix, EmbeddingCache) {
    let raw = conv_forward(kernel, x, None);
    let norms: Vec<f64> = (0..raw.rows()).map(|t| norm(raw.row(t))).collect();
    let mut e = raw.clone();
    for (t, &n) in norms.iter().enumerate() {
        let inv = 1.0 / (n + NORM_EPS);
        e.row_mut(t).iter_mut().for_each(|v| *v *= inv);
    }
    (e, EmbeddingCache { raw, norms })
}

/// Gradient through `e = z / (|z| + eps)` for every frame.
pub(crate) fn normalize_backward(cache: &EmbeddingCache, de: &Matrix) -> Matrix {
    let mut dz = Matrix::zeros(de.rows(), de.cols());
    for t in 0..de.rows() {
        let z = cache.raw.row(t);
        let n = cache.norms[t];
        let g = de.row(t);
        let den = n + NORM_EPS;
        let out = dz.row_mut(t);
        if n > 0.0 {
            let coef = dot(z, g) / (n * den * den);
            for k in 0..z.len() {
                out[k] = g[k] / den - coef * z[k];
            }
        } else {
            for k in 0..z.len() {
                out[k] = g[k] / den;
            }
        }
    }
    dz
}

/// Temporal-conv embedding followed by per-frame L2 normalisation.
pub fn embed_frames(kernel: &ConvKernel<'_>, x: &Matrix) -> Result<Matrix> {
    if x.cols() != kernel.in_dim {
        return Err(CoreError::shape("feature dim does not match embedding kernel"));
    }
    Ok(embed_forward(kernel, x).0)
}

/// Cosine affinity of each frame to its `taps` neighbours; out-of-range taps are 0.
pub fn local_affinity_matrix(e: &Matrix, taps: usize) -> Result<AffinityMask> {
    if taps % 2 == 0 {
        return Err(CoreError::invalid("neighbourhood size must be odd"));
    }
    if taps > e.rows() {
        return Err(CoreError::invalid("neighbourhood larger than the sequence"));
    }
    Ok(affinity_forward(e, taps))
}

pub(crate) fn affinity_forward(e: &Matrix, taps: usize) -> AffinityMask {
    let len = e.rows();
    let half = taps / 2;
    let mut mask = AffinityMask::filled(taps, len, 0.0);
    for t in 0..len {
        for tap in 0..taps {
            if let Some(s) = source_frame(t, tap, half, len) {
                let a = if tap == half { 1.0 } else { cosine_affinity(e.row(t), e.row(s)) };
                mask.set(tap, t, a);
            }
        }
    }
    mask
}

/// Accumulates the gradient of the mask into `de`.
pub(crate) fn affinity_backward(e: &Matrix, dmask: &AffinityMask, de: &mut Matrix) {
    let len = e.rows();
    let taps = dmask.taps();
    let half = taps / 2;
    let dim = e.cols();
    let mut du = vec![0.0; dim];
    let mut dv = vec![0.0; dim];
    for t in 0..len {
        for tap in 0..taps {
            if tap == half {
                continue;
            }
            let Some(s) = source_frame(t, tap, half, len) else { continue };
            let g = dmask.get(tap, t);
            if g == 0.0 {
                continue;
            }
            du.iter_mut().for_each(|x| *x = 0.0);
            dv.iter_mut().for_each(|x| *x = 0.0);
            cosine_affinity_grad(e.row(t), e.row(s), g, &mut du, &mut dv);
            for (d, x) in de.row_mut(t).iter_mut().zip(&du) {
                *d += x;
            }
            for (d, x) in de.row_mut(s).iter_mut().zip(&dv) {
                *d += x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::conv::tests::random_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 2.0];
        let neg = [-0.3, 1.2, -2.0];
        assert_eq!(cosine_affinity(&v, &v), 1.0);
        assert!((cosine_affinity(&v, &neg) + 1.0).abs() < 1e-15);
        assert_eq!(cosine_affinity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine_affinity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn embeddings_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_matrix(&mut rng, 3 * 5, 4).into_vec();
        let b = random_matrix(&mut rng, 1, 4).into_vec();
        let k = ConvKernel::new(&w, &b, 3, 5, 4);
        let x = random_matrix(&mut rng, 20, 5);
        let e = embed_frames(&k, &x).unwrap();
        for t in 0..20 {
            assert!((norm(e.row(t)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_input_gives_identical_embeddings_with_unit_affinity() {
        let w = vec![0.7; 3 * 5 * 4];
        let b = vec![0.0; 4];
        let k = ConvKernel::new(&w, &b, 3, 5, 4);
        let e = embed_frames(&k, &Matrix::zeros(6, 5)).unwrap();
        for t in 1..6 {
            assert_eq!(e.row(t), e.row(0));
            assert_eq!(cosine_affinity(e.row(t), e.row(0)), 1.0);
        }
        let mask = local_affinity_matrix(&e, 3).unwrap();
        assert_eq!(mask.get(0, 0), 0.0);
        assert_eq!(mask.get(2, 5), 0.0);
        assert_eq!(mask.get(0, 3), 1.0);
    }

    #[test]
    fn identical_embeddings_give_ones_in_range_and_zero_padding() {
        let row = [0.6, 0.8];
        let e = Matrix::from_rows(&vec![row.to_vec(); 5]).unwrap();
        let m = local_affinity_matrix(&e, 3).unwrap();
        for t in 0..5 {
            for tap in 0..3 {
                let in_range = (t + tap) >= 1 && t + tap - 1 < 5;
                assert_eq!(m.get(tap, t), if in_range { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn affinity_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = random_matrix(&mut rng, 11, 4);
        let m = local_affinity_matrix(&e, 5).unwrap();
        for t in 0..11isize {
            for i in 0..5isize {
                let s = t - 2 + i;
                let expected = if s < 0 || s >= 11 {
                    0.0
                } else if i == 2 {
                    1.0
                } else {
                    let (u, v) = (e.row(t as usize), e.row(s as usize));
                    let mut d = 0.0;
                    let mut nu = 0.0;
                    let mut nv = 0.0;
                    for k in 0..4 {
                        d += u[k] * v[k];
                        nu += u[k] * u[k];
                        nv += v[k] * v[k];
                    }
                    d / (nu.sqrt() * nv.sqrt())
                };
                assert!((m.get(i as usize, t as usize) - expected).abs() < 1e-15);
            }
        }
        for t in 0..11 {
            assert_eq!(m.get(2, t), 1.0);
        }
    }

    #[test]
    fn normalization_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = random_matrix(&mut rng, 4, 3);
        let up = random_matrix(&mut rng, 4, 3);
        let f = |z: &Matrix| {
            let mut acc = 0.0;
            for t in 0..z.rows() {
                let n = norm(z.row(t)) + NORM_EPS;
                acc += z.row(t).iter().zip(up.row(t)).map(|(a, b)| a / n * b).sum::<f64>();
            }
            acc
        };
        let cache = EmbeddingCache { norms: (0..4).map(|t| norm(z.row(t))).collect(), raw: z.clone() };
        let dz = normalize_backward(&cache, &up);
        let eps = 1e-6;
        for i in 0..12 {
            let (mut p, mut m) = (z.clone(), z.clone());
            p.as_mut_slice()[i] += eps;
            m.as_mut_slice()[i] -= eps;
            let fd = (f(&p) - f(&m)) / (2.0 * eps);
            let an = dz.as_slice()[i];
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }

    #[test]
    fn affinity_backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let e = random_matrix(&mut rng, 6, 3);
        let up = random_matrix(&mut rng, 3, 6);
        let f = |e: &Matrix| {
            let m = affinity_forward(e, 3);
            dot(m.as_slice(), up.as_slice())
        };
        let mut de = Matrix::zeros(6, 3);
        affinity_backward(&e, &AffinityMask::from_matrix(up.clone()), &mut de);
        let eps = 1e-6;
        for i in 0..18 {
            let (mut p, mut m) = (e.clone(), e.clone());
            p.as_mut_slice()[i] += eps;
            m.as_mut_slice()[i] -= eps;
            let fd = (f(&p) - f(&m)) / (2.0 * eps);
            assert!((fd - de.as_slice()[i]).abs() < 1e-8);
        }
    }
}
