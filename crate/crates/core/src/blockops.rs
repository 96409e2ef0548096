//! Small fixed-size complex kernels for the 12×12 layer blocks.
//!
//! The solvers spend nearly all their time in 12×12 products and inverses.
//! The kernels below are plain loops; on x86-64 they are additionally
//! compiled with AVX2/FMA enabled and selected at runtime when the CPU
//! supports it.

use std::sync::OnceLock;

use nalgebra::SMatrix;
use num_complex::Complex64;

use crate::hamiltonian::{Block, BLOCK};

pub(crate) type Panel<const K: usize> = SMatrix<Complex64, BLOCK, K>;

#[inline(always)]
fn mul_kernel<const K: usize>(a: &Block, b: &Panel<K>) -> Panel<K> {
    let (a, bs) = (a.as_slice(), b.as_slice());
    let mut out = Panel::<K>::zeros();
    let o = out.as_mut_slice();
    for j in 0..K {
        let col = &mut o[BLOCK * j..BLOCK * (j + 1)];
        for k in 0..BLOCK {
            let bkj = bs[k + BLOCK * j];
            let (br, bi) = (bkj.re, bkj.im);
            let ak = &a[BLOCK * k..BLOCK * (k + 1)];
            for i in 0..BLOCK {
                col[i].re += ak[i].re * br - ak[i].im * bi;
                col[i].im += ak[i].re * bi + ak[i].im * br;
            }
        }
    }
    out
}

/// Gauss-Jordan elimination with partial pivoting.
#[inline(always)]
fn inverse_kernel(a: &Block) -> Option<Block> {
    let mut m = *a;
    let mut inv = Block::identity();
    let ms = m.as_mut_slice();
    let is = inv.as_mut_slice();
    for col in 0..BLOCK {
        let mut piv = col;
        let mut best = ms[col + BLOCK * col].norm_sqr();
        for r in col + 1..BLOCK {
            let v = ms[r + BLOCK * col].norm_sqr();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return None;
        }
        if piv != col {
            for j in 0..BLOCK {
                ms.swap(col + BLOCK * j, piv + BLOCK * j);
                is.swap(col + BLOCK * j, piv + BLOCK * j);
            }
        }
        let p = Complex64::new(1.0, 0.0) / ms[col + BLOCK * col];
        for j in 0..BLOCK {
            ms[col + BLOCK * j] *= p;
            is[col + BLOCK * j] *= p;
        }
        let f: [Complex64; BLOCK] =
            std::array::from_fn(|r| if r == col { Complex64::new(0.0, 0.0) } else { ms[r + BLOCK * col] });
        for j in 0..BLOCK {
            let (mcj, icj) = (ms[col + BLOCK * j], is[col + BLOCK * j]);
            for r in 0..BLOCK {
                ms[r + BLOCK * j] -= f[r] * mcj;
                is[r + BLOCK * j] -= f[r] * icj;
            }
        }
    }
    Some(inv)
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use super::*;

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn mul<const K: usize>(a: &Block, b: &Panel<K>) -> Panel<K> {
        mul_kernel(a, b)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn inverse(a: &Block) -> Option<Block> {
        inverse_kernel(a)
    }
}

fn use_simd() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    })
}

/// `a · b` for a 12×12 block and a 12×K panel.
pub(crate) fn mul<const K: usize>(a: &Block, b: &Panel<K>) -> Panel<K> {
    #[cfg(target_arch = "x86_64")]
    if use_simd() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { simd::mul(a, b) };
    }
    mul_kernel(a, b)
}

/// Inverse of a 12×12 block, `None` if a pivot is exactly zero or non-finite.
pub(crate) fn inverse(a: &Block) -> Option<Block> {
    #[cfg(target_arch = "x86_64")]
    if use_simd() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { simd::inverse(a) };
    }
    inverse_kernel(a)
}

/// A coupling block stored as its nonzero entries; inter-layer blocks carry
/// one entry per bond.
#[derive(Debug, Clone)]
pub(crate) struct SparseBlock(Vec<(usize, usize, Complex64)>);

impl SparseBlock {
    pub(crate) fn from_dense(b: &Block) -> Self {
        let mut entries = Vec::new();
        for c in 0..BLOCK {
            for r in 0..BLOCK {
                if b[(r, c)] != Complex64::new(0.0, 0.0) {
                    entries.push((r, c, b[(r, c)]));
                }
            }
        }
        Self(entries)
    }

    pub(crate) fn to_dense(&self) -> Block {
        let mut out = Block::zeros();
        for &(r, c, v) in &self.0 {
            out[(r, c)] = v;
        }
        out
    }

    /// `self · x`
    pub(crate) fn left_mul<const K: usize>(&self, x: &Panel<K>) -> Panel<K> {
        let mut out = Panel::<K>::zeros();
        for &(r, c, v) in &self.0 {
            for j in 0..K {
                out[(r, j)] += v * x[(c, j)];
            }
        }
        out
    }

    /// `self† · x`
    pub(crate) fn adjoint_left_mul<const K: usize>(&self, x: &Panel<K>) -> Panel<K> {
        let mut out = Panel::<K>::zeros();
        for &(r, c, v) in &self.0 {
            let w = v.conj();
            for j in 0..K {
                out[(c, j)] += w * x[(r, j)];
            }
        }
        out
    }

    /// `x · self`
    pub(crate) fn right_mul(&self, x: &Block) -> Block {
        let mut out = Block::zeros();
        for &(r, c, v) in &self.0 {
            for i in 0..BLOCK {
                out[(i, c)] += x[(i, r)] * v;
            }
        }
        out
    }

    /// `x · self†`
    pub(crate) fn right_mul_adjoint(&self, x: &Block) -> Block {
        let mut out = Block::zeros();
        for &(r, c, v) in &self.0 {
            let w = v.conj();
            for i in 0..BLOCK {
                out[(i, r)] += x[(i, c)] * w;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(seed: f64) -> Block {
        Block::from_fn(|i, j| Complex64::new(((i * 7 + j * 3) as f64 * seed).sin(), ((i + 2 * j) as f64 * seed).cos()))
            + Block::identity() * Complex64::new(4.0, 0.5)
    }

    #[test]
    fn kernels_match_nalgebra() {
        let (a, b) = (sample(0.37), sample(1.91));
        assert!((mul(&a, &b) - a * b).norm() < 1e-12);
        assert!((mul_kernel(&a, &b) - a * b).norm() < 1e-12);
        let p = Panel::<8>::from_fn(|i, j| Complex64::new(i as f64 - j as f64, 0.5 * j as f64));
        assert!((mul(&a, &p) - a * p).norm() < 1e-12);
        let inv = inverse(&a).unwrap();
        assert!((inv * a - Block::identity()).norm() < 1e-12);
        assert!((inverse_kernel(&a).unwrap() - inv).norm() < 1e-12);
        assert!(inverse(&Block::zeros()).is_none());
        // needs a row swap at the first pivot
        let mut perm = Block::zeros();
        for i in 0..BLOCK {
            perm[(i, (i + 1) % BLOCK)] = Complex64::new(2.0, 0.0);
        }
        assert!((inverse(&perm).unwrap() * perm - Block::identity()).norm() < 1e-14);
    }

    #[test]
    fn sparse_products_match_dense() {
        let mut s = Block::zeros();
        for (r, c) in [(0, 6), (3, 9), (5, 11), (7, 1)] {
            s[(r, c)] = Complex64::new(r as f64 - 2.5, c as f64 * 0.1);
        }
        let sp = SparseBlock::from_dense(&s);
        let x = sample(0.73);
        assert!((sp.left_mul(&x) - s * x).norm() < 1e-13);
        assert!((sp.adjoint_left_mul(&x) - s.adjoint() * x).norm() < 1e-13);
        assert!((sp.right_mul(&x) - x * s).norm() < 1e-13);
        assert!((sp.right_mul_adjoint(&x) - x * s.adjoint()).norm() < 1e-13);
    }
}
