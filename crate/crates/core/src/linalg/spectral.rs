use crate::error::{Error, Result};

use super::tensor::{matmul_into, matvec_into, norm2 as slice_norm2};
use super::{Rng, Tensor};

pub fn norm2(t: &Tensor) -> f64 {
    t.norm2()
}

/// Cosine similarity of two equal-length tensors, clamped to `[-1, 1]`.
pub fn cosine(a: &Tensor, b: &Tensor) -> Result<f64> {
    cosine_slices(a.data(), b.data())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("cosine: {} vs {} entries", a.len(), b.len())));
    }
    let (na, nb) = (slice_norm2(a), slice_norm2(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedCosine);
    }
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum();
    Ok(d.clamp(-1.0, 1.0))
}

fn expect_square(m: &Tensor, op: &str) -> Result<usize> {
    if m.rank() != 2 || m.dims()[0] != m.dims()[1] {
        return Err(Error::shape(format!("{op} needs a square matrix, got {:?}", m.dims())));
    }
    Ok(m.dims()[0])
}

/// Largest singular value by power iteration on `mᵀm` from a random start.
pub fn spectral_norm(m: &Tensor, iters: usize, rng: &mut Rng) -> Result<f64> {
    if m.rank() != 2 {
        return Err(Error::shape("spectral_norm needs a rank-2 tensor"));
    }
    let (rows, cols) = (m.dims()[0], m.dims()[1]);
    let mut v: Vec<f64> = (0..cols).map(|_| rng.normal()).collect();
    let mut mv = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        let nv = slice_norm2(&v);
        if nv == 0.0 {
            return Ok(0.0);
        }
        v.iter_mut().for_each(|x| *x /= nv);
        matvec_into(m.data(), &v, &mut mv);
        sigma = slice_norm2(&mv);
        // v <- mᵀ (m v)
        v.fill(0.0);
        for (row, &s) in m.data().chunks_exact(cols).zip(&mv) {
            super::tensor::axpy(s, row, &mut v);
        }
    }
    Ok(sigma)
}

/// Dominant eigenvalue magnitude of a square matrix.
///
/// Works from the Gelfand limit `ρ = lim ‖Aᴺ‖^(1/N)` by repeated squaring,
/// renormalizing after every squaring and tracking `L_k = ln ‖A^(2^k)‖`.
/// The estimate is the ratio form `(L_K − L_{K−1}) / 2^(K−1)`, which cancels
/// the constant in `‖Aᴺ‖ ≈ C ρᴺ` (exact when the dominant eigenvalues are
/// semisimple). Unlike plain power iteration this converges for
/// complex-conjugate dominant pairs, which non-normal state Jacobians
/// routinely have.
pub fn spectral_radius(m: &Tensor, squarings: usize) -> Result<f64> {
    let n = expect_square(m, "spectral_radius")?;
    let mut b = m.data().to_vec();
    let mut sq = vec![0.0; n * n];
    let s = slice_norm2(&b);
    if s == 0.0 {
        return Ok(0.0);
    }
    b.iter_mut().for_each(|x| *x /= s);
    let mut log_norm = s.ln();
    let mut prev_log_norm = f64::NAN;
    let mut power = 1.0;
    for _ in 0..squarings.max(1) {
        matmul_into(&b, &b, &mut sq, n, n, n);
        std::mem::swap(&mut b, &mut sq);
        let s = slice_norm2(&b);
        if s == 0.0 {
            // Nilpotent: the remaining powers vanish.
            return Ok(0.0);
        }
        b.iter_mut().for_each(|x| *x /= s);
        prev_log_norm = log_norm;
        log_norm = 2.0 * log_norm + s.ln();
        power *= 2.0;
    }
    // L_K − L_{K−1} ≈ ln ρ · 2^(K−1)
    Ok(((log_norm - prev_log_norm) / (power / 2.0)).exp())
}

/// Default squaring count for [`spectral_radius`].
pub const RADIUS_SQUARINGS: usize = 30;
