//! Per-mode activation subproblems.
//!
//! With all other modes frozen, the fidelity term restricted to the mode-`q`
//! factors of every atom is a convex quadratic. In the Fourier domain its
//! normal operator is block-diagonal over the `n_q` mode-`q` frequencies:
//! block `t` is the Hermitian PSD matrix `W(t)^H W(t)` of size `KR x KR`,
//! where column `(k, r)` of `W(t)` holds the off-mode Khatri-Rao column
//! `B_k[:, r]` weighted by the atom spectrum row `D_k[t, :]`. The cache below
//! stores those blocks plus the linear term, so one gradient evaluation
//! costs `O(n_q (KR)^2)` instead of touching all `Π n_i` frequencies.
//!
//! Gradients are taken with respect to the time-domain factor entries, so a
//! factor `1 / Π_{i≠q} n_i` calibrates the Fourier-domain residual; the
//! cached Lipschitz constant carries the same calibration and `η = 1/L` is a
//! valid descent step.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{fft_columns, ifft_columns_re};
use crate::tensor::khatri_rao_reverse;

/// Per-mode elastic-net weights; `alpha` scales the l1 term and `beta` the
/// squared Frobenius term of each mode subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegWeights {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub nonnegative: bool,
}

impl RegWeights {
    pub fn uniform(order: usize, alpha: f64, beta: f64) -> Self {
        RegWeights {
            alpha: vec![alpha; order],
            beta: vec![beta; order],
            nonnegative: false,
        }
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        if self.alpha.len() != order || self.beta.len() != order {
            return Err(Error::invalid(format!(
                "expected {order} per-mode weights, got alpha: {}, beta: {}",
                self.alpha.len(),
                self.beta.len()
            )));
        }
        if self
            .alpha
            .iter()
            .chain(&self.beta)
            .any(|&v| !v.is_finite() || v < 0.0)
        {
            return Err(Error::invalid(
                "regularization weights must be finite and nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Khatri-Rao product (reverse mode order) of one atom's factor spectra with
/// the given mode removed; for order-1 signals this degenerates to a row of
/// ones. The row ordering matches the column ordering of the mode-`q`
/// matricization, so no Kronecker factor with the identity is ever formed.
pub fn offmode_khatri_rao(factor_spectra: &[Array2<Complex64>], mode: usize) -> Array2<Complex64> {
    let views: Vec<_> = factor_spectra
        .iter()
        .enumerate()
        .filter(|(m, _)| *m != mode)
        .map(|(_, f)| f.view())
        .collect();
    if views.is_empty() {
        return Array2::from_elem((1, factor_spectra[mode].ncols()), Complex64::ONE);
    }
    khatri_rao_reverse(&views)
}

/// Fourier-domain normal operator of one mode subproblem, cached as one
/// Hermitian block and one linear-term block per mode-`q` frequency.
pub struct ModeSubproblemCache {
    pub mode: usize,
    n_freq: usize,
    offmode_len: usize,
    n_atoms: usize,
    rank: usize,
    gram: Vec<Complex64>,
    lin: Vec<Complex64>,
    lipschitz: f64,
}

pub const LIPSCHITZ_FLOOR: f64 = 1e-12;
const POWER_TOL: f64 = 1e-6;
const POWER_MAX_ITERS: usize = 10_000;
/// Power iteration approaches the top eigenvalue from below; the estimate is
/// nudged up by its own tolerance so that `η = 1/L` stays a descent step.
const POWER_SAFETY: f64 = 1.0 + 1e-5;

/// Largest eigenvalue of a Hermitian PSD matrix stored row-major, via power
/// iteration from a fixed start vector.
pub fn lambda_max_hermitian(h: &[Complex64], dim: usize) -> f64 {
    debug_assert_eq!(h.len(), dim * dim);
    let mut v: Vec<Complex64> = (0..dim)
        .map(|i| {
            let x = i as f64;
            Complex64::new((0.9 * x + 1.0).cos(), (0.7 * x + 0.3).sin())
        })
        .collect();
    let norm = |u: &[Complex64]| u.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let n0 = norm(&v);
    for c in &mut v {
        *c /= n0;
    }
    let mut w = vec![Complex64::ZERO; dim];
    let mut lambda = 0.0f64;
    for _ in 0..POWER_MAX_ITERS {
        for (a, wa) in w.iter_mut().enumerate() {
            let mut acc = Complex64::ZERO;
            let row = &h[a * dim..(a + 1) * dim];
            for (b, hv) in row.iter().enumerate() {
                acc += hv * v[b];
            }
            *wa = acc;
        }
        let next = norm(&w);
        if next <= LIPSCHITZ_FLOOR {
            return 0.0;
        }
        for c in &mut w {
            *c /= next;
        }
        std::mem::swap(&mut v, &mut w);
        if (next - lambda).abs() <= POWER_TOL * next.max(LIPSCHITZ_FLOOR) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Builds the cache for one mode subproblem from the mode-`q` matricized
/// signal spectrum, the matricized atom spectra and the per-atom off-mode
/// Khatri-Rao matrices.
pub fn build_mode_cache(
    mode: usize,
    y_unfold: &Array2<Complex64>,
    atom_unfolds: &[Array2<Complex64>],
    offmode_kr: &[Array2<Complex64>],
) -> Result<ModeSubproblemCache> {
    let (n_freq, offmode_len) = y_unfold.dim();
    let n_atoms = atom_unfolds.len();
    if n_atoms == 0 || offmode_kr.len() != n_atoms {
        return Err(Error::invalid(
            "need one atom spectrum and one Khatri-Rao block per atom".to_string(),
        ));
    }
    let rank = offmode_kr[0].ncols();
    for (k, (a, b)) in atom_unfolds.iter().zip(offmode_kr).enumerate() {
        if a.dim() != (n_freq, offmode_len) {
            return Err(Error::shape(format!(
                "atom {k} spectrum has shape {:?}, expected {:?}",
                a.dim(),
                (n_freq, offmode_len)
            )));
        }
        if b.dim() != (offmode_len, rank) {
            return Err(Error::shape(format!(
                "atom {k} Khatri-Rao block has shape {:?}, expected {:?}",
                b.dim(),
                (offmode_len, rank)
            )));
        }
    }
    let kr = n_atoms * rank;
    let mut gram = vec![Complex64::ZERO; n_freq * kr * kr];
    let mut lin = vec![Complex64::ZERO; n_freq * kr];
    let y = y_unfold.as_slice().expect("contiguous");
    let atoms: Vec<&[Complex64]> = atom_unfolds
        .iter()
        .map(|a| a.as_slice().expect("contiguous"))
        .collect();
    let bs: Vec<&[Complex64]> = offmode_kr
        .iter()
        .map(|b| b.as_slice().expect("contiguous"))
        .collect();
    let mut w_row = vec![Complex64::ZERO; kr];
    for t in 0..n_freq {
        let gblock = &mut gram[t * kr * kr..(t + 1) * kr * kr];
        let lblock = &mut lin[t * kr..(t + 1) * kr];
        for i in 0..offmode_len {
            for k in 0..n_atoms {
                let d = atoms[k][t * offmode_len + i];
                let brow = &bs[k][i * rank..(i + 1) * rank];
                for (r, &b) in brow.iter().enumerate() {
                    w_row[k * rank + r] = b * d;
                }
            }
            let y_ti = y[t * offmode_len + i];
            for a in 0..kr {
                let ca = w_row[a].conj();
                lblock[a] += ca * y_ti;
                let grow = &mut gblock[a * kr..(a + 1) * kr];
                for b in a..kr {
                    grow[b] += ca * w_row[b];
                }
            }
        }
        for a in 0..kr {
            for b in 0..a {
                gblock[a * kr + b] = gblock[b * kr + a].conj();
            }
        }
    }
    let mut lambda: f64 = 0.0;
    for t in 0..n_freq {
        lambda = lambda.max(lambda_max_hermitian(
            &gram[t * kr * kr..(t + 1) * kr * kr],
            kr,
        ));
    }
    let lipschitz = (lambda * POWER_SAFETY / offmode_len as f64).max(LIPSCHITZ_FLOOR);
    Ok(ModeSubproblemCache {
        mode,
        n_freq,
        offmode_len,
        n_atoms,
        rank,
        gram,
        lin,
        lipschitz,
    })
}

impl ModeSubproblemCache {
    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn offmode_len(&self) -> usize {
        self.offmode_len
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn gram_block(&self, t: usize) -> &[Complex64] {
        let kr = self.n_atoms * self.rank;
        &self.gram[t * kr * kr..(t + 1) * kr * kr]
    }

    pub fn lin_block(&self, t: usize) -> &[Complex64] {
        let kr = self.n_atoms * self.rank;
        &self.lin[t * kr..(t + 1) * kr]
    }

    /// Applies the block-diagonal normal operator to a frequency-major
    /// stacked vector (`t` outer, atom-then-column inner).
    pub fn matvec(&self, v: &[Complex64], out: &mut [Complex64]) {
        let kr = self.n_atoms * self.rank;
        debug_assert_eq!(v.len(), self.n_freq * kr);
        debug_assert_eq!(out.len(), self.n_freq * kr);
        for t in 0..self.n_freq {
            let block = &self.gram[t * kr * kr..(t + 1) * kr * kr];
            let vt = &v[t * kr..(t + 1) * kr];
            let ot = &mut out[t * kr..(t + 1) * kr];
            for a in 0..kr {
                let row = &block[a * kr..(a + 1) * kr];
                let mut acc = Complex64::ZERO;
                for (b, h) in row.iter().enumerate() {
                    acc += h * vt[b];
                }
                ot[a] = acc;
            }
        }
    }
}

/// Anything that can evaluate the calibrated fidelity gradient of one mode
/// subproblem; implemented by the cached path and by the naive path that
/// touches every frequency.
pub trait ModeGradient {
    /// `(n_freq, n_atoms, rank)` of the subproblem.
    fn dims(&self) -> (usize, usize, usize);
    fn lipschitz(&self) -> f64;
    /// Gradient of the time-domain fidelity with respect to each atom's
    /// mode-`q` factor matrix.
    fn gradient(&self, factors: &[Array2<f64>]) -> Vec<Array2<f64>>;
}

fn factors_to_freq_major(factors: &[Array2<f64>], rank: usize) -> (usize, Vec<Complex64>) {
    let n_atoms = factors.len();
    let n_freq = factors[0].nrows();
    let kr = n_atoms * rank;
    let mut v = vec![Complex64::ZERO; n_freq * kr];
    for (k, f) in factors.iter().enumerate() {
        let spec = fft_columns(f);
        for t in 0..n_freq {
            for r in 0..rank {
                v[t * kr + k * rank + r] = spec[[t, r]];
            }
        }
    }
    (n_freq, v)
}

fn freq_major_to_gradients(
    v: &[Complex64],
    n_freq: usize,
    n_atoms: usize,
    rank: usize,
    scale: f64,
) -> Vec<Array2<f64>> {
    let kr = n_atoms * rank;
    (0..n_atoms)
        .map(|k| {
            let mut m = Array2::from_elem((n_freq, rank), Complex64::ZERO);
            for t in 0..n_freq {
                for r in 0..rank {
                    m[[t, r]] = v[t * kr + k * rank + r];
                }
            }
            let mut g = ifft_columns_re(&m);
            g.mapv_inplace(|x| x * scale);
            g
        })
        .collect()
}

impl ModeGradient for ModeSubproblemCache {
    fn dims(&self) -> (usize, usize, usize) {
        (self.n_freq, self.n_atoms, self.rank)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn gradient(&self, factors: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let (_, v) = factors_to_freq_major(factors, self.rank);
        let mut gv = vec![Complex64::ZERO; v.len()];
        self.matvec(&v, &mut gv);
        for (g, l) in gv.iter_mut().zip(&self.lin) {
            *g -= l;
        }
        freq_major_to_gradients(
            &gv,
            self.n_freq,
            self.n_atoms,
            self.rank,
            1.0 / self.offmode_len as f64,
        )
    }
}

/// Gradient path that skips the cached Gram blocks and instead touches all
/// `Π n_i` frequencies every evaluation. Selected by `--no-gram-opt`; the
/// result matches the cached path up to floating-point roundoff.
pub struct NaiveModeOperator<'a> {
    y_unfold: &'a Array2<Complex64>,
    atom_unfolds: &'a [Array2<Complex64>],
    offmode_kr: &'a [Array2<Complex64>],
    rank: usize,
    lipschitz: f64,
}

impl<'a> NaiveModeOperator<'a> {
    pub fn new(
        y_unfold: &'a Array2<Complex64>,
        atom_unfolds: &'a [Array2<Complex64>],
        offmode_kr: &'a [Array2<Complex64>],
    ) -> Result<Self> {
        let (n_freq, offmode_len) = y_unfold.dim();
        let n_atoms = atom_unfolds.len();
        if n_atoms == 0 || offmode_kr.len() != n_atoms {
            return Err(Error::invalid(
                "need one atom spectrum and one Khatri-Rao block per atom".to_string(),
            ));
        }
        let rank = offmode_kr[0].ncols();
        let kr = n_atoms * rank;
        let mut op = NaiveModeOperator {
            y_unfold,
            atom_unfolds,
            offmode_kr,
            rank,
            lipschitz: LIPSCHITZ_FLOOR,
        };
        // Matrix-free power iteration on the block-diagonal normal operator.
        let dim = n_freq * kr;
        let mut v: Vec<Complex64> = (0..dim)
            .map(|i| {
                let x = i as f64;
                Complex64::new((0.9 * x + 1.0).cos(), (0.7 * x + 0.3).sin())
            })
            .collect();
        let norm = |u: &[Complex64]| u.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let n0 = norm(&v);
        for c in &mut v {
            *c /= n0;
        }
        let mut w = vec![Complex64::ZERO; dim];
        let mut lambda = 0.0f64;
        for _ in 0..POWER_MAX_ITERS {
            op.apply_normal(&v, &mut w);
            let next = norm(&w);
            if next <= LIPSCHITZ_FLOOR {
                lambda = 0.0;
                break;
            }
            for c in &mut w {
                *c /= next;
            }
            std::mem::swap(&mut v, &mut w);
            if (next - lambda).abs() <= POWER_TOL * next.max(LIPSCHITZ_FLOOR) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        op.lipschitz = (lambda * POWER_SAFETY / offmode_len as f64).max(LIPSCHITZ_FLOOR);
        Ok(op)
    }

    /// Applies `W^H W` frequency by frequency without any cached blocks.
    fn apply_normal(&self, v: &[Complex64], out: &mut [Complex64]) {
        let (n_freq, offmode_len) = self.y_unfold.dim();
        let n_atoms = self.atom_unfolds.len();
        let rank = self.rank;
        let kr = n_atoms * rank;
        let atoms: Vec<&[Complex64]> = self
            .atom_unfolds
            .iter()
            .map(|a| a.as_slice().expect("contiguous"))
            .collect();
        let bs: Vec<&[Complex64]> = self
            .offmode_kr
            .iter()
            .map(|b| b.as_slice().expect("contiguous"))
            .collect();
        let mut s = vec![Complex64::ZERO; offmode_len];
        for t in 0..n_freq {
            let vt = &v[t * kr..(t + 1) * kr];
            s.fill(Complex64::ZERO);
            for k in 0..n_atoms {
                let drow = &atoms[k][t * offmode_len..(t + 1) * offmode_len];
                let vk = &vt[k * rank..(k + 1) * rank];
                for i in 0..offmode_len {
                    let brow = &bs[k][i * rank..(i + 1) * rank];
                    let mut acc = Complex64::ZERO;
                    for (r, &b) in brow.iter().enumerate() {
                        acc += b * vk[r];
                    }
                    s[i] += drow[i] * acc;
                }
            }
            let ot = &mut out[t * kr..(t + 1) * kr];
            for k in 0..n_atoms {
                let drow = &atoms[k][t * offmode_len..(t + 1) * offmode_len];
                let ok = &mut ot[k * rank..(k + 1) * rank];
                ok.fill(Complex64::ZERO);
                for i in 0..offmode_len {
                    let w_i = (drow[i]).conj() * s[i];
                    let brow = &bs[k][i * rank..(i + 1) * rank];
                    for (r, &b) in brow.iter().enumerate() {
                        ok[r] += b.conj() * w_i;
                    }
                }
            }
        }
    }

    fn apply_lin(&self, out: &mut [Complex64]) {
        let (n_freq, offmode_len) = self.y_unfold.dim();
        let n_atoms = self.atom_unfolds.len();
        let rank = self.rank;
        let kr = n_atoms * rank;
        let y = self.y_unfold.as_slice().expect("contiguous");
        for t in 0..n_freq {
            let ot = &mut out[t * kr..(t + 1) * kr];
            for k in 0..n_atoms {
                let drow = self.atom_unfolds[k].as_slice().expect("contiguous");
                let drow = &drow[t * offmode_len..(t + 1) * offmode_len];
                let bsk = self.offmode_kr[k].as_slice().expect("contiguous");
                let ok = &mut ot[k * rank..(k + 1) * rank];
                for i in 0..offmode_len {
                    let w_i = drow[i].conj() * y[t * offmode_len + i];
                    let brow = &bsk[i * rank..(i + 1) * rank];
                    for (r, &b) in brow.iter().enumerate() {
                        ok[r] -= b.conj() * w_i;
                    }
                }
            }
        }
    }
}

impl ModeGradient for NaiveModeOperator<'_> {
    fn dims(&self) -> (usize, usize, usize) {
        (self.y_unfold.nrows(), self.atom_unfolds.len(), self.rank)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn gradient(&self, factors: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let (n_freq, offmode_len) = self.y_unfold.dim();
        let (_, v) = factors_to_freq_major(factors, self.rank);
        let mut gv = vec![Complex64::ZERO; v.len()];
        self.apply_normal(&v, &mut gv);
        self.apply_lin(&mut gv);
        freq_major_to_gradients(
            &gv,
            n_freq,
            self.atom_unfolds.len(),
            self.rank,
            1.0 / offmode_len as f64,
        )
    }
}

/// Elastic-net proximal map of `η(α‖·‖₁ + β‖·‖_F²)`, optionally restricted
/// to the nonnegative orthant.
pub fn prox_scalar(v: f64, eta: f64, alpha: f64, beta: f64, nonnegative: bool) -> f64 {
    let denom = 1.0 + 2.0 * eta * beta;
    if nonnegative {
        (v - eta * alpha).max(0.0) / denom
    } else {
        v.signum() * (v.abs() - eta * alpha).max(0.0) / denom
    }
}

pub fn prox_g(v: &Array2<f64>, eta: f64, alpha: f64, beta: f64, nonnegative: bool) -> Array2<f64> {
    v.mapv(|x| prox_scalar(x, eta, alpha, beta, nonnegative))
}

#[derive(Debug, Clone, Copy)]
pub struct FistaOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Plain proximal-gradient updates (no momentum), which are monotone in
    /// the subproblem objective for `η = 1/L`.
    pub monotone: bool,
}

impl Default for FistaOptions {
    fn default() -> Self {
        FistaOptions {
            tol: 1e-5,
            max_iters: 200,
            monotone: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FistaOutcome {
    pub factors: Vec<Array2<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

/// Accelerated proximal gradient over the mode-`q` factors of every atom,
/// stopping once the max-norm change between consecutive iterates falls
/// below `tol` or the iteration budget runs out.
pub fn fista_mode_q<O: ModeGradient>(
    op: &O,
    init: &[Array2<f64>],
    alpha: f64,
    beta: f64,
    nonnegative: bool,
    opts: &FistaOptions,
) -> Result<FistaOutcome> {
    let (n_freq, n_atoms, rank) = op.dims();
    if init.len() != n_atoms || init.iter().any(|f| f.dim() != (n_freq, rank)) {
        return Err(Error::shape(format!(
            "initial factors must be {n_atoms} matrices of shape {:?}",
            (n_freq, rank)
        )));
    }
    let eta = 1.0 / op.lipschitz().max(LIPSCHITZ_FLOOR);
    let mut z_prev: Vec<Array2<f64>> = init.to_vec();
    let mut w = z_prev.clone();
    let mut t_s = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..opts.max_iters {
        iterations += 1;
        let grad = op.gradient(&w);
        let mut max_delta = 0.0f64;
        let mut finite = true;
        let z_new: Vec<Array2<f64>> = (0..n_atoms)
            .map(|k| {
                let mut zk = Array2::zeros((n_freq, rank));
                for ((z, &wv), (&g, &zp)) in zk
                    .iter_mut()
                    .zip(w[k].iter())
                    .zip(grad[k].iter().zip(z_prev[k].iter()))
                {
                    let v = prox_scalar(wv - eta * g, eta, alpha, beta, nonnegative);
                    finite &= v.is_finite();
                    max_delta = max_delta.max((v - zp).abs());
                    *z = v;
                }
                zk
            })
            .collect();
        if !finite {
            return Err(Error::divergence(format!(
                "non-finite activation iterate after {iterations} inner iterations"
            )));
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_s * t_s).sqrt());
        if opts.monotone {
            w = z_new.clone();
        } else {
            let momentum = (t_s - 1.0) / t_next;
            for k in 0..n_atoms {
                let mut wk = z_new[k].clone();
                for ((wv, &zn), &zp) in wk.iter_mut().zip(z_new[k].iter()).zip(z_prev[k].iter()) {
                    *wv = zn + momentum * (zn - zp);
                }
                w[k] = wk;
            }
        }
        t_s = t_next;
        z_prev = z_new;
        if max_delta <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FistaOutcome {
        factors: z_prev,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{circular_convolve_direct, dft, modewise_dft};
    use crate::tensor::{kruskal_compose, DenseTensor, Dictionary};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Instance {
        y: DenseTensor,
        dict: Dictionary,
        factors: Vec<Vec<Array2<f64>>>, // [atom][mode]
        shape: Vec<usize>,
        rank: usize,
    }

    fn random_instance(shape: &[usize], window: &[usize], k: usize, rank: usize, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dict = Dictionary::random_unit(window, k, &mut rng);
        let factors: Vec<Vec<Array2<f64>>> = (0..k)
            .map(|_| {
                shape
                    .iter()
                    .map(|&n| Array2::from_shape_fn((n, rank), |_| rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let len = shape.iter().product();
        let y = DenseTensor::new(
            shape.to_vec(),
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        Instance {
            y,
            dict,
            factors,
            shape: shape.to_vec(),
            rank,
        }
    }

    fn fidelity(inst: &Instance, factors: &[Vec<Array2<f64>>]) -> f64 {
        let mut recon = DenseTensor::zeros(&inst.shape);
        for (k, fk) in factors.iter().enumerate() {
            let z = kruskal_compose(fk);
            let atom = inst.dict.atom(k).zero_pad(&inst.shape).unwrap();
            let conv = circular_convolve_direct(&atom, &z).unwrap();
            for (r, c) in recon.data_mut().iter_mut().zip(conv.data()) {
                *r += c;
            }
        }
        let mut f = 0.0;
        for (y, r) in inst.y.data().iter().zip(recon.data()) {
            f += (y - r) * (y - r);
        }
        0.5 * f
    }

    fn build_cache_for(inst: &Instance, mode: usize) -> ModeSubproblemCache {
        let y_spec = dft(&inst.y);
        let y_unfold = y_spec.unfold(mode);
        let atom_unfolds: Vec<Array2<Complex64>> = inst
            .dict
            .padded_atoms(&inst.shape)
            .unwrap()
            .iter()
            .map(|a| dft(a).unfold(mode))
            .collect();
        let kr: Vec<Array2<Complex64>> = inst
            .factors
            .iter()
            .map(|fk| offmode_khatri_rao(&modewise_dft(fk), mode))
            .collect();
        build_mode_cache(mode, &y_unfold, &atom_unfolds, &kr).unwrap()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let inst = random_instance(&[4, 3, 4], &[2, 2, 2], 2, 2, 41);
        for mode in 0..3 {
            let cache = build_cache_for(&inst, mode);
            let current: Vec<Array2<f64>> =
                inst.factors.iter().map(|fk| fk[mode].clone()).collect();
            let grad = cache.gradient(&current);
            let h = 1e-5;
            let mut diff_sq = 0.0;
            let mut ref_sq = 0.0;
            for k in 0..2 {
                for t in 0..inst.shape[mode] {
                    for r in 0..inst.rank {
                        let mut plus = inst.factors.clone();
                        plus[k][mode][[t, r]] += h;
                        let mut minus = inst.factors.clone();
                        minus[k][mode][[t, r]] -= h;
                        let fd = (fidelity(&inst, &plus) - fidelity(&inst, &minus)) / (2.0 * h);
                        let g = grad[k][[t, r]];
                        diff_sq += (fd - g) * (fd - g);
                        ref_sq += fd * fd;
                    }
                }
            }
            let rel = diff_sq.sqrt() / ref_sq.sqrt().max(1e-300);
            assert!(rel < 1e-6, "mode {mode}: relative gradient error {rel}");
        }
    }

    #[test]
    fn naive_path_matches_cached_path() {
        let inst = random_instance(&[4, 5, 3], &[2, 2, 2], 3, 2, 42);
        for mode in 0..3 {
            let y_spec = dft(&inst.y);
            let y_unfold = y_spec.unfold(mode);
            let atom_unfolds: Vec<Array2<Complex64>> = inst
                .dict
                .padded_atoms(&inst.shape)
                .unwrap()
                .iter()
                .map(|a| dft(a).unfold(mode))
                .collect();
            let kr: Vec<Array2<Complex64>> = inst
                .factors
                .iter()
                .map(|fk| offmode_khatri_rao(&modewise_dft(fk), mode))
                .collect();
            let cache = build_mode_cache(mode, &y_unfold, &atom_unfolds, &kr).unwrap();
            let naive = NaiveModeOperator::new(&y_unfold, &atom_unfolds, &kr).unwrap();
            let current: Vec<Array2<f64>> =
                inst.factors.iter().map(|fk| fk[mode].clone()).collect();
            let g1 = cache.gradient(&current);
            let g2 = naive.gradient(&current);
            let scale = g1
                .iter()
                .flat_map(|g| g.iter())
                .map(|v| v.abs())
                .fold(0.0, f64::max)
                .max(1.0);
            for (a, b) in g1.iter().zip(&g2) {
                let err = (a - b).iter().map(|v| v.abs()).fold(0.0, f64::max);
                assert!(err < 1e-10 * scale, "gradient deviation {err}");
            }
            let rel = (cache.lipschitz() - naive.lipschitz()).abs() / cache.lipschitz();
            assert!(rel < 1e-4, "lipschitz deviation {rel}");
        }
    }

    #[test]
    fn prox_matches_numeric_minimization() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for &nonneg in &[false, true] {
            for _ in 0..200 {
                let v: f64 = rng.random_range(-2.0..2.0);
                let eta: f64 = rng.random_range(0.01..2.0);
                let alpha: f64 = rng.random_range(0.0..1.0);
                let beta: f64 = rng.random_range(0.0..1.0);
                let got = prox_scalar(v, eta, alpha, beta, nonneg);
                let objective = |u: f64| {
                    0.5 * (u - v) * (u - v) + eta * alpha * u.abs() + eta * beta * u * u
                };
                // The objective is quadratic away from zero, so three samples
                // on one side of the kink pin that piece's vertex exactly;
                // the minimizer is the best of the piece vertices and zero.
                let vertex = |x2: f64, d: f64| {
                    let (f1, f2, f3) = (objective(x2 - d), objective(x2), objective(x2 + d));
                    x2 + d * (f1 - f3) / (2.0 * (f1 - 2.0 * f2 + f3))
                };
                let d = 0.25 * v.abs().max(1.0);
                let mut candidates = vec![0.0];
                let right = vertex(2.0 * d, d);
                if right > 0.0 {
                    candidates.push(right);
                }
                if !nonneg {
                    let left = vertex(-2.0 * d, d);
                    if left < 0.0 {
                        candidates.push(left);
                    }
                }
                let best = candidates
                    .into_iter()
                    .min_by(|a, b| objective(*a).partial_cmp(&objective(*b)).unwrap())
                    .unwrap();
                assert!(
                    (got - best).abs() < 1e-8,
                    "prox({v}, {eta}, {alpha}, {beta}, {nonneg}) = {got}, search found {best}"
                );
            }
        }
    }

    #[test]
    fn fista_reaches_a_fixed_point() {
        let inst = random_instance(&[4, 4, 3], &[2, 2, 2], 2, 2, 44);
        let cache = build_cache_for(&inst, 1);
        let init: Vec<Array2<f64>> = (0..2).map(|_| Array2::zeros((4, 2))).collect();
        let opts = FistaOptions {
            tol: 1e-12,
            max_iters: 4000,
            monotone: false,
        };
        let out = fista_mode_q(&cache, &init, 0.01, 0.001, false, &opts).unwrap();
        let eta = 1.0 / cache.lipschitz();
        let grad = cache.gradient(&out.factors);
        for (factor, grad_k) in out.factors.iter().zip(&grad) {
            for (z, (&g, &w)) in factor.iter().zip(grad_k.iter().zip(factor.iter())) {
                let fixed = prox_scalar(w - eta * g, eta, 0.01, 0.001, false);
                assert!((z - fixed).abs() < 1e-7, "fixed-point residual {}", (z - fixed).abs());
            }
        }
    }

    #[test]
    fn ista_mode_is_monotone() {
        let inst = random_instance(&[5, 4, 3], &[2, 2, 2], 2, 2, 45);
        let mode = 0;
        let cache = build_cache_for(&inst, mode);
        let alpha = 0.05;
        let beta = 0.01;
        let eta = 1.0 / cache.lipschitz();
        let mut factors: Vec<Array2<f64>> =
            inst.factors.iter().map(|fk| fk[mode].clone()).collect();
        let penalized = |inst: &Instance, mats: &[Array2<f64>]| {
            let mut full = inst.factors.clone();
            for (k, m) in mats.iter().enumerate() {
                full[k][mode] = m.clone();
            }
            let mut val = fidelity(inst, &full);
            for m in mats {
                val += alpha * m.iter().map(|v| v.abs()).sum::<f64>();
                val += beta * m.iter().map(|v| v * v).sum::<f64>();
            }
            val
        };
        let mut prev = penalized(&inst, &factors);
        for _ in 0..25 {
            let grad = cache.gradient(&factors);
            for k in 0..factors.len() {
                let stepped = &factors[k] - &grad[k].mapv(|g| eta * g);
                factors[k] = prox_g(&stepped, eta, alpha, beta, false);
            }
            let next = penalized(&inst, &factors);
            assert!(
                next <= prev + 1e-9,
                "proximal step increased the objective: {prev} -> {next}"
            );
            prev = next;
        }
    }

    #[test]
    fn divergent_input_is_reported() {
        let inst = random_instance(&[3, 3, 3], &[2, 2, 2], 1, 1, 46);
        let mode = 0;
        let y_spec = dft(&inst.y);
        let mut y_unfold = y_spec.unfold(mode);
        y_unfold[[0, 0]] = Complex64::new(f64::NAN, 0.0);
        let atom_unfolds: Vec<Array2<Complex64>> = inst
            .dict
            .padded_atoms(&inst.shape)
            .unwrap()
            .iter()
            .map(|a| dft(a).unfold(mode))
            .collect();
        let kr: Vec<Array2<Complex64>> = inst
            .factors
            .iter()
            .map(|fk| offmode_khatri_rao(&modewise_dft(fk), mode))
            .collect();
        let cache = build_mode_cache(mode, &y_unfold, &atom_unfolds, &kr).unwrap();
        let init: Vec<Array2<f64>> = vec![Array2::zeros((3, 1))];
        let res = fista_mode_q(&cache, &init, 0.0, 0.0, false, &FistaOptions::default());
        assert!(matches!(res, Err(Error::Divergence(_))));
    }
}
