//! Multidimensional DFTs and circular convolution.
//!
//! The forward transform is unnormalized and the inverse carries the full
//! `1/Π n_i` factor, so `idft(dft(t)) = t` and circular convolution is the
//! elementwise product of spectra. Parseval's identity under this convention
//! reads `‖t‖_F² = ‖dft(t)‖_F² / Π n_i`.

use std::sync::{Arc, LazyLock, Mutex};

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::{unfold_generic, DenseTensor};

static PLANNER: LazyLock<Mutex<FftPlanner<f64>>> = LazyLock::new(|| Mutex::new(FftPlanner::new()));

pub(crate) fn plan_forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.lock().unwrap().plan_fft_forward(len)
}

pub(crate) fn plan_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.lock().unwrap().plan_fft_inverse(len)
}

/// Dense complex tensor holding a multidimensional spectrum, row-major like
/// [`DenseTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTensor {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

impl SpectralTensor {
    pub fn new(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || data.len() != len {
            return Err(Error::shape(format!(
                "spectrum of shape {shape:?} cannot hold {} elements",
                data.len()
            )));
        }
        Ok(SpectralTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        SpectralTensor {
            shape: shape.to_vec(),
            data: vec![Complex64::ZERO; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn unfold(&self, mode: usize) -> Array2<Complex64> {
        unfold_generic(&self.data, &self.shape, mode)
    }
}

/// In-place unnormalized transform of every length-`n_axis` line along one
/// axis; `inverse` applies the conjugate (still unnormalized) transform.
fn transform_axis(data: &mut [Complex64], shape: &[usize], axis: usize, inverse: bool) {
    let n = shape[axis];
    if n == 1 {
        return;
    }
    let fft = if inverse {
        plan_inverse(n)
    } else {
        plan_forward(n)
    };
    let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    if inner == 1 {
        for o in 0..outer {
            fft.process_with_scratch(&mut data[o * n..(o + 1) * n], &mut scratch);
        }
        return;
    }
    let mut line = vec![Complex64::ZERO; n];
    for o in 0..outer {
        let base_block = o * n * inner;
        for i in 0..inner {
            let base = base_block + i;
            for (t, v) in line.iter_mut().enumerate() {
                *v = data[base + t * inner];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (t, v) in line.iter().enumerate() {
                data[base + t * inner] = *v;
            }
        }
    }
}

/// Unnormalized multidimensional DFT of a real tensor.
pub fn dft(t: &DenseTensor) -> SpectralTensor {
    let mut data: Vec<Complex64> = t.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for axis in 0..t.order() {
        transform_axis(&mut data, t.shape(), axis, false);
    }
    SpectralTensor {
        shape: t.shape().to_vec(),
        data,
    }
}

/// Inverse multidimensional DFT carrying the `1/Π n_i` factor; returns the
/// real part, which recovers the original tensor for spectra of real data.
pub fn idft(s: &SpectralTensor) -> DenseTensor {
    let data = idft_complex(s);
    let mut out = DenseTensor::zeros(&s.shape);
    for (o, v) in out.data_mut().iter_mut().zip(&data) {
        *o = v.re;
    }
    out
}

pub(crate) fn idft_complex(s: &SpectralTensor) -> Vec<Complex64> {
    let mut data = s.data.clone();
    for axis in 0..s.shape.len() {
        transform_axis(&mut data, &s.shape, axis, true);
    }
    let scale = 1.0 / s.len() as f64;
    for v in &mut data {
        *v *= scale;
    }
    data
}

/// Unnormalized forward DFT of each column of a real matrix.
pub fn fft_columns(mat: &Array2<f64>) -> Array2<Complex64> {
    let (n, cols) = mat.dim();
    let mut out = Array2::from_elem((n, cols), Complex64::ZERO);
    if n == 0 || cols == 0 {
        return out;
    }
    let fft = plan_forward(n);
    let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
    let mut line = vec![Complex64::ZERO; n];
    for c in 0..cols {
        for (t, v) in line.iter_mut().enumerate() {
            *v = Complex64::new(mat[[t, c]], 0.0);
        }
        fft.process_with_scratch(&mut line, &mut scratch);
        for (t, v) in line.iter().enumerate() {
            out[[t, c]] = *v;
        }
    }
    out
}

/// Normalized inverse DFT (`1/n` per column) of each column, real part.
pub fn ifft_columns_re(mat: &Array2<Complex64>) -> Array2<f64> {
    let (n, cols) = mat.dim();
    let mut out = Array2::zeros((n, cols));
    if n == 0 || cols == 0 {
        return out;
    }
    let fft = plan_inverse(n);
    let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
    let mut line = vec![Complex64::ZERO; n];
    let scale = 1.0 / n as f64;
    for c in 0..cols {
        for (t, v) in line.iter_mut().enumerate() {
            *v = mat[[t, c]];
        }
        fft.process_with_scratch(&mut line, &mut scratch);
        for (t, v) in line.iter().enumerate() {
            out[[t, c]] = v.re * scale;
        }
    }
    out
}

/// Transforms every factor matrix of a Kruskal activation column by column.
/// Composing the transformed factors reproduces the full spectrum of the
/// composed tensor, since the multidimensional DFT factorizes over modes.
pub fn modewise_dft(factors: &[Array2<f64>]) -> Vec<Array2<Complex64>> {
    factors.iter().map(fft_columns).collect()
}

/// Circular convolution via the Fourier domain; both tensors must share a
/// shape (pad the smaller one first).
pub fn circular_convolve(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "circular convolution needs matching shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut sa = dft(a);
    let sb = dft(b);
    for (x, y) in sa.data_mut().iter_mut().zip(sb.data()) {
        *x *= *y;
    }
    Ok(idft(&sa))
}

/// Direct-sum circular convolution, quadratic in the tensor size. Kept as an
/// independent reference for validating the Fourier path.
pub fn circular_convolve_direct(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "circular convolution needs matching shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let shape = a.shape().to_vec();
    let p = shape.len();
    let mut out = DenseTensor::zeros(&shape);
    let len = a.len();
    let mut ia = vec![0usize; p];
    for fa in 0..len {
        let va = a.data()[fa];
        if va != 0.0 {
            let mut ib = vec![0usize; p];
            for fb in 0..len {
                let vb = b.data()[fb];
                if vb != 0.0 {
                    let mut off = 0;
                    for m in 0..p {
                        let s = (ia[m] + ib[m]) % shape[m];
                        off = off * shape[m] + s;
                    }
                    out.data_mut()[off] += va * vb;
                }
                for m in (0..p).rev() {
                    ib[m] += 1;
                    if ib[m] < shape[m] {
                        break;
                    }
                    ib[m] = 0;
                }
            }
        }
        for m in (0..p).rev() {
            ia[m] += 1;
            if ia[m] < shape[m] {
                break;
            }
            ia[m] = 0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{kruskal_compose, kruskal_compose_complex};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseTensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn idft_inverts_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for shape in [vec![4usize, 5, 3], vec![7, 2], vec![6], vec![1, 3, 1]] {
            let t = random_tensor(&shape, &mut rng);
            let back = idft(&dft(&t));
            let err = t
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "shape {shape:?}: max abs deviation {err}");
        }
    }

    #[test]
    fn parseval_under_this_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let t = random_tensor(&[5, 4, 3], &mut rng);
        let s = dft(&t);
        let lhs = t.frobenius_norm().powi(2);
        let rhs = s.norm_sqr() / t.len() as f64;
        assert!((lhs - rhs).abs() < 1e-9 * lhs.max(1.0));
    }

    #[test]
    fn modewise_dft_composes_to_full_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let shape = [
                rng.random_range(2..6usize),
                rng.random_range(2..6usize),
                rng.random_range(2..6usize),
            ];
            let rank = rng.random_range(1..4usize);
            let factors: Vec<Array2<f64>> = shape
                .iter()
                .map(|&n| Array2::from_shape_fn((n, rank), |_| rng.random_range(-1.0..1.0)))
                .collect();
            let full = dft(&kruskal_compose(&factors));
            let (cshape, cdata) = kruskal_compose_complex(&modewise_dft(&factors));
            assert_eq!(cshape.as_slice(), full.shape());
            let err = full
                .data()
                .iter()
                .zip(&cdata)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "max abs deviation {err}");
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for shape in [vec![4usize, 4, 4], vec![5, 3], vec![8]] {
            let a = random_tensor(&shape, &mut rng);
            let b = random_tensor(&shape, &mut rng);
            let fast = circular_convolve(&a, &b).unwrap();
            let slow = circular_convolve_direct(&a, &b).unwrap();
            let err = fast
                .data()
                .iter()
                .zip(slow.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "shape {shape:?}: max abs deviation {err}");
        }
    }

    #[test]
    fn convolving_with_shifted_delta_rolls_the_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let t = random_tensor(&[3, 4], &mut rng);
        let mut delta = DenseTensor::zeros(&[3, 4]);
        delta.set(&[1, 2], 1.0);
        let rolled = circular_convolve(&t, &delta).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let want = t.get(&[i, j]);
                let got = rolled.get(&[(i + 1) % 3, (j + 2) % 4]);
                assert!((want - got).abs() < 1e-10);
            }
        }
    }
}
