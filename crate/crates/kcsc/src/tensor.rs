//! Dense tensors, Kruskal-form activation tensors and dictionaries.
//!
//! Storage is row-major throughout: for shape `(n_0, …, n_{p-1})` the last
//! index varies fastest. The mode-`q` matricization follows the standard
//! convention in which the first non-`q` mode varies fastest along columns,
//! so that `unfold(compose(F), q) = F_q * khatri_rao_reverse(F \ q)^T`.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// Dense real tensor of arbitrary order with row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("degenerate tensor shape {shape:?}")));
        }
        if data.len() != len {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        DenseTensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, n) in index.iter().zip(&self.shape) {
            debug_assert!(i < n);
            off = off * n + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(&self.data)
    }

    /// Scales the tensor onto the unit Frobenius ball; tensors already
    /// inside are returned unchanged.
    pub fn project_unit_ball(&mut self) {
        let norm = self.frobenius_norm();
        if norm > 1.0 {
            let inv = 1.0 / norm;
            for v in &mut self.data {
                *v *= inv;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Mode-`q` matricization into an `n_q x (len / n_q)` matrix.
    pub fn unfold(&self, mode: usize) -> Array2<f64> {
        unfold_slice(&self.data, &self.shape, mode)
    }

    /// Inverse of [`DenseTensor::unfold`] for the given shape.
    pub fn fold(mat: ArrayView2<'_, f64>, mode: usize, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if mode >= shape.len() {
            return Err(Error::invalid(format!(
                "mode {mode} out of range for order {}",
                shape.len()
            )));
        }
        if mat.nrows() != shape[mode] || mat.nrows() * mat.ncols() != len {
            return Err(Error::shape(format!(
                "{}x{} matrix does not fold into {shape:?} along mode {mode}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let mut data = vec![0.0; len];
        fold_into(&mut data, shape, mode, |r, c| mat[[r, c]]);
        Ok(DenseTensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Embeds `self` at the origin corner of a larger shape, zero elsewhere.
    pub fn zero_pad(&self, shape: &[usize]) -> Result<Self> {
        if shape.len() != self.shape.len()
            || self.shape.iter().zip(shape).any(|(w, n)| w > n)
        {
            return Err(Error::shape(format!(
                "cannot pad shape {:?} to {shape:?}",
                self.shape
            )));
        }
        let mut out = DenseTensor::zeros(shape);
        copy_corner(&self.data, &self.shape, out.data_mut(), shape);
        Ok(out)
    }

    /// Extracts the origin-corner block of the given window shape.
    pub fn crop(&self, window: &[usize]) -> Result<Self> {
        if window.len() != self.shape.len()
            || window.iter().zip(&self.shape).any(|(w, n)| w > n)
        {
            return Err(Error::shape(format!(
                "cannot crop shape {:?} to {window:?}",
                self.shape
            )));
        }
        let mut out = DenseTensor::zeros(window);
        copy_corner_from(&self.data, &self.shape, out.data_mut(), window);
        Ok(out)
    }
}

fn copy_corner(src: &[f64], src_shape: &[usize], dst: &mut [f64], dst_shape: &[usize]) {
    // Recursive block copy: src sits at the origin corner of dst.
    fn rec(src: &[f64], src_shape: &[usize], dst: &mut [f64], dst_shape: &[usize]) {
        if src_shape.len() == 1 {
            dst[..src_shape[0]].copy_from_slice(&src[..src_shape[0]]);
            return;
        }
        let src_block: usize = src_shape[1..].iter().product();
        let dst_block: usize = dst_shape[1..].iter().product();
        for i in 0..src_shape[0] {
            rec(
                &src[i * src_block..(i + 1) * src_block],
                &src_shape[1..],
                &mut dst[i * dst_block..(i + 1) * dst_block],
                &dst_shape[1..],
            );
        }
    }
    rec(src, src_shape, dst, dst_shape);
}

fn copy_corner_from(src: &[f64], src_shape: &[usize], dst: &mut [f64], dst_shape: &[usize]) {
    // Inverse of copy_corner: reads the origin corner of src into dst.
    fn rec(src: &[f64], src_shape: &[usize], dst: &mut [f64], dst_shape: &[usize]) {
        if dst_shape.len() == 1 {
            dst[..dst_shape[0]].copy_from_slice(&src[..dst_shape[0]]);
            return;
        }
        let src_block: usize = src_shape[1..].iter().product();
        let dst_block: usize = dst_shape[1..].iter().product();
        for i in 0..dst_shape[0] {
            rec(
                &src[i * src_block..(i + 1) * src_block],
                &src_shape[1..],
                &mut dst[i * dst_block..(i + 1) * dst_block],
                &dst_shape[1..],
            );
        }
    }
    rec(src, src_shape, dst, dst_shape);
}

pub fn frobenius_norm(data: &[f64]) -> f64 {
    data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Generic mode-`q` matricization shared by the real and spectral paths.
pub(crate) fn unfold_generic<T: Copy + num_traits::Zero>(
    data: &[T],
    shape: &[usize],
    mode: usize,
) -> Array2<T> {
    assert!(mode < shape.len(), "mode {mode} out of range");
    let n_q = shape[mode];
    let cols = data.len() / n_q;
    let mut out = Array2::zeros((n_q, cols));
    let p = shape.len();
    // Column strides: the first non-mode index varies fastest.
    let mut col_stride = vec![0usize; p];
    let mut acc = 1;
    for k in 0..p {
        if k == mode {
            continue;
        }
        col_stride[k] = acc;
        acc *= shape[k];
    }
    let mut idx = vec![0usize; p];
    for &v in data {
        let mut col = 0;
        for k in 0..p {
            if k != mode {
                col += idx[k] * col_stride[k];
            }
        }
        out[[idx[mode], col]] = v;
        // Row-major odometer: last index fastest.
        for m in (0..p).rev() {
            idx[m] += 1;
            if idx[m] < shape[m] {
                break;
            }
            idx[m] = 0;
        }
    }
    out
}

fn unfold_slice(data: &[f64], shape: &[usize], mode: usize) -> Array2<f64> {
    unfold_generic(data, shape, mode)
}

fn fold_into(data: &mut [f64], shape: &[usize], mode: usize, mat: impl Fn(usize, usize) -> f64) {
    let p = shape.len();
    let mut col_stride = vec![0usize; p];
    let mut acc = 1;
    for k in 0..p {
        if k == mode {
            continue;
        }
        col_stride[k] = acc;
        acc *= shape[k];
    }
    let mut idx = vec![0usize; p];
    for v in data.iter_mut() {
        let mut col = 0;
        for k in 0..p {
            if k != mode {
                col += idx[k] * col_stride[k];
            }
        }
        *v = mat(idx[mode], col);
        for m in (0..p).rev() {
            idx[m] += 1;
            if idx[m] < shape[m] {
                break;
            }
            idx[m] = 0;
        }
    }
}

/// Column-wise Khatri-Rao product taken in reverse order:
/// `khatri_rao_reverse([M_0, …, M_{m-1}])` has columns
/// `M_{m-1}[:,r] ⊗ … ⊗ M_0[:,r]`, so the row index of `M_0` varies fastest.
/// This is the matrix `B` satisfying `unfold(compose(F), q) = F_q B^T` when
/// called on the factors with mode `q` removed.
pub fn khatri_rao_reverse<T>(mats: &[ArrayView2<'_, T>]) -> Array2<T>
where
    T: Copy + num_traits::Zero + num_traits::One + std::ops::Mul<Output = T>,
{
    assert!(!mats.is_empty());
    let rank = mats[0].ncols();
    assert!(mats.iter().all(|m| m.ncols() == rank));
    let rows: usize = mats.iter().map(|m| m.nrows()).product();
    let mut out = Array2::zeros((rows, rank));
    for r in 0..rank {
        let mut col = vec![T::one()];
        for m in mats {
            let mut next = Vec::with_capacity(col.len() * m.nrows());
            for i in 0..m.nrows() {
                let v = m[[i, r]];
                // Earlier factors vary fastest, so they form the inner block.
                for &c in &col {
                    next.push(v * c);
                }
            }
            col = next;
        }
        for (i, v) in col.into_iter().enumerate() {
            out[[i, r]] = v;
        }
    }
    out
}

pub(crate) fn compose_generic<T>(factors: &[ArrayView2<'_, T>]) -> (Vec<usize>, Vec<T>)
where
    T: Copy + num_traits::Zero + std::ops::Mul<Output = T> + std::ops::AddAssign,
{
    assert!(!factors.is_empty());
    let rank = factors[0].ncols();
    assert!(factors.iter().all(|f| f.ncols() == rank));
    let shape: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
    let len = shape.iter().product();
    let mut data = vec![T::zero(); len];

    fn add_rank_one<T>(out: &mut [T], cols: &[Vec<T>], scale: T)
    where
        T: Copy + std::ops::Mul<Output = T> + std::ops::AddAssign,
    {
        if cols.len() == 1 {
            for (o, &v) in out.iter_mut().zip(&cols[0]) {
                *o += scale * v;
            }
            return;
        }
        let block = out.len() / cols[0].len();
        for (i, &h) in cols[0].iter().enumerate() {
            add_rank_one(&mut out[i * block..(i + 1) * block], &cols[1..], scale * h);
        }
    }

    for r in 0..rank {
        let cols: Vec<Vec<T>> = factors.iter().map(|f| f.column(r).to_vec()).collect();
        let mut one_cols = cols;
        let first = one_cols.remove(0);
        if one_cols.is_empty() {
            for (o, &v) in data.iter_mut().zip(&first) {
                *o += v;
            }
        } else {
            let block = len / first.len();
            for (i, &h) in first.iter().enumerate() {
                add_rank_one(&mut data[i * block..(i + 1) * block], &one_cols, h);
            }
        }
    }
    (shape, data)
}

/// Evaluates the Kruskal operator `Σ_r f_r^(0) ∘ … ∘ f_r^(p-1)` for real
/// factor matrices of shared column count.
pub fn kruskal_compose(factors: &[Array2<f64>]) -> DenseTensor {
    let views: Vec<ArrayView2<'_, f64>> = factors.iter().map(|f| f.view()).collect();
    let (shape, data) = compose_generic(&views);
    DenseTensor { shape, data }
}

/// Complex variant of [`kruskal_compose`], used on spectral factors.
pub fn kruskal_compose_complex(factors: &[Array2<Complex64>]) -> (Vec<usize>, Vec<Complex64>) {
    let views: Vec<ArrayView2<'_, Complex64>> = factors.iter().map(|f| f.view()).collect();
    compose_generic(&views)
}

/// Activation tensor in Kruskal form: one `n_q x R` factor matrix per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalActivation {
    factors: Vec<Array2<f64>>,
}

impl KruskalActivation {
    pub fn new(factors: Vec<Array2<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("activation needs at least one mode"));
        }
        let rank = factors[0].ncols();
        if rank == 0 {
            return Err(Error::invalid("activation rank must be positive"));
        }
        if factors.iter().any(|f| f.ncols() != rank || f.nrows() == 0) {
            return Err(Error::shape(
                "all factor matrices must share a positive column count".to_string(),
            ));
        }
        Ok(KruskalActivation { factors })
    }

    pub fn zeros(shape: &[usize], rank: usize) -> Self {
        KruskalActivation {
            factors: shape.iter().map(|&n| Array2::zeros((n, rank))).collect(),
        }
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factor(&self, mode: usize) -> &Array2<f64> {
        &self.factors[mode]
    }

    pub fn factor_mut(&mut self, mode: usize) -> &mut Array2<f64> {
        &mut self.factors[mode]
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    pub fn set_factor(&mut self, mode: usize, factor: Array2<f64>) {
        assert_eq!(factor.ncols(), self.rank());
        assert_eq!(factor.nrows(), self.factors[mode].nrows());
        self.factors[mode] = factor;
    }

    pub fn compose(&self) -> DenseTensor {
        kruskal_compose(&self.factors)
    }

    /// Magnitude `Π_q ‖z_r^(q)‖_2` of each rank-one component.
    pub fn component_magnitudes(&self) -> Vec<f64> {
        (0..self.rank())
            .map(|r| {
                self.factors
                    .iter()
                    .map(|f| f.column(r).iter().map(|v| v * v).sum::<f64>().sqrt())
                    .product()
            })
            .collect()
    }
}

/// Convolutional dictionary: `K` atoms sharing a window shape, each with
/// Frobenius norm at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Vec<DenseTensor>,
}

pub const ATOM_NORM_SLACK: f64 = 1e-12;

impl Dictionary {
    pub fn new(atoms: Vec<DenseTensor>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("dictionary needs at least one atom"));
        }
        let window = atoms[0].shape().to_vec();
        for (k, atom) in atoms.iter().enumerate() {
            if atom.shape() != window.as_slice() {
                return Err(Error::shape(format!(
                    "atom {k} has shape {:?}, expected {window:?}",
                    atom.shape()
                )));
            }
            let norm = atom.frobenius_norm();
            if norm > 1.0 + ATOM_NORM_SLACK {
                return Err(Error::invalid(format!(
                    "atom {k} has Frobenius norm {norm}, exceeding the unit ball"
                )));
            }
        }
        Ok(Dictionary { atoms })
    }

    /// Draws atoms with i.i.d. uniform entries in `[-1, 1]`, each normalized
    /// to unit Frobenius norm.
    pub fn random_unit(window: &[usize], n_atoms: usize, rng: &mut impl Rng) -> Self {
        let len: usize = window.iter().product();
        let atoms = (0..n_atoms)
            .map(|_| {
                let mut data: Vec<f64> =
                    (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let norm = frobenius_norm(&data);
                if norm > 0.0 {
                    for v in &mut data {
                        *v /= norm;
                    }
                }
                DenseTensor {
                    shape: window.to_vec(),
                    data,
                }
            })
            .collect();
        Dictionary { atoms }
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn window(&self) -> &[usize] {
        self.atoms[0].shape()
    }

    pub fn order(&self) -> usize {
        self.atoms[0].order()
    }

    pub fn atom(&self, k: usize) -> &DenseTensor {
        &self.atoms[k]
    }

    pub fn atoms(&self) -> &[DenseTensor] {
        &self.atoms
    }

    /// Zero-pads every atom to the given signal shape.
    pub fn padded_atoms(&self, shape: &[usize]) -> Result<Vec<DenseTensor>> {
        self.atoms.iter().map(|a| a.zero_pad(shape)).collect()
    }
}
