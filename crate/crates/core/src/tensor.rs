//! Dense column-major tensors and matrices.
//!
//! Mode indices in this API are zero-based. A matricization `X^(t)` groups
//! the modes listed in `t` into the row index (first listed mode varies
//! fastest) and the remaining modes, in ascending order, into the column
//! index. With this convention the `(0, 1)` matricization of an order-3
//! tensor is a plain reinterpretation of its storage.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Column-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = T::one();
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return shape_err(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices; handy for literals.
    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return shape_err("ragged row literal");
        }
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.data[i + j * r] = v;
            }
        }
        Ok(m)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i + j * self.rows] = v;
    }

    pub fn col(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return shape_err(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            T::one(),
            MatView::normal(self),
            MatView::normal(other),
            T::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return shape_err(format!(
                "t_matmul {}x{}^T by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            T::one(),
            MatView::transposed(self),
            MatView::normal(other),
            T::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return shape_err(format!(
                "matmul_t {}x{} by {}x{}^T",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            T::one(),
            MatView::normal(self),
            MatView::transposed(other),
            T::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return shape_err(format!("matvec {}x{} by {}", self.rows, self.cols, v.len()));
        }
        let mut out = vec![T::zero(); self.rows];
        for (j, &vj) in v.iter().enumerate() {
            if vj == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.col(j)) {
                *o += a * vj;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * s).collect() }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return shape_err(format!(
                "elementwise {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.rows != other.rows || self.cols != other.cols {
            return shape_err("frobenius product of differently shaped matrices");
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    /// `(A - A^T) / 2`.
    pub fn skew(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| (self.get(i, j) - self.get(j, i)) * T::of(0.5))
    }

    /// `(A + A^T) / 2`.
    pub fn sym(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| (self.get(i, j) + self.get(j, i)) * T::of(0.5))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Strided read-only view used to feed [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T: Scalar> MatView<'a, T> {
    pub fn normal(m: &'a Matrix<T>) -> Self {
        Self { data: &m.data, rs: 1, cs: m.rows }
    }

    pub fn transposed(m: &'a Matrix<T>) -> Self {
        Self { data: &m.data, rs: m.rows, cs: 1 }
    }

    /// Column-major `rows x _` matrix stored in `data`.
    pub fn col_major(data: &'a [T], rows: usize) -> Self {
        Self { data, rs: 1, cs: rows }
    }

    /// Transpose of a column-major `rows x _` matrix stored in `data`.
    pub fn col_major_t(data: &'a [T], rows: usize) -> Self {
        Self { data, rs: rows, cs: 1 }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.rs + j * self.cs]
    }
}

/// `C <- alpha * A * B + beta * C` with `C` a column-major `m x n` buffer.
///
/// Small products run a plain loop; larger ones go to the packed kernel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatView<'_, T>,
    b: MatView<'_, T>,
    beta: T,
    c: &mut [T],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    assert!(a.data.len() > (m - 1) * a.rs + (k - 1) * a.cs);
    assert!(b.data.len() > (k - 1) * b.rs + (n - 1) * b.cs);
    if m * n * k <= 4096 {
        for j in 0..n {
            for i in 0..m {
                let mut acc = T::zero();
                for p in 0..k {
                    acc += a.at(i, p) * b.at(p, j);
                }
                let slot = &mut c[i + j * m];
                *slot = if beta == T::zero() { alpha * acc } else { alpha * acc + beta * *slot };
            }
        }
        return;
    }
    // SAFETY: the asserts above bound every strided access inside the slices,
    // and `c` is an exclusive borrow disjoint from `a` and `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}

/// Dense tensor of order `d >= 1` in column-major (first mode fastest) layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self { dims: dims.to_vec(), data: vec![T::zero(); dims.iter().product()] })
    }

    pub fn from_data(dims: &[usize], data: Vec<T>) -> Result<Self> {
        check_dims(dims)?;
        let n: usize = dims.iter().product();
        if n != data.len() {
            return shape_err(format!("dims {dims:?} need {n} entries, got {}", data.len()));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    /// Tensor with entries given by a function of the multi-index.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        check_dims(dims)?;
        let n: usize = dims.iter().product();
        let mut idx = vec![0usize; dims.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            increment(&mut idx, dims);
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &n) in idx.iter().zip(&self.dims) {
            debug_assert!(i < n);
            off += i * stride;
            stride *= n;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    pub fn norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn scale(&self, s: T) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::from_data(dims, self.data)
    }

    /// Order-2 tensor viewed as a matrix (no reordering).
    pub fn to_matrix(&self, rows: usize) -> Result<Matrix<T>> {
        if rows == 0 || !self.data.len().is_multiple_of(rows) {
            return shape_err(format!("cannot view {} entries with {rows} rows", self.data.len()));
        }
        Matrix::from_col_major(rows, self.data.len() / rows, self.data.clone())
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return shape_err("tensor order must be at least 1");
    }
    if dims.contains(&0) {
        return shape_err(format!("zero extent in {dims:?}"));
    }
    Ok(())
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}

fn check_modes(t: &[usize], order: usize) -> Result<()> {
    if t.is_empty() {
        return shape_err("empty mode subset");
    }
    let mut seen = vec![false; order];
    for &m in t {
        if m >= order {
            return shape_err(format!("mode {m} out of range for order {order}"));
        }
        if seen[m] {
            return shape_err(format!("mode {m} listed twice"));
        }
        seen[m] = true;
    }
    Ok(())
}

fn complement(t: &[usize], order: usize) -> Vec<usize> {
    (0..order).filter(|m| !t.contains(m)).collect()
}

/// Row/column positions of every tensor entry under the `t`-matricization.
fn matricization_maps(dims: &[usize], t: &[usize]) -> (usize, usize, Vec<usize>) {
    let s = complement(t, dims.len());
    let mut row_stride = vec![0usize; dims.len()];
    let mut col_stride = vec![0usize; dims.len()];
    let mut acc = 1;
    for &m in t {
        row_stride[m] = acc;
        acc *= dims[m];
    }
    let rows = acc;
    acc = 1;
    for &m in &s {
        col_stride[m] = acc;
        acc *= dims[m];
    }
    let cols = acc;
    let n: usize = dims.iter().product();
    let mut idx = vec![0usize; dims.len()];
    let mut target = Vec::with_capacity(n);
    for _ in 0..n {
        let mut r = 0;
        let mut c = 0;
        for (m, &i) in idx.iter().enumerate() {
            r += i * row_stride[m];
            c += i * col_stride[m];
        }
        target.push(r + c * rows);
        increment(&mut idx, dims);
    }
    (rows, cols, target)
}

/// `t`-matricization `X^(t)`.
pub fn matricize<T: Scalar>(x: &DenseTensor<T>, t: &[usize]) -> Result<Matrix<T>> {
    check_modes(t, x.order())?;
    let (rows, cols, target) = matricization_maps(&x.dims, t);
    let mut out = vec![T::zero(); rows * cols];
    for (&v, &pos) in x.data.iter().zip(&target) {
        out[pos] = v;
    }
    Matrix::from_col_major(rows, cols, out)
}

/// Folding operator, inverse of [`matricize`] for the same `t` and `dims`.
pub fn dematricize<T: Scalar>(m: &Matrix<T>, t: &[usize], dims: &[usize]) -> Result<DenseTensor<T>> {
    check_dims(dims)?;
    check_modes(t, dims.len())?;
    let (rows, cols, target) = matricization_maps(dims, t);
    if rows != m.rows() || cols != m.cols() {
        return shape_err(format!(
            "{}x{} matrix does not fold into {dims:?} along {t:?} ({rows}x{cols} expected)",
            m.rows(),
            m.cols()
        ));
    }
    let data = target.iter().map(|&pos| m.data()[pos]).collect();
    DenseTensor::from_data(dims, data)
}

/// `<X, Y> = vec(X)^T vec(Y)`.
pub fn inner<T: Scalar>(x: &DenseTensor<T>, y: &DenseTensor<T>) -> Result<T> {
    if x.dims != y.dims {
        return shape_err(format!("inner product of {:?} and {:?}", x.dims, y.dims));
    }
    Ok(dot(&x.data, &y.data))
}

/// `t`-contraction `((X^(t))^T Y^(t))` folded into a tensor whose modes are
/// the free modes of `x` followed by the free modes of `y`. Full contraction
/// yields a one-entry tensor of dims `[1]`.
pub fn contract<T: Scalar>(x: &DenseTensor<T>, y: &DenseTensor<T>, t: &[usize]) -> Result<DenseTensor<T>> {
    check_modes(t, x.order())?;
    check_modes(t, y.order())?;
    for &m in t {
        if x.dims[m] != y.dims[m] {
            return shape_err(format!("contracted mode {m}: {} vs {}", x.dims[m], y.dims[m]));
        }
    }
    let xm = matricize(x, t)?;
    let ym = matricize(y, t)?;
    let prod = xm.t_matmul(&ym)?;
    let mut dims: Vec<usize> = complement(t, x.order()).iter().map(|&m| x.dims[m]).collect();
    dims.extend(complement(t, y.order()).iter().map(|&m| y.dims[m]));
    if dims.is_empty() {
        dims.push(1);
    }
    DenseTensor::from_data(&dims, prod.into_data())
}

/// Mode product `A x_k X`, replacing extent `n_k` by `rows(A)`.
pub fn mode_product<T: Scalar>(a: &Matrix<T>, k: usize, x: &DenseTensor<T>) -> Result<DenseTensor<T>> {
    if k >= x.order() {
        return shape_err(format!("mode {k} out of range for order {}", x.order()));
    }
    if a.cols() != x.dims[k] {
        return shape_err(format!(
            "mode-{k} product: matrix has {} columns, mode extent {}",
            a.cols(),
            x.dims[k]
        ));
    }
    let left: usize = x.dims[..k].iter().product();
    let right: usize = x.dims[k + 1..].iter().product();
    let nk = x.dims[k];
    let m = a.rows();
    let mut dims = x.dims.clone();
    dims[k] = m;
    let mut out = vec![T::zero(); left * m * right];
    for r in 0..right {
        let xs = &x.data[r * left * nk..(r + 1) * left * nk];
        let os = &mut out[r * left * m..(r + 1) * left * m];
        gemm(
            left,
            nk,
            m,
            T::one(),
            MatView::col_major(xs, left),
            MatView::transposed(a),
            T::zero(),
            os,
        );
    }
    DenseTensor::from_data(&dims, out)
}

/// `(A_1 ⊗ ... ⊗ A_d) X`, one matrix per mode.
pub fn multilinear<T: Scalar>(mats: &[Matrix<T>], x: &DenseTensor<T>) -> Result<DenseTensor<T>> {
    if mats.len() != x.order() {
        return shape_err(format!("{} matrices for an order-{} tensor", mats.len(), x.order()));
    }
    let mut out = x.clone();
    for (k, a) in mats.iter().enumerate() {
        out = mode_product(a, k, &out)?;
    }
    Ok(out)
}

/// Standard Kronecker product: entry `((i, p), (j, q))` at row `i * rows(b) + p`.
pub fn kron<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let (br, bc) = (b.rows(), b.cols());
    Matrix::from_fn(a.rows() * br, a.cols() * bc, |r, c| {
        a.get(r / br, c / bc) * b.get(r % br, c % bc)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor<f64> {
        DenseTensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn rand_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn two_by_two() -> DenseTensor<f64> {
        DenseTensor::from_data(&[2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap()
    }

    #[test]
    fn matricize_identity_and_transpose() {
        let x = two_by_two();
        let m = matricize(&x, &[0]).unwrap();
        assert_eq!(m, Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
        let mt = matricize(&x, &[1]).unwrap();
        assert_eq!(mt, Matrix::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]).unwrap());
    }

    #[test]
    fn matricize_matches_index_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[2, 3, 4], &mut rng);
        let m = matricize(&x, &[0, 2]).unwrap();
        assert_eq!((m.rows(), m.cols()), (8, 3));
        for i1 in 0..2 {
            for i2 in 0..3 {
                for i3 in 0..4 {
                    assert_eq!(m.get(i1 + 2 * i3, i2), x.get(&[i1, i2, i3]));
                }
            }
        }
        // reversed ordering puts the third mode fastest
        let m = matricize(&x, &[2, 0]).unwrap();
        assert_eq!(m.get(3 + 4, 2), x.get(&[1, 2, 3]));
    }

    #[test]
    fn full_matricization_is_vectorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&[2, 3, 4], &mut rng);
        let m = matricize(&x, &[0, 1, 2]).unwrap();
        assert_eq!((m.rows(), m.cols()), (24, 1));
        assert_eq!(m.data(), x.data());
    }

    #[test]
    fn matricize_rejects_bad_modes() {
        let x = two_by_two();
        assert!(matricize(&x, &[2]).is_err());
        assert!(matricize(&x, &[0, 0]).is_err());
        assert!(matricize(&x, &[]).is_err());
    }

    #[test]
    fn dematricize_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = two_by_two();
        assert_eq!(dematricize(&matricize(&x, &[0]).unwrap(), &[0], &[2, 2]).unwrap(), x);
        let y = rand_tensor(&[2, 3, 4], &mut rng);
        assert_eq!(dematricize(&matricize(&y, &[1]).unwrap(), &[1], y.dims()).unwrap(), y);
        let z = rand_tensor(&[2, 3, 4, 5], &mut rng);
        assert_eq!(dematricize(&matricize(&z, &[0, 2]).unwrap(), &[0, 2], z.dims()).unwrap(), z);
    }

    #[test]
    fn dematricize_rejects_shape_mismatch() {
        let m = Matrix::<f64>::zeros(3, 4);
        assert!(dematricize(&m, &[0], &[2, 6]).is_err());
    }

    #[test]
    fn inner_basics() {
        let ones = DenseTensor::from_data(&[2, 2, 2], vec![1.0; 8]).unwrap();
        assert_eq!(inner(&ones, &ones).unwrap(), 8.0);
        let zero = DenseTensor::zeros(&[2, 2, 2]).unwrap();
        assert_eq!(inner(&ones, &zero).unwrap(), 0.0);
        assert!(inner(&ones, &two_by_two()).is_err());
    }

    #[test]
    fn contract_full_is_inner() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&[2, 3, 2], &mut rng);
        let y = rand_tensor(&[2, 3, 2], &mut rng);
        let c = contract(&x, &y, &[0, 1, 2]).unwrap();
        assert_eq!(c.dims(), &[1]);
        assert!((c.data()[0] - inner(&x, &y).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn contract_orthonormal_gives_identity() {
        // X^(t) with orthonormal columns: the 4x2 slice of I_4
        let x = DenseTensor::from_fn(&[2, 2, 2], |i| {
            if i[0] + 2 * i[1] == i[2] { 1.0 } else { 0.0 }
        })
        .unwrap();
        let c = contract(&x, &x, &[0, 1]).unwrap();
        assert_eq!(c.dims(), &[2, 2]);
        assert_eq!(c.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn contract_matches_loop_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&[2, 3, 2], &mut rng);
        let y = rand_tensor(&[2, 4, 2], &mut rng);
        let c = contract(&x, &y, &[0, 2]).unwrap();
        assert_eq!(c.dims(), &[3, 4]);
        for j in 0..3 {
            for l in 0..4 {
                let mut acc = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        acc += x.get(&[a, j, b]) * y.get(&[a, l, b]);
                    }
                }
                assert!((c.get(&[j, l]) - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mode_product_identity_zero_and_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&[3, 4, 2], &mut rng);
        for k in 0..3 {
            let n = x.dims()[k];
            assert_eq!(mode_product(&Matrix::identity(n), k, &x).unwrap(), x);
            let z = mode_product(&Matrix::zeros(5, n), k, &x).unwrap();
            assert!(z.data().iter().all(|&v| v == 0.0));
            assert_eq!(z.dims()[k], 5);
        }
        let a = rand_matrix(5, 3, &mut rng);
        let b = rand_matrix(2, 5, &mut rng);
        let lhs = mode_product(&b.matmul(&a).unwrap(), 0, &x).unwrap();
        let rhs = mode_product(&b, 0, &mode_product(&a, 0, &x).unwrap()).unwrap();
        assert!(max_diff(lhs.data(), rhs.data()) < 1e-13);
        assert!(mode_product(&a, 1, &x).is_err());
    }

    #[test]
    fn mode_product_matricized_identity() {
        // [(A1 ⊗ A2 ⊗ A3) X]^(t) = kron(A_t, reversed) X^(t) kron(A_s, reversed)^T
        // with the standard Kronecker product and first-listed-mode-fastest rows.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&[2, 3, 4], &mut rng);
        let mats = [rand_matrix(3, 2, &mut rng), rand_matrix(2, 3, &mut rng), rand_matrix(5, 4, &mut rng)];
        let y = multilinear(&mats, &x).unwrap();
        let lhs = matricize(&y, &[0, 2]).unwrap();
        let rhs = kron(&mats[2], &mats[0])
            .matmul(&matricize(&x, &[0, 2]).unwrap())
            .unwrap()
            .matmul_t(&mats[1])
            .unwrap();
        assert!(max_diff(lhs.data(), rhs.data()) < 1e-13);
    }

    #[test]
    fn orthogonal_mode_product_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&[3, 4, 2], &mut rng);
        let (q, _) = crate::linalg::qr(&rand_matrix(4, 4, &mut rng)).unwrap();
        let y = mode_product(&q, 1, &x).unwrap();
        let (nx, ny) = (inner(&x, &x).unwrap(), inner(&y, &y).unwrap());
        assert!((nx - ny).abs() <= 1e-12 * nx);
    }

    #[test]
    fn multilinear_identity_and_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&[3, 4], &mut rng);
        let ids = [Matrix::identity(3), Matrix::identity(4)];
        assert_eq!(multilinear(&ids, &x).unwrap(), x);
        let a = rand_matrix(2, 3, &mut rng);
        let b = rand_matrix(5, 4, &mut rng);
        let y = multilinear(&[a.clone(), b.clone()], &x).unwrap();
        let xm = x.to_matrix(3).unwrap();
        let expect = a.matmul(&xm).unwrap().matmul_t(&b).unwrap();
        assert!(max_diff(y.data(), expect.data()) < 1e-13);
        assert!(multilinear(&[a], &x).is_err());
    }

    #[test]
    fn multilinear_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let x = rand_tensor(&[2, 3, 4], &mut rng);
            let y = rand_tensor(&[3, 2, 5], &mut rng);
            let mats = [rand_matrix(3, 2, &mut rng), rand_matrix(2, 3, &mut rng), rand_matrix(5, 4, &mut rng)];
            let mats_t: Vec<_> = mats.iter().map(Matrix::transpose).collect();
            let lhs = inner(&y, &multilinear(&mats, &x).unwrap()).unwrap();
            let rhs = inner(&multilinear(&mats_t, &y).unwrap(), &x).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn kron_cases() {
        assert_eq!(kron(&Matrix::<f64>::identity(2), &Matrix::identity(3)), Matrix::identity(6));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = rand_matrix(2, 3, &mut rng);
        let two = Matrix::from_rows(&[&[2.0]]).unwrap();
        assert_eq!(kron(&two, &b), b.scale(2.0));
        let (a, c) = (rand_matrix(2, 2, &mut rng), rand_matrix(2, 2, &mut rng));
        let (bb, d) = (rand_matrix(2, 2, &mut rng), rand_matrix(2, 2, &mut rng));
        let lhs = kron(&a, &bb).matmul(&kron(&c, &d)).unwrap();
        let rhs = kron(&a.matmul(&c).unwrap(), &bb.matmul(&d).unwrap());
        assert!(max_diff(lhs.data(), rhs.data()) < 1e-13);
    }

    #[test]
    fn gemm_large_path_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = rand_matrix(40, 30, &mut rng);
        let b = rand_matrix(30, 20, &mut rng);
        let fast = a.matmul(&b).unwrap();
        let naive = Matrix::from_fn(40, 20, |i, j| (0..30).map(|p| a.get(i, p) * b.get(p, j)).sum());
        assert!(max_diff(fast.data(), naive.data()) < 1e-12);
        let f32a = Matrix::from_fn(40, 30, |i, j| a.get(i, j) as f32);
        let f32b = Matrix::from_fn(30, 20, |i, j| b.get(i, j) as f32);
        let p = f32a.matmul(&f32b).unwrap();
        assert!((p.get(3, 4) as f64 - fast.get(3, 4)).abs() < 1e-4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_any_subset(seed in 0u64..1000, mask in 1u32..15) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = rand_tensor(&[2, 3, 2, 3], &mut rng);
                let mut t: Vec<usize> = (0..4).filter(|m| mask & (1 << m) != 0).collect();
                if seed % 2 == 1 {
                    t.reverse();
                }
                let m = matricize(&x, &t).unwrap();
                prop_assert_eq!(dematricize(&m, &t, x.dims()).unwrap(), x.clone());
                let y = rand_tensor(&[2, 3, 2, 3], &mut rng);
                let direct = inner(&x, &y).unwrap();
                let via = m.dot(&matricize(&y, &t).unwrap()).unwrap();
                prop_assert!((direct - via).abs() <= 1e-13 * direct.abs().max(1.0));
                let sym = inner(&y, &x).unwrap();
                prop_assert!((direct - sym).abs() <= 1e-13 * direct.abs().max(1.0));
            }
        }
    }
}
