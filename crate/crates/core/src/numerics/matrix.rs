use std::fmt;

use super::NumericsError;

/// Dense row-major matrix of `f64`.
///
/// Every model quantity (embeddings, attention maps, weight matrices, score
/// columns) is a `Matrix`; vectors are `1×c` or `r×1` matrices.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::DataLength { rows, cols, len: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. An empty slice gives `0×0`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(NumericsError::RaggedRows { expected: cols, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn scalar(value: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1×1` matrix.
    pub fn item(&self) -> Result<f64, NumericsError> {
        if self.shape() != (1, 1) {
            return Err(NumericsError::NotScalar { rows: self.rows, cols: self.cols });
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.sum_squares().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<(), NumericsError> {
        if self.shape() != other.shape() {
            return Err(NumericsError::Shape { op, left: self.shape(), right: other.shape() });
        }
        Ok(())
    }

    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self, NumericsError> {
        self.check_same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// In-place `self += other`.
    pub fn accumulate(&mut self, other: &Self) -> Result<(), NumericsError> {
        self.check_same_shape(other, "accumulate")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds a `1×cols` row to every row.
    pub fn add_row_broadcast(&self, row: &Self) -> Result<Self, NumericsError> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(NumericsError::Shape { op: "add_row_broadcast", left: self.shape(), right: row.shape() });
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (v, b) in out.row_mut(r).iter_mut().zip(&row.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::Shape { op: "matmul", left: self.shape(), right: other.shape() });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        for i in 0..n {
            let out_row = &mut out.data[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_transposed(&self, other: &Self) -> Result<Self, NumericsError> {
        if self.cols != other.cols {
            return Err(NumericsError::Shape { op: "matmul_transposed", left: self.shape(), right: other.shape() });
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                let b = other.row(j);
                out.data[i * other.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn transposed_matmul(&self, other: &Self) -> Result<Self, NumericsError> {
        if self.rows != other.rows {
            return Err(NumericsError::Shape { op: "transposed_matmul", left: self.shape(), right: other.shape() });
        }
        let (k, n, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        for p in 0..k {
            let a_row = self.row(p);
            let b_row = other.row(p);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * m..(i + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&self) -> Self {
        self.masked_softmax_rows(None)
    }

    /// Row-wise softmax over the columns whose `column_mask` flag is set.
    /// Masked columns receive probability 0; a row with no live column is
    /// all zeros.
    pub fn masked_softmax_rows(&self, column_mask: Option<&[bool]>) -> Self {
        let live = |c: usize| column_mask.map_or(true, |m| m[c]);
        let mut out = Self::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            let max = (0..self.cols).filter(|&c| live(c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let out_row = out.row_mut(r);
            let mut total = 0.0;
            for c in 0..row.len() {
                if live(c) {
                    let e = (row[c] - max).exp();
                    out_row[c] = e;
                    total += e;
                }
            }
            for v in out_row.iter_mut() {
                *v /= total;
            }
        }
        out
    }

    pub fn leaky_relu(&self, slope: f64) -> Self {
        self.map(|v| if v >= 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    /// Standardizes each row to zero mean / unit variance, then applies the
    /// `1×cols` affine `gain`, `bias`. Variance is the biased estimator.
    pub fn layer_norm_rows(&self, gain: &Self, bias: &Self, eps: f64) -> Result<Self, NumericsError> {
        Ok(self.layer_norm_parts(gain, bias, eps)?.0)
    }

    /// Layer norm plus the standardized rows and per-row `1/sqrt(var+eps)`,
    /// which the backward pass reuses.
    pub(crate) fn layer_norm_parts(&self, gain: &Self, bias: &Self, eps: f64) -> Result<(Self, Self, Vec<f64>), NumericsError> {
        for p in [gain, bias] {
            if p.rows != 1 || p.cols != self.cols {
                return Err(NumericsError::Shape { op: "layer_norm_rows", left: self.shape(), right: p.shape() });
            }
        }
        let mut normed = Self::zeros(self.rows, self.cols);
        let mut out = Self::zeros(self.rows, self.cols);
        let mut inv_std = Vec::with_capacity(self.rows);
        let width = self.cols as f64;
        for r in 0..self.rows {
            let row = self.row(r);
            let mean = row.iter().sum::<f64>() / width;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std.push(istd);
            for c in 0..self.cols {
                let xh = (row[c] - mean) * istd;
                normed.data[r * self.cols + c] = xh;
                out.data[r * self.cols + c] = xh * gain.data[c] + bias.data[c];
            }
        }
        Ok((out, normed, inv_std))
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self, NumericsError> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(NumericsError::Shape { op: "concat_cols", left: (rows, 0), right: bad.shape() });
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                out.data[r * cols + offset..r * cols + offset + p.cols].copy_from_slice(p.row(r));
                offset += p.cols;
            }
        }
        Ok(out)
    }

    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Self, NumericsError> {
        if start + width > self.cols {
            return Err(NumericsError::Shape { op: "slice_cols", left: self.shape(), right: (start, width) });
        }
        let mut out = Self::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..start + width]);
        }
        Ok(out)
    }

    /// Selects rows by index; `None` yields a zero row.
    pub fn gather_rows(&self, indices: &[Option<usize>]) -> Result<Self, NumericsError> {
        let mut out = Self::zeros(indices.len(), self.cols);
        for (r, idx) in indices.iter().enumerate() {
            if let Some(i) = *idx {
                if i >= self.rows {
                    return Err(NumericsError::RowIndex { index: i, rows: self.rows });
                }
                out.row_mut(r).copy_from_slice(self.row(i));
            }
        }
        Ok(out)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.matmul(&Matrix::identity(2)).unwrap(), a);
        let row = Matrix::row_vector(&[1.0, 2.0]);
        let col = Matrix::column_vector(&[3.0, 4.0]);
        assert_eq!(row.matmul(&col).unwrap(), Matrix::scalar(11.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(5, 4, &mut rng);
        let b = random(4, 3, &mut rng);
        let got = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((got.get(i, j) - acc).abs() < 1e-12);
            }
        }
        let via_t = a.matmul_transposed(&b.transpose()).unwrap();
        let via_tm = a.transpose().transposed_matmul(&b).unwrap();
        for k in 0..got.len() {
            assert!((via_t.data()[k] - got.data()[k]).abs() < 1e-12);
            assert!((via_tm.data()[k] - got.data()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_cases() {
        let s = Matrix::row_vector(&[0.0, 0.0, 0.0]).softmax_rows();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = Matrix::row_vector(&[1000.0, 1000.0]).softmax_rows();
        assert_eq!(s.data(), &[0.5, 0.5]);
        // e^k / (e + e^2 + e^3), reference digits from an arbitrary-precision evaluation
        let s = Matrix::row_vector(&[1.0, 2.0, 3.0]).softmax_rows();
        let expected = [0.090_030_573_170_380_46, 0.244_728_471_054_797_65, 0.665_240_955_774_821_9];
        for (v, e) in s.data().iter().zip(expected) {
            assert!((v - e).abs() < 1e-12, "{v} vs {e}");
        }
    }

    #[test]
    fn masked_softmax_ignores_dead_columns() {
        let s = Matrix::row_vector(&[5.0, 1.0, 1.0]).masked_softmax_rows(Some(&[false, true, true]));
        assert_eq!(s.data(), &[0.0, 0.5, 0.5]);
        let s = Matrix::row_vector(&[5.0, 1.0]).masked_softmax_rows(Some(&[false, false]));
        assert_eq!(s.data(), &[0.0, 0.0]);
    }

    #[test]
    fn leaky_relu_cases() {
        assert_eq!(Matrix::row_vector(&[-1.0, 2.0]).leaky_relu(0.2).data(), &[-0.2, 2.0]);
        assert_eq!(Matrix::zeros(2, 2).leaky_relu(0.2), Matrix::zeros(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random(4, 6, &mut rng);
        let out = m.leaky_relu(0.3);
        for (x, y) in m.data().iter().zip(out.data()) {
            let expect = if *x >= 0.0 { *x } else { 0.3 * x };
            assert_eq!(*y, expect);
        }
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Matrix::filled(1, 4, 1.0);
        let zero = Matrix::zeros(1, 4);
        let out = Matrix::filled(1, 4, 7.0).layer_norm_rows(&ones, &zero, 1e-8).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));

        let out = Matrix::row_vector(&[1.0, 3.0]).layer_norm_rows(&Matrix::filled(1, 2, 1.0), &Matrix::zeros(1, 2), 0.0).unwrap();
        assert_eq!(out.data(), &[-1.0, 1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(1, 7, &mut rng);
        let gain = random(1, 7, &mut rng);
        let bias = random(1, 7, &mut rng);
        let out = x.layer_norm_rows(&gain, &bias, 1e-8).unwrap();
        let mean = x.data().iter().sum::<f64>() / 7.0;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
        for c in 0..7 {
            let expect = (x.data()[c] - mean) / (var + 1e-8).sqrt() * gain.data()[c] + bias.data()[c];
            assert!((out.data()[c] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn concat_slice_gather() {
        let a = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let c = Matrix::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.row(1), &[2.0, 5.0, 6.0]);
        assert_eq!(c.slice_cols(1, 2).unwrap(), b);
        let g = b.gather_rows(&[Some(1), None, Some(0)]).unwrap();
        assert_eq!(g.data(), &[5.0, 6.0, 0.0, 0.0, 3.0, 4.0]);
        assert!(b.gather_rows(&[Some(2)]).is_err());
    }

    fn matrix_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-1e3f64..1e3, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(m in matrix_strategy()) {
            let s = m.softmax_rows();
            for r in 0..s.rows() {
                let total: f64 = s.row(r).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(s.row(r).iter().all(|v| *v >= 0.0));
            }
        }

        #[test]
        fn identity_is_exact(m in matrix_strategy()) {
            prop_assert_eq!(Matrix::identity(m.rows()).matmul(&m).unwrap(), m);
        }

        #[test]
        fn layer_norm_standardizes(m in matrix_strategy()) {
            let gain = Matrix::filled(1, m.cols(), 1.0);
            let bias = Matrix::zeros(1, m.cols());
            let out = m.layer_norm_rows(&gain, &bias, 1e-8).unwrap();
            for r in 0..m.rows() {
                let row = m.row(r);
                let spread = row.iter().cloned().fold(f64::MIN, f64::max) - row.iter().cloned().fold(f64::MAX, f64::min);
                if spread < 1e-3 {
                    continue;
                }
                let o = out.row(r);
                let mean = o.iter().sum::<f64>() / o.len() as f64;
                let var = o.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / o.len() as f64;
                prop_assert!(mean.abs() <= 1e-9);
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
        }
    }
}
