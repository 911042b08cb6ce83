//! Reverse-mode gradient tape over [`Matrix`] values.
//!
//! Every primitive pushes one node holding its forward value and the operand
//! handles needed by its adjoint rule. [`Tape::backward`] walks the nodes in
//! reverse recorded order and accumulates adjoints into the parents, then
//! returns the gradient of every registered parameter leaf.

use std::collections::BTreeMap;

use super::{Matrix, NumericsError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'p> {
    Borrowed(&'p Matrix),
    Owned(Matrix),
}

impl Value<'_> {
    fn get(&self) -> &Matrix {
        match self {
            Value::Borrowed(m) => m,
            Value::Owned(m) => m,
        }
    }
}

enum Op {
    Param(usize),
    Constant,
    MatMul(Var, Var),
    MatMulTransposed(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    MaskedSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Matrix, inv_std: Vec<f64> },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    Sum(Var),
    SumSquares(Var),
    Bce { pos: Var, neg: Var, mask: Vec<bool> },
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of the registered parameter leaves, keyed by parameter id.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: BTreeMap<usize, Matrix>,
}

impl Gradients {
    pub fn get(&self, param: usize) -> Option<&Matrix> {
        self.by_param.get(&param)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Matrix)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn into_map(self) -> BTreeMap<usize, Matrix> {
        self.by_param
    }
}

/// Clamp applied to scores before taking logarithms in [`Tape::bce`].
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Matrix {
        self.nodes[v.0].value.get()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Registers a trainable leaf whose gradient is reported under `id`.
    pub fn param(&mut self, id: usize, value: &'p Matrix) -> Var {
        self.nodes.push(Node { value: Value::Borrowed(value), op: Op::Param(id), needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_transposed(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).matmul_transposed(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMulTransposed(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Adds the `1×c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).add_row_broadcast(self.value(bias))?;
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::AddRow(a, bias), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).hadamard(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).leaky_relu(slope);
        let ng = self.needs(a);
        self.push(out, Op::LeakyRelu(a, slope), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).sigmoid();
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// Row softmax restricted to the columns flagged in `column_mask`.
    pub fn masked_softmax_rows(&mut self, a: Var, column_mask: Option<&[bool]>) -> Result<Var, NumericsError> {
        if let Some(mask) = column_mask {
            if mask.len() != self.value(a).cols() {
                return Err(NumericsError::Shape { op: "masked_softmax_rows", left: self.value(a).shape(), right: (1, mask.len()) });
            }
        }
        let out = self.value(a).masked_softmax_rows(column_mask);
        let ng = self.needs(a);
        Ok(self.push(out, Op::MaskedSoftmax(a), ng))
    }

    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericsError> {
        let (out, normed, inv_std) = self.value(x).layer_norm_parts(self.value(gain), self.value(bias), eps)?;
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, normed, inv_std }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let values: Vec<&Matrix> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Matrix::concat_cols(&values)?;
        let ng = parts.iter().any(|v| self.needs(*v));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var, NumericsError> {
        let out = self.value(a).slice_cols(start, width)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    /// Row lookup; `None` produces a zero row that receives no gradient.
    pub fn gather_rows(&mut self, table: Var, indices: Vec<Option<usize>>) -> Result<Var, NumericsError> {
        let out = self.value(table).gather_rows(&indices)?;
        let ng = self.needs(table);
        Ok(self.push(out, Op::GatherRows(table, indices), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum_squares());
        let ng = self.needs(a);
        self.push(out, Op::SumSquares(a), ng)
    }

    /// Masked binary cross-entropy over paired positive/negative score
    /// columns: `-Σ_{mask} [ln ŷ⁺ + ln(1-ŷ⁻)]`, scores clamped to
    /// `[BCE_CLAMP, 1-BCE_CLAMP]`.
    pub fn bce(&mut self, pos: Var, neg: Var, mask: &[bool]) -> Result<Var, NumericsError> {
        let (p, n) = (self.value(pos), self.value(neg));
        if p.cols() != 1 || p.shape() != n.shape() || p.rows() != mask.len() {
            return Err(NumericsError::Shape { op: "bce", left: p.shape(), right: n.shape() });
        }
        let loss = bce_value(p.data(), n.data(), mask);
        let ng = self.needs(pos) || self.needs(neg);
        Ok(self.push(Matrix::scalar(loss), Op::Bce { pos, neg, mask: mask.to_vec() }, ng))
    }

    /// Replays adjoints from the scalar `loss` back to every parameter leaf.
    /// Leaves the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(NumericsError::NotScalar { rows: shape.0, cols: shape.1 });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param(_) = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
        }

        let mut by_param = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                let g = grads[idx].take().unwrap_or_else(|| {
                    let (r, c) = node.value.get().shape();
                    Matrix::zeros(r, c)
                });
                match by_param.get_mut(&id) {
                    None => {
                        by_param.insert(id, g);
                    }
                    Some(acc) => Matrix::accumulate(acc, &g)?,
                }
            }
        }
        Ok(Gradients { by_param })
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<(), NumericsError> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Param(_) | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let ga = g.matmul_transposed(self.value(*b))?;
                    add_grad(grads, *a, ga)?;
                }
                if self.needs(*b) {
                    let gb = self.value(*a).transposed_matmul(g)?;
                    add_grad(grads, *b, gb)?;
                }
            }
            Op::MatMulTransposed(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                if self.needs(*a) {
                    let ga = g.matmul(self.value(*b))?;
                    add_grad(grads, *a, ga)?;
                }
                if self.needs(*b) {
                    let gb = g.transposed_matmul(self.value(*a))?;
                    add_grad(grads, *b, gb)?;
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    add_grad(grads, *a, g.clone())?;
                }
                if self.needs(*b) {
                    add_grad(grads, *b, g.clone())?;
                }
            }
            Op::AddRow(a, bias) => {
                if self.needs(*a) {
                    add_grad(grads, *a, g.clone())?;
                }
                if self.needs(*bias) {
                    add_grad(grads, *bias, column_sums(g))?;
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    add_grad(grads, *a, g.hadamard(self.value(*b))?)?;
                }
                if self.needs(*b) {
                    add_grad(grads, *b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Scale(a, s) => add_grad(grads, *a, g.scale(*s))?,
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let ga = g.zip_with(x, "leaky_relu_grad", |gv, xv| if xv >= 0.0 { gv } else { slope * gv })?;
                add_grad(grads, *a, ga)?;
            }
            Op::Sigmoid(a) => {
                let y = node.value.get();
                let ga = g.zip_with(y, "sigmoid_grad", |gv, yv| gv * yv * (1.0 - yv))?;
                add_grad(grads, *a, ga)?;
            }
            Op::MaskedSoftmax(a) => {
                // dx = y ⊙ (g − rowsum(g ⊙ y)); masked columns have y = 0
                let y = node.value.get();
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (c, out) in ga.row_mut(r).iter_mut().enumerate() {
                        *out = yr[c] * (gr[c] - dot);
                    }
                }
                add_grad(grads, *a, ga)?;
            }
            Op::LayerNorm { x, gain, bias, normed, inv_std } => {
                let gain_v = self.value(*gain);
                let cols = normed.cols();
                if self.needs(*bias) {
                    add_grad(grads, *bias, column_sums(g))?;
                }
                if self.needs(*gain) {
                    let mut gg = Matrix::zeros(1, cols);
                    for r in 0..normed.rows() {
                        for c in 0..cols {
                            gg.data_mut()[c] += g.get(r, c) * normed.get(r, c);
                        }
                    }
                    add_grad(grads, *gain, gg)?;
                }
                if self.needs(*x) {
                    let width = cols as f64;
                    let mut gx = Matrix::zeros(normed.rows(), cols);
                    for r in 0..normed.rows() {
                        let dxh: Vec<f64> = (0..cols).map(|c| g.get(r, c) * gain_v.data()[c]).collect();
                        let mean_d = dxh.iter().sum::<f64>() / width;
                        let mean_dx = (0..cols).map(|c| dxh[c] * normed.get(r, c)).sum::<f64>() / width;
                        for c in 0..cols {
                            gx.set(r, c, inv_std[r] * (dxh[c] - mean_d - normed.get(r, c) * mean_dx));
                        }
                    }
                    add_grad(grads, *x, gx)?;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs(*p) {
                        add_grad(grads, *p, g.slice_cols(offset, w)?)?;
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                add_grad(grads, *a, ga)?;
            }
            Op::GatherRows(table, indices) => {
                let src = self.value(*table);
                let mut gt = Matrix::zeros(src.rows(), src.cols());
                for (r, idx) in indices.iter().enumerate() {
                    if let Some(i) = *idx {
                        for (acc, v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                }
                add_grad(grads, *table, gt)?;
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                add_grad(grads, *a, Matrix::filled(r, c, g.item()?))?;
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.item()?;
                add_grad(grads, *a, self.value(*a).scale(s))?;
            }
            Op::Bce { pos, neg, mask } => {
                let upstream = g.item()?;
                let lo = BCE_CLAMP;
                let hi = 1.0 - BCE_CLAMP;
                if self.needs(*pos) {
                    let p = self.value(*pos);
                    let gp: Vec<f64> = p
                        .data()
                        .iter()
                        .zip(mask)
                        .map(|(&y, &m)| if m && y > lo && y < hi { -upstream / y } else { 0.0 })
                        .collect();
                    add_grad(grads, *pos, Matrix::column_vector(&gp))?;
                }
                if self.needs(*neg) {
                    let n = self.value(*neg);
                    let gn: Vec<f64> = n
                        .data()
                        .iter()
                        .zip(mask)
                        .map(|(&y, &m)| if m && y > lo && y < hi { upstream / (1.0 - y) } else { 0.0 })
                        .collect();
                    add_grad(grads, *neg, Matrix::column_vector(&gn))?;
                }
            }
        }
        Ok(())
    }
}

/// Forward value of the masked binary cross-entropy.
pub fn bce_value(pos: &[f64], neg: &[f64], mask: &[bool]) -> f64 {
    let clamp = |y: f64| y.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let mut loss = 0.0;
    for ((&p, &n), &m) in pos.iter().zip(neg).zip(mask) {
        if m {
            loss -= clamp(p).ln() + (1.0 - clamp(n)).ln();
        }
    }
    loss
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (acc, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *acc += v;
        }
    }
    out
}

fn add_grad(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<(), NumericsError> {
    match &mut grads[v.0] {
        Some(acc) => acc.accumulate(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, Objective};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Graph<F>(F);

    impl<F> Graph<F>
    where
        F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var, NumericsError>,
    {
        fn run<'a>(&self, tape: &mut Tape<'a>, params: &'a [Matrix]) -> Result<Var, NumericsError> {
            let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect();
            (self.0)(tape, &vars)
        }
    }

    impl<F> Objective for Graph<F>
    where
        F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var, NumericsError>,
    {
        fn value(&self, params: &[Matrix]) -> Result<f64, NumericsError> {
            let mut tape = Tape::new();
            let out = self.run(&mut tape, params)?;
            tape.value(out).item()
        }

        fn gradient(&self, params: &[Matrix]) -> Result<Vec<Matrix>, NumericsError> {
            let mut tape = Tape::new();
            let out = self.run(&mut tape, params)?;
            let g = tape.backward(out)?;
            Ok((0..params.len()).map(|i| g.get(i).cloned().unwrap()).collect())
        }
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let w = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(0, &w);
        let s = tape.sum(v);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(0).unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn half_square_gives_identity() {
        let w = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(0, &w);
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq);
        let half = tape.scale(s, 0.5);
        let g = tape.backward(half).unwrap();
        assert_eq!(g.get(0).unwrap(), &w);
    }

    #[test]
    fn untouched_leaf_gets_zero_and_non_scalar_is_rejected() {
        let a = Matrix::filled(2, 3, 1.0);
        let b = Matrix::filled(4, 1, 2.0);
        let mut tape = Tape::new();
        let va = tape.param(0, &a);
        let _vb = tape.param(1, &b);
        let s = tape.sum(va);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(1).unwrap(), &Matrix::zeros(4, 1));
        assert!(matches!(tape.backward(va), Err(NumericsError::NotScalar { rows: 2, cols: 3 })));
        tape.clear();
        assert!(tape.is_empty());
    }

    #[test]
    fn bce_closed_form_and_masking() {
        let pos = Matrix::column_vector(&[0.5, 0.9]);
        let neg = Matrix::column_vector(&[0.5, 0.3]);
        let mut tape = Tape::new();
        let p = tape.constant(pos);
        let n = tape.constant(neg);
        let loss = tape.bce(p, n, &[true, false]).unwrap();
        assert!((tape.value(loss).item().unwrap() - 1.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = vec![
            random(3, 4, &mut rng), // x
            random(4, 4, &mut rng), // w
            random(1, 4, &mut rng), // bias
            random(1, 4, &mut rng), // gain
            random(5, 4, &mut rng), // table
        ];
        let graph = Graph(|t: &mut Tape<'_>, v: &[Var]| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add_row(h, v[2])?;
            let h = t.leaky_relu(h, 0.2);
            let g = t.gather_rows(v[4], vec![Some(1), None, Some(4)])?;
            let h = t.mul(h, g)?;
            let h = t.add(h, v[0])?;
            let ln = t.layer_norm_rows(h, v[3], v[2], 1e-8)?;
            let logits = t.matmul_transposed(ln, v[0])?;
            let logits = t.scale(logits, 0.5);
            let probs = t.masked_softmax_rows(logits, Some(&[true, false, true]))?;
            let mixed = t.matmul(probs, v[0])?;
            let left = t.slice_cols(mixed, 0, 2)?;
            let right = t.slice_cols(ln, 2, 2)?;
            let cat = t.concat_cols(&[left, right])?;
            let sq = t.sum_squares(cat);
            let col = t.slice_cols(cat, 1, 1)?;
            let pos = t.sigmoid(col);
            let col2 = t.slice_cols(cat, 3, 1)?;
            let neg = t.sigmoid(col2);
            let bce = t.bce(pos, neg, &[true, true, false])?;
            let total = t.add(bce, sq)?;
            Ok(total)
        });
        let report = finite_diff_check(&graph, &params, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}
