use super::bspline::KnotGrid;
use super::{AutodiffError, Op, Result, Shape, Tape, Tensor, Var};

pub const LAYERNORM_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        let mut p = 0;
        while p + 4 <= k {
            let (a0, a1, a2, a3) = (a_row[p], a_row[p + 1], a_row[p + 2], a_row[p + 3]);
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            for j in 0..n {
                out_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            p += 4;
        }
        for (q, &aiq) in a_row.iter().enumerate().skip(p) {
            let b_row = &b[q * n..(q + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aiq * bv;
            }
        }
    }
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(sa)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_parts(t.shape(), data);
        self.record(out, &[x], op)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let shape = self.same_shape(name, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.record(Tensor::from_parts(shape, data), &[a, b], op))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.rows {
            return Err(AutodiffError::Shape {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let mut out = vec![0.0; sa.rows * sb.cols];
        gemm_acc(self.data(a), self.data(b), &mut out, sa.rows, sa.cols, sb.cols);
        let t = Tensor::from_parts(Shape::new(sa.rows, sb.cols), out);
        Ok(self.record(t, &[a, b], Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddConst(x), |v| v + c)
    }

    /// Multiplies every entry of `x` by the 1×1 node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let ss = self.shape(s);
        if ss.len() != 1 {
            return Err(AutodiffError::Shape {
                op: "mul_scalar",
                left: self.shape(x),
                right: ss,
            });
        }
        let c = self.scalar(s);
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * c).collect();
        let out = Tensor::from_parts(t.shape(), data);
        Ok(self.record(out, &[x, s], Op::MulScalar(x, s)))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Op::LeakyRelu(x, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    /// `x · sigmoid(x)`
    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Silu(x), |v| v * sigmoid(v))
    }

    /// `max(x, c)`; the gradient flows only where `x > c`.
    pub fn clamp_min(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::ClampMin(x, c), |v| v.max(c))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.data().iter().any(|v| v.is_nan()) {
            return Err(AutodiffError::NonFinite { op: "softmax_rows" });
        }
        let Shape { rows, cols } = t.shape();
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::from_parts(t.shape(), out);
        Ok(self.record(out, &[x], Op::Softmax(x)))
    }

    /// Parameter-free row normalisation: `(x - mean) / sqrt(var + 1e-5)`.
    pub fn layernorm_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let Shape { rows, cols } = t.shape();
        let mut out = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
        }
        let out = Tensor::from_parts(t.shape(), out);
        self.record(out, &[x], Op::LayerNorm { x, inv_std })
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.record(Tensor::scalar(s), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        self.record(Tensor::scalar(m), &[x], Op::Mean(x))
    }

    /// Sums each row across its columns: `[m×n] -> [m×1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let Shape { rows, cols } = t.shape();
        let data = (0..rows)
            .map(|r| t.data()[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        let out = Tensor::from_parts(Shape::new(rows, 1), data);
        self.record(out, &[x], Op::SumCols(x))
    }

    /// Main diagonal of a square matrix as a column.
    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.rows != s.cols {
            return Err(AutodiffError::Shape {
                op: "diag",
                left: s,
                right: Shape::new(s.cols, s.rows),
            });
        }
        let d = self.data(x);
        let data = (0..s.rows).map(|i| d[i * s.cols + i]).collect();
        let out = Tensor::from_parts(Shape::new(s.rows, 1), data);
        Ok(self.record(out, &[x], Op::Diag(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let Shape { rows, cols } = t.shape();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = t.data()[r * cols + c];
            }
        }
        let out = Tensor::from_parts(Shape::new(cols, rows), out);
        self.record(out, &[x], Op::Transpose(x))
    }

    /// Same data reinterpreted with a new row/column split.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(x);
        if t.len() != rows * cols {
            return Err(AutodiffError::Shape {
                op: "reshape",
                left: t.shape(),
                right: Shape::new(rows, cols),
            });
        }
        let out = Tensor::from_parts(Shape::new(rows, cols), t.data().to_vec());
        Ok(self.record(out, &[x], Op::Reshape(x)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let Shape { rows, cols } = self.shape(x);
        if start + len > cols {
            return Err(AutodiffError::Range {
                op: "slice_cols",
                start,
                end: start + len,
                extent: cols,
            });
        }
        let d = self.data(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&d[r * cols + start..r * cols + start + len]);
        }
        let out = Tensor::from_parts(Shape::new(rows, len), out);
        Ok(self.record(out, &[x], Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let Shape { rows, cols } = self.shape(x);
        if start + len > rows {
            return Err(AutodiffError::Range {
                op: "slice_rows",
                start,
                end: start + len,
                extent: rows,
            });
        }
        let out = self.data(x)[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_parts(Shape::new(len, cols), out);
        Ok(self.record(out, &[x], Op::SliceRows { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]);
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.rows != first.rows {
                return Err(AutodiffError::Shape {
                    op: "concat_cols",
                    left: first,
                    right: s,
                });
            }
            cols += s.cols;
        }
        let mut out = Vec::with_capacity(first.rows * cols);
        for r in 0..first.rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_parts(Shape::new(first.rows, cols), out);
        Ok(self.record(out, parts, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]);
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.cols != first.cols {
                return Err(AutodiffError::Shape {
                    op: "concat_rows",
                    left: first,
                    right: s,
                });
            }
            rows += s.rows;
            out.extend_from_slice(self.data(p));
        }
        let out = Tensor::from_parts(Shape::new(rows, first.cols), out);
        Ok(self.record(out, parts, Op::ConcatRows(parts.to_vec())))
    }

    /// Repeats each row `times` times consecutively: `[m×n] -> [m·times×n]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let t = self.value(x);
        let Shape { rows, cols } = t.shape();
        let mut out = Vec::with_capacity(rows * times * cols);
        for r in 0..rows {
            for _ in 0..times {
                out.extend_from_slice(t.row(r));
            }
        }
        let out = Tensor::from_parts(Shape::new(rows * times, cols), out);
        self.record(out, &[x], Op::RepeatRows { x, times })
    }

    /// Expands every entry into its B-spline basis values:
    /// `[m×n] -> [m × n·n_basis]`, entry `(r, i·n_basis + p)` = `B_p(x[r, i])`.
    pub fn bspline_rows(&mut self, x: Var, grid: &KnotGrid) -> Var {
        let t = self.value(x);
        let Shape { rows, cols } = t.shape();
        let nb = grid.n_basis();
        let mut values = vec![0.0; rows * cols * nb];
        let mut derivative = vec![0.0; rows * cols * nb];
        let mut scratch = grid.scratch();
        for (j, &v) in t.data().iter().enumerate() {
            grid.eval_into(
                v,
                &mut values[j * nb..(j + 1) * nb],
                &mut derivative[j * nb..(j + 1) * nb],
                &mut scratch,
            );
        }
        let out = Tensor::from_parts(Shape::new(rows, cols * nb), values);
        self.record(out, &[x], Op::BSpline { x, derivative })
    }

    /// Fused spline part of a KAN layer:
    /// `out[k, j] = Σ_i γ[i, j] · Σ_p B_p(x[k, i]) · coef[i·n_basis + p, j]`.
    ///
    /// Same result as `bspline_rows(x) · (coef ⊙ repeat_rows(γ, n_basis))`
    /// without materialising the scaled coefficient matrix.
    pub fn kan_spline(&mut self, x: Var, coef: Var, gamma: Var, grid: &KnotGrid) -> Result<Var> {
        let (sx, sc, sg) = (self.shape(x), self.shape(coef), self.shape(gamma));
        let nb = grid.n_basis();
        if sc.rows != sx.cols * nb || sg != Shape::new(sx.cols, sc.cols) {
            return Err(AutodiffError::Shape {
                op: "kan_spline",
                left: sx,
                right: sc,
            });
        }
        let (m, n, o) = (sx.rows, sx.cols, sc.cols);
        let mut basis = vec![0.0; m * n * nb];
        let mut derivative = vec![0.0; m * n * nb];
        let mut scratch = grid.scratch();
        for (e, &v) in self.data(x).iter().enumerate() {
            let r = e * nb..(e + 1) * nb;
            grid.eval_into(v, &mut basis[r.clone()], &mut derivative[r], &mut scratch);
        }
        let (cd, gd) = (self.data(coef), self.data(gamma));
        let mut out = vec![0.0; m * o];
        let mut tmp = vec![0.0; o];
        for k in 0..m {
            let out_row = &mut out[k * o..(k + 1) * o];
            for i in 0..n {
                tmp.fill(0.0);
                let b = &basis[(k * n + i) * nb..(k * n + i + 1) * nb];
                for (p, &bv) in b.iter().enumerate() {
                    if bv != 0.0 {
                        let c_row = &cd[(i * nb + p) * o..(i * nb + p + 1) * o];
                        tmp.iter_mut().zip(c_row).for_each(|(t, c)| *t += bv * c);
                    }
                }
                let g_row = &gd[i * o..(i + 1) * o];
                for ((dst, t), gv) in out_row.iter_mut().zip(&tmp).zip(g_row) {
                    *dst += gv * t;
                }
            }
        }
        let t = Tensor::from_parts(Shape::new(m, o), out);
        Ok(self.record(
            t,
            &[x, coef, gamma],
            Op::KanSpline {
                x,
                coef,
                gamma,
                basis,
                derivative,
            },
        ))
    }

    pub(super) fn propagate(&mut self, idx: usize, g: &[f64]) {
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        let out = self.nodes[idx].value.clone();
        let shape = out.shape();
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let sa = self.shape(a);
                let sb = self.shape(b);
                let (m, k, n) = (sa.rows, sa.cols, sb.cols);
                if self.requires_grad(a) {
                    // g · bᵀ
                    let bd = self.data(b);
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let bp = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] = gi.iter().zip(bp).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.add_grad(a, &ga);
                }
                if self.requires_grad(b) {
                    // aᵀ · g, accumulated in place
                    let ad = self.nodes[a.0].value.clone();
                    let slot = self.grad_slot(b).expect("checked requires_grad");
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let row = &mut slot[p * n..(p + 1) * n];
                            row.iter_mut().zip(gi).for_each(|(s, &gv)| *s += aip * gv);
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                self.add_grad(a, g);
                self.add_grad(b, g);
            }
            &Op::Sub(a, b) => {
                self.add_grad(a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.add_grad(b, &neg);
            }
            &Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(self.data(a)).map(|(x, y)| x * y).collect();
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            &Op::Div(a, b) => {
                let (ad, bd) = (self.data(a), self.data(b));
                let ga: Vec<f64> = g.iter().zip(bd).map(|(x, y)| x / y).collect();
                let gb: Vec<f64> = g
                    .iter()
                    .zip(ad.iter().zip(bd))
                    .map(|(gv, (x, y))| -gv * x / (y * y))
                    .collect();
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            &Op::Scale(x, c) => {
                let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.add_grad(x, &gx);
            }
            &Op::AddConst(x) => self.add_grad(x, g),
            &Op::MulScalar(x, s) => {
                let c = self.scalar(s);
                let gs: f64 = g.iter().zip(self.data(x)).map(|(a, b)| a * b).sum();
                let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.add_grad(x, &gx);
                self.add_grad(s, &[gs]);
            }
            &Op::Square(x) => {
                let gx: Vec<f64> = g.iter().zip(self.data(x)).map(|(a, b)| 2.0 * a * b).collect();
                self.add_grad(x, &gx);
            }
            &Op::Sqrt(x) => {
                let gx: Vec<f64> = g.iter().zip(out.data()).map(|(a, y)| a / (2.0 * y)).collect();
                self.add_grad(x, &gx);
            }
            &Op::Ln(x) => {
                let gx: Vec<f64> = g.iter().zip(self.data(x)).map(|(a, v)| a / v).collect();
                self.add_grad(x, &gx);
            }
            &Op::Relu(x) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(self.data(x))
                    .map(|(a, &v)| if v > 0.0 { *a } else { 0.0 })
                    .collect();
                self.add_grad(x, &gx);
            }
            &Op::LeakyRelu(x, slope) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(self.data(x))
                    .map(|(a, &v)| if v > 0.0 { *a } else { slope * a })
                    .collect();
                self.add_grad(x, &gx);
            }
            &Op::Silu(x) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(self.data(x))
                    .map(|(a, &v)| {
                        let s = sigmoid(v);
                        a * s * (1.0 + v * (1.0 - s))
                    })
                    .collect();
                self.add_grad(x, &gx);
            }
            &Op::ClampMin(x, c) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(self.data(x))
                    .map(|(a, &v)| if v > c { *a } else { 0.0 })
                    .collect();
                self.add_grad(x, &gx);
            }
            &Op::Softmax(x) => {
                let (rows, cols) = (shape.rows, shape.cols);
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let dot: f64 = g[span.clone()].iter().zip(&y[span.clone()]).map(|(a, b)| a * b).sum();
                    for j in span {
                        gx[j] = y[j] * (g[j] - dot);
                    }
                }
                self.add_grad(x, &gx);
            }
            Op::LayerNorm { x, inv_std } => {
                let x = *x;
                let (rows, cols) = (shape.rows, shape.cols);
                let y = out.data();
                let n = cols as f64;
                let mut gx = vec![0.0; y.len()];
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let gr = &g[span.clone()];
                    let yr = &y[span.clone()];
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for (j, idx) in span.enumerate() {
                        gx[idx] = inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                self.add_grad(x, &gx);
            }
            &Op::Sum(x) => {
                let gx = vec![g[0]; self.value(x).len()];
                self.add_grad(x, &gx);
            }
            &Op::Mean(x) => {
                let len = self.value(x).len();
                let gx = vec![g[0] / len as f64; len];
                self.add_grad(x, &gx);
            }
            &Op::SumCols(x) => {
                let cols = self.shape(x).cols;
                let gx: Vec<f64> = g.iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect();
                self.add_grad(x, &gx);
            }
            &Op::Diag(x) => {
                let n = shape.rows;
                let mut gx = vec![0.0; n * n];
                for i in 0..n {
                    gx[i * n + i] = g[i];
                }
                self.add_grad(x, &gx);
            }
            &Op::Transpose(x) => {
                // output is cols×rows of x
                let (r_out, c_out) = (shape.rows, shape.cols);
                let mut gx = vec![0.0; g.len()];
                for r in 0..r_out {
                    for c in 0..c_out {
                        gx[c * r_out + r] = g[r * c_out + c];
                    }
                }
                self.add_grad(x, &gx);
            }
            &Op::Reshape(x) => self.add_grad(x, g),
            &Op::SliceCols { x, start } => {
                let src_cols = self.shape(x).cols;
                let (rows, len) = (shape.rows, shape.cols);
                if let Some(slot) = self.grad_slot(x) {
                    for r in 0..rows {
                        let dst = &mut slot[r * src_cols + start..r * src_cols + start + len];
                        dst.iter_mut().zip(&g[r * len..(r + 1) * len]).for_each(|(d, v)| *d += v);
                    }
                }
            }
            &Op::SliceRows { x, start } => {
                let cols = shape.cols;
                if let Some(slot) = self.grad_slot(x) {
                    let dst = &mut slot[start * cols..start * cols + g.len()];
                    dst.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let total = shape.cols;
                let mut offset = 0;
                for p in parts {
                    let Shape { rows, cols } = self.shape(p);
                    if let Some(slot) = self.grad_slot(p) {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + cols];
                            slot[r * cols..(r + 1) * cols]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, v)| *d += v);
                        }
                    }
                    offset += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let len = self.value(p).len();
                    self.add_grad(p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            &Op::RepeatRows { x, times } => {
                let Shape { rows, cols } = self.shape(x);
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let dst = &mut gx[r * cols..(r + 1) * cols];
                    for t in 0..times {
                        let src = &g[(r * times + t) * cols..(r * times + t + 1) * cols];
                        dst.iter_mut().zip(src).for_each(|(d, v)| *d += v);
                    }
                }
                self.add_grad(x, &gx);
            }
            Op::BSpline { x, derivative } => {
                let x = *x;
                let entries = self.value(x).len();
                let nb = derivative.len() / entries.max(1);
                let gx: Vec<f64> = (0..entries)
                    .map(|j| {
                        g[j * nb..(j + 1) * nb]
                            .iter()
                            .zip(&derivative[j * nb..(j + 1) * nb])
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                self.add_grad(x, &gx);
            }
            Op::KanSpline {
                x,
                coef,
                gamma,
                basis,
                derivative,
            } => {
                let (x, coef, gamma) = (*x, *coef, *gamma);
                let [m, n] = self.shape(x).dims();
                let o = self.shape(coef).cols;
                let nb = basis.len() / (m * n).max(1);
                let (want_x, want_c, want_g) =
                    (self.requires_grad(x), self.requires_grad(coef), self.requires_grad(gamma));
                let cd = self.data(coef);
                let gd = self.data(gamma);
                let mut gx = vec![0.0; m * n];
                let mut gc = vec![0.0; if want_c { cd.len() } else { 0 }];
                let mut gg = vec![0.0; if want_g { gd.len() } else { 0 }];
                let mut u = vec![0.0; o];
                for k in 0..m {
                    let gk = &g[k * o..(k + 1) * o];
                    for i in 0..n {
                        let e = k * n + i;
                        let b = &basis[e * nb..(e + 1) * nb];
                        let db = &derivative[e * nb..(e + 1) * nb];
                        let g_row = &gd[i * o..(i + 1) * o];
                        u.iter_mut()
                            .zip(g_row.iter().zip(gk))
                            .for_each(|(u, (gv, gkv))| *u = gv * gkv);
                        for p in 0..nb {
                            if b[p] == 0.0 && db[p] == 0.0 {
                                continue;
                            }
                            let row = (i * nb + p) * o..(i * nb + p + 1) * o;
                            let c_row = &cd[row.clone()];
                            if want_x && db[p] != 0.0 {
                                gx[e] += db[p] * c_row.iter().zip(&u).map(|(c, u)| c * u).sum::<f64>();
                            }
                            if want_c && b[p] != 0.0 {
                                gc[row].iter_mut().zip(&u).for_each(|(d, u)| *d += b[p] * u);
                            }
                            if want_g && b[p] != 0.0 {
                                let dst = &mut gg[i * o..(i + 1) * o];
                                for ((d, c), gkv) in dst.iter_mut().zip(c_row).zip(gk) {
                                    *d += b[p] * c * gkv;
                                }
                            }
                        }
                    }
                }
                if want_x {
                    self.add_grad(x, &gx);
                }
                if want_c {
                    self.add_grad(coef, &gc);
                }
                if want_g {
                    self.add_grad(gamma, &gg);
                }
            }
        }
        self.nodes[idx].op = op;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_orthogonal_pick() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::identity(2));
        let m = tape.constant(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.data(p), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(t(1, 2, &[1.0, 0.0]));
        let b = tape.constant(t(2, 1, &[0.0, 5.0]));
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.data(p), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2x3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_uniform_and_overflow_safe() {
        let mut tape = Tape::new();
        let x = tape.constant(t(2, 4, &[0.0, 0.0, 0.0, 0.0, 1000.0, 0.0, 0.0, 0.0]));
        let y = tape.softmax_rows(x).unwrap();
        let d = tape.data(y);
        for v in &d[..4] {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert!((d[4] - 1.0).abs() < 1e-12);
        assert!(d[5..].iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 2, &[f64::NAN, 0.0]));
        assert!(matches!(
            tape.softmax_rows(x),
            Err(AutodiffError::NonFinite { .. })
        ));
    }

    #[test]
    fn layernorm_constant_and_symmetric_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 3, &[3.0, 3.0, 3.0]));
        let y = tape.layernorm_rows(x);
        assert_eq!(tape.data(y), &[0.0, 0.0, 0.0]);

        let x = tape.constant(t(1, 2, &[-1.0, 1.0]));
        let y = tape.layernorm_rows(x);
        let d = tape.data(y);
        assert!((d[0] + 1.0).abs() < 1e-5 && (d[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn silu_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 2, &[0.0, 20.0]));
        let y = tape.silu(x);
        assert_eq!(tape.data(y)[0], 0.0);
        assert!((tape.data(y)[1] - 20.0).abs() < 1e-7);
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut tape = Tape::new();
        let x = tape.param(t(2, 2, &[1.0, -2.0, 3.0, 0.5]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);

        let mut tape = Tape::new();
        let x = tape.param(t(2, 2, &[1.0, -2.0, 3.0, 0.5]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(2, 1));
        assert!(matches!(
            tape.backward(x),
            Err(AutodiffError::NonScalar(_))
        ));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let a = tape.scale(x, 2.0);
        let b = tape.mul(x, a).unwrap();
        let c = tape.add(a, b).unwrap();
        tape.backward(c).unwrap();
        // c = 2x + 2x^2
        assert_eq!(tape.grad(x).unwrap(), &[2.0 + 4.0 * 3.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.param(Tensor::scalar(5.0));
        let y = tape.mul(c, x).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }
    #[test]
    fn kan_spline_matches_composite_form() {
        let grid = KnotGrid::uniform(-2.0, 2.0, 6, 3);
        let xs = [0.3, -1.7, 2.5, 0.0, 1.1, -0.4];
        let cs: Vec<f64> = (0..3 * 6 * 2).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
        let gs = [0.5, -1.2, 2.0, 0.7, -0.3, 1.5];
        let run = |fused: bool| {
            let mut tape = Tape::new();
            let x = tape.param(t(2, 3, &xs));
            let c = tape.param(t(18, 2, &cs));
            let g = tape.param(t(3, 2, &gs));
            let y = if fused {
                tape.kan_spline(x, c, g, &grid).unwrap()
            } else {
                let b = tape.bspline_rows(x, &grid);
                let rep = tape.repeat_rows(g, 6);
                let w = tape.mul(c, rep).unwrap();
                tape.matmul(b, w).unwrap()
            };
            let sq = tape.square(y);
            let l = tape.sum(sq);
            tape.backward(l).unwrap();
            let mut out = tape.data(y).to_vec();
            for v in [x, c, g] {
                out.extend_from_slice(tape.grad(v).unwrap());
            }
            out
        };
        let (a, b) = (run(true), run(false));
        assert_eq!(a.len(), b.len());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12, "{u} vs {v}");
        }
    }

    #[test]
    fn kan_spline_rejects_bad_shapes() {
        let grid = KnotGrid::uniform(-1.0, 1.0, 4, 2);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(2, 3));
        let c = tape.constant(Tensor::zeros(11, 2));
        let g = tape.constant(Tensor::zeros(3, 2));
        assert!(tape.kan_spline(x, c, g, &grid).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
            (1..=max_rows, 2..=max_cols).prop_flat_map(|(r, c)| {
                proptest::collection::vec(-10.0..10.0f64, r * c)
                    .prop_map(move |d| Tensor::from_vec(r, c, d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn softmax_rows_are_distributions(x in matrix(5, 9)) {
                let cols = x.cols();
                let mut tape = Tape::new();
                let v = tape.constant(x);
                let y = tape.softmax_rows(v).unwrap();
                for row in tape.data(y).chunks(cols) {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
                }
            }

            #[test]
            fn layernorm_rows_are_centred(x in matrix(5, 9)) {
                let cols = x.cols();
                let mut tape = Tape::new();
                let v = tape.constant(x);
                let y = tape.layernorm_rows(v);
                for row in tape.data(y).chunks(cols) {
                    prop_assert!((row.iter().sum::<f64>() / cols as f64).abs() < 1e-12);
                }
            }

            #[test]
            fn replay_is_bit_identical(
                (x, w) in (1..=4usize, 2..=6usize, 2..=6usize).prop_flat_map(|(r, k, c)| (
                    proptest::collection::vec(-3.0..3.0f64, r * k).prop_map(move |d| Tensor::from_vec(r, k, d).unwrap()),
                    proptest::collection::vec(-3.0..3.0f64, k * c).prop_map(move |d| Tensor::from_vec(k, c, d).unwrap()),
                ))
            ) {
                let run = || {
                    let mut tape = Tape::new();
                    let a = tape.constant(x.clone());
                    let b = tape.param(w.clone());
                    let h = tape.matmul(a, b).unwrap();
                    let h = tape.layernorm_rows(h);
                    let h = tape.softmax_rows(h).unwrap();
                    let h = tape.silu(h);
                    let l = tape.sum(h);
                    tape.backward(l).unwrap();
                    (tape.data(l).to_vec(), tape.grad(b).unwrap().to_vec())
                };
                prop_assert_eq!(run(), run());
            }
        }
    }
}
