//! Reverse-mode automatic differentiation over f64 matrices.
//!
//! A forward pass records operations on a [`Tape`]; [`Tape::backward`]
//! replays them in reverse, accumulating gradients. Everything is a 2-D
//! `ndarray` matrix (vectors are 1×n), computation is single threaded, and
//! all arithmetic is f64, so forward values and gradients are bitwise
//! reproducible run to run.

use ndarray::{s, Array2, Axis};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

type BackFn = Box<dyn Fn(&[Array2<f64>], &Array2<f64>, &mut [Array2<f64>])>;

pub struct Tape {
    vals: Vec<Array2<f64>>,
    backs: Vec<Option<BackFn>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            vals: Vec::new(),
            backs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.vals[id.0]
    }

    fn push(&mut self, value: Array2<f64>, back: Option<BackFn>) -> NodeId {
        self.vals.push(value);
        self.backs.push(back);
        NodeId(self.vals.len() - 1)
    }

    /// A leaf node (input or parameter).
    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, None)
    }

    /// C = A · B
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.vals[a.0].dot(&self.vals[b.0]);
        self.push(
            value,
            Some(Box::new(move |vals, grad, grads| {
                grads[a.0] = &grads[a.0] + &grad.dot(&vals[b.0].t());
                grads[b.0] = &grads[b.0] + &vals[a.0].t().dot(grad);
            })),
        )
    }

    /// C = A · Bᵀ
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.vals[a.0].dot(&self.vals[b.0].t());
        self.push(
            value,
            Some(Box::new(move |vals, grad, grads| {
                grads[a.0] = &grads[a.0] + &grad.dot(&vals[b.0]);
                grads[b.0] = &grads[b.0] + &grad.t().dot(&vals[a.0]);
            })),
        )
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.vals[a.0] + &self.vals[b.0];
        self.push(
            value,
            Some(Box::new(move |_, grad, grads| {
                grads[a.0] = &grads[a.0] + grad;
                grads[b.0] = &grads[b.0] + grad;
            })),
        )
    }

    /// Adds a 1×n row vector to every row of an L×n matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (l, n) = self.vals[a.0].dim();
        let value = &self.vals[a.0] + &self.vals[row.0].broadcast((l, n)).expect("row broadcast");
        self.push(
            value,
            Some(Box::new(move |_, grad, grads| {
                grads[a.0] = &grads[a.0] + grad;
                grads[row.0] =
                    &grads[row.0] + &grad.sum_axis(Axis(0)).insert_axis(Axis(0));
            })),
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.vals[a.0] * &self.vals[b.0];
        self.push(
            value,
            Some(Box::new(move |vals, grad, grads| {
                grads[a.0] = &grads[a.0] + &(grad * &vals[b.0]);
                grads[b.0] = &grads[b.0] + &(grad * &vals[a.0]);
            })),
        )
    }

    /// C = c · A for a scalar constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = &self.vals[a.0] * c;
        self.push(
            value,
            Some(Box::new(move |_, grad, grads| {
                grads[a.0] = &grads[a.0] + &(grad * c);
            })),
        )
    }

    /// Column-wise concatenation [A | B].
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let na = self.vals[a.0].ncols();
        let value = ndarray::concatenate(Axis(1), &[self.vals[a.0].view(), self.vals[b.0].view()])
            .expect("concat shapes agree");
        self.push(
            value,
            Some(Box::new(move |_, grad, grads| {
                grads[a.0] = &grads[a.0] + &grad.slice(s![.., ..na]);
                grads[b.0] = &grads[b.0] + &grad.slice(s![.., na..]);
            })),
        )
    }

    /// Rows `start..end` of A.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let value = self.vals[a.0].slice(s![start..end, ..]).to_owned();
        self.push(
            value,
            Some(Box::new(move |_, grad, grads| {
                let mut view = grads[a.0].slice_mut(s![start..end, ..]);
                view += grad;
            })),
        )
    }

    /// Columns `start..end` of A.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let value = self.vals[a.0].slice(s![.., start..end]).to_owned();
        self.push(
            value,
            Some(Box::new(move |_, grad, grads| {
                let mut view = grads[a.0].slice_mut(s![.., start..end]);
                view += grad;
            })),
        )
    }

    /// Row lookup: C[k] = A[indices[k]]. Duplicate indices accumulate in
    /// the backward pass, which is what embedding lookups need.
    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> NodeId {
        let cols = self.vals[a.0].ncols();
        let mut value = Array2::zeros((indices.len(), cols));
        for (k, &i) in indices.iter().enumerate() {
            value.row_mut(k).assign(&self.vals[a.0].row(i));
        }
        self.push(
            value,
            Some(Box::new(move |_, grad, grads| {
                for (k, &i) in indices.iter().enumerate() {
                    let mut row = grads[a.0].row_mut(i);
                    row += &grad.row(k);
                }
            })),
        )
    }

    /// Repeats a 1×n row L times.
    pub fn tile_rows(&mut self, row: NodeId, l: usize) -> NodeId {
        let n = self.vals[row.0].ncols();
        let value = self.vals[row.0]
            .broadcast((l, n))
            .expect("tile broadcast")
            .to_owned();
        self.push(
            value,
            Some(Box::new(move |_, grad, grads| {
                grads[row.0] =
                    &grads[row.0] + &grad.sum_axis(Axis(0)).insert_axis(Axis(0));
            })),
        )
    }

    /// Column sums: L×n → 1×n.
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let (l, n) = self.vals[a.0].dim();
        let value = self.vals[a.0].sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(
            value,
            Some(Box::new(move |_, grad, grads| {
                grads[a.0] = &grads[a.0] + &grad.broadcast((l, n)).expect("sum broadcast");
            })),
        )
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.vals[a.0].mapv(f64::tanh);
        let out = self.push(value, None);
        self.backs[out.0] = Some(Box::new(move |vals, grad, grads| {
            let y = &vals[out.0];
            grads[a.0] = &grads[a.0] + &(grad * &y.mapv(|t| 1.0 - t * t));
        }));
        out
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.vals[a.0].mapv(|x| x.max(0.0));
        self.push(
            value,
            Some(Box::new(move |vals, grad, grads| {
                let gate = vals[a.0].mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                grads[a.0] = &grads[a.0] + &(grad * &gate);
            })),
        )
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let value = self.vals[a.0].mapv(|x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()));
        self.push(
            value,
            Some(Box::new(move |vals, grad, grads| {
                let d = vals[a.0].mapv(|x| {
                    let u = C * (x + A * x * x * x);
                    let t = u.tanh();
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
                });
                grads[a.0] = &grads[a.0] + &(grad * &d);
            })),
        )
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = softmax_rows(&self.vals[a.0]);
        let out = self.push(value, None);
        self.backs[out.0] = Some(Box::new(move |vals, grad, grads| {
            let y = &vals[out.0];
            let dot = (grad * y).sum_axis(Axis(1)).insert_axis(Axis(1));
            let (l, n) = y.dim();
            let spread = dot.broadcast((l, n)).expect("softmax broadcast").to_owned();
            grads[a.0] = &grads[a.0] + &((grad - &spread) * y);
        }));
        out
    }

    /// Row-wise layer normalization with learned gain and bias (both 1×n).
    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        let x = &self.vals[a.0];
        let (l, n) = x.dim();
        let g = &self.vals[gain.0];
        let b = &self.vals[bias.0];
        let mut value = Array2::zeros((l, n));
        for i in 0..l {
            let row = x.row(i);
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                value[[i, j]] = (row[j] - mean) * inv_std * g[[0, j]] + b[[0, j]];
            }
        }
        self.push(
            value,
            Some(Box::new(move |vals, grad, grads| {
                let x = &vals[a.0];
                let g = &vals[gain.0];
                let (l, n) = x.dim();
                let nf = n as f64;
                let mut dx = Array2::zeros((l, n));
                let mut dg = Array2::zeros((1, n));
                let mut db = Array2::zeros((1, n));
                for i in 0..l {
                    let row = x.row(i);
                    let mean = row.mean().unwrap();
                    let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv_std).collect();
                    let dy = grad.row(i);
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    let dxhat: Vec<f64> = (0..n)
                        .map(|j| {
                            let d = dy[j] * g[[0, j]];
                            sum_dxhat += d;
                            sum_dxhat_xhat += d * xhat[j];
                            d
                        })
                        .collect();
                    for j in 0..n {
                        dx[[i, j]] = inv_std
                            * (dxhat[j] - sum_dxhat / nf - xhat[j] * sum_dxhat_xhat / nf);
                        dg[[0, j]] += dy[j] * xhat[j];
                        db[[0, j]] += dy[j];
                    }
                }
                grads[a.0] = &grads[a.0] + &dx;
                grads[gain.0] = &grads[gain.0] + &dg;
                grads[bias.0] = &grads[bias.0] + &db;
            })),
        )
    }

    /// Elementwise multiply by a fixed mask (inverted-dropout scaling
    /// baked into the mask).
    pub fn dropout_mask(&mut self, a: NodeId, mask: Array2<f64>) -> NodeId {
        let value = &self.vals[a.0] * &mask;
        self.push(
            value,
            Some(Box::new(move |_, grad, grads| {
                grads[a.0] = &grads[a.0] + &(grad * &mask);
            })),
        )
    }

    /// Mean cross-entropy over the rows that have a target; rows with
    /// `None` never touch the value or the gradient.
    pub fn masked_cross_entropy(&mut self, logits: NodeId, targets: Vec<Option<usize>>) -> NodeId {
        let x = &self.vals[logits.0];
        let supervised: Vec<(usize, usize)> = targets
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|t| (i, t)))
            .collect();
        assert!(
            !supervised.is_empty(),
            "cross entropy needs at least one supervised row"
        );
        let m = supervised.len() as f64;
        let mut loss = 0.0;
        for &(i, t) in &supervised {
            loss -= log_softmax_row(&x.row(i).to_owned())[t];
        }
        let value = Array2::from_elem((1, 1), loss / m);
        self.push(
            value,
            Some(Box::new(move |vals, grad, grads| {
                let scale = grad[[0, 0]] / m;
                let x = &vals[logits.0];
                for &(i, t) in &supervised {
                    let probs = softmax_row(&x.row(i).to_owned());
                    for j in 0..x.ncols() {
                        let indicator = if j == t { 1.0 } else { 0.0 };
                        grads[logits.0][[i, j]] += scale * (probs[j] - indicator);
                    }
                }
            })),
        )
    }

    /// Custom scalar node: a precomputed value with precomputed gradients
    /// with respect to its parents. Used for ops whose gradient is cheaper
    /// to produce analytically in one shot (the CRF log-likelihood).
    pub fn custom_scalar(
        &mut self,
        value: f64,
        parents: Vec<(NodeId, Array2<f64>)>,
    ) -> NodeId {
        self.push(
            Array2::from_elem((1, 1), value),
            Some(Box::new(move |_, grad, grads| {
                let scale = grad[[0, 0]];
                for (parent, d) in &parents {
                    grads[parent.0] = &grads[parent.0] + &(d * scale);
                }
            })),
        )
    }

    /// Runs the reverse pass from a 1×1 loss node.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.vals[loss.0].dim(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Array2<f64>> =
            self.vals.iter().map(|v| Array2::zeros(v.dim())).collect();
        grads[loss.0][[0, 0]] = 1.0;
        for i in (0..=loss.0).rev() {
            if let Some(back) = &self.backs[i] {
                let grad = std::mem::replace(&mut grads[i], Array2::zeros((0, 0)));
                back(&self.vals, &grad, &mut grads);
                grads[i] = grad;
            }
        }
        Gradients { grads }
    }
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn of(&self, id: NodeId) -> &Array2<f64> {
        &self.grads[id.0]
    }
}

pub(crate) fn softmax_row(row: &ndarray::Array1<f64>) -> ndarray::Array1<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = row.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

pub(crate) fn log_softmax_row(row: &ndarray::Array1<f64>) -> ndarray::Array1<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let logsum = row.mapv(|v| (v - max).exp()).sum().ln() + max;
    row.mapv(|v| v - logsum)
}

/// Row-wise softmax of a plain matrix.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of a scalar graph built by `f` over the
    /// entries of `inputs`.
    fn finite_diff_check(
        inputs: Vec<Array2<f64>>,
        f: impl Fn(&mut Tape, &[NodeId]) -> NodeId,
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = f(&mut tape, &ids);
        let grads = tape.backward(loss);

        let eps = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.of(ids[k]).clone();
            for ((i, j), _) in input.indexed_iter() {
                let mut run = |delta: f64| {
                    let mut tape = Tape::new();
                    let ids: Vec<NodeId> = inputs
                        .iter()
                        .enumerate()
                        .map(|(m, v)| {
                            let mut v = v.clone();
                            if m == k {
                                v[[i, j]] += delta;
                            }
                            tape.leaf(v)
                        })
                        .collect();
                    let loss = f(&mut tape, &ids);
                    tape.value(loss)[[0, 0]]
                };
                let numeric = (run(eps) - run(-eps)) / (2.0 * eps);
                let a = analytic[[i, j]];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "input {k} [{i},{j}]: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    fn to_scalar(tape: &mut Tape, node: NodeId) -> NodeId {
        let ones = {
            let dim = tape.value(node).dim();
            Array2::from_elem((dim.1, 1), 1.0)
        };
        let w = tape.leaf(ones);
        let col = tape.matmul(node, w);
        let ones_row = {
            let dim = tape.value(col).dim();
            Array2::from_elem((1, dim.0), 1.0)
        };
        let wr = tape.leaf(ones_row);
        tape.matmul(wr, col)
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        finite_diff_check(
            vec![array![[1.0, 2.0], [3.0, -1.0]], array![[0.5, -2.0], [1.5, 0.2]]],
            |tape, ids| {
                let c = tape.matmul(ids[0], ids[1]);
                to_scalar(tape, c)
            },
            1e-6,
        );
    }

    #[test]
    fn composite_graph_gradients_match_finite_differences() {
        finite_diff_check(
            vec![
                array![[0.3, -0.7, 0.1], [0.9, 0.4, -0.2]],
                array![[0.2, 0.1, -0.5]],
                array![[1.0, 0.8, 1.2]],
                array![[0.0, -0.1, 0.1]],
            ],
            |tape, ids| {
                let biased = tape.add_row(ids[0], ids[1]);
                let normed = tape.layer_norm(biased, ids[2], ids[3], 1e-5);
                let act = tape.gelu(normed);
                let soft = tape.softmax_rows(act);
                let t = tape.tanh(soft);
                to_scalar(tape, t)
            },
            1e-5,
        );
    }

    #[test]
    fn slicing_and_concat_gradients_match() {
        finite_diff_check(
            vec![array![[0.3, -0.7], [0.9, 0.4], [0.1, 0.2]], array![[2.0, 0.5]]],
            |tape, ids| {
                let top = tape.slice_rows(ids[0], 0, 2);
                let tiled = tape.tile_rows(ids[1], 2);
                let cat = tape.concat_cols(top, tiled);
                let summed = tape.sum_rows(cat);
                let left = tape.slice_cols(summed, 0, 3);
                to_scalar(tape, left)
            },
            1e-6,
        );
    }

    #[test]
    fn gather_accumulates_duplicate_rows() {
        finite_diff_check(
            vec![array![[0.3, -0.7], [0.9, 0.4]]],
            |tape, ids| {
                let g = tape.gather_rows(ids[0], vec![0, 1, 0]);
                let t = tape.tanh(g);
                to_scalar(tape, t)
            },
            1e-6,
        );
    }

    #[test]
    fn cross_entropy_gradient_matches() {
        finite_diff_check(
            vec![array![[0.3, -0.7, 0.2], [0.9, 0.4, -0.1], [0.1, 0.0, 0.0]]],
            |tape, ids| tape.masked_cross_entropy(ids[0], vec![Some(1), None, Some(0)]),
            1e-6,
        );
    }

    #[test]
    fn cross_entropy_ignores_unsupervised_rows_bitwise() {
        let base = array![[0.3, -0.7, 0.2], [0.9, 0.4, -0.1]];
        let mut perturbed = base.clone();
        perturbed[[1, 0]] = 100.0;
        perturbed[[1, 2]] = -55.0;
        let run = |x: &Array2<f64>| {
            let mut tape = Tape::new();
            let id = tape.leaf(x.clone());
            let loss = tape.masked_cross_entropy(id, vec![Some(2), None]);
            tape.value(loss)[[0, 0]]
        };
        assert_eq!(run(&base).to_bits(), run(&perturbed).to_bits());
    }

    #[test]
    fn relu_and_scale_gradients_match() {
        finite_diff_check(
            vec![array![[0.3, -0.7], [0.9, 0.4]], array![[0.2, 0.1], [0.5, -0.3]]],
            |tape, ids| {
                let r = tape.relu(ids[0]);
                let m = tape.mul(r, ids[1]);
                let sc = tape.scale(m, 1.7);
                let nt = tape.matmul_nt(sc, ids[1]);
                to_scalar(tape, nt)
            },
            1e-6,
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let y = softmax_rows(&x);
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
