//! Batched reverse-mode tape.
//!
//! Every node holds a `rows x cols` tensor. Network weights are not nodes:
//! layer ops read them from the flat parameter vector by offset and
//! accumulate their adjoints straight into the flat gradient.

use crate::error::{Error, Result};
use crate::net::tensor::{gemm, Tensor, View};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!(
                "unknown activation `{other}` (expected relu | tanh)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    /// Scalar parameter broadcast to a column.
    Param {
        offset: usize,
    },
    /// `in W^T + b`, `W: n_out x n_in` at `w`, `b` at `b`.
    Linear {
        input: NodeId,
        w: usize,
        b: usize,
        n_in: usize,
        n_out: usize,
    },
    /// First layer of a mark-conditioned net: row `r` of the output is
    /// `W [in[owner[r]], marks[r]] + b`, `W: n_out x (n_in + 1)`.
    LinearExpand {
        input: NodeId,
        w: usize,
        b: usize,
        n_in: usize,
        n_out: usize,
        marks: Vec<f64>,
        owner: Vec<u32>,
    },
    Act {
        input: NodeId,
        kind: Activation,
    },
    /// `sum_i c_i v_i` over same-shape nodes.
    Combine {
        terms: Vec<(NodeId, f64)>,
    },
    /// Row-wise inner product, output `rows x 1`.
    RowDot {
        a: NodeId,
        b: NodeId,
    },
    /// `out[owner[r]] += weights[r] in[r]` for a column input.
    GroupSum {
        input: NodeId,
        owner: Vec<u32>,
        weights: Vec<f64>,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    /// Row-wise map with per-row Jacobian `jac[r][m][c]` w.r.t. the
    /// concatenated columns of `inputs`.
    Local {
        inputs: Vec<NodeId>,
        jac: Vec<f64>,
    },
    /// `scale * sum v^2`, output `1 x 1`.
    SumSquares {
        input: NodeId,
        scale: f64,
    },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param { .. } => "param",
            Op::Linear { .. } => "linear",
            Op::LinearExpand { .. } => "linear_expand",
            Op::Act { .. } => "activation",
            Op::Combine { .. } => "combine",
            Op::RowDot { .. } => "row_dot",
            Op::GroupSum { .. } => "group_sum",
            Op::Concat { .. } => "concat",
            Op::Local { .. } => "local",
            Op::SumSquares { .. } => "sum_squares",
        }
    }
}

struct Node {
    op: Op,
    /// Whether any parameter influences this node.
    live: bool,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
    values: Vec<Tensor>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// True when gradients can flow from parameters into `id`.
    pub fn is_live(&self, id: NodeId) -> bool {
        self.nodes[id.0].live
    }

    fn push(&mut self, op: Op, live: bool, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, live });
        self.values.push(value);
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, false, value)
    }

    pub fn param_scalar(&mut self, offset: usize, rows: usize) -> NodeId {
        let v = Tensor::filled(rows, 1, self.params[offset]);
        self.push(Op::Param { offset }, true, v)
    }

    pub fn linear(&mut self, input: NodeId, w: usize, b: usize, n_in: usize, n_out: usize) -> Result<NodeId> {
        let x = &self.values[input.0];
        if x.cols != n_in {
            return Err(Error::DimensionMismatch {
                context: "linear layer input",
                expected: n_in,
                got: x.cols,
            });
        }
        let rows = x.rows;
        let mut out = Tensor::zeros(rows, n_out);
        let bias = &self.params[b..b + n_out];
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(bias);
        }
        let wt = View::transposed(&self.params[w..w + n_out * n_in], n_in);
        gemm(
            rows,
            n_in,
            n_out,
            1.0,
            View::rows(&x.data, n_in),
            wt,
            1.0,
            &mut out.data,
            n_out,
        );
        Ok(self.push(
            Op::Linear {
                input,
                w,
                b,
                n_in,
                n_out,
            },
            true,
            out,
        ))
    }

    pub fn linear_expand(
        &mut self,
        input: NodeId,
        w: usize,
        b: usize,
        n_in: usize,
        n_out: usize,
        marks: Vec<f64>,
        owner: Vec<u32>,
    ) -> Result<NodeId> {
        let x = &self.values[input.0];
        if x.cols != n_in {
            return Err(Error::DimensionMismatch {
                context: "mark layer input",
                expected: n_in,
                got: x.cols,
            });
        }
        if marks.len() != owner.len() {
            return Err(Error::DimensionMismatch {
                context: "mark layer owners",
                expected: marks.len(),
                got: owner.len(),
            });
        }
        if let Some(&bad) = owner.iter().find(|&&o| o as usize >= x.rows) {
            return Err(Error::InvalidArgument(format!(
                "mark owner {bad} out of range for {} rows",
                x.rows
            )));
        }
        let stride = n_in + 1;
        let wmat = &self.params[w..w + n_out * stride];
        let mut p = vec![0.0; x.rows * n_out];
        // W_xy^T as a strided view: element (i, o) = W[o, i]
        let wxy_t = View {
            data: wmat,
            rs: 1,
            cs: stride as isize,
        };
        gemm(
            x.rows,
            n_in,
            n_out,
            1.0,
            View::rows(&x.data, n_in),
            wxy_t,
            0.0,
            &mut p,
            n_out,
        );
        let bias = &self.params[b..b + n_out];
        let mut out = Tensor::zeros(marks.len(), n_out);
        for (r, (&e, &s)) in marks.iter().zip(&owner).enumerate() {
            let src = &p[s as usize * n_out..(s as usize + 1) * n_out];
            let dst = out.row_mut(r);
            for o in 0..n_out {
                dst[o] = src[o] + wmat[o * stride + n_in] * e + bias[o];
            }
        }
        Ok(self.push(
            Op::LinearExpand {
                input,
                w,
                b,
                n_in,
                n_out,
                marks,
                owner,
            },
            true,
            out,
        ))
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> NodeId {
        let x = &self.values[input.0];
        let out = Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|&v| kind.apply(v)).collect(),
        };
        let live = self.nodes[input.0].live;
        self.push(Op::Act { input, kind }, live, out)
    }

    pub fn combine(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("combine needs at least one term".into()))?;
        let (rows, cols) = {
            let v = &self.values[first.0 .0];
            (v.rows, v.cols)
        };
        let mut out = Tensor::zeros(rows, cols);
        let mut live = false;
        for &(id, c) in terms {
            let v = &self.values[id.0];
            if v.rows != rows || v.cols != cols {
                return Err(Error::DimensionMismatch {
                    context: "combine operands",
                    expected: rows * cols,
                    got: v.rows * v.cols,
                });
            }
            for (o, x) in out.data.iter_mut().zip(&v.data) {
                *o += c * x;
            }
            live |= self.nodes[id.0].live;
        }
        Ok(self.push(Op::Combine { terms: terms.to_vec() }, live, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.combine(&[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.combine(&[(a, 1.0), (b, -1.0)])
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.rows != vb.rows || va.cols != vb.cols {
            return Err(Error::DimensionMismatch {
                context: "row_dot operands",
                expected: va.rows * va.cols,
                got: vb.rows * vb.cols,
            });
        }
        let out: Vec<f64> = (0..va.rows)
            .map(|r| va.row(r).iter().zip(vb.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let live = self.nodes[a.0].live || self.nodes[b.0].live;
        Ok(self.push(Op::RowDot { a, b }, live, Tensor::column(out)))
    }

    pub fn group_sum(&mut self, input: NodeId, groups: usize, owner: Vec<u32>, weights: Vec<f64>) -> Result<NodeId> {
        let v = &self.values[input.0];
        if v.cols != 1 || v.rows != owner.len() || owner.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "group_sum input",
                expected: owner.len(),
                got: v.rows,
            });
        }
        let mut out = vec![0.0; groups];
        for ((&x, &g), &w) in v.data.iter().zip(&owner).zip(&weights) {
            let g = g as usize;
            if g >= groups {
                return Err(Error::InvalidArgument(format!(
                    "group {g} out of range for {groups} groups"
                )));
            }
            out[g] += w * x;
        }
        let live = self.nodes[input.0].live;
        Ok(self.push(Op::GroupSum { input, owner, weights }, live, Tensor::column(out)))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.values[parts[0].0].rows;
        let mut cols = 0;
        for p in parts {
            let v = &self.values[p.0];
            if v.rows != rows {
                return Err(Error::DimensionMismatch {
                    context: "concat rows",
                    expected: rows,
                    got: v.rows,
                });
            }
            cols += v.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let v = &self.values[p.0];
                out.data[r * cols + c0..r * cols + c0 + v.cols].copy_from_slice(v.row(r));
                c0 += v.cols;
            }
        }
        let live = parts.iter().any(|p| self.nodes[p.0].live);
        Ok(self.push(Op::Concat { parts: parts.to_vec() }, live, out))
    }

    /// Records a row-wise map whose value and per-row Jacobian were
    /// computed outside the tape. `jac` is `rows x out_cols x in_cols`.
    pub fn local(&mut self, inputs: &[NodeId], value: Tensor, jac: Vec<f64>) -> Result<NodeId> {
        let in_cols: usize = inputs.iter().map(|i| self.values[i.0].cols).sum();
        for i in inputs {
            if self.values[i.0].rows != value.rows {
                return Err(Error::DimensionMismatch {
                    context: "local op rows",
                    expected: value.rows,
                    got: self.values[i.0].rows,
                });
            }
        }
        if jac.len() != value.rows * value.cols * in_cols {
            return Err(Error::DimensionMismatch {
                context: "local op jacobian",
                expected: value.rows * value.cols * in_cols,
                got: jac.len(),
            });
        }
        let live = inputs.iter().any(|p| self.nodes[p.0].live);
        Ok(self.push(
            Op::Local {
                inputs: inputs.to_vec(),
                jac,
            },
            live,
            value,
        ))
    }

    pub fn sum_squares(&mut self, input: NodeId, scale: f64) -> NodeId {
        let v = &self.values[input.0];
        let s = scale * v.data.iter().map(|x| x * x).sum::<f64>();
        let live = self.nodes[input.0].live;
        self.push(Op::SumSquares { input, scale }, live, Tensor::filled(1, 1, s))
    }

    /// Reverse sweep from the scalar node `root`, adding `d root / d theta`
    /// into `grad`.
    pub fn backward(&self, root: NodeId, grad: &mut [f64]) -> Result<()> {
        let rv = &self.values[root.0];
        if rv.rows != 1 || rv.cols != 1 {
            return Err(Error::DimensionMismatch {
                context: "backward root must be scalar",
                expected: 1,
                got: rv.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient buffer",
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.live {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteAdjoint {
                    node: i,
                    kind: node.op.kind(),
                });
            }
            self.propagate(i, g, &mut adj, grad);
        }
        Ok(())
    }

    /// Adds `v` to the adjoint of `id`, taking ownership when it is the
    /// first contribution.
    fn give(&self, adj: &mut [Option<Vec<f64>>], id: NodeId, v: Vec<f64>) {
        if !self.nodes[id.0].live {
            return;
        }
        match &mut adj[id.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&v) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(v),
        }
    }

    fn propagate(&self, i: usize, mut g: Vec<f64>, adj: &mut [Option<Vec<f64>>], grad: &mut [f64]) {
        match &self.nodes[i].op {
            Op::Constant => {}
            Op::Param { offset } => {
                grad[*offset] += g.iter().sum::<f64>();
            }
            Op::Linear {
                input,
                w,
                b,
                n_in,
                n_out,
            } => {
                let (n_in, n_out) = (*n_in, *n_out);
                let x = &self.values[input.0];
                let rows = x.rows;
                // dW += g^T x
                gemm(
                    n_out,
                    rows,
                    n_in,
                    1.0,
                    View::transposed(&g, n_out),
                    View::rows(&x.data, n_in),
                    1.0,
                    &mut grad[*w..*w + n_out * n_in],
                    n_in,
                );
                let gb = &mut grad[*b..*b + n_out];
                for r in 0..rows {
                    for (acc, v) in gb.iter_mut().zip(&g[r * n_out..(r + 1) * n_out]) {
                        *acc += v;
                    }
                }
                if self.nodes[input.0].live {
                    let wv = &self.params[*w..*w + n_out * n_in];
                    let mut dx = vec![0.0; rows * n_in];
                    gemm(
                        rows,
                        n_out,
                        n_in,
                        1.0,
                        View::rows(&g, n_out),
                        View::rows(wv, n_in),
                        0.0,
                        &mut dx,
                        n_in,
                    );
                    self.give(adj, *input, dx);
                }
            }
            Op::LinearExpand {
                input,
                w,
                b,
                n_in,
                n_out,
                marks,
                owner,
            } => {
                let (n_in, n_out) = (*n_in, *n_out);
                let stride = n_in + 1;
                let x = &self.values[input.0];
                let mut dp = vec![0.0; x.rows * n_out];
                {
                    let (gw, gb) = grad.split_at_mut(*b);
                    let gw = &mut gw[*w..*w + n_out * stride];
                    let gb = &mut gb[..n_out];
                    for (r, (&s, &e)) in owner.iter().zip(marks).enumerate() {
                        let gr = &g[r * n_out..(r + 1) * n_out];
                        let dst = &mut dp[s as usize * n_out..(s as usize + 1) * n_out];
                        for o in 0..n_out {
                            dst[o] += gr[o];
                            gb[o] += gr[o];
                            gw[o * stride + n_in] += gr[o] * e;
                        }
                    }
                    // dW_xy += dP^T x, written into the strided block
                    gemm(
                        n_out,
                        x.rows,
                        n_in,
                        1.0,
                        View::transposed(&dp, n_out),
                        View::rows(&x.data, n_in),
                        1.0,
                        gw,
                        stride,
                    );
                }
                if self.nodes[input.0].live {
                    let wv = &self.params[*w..*w + n_out * stride];
                    let mut dx = vec![0.0; x.rows * n_in];
                    gemm(
                        x.rows,
                        n_out,
                        n_in,
                        1.0,
                        View::rows(&dp, n_out),
                        View::strided(wv, stride),
                        0.0,
                        &mut dx,
                        n_in,
                    );
                    self.give(adj, *input, dx);
                }
            }
            Op::Act { input, kind } => {
                let out = &self.values[i];
                for (gv, &o) in g.iter_mut().zip(&out.data) {
                    *gv *= kind.derivative_from_output(o);
                }
                self.give(adj, *input, g);
            }
            Op::Combine { terms } => {
                let live: Vec<(NodeId, f64)> = terms.iter().copied().filter(|(id, _)| self.nodes[id.0].live).collect();
                for (k, &(id, c)) in live.iter().enumerate() {
                    if k + 1 == live.len() {
                        if c != 1.0 {
                            for v in g.iter_mut() {
                                *v *= c;
                            }
                        }
                        self.give(adj, id, std::mem::take(&mut g));
                    } else {
                        self.give(adj, id, g.iter().map(|v| c * v).collect());
                    }
                }
            }
            Op::RowDot { a, b } => {
                let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                let cols = va.cols;
                let scaled = |other: &Tensor| -> Vec<f64> {
                    other.data.iter().enumerate().map(|(k, v)| g[k / cols] * v).collect()
                };
                if self.nodes[a.0].live {
                    let da = scaled(vb);
                    self.give(adj, *a, da);
                }
                if self.nodes[b.0].live {
                    let db = scaled(va);
                    self.give(adj, *b, db);
                }
            }
            Op::GroupSum { input, owner, weights } => {
                let dx = owner.iter().zip(weights).map(|(&s, &w)| w * g[s as usize]).collect();
                self.give(adj, *input, dx);
            }
            Op::Concat { parts } => {
                let rows = self.values[i].rows;
                let cols = self.values[i].cols;
                let mut c0 = 0;
                for p in parts {
                    let pc = self.values[p.0].cols;
                    if self.nodes[p.0].live {
                        let mut dx = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            dx.extend_from_slice(&g[r * cols + c0..r * cols + c0 + pc]);
                        }
                        self.give(adj, *p, dx);
                    }
                    c0 += pc;
                }
            }
            Op::Local { inputs, jac } => {
                let out = &self.values[i];
                let in_cols: usize = inputs.iter().map(|p| self.values[p.0].cols).sum();
                let m = out.cols;
                let mut c0 = 0;
                for p in inputs {
                    let pc = self.values[p.0].cols;
                    if self.nodes[p.0].live {
                        let mut dx = vec![0.0; out.rows * pc];
                        for r in 0..out.rows {
                            for k in 0..m {
                                let gv = g[r * m + k];
                                if gv == 0.0 {
                                    continue;
                                }
                                let base = (r * m + k) * in_cols + c0;
                                for (c, &j) in jac[base..base + pc].iter().enumerate() {
                                    dx[r * pc + c] += gv * j;
                                }
                            }
                        }
                        self.give(adj, *p, dx);
                    }
                    c0 += pc;
                }
            }
            Op::SumSquares { input, scale } => {
                let x = &self.values[input.0];
                let dx = x.data.iter().map(|&v| 2.0 * scale * v * g[0]).collect();
                self.give(adj, *input, dx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_of_scalar_param() {
        let p = [3.0];
        let mut t = Tape::new(&p);
        let y = t.param_scalar(0, 1);
        let l = t.sum_squares(y, 1.0);
        assert_eq!(t.value(l).data[0], 9.0);
        let mut g = [0.0];
        t.backward(l, &mut g).unwrap();
        assert_eq!(g[0], 6.0);
    }

    #[test]
    fn group_sum_and_row_dot() {
        let p = [2.0];
        let mut t = Tape::new(&p);
        let y = t.param_scalar(0, 3);
        let c = t.constant(Tensor::column(vec![1.0, 2.0, 3.0]));
        let d = t.row_dot(y, c).unwrap();
        let s = t.group_sum(d, 2, vec![0, 1, 1], vec![1.0, 0.5, 2.0]).unwrap();
        assert_eq!(t.value(s).data, vec![2.0, 2.0 * (1.0 + 6.0)]);
        let l = t.sum_squares(s, 1.0);
        let mut g = [0.0];
        t.backward(l, &mut g).unwrap();
        // l = p^2 + (7p)^2
        assert!((g[0] - 100.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_adjoint_reported() {
        let p = [1.0];
        let mut t = Tape::new(&p);
        let y = t.param_scalar(0, 1);
        let big = t.combine(&[(y, f64::INFINITY)]).unwrap();
        let l = t.sum_squares(big, 1.0);
        let mut g = [0.0];
        let err = t.backward(l, &mut g).unwrap_err();
        assert!(matches!(err, Error::NonFiniteAdjoint { .. }), "{err}");
    }

    #[test]
    fn constants_receive_no_adjoint() {
        let p = [0.5];
        let mut t = Tape::new(&p);
        let c = t.constant(Tensor::column(vec![1.0]));
        assert!(!t.is_live(c));
        let y = t.param_scalar(0, 1);
        let s = t.add(y, c).unwrap();
        assert!(t.is_live(s));
        let l = t.sum_squares(s, 0.5);
        let mut g = [0.0];
        t.backward(l, &mut g).unwrap();
        assert!((g[0] - 1.5).abs() < 1e-15);
    }
}
