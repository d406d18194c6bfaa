//! Fully connected networks: hidden layers with a pointwise activation and
//! an affine output layer.

use crate::error::{Error, Result};
use crate::net::tape::{Activation, NodeId, Tape};

/// Placement of one network inside the flat parameter vector. Layer `l`
/// stores `W_l` (`dims[l + 1] x dims[l]`, row-major) followed by `b_l`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpLayout {
    pub dims: Vec<usize>,
    pub offset: usize,
    pub activation: Activation,
}

impl MlpLayout {
    pub fn new(input: usize, hidden: &[usize], output: usize, activation: Activation, offset: usize) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one hidden layer".into()));
        }
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive: {dims:?}"
            )));
        }
        Ok(Self {
            dims,
            offset,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn weight_offset(&self, layer: usize) -> usize {
        let mut off = self.offset;
        for l in 0..layer {
            off += self.dims[l + 1] * self.dims[l] + self.dims[l + 1];
        }
        off
    }

    pub fn bias_offset(&self, layer: usize) -> usize {
        self.weight_offset(layer) + self.dims[layer + 1] * self.dims[layer]
    }

    pub fn len(&self) -> usize {
        self.weight_offset(self.layers()) - self.offset
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end(&self) -> usize {
        self.offset + self.len()
    }
}

/// Single-input forward pass, written as plain loops.
pub fn mlp_forward(params: &[f64], layout: &MlpLayout, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != layout.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "mlp input",
            expected: layout.input_dim(),
            got: input.len(),
        });
    }
    if params.len() < layout.end() {
        return Err(Error::DimensionMismatch {
            context: "mlp parameters",
            expected: layout.end(),
            got: params.len(),
        });
    }
    let mut h = input.to_vec();
    for l in 0..layout.layers() {
        let (n_in, n_out) = (layout.dims[l], layout.dims[l + 1]);
        let w = &params[layout.weight_offset(l)..];
        let b = &params[layout.bias_offset(l)..];
        let mut next = vec![0.0; n_out];
        for o in 0..n_out {
            let mut acc = b[o];
            for i in 0..n_in {
                acc += w[o * n_in + i] * h[i];
            }
            next[o] = if l + 1 < layout.layers() {
                layout.activation.apply(acc)
            } else {
                acc
            };
        }
        h = next;
    }
    Ok(h)
}

/// Records the network on `tape` for a batch `input` (`rows x input_dim`).
pub fn mlp_tape(tape: &mut Tape<'_>, layout: &MlpLayout, input: NodeId) -> Result<NodeId> {
    let mut h = input;
    for l in 0..layout.layers() {
        h = tape.linear(
            h,
            layout.weight_offset(l),
            layout.bias_offset(l),
            layout.dims[l],
            layout.dims[l + 1],
        )?;
        if l + 1 < layout.layers() {
            h = tape.activation(h, layout.activation);
        }
    }
    Ok(h)
}

/// Records a network whose last input coordinate is a mark: row `r` of the
/// output is the network at `(input[owner[r]], marks[r])`.
pub fn mlp_tape_marked(
    tape: &mut Tape<'_>,
    layout: &MlpLayout,
    input: NodeId,
    marks: Vec<f64>,
    owner: Vec<u32>,
) -> Result<NodeId> {
    let n_in = layout.dims[0] - 1;
    let mut h = tape.linear_expand(
        input,
        layout.weight_offset(0),
        layout.bias_offset(0),
        n_in,
        layout.dims[1],
        marks,
        owner,
    )?;
    for l in 1..layout.layers() {
        h = tape.activation(h, layout.activation);
        h = tape.linear(
            h,
            layout.weight_offset(l),
            layout.bias_offset(l),
            layout.dims[l],
            layout.dims[l + 1],
        )?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::tensor::Tensor;

    #[test]
    fn layout_offsets() {
        let l = MlpLayout::new(2, &[11, 11], 1, Activation::Relu, 5).unwrap();
        assert_eq!(l.dims, vec![2, 11, 11, 1]);
        assert_eq!(l.weight_offset(0), 5);
        assert_eq!(l.bias_offset(0), 5 + 22);
        assert_eq!(l.weight_offset(1), 5 + 33);
        assert_eq!(l.len(), 33 + 132 + 12);
        assert!(MlpLayout::new(2, &[], 1, Activation::Relu, 0).is_err());
        assert!(MlpLayout::new(2, &[0], 1, Activation::Relu, 0).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let l = MlpLayout::new(3, &[4, 4], 2, Activation::Tanh, 0).unwrap();
        let p = vec![0.0; l.len()];
        assert_eq!(mlp_forward(&p, &l, &[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn relu_gates_negative_input() {
        let l = MlpLayout::new(1, &[1], 1, Activation::Relu, 0).unwrap();
        let p = vec![1.0, 0.0, 1.0, 0.0];
        assert_eq!(mlp_forward(&p, &l, &[-1.0]).unwrap(), vec![0.0]);
        assert_eq!(mlp_forward(&p, &l, &[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let l = MlpLayout::new(3, &[4], 1, Activation::Tanh, 0).unwrap();
        let p = vec![0.0; l.len()];
        assert!(mlp_forward(&p, &l, &[1.0]).is_err());
        let mut t = Tape::new(&p);
        let x = t.constant(Tensor::zeros(2, 2));
        assert!(mlp_tape(&mut t, &l, x).is_err());
    }

    #[test]
    fn marked_net_matches_plain() {
        let l = MlpLayout::new(3, &[5, 4], 1, Activation::Tanh, 0).unwrap();
        let p: Vec<f64> = (0..l.len()).map(|i| ((i * 7919) % 17) as f64 / 17.0 - 0.5).collect();
        let xs = Tensor::from_vec(2, 2, vec![0.3, -1.0, 0.7, 2.0]);
        let marks = vec![0.1, -0.4, 0.9];
        let owner = vec![1, 0, 1];
        let mut t = Tape::new(&p);
        let x = t.constant(xs.clone());
        let out = mlp_tape_marked(&mut t, &l, x, marks.clone(), owner.clone()).unwrap();
        for r in 0..3 {
            let s = owner[r] as usize;
            let input = [xs.get(s, 0), xs.get(s, 1), marks[r]];
            let want = mlp_forward(&p, &l, &input).unwrap()[0];
            assert!((t.value(out).data[r] - want).abs() < 1e-14);
        }
    }
}
