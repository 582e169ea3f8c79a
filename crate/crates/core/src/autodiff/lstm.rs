use super::{Graph, NodeId};
use crate::tensor::TensorError;

/// Node handles for one LSTM direction. `weight` is `[4l, d + l]` over the
/// input `[x_t; h_prev]`, gate blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub weight: NodeId,
    pub bias: NodeId,
    pub hidden: usize,
}

/// One recurrence step: returns `(h_t, c_t)`.
pub fn lstm_step(
    g: &mut Graph,
    cell: &LstmCell,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId), TensorError> {
    let l = cell.hidden;
    for (id, name) in [(h_prev, "lstm_step.h_prev"), (c_prev, "lstm_step.c_prev")] {
        if g.value(id).shape() != [l] {
            return Err(TensorError::Shape {
                op: name,
                left: vec![l],
                right: g.value(id).shape().to_vec(),
            });
        }
    }
    let input = g.concat(&[x, h_prev])?;
    let z = g.affine(cell.weight, input, cell.bias)?;
    if g.value(z).len() != 4 * l {
        return Err(TensorError::Shape {
            op: "lstm_step",
            left: g.value(cell.weight).shape().to_vec(),
            right: vec![4 * l],
        });
    }
    let zi = g.slice(z, 0, l)?;
    let zf = g.slice(z, l, l)?;
    let zc = g.slice(z, 2 * l, l)?;
    let zo = g.slice(z, 3 * l, l)?;
    let input_gate = g.sigmoid(zi);
    let forget_gate = g.sigmoid(zf);
    let candidate = g.tanh(zc);
    let output_gate = g.sigmoid(zo);

    let kept = g.mul(forget_gate, c_prev)?;
    let written = g.mul(input_gate, candidate)?;
    let c = g.add(kept, written)?;
    let squashed = g.tanh(c);
    let h = g.mul(output_gate, squashed)?;
    Ok((h, c))
}
