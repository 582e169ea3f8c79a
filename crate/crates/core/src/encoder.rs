//! Bidirectional LSTM with dot-product attention against the boundary state.
//!
//! For a query of `T` valid tokens the forward LSTM runs left to right and
//! the backward LSTM right to left. Each position's state is
//! `h_i = [h_fwd_i; h_bwd_i]` (forward half first). The anchor is
//! `h_t = [h_fwd_T; h_bwd_1]`, attention weights are `α_i = h_t · h_i`
//! (optionally softmax-normalized) and the sentence vector is
//! `v = Σ α_i h_i`. Padding positions never enter the graph.

use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::autodiff::{lstm_step, Graph, LstmCell, NodeId};
use crate::config::{AttentionMode, EncoderConfig};
use crate::lexicon::{EmbeddingMatrix, QueryBatch};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

/// Graph handles for one encoded query (valid positions only).
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub h_fwd: Vec<NodeId>,
    pub h_bwd: Vec<NodeId>,
    pub h: Vec<NodeId>,
    pub h_t: NodeId,
    pub alpha: NodeId,
    pub v: NodeId,
}

/// Concrete values of an [`EncoderState`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderValues {
    pub h_fwd: Vec<Vec<f64>>,
    pub h_bwd: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub h_t: Vec<f64>,
    pub alpha: Vec<f64>,
    pub v: Vec<f64>,
}

impl EncoderState {
    pub fn values(&self, g: &Graph) -> EncoderValues {
        let vals = |ids: &[NodeId]| ids.iter().map(|&i| g.value(i).data().to_vec()).collect();
        EncoderValues {
            h_fwd: vals(&self.h_fwd),
            h_bwd: vals(&self.h_bwd),
            h: vals(&self.h),
            h_t: g.value(self.h_t).data().to_vec(),
            alpha: g.value(self.alpha).data().to_vec(),
            v: g.value(self.v).data().to_vec(),
        }
    }
}

/// Inverted dropout mask: zero with probability `rate`, else `1 / (1 - rate)`.
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: &mut dyn RngCore) -> Arc<Vec<f64>> {
    let keep = 1.0 / (1.0 - rate);
    Arc::new(
        (0..len)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    )
}

/// Attention over the rows whose mask entry is set. The returned `alpha`
/// node covers only those rows, in order.
pub fn attend(
    g: &mut Graph,
    h: &[NodeId],
    h_t: NodeId,
    mask: &[bool],
    mode: AttentionMode,
) -> Result<(NodeId, NodeId), TensorError> {
    if h.len() != mask.len() {
        return Err(TensorError::Shape {
            op: "attend",
            left: vec![h.len()],
            right: vec![mask.len()],
        });
    }
    let valid: Vec<NodeId> = h.iter().zip(mask).filter(|(_, &m)| m).map(|(&n, _)| n).collect();
    if valid.is_empty() {
        return Err(TensorError::Empty("attend"));
    }
    let scores = valid
        .iter()
        .map(|&hi| g.dot(h_t, hi))
        .collect::<Result<Vec<_>, _>>()?;
    let mut alpha = g.stack(&scores)?;
    if mode == AttentionMode::Softmax {
        alpha = g.softmax(alpha);
    }
    let v = g.weighted_sum(alpha, &valid)?;
    Ok((alpha, v))
}

/// Encodes one query. `dropout` carries the training RNG; `None` means
/// evaluation (no dropout).
pub fn encode_tokens(
    g: &mut Graph,
    nodes: &EncoderNodes,
    embeddings: &EmbeddingMatrix,
    tokens: &[usize],
    config: &EncoderConfig,
    mut dropout: Option<&mut dyn RngCore>,
) -> Result<EncoderState, TensorError> {
    if tokens.is_empty() {
        return Err(TensorError::Empty("encode"));
    }
    if embeddings.dim() != config.input_dim {
        return Err(TensorError::Shape {
            op: "encode",
            left: vec![config.input_dim],
            right: vec![embeddings.dim()],
        });
    }
    let l = config.hidden_dim;
    let rate = config.dropout;

    let mut inputs = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        let x = g.constant(embeddings.lookup(tok));
        let x = match dropout.as_deref_mut() {
            Some(rng) if rate > 0.0 => g.mul_const(x, dropout_mask(config.input_dim, rate, rng))?,
            _ => x,
        };
        inputs.push(x);
    }

    let zero = g.constant(Tensor::zeros(&[l]));
    let (mut h, mut c) = (zero, zero);
    let mut h_fwd = Vec::with_capacity(tokens.len());
    for &x in &inputs {
        (h, c) = lstm_step(g, &nodes.forward, x, h, c)?;
        h_fwd.push(h);
    }
    let (mut h, mut c) = (zero, zero);
    let mut h_bwd = vec![zero; tokens.len()];
    for (i, &x) in inputs.iter().enumerate().rev() {
        (h, c) = lstm_step(g, &nodes.backward, x, h, c)?;
        h_bwd[i] = h;
    }

    let h_cat = h_fwd
        .iter()
        .zip(&h_bwd)
        .map(|(&f, &b)| g.concat(&[f, b]))
        .collect::<Result<Vec<_>, _>>()?;
    let h_t = g.concat(&[*h_fwd.last().expect("non-empty"), h_bwd[0]])?;
    let mask = vec![true; tokens.len()];
    let (alpha, mut v) = attend(g, &h_cat, h_t, &mask, config.attention)?;
    if let Some(rng) = dropout {
        if rate > 0.0 {
            v = g.mul_const(v, dropout_mask(2 * l, rate, rng))?;
        }
    }
    Ok(EncoderState {
        h_fwd,
        h_bwd,
        h: h_cat,
        h_t,
        alpha,
        v,
    })
}

/// Encodes every row of a batch over its valid positions only.
pub fn encode(
    g: &mut Graph,
    nodes: &EncoderNodes,
    embeddings: &EmbeddingMatrix,
    batch: &QueryBatch,
    config: &EncoderConfig,
    mut dropout: Option<&mut dyn RngCore>,
) -> Result<Vec<EncoderState>, TensorError> {
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let rng = dropout.as_mut().map(|r| &mut **r as &mut dyn RngCore);
        out.push(encode_tokens(g, nodes, embeddings, batch.row(i), config, rng)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sigmoid;
    use proptest::prelude::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(d: usize, l: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim: d,
            hidden_dim: l,
            attention: AttentionMode::Literal,
            dropout: 0.0,
        }
    }

    fn cells(g: &mut Graph, fw: Tensor, fb: Tensor, bw: Tensor, bb: Tensor, l: usize) -> EncoderNodes {
        EncoderNodes {
            forward: LstmCell {
                weight: g.param("fw", fw),
                bias: g.param("fb", fb),
                hidden: l,
            },
            backward: LstmCell {
                weight: g.param("bw", bw),
                bias: g.param("bb", bb),
                hidden: l,
            },
        }
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    fn random_cells(g: &mut Graph, d: usize, l: usize, seed: u64) -> EncoderNodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fw = random_tensor(&mut rng, &[4 * l, d + l], 0.8);
        let fb = random_tensor(&mut rng, &[4 * l], 0.3);
        let bw = random_tensor(&mut rng, &[4 * l, d + l], 0.8);
        let bb = random_tensor(&mut rng, &[4 * l], 0.3);
        cells(g, fw, fb, bw, bb, l)
    }

    fn random_embeddings(words: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingMatrix::new(random_tensor(&mut rng, &[words, d], 1.0))
    }

    #[test]
    fn single_token_closed_form() {
        let (d, l) = (3, 2);
        let mut g = Graph::new();
        let nodes = random_cells(&mut g, d, l, 11);
        let emb = random_embeddings(4, d, 12);
        let state = encode_tokens(&mut g, &nodes, &emb, &[2], &config(d, l), None).unwrap();
        let vals = state.values(&g);
        let h1 = &vals.h[0];
        assert_eq!(&vals.h_t, h1);
        let norm2: f64 = h1.iter().map(|x| x * x).sum();
        assert!((vals.alpha[0] - norm2).abs() < 1e-15);
        for (vi, hi) in vals.v.iter().zip(h1) {
            assert!((vi - norm2 * hi).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weights_give_zero_vector() {
        let (d, l) = (3, 2);
        let mut g = Graph::new();
        let nodes = cells(
            &mut g,
            Tensor::zeros(&[4 * l, d + l]),
            Tensor::zeros(&[4 * l]),
            Tensor::zeros(&[4 * l, d + l]),
            Tensor::zeros(&[4 * l]),
            l,
        );
        let emb = random_embeddings(4, d, 1);
        let state = encode_tokens(&mut g, &nodes, &emb, &[0, 1, 3], &config(d, l), None).unwrap();
        let vals = state.values(&g);
        assert!(vals.h.iter().flatten().all(|&x| x == 0.0));
        assert!(vals.v.iter().all(|&x| x == 0.0));
    }

    /// Scalar LSTM step written out gate by gate, independent of the graph.
    fn trace_step(w: &[Vec<f64>], b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let l = h.len();
        let input: Vec<f64> = x.iter().chain(h).copied().collect();
        let z: Vec<f64> = (0..4 * l)
            .map(|r| b[r] + (0..input.len()).map(|k| w[r][k] * input[k]).sum::<f64>())
            .collect();
        let mut h_new = vec![0.0; l];
        let mut c_new = vec![0.0; l];
        for j in 0..l {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[l + j]);
            let cand = z[2 * l + j].tanh();
            let o_g = sigmoid(z[3 * l + j]);
            c_new[j] = f_g * c[j] + i_g * cand;
            h_new[j] = o_g * c_new[j].tanh();
        }
        (h_new, c_new)
    }

    #[test]
    fn two_token_hand_trace() {
        // d = 1, l = 1; weights are rows over [x, h]
        let fw = vec![vec![0.5, -0.25], vec![0.1, 0.2], vec![1.0, 0.5], vec![-0.3, 0.4]];
        let fb = vec![0.1, 0.0, -0.2, 0.05];
        let bw = vec![vec![-0.4, 0.3], vec![0.2, -0.1], vec![0.7, 0.6], vec![0.25, -0.5]];
        let bb = vec![0.0, 0.3, 0.1, -0.1];
        let xs = [vec![0.8], vec![-0.6]];

        let (f1, cf1) = trace_step(&fw, &fb, &xs[0], &[0.0], &[0.0]);
        let (f2, _) = trace_step(&fw, &fb, &xs[1], &f1, &cf1);
        let (b2, cb2) = trace_step(&bw, &bb, &xs[1], &[0.0], &[0.0]);
        let (b1, _) = trace_step(&bw, &bb, &xs[0], &b2, &cb2);
        let h1 = [f1[0], b1[0]];
        let h2 = [f2[0], b2[0]];
        let ht = [f2[0], b1[0]];
        let a1 = ht[0] * h1[0] + ht[1] * h1[1];
        let a2 = ht[0] * h2[0] + ht[1] * h2[1];
        let v = [a1 * h1[0] + a2 * h2[0], a1 * h1[1] + a2 * h2[1]];

        let flat = |m: &[Vec<f64>]| Tensor::matrix(4, 2, m.concat()).unwrap();
        let mut g = Graph::new();
        let nodes = cells(&mut g, flat(&fw), Tensor::vector(fb), flat(&bw), Tensor::vector(bb), 1);
        let emb = EmbeddingMatrix::new(Tensor::matrix(2, 1, vec![0.8, -0.6]).unwrap());
        let state = encode_tokens(&mut g, &nodes, &emb, &[0, 1], &config(1, 1), None).unwrap();
        let vals = state.values(&g);
        assert!((vals.alpha[0] - a1).abs() < 1e-14);
        assert!((vals.alpha[1] - a2).abs() < 1e-14);
        for k in 0..2 {
            assert!((vals.v[k] - v[k]).abs() < 1e-14, "{:?} vs {v:?}", vals.v);
        }
    }

    #[test]
    fn concatenation_order() {
        let (d, l) = (2, 3);
        let mut g = Graph::new();
        let nodes = random_cells(&mut g, d, l, 5);
        let emb = random_embeddings(3, d, 6);
        let state = encode_tokens(&mut g, &nodes, &emb, &[0, 2, 1], &config(d, l), None).unwrap();
        let vals = state.values(&g);
        for i in 0..3 {
            assert_eq!(&vals.h[i][..l], &vals.h_fwd[i][..]);
            assert_eq!(&vals.h[i][l..], &vals.h_bwd[i][..]);
        }
        assert_eq!(&vals.h_t[..l], &vals.h_fwd[2][..]);
        assert_eq!(&vals.h_t[l..], &vals.h_bwd[0][..]);
    }

    fn attend_values(rows: &[Vec<f64>], h_t: &[f64], mask: &[bool], mode: AttentionMode) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let h: Vec<NodeId> = rows.iter().map(|r| g.constant(Tensor::vector(r.clone()))).collect();
        let ht = g.constant(Tensor::vector(h_t.to_vec()));
        let (a, v) = attend(&mut g, &h, ht, mask, mode).unwrap();
        (g.value(a).data().to_vec(), g.value(v).data().to_vec())
    }

    #[test]
    fn attend_orthogonal_anchor() {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]];
        let (a, v) = attend_values(&rows, &[0.0, 0.0, 5.0], &[true, true], AttentionMode::Literal);
        assert_eq!(a, vec![0.0, 0.0]);
        assert_eq!(v, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn attend_basis_rows() {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let (a, v) = attend_values(&rows, &[1.0, 1.0, 1.0], &[true; 3], AttentionMode::Literal);
        assert_eq!(a, vec![1.0, 1.0, 1.0]);
        assert_eq!(v, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn attend_softmax_uniform_for_identical_rows() {
        let rows = vec![vec![0.3, -0.2]; 4];
        let (a, _) = attend_values(&rows, &[0.7, 0.1], &[true, true, true, false], AttentionMode::Softmax);
        assert_eq!(a.len(), 3);
        for x in a {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn attend_all_masked() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::vector(vec![1.0]));
        assert_eq!(
            attend(&mut g, &[h], h, &[false], AttentionMode::Literal).unwrap_err(),
            TensorError::Empty("attend")
        );
    }

    #[test]
    fn dropout_only_when_training() {
        let (d, l) = (4, 3);
        let cfg = EncoderConfig {
            dropout: 0.5,
            ..config(d, l)
        };
        let emb = random_embeddings(5, d, 9);
        let run = |rng: Option<&mut dyn RngCore>| {
            let mut g = Graph::new();
            let nodes = random_cells(&mut g, d, l, 3);
            let s = encode_tokens(&mut g, &nodes, &emb, &[1, 4, 2], &cfg, rng).unwrap();
            s.values(&g).v
        };
        let eval_a = run(None);
        let eval_b = run(None);
        assert_eq!(eval_a, eval_b);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let train = run(Some(&mut rng));
        assert_ne!(train, eval_a);
    }

    proptest! {
        #[test]
        fn literal_attention_homogeneity(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..6),
            s in 0.1f64..3.0,
        ) {
            let h_t = rows.last().unwrap().clone();
            let mask = vec![true; rows.len()];
            let (a, v) = attend_values(&rows, &h_t, &mask, AttentionMode::Literal);
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * s).collect()).collect();
            let h_t_s: Vec<f64> = h_t.iter().map(|x| x * s).collect();
            let (a2, v2) = attend_values(&scaled, &h_t_s, &mask, AttentionMode::Literal);
            for (x, y) in a.iter().zip(&a2) {
                prop_assert!((y - s * s * x).abs() <= 1e-12 * (1.0 + y.abs()));
            }
            for (x, y) in v.iter().zip(&v2) {
                prop_assert!((y - s * s * s * x).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn padding_invariance(tokens in prop::collection::vec(0usize..6, 1..6), extra in 1usize..4, seed: u64) {
            let (d, l) = (3, 2);
            let emb = random_embeddings(6, d, 21);
            let cfg = EncoderConfig { dropout: 0.3, ..config(d, l) };
            let run = |batch: &QueryBatch| {
                let mut g = Graph::new();
                let nodes = random_cells(&mut g, d, l, 4);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let states = encode(&mut g, &nodes, &emb, batch, &cfg, Some(&mut rng)).unwrap();
                states[0].values(&g)
            };
            let tight = QueryBatch::from_rows(&[(&tokens, 0)], 6);
            let longer: Vec<usize> = tokens.iter().copied().chain(std::iter::repeat(1).take(extra)).collect();
            let padded = QueryBatch::from_rows(&[(&tokens, 0), (&longer, 1)], 6);
            prop_assert_eq!(padded.tokens[0].len(), tokens.len() + extra);
            prop_assert_eq!(run(&tight), run(&padded));
        }
    }
}
