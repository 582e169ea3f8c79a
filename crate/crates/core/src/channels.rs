//! Confidence channels and their weighted fusion.
//!
//! Every characteristic channel first scores its feature registry (POS tags,
//! morphemes, category layers, sememes) and then gives each word the sum of
//! the scores of the features it carries. The sums are gathers through a
//! fixed word × feature incidence matrix, so a word with no features gets
//! exactly zero.

use std::sync::Arc;

use crate::autodiff::{Graph, NodeId, SparseRows};
use crate::config::{Channel, ChannelWeights};
use crate::lexicon::WordFeatureTable;
use crate::tensor::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

/// Word × feature incidence for each characteristic channel; `None` when the
/// registry is empty.
#[derive(Debug, Clone)]
pub struct FeatureIncidence {
    pub pos: Option<Arc<SparseRows>>,
    pub morpheme: Option<Arc<SparseRows>>,
    /// Columns are the concatenated category layers; entries carry `β_k`.
    pub category: Option<Arc<SparseRows>>,
    pub sememe: Option<Arc<SparseRows>>,
}

fn set_matrix<'a>(words: usize, size: usize, pick: impl Fn(usize) -> &'a [usize]) -> Option<Arc<SparseRows>> {
    (size > 0).then(|| {
        let rows = (0..words).map(|w| pick(w).iter().map(|&j| (j, 1.0)).collect()).collect();
        Arc::new(SparseRows::new(size, rows).expect("validated feature table"))
    })
}

impl FeatureIncidence {
    pub fn build(table: &WordFeatureTable, weights: &ChannelWeights) -> Self {
        let reg = table.registry();
        let words = 0..table.len();
        let pos = set_matrix(table.len(), reg.pos.len(), |w| &table.word(w).pos);
        let morpheme = set_matrix(table.len(), reg.morphemes.len(), |w| &table.word(w).morphemes);
        let sememe = set_matrix(table.len(), reg.sememes.len(), |w| &table.word(w).sememes);

        let offsets: Vec<usize> = reg
            .category_layers
            .iter()
            .scan(0, |acc, &c| {
                let start = *acc;
                *acc += c;
                Some(start)
            })
            .collect();
        let total: usize = reg.category_layers.iter().sum();
        let category = (total > 0).then(|| {
            let rows = words
                .clone()
                .map(|w| {
                    table
                        .word(w)
                        .categories
                        .iter()
                        .enumerate()
                        .filter_map(|(k, c)| c.map(|c| (offsets[k] + c, weights.beta(k))))
                        .collect()
                })
                .collect();
            Arc::new(SparseRows::new(total, rows).expect("validated feature table"))
        });
        Self {
            pos,
            morpheme,
            category,
            sememe,
        }
    }

    pub fn get(&self, channel: Channel) -> Option<&Arc<SparseRows>> {
        match channel {
            Channel::Word => None,
            Channel::Pos => self.pos.as_ref(),
            Channel::Morpheme => self.morpheme.as_ref(),
            Channel::Category => self.category.as_ref(),
            Channel::Sememe => self.sememe.as_ref(),
        }
    }
}

/// `v_word = W v + b` mapped into embedding space, then `sc_w = v_word · w`
/// for every row of the (constant) embedding matrix. Returns `(v_word, sc_word)`.
pub fn score_word(g: &mut Graph, v: NodeId, weight: NodeId, bias: NodeId, embeddings: NodeId) -> Result<(NodeId, NodeId)> {
    let v_word = g.affine(weight, v, bias)?;
    let scores = g.matvec(embeddings, v_word)?;
    Ok((v_word, scores))
}

/// POS logits from the sentence vector and each word's summed tag scores.
/// Returns `(sc_pos, per_word)`.
pub fn score_pos(
    g: &mut Graph,
    v: NodeId,
    weight: NodeId,
    bias: NodeId,
    incidence: &Arc<SparseRows>,
) -> Result<(NodeId, NodeId)> {
    let logits = g.affine(weight, v, bias)?;
    let per_word = g.sparse(Arc::clone(incidence), logits)?;
    Ok((logits, per_word))
}

/// Local scores `W h_i + b` at every valid position, max-pooled per
/// feature, then summed per word. Returns `(global, per_word)`.
fn score_pooled(
    g: &mut Graph,
    h: &[NodeId],
    mask: &[bool],
    weight: NodeId,
    bias: NodeId,
    incidence: &Arc<SparseRows>,
) -> Result<(NodeId, NodeId)> {
    if h.len() != mask.len() {
        return Err(TensorError::Shape {
            op: "score_pooled",
            left: vec![h.len()],
            right: vec![mask.len()],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(TensorError::Empty("score_pooled"));
    }
    let mut locals = Vec::with_capacity(h.len());
    let mut local_mask = Vec::with_capacity(h.len());
    for (&hi, &m) in h.iter().zip(mask) {
        if m {
            locals.push(g.affine(weight, hi, bias)?);
            local_mask.push(true);
        }
    }
    let (global, _) = g.masked_max_pool(&locals, &local_mask)?;
    let per_word = g.sparse(Arc::clone(incidence), global)?;
    Ok((global, per_word))
}

pub fn score_morpheme(
    g: &mut Graph,
    h: &[NodeId],
    mask: &[bool],
    weight: NodeId,
    bias: NodeId,
    incidence: &Arc<SparseRows>,
) -> Result<(NodeId, NodeId)> {
    score_pooled(g, h, mask, weight, bias, incidence)
}

pub fn score_sememe(
    g: &mut Graph,
    h: &[NodeId],
    mask: &[bool],
    weight: NodeId,
    bias: NodeId,
    incidence: &Arc<SparseRows>,
) -> Result<(NodeId, NodeId)> {
    score_pooled(g, h, mask, weight, bias, incidence)
}

/// One logit vector per hierarchy layer; a word's score is the β-weighted
/// sum of its category logits, skipping layers where it has no category.
/// Returns `(per-layer logits, per_word)`.
pub fn score_category(
    g: &mut Graph,
    v: NodeId,
    layers: &[(NodeId, NodeId)],
    incidence: &Arc<SparseRows>,
) -> Result<(Vec<NodeId>, NodeId)> {
    if layers.is_empty() {
        return Err(TensorError::Empty("score_category"));
    }
    let logits = layers
        .iter()
        .map(|&(w, b)| g.affine(w, v, b))
        .collect::<Result<Vec<_>>>()?;
    let all = g.concat(&logits)?;
    let per_word = g.sparse(Arc::clone(incidence), all)?;
    Ok((logits, per_word))
}

/// Fused score nodes plus the weighted contribution `λ_c · sc_{w,c}` of
/// every channel that took part.
#[derive(Debug, Clone)]
pub struct Fused {
    pub contributions: Vec<(Channel, NodeId)>,
    pub fused: NodeId,
}

/// `sc_w = λ_word sc_{w,word} + Σ_c λ_c sc_{w,c}`. Channels with `λ = 0`
/// are left out entirely.
pub fn fuse(g: &mut Graph, per_word: &[(Channel, NodeId)], weights: &ChannelWeights) -> Result<Fused> {
    let mut contributions = Vec::with_capacity(per_word.len());
    for &(channel, node) in per_word {
        let lambda = weights.lambda(channel);
        if lambda != 0.0 {
            contributions.push((channel, g.scale(node, lambda)));
        }
    }
    let nodes: Vec<NodeId> = contributions.iter().map(|&(_, n)| n).collect();
    let fused = g.sum(&nodes)?;
    Ok(Fused { contributions, fused })
}

/// Word indices by descending score; ties go to the lower index.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{FeatureRegistry, WordFeatures};
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn rows(cols: usize, sets: &[&[usize]]) -> Arc<SparseRows> {
        Arc::new(SparseRows::new(cols, sets.iter().map(|s| s.iter().map(|&j| (j, 1.0)).collect()).collect()).unwrap())
    }

    #[test]
    fn word_score_self_dot() {
        let mut g = Graph::new();
        let emb = g.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0]).unwrap());
        // W = I, b = 0, v = embedding of word 0
        let w = g.param("w", Tensor::identity(2));
        let b = g.param("b", Tensor::zeros(&[2]));
        let v = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let (_, sc) = score_word(&mut g, v, w, b, emb).unwrap();
        // hand dot products: [1·1+2·2, -1·1+0.5·2, 3·1+3·2]
        assert_eq!(g.value(sc).data(), &[5.0, 0.0, 9.0]);
        assert_eq!(g.value(sc).data()[0], 1.0 * 1.0 + 2.0 * 2.0);
    }

    #[test]
    fn word_score_zero_projection() {
        let mut g = Graph::new();
        let emb = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.param("w", Tensor::zeros(&[2, 2]));
        let b = g.param("b", Tensor::zeros(&[2]));
        let v = g.constant(Tensor::vector(vec![4.0, -4.0]));
        let (_, sc) = score_word(&mut g, v, w, b, emb).unwrap();
        assert_eq!(g.value(sc).data(), &[0.0, 0.0]);
    }

    #[test]
    fn pos_sums() {
        let mut g = Graph::new();
        // sc_pos = [0.2, 0.5, 0.3] via zero weight and bias
        let w = g.param("w", Tensor::zeros(&[3, 2]));
        let b = g.param("b", Tensor::vector(vec![0.2, 0.5, 0.3]));
        let v = g.constant(Tensor::vector(vec![1.0, 1.0]));
        let inc = rows(3, &[&[0, 2], &[], &[0, 1, 2]]);
        let (sc, per_word) = score_pos(&mut g, v, w, b, &inc).unwrap();
        assert_eq!(g.value(sc).data(), &[0.2, 0.5, 0.3]);
        let pw = g.value(per_word).data();
        assert_eq!(pw[0], 0.2 + 0.3);
        assert_eq!(pw[1], 0.0);
        assert_eq!(pw[2], 0.2 + 0.5 + 0.3);
    }

    #[test]
    fn morpheme_single_position_is_local() {
        let mut g = Graph::new();
        let w = g.param("w", Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap());
        let b = g.param("b", Tensor::vector(vec![0.1, 0.0]));
        let h = g.constant(Tensor::vector(vec![2.0, 1.0]));
        let inc = rows(2, &[&[0], &[1]]);
        let (global, _) = score_morpheme(&mut g, &[h], &[true], w, b, &inc).unwrap();
        assert_eq!(g.value(global).data(), &[1.1, 3.0]);
    }

    #[test]
    fn morpheme_pool_then_sum() {
        // W = I, b = 0, so locals equal the hidden rows [1,5] and [3,2]
        let mut g = Graph::new();
        let w = g.param("w", Tensor::identity(2));
        let b = g.param("b", Tensor::zeros(&[2]));
        let h0 = g.constant(Tensor::vector(vec![1.0, 5.0]));
        let h1 = g.constant(Tensor::vector(vec![3.0, 2.0]));
        let h2 = g.constant(Tensor::vector(vec![100.0, 100.0]));
        let inc = rows(2, &[&[0, 1], &[1], &[]]);
        let (global, per_word) = score_morpheme(&mut g, &[h0, h1, h2], &[true, true, false], w, b, &inc).unwrap();
        assert_eq!(g.value(global).data(), &[3.0, 5.0]);
        assert_eq!(g.value(per_word).data(), &[8.0, 5.0, 0.0]);
    }

    #[test]
    fn different_positions_dominate_different_morphemes() {
        // "road" drives morpheme 0 (way), "quickly" drives morpheme 1 (express)
        let mut g = Graph::new();
        let w = g.param("w", Tensor::identity(2));
        let b = g.param("b", Tensor::zeros(&[2]));
        let road = g.constant(Tensor::vector(vec![2.0, -1.0]));
        let quickly = g.constant(Tensor::vector(vec![-1.0, 3.0]));
        let inc = rows(2, &[&[0, 1]]);
        let (global, _) = score_morpheme(&mut g, &[road, quickly], &[true, true], w, b, &inc).unwrap();
        let argmax = g
            .nodes()
            .iter()
            .find_map(|n| match &n.op {
                crate::autodiff::Op::MaxPool { argmax, .. } => Some(argmax.clone()),
                _ => None,
            })
            .expect("max-pool node");
        assert_eq!(argmax, vec![0, 1]);
        assert_eq!(g.value(global).data(), &[2.0, 3.0]);
    }

    #[test]
    fn all_masked_errors() {
        let mut g = Graph::new();
        let w = g.param("w", Tensor::identity(1));
        let b = g.param("b", Tensor::zeros(&[1]));
        let h = g.constant(Tensor::vector(vec![1.0]));
        let inc = rows(1, &[&[0]]);
        assert!(score_sememe(&mut g, &[h], &[false], w, b, &inc).is_err());
    }

    #[test]
    fn sememe_expressway() {
        let mut g = Graph::new();
        let w = g.param("w", Tensor::zeros(&[3, 1]));
        // route, fast, vehicle
        let b = g.param("b", Tensor::vector(vec![0.7, 1.1, -0.4]));
        let h = g.constant(Tensor::vector(vec![1.0]));
        let inc = rows(3, &[&[0, 1], &[]]);
        let (global, per_word) = score_sememe(&mut g, &[h], &[true], w, b, &inc).unwrap();
        let gl = g.value(global).data().to_vec();
        assert_eq!(g.value(per_word).data(), &[gl[0] + gl[1], 0.0]);
    }

    fn category_table(layers: Vec<usize>, cats: Vec<Vec<Option<usize>>>) -> WordFeatureTable {
        let reg = FeatureRegistry {
            category_layers: layers,
            ..Default::default()
        };
        let mut t = WordFeatureTable::empty(reg, cats.len());
        for (i, c) in cats.into_iter().enumerate() {
            t.set(i, "w", WordFeatures { categories: c, ..Default::default() }).unwrap();
        }
        t
    }

    #[test]
    fn category_single_layer() {
        let table = category_table(vec![3], vec![vec![Some(2)], vec![None]]);
        let inc = FeatureIncidence::build(&table, &ChannelWeights::default());
        let mut g = Graph::new();
        let w = g.param("w", Tensor::zeros(&[3, 1]));
        let b = g.param("b", Tensor::vector(vec![0.1, 0.2, 0.9]));
        let v = g.constant(Tensor::vector(vec![1.0]));
        let (_, per_word) = score_category(&mut g, v, &[(w, b)], inc.category.as_ref().unwrap()).unwrap();
        assert_eq!(g.value(per_word).data(), &[0.9, 0.0]);
    }

    #[test]
    fn category_two_layers_weighted() {
        let table = category_table(vec![2, 3], vec![vec![Some(1), Some(0)], vec![None, Some(2)], vec![None, None]]);
        let weights = ChannelWeights {
            beta: vec![1.0, 0.5],
            ..Default::default()
        };
        let inc = FeatureIncidence::build(&table, &weights);
        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(vec![1.0]));
        let w0 = g.param("w0", Tensor::zeros(&[2, 1]));
        let b0 = g.param("b0", Tensor::vector(vec![4.0, -2.0]));
        let w1 = g.param("w1", Tensor::zeros(&[3, 1]));
        let b1 = g.param("b1", Tensor::vector(vec![6.0, 1.0, 3.0]));
        let (_, per_word) = score_category(&mut g, v, &[(w0, b0), (w1, b1)], inc.category.as_ref().unwrap()).unwrap();
        // word 0: 1·(-2) + 0.5·6; word 1: 0.5·3; word 2: none
        assert_eq!(g.value(per_word).data(), &[1.0, 1.5, 0.0]);
    }

    fn fuse_values(per_word: &[(Channel, Vec<f64>)], weights: &ChannelWeights) -> Vec<f64> {
        let mut g = Graph::new();
        let nodes: Vec<(Channel, NodeId)> = per_word
            .iter()
            .map(|(c, v)| (*c, g.constant(Tensor::vector(v.clone()))))
            .collect();
        let f = fuse(&mut g, &nodes, weights).unwrap();
        g.value(f.fused).data().to_vec()
    }

    #[test]
    fn fuse_word_only_is_identity() {
        let sc = vec![0.25, -1.5, 3.0e-7];
        let fused = fuse_values(
            &[(Channel::Word, sc.clone()), (Channel::Sememe, vec![9.0, 9.0, 9.0])],
            &ChannelWeights::word_only(),
        );
        assert_eq!(fused, sc);
    }

    #[test]
    fn fuse_hand_values() {
        let weights = ChannelWeights {
            lambda_mor: 0.5,
            ..ChannelWeights::word_only()
        };
        let fused = fuse_values(&[(Channel::Word, vec![2.0]), (Channel::Morpheme, vec![3.0])], &weights);
        assert_eq!(fused, vec![3.5]);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(rank(&[0.0; 5]), vec![0, 1, 2, 3, 4]);
    }

    /// Selection sort on (score desc, index asc): an independent oracle.
    fn brute_rank(scores: &[f64]) -> Vec<usize> {
        let mut left: Vec<usize> = (0..scores.len()).collect();
        let mut out = Vec::new();
        while !left.is_empty() {
            let mut best = 0;
            for k in 1..left.len() {
                let (a, b) = (left[k], left[best]);
                if scores[a] > scores[b] || (scores[a] == scores[b] && a < b) {
                    best = k;
                }
            }
            out.push(left.remove(best));
        }
        out
    }

    proptest! {
        #[test]
        fn rank_matches_brute_force(scores in prop::collection::vec(-3i32..3, 6)) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            prop_assert_eq!(rank(&scores), brute_rank(&scores));
        }

        #[test]
        fn fusion_linearity(
            word in prop::collection::vec(-5.0f64..5.0, 6),
            mor in prop::collection::vec(-5.0f64..5.0, 6),
            sem in prop::collection::vec(-5.0f64..5.0, 6),
            l in prop::collection::vec(0.0f64..2.0, 3),
            scale in 0.1f64..10.0,
        ) {
            let weights = ChannelWeights {
                lambda_word: l[0] + 0.01,
                lambda_mor: l[1],
                lambda_sem: l[2],
                ..ChannelWeights::word_only()
            };
            let per_word = [(Channel::Word, word), (Channel::Morpheme, mor), (Channel::Sememe, sem)];
            let base = fuse_values(&per_word, &weights);
            let doubled = fuse_values(&per_word, &weights.scaled(2.0));
            for (b, d) in base.iter().zip(&doubled) {
                prop_assert_eq!(*d, 2.0 * b);
            }
            let scaled = fuse_values(&per_word, &weights.scaled(scale));
            for (b, s) in base.iter().zip(&scaled) {
                prop_assert!((s - scale * b).abs() <= 1e-12 * (1.0 + s.abs()));
            }
        }

        #[test]
        fn morpheme_monotonicity(
            global in prop::collection::vec(-5.0f64..5.0, 4),
            sets in prop::collection::vec(prop::collection::btree_set(0usize..4, 0..4), 5),
            j in 0usize..4,
            delta in 0.01f64..3.0,
            lambda in 0.1f64..2.0,
        ) {
            let sets: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
            let refs: Vec<&[usize]> = sets.iter().map(Vec::as_slice).collect();
            let inc = rows(4, &refs);
            let weights = ChannelWeights { lambda_mor: lambda, ..ChannelWeights::word_only() };
            let fused_for = |global: &[f64]| {
                let mut g = Graph::new();
                let word = g.constant(Tensor::vector(vec![0.5; 5]));
                let gl = g.constant(Tensor::vector(global.to_vec()));
                let pw = g.sparse(Arc::clone(&inc), gl).unwrap();
                let f = fuse(&mut g, &[(Channel::Word, word), (Channel::Morpheme, pw)], &weights).unwrap();
                g.value(f.fused).data().to_vec()
            };
            let before = fused_for(&global);
            let mut bumped = global.clone();
            bumped[j] += delta;
            let after = fused_for(&bumped);
            for w in 0..5 {
                if sets[w].contains(&j) {
                    prop_assert!((after[w] - before[w] - lambda * delta).abs() < 1e-9);
                } else {
                    prop_assert_eq!(after[w], before[w]);
                }
            }
        }
    }
}
