//! Named trainable tensors.

use std::collections::BTreeMap;

use rand::Rng;

use crate::tensor::Tensor;

pub const LSTM_FWD_WEIGHT: &str = "encoder.fwd.weight";
pub const LSTM_FWD_BIAS: &str = "encoder.fwd.bias";
pub const LSTM_BWD_WEIGHT: &str = "encoder.bwd.weight";
pub const LSTM_BWD_BIAS: &str = "encoder.bwd.bias";
pub const WORD_WEIGHT: &str = "word.weight";
pub const WORD_BIAS: &str = "word.bias";
pub const POS_WEIGHT: &str = "pos.weight";
pub const POS_BIAS: &str = "pos.bias";
pub const MOR_WEIGHT: &str = "mor.weight";
pub const MOR_BIAS: &str = "mor.bias";
pub const SEM_WEIGHT: &str = "sem.weight";
pub const SEM_BIAS: &str = "sem.bias";

pub fn cat_weight(layer: usize) -> String {
    format!("cat.{layer}.weight")
}

pub fn cat_bias(layer: usize) -> String {
    format!("cat.{layer}.bias")
}

/// Sizes that determine the parameter shapes. A zero count (or an empty
/// layer list) means the channel has no parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub pos: usize,
    pub morphemes: usize,
    pub sememes: usize,
    pub category_layers: Vec<usize>,
}

impl ModelDims {
    /// Expected `(name, shape)` of every parameter, in initialization order.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, l) = (self.input_dim, self.hidden_dim);
        let two_l = 2 * l;
        let mut out = vec![
            (LSTM_FWD_WEIGHT.to_string(), vec![4 * l, d + l]),
            (LSTM_FWD_BIAS.to_string(), vec![4 * l]),
            (LSTM_BWD_WEIGHT.to_string(), vec![4 * l, d + l]),
            (LSTM_BWD_BIAS.to_string(), vec![4 * l]),
            (WORD_WEIGHT.to_string(), vec![d, two_l]),
            (WORD_BIAS.to_string(), vec![d]),
        ];
        let mut linear = |w: String, b: String, n: usize| {
            if n > 0 {
                out.push((w, vec![n, two_l]));
                out.push((b, vec![n]));
            }
        };
        linear(POS_WEIGHT.into(), POS_BIAS.into(), self.pos);
        linear(MOR_WEIGHT.into(), MOR_BIAS.into(), self.morphemes);
        for (k, &c) in self.category_layers.iter().enumerate() {
            linear(cat_weight(k), cat_bias(k), c);
        }
        linear(SEM_WEIGHT.into(), SEM_BIAS.into(), self.sememes);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Glorot-uniform weights in `±√(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, shape) in dims.shapes() {
            let t = if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let data = (0..shape[0] * shape[1])
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Tensor::new(shape, data).expect("shape from dims")
            } else {
                Tensor::zeros(&shape)
            };
            tensors.insert(name, t);
        }
        Self { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    /// Parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn component_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            input_dim: 3,
            hidden_dim: 2,
            pos: 0,
            morphemes: 5,
            sememes: 4,
            category_layers: vec![2, 3],
        }
    }

    #[test]
    fn shapes_follow_dims() {
        let p = ModelParams::init(&dims(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p.get(LSTM_FWD_WEIGHT).unwrap().shape(), &[8, 5]);
        assert_eq!(p.get(WORD_WEIGHT).unwrap().shape(), &[3, 4]);
        assert_eq!(p.get(&cat_weight(1)).unwrap().shape(), &[3, 4]);
        assert!(p.get(POS_WEIGHT).is_none());
        assert_eq!(p.len(), 14);
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let p = ModelParams::init(&dims(), &mut ChaCha8Rng::seed_from_u64(2));
        let limit = (6.0f64 / (8 + 5) as f64).sqrt();
        assert!(p.get(LSTM_FWD_WEIGHT).unwrap().data().iter().all(|v| v.abs() <= limit));
        assert!(p.get(LSTM_FWD_BIAS).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelParams::init(&dims(), &mut ChaCha8Rng::seed_from_u64(3));
        let b = ModelParams::init(&dims(), &mut ChaCha8Rng::seed_from_u64(3));
        let c = ModelParams::init(&dims(), &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
