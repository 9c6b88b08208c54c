//! Parameters and building blocks of the heterogeneous gated graph network:
//! the gated cell, the three stacks, the CRF tagger and the sentiment heads.

pub mod cell;
pub mod crf;
pub mod heads;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::EdgeType;
use crate::numcore::{ParamId, ParamStore, Tensor};

pub use cell::{hggnn_cell, neighbor_aggregate, run_stack};
pub use crf::{crf_log_likelihood, crf_scores, crf_viterbi};
pub use heads::{as_mlp_probs, as_sim_probs, mlp_logits, sim_logits};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LAYERS: usize = 3;

/// Gate (`z`), reset (`r`) and candidate matrices for one relation.
#[derive(Clone, Copy, Debug)]
pub struct RelationWeights {
    pub wz: ParamId,
    pub wr: ParamId,
    pub wh: ParamId,
}

/// Input (`v*`) and recurrent (`u*`) matrices of the gated update.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights {
    pub vz: ParamId,
    pub vr: ParamId,
    pub vh: ParamId,
    pub uz: ParamId,
    pub ur: ParamId,
    pub uh: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerWeights {
    /// Indexed by [`EdgeType::index`].
    pub relations: [RelationWeights; 4],
    /// Aggregation bias shared by the four relations.
    pub k: ParamId,
    pub gru: GruWeights,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stack {
    Shared,
    Aspect,
    Sentiment,
}

impl Stack {
    fn prefix(self) -> &'static str {
        match self {
            Stack::Shared => "shared",
            Stack::Aspect => "ae",
            Stack::Sentiment => "as",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Rows of the embedding table, including the unknown-word row.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub shared_layers: usize,
    pub ae_layers: usize,
    pub as_layers: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim,
            hidden,
            shared_layers: DEFAULT_LAYERS,
            ae_layers: DEFAULT_LAYERS,
            as_layers: DEFAULT_LAYERS,
        }
    }
}

/// All trainable parameters plus typed handles into the store.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embed: ParamId,
    /// Maps word embeddings into the hidden space; sentiment nodes use their
    /// hidden-sized embeddings directly.
    pub input_proj: ParamId,
    /// 3 x hidden, rows in POS/NEG/NEU order.
    pub senti: ParamId,
    pub shared: Vec<LayerWeights>,
    pub ae: Vec<LayerWeights>,
    pub as_: Vec<LayerWeights>,
    /// hidden x 12: emission weights for every (previous, current) label
    /// pair, previous in {O, B, I, START}.
    pub crf_w: ParamId,
    pub crf_b: ParamId,
    /// hidden x 4 over POS/NEG/NEU/NONE.
    pub mlp_w: ParamId,
    pub mlp_b: ParamId,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let spread = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(&[rows, cols], spread, rng)
}

impl Model {
    /// Fresh model. `embeddings` must be `vocab_size x embed_dim`.
    pub fn new(config: ModelConfig, embeddings: Tensor, seed: u64) -> Result<Self> {
        if embeddings.shape() != [config.vocab_size, config.embed_dim] {
            return Err(Error::Shape {
                op: "Model::new",
                detail: format!(
                    "embeddings {:?}, expected [{}, {}]",
                    embeddings.shape(),
                    config.vocab_size,
                    config.embed_dim
                ),
            });
        }
        if config.hidden == 0 {
            return Err(Error::invalid("hidden dimension must be positive"));
        }
        let h = config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embed = store.add("embed", embeddings)?;
        let input_proj = store.add("input_proj", glorot(config.embed_dim, h, &mut rng))?;
        let senti = store.add("senti", glorot(3, h, &mut rng))?;

        let mut stack = |which: Stack, depth: usize, store: &mut ParamStore| -> Result<Vec<LayerWeights>> {
            let mut layers = Vec::with_capacity(depth);
            for l in 0..depth {
                let p = format!("{}.{l}", which.prefix());
                let mut rel = Vec::with_capacity(4);
                for ty in EdgeType::ALL {
                    let q = format!("{p}.{}", ty.name());
                    rel.push(RelationWeights {
                        wz: store.add(format!("{q}.wz"), glorot(h, h, &mut rng))?,
                        wr: store.add(format!("{q}.wr"), glorot(h, h, &mut rng))?,
                        wh: store.add(format!("{q}.wh"), glorot(h, h, &mut rng))?,
                    });
                }
                let k = store.add(format!("{p}.k"), Tensor::zeros(&[h]))?;
                let gru = GruWeights {
                    vz: store.add(format!("{p}.vz"), glorot(h, h, &mut rng))?,
                    vr: store.add(format!("{p}.vr"), glorot(h, h, &mut rng))?,
                    vh: store.add(format!("{p}.vh"), glorot(h, h, &mut rng))?,
                    uz: store.add(format!("{p}.uz"), glorot(h, h, &mut rng))?,
                    ur: store.add(format!("{p}.ur"), glorot(h, h, &mut rng))?,
                    uh: store.add(format!("{p}.uh"), glorot(h, h, &mut rng))?,
                };
                layers.push(LayerWeights {
                    relations: rel.try_into().expect("four relations"),
                    k,
                    gru,
                });
            }
            Ok(layers)
        };
        let shared = stack(Stack::Shared, config.shared_layers, &mut store)?;
        let ae = stack(Stack::Aspect, config.ae_layers, &mut store)?;
        let as_ = stack(Stack::Sentiment, config.as_layers, &mut store)?;

        let crf_w = store.add("crf.w", glorot(h, crf::SCORE_COLS, &mut rng))?;
        let crf_b = store.add("crf.b", Tensor::zeros(&[crf::SCORE_COLS]))?;
        let mlp_w = store.add("mlp.w", glorot(h, heads::MLP_CLASSES, &mut rng))?;
        let mlp_b = store.add("mlp.b", Tensor::zeros(&[heads::MLP_CLASSES]))?;

        Ok(Model {
            config,
            store,
            embed,
            input_proj,
            senti,
            shared,
            ae,
            as_,
            crf_w,
            crf_b,
            mlp_w,
            mlp_b,
        })
    }

    pub fn stack(&self, which: Stack) -> &[LayerWeights] {
        match which {
            Stack::Shared => &self.shared,
            Stack::Aspect => &self.ae,
            Stack::Sentiment => &self.as_,
        }
    }

    /// Parameters as named tensors, in registration order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.store
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Overwrites parameter values from named tensors; every parameter must
    /// be present with its exact shape.
    pub fn load_tensors(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let name = self.store.get(id).name.clone();
            let t = tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != self.store.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?}, expected {:?}",
                    t.shape(),
                    self.store.value(id).shape()
                )));
            }
            *self.store.value_mut(id) = t.clone();
        }
        Ok(())
    }

    /// Sets every parameter except the embedding table to zero.
    pub fn zero_weights(&mut self) {
        let embed = self.embed;
        for id in self.store.ids().collect::<Vec<_>>() {
            if id != embed {
                self.store.value_mut(id).fill(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_shapes() {
        let cfg = ModelConfig::new(5, 4, 6);
        let m = Model::new(cfg, Tensor::zeros(&[5, 4]), 1).unwrap();
        assert_eq!(m.shared.len(), 3);
        assert_eq!(m.store.value(m.crf_w).shape(), &[6, 12]);
        assert_eq!(m.store.value(m.senti).shape(), &[3, 6]);
        assert_eq!(m.store.value(m.ae[2].relations[3].wh).shape(), &[6, 6]);
        assert_eq!(m.store.value(m.as_[0].k).shape(), &[6]);
        assert!(Model::new(cfg, Tensor::zeros(&[4, 4]), 1).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let cfg = ModelConfig::new(3, 2, 4);
        let a = Model::new(cfg, Tensor::zeros(&[3, 2]), 9).unwrap();
        let b = Model::new(cfg, Tensor::zeros(&[3, 2]), 9).unwrap();
        assert_eq!(a.named_tensors(), b.named_tensors());
        let mut c = Model::new(cfg, Tensor::zeros(&[3, 2]), 10).unwrap();
        assert_ne!(a.named_tensors(), c.named_tensors());
        c.load_tensors(&a.named_tensors()).unwrap();
        assert_eq!(a.named_tensors(), c.named_tensors());
    }
}
