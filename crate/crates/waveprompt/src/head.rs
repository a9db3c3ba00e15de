//! Classifier back end: projection, multi-head attentive pooling over the
//! sequence axis, and a small MLP to two-class logits, trained with
//! weighted cross-entropy. Budget-matched stand-in for a graph-attention
//! back end; at the full-scale width it carries ~0.445M parameters.

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::tensor::{derive_seed, xavier_uniform_init, Graph, NodeId, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Projection width e.
    pub proj_dim: usize,
    /// Attentive pooling heads.
    pub pool_heads: usize,
    /// Hidden width of the output MLP; also the exported embedding size.
    pub mlp_dim: usize,
}

impl HeadConfig {
    pub fn desk() -> Self {
        HeadConfig { proj_dim: 32, pool_heads: 4, mlp_dim: 16 }
    }

    /// Sized to ~0.445M parameters at model_dim 1024.
    pub fn full_scale() -> Self {
        HeadConfig { proj_dim: 384, pool_heads: 4, mlp_dim: 128 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.proj_dim == 0 || self.pool_heads == 0 || self.mlp_dim == 0 {
            return Err(Error::Config("head dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count for a given encoder width.
    pub fn param_count(&self, model_dim: usize) -> usize {
        let (e, h, m) = (self.proj_dim, self.pool_heads, self.mlp_dim);
        model_dim * e + e + e * h + h + e * m + m + m * 2 + 2
    }
}

pub struct Head {
    pub config: HeadConfig,
    proj_w: ParamId,
    proj_b: ParamId,
    score_w: ParamId,
    score_b: ParamId,
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
}

impl Head {
    /// The pooling score layer starts at zero, which makes pooling an
    /// exact row mean (permutation-invariant) at initialization.
    pub fn build(
        store: &mut ParamStore,
        config: HeadConfig,
        model_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let (e, h, m) = (config.proj_dim, config.pool_heads, config.mlp_dim);
        let proj_w =
            store.add("head/proj/weight", xavier_uniform_init(model_dim, e, derive_seed(seed, 0)))?;
        let proj_b = store.add("head/proj/bias", Tensor::zeros(vec![1, e]))?;
        let score_w = store.add("head/score/weight", Tensor::zeros(vec![e, h]))?;
        let score_b = store.add("head/score/bias", Tensor::zeros(vec![1, h]))?;
        let mlp_w1 =
            store.add("head/mlp/w1", xavier_uniform_init(e, m, derive_seed(seed, 1)))?;
        let mlp_b1 = store.add("head/mlp/b1", Tensor::zeros(vec![1, m]))?;
        let mlp_w2 =
            store.add("head/mlp/w2", xavier_uniform_init(m, 2, derive_seed(seed, 2)))?;
        let mlp_b2 = store.add("head/mlp/b2", Tensor::zeros(vec![1, 2]))?;
        Ok(Head { config, proj_w, proj_b, score_w, score_b, mlp_w1, mlp_b1, mlp_w2, mlp_b2 })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.proj_w,
            self.proj_b,
            self.score_w,
            self.score_b,
            self.mlp_w1,
            self.mlp_b1,
            self.mlp_w2,
            self.mlp_b2,
        ]
    }

    /// Forward over the backend input `I` of shape `S x d`. Returns
    /// (logits [2], embedding [mlp_dim]); the embedding is the input to
    /// the final fully connected layer.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let s_len = g.shape(input)[0];
        if s_len == 0 {
            return Err(Error::Contract("head input must have at least one row".into()));
        }
        let w = g.param_of(store, self.proj_w);
        let b = g.param_of(store, self.proj_b);
        let proj = g.matmul(input, w)?;
        let proj = g.add_row(proj, b)?;

        // per-head attention over the sequence axis
        let sw = g.param_of(store, self.score_w);
        let sb = g.param_of(store, self.score_b);
        let scores = g.matmul(proj, sw)?;
        let scores = g.add_row(scores, sb)?;
        let scores_t = g.transpose(scores)?; // [H, S]
        let weights = g.softmax_rows(scores_t)?;
        let pooled_heads = g.matmul(weights, proj)?; // [H, e]
        let h = self.config.pool_heads;
        let mean_row =
            g.input_from(vec![1, h], vec![1.0 / h as f64; h]);
        let pooled = g.matmul(mean_row, pooled_heads)?; // [1, e]

        let w1 = g.param_of(store, self.mlp_w1);
        let b1 = g.param_of(store, self.mlp_b1);
        let hidden = g.matmul(pooled, w1)?;
        let hidden = g.add_row(hidden, b1)?;
        let embedding = g.gelu(hidden); // [1, m]

        let w2 = g.param_of(store, self.mlp_w2);
        let b2 = g.param_of(store, self.mlp_b2);
        let logits = g.matmul(embedding, w2)?;
        let logits = g.add_row(logits, b2)?;
        let logits = g.reshape(logits, vec![2])?;
        let embedding = g.reshape(embedding, vec![self.config.mlp_dim])?;
        Ok((logits, embedding))
    }
}

/// Class weights for the weighted cross-entropy loss; always normalized
/// to sum to 2 so balanced data reduces to plain cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub real: f64,
    pub fake: f64,
}

impl ClassWeights {
    pub fn balanced() -> Self {
        ClassWeights { real: 1.0, fake: 1.0 }
    }

    /// Inverse-frequency weights from class counts.
    pub fn from_counts(n_real: usize, n_fake: usize) -> Result<Self> {
        if n_real == 0 || n_fake == 0 {
            return Err(Error::Config(format!(
                "class weights need both classes, got {n_real} real / {n_fake} fake"
            )));
        }
        let total = (n_real + n_fake) as f64;
        Ok(ClassWeights { real: 2.0 * n_fake as f64 / total, fake: 2.0 * n_real as f64 / total })
    }

    /// Inverse-frequency weights over a manifest.
    pub fn from_entries(entries: &[crate::data::ManifestEntry]) -> Result<Self> {
        let n_real = entries.iter().filter(|e| e.label == Label::Real).count();
        let n_fake = entries.len() - n_real;
        ClassWeights::from_counts(n_real, n_fake)
    }

    pub fn weight(&self, label: Label) -> f64 {
        match label {
            Label::Real => self.real,
            Label::Fake => self.fake,
        }
    }
}

/// Weighted cross-entropy of one clip's logits against its label.
pub fn wce_loss(
    g: &mut Graph,
    logits: NodeId,
    label: Label,
    weights: &ClassWeights,
) -> Result<NodeId> {
    g.cross_entropy(logits, label.index(), weights.weight(label))
}
