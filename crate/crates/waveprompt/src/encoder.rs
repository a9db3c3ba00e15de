//! Frozen front-end feature extractor and transformer encoder stack.
//!
//! The stack stands in for a pretrained SSL encoder at matching geometry:
//! a strided convolutional front end (always frozen, in every paradigm)
//! feeding a projection, a learned absolute position table, and a
//! pre-norm transformer encoder. All weights are seeded-random; the
//! archive import path accepts externally exported weights of the same
//! layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    derive_seed, xavier_uniform_init, Graph, NodeId, ParamId, ParamStore, Tensor,
};

pub const LN_EPS: f64 = 1e-5;

/// One strided 1-D convolution of the front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub sample_rate: u32,
    /// Fixed input length L in samples.
    pub clip_len: usize,
    /// Transformer hidden width d.
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// Rows in the learned absolute position table.
    pub max_positions: usize,
    pub frontend: Vec<ConvSpec>,
}

impl EncoderConfig {
    /// Desk-scale default: 1 s of 16 kHz audio, d=64, 4 layers, and a
    /// 3-conv front end with stride 4 each, giving t = 250.
    pub fn desk() -> Self {
        EncoderConfig {
            sample_rate: 16_000,
            clip_len: 16_000,
            model_dim: 64,
            num_layers: 4,
            num_heads: 4,
            ffn_dim: 128,
            max_positions: 256,
            frontend: vec![
                ConvSpec { channels: 32, kernel: 4, stride: 4 },
                ConvSpec { channels: 64, kernel: 4, stride: 4 },
                ConvSpec { channels: 64, kernel: 4, stride: 4 },
            ],
        }
    }

    /// Full-scale reference geometry: 4 s of 16 kHz audio through the
    /// 7-layer conv stack (kernels 10,3,3,3,3,2,2 / strides 5,2,2,2,2,2,2),
    /// d=1024, 24 layers, giving t = 201. The FFN width is sized so the
    /// fine-tunable side of the stack totals ~315.7M parameters, matching
    /// the reference countermeasure's reported trainable budget.
    pub fn full_scale() -> Self {
        let mut frontend = vec![ConvSpec { channels: 512, kernel: 10, stride: 5 }];
        frontend.extend(std::iter::repeat_n(ConvSpec { channels: 512, kernel: 3, stride: 2 }, 4));
        frontend.extend(std::iter::repeat_n(ConvSpec { channels: 512, kernel: 2, stride: 2 }, 2));
        EncoderConfig {
            sample_rate: 16_000,
            clip_len: 64_600,
            model_dim: 1024,
            num_layers: 24,
            num_heads: 16,
            ffn_dim: 4352,
            max_positions: 256,
            frontend,
        }
    }

    /// Token count t produced by the conv front end for clip_len samples.
    pub fn token_count(&self) -> Result<usize> {
        let mut len = self.clip_len;
        for (i, c) in self.frontend.iter().enumerate() {
            if c.kernel == 0 || c.stride == 0 || c.channels == 0 {
                return Err(Error::Config(format!("conv {} has a zero field", i + 1)));
            }
            if c.kernel > len {
                return Err(Error::Config(format!(
                    "conv {} kernel {} exceeds input length {len}",
                    i + 1,
                    c.kernel
                )));
            }
            len = (len - c.kernel) / c.stride + 1;
        }
        if len == 0 {
            return Err(Error::Config("front end reduces the clip to zero tokens".into()));
        }
        Ok(len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.num_heads == 0 || self.num_layers == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.frontend.is_empty() {
            return Err(Error::Config("front end needs at least one conv".into()));
        }
        let t = self.token_count()?;
        if t > self.max_positions {
            return Err(Error::Config(format!(
                "token count {t} exceeds position table of {}",
                self.max_positions
            )));
        }
        Ok(())
    }

    /// Channel width of the last conv (the projection input).
    pub fn conv_dim(&self) -> usize {
        self.frontend.last().map(|c| c.channels).unwrap_or(0)
    }

    /// Closed-form parameter count of the always-frozen conv front end.
    pub fn frontend_param_count(&self) -> usize {
        let mut in_ch = 1;
        let mut total = 0;
        for c in &self.frontend {
            total += c.channels * (in_ch * c.kernel) + c.channels;
            in_ch = c.channels;
        }
        total
    }

    /// Closed-form parameter count of the fine-tunable side: projection,
    /// position table, transformer layers, final norm.
    pub fn transformer_param_count(&self) -> usize {
        let d = self.model_dim;
        let f = self.ffn_dim;
        let c = self.conv_dim();
        let proj = 2 * c + c * d + d;
        let pos = self.max_positions * d;
        let per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * (2 * d);
        let final_norm = 2 * d;
        proj + pos + self.num_layers * per_layer + final_norm
    }
}

struct LayerParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    norm1_gain: ParamId,
    norm1_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    norm2_gain: ParamId,
    norm2_bias: ParamId,
}

/// Encoder parameters and forward passes. Weights live in the shared
/// [`ParamStore`]; freezing is applied per paradigm by the model.
pub struct Encoder {
    pub config: EncoderConfig,
    convs: Vec<(ParamId, ParamId)>,
    proj_norm_gain: ParamId,
    proj_norm_bias: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    pos_table: ParamId,
    layers: Vec<LayerParams>,
    final_gain: ParamId,
    final_bias: ParamId,
}

fn ones(n: usize) -> Tensor {
    Tensor::new(vec![1, n], vec![1.0; n]).expect("shape")
}

fn zeros_row(n: usize) -> Tensor {
    Tensor::zeros(vec![1, n])
}

impl Encoder {
    /// Allocate and initialize all encoder parameters. Deterministic for
    /// a given seed; weights are Xavier-uniform, biases zero, norms
    /// identity.
    pub fn build(store: &mut ParamStore, config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ordinal: u64 = 0;
        let mut next_seed = |s: u64| {
            let out = derive_seed(s, ordinal);
            ordinal += 1;
            out
        };

        let mut convs = Vec::new();
        let mut in_ch = 1;
        for (i, c) in config.frontend.iter().enumerate() {
            let w = store.add(
                format!("encoder/frontend/conv{}/weight", i + 1),
                xavier_uniform_init(c.channels, in_ch * c.kernel, next_seed(seed)),
            )?;
            let b = store.add(format!("encoder/frontend/conv{}/bias", i + 1), zeros_row(c.channels))?;
            convs.push((w, b));
            in_ch = c.channels;
        }

        let c_last = config.conv_dim();
        let d = config.model_dim;
        let proj_norm_gain = store.add("encoder/proj/norm/gain", ones(c_last))?;
        let proj_norm_bias = store.add("encoder/proj/norm/bias", zeros_row(c_last))?;
        let proj_w =
            store.add("encoder/proj/weight", xavier_uniform_init(c_last, d, next_seed(seed)))?;
        let proj_b = store.add("encoder/proj/bias", zeros_row(d))?;
        let pos_table = store.add(
            "encoder/pos/table",
            xavier_uniform_init(config.max_positions, d, next_seed(seed)),
        )?;

        let mut layers = Vec::with_capacity(config.num_layers);
        for k in 1..=config.num_layers {
            let n = |part: &str| format!("encoder/layer{k}/{part}");
            layers.push(LayerParams {
                wq: store.add(n("attn/q/weight"), xavier_uniform_init(d, d, next_seed(seed)))?,
                bq: store.add(n("attn/q/bias"), zeros_row(d))?,
                wk: store.add(n("attn/k/weight"), xavier_uniform_init(d, d, next_seed(seed)))?,
                bk: store.add(n("attn/k/bias"), zeros_row(d))?,
                wv: store.add(n("attn/v/weight"), xavier_uniform_init(d, d, next_seed(seed)))?,
                bv: store.add(n("attn/v/bias"), zeros_row(d))?,
                wo: store.add(n("attn/o/weight"), xavier_uniform_init(d, d, next_seed(seed)))?,
                bo: store.add(n("attn/o/bias"), zeros_row(d))?,
                norm1_gain: store.add(n("norm1/gain"), ones(d))?,
                norm1_bias: store.add(n("norm1/bias"), zeros_row(d))?,
                w1: store.add(n("ffn/w1"), xavier_uniform_init(d, config.ffn_dim, next_seed(seed)))?,
                b1: store.add(n("ffn/b1"), zeros_row(config.ffn_dim))?,
                w2: store.add(n("ffn/w2"), xavier_uniform_init(config.ffn_dim, d, next_seed(seed)))?,
                b2: store.add(n("ffn/b2"), zeros_row(d))?,
                norm2_gain: store.add(n("norm2/gain"), ones(d))?,
                norm2_bias: store.add(n("norm2/bias"), zeros_row(d))?,
            });
        }

        let final_gain = store.add("encoder/final_norm/gain", ones(d))?;
        let final_bias = store.add("encoder/final_norm/bias", zeros_row(d))?;

        Ok(Encoder {
            config,
            convs,
            proj_norm_gain,
            proj_norm_bias,
            proj_w,
            proj_b,
            pos_table,
            layers,
            final_gain,
            final_bias,
        })
    }

    /// Parameter ids of the always-frozen conv front end.
    pub fn frontend_param_ids(&self) -> Vec<ParamId> {
        self.convs.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Parameter ids of the fine-tunable side (everything above the convs).
    pub fn transformer_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.proj_norm_gain,
            self.proj_norm_bias,
            self.proj_w,
            self.proj_b,
            self.pos_table,
        ];
        for l in &self.layers {
            ids.extend([
                l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.norm1_gain, l.norm1_bias,
                l.w1, l.b1, l.w2, l.b2, l.norm2_gain, l.norm2_bias,
            ]);
        }
        ids.extend([self.final_gain, self.final_bias]);
        ids
    }

    pub fn all_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.frontend_param_ids();
        ids.extend(self.transformer_param_ids());
        ids
    }

    /// Run the frozen conv stack over one clip, returning row-major
    /// `t x conv_dim` token features. Pure f64 arithmetic off the tape:
    /// the convs are frozen in every paradigm and the waveform carries no
    /// gradient, so nothing upstream ever needs this segment replayed.
    pub fn conv_tokens(&self, store: &ParamStore, wave: &[f64]) -> Result<Vec<f64>> {
        if wave.len() != self.config.clip_len {
            return Err(Error::Contract(format!(
                "waveform of {} samples, expected clip_len {}",
                wave.len(),
                self.config.clip_len
            )));
        }
        // channel-major buffers: x[c * len + i]
        let mut x = wave.to_vec();
        let mut in_ch = 1;
        let mut len = wave.len();
        for (spec, &(wid, bid)) in self.config.frontend.iter().zip(&self.convs) {
            let w = store.tensor(wid).data();
            let b = store.tensor(bid).data();
            let out_len = (len - spec.kernel) / spec.stride + 1;
            let mut y = vec![0.0; spec.channels * out_len];
            for o in 0..spec.channels {
                let wrow = &w[o * in_ch * spec.kernel..(o + 1) * in_ch * spec.kernel];
                let yrow = &mut y[o * out_len..(o + 1) * out_len];
                for c in 0..in_ch {
                    let taps = &wrow[c * spec.kernel..(c + 1) * spec.kernel];
                    let xrow = &x[c * len..(c + 1) * len];
                    for (i, yv) in yrow.iter_mut().enumerate() {
                        let window = &xrow[i * spec.stride..i * spec.stride + spec.kernel];
                        let dot: f64 = taps.iter().zip(window).map(|(a, v)| a * v).sum();
                        *yv += dot;
                    }
                }
                for yv in yrow.iter_mut() {
                    *yv += b[o];
                }
            }
            crate::tensor::gelu_slice(&mut y);
            x = y;
            len = out_len;
            in_ch = spec.channels;
        }
        // transpose to token-major [t, c]
        let mut tokens = vec![0.0; len * in_ch];
        for c in 0..in_ch {
            for i in 0..len {
                tokens[i * in_ch + c] = x[c * len + i];
            }
        }
        Ok(tokens)
    }

    /// Project conv tokens onto the model width and add positions: the
    /// taped tail of feature extraction, shared by all paradigms.
    pub fn embed_tokens(&self, g: &mut Graph, store: &ParamStore, tokens: &[f64]) -> Result<NodeId> {
        let c = self.config.conv_dim();
        if tokens.len() % c != 0 {
            return Err(Error::Contract(format!(
                "token buffer of {} values not divisible by conv width {c}",
                tokens.len()
            )));
        }
        let t = tokens.len() / c;
        let x = g.input_from(vec![t, c], tokens.to_vec());
        let gain = g.param_of(store, self.proj_norm_gain);
        let bias = g.param_of(store, self.proj_norm_bias);
        let normed = g.layer_norm(x, gain, bias, LN_EPS)?;
        let w = g.param_of(store, self.proj_w);
        let b = g.param_of(store, self.proj_b);
        let projected = g.matmul(normed, w)?;
        let projected = g.add_row(projected, b)?;
        let table = g.param_of(store, self.pos_table);
        let pos = g.slice_rows(table, 0, t)?;
        g.add(projected, pos)
    }

    /// Full feature extraction: frozen convs then the taped projection.
    /// Returns E_0 of shape `t x d`.
    pub fn extract_features(&self, g: &mut Graph, store: &ParamStore, wave: &[f64]) -> Result<NodeId> {
        let tokens = self.conv_tokens(store, wave)?;
        self.embed_tokens(g, store, &tokens)
    }

    /// One pre-norm encoder layer: self-attention and FFN, both residual.
    /// Returns the output and the per-head attention maps (rows softmaxed).
    pub fn layer_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        layer_idx: usize,
        input: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        if layer_idx == 0 || layer_idx > self.layers.len() {
            return Err(Error::Contract(format!(
                "layer index {layer_idx} out of range 1..={}",
                self.layers.len()
            )));
        }
        let lp = &self.layers[layer_idx - 1];
        let d = self.config.model_dim;
        let heads = self.config.num_heads;
        let dh = d / heads;
        let s_len = g.shape(input)[0];

        let n1g = g.param_of(store, lp.norm1_gain);
        let n1b = g.param_of(store, lp.norm1_bias);
        let normed = g.layer_norm(input, n1g, n1b, LN_EPS)?;

        let mut qkv = Vec::with_capacity(3);
        for (wid, bid) in [(lp.wq, lp.bq), (lp.wk, lp.bk), (lp.wv, lp.bv)] {
            let w = g.param_of(store, wid);
            let b = g.param_of(store, bid);
            let m = g.matmul(normed, w)?;
            qkv.push(g.add_row(m, b)?);
        }
        let (q, k, v) = (qkv[0], qkv[1], qkv[2]);

        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx_heads = Vec::with_capacity(heads);
        let mut attn_heads = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scaled = g.scale(scores, scale);
            let attn = g.softmax_rows(scaled)?;
            debug_assert_eq!(g.shape(attn), &[s_len, s_len]);
            attn_heads.push(attn);
            ctx_heads.push(g.matmul(attn, vh)?);
        }
        let ctx = g.concat_cols(&ctx_heads)?;
        let wo = g.param_of(store, lp.wo);
        let bo = g.param_of(store, lp.bo);
        let proj = g.matmul(ctx, wo)?;
        let proj = g.add_row(proj, bo)?;
        let after_attn = g.add(input, proj)?;

        let n2g = g.param_of(store, lp.norm2_gain);
        let n2b = g.param_of(store, lp.norm2_bias);
        let normed2 = g.layer_norm(after_attn, n2g, n2b, LN_EPS)?;
        let w1 = g.param_of(store, lp.w1);
        let b1 = g.param_of(store, lp.b1);
        let hidden = g.matmul(normed2, w1)?;
        let hidden = g.add_row(hidden, b1)?;
        let act = g.gelu(hidden);
        let w2 = g.param_of(store, lp.w2);
        let b2 = g.param_of(store, lp.b2);
        let ff = g.matmul(act, w2)?;
        let ff = g.add_row(ff, b2)?;
        let out = g.add(after_attn, ff)?;
        Ok((out, attn_heads))
    }

    /// Final layer norm applied to the last layer's output rows.
    pub fn final_norm(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let gain = g.param_of(store, self.final_gain);
        let bias = g.param_of(store, self.final_bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_encoder() -> (ParamStore, Encoder) {
        let mut store = ParamStore::new();
        let enc = Encoder::build(&mut store, EncoderConfig::desk(), 7).unwrap();
        (store, enc)
    }

    #[test]
    fn full_scale_token_geometry() {
        let cfg = EncoderConfig::full_scale();
        assert_eq!(cfg.token_count().unwrap(), 201);
        assert_eq!(cfg.model_dim, 1024);
    }

    #[test]
    fn desk_token_geometry() {
        let cfg = EncoderConfig::desk();
        assert_eq!(cfg.token_count().unwrap(), 250);
        assert_eq!(cfg.model_dim, 64);
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut cfg = EncoderConfig::desk();
        cfg.num_heads = 5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_waveform_yields_finite_features() {
        let (store, enc) = desk_encoder();
        let mut g = Graph::new();
        let wave = vec![0.0; enc.config.clip_len];
        let e0 = enc.extract_features(&mut g, &store, &wave).unwrap();
        assert_eq!(g.shape(e0), &[250, 64]);
        assert!(g.value(e0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_length_waveform_rejected() {
        let (store, enc) = desk_encoder();
        let err = enc.conv_tokens(&store, &vec![0.0; 100]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn layer_output_preserves_shape_and_attention_rows_sum_to_one() {
        let (store, enc) = desk_encoder();
        let mut g = Graph::new();
        let x = g.input(&xavier_uniform_init(12, 64, 3));
        let (out, attn) = enc.layer_forward(&mut g, &store, 1, x).unwrap();
        assert_eq!(g.shape(out), &[12, 64]);
        assert_eq!(attn.len(), 4);
        for a in attn {
            assert_eq!(g.shape(a), &[12, 12]);
            for i in 0..12 {
                let s: f64 = g.value(a)[i * 12..(i + 1) * 12].iter().sum();
                assert!((s - 1.0).abs() <= 1e-12, "row {i} sums to {s}");
            }
        }
    }

    #[test]
    fn layer_index_out_of_range_rejected() {
        let (store, enc) = desk_encoder();
        let mut g = Graph::new();
        let x = g.input(&xavier_uniform_init(4, 64, 3));
        assert!(enc.layer_forward(&mut g, &store, 0, x).is_err());
        assert!(enc.layer_forward(&mut g, &store, 5, x).is_err());
    }

    #[test]
    fn zeroed_sublayers_reduce_to_identity() {
        // with all attention/ffn weights and biases zero, both residual
        // branches contribute nothing
        let (mut store, enc) = desk_encoder();
        for name in [
            "encoder/layer1/attn/q/weight",
            "encoder/layer1/attn/k/weight",
            "encoder/layer1/attn/v/weight",
            "encoder/layer1/attn/o/weight",
            "encoder/layer1/ffn/w1",
            "encoder/layer1/ffn/w2",
        ] {
            let (id, _) = store.by_name(name).unwrap();
            store.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let input = xavier_uniform_init(9, 64, 13);
        let x = g.input(&input);
        let (out, _) = enc.layer_forward(&mut g, &store, 1, x).unwrap();
        for (a, b) in g.value(out).iter().zip(input.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn layer_matches_straight_line_oracle() {
        // independent plain-loop recomputation of the same layer equations
        let (store, enc) = desk_encoder();
        let s_len = 6;
        let d = 64;
        let input = xavier_uniform_init(s_len, d, 77);
        let mut g = Graph::new();
        let x = g.input(&input);
        let (out, _) = enc.layer_forward(&mut g, &store, 2, x).unwrap();

        let get = |name: &str| store.by_name(name).unwrap().1.tensor.data().to_vec();
        let ln = |x: &[f64], gain: &[f64], bias: &[f64], rows: usize, cols: usize| {
            let mut out = vec![0.0; rows * cols];
            for i in 0..rows {
                let row = &x[i * cols..(i + 1) * cols];
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                let inv = 1.0 / (var + LN_EPS).sqrt();
                for j in 0..cols {
                    out[i * cols + j] = (row[j] - mean) * inv * gain[j] + bias[j];
                }
            }
            out
        };
        let mm = |a: &[f64], b: &[f64], m: usize, k: usize, n: usize| {
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a[i * k + p] * b[p * n + j];
                    }
                    out[i * n + j] = acc;
                }
            }
            out
        };
        let addb = |x: &mut [f64], b: &[f64], n: usize| {
            for row in x.chunks_mut(n) {
                for (v, bv) in row.iter_mut().zip(b) {
                    *v += bv;
                }
            }
        };

        let normed = ln(input.data(), &get("encoder/layer2/norm1/gain"), &get("encoder/layer2/norm1/bias"), s_len, d);
        let mut q = mm(&normed, &get("encoder/layer2/attn/q/weight"), s_len, d, d);
        addb(&mut q, &get("encoder/layer2/attn/q/bias"), d);
        let mut k = mm(&normed, &get("encoder/layer2/attn/k/weight"), s_len, d, d);
        addb(&mut k, &get("encoder/layer2/attn/k/bias"), d);
        let mut v = mm(&normed, &get("encoder/layer2/attn/v/weight"), s_len, d, d);
        addb(&mut v, &get("encoder/layer2/attn/v/bias"), d);

        let heads = 4;
        let dh = d / heads;
        let mut ctx = vec![0.0; s_len * d];
        for h in 0..heads {
            for i in 0..s_len {
                // scores for row i against all rows
                let mut row_scores = vec![0.0; s_len];
                for j in 0..s_len {
                    let mut acc = 0.0;
                    for p in 0..dh {
                        acc += q[i * d + h * dh + p] * k[j * d + h * dh + p];
                    }
                    row_scores[j] = acc / (dh as f64).sqrt();
                }
                let mx = row_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row_scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..s_len {
                    let w = exps[j] / z;
                    for p in 0..dh {
                        ctx[i * d + h * dh + p] += w * v[j * d + h * dh + p];
                    }
                }
            }
        }
        let mut attn_out = mm(&ctx, &get("encoder/layer2/attn/o/weight"), s_len, d, d);
        addb(&mut attn_out, &get("encoder/layer2/attn/o/bias"), d);
        let h1: Vec<f64> = input.data().iter().zip(&attn_out).map(|(a, b)| a + b).collect();

        let normed2 = ln(&h1, &get("encoder/layer2/norm2/gain"), &get("encoder/layer2/norm2/bias"), s_len, d);
        let mut hidden = mm(&normed2, &get("encoder/layer2/ffn/w1"), s_len, d, 128);
        addb(&mut hidden, &get("encoder/layer2/ffn/b1"), 128);
        let c = 0.797_884_560_802_865_4f64;
        for v in hidden.iter_mut() {
            *v = 0.5 * *v * (1.0 + (c * (*v + 0.044_715 * *v * *v * *v)).tanh());
        }
        let mut ff = mm(&hidden, &get("encoder/layer2/ffn/w2"), s_len, 128, d);
        addb(&mut ff, &get("encoder/layer2/ffn/b2"), d);
        let expect: Vec<f64> = h1.iter().zip(&ff).map(|(a, b)| a + b).collect();

        let got = g.value(out);
        let max = got.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        assert!(max <= 1e-10, "layer disagrees with oracle by {max}");
    }

    #[test]
    fn transformer_count_matches_enumeration_at_desk_scale() {
        let (store, enc) = desk_encoder();
        let enumerated: usize =
            enc.transformer_param_ids().iter().map(|&id| store.tensor(id).numel()).sum();
        assert_eq!(enumerated, enc.config.transformer_param_count());
        let frontend: usize =
            enc.frontend_param_ids().iter().map(|&id| store.tensor(id).numel()).sum();
        assert_eq!(frontend, enc.config.frontend_param_count());
    }
}
