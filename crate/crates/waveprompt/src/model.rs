//! The assembled detector: encoder, prompt bank, and classifier head over
//! one parameter store, with checkpoint save/load.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::head::{Head, HeadConfig};
use crate::prompting::{
    apply_freezing, forward_assembly, trainable_param_ids, ForwardOutput, Paradigm, PromptBank,
};
use crate::tensor::{
    archive_bytes, derive_seed, parse_archive, read_archive, write_archive, Graph, NodeId,
    ParamId, ParamStore, Tensor,
};

pub struct Detector {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub head: Head,
    pub bank: PromptBank,
    pub paradigm: Paradigm,
    pub seed: u64,
}

/// Full (non-score) inference record for exports and inspection.
pub struct Inference {
    pub score: f64,
    pub logits: [f64; 2],
    pub embedding: Vec<f64>,
    /// Final-layer attention averaged over heads, `seq_len x seq_len`.
    pub attn_mean: Vec<f64>,
    pub seq_len: usize,
    pub layout: crate::prompting::SeqLayout,
}

impl Detector {
    pub fn build(
        paradigm: Paradigm,
        encoder_cfg: EncoderConfig,
        head_cfg: HeadConfig,
        seed: u64,
    ) -> Result<Self> {
        paradigm.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::build(&mut store, encoder_cfg.clone(), derive_seed(seed, 1))?;
        let head = Head::build(&mut store, head_cfg, encoder_cfg.model_dim, derive_seed(seed, 2))?;
        let bank = PromptBank::build(&mut store, paradigm, &encoder_cfg, derive_seed(seed, 3))?;
        apply_freezing(&mut store, &encoder, &head, &bank, paradigm);
        Ok(Detector { store, encoder, head, bank, paradigm, seed })
    }

    /// Conv-front-end tokens for one clip (the cacheable frozen prefix).
    pub fn conv_tokens(&self, wave: &[f64]) -> Result<Vec<f64>> {
        self.encoder.conv_tokens(&self.store, wave)
    }

    /// Tape the full forward from conv tokens: embedding, prompt
    /// assembly, head. Returns (logits, embedding, assembly output).
    pub fn forward_nodes(
        &self,
        g: &mut Graph,
        conv_tokens: &[f64],
    ) -> Result<(NodeId, NodeId, ForwardOutput)> {
        let e0 = self.encoder.embed_tokens(g, &self.store, conv_tokens)?;
        let fwd = forward_assembly(g, &self.store, &self.encoder, &self.bank, self.paradigm, e0, false)?;
        let (logits, embedding) = self.head.forward(g, &self.store, fwd.backend_input)?;
        Ok((logits, embedding, fwd))
    }

    /// Detection score for one clip: logit(real) - logit(fake).
    pub fn score_tokens(&self, conv_tokens: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let (logits, embedding, _) = self.forward_nodes(&mut g, conv_tokens)?;
        let lv = g.value(logits);
        Ok((lv[0] - lv[1], g.value(embedding).to_vec()))
    }

    pub fn score_wave(&self, wave: &[f64]) -> Result<f64> {
        let tokens = self.conv_tokens(wave)?;
        Ok(self.score_tokens(&tokens)?.0)
    }

    /// Full inference with the head-averaged final attention map.
    pub fn infer_wave(&self, wave: &[f64]) -> Result<Inference> {
        let tokens = self.conv_tokens(wave)?;
        let mut g = Graph::new();
        let (logits, embedding, fwd) = self.forward_nodes(&mut g, &tokens)?;
        let s = g.shape(fwd.attn_last[0])[0];
        let heads = fwd.attn_last.len();
        let mut attn_mean = vec![0.0; s * s];
        for &aid in &fwd.attn_last {
            for (acc, v) in attn_mean.iter_mut().zip(g.value(aid)) {
                *acc += v / heads as f64;
            }
        }
        let lv = g.value(logits);
        Ok(Inference {
            score: lv[0] - lv[1],
            logits: [lv[0], lv[1]],
            embedding: g.value(embedding).to_vec(),
            attn_mean,
            seq_len: s,
            layout: fwd.layout,
        })
    }

    /// Parameter ids trainable under this detector's paradigm.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        trainable_param_ids(self.paradigm, &self.encoder, &self.head, &self.bank)
    }

    /// Serialized frozen parameter set, for freeze-contract checks.
    pub fn frozen_archive_bytes(&self) -> Vec<u8> {
        let items: Vec<(&str, &Tensor)> = self
            .store
            .iter()
            .filter(|(_, p)| p.frozen)
            .map(|(_, p)| (p.name.as_str(), &p.tensor))
            .collect();
        archive_bytes(&items)
    }

    /// Serialized full parameter set in store order.
    pub fn weights_archive_bytes(&self) -> Vec<u8> {
        let items: Vec<(&str, &Tensor)> =
            self.store.iter().map(|(_, p)| (p.name.as_str(), &p.tensor)).collect();
        archive_bytes(&items)
    }

    /// Atomically install weights from archive records: every model
    /// parameter must be present with a matching shape, and the archive
    /// must not carry extras.
    pub fn load_weights(&mut self, items: Vec<(String, Tensor)>) -> Result<()> {
        let mut map: HashMap<String, Tensor> = HashMap::new();
        for (name, t) in items {
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::Archive(format!("duplicate tensor {name} in archive")));
            }
        }
        // validate everything before touching any parameter
        for (_, p) in self.store.iter() {
            match map.get(&p.name) {
                None => {
                    return Err(Error::Archive(format!("archive is missing parameter {}", p.name)))
                }
                Some(t) if t.shape() != p.tensor.shape() => {
                    return Err(Error::Archive(format!(
                        "parameter {} has shape {:?} in archive, expected {:?}",
                        p.name,
                        t.shape(),
                        p.tensor.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if map.len() != self.store.len() {
            let known: Vec<&str> =
                map.keys().map(|s| s.as_str()).filter(|n| self.store.by_name(n).is_none()).collect();
            return Err(Error::Archive(format!("archive has unknown tensors: {known:?}")));
        }
        let ids: Vec<ParamId> = self.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let name = self.store.get(id).name.clone();
            *self.store.tensor_mut(id) = map.remove(&name).expect("validated");
        }
        Ok(())
    }

    pub fn load_weight_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.load_weights(parse_archive(bytes)?)
    }
}

/// Sidecar metadata stored next to checkpoint weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub paradigm: Paradigm,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub seed: u64,
    pub config_digest: String,
    pub best_epoch: Option<usize>,
    pub best_dev_eer: Option<f64>,
}

pub const WEIGHTS_FILE: &str = "weights.tensors";
pub const META_FILE: &str = "meta.json";

pub fn save_checkpoint(dir: &Path, detector: &Detector, meta: &CheckpointMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let items: Vec<(&str, &Tensor)> =
        detector.store.iter().map(|(_, p)| (p.name.as_str(), &p.tensor)).collect();
    write_archive(&dir.join(WEIGHTS_FILE), &items)?;
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Config(format!("cannot serialize checkpoint meta: {e}")))?;
    std::fs::write(dir.join(META_FILE), json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Detector, CheckpointMeta)> {
    let meta_text = std::fs::read_to_string(dir.join(META_FILE))
        .map_err(|e| Error::Archive(format!("cannot read {}: {e}", dir.join(META_FILE).display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Archive(format!("bad checkpoint meta: {e}")))?;
    let mut det = Detector::build(meta.paradigm, meta.encoder.clone(), meta.head, meta.seed)?;
    let items = read_archive(&dir.join(WEIGHTS_FILE))?;
    det.load_weights(items)?;
    Ok((det, meta))
}

/// Conv-token cache keyed by clip id. The conv front end is frozen in
/// every paradigm, so entries stay valid for a model's whole lifetime.
#[derive(Default)]
pub struct FeatureCache {
    map: HashMap<String, Vec<f64>>,
}

impl FeatureCache {
    pub fn new() -> Self {
        FeatureCache { map: HashMap::new() }
    }

    pub fn tokens_for(
        &mut self,
        det: &Detector,
        clip_id: &str,
        wave: impl FnOnce() -> Result<Vec<f64>>,
    ) -> Result<&Vec<f64>> {
        if !self.map.contains_key(clip_id) {
            let tokens = det.conv_tokens(&wave()?)?;
            self.map.insert(clip_id.to_string(), tokens);
        }
        Ok(&self.map[clip_id])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::WptMode;

    fn tiny() -> Detector {
        let cfg = EncoderConfig {
            sample_rate: 16_000,
            clip_len: 512,
            model_dim: 16,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 24,
            max_positions: 16,
            frontend: vec![
                crate::encoder::ConvSpec { channels: 8, kernel: 8, stride: 8 },
                crate::encoder::ConvSpec { channels: 16, kernel: 8, stride: 8 },
            ],
        };
        Detector::build(
            Paradigm::Wpt { w: 4, p: 2, mode: WptMode::EveryForward },
            cfg,
            HeadConfig { proj_dim: 8, pool_heads: 2, mlp_dim: 4 },
            42,
        )
        .unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let det = tiny();
        let dir = tempfile::tempdir().unwrap();
        let meta = CheckpointMeta {
            paradigm: det.paradigm,
            encoder: det.encoder.config.clone(),
            head: det.head.config,
            seed: det.seed,
            config_digest: "test".into(),
            best_epoch: Some(3),
            best_dev_eer: Some(0.05),
        };
        save_checkpoint(dir.path(), &det, &meta).unwrap();
        let (loaded, meta2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(meta2.best_epoch, Some(3));
        assert_eq!(det.weights_archive_bytes(), loaded.weights_archive_bytes());
        // scores agree bit for bit
        let wave = vec![0.1; 512];
        assert_eq!(det.score_wave(&wave).unwrap(), loaded.score_wave(&wave).unwrap());
    }

    #[test]
    fn load_weights_missing_parameter_is_named() {
        let mut det = tiny();
        let mut items = parse_archive(&det.weights_archive_bytes()).unwrap();
        let removed = items.remove(3);
        let err = det.load_weights(items).unwrap_err();
        assert!(err.to_string().contains(&removed.0), "{err}");
    }

    #[test]
    fn load_weights_shape_mismatch_rejected_without_partial_load() {
        let mut det = tiny();
        let before = det.weights_archive_bytes();
        let mut items = parse_archive(&before).unwrap();
        // transpose one tensor's dims
        let shape = items[5].1.shape().to_vec();
        let transposed = Tensor::new(
            vec![shape[1], shape[0]],
            items[5].1.data().to_vec(),
        )
        .unwrap();
        let name = items[5].0.clone();
        items[5] = (name.clone(), transposed);
        let err = det.load_weights(items).unwrap_err();
        assert!(err.to_string().contains(&name));
        assert_eq!(det.weights_archive_bytes(), before, "model mutated on failed load");
    }

    #[test]
    fn inference_attention_rows_are_normalized() {
        let det = tiny();
        let inf = det.infer_wave(&vec![0.2; 512]).unwrap();
        let s = inf.seq_len;
        assert_eq!(s, 4 + 2 + 8);
        for i in 0..s {
            let sum: f64 = inf.attn_mean[i * s..(i + 1) * s].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-10);
        }
        assert_eq!(inf.layout.row_label(0), "LL");
        assert_eq!(inf.layout.row_label(4), "prompt");
        assert_eq!(inf.layout.row_label(6), "audio");
    }
}
