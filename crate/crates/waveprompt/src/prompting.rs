//! The seven training paradigms as forward-assembly policies over the
//! frozen encoder.
//!
//! Deep prompting prepends fresh learnable rows at every layer and
//! discards the previous layer's prompt-position outputs by genuine row
//! replacement: each layer's input is rebuilt as `[P_k ; E_{k-1}]`, so
//! the tape never links a layer's prompt outputs to the next layer.
//! Wavelet prompting additionally derives its leading rows from a Haar
//! decomposition of learnable initial tokens.

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::head::Head;
use crate::tensor::{
    derive_seed, xavier_uniform_init, Graph, NodeId, ParamId, ParamStore, Tensor,
};
use crate::wavelet::{band_of_row, build_wavelet_prompt, wavelet_prompt_node, Band};

/// When the Haar transform constraint applies to wavelet tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WptMode {
    /// Recompute the wavelet prompt from the initial tokens on every
    /// forward pass; gradients reach the initial tokens through the
    /// transform and band semantics persist throughout training.
    EveryForward,
    /// Materialize the wavelet prompt once at initialization; the
    /// transformed rows are themselves the trainable tensors thereafter.
    AtInit,
}

/// Training paradigm: what is trainable and how layer inputs assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Paradigm {
    /// Frozen encoder, head only.
    Fr,
    /// Fine-tune the transformer side (front-end convs stay frozen).
    Ft,
    /// Deep prompt tuning: `[P_k ; E_{k-1}]` at every layer.
    Pt { p: usize },
    /// Deep prompting with wavelet rows: `[W_k ; P_k ; E_{k-1}]`.
    Wpt { w: usize, p: usize, mode: WptMode },
    /// Prompts only at layer 1; prompt-position outputs propagate.
    ShallowPt { p: usize },
    /// Prompts appended after the audio rows: `[E_{k-1} ; P_k]`.
    AfterPt { p: usize },
    /// As deep PT, but the classifier sees only the audio rows.
    DelPt { p: usize },
}

impl Paradigm {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Paradigm::Fr | Paradigm::Ft => Ok(()),
            Paradigm::Pt { p }
            | Paradigm::ShallowPt { p }
            | Paradigm::AfterPt { p }
            | Paradigm::DelPt { p } => {
                if p == 0 {
                    Err(Error::Config("prompt paradigms need p >= 1".into()))
                } else {
                    Ok(())
                }
            }
            Paradigm::Wpt { w, p, .. } => {
                if w % 4 != 0 {
                    Err(Error::Config(format!("wavelet token count must be divisible by 4, got {w}")))
                } else if w + p == 0 {
                    Err(Error::Config("wavelet prompting needs w + p >= 1".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Paradigm::Fr => "FR",
            Paradigm::Ft => "FT",
            Paradigm::Pt { .. } => "PT",
            Paradigm::Wpt { .. } => "WPT",
            Paradigm::ShallowPt { .. } => "Shallow-PT",
            Paradigm::AfterPt { .. } => "After-PT",
            Paradigm::DelPt { .. } => "Del-PT",
        }
    }

    pub fn prompt_tokens(&self) -> usize {
        match *self {
            Paradigm::Pt { p }
            | Paradigm::Wpt { p, .. }
            | Paradigm::ShallowPt { p }
            | Paradigm::AfterPt { p }
            | Paradigm::DelPt { p } => p,
            _ => 0,
        }
    }

    pub fn wavelet_tokens(&self) -> usize {
        match *self {
            Paradigm::Wpt { w, .. } => w,
            _ => 0,
        }
    }

    /// Sequence length flowing through the encoder layers.
    pub fn seq_len(&self, t: usize) -> usize {
        t + self.prompt_tokens() + self.wavelet_tokens()
    }

    /// Rows of the backend input I.
    pub fn backend_input_len(&self, t: usize) -> usize {
        match self {
            Paradigm::Fr | Paradigm::Ft | Paradigm::DelPt { .. } => t,
            _ => self.seq_len(t),
        }
    }

    /// Whether the encoder's transformer side is trainable.
    pub fn trains_encoder(&self) -> bool {
        matches!(self, Paradigm::Ft)
    }
}

/// Per-layer learnable prompt matrices, plus wavelet initial tokens for
/// the wavelet paradigm. Always trainable; never frozen.
pub struct PromptBank {
    prompts: Vec<ParamId>,
    wavelet: Vec<ParamId>,
    mode: Option<WptMode>,
}

impl PromptBank {
    pub fn build(
        store: &mut ParamStore,
        paradigm: Paradigm,
        config: &EncoderConfig,
        seed: u64,
    ) -> Result<Self> {
        paradigm.validate()?;
        let d = config.model_dim;
        let l = config.num_layers;
        let mut prompts = Vec::new();
        let mut wavelet = Vec::new();
        let mut mode = None;
        let prompt_layers = match paradigm {
            Paradigm::ShallowPt { .. } => 1,
            Paradigm::Pt { .. } | Paradigm::AfterPt { .. } | Paradigm::DelPt { .. } | Paradigm::Wpt { .. } => l,
            Paradigm::Fr | Paradigm::Ft => 0,
        };
        let p = paradigm.prompt_tokens();
        for k in 1..=prompt_layers {
            if p > 0 {
                let t = xavier_uniform_init(p, d, derive_seed(seed, 1000 + k as u64));
                prompts.push(store.add(format!("prompt/layer{k}"), t)?);
            }
        }
        if let Paradigm::Wpt { w, mode: m, .. } = paradigm {
            mode = Some(m);
            if w > 0 {
                for k in 1..=l {
                    let init = xavier_uniform_init(w, d, derive_seed(seed, 2000 + k as u64));
                    let value = match m {
                        WptMode::EveryForward => init,
                        WptMode::AtInit => build_wavelet_prompt(&init)?.tokens,
                    };
                    wavelet.push(store.add(format!("wavelet_init/layer{k}"), value)?);
                }
            }
        }
        Ok(PromptBank { prompts, wavelet, mode })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.prompts.clone();
        ids.extend(self.wavelet.iter().copied());
        ids
    }

    pub fn prompt_id(&self, layer: usize) -> Option<ParamId> {
        self.prompts.get(layer - 1).copied()
    }

    pub fn wavelet_id(&self, layer: usize) -> Option<ParamId> {
        self.wavelet.get(layer - 1).copied()
    }
}

/// Row legend of the sequence flowing through the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqLayout {
    pub wavelet_rows: usize,
    pub prompt_rows: usize,
    pub audio_rows: usize,
    /// After-PT places prompts behind the audio rows.
    pub prompts_after_audio: bool,
    pub band_of_row: Vec<Band>,
}

impl SeqLayout {
    pub fn total(&self) -> usize {
        self.wavelet_rows + self.prompt_rows + self.audio_rows
    }

    pub fn row_label(&self, i: usize) -> String {
        if self.prompts_after_audio {
            if i < self.audio_rows {
                return "audio".into();
            }
            return "prompt".into();
        }
        if i < self.wavelet_rows {
            return self.band_of_row[i].label().into();
        }
        if i < self.wavelet_rows + self.prompt_rows {
            return "prompt".into();
        }
        "audio".into()
    }
}

/// Result of assembling the encoder under a paradigm: the backend input
/// `I`, the final layer's per-head attention maps, and the row legend.
pub struct ForwardOutput {
    pub backend_input: NodeId,
    pub attn_last: Vec<NodeId>,
    pub layout: SeqLayout,
}

fn zeros_node(g: &mut Graph, rows: usize, cols: usize) -> NodeId {
    g.input_from(vec![rows, cols], vec![0.0; rows * cols])
}

/// Assemble the full encoder pass for a paradigm.
///
/// `zero_discarded` explicitly zeroes the prompt-position rows of every
/// intermediate layer output before the next layer's audio rows are
/// sliced out; under replacement semantics this must not change the
/// backend input by a single bit, and the acceptance suite checks it.
pub fn forward_assembly(
    g: &mut Graph,
    store: &ParamStore,
    encoder: &Encoder,
    bank: &PromptBank,
    paradigm: Paradigm,
    e0: NodeId,
    zero_discarded: bool,
) -> Result<ForwardOutput> {
    paradigm.validate()?;
    let t = g.shape(e0)[0];
    let d = g.shape(e0)[1];
    let l = encoder.num_layers();
    let p = paradigm.prompt_tokens();
    let w = paradigm.wavelet_tokens();

    let layout = SeqLayout {
        wavelet_rows: w,
        prompt_rows: p,
        audio_rows: t,
        prompts_after_audio: matches!(paradigm, Paradigm::AfterPt { .. }),
        band_of_row: if w > 0 { band_of_row(w) } else { Vec::new() },
    };

    let mut attn_last = Vec::new();
    let backend_input = match paradigm {
        Paradigm::Fr | Paradigm::Ft => {
            let mut x = e0;
            for k in 1..=l {
                let (out, attn) = encoder.layer_forward(g, store, k, x)?;
                x = out;
                attn_last = attn;
            }
            encoder.final_norm(g, store, x)?
        }
        Paradigm::ShallowPt { .. } => {
            let p1 = g.param_of(
                store,
                bank.prompt_id(1).ok_or_else(|| {
                    Error::Contract("shallow prompting needs a layer-1 prompt".into())
                })?,
            );
            let mut x = g.concat_rows(&[p1, e0])?;
            for k in 1..=l {
                let (out, attn) = encoder.layer_forward(g, store, k, x)?;
                x = out;
                attn_last = attn;
            }
            encoder.final_norm(g, store, x)?
        }
        Paradigm::Pt { .. } | Paradigm::AfterPt { .. } | Paradigm::DelPt { .. } | Paradigm::Wpt { .. } => {
            let after = matches!(paradigm, Paradigm::AfterPt { .. });
            let mut audio = e0;
            let mut final_out = None;
            for k in 1..=l {
                let mut parts: Vec<NodeId> = Vec::with_capacity(3);
                if let Paradigm::Wpt { w, .. } = paradigm {
                    if w > 0 {
                        let wid = bank.wavelet_id(k).ok_or_else(|| {
                            Error::Contract(format!("missing wavelet tokens for layer {k}"))
                        })?;
                        let node = g.param_of(store, wid);
                        let wp = match bank.mode {
                            Some(WptMode::EveryForward) => wavelet_prompt_node(g, node)?,
                            _ => node,
                        };
                        parts.push(wp);
                    }
                }
                if p > 0 {
                    let pid = bank.prompt_id(k).ok_or_else(|| {
                        Error::Contract(format!("missing prompt tokens for layer {k}"))
                    })?;
                    parts.push(g.param_of(store, pid));
                }
                let input = if after {
                    let mut v = vec![audio];
                    v.extend(parts);
                    g.concat_rows(&v)?
                } else {
                    parts.push(audio);
                    g.concat_rows(&parts)?
                };
                let (out, attn) = encoder.layer_forward(g, store, k, input)?;
                attn_last = attn;
                if k == l {
                    final_out = Some(out);
                } else {
                    let non_audio = w + p;
                    let source = if zero_discarded {
                        // rebuild the layer output with zeroed prompt rows,
                        // then slice audio from the rebuilt matrix
                        if after {
                            let a = g.slice_rows(out, 0, t)?;
                            let z = zeros_node(g, non_audio, d);
                            g.concat_rows(&[a, z])?
                        } else {
                            let z = zeros_node(g, non_audio, d);
                            let a = g.slice_rows(out, non_audio, t)?;
                            g.concat_rows(&[z, a])?
                        }
                    } else {
                        out
                    };
                    audio = if after {
                        g.slice_rows(source, 0, t)?
                    } else {
                        g.slice_rows(source, non_audio, t)?
                    };
                }
            }
            let out = final_out.expect("at least one layer");
            let normed = encoder.final_norm(g, store, out)?;
            if matches!(paradigm, Paradigm::DelPt { .. }) {
                g.slice_rows(normed, w + p, t)?
            } else {
                normed
            }
        }
    };
    Ok(ForwardOutput { backend_input, attn_last, layout })
}

/// Parameter ids trainable under a paradigm, in store order.
pub fn trainable_param_ids(
    paradigm: Paradigm,
    encoder: &Encoder,
    head: &Head,
    bank: &PromptBank,
) -> Vec<ParamId> {
    let mut ids = head.param_ids();
    match paradigm {
        Paradigm::Fr => {}
        Paradigm::Ft => ids.extend(encoder.transformer_param_ids()),
        _ => ids.extend(bank.param_ids()),
    }
    ids.sort_by_key(|id| id.index());
    ids
}

/// Freeze flags for a paradigm: convs always frozen, the transformer side
/// frozen except under fine-tuning, head and prompt bank always live.
pub fn apply_freezing(
    store: &mut ParamStore,
    encoder: &Encoder,
    head: &Head,
    bank: &PromptBank,
    paradigm: Paradigm,
) {
    for id in encoder.frontend_param_ids() {
        store.set_frozen(id, true);
    }
    let freeze_transformer = !paradigm.trains_encoder();
    for id in encoder.transformer_param_ids() {
        store.set_frozen(id, freeze_transformer);
    }
    for id in head.param_ids() {
        store.set_frozen(id, false);
    }
    for id in bank.param_ids() {
        store.set_frozen(id, false);
    }
}

/// Closed-form trainable parameter count.
pub fn count_trainable_params(
    paradigm: Paradigm,
    config: &EncoderConfig,
    head_params: usize,
) -> usize {
    let d = config.model_dim;
    let l = config.num_layers;
    match paradigm {
        Paradigm::Fr => head_params,
        Paradigm::Ft => head_params + config.transformer_param_count(),
        Paradigm::Pt { p } | Paradigm::AfterPt { p } | Paradigm::DelPt { p } => {
            head_params + p * d * l
        }
        Paradigm::ShallowPt { p } => head_params + p * d,
        Paradigm::Wpt { w, p, .. } => head_params + (w + p) * d * l,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::HeadConfig;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            sample_rate: 16_000,
            clip_len: 512,
            model_dim: 16,
            num_layers: 3,
            num_heads: 2,
            ffn_dim: 24,
            max_positions: 16,
            frontend: vec![
                crate::encoder::ConvSpec { channels: 8, kernel: 8, stride: 8 },
                crate::encoder::ConvSpec { channels: 16, kernel: 8, stride: 8 },
            ],
        }
    }

    struct Rig {
        store: ParamStore,
        encoder: Encoder,
        head: Head,
        bank: PromptBank,
        paradigm: Paradigm,
    }

    fn rig(paradigm: Paradigm) -> Rig {
        let mut store = ParamStore::new();
        let encoder = Encoder::build(&mut store, tiny_config(), 5).unwrap();
        let head = Head::build(&mut store, HeadConfig { proj_dim: 8, pool_heads: 2, mlp_dim: 4 }, 16, 6).unwrap();
        let bank = PromptBank::build(&mut store, paradigm, &tiny_config(), 7).unwrap();
        apply_freezing(&mut store, &encoder, &head, &bank, paradigm);
        Rig { store, encoder, head, bank, paradigm }
    }

    fn run(r: &Rig, zero_discarded: bool) -> (Vec<f64>, SeqLayout) {
        let mut g = Graph::new();
        let wave = vec![0.25; 512];
        let e0 = r.encoder.extract_features(&mut g, &r.store, &wave).unwrap();
        let out = forward_assembly(
            &mut g,
            &r.store,
            &r.encoder,
            &r.bank,
            r.paradigm,
            e0,
            zero_discarded,
        )
        .unwrap();
        (g.value(out.backend_input).to_vec(), out.layout)
    }

    #[test]
    fn sequence_length_law() {
        let t = tiny_config().token_count().unwrap();
        assert_eq!(t, 8);
        let cases: Vec<(Paradigm, usize)> = vec![
            (Paradigm::Fr, t),
            (Paradigm::Ft, t),
            (Paradigm::Pt { p: 3 }, 3 + t),
            (Paradigm::ShallowPt { p: 3 }, 3 + t),
            (Paradigm::AfterPt { p: 3 }, 3 + t),
            (Paradigm::DelPt { p: 3 }, t),
            (Paradigm::Wpt { w: 4, p: 2, mode: WptMode::EveryForward }, 4 + 2 + t),
        ];
        for (paradigm, expect) in cases {
            let r = rig(paradigm);
            let (data, layout) = run(&r, false);
            assert_eq!(data.len() / 16, expect, "{}", paradigm.name());
            assert_eq!(paradigm.backend_input_len(t), expect);
            let _ = layout;
        }
    }

    #[test]
    fn replacement_law_zeroing_discarded_rows_is_invisible() {
        for paradigm in [
            Paradigm::Pt { p: 2 },
            Paradigm::AfterPt { p: 2 },
            Paradigm::DelPt { p: 2 },
            Paradigm::Wpt { w: 4, p: 2, mode: WptMode::EveryForward },
        ] {
            let r = rig(paradigm);
            let (plain, _) = run(&r, false);
            let (zeroed, _) = run(&r, true);
            assert_eq!(plain, zeroed, "{} leaks discarded rows", paradigm.name());
        }
    }

    #[test]
    fn shallow_prompt_propagates_and_has_single_prompt() {
        let r = rig(Paradigm::ShallowPt { p: 3 });
        assert_eq!(r.bank.param_ids().len(), 1);
        // perturbing P_1 must change the backend input
        let (before, _) = run(&r, false);
        let mut r2 = r;
        let pid = r2.bank.prompt_id(1).unwrap();
        r2.store.tensor_mut(pid).data_mut()[0] += 0.5;
        let (after, _) = run(&r2, false);
        assert_ne!(before, after);
    }

    #[test]
    fn trainable_selection_matches_closed_form() {
        let cfg = tiny_config();
        let head_params = HeadConfig { proj_dim: 8, pool_heads: 2, mlp_dim: 4 }.param_count(16);
        for paradigm in [
            Paradigm::Fr,
            Paradigm::Ft,
            Paradigm::Pt { p: 3 },
            Paradigm::ShallowPt { p: 3 },
            Paradigm::AfterPt { p: 2 },
            Paradigm::DelPt { p: 2 },
            Paradigm::Wpt { w: 4, p: 2, mode: WptMode::EveryForward },
            Paradigm::Wpt { w: 4, p: 2, mode: WptMode::AtInit },
        ] {
            let r = rig(paradigm);
            let enumerated: usize = trainable_param_ids(paradigm, &r.encoder, &r.head, &r.bank)
                .iter()
                .map(|&id| r.store.tensor(id).numel())
                .sum();
            assert_eq!(
                enumerated,
                count_trainable_params(paradigm, &cfg, head_params),
                "{}",
                paradigm.name()
            );
            // and the freeze flags agree with the selection
            let flagged = r.store.trainable_count();
            assert_eq!(flagged, enumerated, "{} freeze flags", paradigm.name());
        }
    }

    #[test]
    fn fr_excludes_every_encoder_parameter() {
        let r = rig(Paradigm::Fr);
        let ids = trainable_param_ids(Paradigm::Fr, &r.encoder, &r.head, &r.bank);
        for id in ids {
            assert!(r.store.get(id).name.starts_with("head/"));
        }
    }

    #[test]
    fn pt_bank_enumeration() {
        let r = rig(Paradigm::Pt { p: 3 });
        let bank_ids = r.bank.param_ids();
        assert_eq!(bank_ids.len(), 3); // one per layer
        for (k, id) in bank_ids.iter().enumerate() {
            assert_eq!(r.store.get(*id).name, format!("prompt/layer{}", k + 1));
            assert_eq!(r.store.tensor(*id).shape(), &[3, 16]);
        }
    }

    #[test]
    fn full_scale_parameter_table() {
        let cfg = EncoderConfig::full_scale();
        let head = HeadConfig::full_scale().param_count(cfg.model_dim);
        // prompt contributions are exact
        let contributions: Vec<usize> = [2usize, 10, 20, 100, 200]
            .iter()
            .map(|&p| count_trainable_params(Paradigm::Pt { p }, &cfg, head) - head)
            .collect();
        assert_eq!(contributions, vec![49_152, 245_760, 491_520, 2_457_600, 4_915_200]);
        // totals within 0.02M of the reference table
        let expected_m = [0.50f64, 0.69, 0.94, 2.90, 5.36];
        for (&p, &em) in [2usize, 10, 20, 100, 200].iter().zip(&expected_m) {
            let total = count_trainable_params(Paradigm::Pt { p }, &cfg, head) as f64 / 1e6;
            assert!((total - em).abs() <= 0.02, "p={p}: {total}M vs {em}M");
        }
        // wavelet split does not change the budget
        let wpt = count_trainable_params(
            Paradigm::Wpt { w: 4, p: 6, mode: WptMode::EveryForward },
            &cfg,
            head,
        );
        let pt10 = count_trainable_params(Paradigm::Pt { p: 10 }, &cfg, head);
        assert_eq!(wpt, pt10);
        // fine-tuning needs at least 450x the prompt budget
        let ft = count_trainable_params(Paradigm::Ft, &cfg, head);
        let ratio = ft as f64 / pt10 as f64;
        assert!(ratio >= 450.0, "FT/PT ratio {ratio}");
    }

    #[test]
    fn wavelet_band_semantics_with_constant_init() {
        let cfg = tiny_config();
        let mut store = ParamStore::new();
        let encoder = Encoder::build(&mut store, cfg.clone(), 5).unwrap();
        let head = Head::build(&mut store, HeadConfig { proj_dim: 8, pool_heads: 2, mlp_dim: 4 }, 16, 6).unwrap();
        let paradigm = Paradigm::Wpt { w: 4, p: 0, mode: WptMode::EveryForward };
        let bank = PromptBank::build(&mut store, paradigm, &cfg, 7).unwrap();
        apply_freezing(&mut store, &encoder, &head, &bank, paradigm);
        for k in 1..=cfg.num_layers {
            let id = bank.wavelet_id(k).unwrap();
            store.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.3);
        }
        // rows 1..3 of the materialized wavelet prompt are zero pre-update
        let mut g = Graph::new();
        let tid = bank.wavelet_id(1).unwrap();
        let node = g.param_of(&store, tid);
        let wp = wavelet_prompt_node(&mut g, node).unwrap();
        let v = g.value(wp);
        assert!(v[..16].iter().any(|x| x.abs() > 0.1));
        assert!(v[16..].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn invalid_paradigms_rejected() {
        assert!(Paradigm::Pt { p: 0 }.validate().is_err());
        assert!(Paradigm::Wpt { w: 6, p: 1, mode: WptMode::EveryForward }.validate().is_err());
        assert!(Paradigm::Wpt { w: 0, p: 0, mode: WptMode::EveryForward }.validate().is_err());
        assert!(Paradigm::Wpt { w: 0, p: 2, mode: WptMode::EveryForward }.validate().is_ok());
    }
}
