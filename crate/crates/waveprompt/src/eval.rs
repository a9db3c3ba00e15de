//! Scoring, equal-error-rate computation, cross-type result matrices,
//! parameter reports, and interpretability exports.
//!
//! The EER convention: sweep thresholds at midpoints between adjacent
//! distinct scores plus the two infinities; at each threshold
//! FAR = fraction of fakes scoring >= threshold and FRR = fraction of
//! reals scoring < threshold; report (FAR + FRR) / 2 at the threshold
//! minimizing |FAR - FRR|, breaking ties toward the smaller FAR + FRR.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AudioType, Label, ManifestEntry};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::head::HeadConfig;
use crate::model::{Detector, FeatureCache};
use crate::prompting::{count_trainable_params, Paradigm};
use crate::tensor::derive_seed;

/// One scored clip. Higher scores mean "more real".
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub score: f64,
    pub label: Label,
    pub audio_type: AudioType,
}

/// Equal error rate over scored clips, as a fraction in [0, 1].
pub fn compute_eer(records: &[ScoreRecord]) -> Result<f64> {
    let n_real = records.iter().filter(|r| r.label == Label::Real).count();
    let n_fake = records.len() - n_real;
    if n_real == 0 || n_fake == 0 {
        return Err(Error::Contract(format!(
            "EER needs both classes, got {n_real} real / {n_fake} fake"
        )));
    }
    if records.iter().any(|r| !r.score.is_finite()) {
        return Err(Error::Numeric("non-finite score in EER input".into()));
    }
    let mut sorted: Vec<(f64, Label)> = records.iter().map(|r| (r.score, r.label)).collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));

    let nr = n_real as f64;
    let nf = n_fake as f64;
    let mut reals_below = 0usize;
    let mut fakes_below = 0usize;

    let mut best_diff = f64::INFINITY;
    let mut best_sum = f64::INFINITY;
    let mut best_eer = 0.5;
    let mut consider = |reals_below: usize, fakes_below: usize| {
        let far = (n_fake - fakes_below) as f64 / nf;
        let frr = reals_below as f64 / nr;
        let diff = (far - frr).abs();
        let sum = far + frr;
        if diff < best_diff || (diff == best_diff && sum < best_sum) {
            best_diff = diff;
            best_sum = sum;
            best_eer = sum / 2.0;
        }
    };

    // threshold below every score
    consider(0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            match sorted[i].1 {
                Label::Real => reals_below += 1,
                Label::Fake => fakes_below += 1,
            }
            i += 1;
        }
        // threshold between this group and the next (or above every score)
        consider(reals_below, fakes_below);
    }
    Ok(best_eer)
}

/// Score every entry of a manifest slice. Clip audio resolves relative to
/// `manifest_dir`; conv tokens go through the cache when one is supplied.
pub fn score_entries(
    det: &Detector,
    entries: &[ManifestEntry],
    manifest_dir: &Path,
    mut cache: Option<&mut FeatureCache>,
) -> Result<Vec<ScoreRecord>> {
    let clip_len = det.encoder.config.clip_len;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let score = match cache.as_deref_mut() {
            Some(c) => {
                let tokens = c.tokens_for(det, &e.clip_id, || {
                    crate::data::load_clip(manifest_dir, e, clip_len)
                })?;
                det.score_tokens(tokens)?.0
            }
            None => {
                let wave = crate::data::load_clip(manifest_dir, e, clip_len)?;
                det.score_wave(&wave)?
            }
        };
        out.push(ScoreRecord {
            clip_id: e.clip_id.clone(),
            score,
            label: e.label,
            audio_type: e.audio_type,
        });
    }
    Ok(out)
}

const SCORE_HEADER: &str = "clip_id\tscore\tlabel\taudio_type";

/// Persist scores as TSV. Scores print in shortest round-trip form, so
/// re-reading reproduces the exact f64 values.
pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(SCORE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.clip_id, r.score, r.label, r.audio_type));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SCORE_HEADER => {}
        other => return Err(Error::Manifest(format!("bad score header {other:?}"))),
    }
    let mut records = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::Manifest(format!("bad score row {line:?}")));
        }
        records.push(ScoreRecord {
            clip_id: f[0].to_string(),
            score: f[1]
                .parse()
                .map_err(|e| Error::Manifest(format!("bad score value {:?}: {e}", f[1])))?,
            label: f[2].parse()?,
            audio_type: f[3].parse()?,
        });
    }
    Ok(records)
}

/// One row of a cross-type result matrix: EER per eval type plus the mean.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixRow {
    pub train_condition: String,
    pub cells: Vec<(AudioTypeName, f64)>,
    pub avg: f64,
}

/// Serializable audio type name (keeps matrix JSON readable).
pub type AudioTypeName = String;

impl MatrixRow {
    pub fn from_eers(train_condition: impl Into<String>, eers: &[(AudioType, f64)]) -> Self {
        let avg = eers.iter().map(|(_, e)| e).sum::<f64>() / eers.len() as f64;
        MatrixRow {
            train_condition: train_condition.into(),
            cells: eers.iter().map(|(t, e)| (t.as_str().to_string(), *e)).collect(),
            avg,
        }
    }

    pub fn eer_for(&self, t: AudioType) -> Option<f64> {
        self.cells.iter().find(|(n, _)| n == t.as_str()).map(|(_, e)| *e)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ResultMatrix {
    pub rows: Vec<MatrixRow>,
}

impl ResultMatrix {
    /// Aligned text table with EER in percent, mirroring the benchmark's
    /// result layout.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .rows
            .iter()
            .map(|r| r.train_condition.len())
            .chain(std::iter::once("Train".len()))
            .max()
            .unwrap_or(5);
        out.push_str(&format!("{:<name_w$} |", "Train"));
        for t in AudioType::ALL {
            out.push_str(&format!(" {:>8}", t.as_str()));
        }
        out.push_str(&format!(" | {:>8}\n", "AVG"));
        out.push_str(&"-".repeat(name_w + 3 + 9 * 4 + 11));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:<name_w$} |", row.train_condition));
            for t in AudioType::ALL {
                match row.eer_for(t) {
                    Some(e) => out.push_str(&format!(" {:>8.2}", e * 100.0)),
                    None => out.push_str(&format!(" {:>8}", "-")),
                }
            }
            out.push_str(&format!(" | {:>8.2}\n", row.avg * 100.0));
        }
        out
    }
}

/// Per-type EER metrics document written next to score files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub train_condition: String,
    pub per_type_eer: BTreeMap<String, f64>,
    pub avg_eer: f64,
    pub config_digest: String,
    pub seed: u64,
}

/// Evaluate a detector on the four per-type eval manifests; returns the
/// matrix row and the per-type score records (persist these before
/// computing metrics).
pub fn cross_type_eval(
    det: &Detector,
    per_type_entries: &[(AudioType, Vec<ManifestEntry>)],
    manifest_dir: &Path,
    train_condition: &str,
) -> Result<(MatrixRow, Vec<(AudioType, Vec<ScoreRecord>)>)> {
    let mut eers = Vec::new();
    let mut all_scores = Vec::new();
    for (t, entries) in per_type_entries {
        if entries.is_empty() {
            return Err(Error::Contract(format!("empty eval manifest for {t}")));
        }
        let records = score_entries(det, entries, manifest_dir, None)?;
        let eer = compute_eer(&records)?;
        eers.push((*t, eer));
        all_scores.push((*t, records));
    }
    Ok((MatrixRow::from_eers(train_condition, &eers), all_scores))
}

/// Write the final-layer attention map (averaged over heads) with a row
/// legend mapping indices to wavelet bands, prompts, and audio frames.
pub fn export_attention(
    det: &Detector,
    wave: &[f64],
    config_digest: &str,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let inf = det.infer_wave(wave)?;
    let s = inf.seq_len;
    let labels: Vec<String> = (0..s).map(|i| inf.layout.row_label(i)).collect();
    let mut out = String::new();
    out.push_str("# waveprompt attention export\n");
    out.push_str(&format!("# config_digest: {config_digest}\n"));
    out.push_str(&format!("# seed: {seed}\n"));
    out.push_str(&format!("# seq_len: {s}\n"));
    out.push_str(&format!(
        "# layout: wavelet={} prompt={} audio={} prompts_after_audio={}\n",
        inf.layout.wavelet_rows,
        inf.layout.prompt_rows,
        inf.layout.audio_rows,
        inf.layout.prompts_after_audio
    ));
    out.push_str(&format!("# labels: {}\n", labels.join("\t")));
    for i in 0..s {
        let row: Vec<String> =
            inf.attn_mean[i * s..(i + 1) * s].iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Export up to `n_per_cell` penultimate-layer embeddings per
/// (type, label) cell, sampled deterministically under `seed`.
pub fn export_embeddings(
    det: &Detector,
    entries: &[ManifestEntry],
    manifest_dir: &Path,
    n_per_cell: usize,
    seed: u64,
    config_digest: &str,
    path: &Path,
) -> Result<usize> {
    let clip_len = det.encoder.config.clip_len;
    let mut out = String::new();
    out.push_str("# waveprompt embedding export\n");
    out.push_str(&format!("# config_digest: {config_digest}\n"));
    out.push_str(&format!("# seed: {seed}\n"));
    out.push_str(&format!("# n_per_cell: {n_per_cell}\n"));
    let dim = det.head.config.mlp_dim;
    let cols: Vec<String> = (0..dim).map(|i| format!("e{i}")).collect();
    out.push_str(&format!("clip_id\taudio_type\tlabel\t{}\n", cols.join("\t")));

    let mut rows = 0;
    for (cell_idx, (t, label)) in AudioType::ALL
        .iter()
        .flat_map(|t| [(*t, Label::Real), (*t, Label::Fake)])
        .enumerate()
    {
        let mut cell: Vec<&ManifestEntry> =
            entries.iter().filter(|e| e.audio_type == t && e.label == label).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, cell_idx as u64));
        cell.shuffle(&mut rng);
        for e in cell.into_iter().take(n_per_cell) {
            let wave = crate::data::load_clip(manifest_dir, e, clip_len)?;
            let tokens = det.conv_tokens(&wave)?;
            let (_, embedding) = det.score_tokens(&tokens)?;
            let values: Vec<String> = embedding.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.clip_id, t, label, values.join("\t")));
            rows += 1;
        }
    }
    std::fs::write(path, out)?;
    Ok(rows)
}

/// Trainable/frozen split for one component group.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct GroupCount {
    pub trainable: usize,
    pub frozen: usize,
}

/// Parameter accounting for a paradigm at a given geometry, with the
/// fine-tuning baseline ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamReport {
    pub paradigm: String,
    pub frontend: GroupCount,
    pub transformer: GroupCount,
    pub head: GroupCount,
    pub prompts: GroupCount,
    pub trainable_total: usize,
    pub frozen_total: usize,
    pub total: usize,
    pub ft_trainable_total: usize,
    pub ft_over_trainable: f64,
}

/// Closed-form parameter report from configuration alone.
pub fn param_report(
    paradigm: Paradigm,
    enc: &EncoderConfig,
    head: &HeadConfig,
) -> ParamReport {
    let head_n = head.param_count(enc.model_dim);
    let frontend_n = enc.frontend_param_count();
    let transformer_n = enc.transformer_param_count();
    let trainable_total = count_trainable_params(paradigm, enc, head_n);
    let prompt_n = trainable_total
        - head_n
        - if paradigm.trains_encoder() { transformer_n } else { 0 };
    let ft_total = count_trainable_params(Paradigm::Ft, enc, head_n);
    let transformer_trainable = if paradigm.trains_encoder() { transformer_n } else { 0 };
    ParamReport {
        paradigm: paradigm.name().to_string(),
        frontend: GroupCount { trainable: 0, frozen: frontend_n },
        transformer: GroupCount {
            trainable: transformer_trainable,
            frozen: transformer_n - transformer_trainable,
        },
        head: GroupCount { trainable: head_n, frozen: 0 },
        prompts: GroupCount { trainable: prompt_n, frozen: 0 },
        trainable_total,
        frozen_total: frontend_n + (transformer_n - transformer_trainable),
        total: frontend_n + transformer_n + head_n + prompt_n,
        ft_trainable_total: ft_total,
        ft_over_trainable: ft_total as f64 / trainable_total as f64,
    }
}

/// The same report enumerated from a live model's store; must agree with
/// [`param_report`] for every paradigm and config.
pub fn param_report_of(det: &Detector) -> ParamReport {
    let mut report = param_report(det.paradigm, &det.encoder.config, &det.head.config);
    let mut groups: BTreeMap<&str, GroupCount> = BTreeMap::new();
    for (_, p) in det.store.iter() {
        let key = if p.name.starts_with("encoder/frontend/") {
            "frontend"
        } else if p.name.starts_with("encoder/") {
            "transformer"
        } else if p.name.starts_with("head/") {
            "head"
        } else {
            "prompts"
        };
        let slot = groups.entry(key).or_insert(GroupCount { trainable: 0, frozen: 0 });
        if p.frozen {
            slot.frozen += p.tensor.numel();
        } else {
            slot.trainable += p.tensor.numel();
        }
    }
    let zero = GroupCount { trainable: 0, frozen: 0 };
    report.frontend = *groups.get("frontend").unwrap_or(&zero);
    report.transformer = *groups.get("transformer").unwrap_or(&zero);
    report.head = *groups.get("head").unwrap_or(&zero);
    report.prompts = *groups.get("prompts").unwrap_or(&zero);
    report.trainable_total = det.store.trainable_count();
    report.frozen_total = det.store.frozen_count();
    report.total = report.trainable_total + report.frozen_total;
    report.ft_over_trainable = report.ft_trainable_total as f64 / report.trainable_total as f64;
    report
}

impl std::fmt::Display for ParamReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "parameter report [{}]", self.paradigm)?;
        writeln!(f, "  {:<12} {:>12} {:>12}", "component", "trainable", "frozen")?;
        for (name, g) in [
            ("frontend", self.frontend),
            ("transformer", self.transformer),
            ("head", self.head),
            ("prompts", self.prompts),
        ] {
            writeln!(f, "  {:<12} {:>12} {:>12}", name, g.trainable, g.frozen)?;
        }
        writeln!(f, "  {:<12} {:>12} {:>12}", "total", self.trainable_total, self.frozen_total)?;
        writeln!(
            f,
            "  fine-tuning baseline: {} trainable ({:.1}x this paradigm)",
            self.ft_trainable_total, self.ft_over_trainable
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(score: f64, label: Label) -> ScoreRecord {
        ScoreRecord { clip_id: format!("c{score}"), score, label, audio_type: AudioType::Speech }
    }

    #[test]
    fn perfect_separation_gives_zero() {
        let records = vec![
            rec(0.9, Label::Real),
            rec(0.8, Label::Real),
            rec(0.1, Label::Fake),
            rec(0.2, Label::Fake),
        ];
        assert_eq!(compute_eer(&records).unwrap(), 0.0);
    }

    #[test]
    fn inverted_scorer_gives_one() {
        let records = vec![
            rec(0.1, Label::Real),
            rec(0.2, Label::Real),
            rec(0.8, Label::Fake),
            rec(0.9, Label::Fake),
        ];
        assert_eq!(compute_eer(&records).unwrap(), 1.0);
    }

    #[test]
    fn constant_scores_give_half() {
        let records = vec![
            rec(0.5, Label::Real),
            ScoreRecord { clip_id: "x".into(), score: 0.5, label: Label::Fake, audio_type: AudioType::Music },
        ];
        assert_eq!(compute_eer(&records).unwrap(), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let records = vec![rec(0.5, Label::Real)];
        assert!(matches!(compute_eer(&records), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_score_rejected() {
        let records = vec![rec(f64::NAN, Label::Real), rec(0.1, Label::Fake)];
        assert!(matches!(compute_eer(&records), Err(Error::Numeric(_))));
    }

    /// Exhaustive O(n^2) threshold sweep, independent of the streaming
    /// implementation.
    pub(crate) fn eer_oracle(records: &[ScoreRecord]) -> f64 {
        let reals: Vec<f64> =
            records.iter().filter(|r| r.label == Label::Real).map(|r| r.score).collect();
        let fakes: Vec<f64> =
            records.iter().filter(|r| r.label == Label::Fake).map(|r| r.score).collect();
        let mut thresholds: Vec<f64> = vec![f64::NEG_INFINITY, f64::INFINITY];
        for r in records {
            thresholds.push(r.score);
        }
        let mut best_diff = f64::INFINITY;
        let mut best_sum = f64::INFINITY;
        let mut best_eer = 0.5;
        for &th in &thresholds {
            let far_cnt = fakes.iter().filter(|&&s| s >= th).count();
            let frr_cnt = reals.iter().filter(|&&s| s < th).count();
            let far = far_cnt as f64 / fakes.len() as f64;
            let frr = frr_cnt as f64 / reals.len() as f64;
            let diff = (far - frr).abs();
            let sum = far + frr;
            if diff < best_diff || (diff == best_diff && sum < best_sum) {
                best_diff = diff;
                best_sum = sum;
                best_eer = sum / 2.0;
            }
        }
        best_eer
    }

    #[test]
    fn matches_brute_force_oracle_on_random_instances() {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for case in 0..300 {
            let n = rng.random_range(2..80);
            let quantize = case % 3 == 0;
            let mut records = Vec::new();
            let mut have = [false; 2];
            for i in 0..n {
                let label = if i == 0 { Label::Real } else if i == 1 { Label::Fake } else if rng.random_bool(0.5) { Label::Real } else { Label::Fake };
                have[label.index()] = true;
                let mut score: f64 = rng.random_range(-2.0..2.0);
                if quantize {
                    score = (score * 4.0).round() / 4.0; // force ties
                }
                records.push(ScoreRecord {
                    clip_id: format!("c{i}"),
                    score,
                    label,
                    audio_type: AudioType::Sound,
                });
            }
            assert!(have[0] && have[1]);
            let got = compute_eer(&records).unwrap();
            let want = eer_oracle(&records);
            assert_eq!(got, want, "case {case}: {got} vs oracle {want}");
        }
    }

    #[test]
    fn matrix_avg_is_mean_of_cells() {
        let row = MatrixRow::from_eers(
            "speech WPT",
            &[
                (AudioType::Speech, 0.01),
                (AudioType::Sound, 0.40),
                (AudioType::Singing, 0.30),
                (AudioType::Music, 0.45),
            ],
        );
        assert!((row.avg - 0.29).abs() < 1e-12);
        let m = ResultMatrix { rows: vec![row] };
        let table = m.render_table();
        assert!(table.contains("speech WPT"));
        assert!(table.contains("29.00"));
    }

    #[test]
    fn score_file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.tsv");
        let records = vec![
            rec(0.123456789012345678, Label::Real),
            rec(-1.5e-13, Label::Fake),
            rec(2.0 / 3.0, Label::Fake),
        ];
        write_scores(&path, &records).unwrap();
        let back = read_scores(&path).unwrap();
        assert_eq!(records.len(), back.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }

    proptest::proptest! {
        /// EER depends only on score order: any strictly monotone
        /// transform leaves it unchanged.
        #[test]
        fn eer_invariant_under_monotone_transform(
            scores in proptest::collection::vec(-10.0f64..10.0, 4..60),
            labels in proptest::collection::vec(proptest::bool::ANY, 4..60),
        ) {
            let n = scores.len().min(labels.len());
            let mut records: Vec<ScoreRecord> = (0..n)
                .map(|i| ScoreRecord {
                    clip_id: format!("c{i}"),
                    score: scores[i],
                    label: if labels[i] { Label::Real } else { Label::Fake },
                    audio_type: AudioType::Music,
                })
                .collect();
            records[0].label = Label::Real;
            records[1].label = Label::Fake;
            let base = compute_eer(&records).unwrap();
            let mut transformed = records.clone();
            for r in transformed.iter_mut() {
                r.score = (r.score * 0.3).tanh() * 5.0 + 1.0; // strictly monotone
            }
            let got = compute_eer(&transformed).unwrap();
            proptest::prop_assert!((base - got).abs() < 1e-15);
        }

        /// Swapping labels and negating scores leaves EER unchanged.
        #[test]
        fn eer_symmetric_under_label_swap(
            scores in proptest::collection::vec(-5.0f64..5.0, 4..50),
            labels in proptest::collection::vec(proptest::bool::ANY, 4..50),
        ) {
            let n = scores.len().min(labels.len());
            let mut records: Vec<ScoreRecord> = (0..n)
                .map(|i| ScoreRecord {
                    clip_id: format!("c{i}"),
                    score: scores[i],
                    label: if labels[i] { Label::Real } else { Label::Fake },
                    audio_type: AudioType::Singing,
                })
                .collect();
            records[0].label = Label::Real;
            records[1].label = Label::Fake;
            let base = compute_eer(&records).unwrap();
            let swapped: Vec<ScoreRecord> = records
                .iter()
                .map(|r| ScoreRecord {
                    clip_id: r.clip_id.clone(),
                    score: -r.score,
                    label: if r.label == Label::Real { Label::Fake } else { Label::Real },
                    audio_type: r.audio_type,
                })
                .collect();
            let got = compute_eer(&swapped).unwrap();
            proptest::prop_assert!((base - got).abs() < 1e-15);
        }
    }
}
