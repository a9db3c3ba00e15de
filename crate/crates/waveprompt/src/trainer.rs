//! Experiment driver: single training runs and the single-type /
//! co-training benchmark protocols.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_clip, read_manifest, AudioType, BenchmarkLayout, ManifestEntry, Split};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{
    compute_eer, cross_type_eval, score_entries, write_scores, MetricsDoc, ResultMatrix,
};
use crate::head::{wce_loss, ClassWeights, HeadConfig};
use crate::model::{save_checkpoint, CheckpointMeta, Detector, FeatureCache};
use crate::prompting::Paradigm;
use crate::tensor::{derive_seed, Adam, Graph};

/// Learning schedule and batching. The halving period is in epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_halving_period: usize,
    pub seed: u64,
}

impl ScheduleConfig {
    /// Reference full-scale single-type schedule: 50 epochs, halving
    /// every 10; fine-tuning runs at 1e-6 with batch 14, the frozen-stack
    /// paradigms at 5e-4 with batch 32.
    pub fn paper_single_type(paradigm: Paradigm, seed: u64) -> Self {
        let (lr, batch_size) = if paradigm.trains_encoder() { (1e-6, 14) } else { (5e-4, 32) };
        ScheduleConfig { lr, batch_size, epochs: 50, lr_halving_period: 10, seed }
    }

    /// Reference co-training schedule: 20 epochs, halving every 4.
    pub fn paper_co_train(paradigm: Paradigm, seed: u64) -> Self {
        ScheduleConfig { epochs: 20, lr_halving_period: 4, ..Self::paper_single_type(paradigm, seed) }
    }

    /// Desk-scale schedule tuned for CPU minutes on the synthetic corpus.
    pub fn desk(paradigm: Paradigm, seed: u64) -> Self {
        let lr = if paradigm.trains_encoder() { 2e-4 } else { 2e-3 };
        ScheduleConfig { lr, batch_size: 16, epochs: 4, lr_halving_period: 2, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.lr_halving_period == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs, lr_halving_period and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// lr(epoch) = lr0 * 0.5^floor(epoch / period), epochs counted from 0.
pub fn lr_at_epoch(lr0: f64, period: usize, epoch: usize) -> f64 {
    lr0 * 0.5f64.powi((epoch / period) as i32)
}

/// Everything a run needs: paradigm, geometry, head, schedule. The
/// digest of this document is embedded in every artifact the run writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub paradigm: Paradigm,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub schedule: ScheduleConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.paradigm.validate()?;
        self.encoder.validate()?;
        self.head.validate()?;
        self.schedule.validate()
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let out = Sha256::digest(json.as_bytes());
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_eer: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    /// Model restored to the best-dev-EER epoch.
    pub detector: Detector,
    pub meta: CheckpointMeta,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_eer: f64,
    pub train_seconds: f64,
}

/// One full training run with per-epoch dev evaluation and best-epoch
/// checkpoint selection (lowest dev EER; ties go to the earlier epoch).
pub fn train(
    cfg: &ExperimentConfig,
    train_entries: &[ManifestEntry],
    dev_entries: &[ManifestEntry],
    manifest_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_entries.is_empty() || dev_entries.is_empty() {
        return Err(Error::Contract("training needs non-empty train and dev manifests".into()));
    }
    let started = std::time::Instant::now();
    let mut det =
        Detector::build(cfg.paradigm, cfg.encoder.clone(), cfg.head, cfg.schedule.seed)?;
    let weights = ClassWeights::from_entries(train_entries)?;
    let mut cache = FeatureCache::new();
    let mut adam = Adam::default_betas();
    let clip_len = cfg.encoder.clip_len;
    let store_len = det.store.len();

    let mut log = Vec::with_capacity(cfg.schedule.epochs);
    let mut best: Option<(f64, usize, Vec<u8>)> = None;

    for epoch in 0..cfg.schedule.epochs {
        let lr = lr_at_epoch(cfg.schedule.lr, cfg.schedule.lr_halving_period, epoch);
        let mut order: Vec<usize> = (0..train_entries.len()).collect();
        let mut rng =
            ChaCha20Rng::seed_from_u64(derive_seed(cfg.schedule.seed, 0xE000 + epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss_sum = 0.0;
        let mut epoch_weight_sum = 0.0;
        for batch in order.chunks(cfg.schedule.batch_size) {
            let batch_weight: f64 =
                batch.iter().map(|&i| weights.weight(train_entries[i].label)).sum();
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; store_len];
            let mut batch_ce_sum = 0.0;
            for &i in batch {
                let entry = &train_entries[i];
                let mut g = Graph::new();
                let (logits, _emb, _fwd) = {
                    let tokens = cache.tokens_for(&det, &entry.clip_id, || {
                        load_clip(manifest_dir, entry, clip_len)
                    })?;
                    det.forward_nodes(&mut g, tokens)?
                };
                let ce = wce_loss(&mut g, logits, entry.label, &weights)?;
                let ce_value = g.value(ce)[0];
                if !ce_value.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss at epoch {epoch}, clip {}",
                        entry.clip_id
                    )));
                }
                batch_ce_sum += ce_value;
                let contribution = g.scale(ce, 1.0 / batch_weight);
                g.backward(contribution)?;
                for (slot, grad) in grads.iter_mut().zip(g.param_grads(store_len)) {
                    match (slot.as_mut(), grad) {
                        (Some(acc), Some(gv)) => {
                            for (a, v) in acc.iter_mut().zip(&gv) {
                                *a += v;
                            }
                        }
                        (None, Some(gv)) => *slot = Some(gv),
                        _ => {}
                    }
                }
            }
            adam.step(det.store.params_mut(), &grads, lr)?;
            epoch_loss_sum += batch_ce_sum;
            epoch_weight_sum += batch_weight;
        }
        let train_loss = epoch_loss_sum / epoch_weight_sum;

        let dev_records = score_entries(&det, dev_entries, manifest_dir, Some(&mut cache))?;
        let dev_eer = compute_eer(&dev_records)?;
        log.push(EpochLog { epoch, train_loss, dev_eer, lr });
        let improved = match &best {
            None => true,
            Some((eer, _, _)) => dev_eer < *eer,
        };
        if improved {
            best = Some((dev_eer, epoch, det.weights_archive_bytes()));
        }
    }

    let (best_dev_eer, best_epoch, bytes) = best.expect("at least one epoch");
    det.load_weight_bytes(&bytes)?;
    let meta = CheckpointMeta {
        paradigm: cfg.paradigm,
        encoder: cfg.encoder.clone(),
        head: cfg.head,
        seed: cfg.schedule.seed,
        config_digest: cfg.digest(),
        best_epoch: Some(best_epoch),
        best_dev_eer: Some(best_dev_eer),
    };
    Ok(TrainOutcome {
        detector: det,
        meta,
        log,
        best_epoch,
        best_dev_eer,
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Append-only training log TSV.
pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch\ttrain_loss\tdev_eer\tlr\n");
    for e in log {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", e.epoch, e.train_loss, e.dev_eer, e.lr));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    /// Four runs, one per audio type, each evaluated on all four types.
    SingleType,
    /// One run over the combined training set.
    CoTrain,
}

impl Protocol {
    pub fn scopes(&self) -> Vec<String> {
        match self {
            Protocol::SingleType => {
                AudioType::ALL.iter().map(|t| t.as_str().to_string()).collect()
            }
            Protocol::CoTrain => vec!["combined".to_string()],
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunDoc {
    pub protocol: Protocol,
    pub config_digest: String,
    pub seed: u64,
    pub rows: Vec<String>,
}

pub struct BenchmarkOutcome {
    pub matrix: ResultMatrix,
    pub out_dir: PathBuf,
    pub run_seconds: Vec<(String, f64)>,
}

/// Run a benchmark protocol end to end: train per scope, score every
/// eval manifest, persist scores before metrics, and emit the matrix.
pub fn run_benchmark(
    cfg: &ExperimentConfig,
    layout: &BenchmarkLayout,
    protocol: Protocol,
    out_dir: &Path,
) -> Result<BenchmarkOutcome> {
    cfg.validate()?;
    let manifest_dir = layout.manifest_dir();
    let eval_sets: Vec<(AudioType, Vec<ManifestEntry>)> = AudioType::ALL
        .iter()
        .map(|t| Ok((*t, read_manifest(&layout.manifest_path(t.as_str(), Split::Eval))?)))
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(out_dir.join("scores"))?;
    std::fs::create_dir_all(out_dir.join("metrics"))?;
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;

    let digest = cfg.digest();
    let mut matrix = ResultMatrix::default();
    let mut run_seconds = Vec::new();
    for scope in protocol.scopes() {
        let train_entries = read_manifest(&layout.manifest_path(&scope, Split::Train))?;
        let dev_entries = read_manifest(&layout.manifest_path(&scope, Split::Dev))?;
        let outcome = train(cfg, &train_entries, &dev_entries, &manifest_dir)?;
        run_seconds.push((scope.clone(), outcome.train_seconds));

        let ckpt_dir = out_dir.join("checkpoints").join(&scope);
        save_checkpoint(&ckpt_dir, &outcome.detector, &outcome.meta)?;
        write_train_log(&ckpt_dir.join("train_log.tsv"), &outcome.log)?;

        let condition = format!("{} {}", scope, cfg.paradigm.name());
        let (row, per_type_scores) =
            cross_type_eval(&outcome.detector, &eval_sets, &manifest_dir, &condition)?;
        let mut per_type_eer = std::collections::BTreeMap::new();
        for (t, records) in &per_type_scores {
            write_scores(
                &out_dir.join("scores").join(format!("{scope}_{t}.tsv")),
                records,
            )?;
            per_type_eer.insert(t.as_str().to_string(), row.eer_for(*t).expect("cell"));
        }
        let metrics = MetricsDoc {
            train_condition: condition,
            per_type_eer,
            avg_eer: row.avg,
            config_digest: digest.clone(),
            seed: cfg.schedule.seed,
        };
        let json = serde_json::to_string_pretty(&metrics)
            .map_err(|e| Error::Config(format!("metrics serialization: {e}")))?;
        std::fs::write(out_dir.join("metrics").join(format!("{scope}.json")), json)?;
        matrix.rows.push(row);
    }

    let matrix_json = serde_json::to_string_pretty(&matrix)
        .map_err(|e| Error::Config(format!("matrix serialization: {e}")))?;
    std::fs::write(out_dir.join("matrix.json"), matrix_json)?;
    std::fs::write(out_dir.join("matrix.txt"), matrix.render_table())?;
    let run = RunDoc {
        protocol,
        config_digest: digest,
        seed: cfg.schedule.seed,
        rows: protocol.scopes(),
    };
    let run_json = serde_json::to_string_pretty(&run)
        .map_err(|e| Error::Config(format!("run doc serialization: {e}")))?;
    std::fs::write(out_dir.join("run.json"), run_json)?;
    Ok(BenchmarkOutcome { matrix, out_dir: out_dir.to_path_buf(), run_seconds })
}
