use std::time::Instant;

use waveprompt::data::{make_benchmark, read_manifest, Split, SyntheticSpec};
use waveprompt::encoder::EncoderConfig;
use waveprompt::head::HeadConfig;
use waveprompt::prompting::{Paradigm, WptMode};
use waveprompt::trainer::{train, ExperimentConfig, ScheduleConfig};

fn profile() {
    use waveprompt::data::{synth_generate, AudioType, Label};
    use waveprompt::model::Detector;
    use waveprompt::tensor::Graph;

    let det = Detector::build(
        Paradigm::Wpt { w: 4, p: 6, mode: WptMode::EveryForward },
        EncoderConfig::desk(),
        HeadConfig::desk(),
        3,
    )
    .unwrap();
    let wave = synth_generate(AudioType::Speech, Label::Real, 16_000, 16_000, 0.7, 1);

    let t0 = Instant::now();
    let mut tokens = Vec::new();
    for _ in 0..20 {
        tokens = det.conv_tokens(&wave).unwrap();
    }
    println!("conv frontend: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / 20.0);

    let t1 = Instant::now();
    for _ in 0..20 {
        let mut g = Graph::new();
        let _ = det.forward_nodes(&mut g, &tokens).unwrap();
    }
    println!("forward: {:.1} ms", t1.elapsed().as_secs_f64() * 1000.0 / 20.0);

    let weights = waveprompt::head::ClassWeights::balanced();
    let t2 = Instant::now();
    for _ in 0..20 {
        let mut g = Graph::new();
        let (logits, _, _) = det.forward_nodes(&mut g, &tokens).unwrap();
        let ce = waveprompt::head::wce_loss(&mut g, logits, Label::Real, &weights).unwrap();
        g.backward(ce).unwrap();
        let _ = g.param_grads(det.store.len());
    }
    println!("forward+backward+grads: {:.1} ms", t2.elapsed().as_secs_f64() * 1000.0 / 20.0);
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let scope = args.get(4).cloned().unwrap_or_else(|| "combined".into());
    let paradigm_name = args.get(5).cloned().unwrap_or_else(|| "wpt".into());

    if std::env::var("CALIB_PROFILE").is_ok() {
        profile();
        return;
    }
    let dir = std::env::temp_dir().join(format!("wp_calib_{n_train}"));
    let spec = SyntheticSpec {
        train_per_type: n_train,
        dev_per_type: 25,
        eval_per_type: 50,
        sample_rate: 16_000,
        clip_len: 16_000,
        seed: 7,
        artifact_strength: 0.7,
        real_fraction: 0.5,
    };
    let t0 = Instant::now();
    let layout = if dir.join("benchmark.json").exists() {
        println!("reusing corpus at {}", dir.display());
        waveprompt::data::BenchmarkLayout::new(&dir)
    } else {
        let l = make_benchmark(&spec, &dir).unwrap();
        println!("generated corpus in {:.1}s", t0.elapsed().as_secs_f64());
        l
    };

    let paradigm = match paradigm_name.as_str() {
        "pt" => Paradigm::Pt { p: 10 },
        "fr" => Paradigm::Fr,
        "ft" => Paradigm::Ft,
        _ => Paradigm::Wpt { w: 4, p: 6, mode: WptMode::EveryForward },
    };
    let cfg = ExperimentConfig {
        paradigm,
        encoder: EncoderConfig::desk(),
        head: HeadConfig::desk(),
        schedule: ScheduleConfig { lr, batch_size: 16, epochs, lr_halving_period: 2, seed: 11 },
    };
    let train_entries = read_manifest(&layout.manifest_path(&scope, Split::Train)).unwrap();
    let dev_entries = read_manifest(&layout.manifest_path(&scope, Split::Dev)).unwrap();
    println!(
        "training {} on {} ({} clips, lr {lr}, {} epochs)",
        paradigm.name(),
        scope,
        train_entries.len(),
        epochs
    );
    let t1 = Instant::now();
    let outcome = train(&cfg, &train_entries, &dev_entries, &layout.manifest_dir()).unwrap();
    for e in &outcome.log {
        println!(
            "epoch {} loss {:.4} dev_eer {:.4} lr {:.2e}",
            e.epoch, e.train_loss, e.dev_eer, e.lr
        );
    }
    println!(
        "total {:.1}s ({:.1}s/epoch), best epoch {} dev_eer {:.4}",
        t1.elapsed().as_secs_f64(),
        t1.elapsed().as_secs_f64() / epochs as f64,
        outcome.best_epoch,
        outcome.best_dev_eer
    );
    let records = waveprompt::eval::score_entries(
        &outcome.detector,
        &dev_entries,
        &layout.manifest_dir(),
        None,
    )
    .unwrap();
    for r in records.iter().take(12) {
        println!("dev {} {} -> {:.6}", r.clip_id, r.label, r.score);
    }
    let (rm, rs): (Vec<f64>, Vec<f64>) = records
        .iter()
        .partition::<Vec<_>, _>(|r| r.label == waveprompt::data::Label::Real)
        .0
        .iter()
        .map(|r| r.score)
        .zip(records.iter().filter(|r| r.label != waveprompt::data::Label::Real).map(|r| r.score))
        .unzip();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("dev real mean {:.4}  fake mean {:.4}", mean(&rm), mean(&rs));
}
