//! Seeded synthetic all-type benchmark generator.
//!
//! Each audio type occupies a distinct spectral signature: a harmonic
//! comb with band emphasis (speech), a vibrato comb (singing), shaped
//! broadband noise (sound), and stacked combs (music). All types share a
//! fixed-amplitude high-band carrier floor; fake variants attenuate that
//! floor in a type-specific notch band and apply amplitude quantization,
//! both scaled by `artifact_strength`. Per-type notch bands are disjoint,
//! so a detector fit to one type's band does not transfer to the others.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_manifest, write_wav, AudioType, Label, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::tensor::derive_seed;

/// Synthetic corpus shape: per-type split sizes, signal geometry, and
/// artifact strength. A corpus is a pure function of this spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train_per_type: usize,
    pub dev_per_type: usize,
    pub eval_per_type: usize,
    pub sample_rate: u32,
    pub clip_len: usize,
    pub seed: u64,
    pub artifact_strength: f64,
    pub real_fraction: f64,
}

impl SyntheticSpec {
    pub fn desk_default(seed: u64) -> Self {
        SyntheticSpec {
            train_per_type: 500,
            dev_per_type: 100,
            eval_per_type: 200,
            sample_rate: 16_000,
            clip_len: 16_000,
            seed,
            artifact_strength: 0.7,
            real_fraction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_per_type == 0 || self.dev_per_type == 0 || self.eval_per_type == 0 {
            return Err(Error::Config("per-type split counts must be positive".into()));
        }
        if !(0.0 < self.artifact_strength && self.artifact_strength <= 1.0) {
            return Err(Error::Config(format!(
                "artifact_strength must be in (0, 1], got {}",
                self.artifact_strength
            )));
        }
        if !(0.0 < self.real_fraction && self.real_fraction < 1.0) {
            return Err(Error::Config("real_fraction must be strictly between 0 and 1".into()));
        }
        if self.clip_len == 0 || self.sample_rate == 0 {
            return Err(Error::Config("clip_len and sample_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn count_for(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_type,
            Split::Dev => self.dev_per_type,
            Split::Eval => self.eval_per_type,
        }
    }

    pub fn real_count(&self, split: Split) -> usize {
        (self.count_for(split) as f64 * self.real_fraction).round() as usize
    }
}

/// The type-specific artifact carrier band (Hz). Bands are mutually
/// disjoint and sit above the harmonic range of every type.
pub fn notch_band(t: AudioType) -> (f64, f64) {
    match t {
        AudioType::Speech => (5700.0, 6400.0),
        AudioType::Sound => (4100.0, 4800.0),
        AudioType::Singing => (6600.0, 7300.0),
        AudioType::Music => (4900.0, 5600.0),
    }
}

const FLOOR_LO: f64 = 300.0;
const FLOOR_HI: f64 = 7800.0;
const FLOOR_STEP: f64 = 50.0;
const CARRIER_SPLIT: f64 = 3600.0;
const CARRIER_AMP: f64 = 0.02;
const LOW_FLOOR_AMP: f64 = 0.004;
const HARMONIC_CAP: f64 = 3700.0;
const NOTCH_DEPTH: f64 = 0.95;
const PEAK: f64 = 0.65;

struct Component {
    freq: f64,
    amp: f64,
    phase: f64,
}

/// Render static components with rotation-recurrence oscillators.
fn render(components: &[Component], out: &mut [f64], sample_rate: f64) {
    for c in components {
        if c.amp == 0.0 {
            continue;
        }
        let theta = TAU * c.freq / sample_rate;
        let (dc, ds) = (theta.cos(), theta.sin());
        let mut s = c.phase.sin();
        let mut co = c.phase.cos();
        for y in out.iter_mut() {
            *y += c.amp * s;
            let ns = s * dc + co * ds;
            co = co * dc - s * ds;
            s = ns;
        }
    }
}

/// Generate one clip. Content draws depend only on (type, seed); the
/// label switches the artifact on, so real/fake twins of one seed differ
/// exactly in the notch band and the quantization grid.
pub fn synth_generate(
    audio_type: AudioType,
    label: Label,
    clip_len: usize,
    sample_rate: u32,
    artifact_strength: f64,
    seed: u64,
) -> Vec<f64> {
    let sr = sample_rate as f64;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // carrier + low floor grid, fixed amplitudes, random phases
    let mut floor_comps = Vec::new();
    let mut f = FLOOR_LO;
    while f <= FLOOR_HI {
        let amp = if f >= CARRIER_SPLIT { CARRIER_AMP } else { LOW_FLOOR_AMP };
        floor_comps.push(Component { freq: f, amp, phase: rng.random_range(0.0..TAU) });
        f += FLOOR_STEP;
    }

    let mut tonal_comps: Vec<Component> = Vec::new();
    let mut vibrato: Option<(f64, f64, Vec<(usize, f64, f64)>)> = None; // rate, f0, (k, amp, phase)
    let mut am: Option<(f64, f64, f64)> = None; // rate, depth, phase

    match audio_type {
        AudioType::Speech => {
            let f0 = rng.random_range(100.0..300.0);
            let mut k = 1usize;
            while k as f64 * f0 <= HARMONIC_CAP {
                let freq = k as f64 * f0;
                let emphasis = if (300.0..=3000.0).contains(&freq) { 1.8 } else { 1.0 };
                let amp = 0.32 / (k as f64).sqrt() * emphasis;
                tonal_comps.push(Component { freq, amp, phase: rng.random_range(0.0..TAU) });
                k += 1;
            }
            am = Some((rng.random_range(2.0..6.0), 0.5, rng.random_range(0.0..TAU)));
        }
        AudioType::Sound => {
            // reshape the low floor into tilted noise with two resonances
            let tilt = rng.random_range(-3.0..3.0);
            let fc1 = rng.random_range(400.0..3200.0);
            let fc2 = rng.random_range(400.0..3200.0);
            for c in floor_comps.iter_mut().filter(|c| c.freq < CARRIER_SPLIT) {
                let octaves = (c.freq / 1000.0).log2();
                let bump = |fc: f64| 2.0 * (-((c.freq - fc) * (c.freq - fc)) / (2.0 * 250.0 * 250.0)).exp();
                c.amp = 0.02 * 2f64.powf(tilt * octaves / 6.0) * (1.0 + bump(fc1) + bump(fc2));
            }
        }
        AudioType::Singing => {
            let f0 = rng.random_range(180.0..450.0);
            let mut parts = Vec::new();
            let mut k = 1usize;
            while k as f64 * f0 <= HARMONIC_CAP {
                parts.push((k, 0.3 / (k as f64).sqrt(), rng.random_range(0.0..TAU)));
                k += 1;
            }
            let rate = 5.5 + rng.random_range(-0.5..0.5);
            vibrato = Some((rate, f0, parts));
        }
        AudioType::Music => {
            let root = rng.random_range(90.0..200.0);
            for ratio in [1.0, 1.26, 1.5] {
                let f0 = root * ratio;
                let mut k = 1usize;
                while k as f64 * f0 <= HARMONIC_CAP {
                    tonal_comps.push(Component {
                        freq: k as f64 * f0,
                        amp: 0.22 / (k as f64).sqrt(),
                        phase: rng.random_range(0.0..TAU),
                    });
                    k += 1;
                }
            }
        }
    }

    // artifact: attenuate carrier components inside the type's notch band
    if label == Label::Fake {
        let (lo, hi) = notch_band(audio_type);
        let atten = 1.0 - NOTCH_DEPTH * artifact_strength;
        for c in floor_comps.iter_mut().chain(tonal_comps.iter_mut()) {
            if c.freq >= lo && c.freq <= hi {
                c.amp *= atten;
            }
        }
    }

    let mut floor_buf = vec![0.0; clip_len];
    render(&floor_comps, &mut floor_buf, sr);

    let mut tonal_buf = vec![0.0; clip_len];
    render(&tonal_comps, &mut tonal_buf, sr);
    if let Some((rate, f0, parts)) = &vibrato {
        // phase-accumulated partials under a shared pitch modulation
        let mut phases: Vec<f64> = parts.iter().map(|&(_, _, ph)| ph).collect();
        for (n, y) in tonal_buf.iter_mut().enumerate() {
            let tsec = n as f64 / sr;
            let mod_factor = 1.0 + 0.02 * (TAU * rate * tsec).sin();
            let mut acc = 0.0;
            for ((k, a, _), ph) in parts.iter().zip(phases.iter_mut()) {
                acc += a * ph.sin();
                *ph += TAU * (*k as f64) * f0 * mod_factor / sr;
            }
            *y += acc;
        }
    }
    if let Some((rate, depth, phase)) = am {
        for (n, y) in tonal_buf.iter_mut().enumerate() {
            let tsec = n as f64 / sr;
            *y *= 1.0 - depth / 2.0 + depth / 2.0 * (TAU * rate * tsec + phase).sin();
        }
    }

    let mut y: Vec<f64> = floor_buf.iter().zip(&tonal_buf).map(|(a, b)| a + b).collect();

    // normalize to a fixed peak, then the quantization artifact
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = PEAK / peak;
        for v in y.iter_mut() {
            *v *= scale;
        }
    }
    if label == Label::Fake {
        let delta = 0.02 * artifact_strength;
        for v in y.iter_mut() {
            *v = (*v / delta).round() * delta;
        }
    }
    for v in y.iter_mut() {
        *v = v.clamp(-0.999, 0.999);
    }
    y
}

/// Where a generated benchmark keeps its pieces.
#[derive(Debug, Clone)]
pub struct BenchmarkLayout {
    pub root: PathBuf,
}

impl BenchmarkLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        BenchmarkLayout { root: root.into() }
    }

    pub fn audio_dir(&self) -> PathBuf {
        self.root.join("audio")
    }

    pub fn manifest_dir(&self) -> PathBuf {
        self.root.join("manifests")
    }

    /// `scope` is an audio type name or "combined".
    pub fn manifest_path(&self, scope: &str, split: Split) -> PathBuf {
        self.manifest_dir().join(format!("{scope}_{split}.tsv"))
    }

    pub fn spec_path(&self) -> PathBuf {
        self.root.join("benchmark.json")
    }
}

/// Generate audio files and the 15 manifests (4 types + combined, each
/// with train/dev/eval). Fully reproducible from the spec.
pub fn make_benchmark(spec: &SyntheticSpec, out_dir: &Path) -> Result<BenchmarkLayout> {
    spec.validate()?;
    let layout = BenchmarkLayout::new(out_dir);
    std::fs::create_dir_all(layout.audio_dir())?;
    std::fs::create_dir_all(layout.manifest_dir())?;

    let mut global_index: u64 = 0;
    let mut per_type: Vec<Vec<ManifestEntry>> = vec![Vec::new(); 4];
    for (ti, &audio_type) in AudioType::ALL.iter().enumerate() {
        for split in Split::ALL {
            let n = spec.count_for(split);
            let n_real = spec.real_count(split);
            for i in 0..n {
                let label = if i < n_real { Label::Real } else { Label::Fake };
                let clip_seed = derive_seed(spec.seed, global_index);
                global_index += 1;
                let clip_id = format!("{audio_type}_{split}_{label}_{i:04}");
                let wave = synth_generate(
                    audio_type,
                    label,
                    spec.clip_len,
                    spec.sample_rate,
                    spec.artifact_strength,
                    clip_seed,
                );
                let file = layout.audio_dir().join(format!("{clip_id}.wav"));
                write_wav(&file, &wave, spec.sample_rate)?;
                per_type[ti].push(ManifestEntry {
                    clip_id,
                    path: format!("../audio/{audio_type}_{split}_{label}_{i:04}.wav"),
                    audio_type,
                    label,
                    split,
                });
            }
        }
    }

    for (ti, audio_type) in AudioType::ALL.iter().enumerate() {
        for split in Split::ALL {
            let entries: Vec<ManifestEntry> =
                per_type[ti].iter().filter(|e| e.split == split).cloned().collect();
            write_manifest(&layout.manifest_path(audio_type.as_str(), split), &entries)?;
        }
    }
    for split in Split::ALL {
        let mut combined = Vec::new();
        for bucket in &per_type {
            combined.extend(bucket.iter().filter(|e| e.split == split).cloned());
        }
        write_manifest(&layout.manifest_path("combined", split), &combined)?;
    }
    let meta = serde_json::to_string_pretty(spec)
        .map_err(|e| Error::Config(format!("cannot serialize spec: {e}")))?;
    std::fs::write(layout.spec_path(), meta)?;
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = synth_generate(AudioType::Speech, Label::Real, 4000, 16_000, 0.7, 42);
        let b = synth_generate(AudioType::Speech, Label::Real, 4000, 16_000, 0.7, 42);
        assert_eq!(a, b);
        let c = synth_generate(AudioType::Speech, Label::Real, 4000, 16_000, 0.7, 43);
        assert_ne!(a, c);
    }

    /// Goertzel-style single-bin energy, independent of the generator.
    fn bin_energy(y: &[f64], freq: f64, sr: f64) -> f64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for (n, &v) in y.iter().enumerate() {
            let ang = TAU * freq * n as f64 / sr;
            re += v * ang.cos();
            im -= v * ang.sin();
        }
        re * re + im * im
    }

    fn band_stat(y: &[f64], t: AudioType, sr: f64) -> f64 {
        let (lo, hi) = notch_band(t);
        let grid = |from: f64, to: f64| -> f64 {
            let mut e = 0.0;
            let mut f = FLOOR_LO;
            while f <= FLOOR_HI {
                if f >= from && f <= to {
                    e += bin_energy(y, f, sr);
                }
                f += FLOOR_STEP;
            }
            e
        };
        let center = grid(lo + 50.0, hi - 50.0);
        let flank = grid(lo - 500.0, lo - 100.0) + grid(hi + 100.0, hi + 500.0);
        center / (center + flank)
    }

    #[test]
    fn fake_differs_from_real_in_notch_band() {
        for t in AudioType::ALL {
            let real = synth_generate(t, Label::Real, 8000, 16_000, 1.0, 7);
            let fake = synth_generate(t, Label::Fake, 8000, 16_000, 1.0, 7);
            assert_ne!(real, fake);
            let sr = 16_000.0;
            let rs = band_stat(&real, t, sr);
            let fs = band_stat(&fake, t, sr);
            assert!(fs < rs * 0.5, "{t}: real stat {rs}, fake stat {fs}");
        }
    }

    #[test]
    fn band_statistic_separates_perfectly_at_full_strength() {
        let sr = 16_000.0;
        for strength in [0.5, 1.0] {
            for t in AudioType::ALL {
                let mut real_min = f64::INFINITY;
                let mut fake_max = f64::NEG_INFINITY;
                for i in 0..25 {
                    let real = synth_generate(t, Label::Real, 8000, 16_000, strength, 1000 + i);
                    let fake = synth_generate(t, Label::Fake, 8000, 16_000, strength, 2000 + i);
                    real_min = real_min.min(band_stat(&real, t, sr));
                    fake_max = fake_max.max(band_stat(&fake, t, sr));
                }
                assert!(
                    fake_max < real_min,
                    "{t} at strength {strength}: fake max {fake_max} >= real min {real_min}"
                );
            }
        }
    }

    #[test]
    fn benchmark_counts_and_reproducibility() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            train_per_type: 6,
            dev_per_type: 2,
            eval_per_type: 4,
            sample_rate: 16_000,
            clip_len: 2000,
            seed: 11,
            artifact_strength: 0.7,
            real_fraction: 0.5,
        };
        let layout = make_benchmark(&spec, &dir.path().join("a")).unwrap();
        let combined =
            crate::data::read_manifest(&layout.manifest_path("combined", Split::Train)).unwrap();
        assert_eq!(combined.len(), 24);
        // every manifest path resolves and loads at clip_len
        for e in &combined {
            let wave = crate::data::load_clip(&layout.manifest_dir(), e, spec.clip_len).unwrap();
            assert_eq!(wave.len(), spec.clip_len);
        }
        // per-type real/fake balance matches the spec exactly
        let speech =
            crate::data::read_manifest(&layout.manifest_path("speech", Split::Train)).unwrap();
        let n_real = speech.iter().filter(|e| e.label == Label::Real).count();
        assert_eq!(n_real, 3);

        let layout_b = make_benchmark(&spec, &dir.path().join("b")).unwrap();
        let bytes_a = std::fs::read(layout.manifest_path("combined", Split::Eval)).unwrap();
        let bytes_b = std::fs::read(layout_b.manifest_path("combined", Split::Eval)).unwrap();
        assert_eq!(bytes_a, bytes_b);
        let wav_a =
            std::fs::read(layout.audio_dir().join("music_eval_fake_0003.wav")).unwrap();
        let wav_b =
            std::fs::read(layout_b.audio_dir().join("music_eval_fake_0003.wav")).unwrap();
        assert_eq!(wav_a, wav_b);
    }

    #[test]
    fn split_ids_are_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            train_per_type: 3,
            dev_per_type: 2,
            eval_per_type: 2,
            sample_rate: 16_000,
            clip_len: 1000,
            seed: 5,
            artifact_strength: 0.7,
            real_fraction: 0.5,
        };
        let layout = make_benchmark(&spec, dir.path()).unwrap();
        let mut all_ids = std::collections::HashSet::new();
        for split in Split::ALL {
            let m = crate::data::read_manifest(&layout.manifest_path("combined", split)).unwrap();
            for e in m {
                assert!(all_ids.insert(e.clip_id.clone()), "{} in two splits", e.clip_id);
            }
        }
    }
}
