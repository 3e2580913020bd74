//! Line-oriented `[section] key = value` run configuration.
//!
//! Every key is explicitly known; unknown sections or keys are validation
//! errors so typos cannot silently fall back to defaults. All seeds are
//! explicit - nothing is derived from the clock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use maskbeam::adapt::TargetMode;
use maskbeam::signal::{StftConfig, WindowKind};
use maskbeam::sim::NoiseKind;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct SpeakerTuple {
    pub f0: f64,
    pub rolloff: f64,
    pub brightness: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub n_mels: usize,

    pub masknet_hidden: Vec<usize>,
    pub masknet_recurrent: bool,
    pub masknet_seed: u64,

    pub am_n_states: usize,
    pub am_context: usize,
    pub am_hidden: Vec<usize>,
    pub am_seed: u64,
    pub am_epochs: usize,
    pub am_lr: f64,

    pub scene_channels: usize,
    pub scene_duration: f64,
    pub scene_snr_db: f64,
    pub scene_noise: NoiseKind,
    pub scene_classes: usize,
    pub scene_count: usize,

    pub speakers: Vec<SpeakerTuple>,

    pub pretrain_scenes_per_speaker: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub joint_epochs: usize,
    /// SNR ladder cycled across pretraining scenes (multi-condition).
    pub pretrain_snrs_db: Vec<f64>,

    pub beamform_k_iters: usize,
    pub beamform_loading: f64,

    pub adapt_speaker: SpeakerTuple,
    pub adapt_utterances: usize,
    pub adapt_heldout: usize,
    pub adapt_lr: f64,
    pub adapt_epochs: usize,
    pub adapt_target_mode: TargetMode,

    pub gradcheck_seeds: u64,
    pub gradcheck_eps: f64,
    pub gradcheck_tol: f64,

    pub out_dir: PathBuf,
    pub mask_checkpoint: Option<PathBuf>,
    pub am_checkpoint: Option<PathBuf>,

    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stft: StftConfig::default(),
            n_mels: 80,
            masknet_hidden: vec![64, 128, 128],
            masknet_recurrent: false,
            masknet_seed: 101,
            am_n_states: 5,
            am_context: 2,
            am_hidden: vec![128, 128],
            am_seed: 202,
            am_epochs: 40,
            am_lr: 0.1,
            scene_channels: 6,
            scene_duration: 1.0,
            scene_snr_db: 0.0,
            scene_noise: NoiseKind::CoherentPoint,
            scene_classes: 5,
            scene_count: 4,
            speakers: vec![
                SpeakerTuple { f0: 146.0, rolloff: 0.85, brightness: 3000.0 },
                SpeakerTuple { f0: 185.0, rolloff: 0.88, brightness: 2600.0 },
                SpeakerTuple { f0: 233.0, rolloff: 0.82, brightness: 3400.0 },
                SpeakerTuple { f0: 290.0, rolloff: 0.86, brightness: 2900.0 },
            ],
            pretrain_scenes_per_speaker: 3,
            pretrain_epochs: 150,
            pretrain_lr: 1.5,
            joint_epochs: 20,
            pretrain_snrs_db: vec![0.0, 10.0, 20.0],
            beamform_k_iters: 5,
            beamform_loading: 1e-6,
            adapt_speaker: SpeakerTuple { f0: 70.0, rolloff: 0.65, brightness: 1500.0 },
            adapt_utterances: 10,
            adapt_heldout: 10,
            adapt_lr: 0.08,
            adapt_epochs: 16,
            adapt_target_mode: TargetMode::Oracle,
            gradcheck_seeds: 20,
            gradcheck_eps: 1e-5,
            gradcheck_tol: 1e-4,
            out_dir: PathBuf::from("out"),
            mask_checkpoint: None,
            am_checkpoint: None,
            master_seed: 1,
        }
    }
}

/// Parse the file (if any) and apply `--set section.key=value` overrides.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut entries: Vec<(String, String)> = Vec::new();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Parse(format!(
                    "{}:{}: expected `key = value`, got {raw:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            if section.is_empty() {
                return Err(CliError::Parse(format!(
                    "{}:{}: key outside any [section]",
                    path.display(),
                    lineno + 1
                )));
            }
            entries.push((format!("{section}.{}", k.trim()), v.trim().to_string()));
        }
    }
    for ov in overrides {
        let (k, v) = ov
            .split_once('=')
            .ok_or_else(|| CliError::Parse(format!("--set expects section.key=value, got {ov:?}")))?;
        if !k.contains('.') {
            return Err(CliError::Parse(format!(
                "--set key must be section.key, got {k:?}"
            )));
        }
        entries.push((k.trim().to_string(), v.trim().to_string()));
    }

    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (k, v) in entries {
        map.insert(k, v);
    }
    build(map)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| CliError::Validation(format!("bad value for {key}: {e}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, CliError> {
    v.split(',')
        .map(|s| parse::<usize>(key, s.trim()))
        .collect()
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',')
        .map(|s| parse::<f64>(key, s.trim()))
        .collect()
}

fn build(map: BTreeMap<String, String>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    let mut speaker_f0s: Option<Vec<f64>> = None;
    let mut speaker_rolloffs: Option<Vec<f64>> = None;
    let mut speaker_brightness: Option<Vec<f64>> = None;

    for (key, v) in &map {
        match key.as_str() {
            "stft.sample_rate" => cfg.stft.sample_rate = parse(key, v)?,
            "stft.win_len" => cfg.stft.win_len = parse(key, v)?,
            "stft.hop" => cfg.stft.hop = parse(key, v)?,
            "stft.dft_size" => cfg.stft.dft_size = parse(key, v)?,
            "stft.window" => {
                cfg.stft.window_kind = match v.as_str() {
                    "blackman" => WindowKind::Blackman,
                    other => {
                        return Err(CliError::Validation(format!(
                            "unknown window kind {other:?}"
                        )))
                    }
                }
            }
            "features.n_mels" => cfg.n_mels = parse(key, v)?,
            "masknet.hidden_dims" => cfg.masknet_hidden = parse_list(key, v)?,
            "masknet.recurrent_first_layer" => cfg.masknet_recurrent = parse(key, v)?,
            "masknet.seed" => cfg.masknet_seed = parse(key, v)?,
            "am.n_states" => cfg.am_n_states = parse(key, v)?,
            "am.context" => cfg.am_context = parse(key, v)?,
            "am.hidden_dims" => cfg.am_hidden = parse_list(key, v)?,
            "am.seed" => cfg.am_seed = parse(key, v)?,
            "am.epochs" => cfg.am_epochs = parse(key, v)?,
            "am.lr" => cfg.am_lr = parse(key, v)?,
            "scene.channels" => cfg.scene_channels = parse(key, v)?,
            "scene.duration" => cfg.scene_duration = parse(key, v)?,
            "scene.snr_db" => cfg.scene_snr_db = parse(key, v)?,
            "scene.noise" => cfg.scene_noise = parse_noise(v)?,
            "scene.n_classes" => cfg.scene_classes = parse(key, v)?,
            "scene.count" => cfg.scene_count = parse(key, v)?,
            "speakers.f0s" => speaker_f0s = Some(parse_f64_list(key, v)?),
            "speakers.rolloffs" => speaker_rolloffs = Some(parse_f64_list(key, v)?),
            "speakers.brightness" => speaker_brightness = Some(parse_f64_list(key, v)?),
            "pretrain.scenes_per_speaker" => cfg.pretrain_scenes_per_speaker = parse(key, v)?,
            "pretrain.epochs" => cfg.pretrain_epochs = parse(key, v)?,
            "pretrain.lr" => cfg.pretrain_lr = parse(key, v)?,
            "pretrain.joint_epochs" => cfg.joint_epochs = parse(key, v)?,
            "pretrain.snrs_db" => cfg.pretrain_snrs_db = parse_f64_list(key, v)?,
            "beamform.k_iters" => cfg.beamform_k_iters = parse(key, v)?,
            "beamform.loading" => cfg.beamform_loading = parse(key, v)?,
            "adapt.f0" => cfg.adapt_speaker.f0 = parse(key, v)?,
            "adapt.rolloff" => cfg.adapt_speaker.rolloff = parse(key, v)?,
            "adapt.brightness" => cfg.adapt_speaker.brightness = parse(key, v)?,
            "adapt.utterances" => cfg.adapt_utterances = parse(key, v)?,
            "adapt.heldout" => cfg.adapt_heldout = parse(key, v)?,
            "adapt.lr" => cfg.adapt_lr = parse(key, v)?,
            "adapt.epochs" => cfg.adapt_epochs = parse(key, v)?,
            "adapt.target_mode" => {
                cfg.adapt_target_mode = match v.as_str() {
                    "oracle" => TargetMode::Oracle,
                    "first_pass_argmax" => TargetMode::FirstPassArgmax,
                    other => {
                        return Err(CliError::Validation(format!(
                            "unknown target mode {other:?} (oracle | first_pass_argmax)"
                        )))
                    }
                }
            }
            "gradcheck.seeds" => cfg.gradcheck_seeds = parse(key, v)?,
            "gradcheck.eps" => cfg.gradcheck_eps = parse(key, v)?,
            "gradcheck.tol" => cfg.gradcheck_tol = parse(key, v)?,
            "paths.out_dir" => cfg.out_dir = PathBuf::from(v),
            "paths.mask_checkpoint" => cfg.mask_checkpoint = Some(PathBuf::from(v)),
            "paths.am_checkpoint" => cfg.am_checkpoint = Some(PathBuf::from(v)),
            "seeds.master" => cfg.master_seed = parse(key, v)?,
            other => {
                return Err(CliError::Validation(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
    }

    // splice the speaker roster
    if let Some(f0s) = speaker_f0s {
        let n = f0s.len();
        let rolloffs = speaker_rolloffs.unwrap_or_else(|| vec![0.85; n]);
        let brightness = speaker_brightness.unwrap_or_else(|| vec![3000.0; n]);
        if rolloffs.len() != n || brightness.len() != n {
            return Err(CliError::Validation(
                "speakers.f0s / rolloffs / brightness must have equal length".into(),
            ));
        }
        cfg.speakers = f0s
            .into_iter()
            .zip(rolloffs)
            .zip(brightness)
            .map(|((f0, rolloff), brightness)| SpeakerTuple {
                f0,
                rolloff,
                brightness,
            })
            .collect();
    } else if speaker_rolloffs.is_some() || speaker_brightness.is_some() {
        return Err(CliError::Validation(
            "speakers.rolloffs/brightness given without speakers.f0s".into(),
        ));
    }

    cfg.stft
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    if cfg.speakers.is_empty() {
        return Err(CliError::Validation("speaker roster is empty".into()));
    }
    Ok(cfg)
}

fn parse_noise(v: &str) -> Result<NoiseKind, CliError> {
    match v {
        "diffuse_white" => Ok(NoiseKind::DiffuseWhite),
        "coherent_point" => Ok(NoiseKind::CoherentPoint),
        "babble_mix" => Ok(NoiseKind::BabbleMix),
        other => Err(CliError::Validation(format!(
            "unknown noise kind {other:?} (diffuse_white | coherent_point | babble_mix)"
        ))),
    }
}
