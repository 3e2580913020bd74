//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use maskbeam::adapt::{self, AdaptConfig, System};
use maskbeam::am::{am_train, am_train_from, AmConfig, AmExample};
use maskbeam::beamform::{self, CovarianceKind};
use maskbeam::checkpoint;
use maskbeam::grad;
use maskbeam::linalg::{ComplexMatrix, RealMatrix};
use maskbeam::maskestim::{self, MaskNetConfig};
use maskbeam::nn::ParamStore;
use maskbeam::matdump;
use maskbeam::pipeline::PipelineConfig;
use maskbeam::rng::Rng;
use maskbeam::signal::{istft, log_mel, stft, ComplexSpectrogram, MelBank};
use maskbeam::sim::{self, make_scene, Scene, SceneConfig, SpeakerProfile};
use maskbeam::wav::{read_wav, write_wav, WavEncoding};

use crate::config::{RunConfig, SpeakerTuple};
use crate::CliError;

fn profile(t: &SpeakerTuple) -> SpeakerProfile {
    SpeakerProfile::new(t.f0, t.rolloff, t.brightness)
}

fn scene_config(run: &RunConfig, speaker: &SpeakerTuple, seed: u64) -> SceneConfig {
    SceneConfig {
        n_channels: run.scene_channels,
        duration_s: run.scene_duration,
        snr_db: run.scene_snr_db,
        speaker: profile(speaker),
        noise_kind: run.scene_noise,
        n_classes: run.scene_classes,
        seed,
        stft: run.stft,
    }
}

fn ensure_out_dir(run: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&run.out_dir)
        .map_err(|e| CliError::Validation(format!("{}: {e}", run.out_dir.display())))?;
    Ok(())
}

fn masknet_config(run: &RunConfig) -> MaskNetConfig {
    MaskNetConfig {
        input_dim: run.stft.n_bins(),
        hidden_dims: run.masknet_hidden.clone(),
        recurrent_first_layer: run.masknet_recurrent,
        seed: run.masknet_seed,
    }
}

fn am_config(run: &RunConfig) -> AmConfig {
    AmConfig {
        n_states: run.scene_classes,
        context: run.am_context,
        hidden_dims: run.am_hidden.clone(),
        feat_dim: run.n_mels,
        seed: run.am_seed,
    }
}

fn classes_matrix(scene: &Scene) -> RealMatrix {
    RealMatrix::from_fn(1, scene.classes.len(), |_, t| scene.classes.states[t] as f64)
}

/// `simulate`: render scenes, write multichannel WAVs, oracle sidecar
/// dumps and a manifest.
pub fn simulate(run: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(run)?;
    let mut root = Rng::new(run.master_seed);
    let mut manifest = String::new();
    for i in 0..run.scene_count {
        let speaker = &run.speakers[i % run.speakers.len()];
        let seed = root.fork(i as u64).next_u64();
        let cfg = scene_config(run, speaker, seed);
        let scene = make_scene(&cfg)?;
        let stem = format!("scene_{i:04}");
        let wav_path = run.out_dir.join(format!("{stem}.wav"));
        write_wav(&wav_path, &scene.y_wave, run.stft.sample_rate, WavEncoding::Float32)?;
        matdump::write_real(
            &run.out_dir.join(format!("{stem}.speech_mask.mat")),
            &scene.ideal_masks.speech,
        )?;
        matdump::write_real(
            &run.out_dir.join(format!("{stem}.noise_mask.mat")),
            &scene.ideal_masks.noise,
        )?;
        matdump::write_real(
            &run.out_dir.join(format!("{stem}.classes.mat")),
            &classes_matrix(&scene),
        )?;
        manifest.push_str(&format!(
            "scene={stem}.wav seed={seed} snr_db={} f0={} noise={:?} channels={} frames={} measured_snr_db={:.4}\n",
            cfg.snr_db,
            speaker.f0,
            cfg.noise_kind,
            cfg.n_channels,
            scene.y.frames(),
            sim::measured_snr_db(&scene),
        ));
        println!(
            "wrote {stem}.wav ({} ch, {} frames, snr {:.2} dB)",
            cfg.n_channels,
            scene.y.frames(),
            sim::measured_snr_db(&scene)
        );
    }
    std::fs::write(run.out_dir.join("manifest.txt"), manifest)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    println!("ok: {} scenes in {}", run.scene_count, run.out_dir.display());
    Ok(())
}

fn pretrain_scenes(run: &RunConfig) -> Result<Vec<Scene>, CliError> {
    let mut root = Rng::new(run.master_seed ^ 0x70726574);
    let mut scenes = Vec::new();
    let ladder = &run.pretrain_snrs_db;
    let mut idx = 0usize;
    for speaker in &run.speakers {
        for _ in 0..run.pretrain_scenes_per_speaker {
            let seed = root.next_u64();
            let mut cfg = scene_config(run, speaker, seed);
            if !ladder.is_empty() {
                cfg.snr_db = ladder[idx % ladder.len()];
                idx += 1;
            }
            scenes.push(make_scene(&cfg)?);
        }
    }
    Ok(scenes)
}

/// Log-mel features of the GEV+BAN-enhanced signal under the given mask
/// network.
fn enhanced_features(
    y: &ComplexSpectrogram,
    mask_params: &ParamStore,
    mask_cfg: &MaskNetConfig,
    mel: &MelBank,
    k_iters: usize,
    loading: f64,
) -> Result<RealMatrix, CliError> {
    let channels = y.channels();
    let mut speech_masks = Vec::with_capacity(channels);
    let mut noise_masks = Vec::with_capacity(channels);
    for m in 0..channels {
        let pair = maskestim::forward(&y.magnitude(m), mask_params, mask_cfg)?;
        speech_masks.push(pair.speech);
        noise_masks.push(pair.noise);
    }
    let pooled_speech = maskestim::median_mask(&speech_masks)?;
    let pooled_noise = maskestim::median_mask(&noise_masks)?;
    let cov_xx = beamform::spatial_covariance(y, &pooled_speech, CovarianceKind::Speech)?;
    let cov_nn = beamform::spatial_covariance(y, &pooled_noise, CovarianceKind::Noise)?;
    let w_gev = beamform::gev_vector(&cov_xx, &cov_nn, k_iters, loading)?;
    let w_opt = beamform::ban_scale(&w_gev, &cov_nn)?;
    let enhanced = beamform::apply_beamformer(&w_opt, y)?;
    let power = enhanced.power(0);
    let mut feats = RealMatrix::zeros(power.rows(), mel.n_mels());
    for t in 0..power.rows() {
        feats.row_mut(t).copy_from_slice(&log_mel(power.row(t), mel)?);
    }
    Ok(feats)
}

/// `pretrain`: supervised mask-network training on ideal masks,
/// acoustic-model training on unprocessed single channels, then a joint
/// stage that adapts the classifier to the beamformed feature
/// distribution. Writes both checkpoints.
pub fn pretrain(run: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(run)?;
    let scenes = pretrain_scenes(run)?;
    println!("pretraining on {} scenes", scenes.len());

    let mask_cfg = masknet_config(run);
    let mut mask_params = maskestim::init_params(&mask_cfg)?;
    let report = maskestim::pretrain_supervised(
        &scenes,
        &mut mask_params,
        &mask_cfg,
        run.pretrain_epochs,
        run.pretrain_lr,
    )?;
    let first = report.epoch_loss.first().copied().unwrap_or(f64::NAN);
    let last = report.epoch_loss.last().copied().unwrap_or(f64::NAN);

    let am_cfg = am_config(run);
    let mel = MelBank::new(run.n_mels, &run.stft)?;
    let mut dataset = Vec::new();
    for scene in &scenes {
        for m in 0..scene.y.channels() {
            let power = scene.y.power(m);
            let mut feats = RealMatrix::zeros(power.rows(), run.n_mels);
            for t in 0..power.rows() {
                feats.row_mut(t).copy_from_slice(&log_mel(power.row(t), &mel)?);
            }
            dataset.push(AmExample {
                features: feats,
                targets: scene.classes.clone(),
            });
        }
    }
    let (mut am_params, am_losses) = am_train(&dataset, &am_cfg, run.am_epochs, run.am_lr)?;

    // Joint stage: with the mask estimator fixed, continue classifier
    // training on the front-end's actual output so the frozen model is
    // in-domain during adaptation.
    let mut joint_losses = Vec::new();
    if run.joint_epochs > 0 {
        let mut joint_set = Vec::with_capacity(scenes.len());
        for scene in &scenes {
            joint_set.push(AmExample {
                features: enhanced_features(
                    &scene.y,
                    &mask_params,
                    &mask_cfg,
                    &mel,
                    run.beamform_k_iters,
                    run.beamform_loading,
                )?,
                targets: scene.classes.clone(),
            });
        }
        joint_losses =
            am_train_from(&mut am_params, &joint_set, &am_cfg, run.joint_epochs, run.am_lr)?;
    }

    let mask_path = run.out_dir.join("masknet.ckpt");
    let am_path = run.out_dir.join("am.ckpt");
    checkpoint::save_masknet(&mask_path, &mask_cfg, &mask_params)?;
    checkpoint::save_am(&am_path, &am_cfg, &am_params)?;

    println!("mask_bce_initial={first:.6}");
    println!("mask_bce_final={last:.6}");
    println!("am_ce_initial={:.6}", am_losses.first().unwrap_or(&f64::NAN));
    println!("am_ce_final={:.6}", am_losses.last().unwrap_or(&f64::NAN));
    if !joint_losses.is_empty() {
        println!("joint_ce_initial={:.6}", joint_losses.first().unwrap());
        println!("joint_ce_final={:.6}", joint_losses.last().unwrap());
    }
    println!("mask_checkpoint={}", mask_path.display());
    println!("am_checkpoint={}", am_path.display());
    Ok(())
}

fn load_system(run: &RunConfig) -> Result<System, CliError> {
    let mask_path = run
        .mask_checkpoint
        .clone()
        .unwrap_or_else(|| run.out_dir.join("masknet.ckpt"));
    let am_path = run
        .am_checkpoint
        .clone()
        .unwrap_or_else(|| run.out_dir.join("am.ckpt"));
    let (mask_cfg, mask_params) = checkpoint::load_masknet(&mask_path)?;
    let (am_cfg, mut am_params) = checkpoint::load_am(&am_path)?;
    if mask_cfg.input_dim != run.stft.n_bins() {
        return Err(CliError::Validation(format!(
            "mask checkpoint expects {} bins but the STFT config yields {}",
            mask_cfg.input_dim,
            run.stft.n_bins()
        )));
    }
    if am_cfg.feat_dim != run.n_mels {
        return Err(CliError::Validation(format!(
            "am checkpoint expects {} features but features.n_mels is {}",
            am_cfg.feat_dim, run.n_mels
        )));
    }
    am_params.freeze();
    let mel = MelBank::new(run.n_mels, &run.stft)?;
    Ok(System {
        mask_params,
        am_params,
        pipeline: PipelineConfig {
            mel,
            masknet: mask_cfg,
            am: am_cfg,
            k_iters: run.beamform_k_iters,
            loading: run.beamform_loading,
        },
    })
}

/// `beamform`: multichannel WAV in, enhanced WAV out, optional dumps of
/// the pooled masks and per-bin weights. A single-channel input passes
/// through the analysis/synthesis chain unmodified (selector weight 1).
pub fn beamform_wav(
    run: &RunConfig,
    input: &Path,
    output: &Path,
    dump_dir: Option<&Path>,
) -> Result<(), CliError> {
    let wave = read_wav(input, run.stft.sample_rate)?;
    let spec = stft(&wave, &run.stft)?;
    let channels = spec.channels();

    let enhanced: ComplexSpectrogram;
    let mut weight_dump: Option<(ComplexMatrix, RealMatrix)> = None;
    let mut mask_dump: Option<(RealMatrix, RealMatrix)> = None;

    if channels == 1 {
        enhanced = spec.clone();
    } else {
        let system = load_system(run)?;
        let mut speech_masks = Vec::with_capacity(channels);
        let mut noise_masks = Vec::with_capacity(channels);
        for m in 0..channels {
            let pair = maskestim::forward(
                &spec.magnitude(m),
                &system.mask_params,
                &system.pipeline.masknet,
            )?;
            speech_masks.push(pair.speech);
            noise_masks.push(pair.noise);
        }
        let pooled_speech = maskestim::median_mask(&speech_masks)?;
        let pooled_noise = maskestim::median_mask(&noise_masks)?;
        let cov_xx = beamform::spatial_covariance(&spec, &pooled_speech, CovarianceKind::Speech)?;
        let cov_nn = beamform::spatial_covariance(&spec, &pooled_noise, CovarianceKind::Noise)?;
        let w_gev =
            beamform::gev_vector(&cov_xx, &cov_nn, run.beamform_k_iters, run.beamform_loading)?;
        let w_opt = beamform::ban_scale(&w_gev, &cov_nn)?;
        enhanced = beamform::apply_beamformer(&w_opt, &spec)?;

        let bins = spec.bins();
        let weights_mat = ComplexMatrix::from_fn(bins, channels, |f, m| w_opt.w[f][m]);
        let gains = RealMatrix::from_fn(1, bins, |_, f| {
            w_opt.ban_scale.as_ref().map(|g| g[f]).unwrap_or(0.0)
        });
        weight_dump = Some((weights_mat, gains));
        mask_dump = Some((pooled_speech, pooled_noise));
    }

    let out_wave = istft(&enhanced, &run.stft)?;
    let out_mat = RealMatrix::from_fn(1, out_wave.len(), |_, t| out_wave[t]);
    write_wav(output, &out_mat, run.stft.sample_rate, WavEncoding::Pcm16)?;

    if let Some(dir) = dump_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Validation(e.to_string()))?;
        if let Some((speech, noise)) = &mask_dump {
            matdump::write_real(&dir.join("speech_mask.mat"), speech)?;
            matdump::write_real(&dir.join("noise_mask.mat"), noise)?;
        }
        if let Some((weights, gains)) = &weight_dump {
            matdump::write_complex(&dir.join("weights.mat"), weights)?;
            matdump::write_real(&dir.join("ban_gains.mat"), gains)?;
        }
    }
    println!(
        "ok: {} ({} ch, {} frames) -> {}",
        input.display(),
        channels,
        spec.frames(),
        output.display()
    );
    Ok(())
}

fn adapt_scene_sets(run: &RunConfig) -> Result<(Vec<Scene>, Vec<Scene>), CliError> {
    let mut root = Rng::new(run.master_seed ^ 0x61646170);
    let mut adapt_scenes = Vec::new();
    for _ in 0..run.adapt_utterances {
        let seed = root.next_u64();
        adapt_scenes.push(make_scene(&scene_config(run, &run.adapt_speaker, seed))?);
    }
    let mut heldout = Vec::new();
    for _ in 0..run.adapt_heldout {
        let seed = root.next_u64();
        heldout.push(make_scene(&scene_config(run, &run.adapt_speaker, seed))?);
    }
    Ok((adapt_scenes, heldout))
}

/// `adapt`: two-pass adaptation of the mask estimator toward the held-out
/// speaker, reporting losses and held-out metrics, writing the adapted
/// checkpoint.
pub fn adapt_cmd(run: &RunConfig) -> Result<(), CliError> {
    ensure_out_dir(run)?;
    let system = load_system(run)?;
    let (adapt_scenes, heldout) = adapt_scene_sets(run)?;

    let am_digest_before = system.am_params.digest();
    let targets = adapt::first_pass_targets(&adapt_scenes, &system, run.adapt_target_mode)?;
    let cfg = AdaptConfig {
        lr: run.adapt_lr,
        epochs: run.adapt_epochs,
        k_iters: run.beamform_k_iters,
        loading: run.beamform_loading,
        target_mode: run.adapt_target_mode,
    };
    let pre_heldout = adapt::evaluate(&system, &heldout)?;
    let (adapted_params, report) =
        adapt::adapt_mask_estimator(&adapt_scenes, &targets, &cfg, &system)?;
    let adapted = System {
        mask_params: adapted_params.clone(),
        am_params: system.am_params.clone(),
        pipeline: system.pipeline.clone(),
    };
    let post_heldout = adapt::evaluate(&adapted, &heldout)?;
    assert_eq!(system.am_params.digest(), am_digest_before);

    let ckpt = run.out_dir.join("masknet_adapted.ckpt");
    checkpoint::save_masknet(&ckpt, &system.pipeline.masknet, &adapted_params)?;

    let mut text = String::new();
    text.push_str("epoch  loss\n");
    for (i, l) in report.epoch_loss.iter().enumerate() {
        text.push_str(&format!("{i:>5}  {l:.6}\n"));
    }
    text.push_str(&format!(
        "\n{:<22} {:>12} {:>12}\n",
        "metric", "pre", "post"
    ));
    text.push_str(&format!(
        "{:<22} {:>12.6} {:>12.6}\n",
        "adapt_ce", report.pre.mean_ce, report.post.mean_ce
    ));
    text.push_str(&format!(
        "{:<22} {:>12.6} {:>12.6}\n",
        "heldout_ce", pre_heldout.mean_ce, post_heldout.mean_ce
    ));
    text.push_str(&format!(
        "{:<22} {:>12.4} {:>12.4}\n",
        "heldout_frame_acc", pre_heldout.frame_accuracy, post_heldout.frame_accuracy
    ));
    text.push_str(&format!(
        "{:<22} {:>12.4} {:>12.4}\n",
        "heldout_snr_gain_db", pre_heldout.mean_snr_gain_db, post_heldout.mean_snr_gain_db
    ));
    print!("{text}");

    // machine-readable block
    let mut kv = String::new();
    kv.push_str(&format!("utterances={}\n", report.utterances));
    kv.push_str(&format!("epochs={}\n", report.epoch_loss.len()));
    kv.push_str(&format!("adapt_ce_pre={:.8}\n", report.pre.mean_ce));
    kv.push_str(&format!("adapt_ce_post={:.8}\n", report.post.mean_ce));
    kv.push_str(&format!("heldout_ce_pre={:.8}\n", pre_heldout.mean_ce));
    kv.push_str(&format!("heldout_ce_post={:.8}\n", post_heldout.mean_ce));
    kv.push_str(&format!(
        "heldout_acc_pre={:.8}\nheldout_acc_post={:.8}\n",
        pre_heldout.frame_accuracy, post_heldout.frame_accuracy
    ));
    kv.push_str(&format!(
        "heldout_snr_gain_pre={:.8}\nheldout_snr_gain_post={:.8}\n",
        pre_heldout.mean_snr_gain_db, post_heldout.mean_snr_gain_db
    ));
    kv.push_str(&format!("am_digest={:016x}\n", system.am_params.digest()));
    kv.push_str(&format!("adapted_checkpoint={}\n", ckpt.display()));
    print!("{kv}");
    let mut report_file = text;
    report_file.push('\n');
    report_file.push_str(&kv);
    std::fs::write(run.out_dir.join("adapt_report.txt"), report_file)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(())
}

/// `eval`: metrics of the current system over freshly simulated scenes.
pub fn eval_cmd(run: &RunConfig) -> Result<(), CliError> {
    let system = load_system(run)?;
    let mut root = Rng::new(run.master_seed ^ 0x6576616c);
    let mut scenes = Vec::new();
    for i in 0..run.scene_count {
        let speaker = &run.speakers[i % run.speakers.len()];
        let seed = root.next_u64();
        scenes.push(make_scene(&scene_config(run, speaker, seed))?);
    }
    let metrics = adapt::evaluate(&system, &scenes)?;
    println!("utterances={}", metrics.utterances);
    println!("frame_accuracy={:.6}", metrics.frame_accuracy);
    println!("mean_snr_gain_db={:.6}", metrics.mean_snr_gain_db);
    println!("mean_ce={:.6}", metrics.mean_ce);
    Ok(())
}

/// `gradcheck`: run the finite-difference harness over every registered
/// op; exit nonzero when any exceeds the tolerance.
pub fn gradcheck(run: &RunConfig) -> Result<(), CliError> {
    let mut breach = false;
    println!(
        "{:<18} {:>6} {:>10} {:>12}  status",
        "op", "seeds", "entries", "max_rel_err"
    );
    for op in grad::CHECKABLE_OPS {
        let mut worst = 0.0f64;
        let mut entries = 0;
        for seed in 0..run.gradcheck_seeds {
            let report = grad::finite_diff_check(op, seed, run.gradcheck_eps)?;
            worst = worst.max(report.max_rel_err);
            entries = report.tested_entries;
        }
        let ok = worst < run.gradcheck_tol;
        breach |= !ok;
        println!(
            "{:<18} {:>6} {:>10} {:>12.3e}  {}",
            op,
            run.gradcheck_seeds,
            entries,
            worst,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if breach {
        return Err(CliError::GradcheckBreach);
    }
    println!("gradcheck ok (tol {:.1e})", run.gradcheck_tol);
    Ok(())
}

/// `dump`: print a binary matrix dump as text.
pub fn dump(path: &Path, limit: usize) -> Result<(), CliError> {
    match matdump::read_dump(path)? {
        matdump::MatrixDump::Real(m) => {
            println!("real matrix {}x{}", m.rows(), m.cols());
            print_rows(m.rows(), limit, |i| {
                m.row(i)
                    .iter()
                    .map(|v| format!("{v:>12.6}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            });
        }
        matdump::MatrixDump::Complex(m) => {
            println!("complex matrix {}x{}", m.rows(), m.cols());
            print_rows(m.rows(), limit, |i| {
                (0..m.cols())
                    .map(|j| {
                        let z = m[(i, j)];
                        format!("{:>10.4}{:+.4}i", z.re, z.im)
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            });
        }
    }
    Ok(())
}

fn print_rows(rows: usize, limit: usize, fmt: impl Fn(usize) -> String) {
    let shown = rows.min(limit);
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for i in 0..shown {
        let _ = writeln!(lock, "{}", fmt(i));
    }
    if shown < rows {
        let _ = writeln!(lock, "... ({} more rows; use --rows N)", rows - shown);
    }
}

/// Resolve a positional argument path, for error messages.
pub fn arg_path(args: &[String], idx: usize, what: &str) -> Result<PathBuf, CliError> {
    args.get(idx)
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Parse(format!("missing {what} argument")))
}
