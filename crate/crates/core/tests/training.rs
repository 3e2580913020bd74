//! Training-quality checks: thresholds the learning stages must clear on
//! fixed seeds (mask accuracy, loss halving, classifier accuracy, and
//! first-pass target agreement).

mod common;

use maskbeam::adapt::{self, System, TargetMode};
use maskbeam::am::{am_train, AmConfig, AmExample};
use maskbeam::linalg::RealMatrix;
use maskbeam::maskestim::{self, MaskNetConfig};
use maskbeam::nn::ParamStore;
use maskbeam::pipeline::PipelineConfig;
use maskbeam::rng::Rng;
use maskbeam::signal::{log_mel, MelBank, StftConfig};
use maskbeam::sim::{make_scene, NoiseKind, Scene, SceneConfig, SpeakerProfile};

fn desk_stft() -> StftConfig {
    StftConfig {
        win_len: 128,
        hop: 64,
        dft_size: 128,
        ..StftConfig::default()
    }
}

fn roster_scene(idx: usize, seed: u64, snr_db: f64) -> Scene {
    let roster = [
        (146.0, 0.85, 3000.0),
        (185.0, 0.88, 2600.0),
        (233.0, 0.82, 3400.0),
        (290.0, 0.86, 2900.0),
    ];
    let (f0, ro, br) = roster[idx % roster.len()];
    make_scene(&SceneConfig {
        n_channels: 4,
        duration_s: 0.7,
        snr_db,
        speaker: SpeakerProfile::new(f0, ro, br),
        noise_kind: NoiseKind::CoherentPoint,
        n_classes: 5,
        seed,
        stft: desk_stft(),
    })
    .unwrap()
}

#[test]
fn pretraining_halves_bce_and_masks_track_ideal() {
    let mut root = Rng::new(0x7e57);
    // 20 scenes, 30 epochs: the documented loss-halving bar
    let scenes: Vec<Scene> = (0..20)
        .map(|i| roster_scene(i, root.next_u64(), [0.0, 10.0][i % 2]))
        .collect();
    let cfg = MaskNetConfig::new(desk_stft().n_bins(), vec![64, 96], 3);
    let mut params = maskestim::init_params(&cfg).unwrap();

    // measure against the training targets before and after the run
    let bce_of = |params: &maskbeam::nn::ParamStore| -> f64 {
        let mut total = 0.0;
        let mut count = 0;
        for scene in &scenes {
            let target =
                maskbeam::sim::ideal_masks_thresholded(&scene.x, &scene.n, 0.5).unwrap();
            for m in 0..scene.y.channels() {
                let pred =
                    maskestim::forward(&scene.y.magnitude(m), params, &cfg).unwrap();
                total += maskestim::mask_bce(&pred, &target);
                count += 1;
            }
        }
        total / count as f64
    };
    let initial = bce_of(&params);
    let report =
        maskestim::pretrain_supervised(&scenes, &mut params, &cfg, 30, 1.5).unwrap();
    assert_eq!(report.epoch_loss.len(), 30);
    let last = bce_of(&params);
    assert!(
        last < 0.5 * initial,
        "final BCE {last:.4} not below half of initial {initial:.4}"
    );

    // held-out scene: pooled mask within 0.15 mean absolute error of ideal
    let heldout = roster_scene(1, root.next_u64(), 5.0);
    let mut speech = Vec::new();
    for m in 0..heldout.y.channels() {
        let pair = maskestim::forward(&heldout.y.magnitude(m), &params, &cfg).unwrap();
        speech.push(pair.speech);
    }
    let pooled = maskestim::median_mask(&speech).unwrap();
    let mae: f64 = pooled
        .data()
        .iter()
        .zip(heldout.ideal_masks.speech.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / pooled.data().len() as f64;
    assert!(mae < 0.15, "held-out mask MAE {mae:.3}");
}

#[test]
fn zero_lr_pretraining_changes_nothing() {
    let mut root = Rng::new(0x1d1e);
    let scenes = vec![roster_scene(0, root.next_u64(), 5.0)];
    let cfg = MaskNetConfig::new(desk_stft().n_bins(), vec![8], 5);
    let mut params = maskestim::init_params(&cfg).unwrap();
    let before = params.flatten();
    maskestim::pretrain_supervised(&scenes, &mut params, &cfg, 3, 0.0).unwrap();
    assert_eq!(params.flatten(), before);
}

#[test]
fn am_reaches_90_percent_on_clean_features() {
    // clean synthetic features: high-SNR scenes, single channels
    let mut root = Rng::new(0xC1EA);
    let mel = MelBank::new(24, &desk_stft()).unwrap();
    let mut dataset = Vec::new();
    for i in 0..8 {
        let scene = roster_scene(i, root.next_u64(), 40.0);
        for m in 0..scene.y.channels() {
            let power = scene.y.power(m);
            let mut feats = RealMatrix::zeros(power.rows(), 24);
            for t in 0..power.rows() {
                feats
                    .row_mut(t)
                    .copy_from_slice(&log_mel(power.row(t), &mel).unwrap());
            }
            dataset.push(AmExample {
                features: feats,
                targets: scene.classes.clone(),
            });
        }
    }
    let cfg = AmConfig {
        n_states: 5,
        context: 1,
        hidden_dims: vec![64],
        feat_dim: 24,
        seed: 9,
    };
    let (params, losses) = am_train(&dataset, &cfg, 60, 0.15).unwrap();
    assert!(losses.last().unwrap() < &losses[0]);
    let mut acc = 0.0;
    for ex in &dataset {
        let p = maskbeam::am::am_forward(&ex.features, &params, &cfg).unwrap();
        acc += maskbeam::am::frame_accuracy(&p, &ex.targets).unwrap();
    }
    acc /= dataset.len() as f64;
    assert!(acc > 0.9, "train frame accuracy {acc:.3}");
}

#[test]
fn first_pass_targets_agree_with_oracle_on_easy_scenes() {
    // a modest but fully trained system, then first-pass decoding on
    // easy (high SNR), in-roster scenes
    let stft = desk_stft();
    let mel = MelBank::new(24, &stft).unwrap();
    let mut root = Rng::new(0xFA57);
    let train: Vec<Scene> = (0..8)
        .map(|i| roster_scene(i, root.next_u64(), [0.0, 10.0, 20.0][i % 3]))
        .collect();

    let mask_cfg = MaskNetConfig::new(stft.n_bins(), vec![64, 96], 11);
    let mut mask_params = maskestim::init_params(&mask_cfg).unwrap();
    maskestim::pretrain_supervised(&train, &mut mask_params, &mask_cfg, 60, 1.5).unwrap();

    let am_cfg = AmConfig {
        n_states: 5,
        context: 1,
        hidden_dims: vec![48],
        feat_dim: 24,
        seed: 12,
    };
    let mut dataset = Vec::new();
    for scene in &train {
        for m in 0..scene.y.channels() {
            let power = scene.y.power(m);
            let mut feats = RealMatrix::zeros(power.rows(), 24);
            for t in 0..power.rows() {
                feats
                    .row_mut(t)
                    .copy_from_slice(&log_mel(power.row(t), &mel).unwrap());
            }
            dataset.push(AmExample {
                features: feats,
                targets: scene.classes.clone(),
            });
        }
    }
    let (mut am_params, _) = am_train(&dataset, &am_cfg, 40, 0.1).unwrap();
    // adapt the classifier to beamformed features (joint stage)
    let pipeline = PipelineConfig {
        mel,
        masknet: mask_cfg,
        am: am_cfg.clone(),
        k_iters: 5,
        loading: 1e-6,
    };
    let mut joint = Vec::new();
    for scene in &train {
        let sys = System {
            mask_params: mask_params.clone(),
            am_params: am_params.clone(),
            pipeline: pipeline.clone(),
        };
        let (_, record) = sys.forward(scene, &scene.classes).unwrap();
        joint.push(AmExample {
            features: record.features().clone(),
            targets: scene.classes.clone(),
        });
    }
    maskbeam::am::am_train_from(&mut am_params, &joint, &am_cfg, 20, 0.1).unwrap();
    am_params.freeze();
    let system = System {
        mask_params,
        am_params,
        pipeline,
    };

    // easy evaluation scenes: in-roster speakers at 20 dB
    let easy: Vec<Scene> = (0..4).map(|i| roster_scene(i, root.next_u64(), 20.0)).collect();
    let targets = adapt::first_pass_targets(&easy, &system, TargetMode::FirstPassArgmax).unwrap();
    let mut agree = 0usize;
    let mut total = 0usize;
    for (scene, t) in easy.iter().zip(&targets) {
        assert_eq!(t.len(), scene.classes.len());
        assert!(t.states.iter().all(|&s| s < 5));
        for (a, b) in t.states.iter().zip(&scene.classes.states) {
            agree += usize::from(a == b);
            total += 1;
        }
    }
    let rate = agree as f64 / total as f64;
    assert!(rate > 0.7, "argmax/oracle agreement {rate:.3}");

    // oracle mode passes the simulator labels through untouched
    let oracle = adapt::first_pass_targets(&easy, &system, TargetMode::Oracle).unwrap();
    for (t, scene) in oracle.iter().zip(&easy) {
        assert_eq!(t, &scene.classes);
    }

    // an uninitialized system is a state error
    let empty = System {
        mask_params: ParamStore::new(),
        am_params: ParamStore::new(),
        pipeline: system.pipeline.clone(),
    };
    assert!(matches!(
        adapt::first_pass_targets(&easy, &empty, TargetMode::Oracle),
        Err(maskbeam::Error::StateError(_))
    ));

    // ideal masks fed directly never do worse than the learned ones
    let metrics_learned = adapt::evaluate(&system, &easy).unwrap();
    let mut ideal_gain = 0.0;
    for scene in &easy {
        let cov_xx = maskbeam::beamform::spatial_covariance(
            &scene.y,
            &scene.ideal_masks.speech,
            maskbeam::beamform::CovarianceKind::Speech,
        )
        .unwrap();
        let cov_nn = maskbeam::beamform::spatial_covariance(
            &scene.y,
            &scene.ideal_masks.noise,
            maskbeam::beamform::CovarianceKind::Noise,
        )
        .unwrap();
        let w_gev = maskbeam::beamform::gev_vector(&cov_xx, &cov_nn, 5, 1e-6).unwrap();
        let w = maskbeam::beamform::ban_scale(&w_gev, &cov_nn).unwrap();
        let enhanced = maskbeam::beamform::apply_beamformer(&w, &scene.y).unwrap();
        ideal_gain += maskbeam::sim::snr_gain(&enhanced, scene, &w).unwrap();
    }
    ideal_gain /= easy.len() as f64;
    assert!(
        ideal_gain >= metrics_learned.mean_snr_gain_db,
        "ideal {ideal_gain:.2} dB vs learned {:.2} dB",
        metrics_learned.mean_snr_gain_db
    );
}
