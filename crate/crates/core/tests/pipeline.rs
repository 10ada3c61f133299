use sscgan::dataset::{write_dataset, Dataset, TsdfOptions};
use sscgan::metrics::{evaluate, majority_baseline, Region};
use sscgan::nets::checkpoint::{file_hash, Checkpoint};
use sscgan::probe::{noise_curve, ProbeTarget};
use sscgan::scenegen::SceneConfig;
use sscgan::train::{predict_labels, train, DiscriminatorArch, GeneratorArch, TrainConfig, Trainer};
use sscgan::voxcore::{GridSpec, LabelVolume};

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        steps: 3,
        checkpoint_every: 0,
        generator: GeneratorArch {
            widths: vec![4, 4, 4, 8],
            dilations: vec![1, 2],
        },
        discriminator: DiscriminatorArch {
            widths: vec![4, 4, 4, 4],
            fc_widths: vec![8, 4],
            ..DiscriminatorArch::default()
        },
        ..TrainConfig::default()
    }
}

fn scenes() -> SceneConfig {
    SceneConfig::for_grid(GridSpec::cube(12, 4))
}

#[test]
fn files_on_disk_load_back_to_the_synthesized_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = TsdfOptions::default();
    write_dataset(&scenes(), &[5, 6, 7], tmp.path(), None).unwrap();
    let loaded = Dataset::load(tmp.path().join("manifest.json"), &opts).unwrap();
    let direct = Dataset::synthesize(&scenes(), &[5, 6, 7], &opts).unwrap();
    assert_eq!(loaded.len(), 3);
    for (a, b) in loaded.samples.iter().zip(&direct.samples) {
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.labels, b.labels);
        // Depth is stored in whole millimeters, so the TSDF may move slightly.
        let worst = a.tsdf.values.iter().zip(&b.tsdf.values).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(worst < 0.05, "tsdf drift {worst}");
    }
}

#[test]
fn train_evaluate_probe_on_a_tiny_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let data = Dataset::synthesize(&scenes(), &[0, 1, 2, 3], &TsdfOptions::default()).unwrap();
    let config = small_config();
    let summary = train(&config, &data, tmp.path(), None).unwrap();
    assert_eq!(summary.stats.len(), 3);
    assert!(summary.stats.iter().all(|s| s.mce_per_voxel.is_finite() && s.disc_loss.is_finite()));
    assert!(summary.final_checkpoint.ends_with("step_000003.ssck"));

    let ck = Checkpoint::load(&summary.final_checkpoint).unwrap();
    let t = Trainer::from_checkpoint(&ck).unwrap();
    assert_eq!(t.step, 3);
    let preds = predict_labels(&t.gen, &t.gen_params, &data.samples).unwrap();
    for (p, s) in preds.iter().zip(&data.samples) {
        assert_eq!(p.labels.len(), s.labels.labels.len());
        let r = evaluate(p, &s.labels, Region::Occluded).unwrap();
        assert!((0.0..=1.0).contains(&r.sc_iou));
        let perfect = evaluate(&s.labels, &s.labels, Region::Occluded).unwrap();
        assert_eq!(perfect.sc_iou, 1.0);
        assert_eq!(perfect.ssc_avg, Some(1.0));
    }
    let gts: Vec<&LabelVolume> = data.samples.iter().map(|s| &s.labels).collect();
    let base = majority_baseline(&gts, Region::Occluded).unwrap();
    assert!((0.0..=1.0).contains(&base));

    let target = ProbeTarget::from_checkpoint("tiny", &ck).unwrap();
    let curve = noise_curve(&[target], &data, &[0.0, 0.5], &[1]).unwrap();
    assert_eq!(curve.rows.len(), 2);
    assert!(curve.rows.iter().all(|r| r.mean.is_finite() && r.mean >= 0.0));
}

#[test]
fn identical_seeds_give_identical_checkpoint_files() {
    let data = Dataset::synthesize(&scenes(), &[0, 1, 2], &TsdfOptions::default()).unwrap();
    let config = TrainConfig {
        conditional: false,
        ..small_config()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = train(&config, &data, a.path(), None).unwrap();
    let sb = train(&config, &data, b.path(), None).unwrap();
    assert_eq!(file_hash(&sa.final_checkpoint).unwrap(), file_hash(&sb.final_checkpoint).unwrap());
    let c = tempfile::tempdir().unwrap();
    let other = TrainConfig { seed: 1, ..config };
    let sc = train(&other, &data, c.path(), None).unwrap();
    assert_ne!(file_hash(&sa.final_checkpoint).unwrap(), file_hash(&sc.final_checkpoint).unwrap());
}
