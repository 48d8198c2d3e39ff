//! Cross-module integration tests: emitted datasets round-trip through the
//! BOP loader, evaluation honors detection priors, checkpoints reload, and
//! re-scoring ground-truth poses yields perfect metrics.

use pointpose_core::config::RunConfig;
use pointpose_core::data::Detection;
use pointpose_core::pipeline::{
    emit_synthetic_dataset, evaluate, rescore, train, Checkpoint, Dataset, EvalOptions,
    PredictedPose,
};

fn tiny_cfg() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.synth_pairs = 6;
    cfg.epochs = 2;
    cfg.v_o = 400;
    cfg.v_s = 1200;
    cfg.max_pairs = 128;
    cfg.seed = 11;
    cfg
}

#[test]
fn emitted_bop_dataset_loads_and_trains() {
    let mut cfg = tiny_cfg();
    cfg.synth_pairs = 4;
    let dir = tempfile::tempdir().unwrap();
    emit_synthetic_dataset(&cfg, dir.path()).unwrap();

    let mut bop_cfg = cfg.clone();
    bop_cfg.data_source = pointpose_core::config::DataSource::Bop;
    bop_cfg.epochs = 1;
    let dataset = Dataset::from_bop(dir.path(), &bop_cfg).unwrap();
    assert_eq!(dataset.pairs.len(), 4);
    // diameters come from models_info.json
    for pair in &dataset.pairs {
        assert!(pair.diameter > 50.0 && pair.diameter < 400.0);
        assert!(pair.pixels.is_some());
    }
    // one epoch of training runs through the BOP-loaded pairs
    let outcome = train(&bop_cfg, &dataset, None).unwrap();
    assert_eq!(outcome.epochs.len(), 1);
    assert!(outcome.epochs[0].pairs_used > 0);
}

#[test]
fn checkpoint_roundtrip_preserves_models() {
    let cfg = tiny_cfg();
    let dataset = Dataset::synthetic(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = train(&cfg, &dataset, Some(dir.path())).unwrap();
    let loaded = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(loaded.config_hash, outcome.checkpoint.config_hash);
    let a = outcome.checkpoint.models.get("all").unwrap();
    let b = loaded.models.get("all").unwrap();
    assert_eq!(a.object.weights, b.object.weights);
    assert_eq!(a.scene.biases, b.scene.biases);

    // evaluating with the loaded checkpoint matches the in-memory one
    let options = EvalOptions {
        detections: None,
        indices: Some(vec![0, 1]),
    };
    let r1 = evaluate(&cfg, &outcome.checkpoint, &dataset, &options, None).unwrap();
    let r2 = evaluate(&cfg, &loaded, &dataset, &options, None).unwrap();
    assert_eq!(r1.report.to_json(), r2.report.to_json());
}

#[test]
fn full_image_detections_match_no_prior_run() {
    // detection boxes covering the whole image must be a no-op crop,
    // instance for instance
    let mut cfg = tiny_cfg();
    cfg.synth_pairs = 3;
    let dir = tempfile::tempdir().unwrap();
    emit_synthetic_dataset(&cfg, dir.path()).unwrap();
    let mut bop_cfg = cfg.clone();
    bop_cfg.data_source = pointpose_core::config::DataSource::Bop;
    let dataset = Dataset::from_bop(dir.path(), &bop_cfg).unwrap();
    let outcome = train(&bop_cfg, &dataset, None).unwrap();

    let no_prior = EvalOptions {
        detections: None,
        indices: None,
    };
    let full_dets: Vec<(u32, Detection)> = dataset
        .pairs
        .iter()
        .map(|p| {
            (
                p.image_id,
                Detection::new(0.0, 0.0, 640.0, 480.0, p.object_id, 1.0).unwrap(),
            )
        })
        .collect();
    let with_prior = EvalOptions {
        detections: Some(full_dets),
        indices: None,
    };
    let base = evaluate(&bop_cfg, &outcome.checkpoint, &dataset, &no_prior, None).unwrap();
    let cropped = evaluate(&bop_cfg, &outcome.checkpoint, &dataset, &with_prior, None).unwrap();
    assert_eq!(base.report.instances.len(), cropped.report.instances.len());
    for (a, b) in base
        .report
        .instances
        .iter()
        .zip(&cropped.report.instances)
    {
        assert_eq!(a.add_mm, b.add_mm);
        assert_eq!(a.rre_rad, b.rre_rad);
        assert_eq!(a.success_01d, b.success_01d);
    }
    // the with-prior run reports zero deltas against itself
    assert_eq!(cropped.report.detector_deltas, Some((0.0, 0.0)));
}

#[test]
fn rescoring_ground_truth_poses_is_perfect() {
    let cfg = tiny_cfg();
    let dataset = Dataset::synthetic(&cfg).unwrap();
    let predictions: Vec<PredictedPose> = dataset
        .pairs
        .iter()
        .map(|p| {
            let r = p.gt.rotation();
            PredictedPose {
                image_id: p.image_id,
                obj_id: p.object_id,
                cam_r_m2c: [
                    r[(0, 0)],
                    r[(0, 1)],
                    r[(0, 2)],
                    r[(1, 0)],
                    r[(1, 1)],
                    r[(1, 2)],
                    r[(2, 0)],
                    r[(2, 1)],
                    r[(2, 2)],
                ],
                cam_t_m2c: [
                    p.gt.translation().x,
                    p.gt.translation().y,
                    p.gt.translation().z,
                ],
            }
        })
        .collect();
    let report = rescore(&cfg, &dataset, &predictions).unwrap();
    assert_eq!(report.overall_addsd_01d_percent, 100.0);
    for inst in &report.instances {
        assert!(inst.add_mm < 1e-9);
        assert!(inst.rre_rad < 1e-6);
        assert!(inst.success_01d);
    }
}

#[test]
fn rescoring_missing_predictions_records_failures() {
    let cfg = tiny_cfg();
    let dataset = Dataset::synthetic(&cfg).unwrap();
    let report = rescore(&cfg, &dataset, &[]).unwrap();
    assert_eq!(report.overall_addsd_01d_percent, 0.0);
    assert!(report.instances.iter().all(|i| !i.registered));
}

#[test]
fn training_log_and_manifest_written() {
    let cfg = tiny_cfg();
    let dataset = Dataset::synthetic(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    train(&cfg, &dataset, Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join("training_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), cfg.epochs);
    for line in log.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(row.get("mean_l_p").is_some());
        assert!(row.get("holdout_fmr").is_some());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(
        manifest.get("config_hash").and_then(|v| v.as_str()),
        Some(cfg.hash().as_str())
    );
    assert!(manifest.get("git_revision").is_some());
}

#[test]
fn updating_one_model_leaves_the_other_untouched() {
    use pointpose_core::embed::{embed_backward, embed_forward, EmbeddingModel};
    use pointpose_core::features::FeatureSet;
    use pointpose_core::optim::{OptimHyper, OptimState, UpdateRule};

    let mut object = EmbeddingModel::new(6, &[8], 4, 1);
    let scene = EmbeddingModel::new(6, &[8], 4, 2);
    let scene_before = scene.to_data();

    let x = FeatureSet::from_vec((0..5 * 6).map(|i| i as f64 * 0.01).collect(), 5, 6).unwrap();
    let (_, cache) = embed_forward(&object, &x).unwrap();
    let g = FeatureSet::from_vec(vec![0.3; 5 * 4], 5, 4).unwrap();
    let grads = embed_backward(&object, &cache, &g).unwrap();
    let mut optim = OptimState::new(
        UpdateRule::AdamW,
        OptimHyper::default(),
        object.block_names(),
        &object.block_sizes(),
    );
    object.apply_step(&mut optim, &grads, 1e-2).unwrap();

    let scene_after = scene.to_data();
    assert_eq!(scene_before.weights, scene_after.weights);
    assert_eq!(scene_before.biases, scene_after.biases);
    // and the object model did change
    assert_ne!(object.to_data().weights, EmbeddingModel::new(6, &[8], 4, 1).to_data().weights);
}

#[test]
fn ablate_with_no_axes_yields_baseline_row_only() {
    use pointpose_core::pipeline::{ablate, AblationMode};
    let mut cfg = tiny_cfg();
    cfg.synth_pairs = 4;
    cfg.epochs = 1;
    let rows = ablate(&cfg, &[], AblationMode::OneAtATime, None).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].label, "baseline");
    assert!(rows[0].delta_addsd.is_none());
}

#[test]
fn per_object_mode_trains_one_pair_per_class() {
    let mut cfg = tiny_cfg();
    cfg.per_object_models = true;
    cfg.synth_pairs = 8;
    cfg.epochs = 1;
    let dataset = Dataset::synthetic(&cfg).unwrap();
    let outcome = train(&cfg, &dataset, None).unwrap();
    let keys: Vec<&String> = outcome.checkpoint.models.keys().collect();
    assert_eq!(keys, vec!["obj:1", "obj:2", "obj:3", "obj:4"]);
    // evaluation picks the per-object models
    let options = EvalOptions {
        detections: None,
        indices: Some(vec![0]),
    };
    evaluate(&cfg, &outcome.checkpoint, &dataset, &options, None).unwrap();
}
