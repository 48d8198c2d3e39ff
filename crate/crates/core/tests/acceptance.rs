//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its key numbers (run with `--nocapture` to see them).

use nalgebra::{Matrix3, Vector3};
use pointpose_core::augment::resample;
use pointpose_core::config::RunConfig;
use pointpose_core::data::{
    generate_synthetic_pair, read_bop_scene, write_bop_scene, CameraIntrinsics, ClutterSpec,
    DepthImage, PoseSpec, RgbImage, ShapeKind, ShapeSpec,
};
use pointpose_core::embed::{
    embed_backward, embed_forward, EmbeddingModel, DESCRIPTOR_DIM,
};
use pointpose_core::features::{row_distance, FeatureSet};
use pointpose_core::geometry::{
    cloud_diameter, random_rotation, rotation_angle, transform_cloud, NeighborIndex, PointCloud,
    RigidPose,
};
use pointpose_core::loss::{compute_loss, LossConfig};
use pointpose_core::metrics::{add_error, add_s_auc, adds_error, addsd_success, detector_deltas};
use pointpose_core::mining::{build_negative_candidates, mine_positives, CorrespondenceSet};
use pointpose_core::optim::UpdateRule;
use pointpose_core::pipeline::{
    evaluate, run_with_jobs, train, Checkpoint, Dataset, EvalOptions, ModelPair, PipelineError,
};
use pointpose_core::register::{match_features, ransac_register, MatchSet, RansacConfig};
use pointpose_core::seeding;
use pointpose_core::voxel::{quantize, ReductionMode};
use rand::Rng;
use std::time::Instant;

/// Relative error with a denominator floor: entries whose true magnitude
/// sits below the floor are measured against the floor, so finite-difference
/// rounding noise (~1e-10 absolute here) on near-zero gradients does not
/// register while genuine scaling bugs still would.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

fn rand_cloud(seed: u64, n: usize, scale: f64) -> PointCloud {
    let mut rng = seeding::rng(seed, 0);
    PointCloud::from_positions(
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-scale..scale),
                    rng.gen_range(-scale..scale),
                    rng.gen_range(-scale..scale),
                )
            })
            .collect(),
    )
    .unwrap()
}

fn rand_pose(seed: u64) -> RigidPose {
    let mut rng = seeding::rng(seed, 1);
    RigidPose::new(
        random_rotation(&mut rng),
        Vector3::new(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(100.0..300.0),
        ),
    )
    .unwrap()
}

/// Criterion: loss-to-feature and loss-to-parameter gradients match central
/// finite differences (h = 1e-5) with max relative error < 1e-4 over 100
/// seeded toy instances.
#[test]
fn acceptance_gradient_correctness() {
    let start = Instant::now();
    let h = 1e-5;
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;

    for seed in 0..100u64 {
        // toy instance: <=30 points per side, F = 8
        let n_obj = 24;
        let n_scn = 30;
        let input_dim = 10;
        let object = rand_cloud(seed * 7 + 1, n_obj, 30.0);
        let gt = rand_pose(seed * 7 + 2);
        let scene = transform_cloud(&object, &gt).select(&(0..n_scn.min(n_obj)).collect::<Vec<_>>());
        let positives = mine_positives(&object, &scene, &gt, 5.0, None, seed).unwrap();
        let diameter = cloud_diameter(&object).unwrap();
        let negatives =
            build_negative_candidates(&object, &scene, &positives, 0.1, diameter, 10_000, seed)
                .unwrap();

        let obj_model = EmbeddingModel::new(input_dim, &[12], 8, seed * 11 + 3);
        let scn_model = EmbeddingModel::new(input_dim, &[12], 8, seed * 11 + 4);
        let mut rng = seeding::rng(seed * 11 + 5, 0);
        let desc_obj = FeatureSet::from_vec(
            (0..n_obj * input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            n_obj,
            input_dim,
        )
        .unwrap();
        let desc_scn = FeatureSet::from_vec(
            (0..scene.len() * input_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
            scene.len(),
            input_dim,
        )
        .unwrap();

        // loss -> features
        let (mut f_obj, cache_obj) = embed_forward(&obj_model, &desc_obj).unwrap();
        let (mut f_scn, cache_scn) = embed_forward(&scn_model, &desc_scn).unwrap();
        let analytic = compute_loss(&f_obj, &f_scn, &positives, &negatives, &cfg).unwrap();
        for side in 0..2 {
            let rows = if side == 0 { f_obj.rows() } else { f_scn.rows() };
            for r in 0..rows {
                for c in 0..8 {
                    let base = if side == 0 { f_obj.get(r, c) } else { f_scn.get(r, c) };
                    let mut eval = |v: f64| {
                        if side == 0 {
                            f_obj.set(r, c, v);
                        } else {
                            f_scn.set(r, c, v);
                        }
                        compute_loss(&f_obj, &f_scn, &positives, &negatives, &cfg)
                            .unwrap()
                            .total
                    };
                    let plus = eval(base + h);
                    let minus = eval(base - h);
                    eval(base);
                    let numeric = (plus - minus) / (2.0 * h);
                    let a = if side == 0 {
                        analytic.grad_object.get(r, c)
                    } else {
                        analytic.grad_scene.get(r, c)
                    };
                    worst = worst.max(rel_err(a, numeric));
                }
            }
        }

        // loss -> parameters, chained through both models
        let grads_obj = embed_backward(&obj_model, &cache_obj, &analytic.grad_object).unwrap();
        let grads_scn = embed_backward(&scn_model, &cache_scn, &analytic.grad_scene).unwrap();
        let eval_total = |om: &EmbeddingModel, sm: &EmbeddingModel| {
            let (fo, _) = embed_forward(om, &desc_obj).unwrap();
            let (fs, _) = embed_forward(sm, &desc_scn).unwrap();
            compute_loss(&fo, &fs, &positives, &negatives, &cfg).unwrap().total
        };
        for (model_idx, (model, grads)) in [(&obj_model, &grads_obj), (&scn_model, &grads_scn)]
            .into_iter()
            .enumerate()
        {
            for layer in 0..model.num_layers() {
                for (block_idx, analytic_block) in
                    [&grads.weights[layer], &grads.biases[layer]].into_iter().enumerate()
                {
                    for entry in 0..analytic_block.len() {
                        let mut perturbed = model.clone();
                        let bump = |m: &mut EmbeddingModel, delta: f64| {
                            let data = m.to_data();
                            let mut weights = data.weights;
                            let mut biases = data.biases;
                            if block_idx == 0 {
                                weights[layer][entry] += delta;
                            } else {
                                biases[layer][entry] += delta;
                            }
                            m.set_layer(layer, weights[layer].clone(), biases[layer].clone())
                                .unwrap();
                        };
                        bump(&mut perturbed, h);
                        let plus = if model_idx == 0 {
                            eval_total(&perturbed, &scn_model)
                        } else {
                            eval_total(&obj_model, &perturbed)
                        };
                        bump(&mut perturbed, -2.0 * h);
                        let minus = if model_idx == 0 {
                            eval_total(&perturbed, &scn_model)
                        } else {
                            eval_total(&obj_model, &perturbed)
                        };
                        let numeric = (plus - minus) / (2.0 * h);
                        worst = worst.max(rel_err(analytic_block[entry], numeric));
                    }
                }
            }
        }
    }

    assert!(
        worst < 1e-4,
        "ACCEPTANCE gradient-correctness: FAIL (max rel err {worst:.3e})"
    );
    println!(
        "ACCEPTANCE gradient-correctness: PASS (max rel err {:.3e}, {:.1}s)",
        worst,
        start.elapsed().as_secs_f64()
    );
}

/// Criterion: across 1000 seeded mining runs, every selected hardest
/// negative lies strictly farther than t_scale * D_O from its anchor.
#[test]
fn acceptance_mining_safety_invariant() {
    let start = Instant::now();
    let mut checked = 0usize;
    for run in 0..1000u64 {
        let object = rand_cloud(run * 3 + 1, 120, 40.0);
        let gt = rand_pose(run * 3 + 2);
        let scene = {
            let full = transform_cloud(&object, &gt);
            let keep: Vec<usize> = (0..full.len()).filter(|i| i % 5 != 0).collect();
            full.select(&keep)
        };
        let positives = match mine_positives(&object, &scene, &gt, 4.0, Some(64), run) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let diameter = cloud_diameter(&object).unwrap();
        let t_scale = 0.05 + 0.2 * ((run % 7) as f64) / 7.0;
        let negatives =
            build_negative_candidates(&object, &scene, &positives, t_scale, diameter, 10_000, run)
                .unwrap();
        let radius = t_scale * diameter;

        let mut rng = seeding::rng(run * 3 + 3, 0);
        let dim = 4;
        let f_obj = FeatureSet::from_vec(
            (0..object.len() * dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            object.len(),
            dim,
        )
        .unwrap();
        let f_scn = FeatureSet::from_vec(
            (0..scene.len() * dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            scene.len(),
            dim,
        )
        .unwrap();
        let loss = compute_loss(&f_obj, &f_scn, &positives, &negatives, &LossConfig::default())
            .unwrap();
        for (p, &(i, j)) in positives.pairs.iter().enumerate() {
            if let Some(k) = loss.hardest_object_ids[p] {
                let d = (object.position(k as usize) - object.position(i)).norm();
                assert!(
                    d > radius,
                    "ACCEPTANCE mining-safety: FAIL (object hardest at {d} <= {radius})"
                );
                checked += 1;
            }
            if let Some(k) = loss.hardest_scene_ids[p] {
                let d = (scene.position(k as usize) - scene.position(j)).norm();
                assert!(
                    d > radius,
                    "ACCEPTANCE mining-safety: FAIL (scene hardest at {d} <= {radius})"
                );
                checked += 1;
            }
        }
    }
    println!(
        "ACCEPTANCE mining-safety: PASS ({} hardest negatives verified, {:.1}s)",
        checked,
        start.elapsed().as_secs_f64()
    );
}

/// Criterion: quantize, mine_positives, build_negative_candidates,
/// match_features, adds_error, and nn_query match their brute-force
/// oracles exactly on <=1000-point fixtures over 50 seeds.
#[test]
fn acceptance_oracle_equivalence() {
    let start = Instant::now();
    for seed in 0..50u64 {
        let n = 600 + (seed as usize * 17) % 400;
        let cloud = rand_cloud(seed * 13 + 1, n, 35.0);

        // nn_query vs linear scan
        let index = NeighborIndex::build(&cloud);
        let mut rng = seeding::rng(seed * 13 + 2, 0);
        for _ in 0..10 {
            let q = Vector3::new(
                rng.gen_range(-40.0..40.0),
                rng.gen_range(-40.0..40.0),
                rng.gen_range(-40.0..40.0),
            );
            let got = index.nn_query(&q, 5).unwrap();
            let mut want: Vec<(usize, f64)> = cloud
                .positions()
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm()))
                .collect();
            want.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            want.truncate(5);
            assert_eq!(got, want, "nn_query oracle mismatch at seed {seed}");
        }

        // quantize vs brute-force grouping
        let q_size = 3.0;
        let got = quantize(&cloud, q_size, ReductionMode::Barycenter, seed).unwrap();
        let mut origin = cloud.position(0);
        for p in cloud.positions() {
            origin.x = origin.x.min(p.x);
            origin.y = origin.y.min(p.y);
            origin.z = origin.z.min(p.z);
        }
        let mut groups: std::collections::BTreeMap<[i64; 3], Vec<usize>> = Default::default();
        for (i, p) in cloud.positions().iter().enumerate() {
            let key = [
                ((p.x - origin.x) / q_size).floor() as i64,
                ((p.y - origin.y) / q_size).floor() as i64,
                ((p.z - origin.z) / q_size).floor() as i64,
            ];
            groups.entry(key).or_default().push(i);
        }
        assert_eq!(got.len(), groups.len());
        for ((key, members), (got_key, got_rep)) in groups
            .iter()
            .zip(got.voxel_keys.iter().zip(got.representatives.positions()))
        {
            assert_eq!(key, got_key);
            let mut mean = Vector3::zeros();
            for &m in members {
                mean += cloud.position(m);
            }
            mean *= 1.0 / members.len() as f64;
            assert_eq!(&mean, got_rep, "quantize oracle mismatch at seed {seed}");
        }

        // mine_positives vs linear scan + filter
        let object = rand_cloud(seed * 13 + 3, 300, 25.0);
        let gt = rand_pose(seed * 13 + 4);
        let scene = {
            let moved = transform_cloud(&object, &gt);
            let keep: Vec<usize> = (0..moved.len()).filter(|i| i % 3 != 0).collect();
            moved.select(&keep)
        };
        let tau = 4.0;
        let got = mine_positives(&object, &scene, &gt, tau, None, seed).unwrap();
        let transformed = transform_cloud(&object, &gt);
        let mut want_pairs = Vec::new();
        for (i, p) in transformed.positions().iter().enumerate() {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, s) in scene.positions().iter().enumerate() {
                let d = (p - s).norm();
                if d < best.1 || (d == best.1 && j < best.0) {
                    best = (j, d);
                }
            }
            if best.1 < tau {
                want_pairs.push(((i, best.0), best.1));
            }
        }
        assert_eq!(got.pairs.len(), want_pairs.len());
        for (k, &((i, j), d)) in want_pairs.iter().enumerate() {
            assert_eq!(got.pairs[k], (i, j));
            assert_eq!(got.distances[k], d, "mine oracle mismatch at seed {seed}");
        }

        // build_negative_candidates vs radius filter
        let diameter = cloud_diameter(&object).unwrap();
        let t_scale = 0.1;
        let negs = build_negative_candidates(
            &object, &scene, &got, t_scale, diameter, 10_000, seed,
        )
        .unwrap();
        let radius = t_scale * diameter;
        for (p, &(i, j)) in got.pairs.iter().enumerate() {
            let want_obj: Vec<u32> = (0..object.len() as u32)
                .filter(|&k| (object.position(k as usize) - object.position(i)).norm() > radius)
                .collect();
            assert_eq!(negs.object_candidates[p], want_obj);
            let want_scn: Vec<u32> = (0..scene.len() as u32)
                .filter(|&k| (scene.position(k as usize) - scene.position(j)).norm() > radius)
                .collect();
            assert_eq!(negs.scene_candidates[p], want_scn);
        }

        // match_features vs exhaustive argmin
        let dim = 8;
        let mut rng = seeding::rng(seed * 13 + 5, 0);
        let f_obj = FeatureSet::from_vec(
            (0..200 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            200,
            dim,
        )
        .unwrap();
        let f_scn = FeatureSet::from_vec(
            (0..250 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            250,
            dim,
        )
        .unwrap();
        let matches = match_features(&f_obj, &f_scn, false).unwrap();
        for (i, &(_, j)) in matches.pairs.iter().enumerate() {
            let mut best = (usize::MAX, f64::INFINITY);
            for k in 0..f_scn.rows() {
                let d = row_distance(f_obj.row(i), f_scn.row(k));
                if d < best.1 {
                    best = (k, d);
                }
            }
            assert_eq!(j, best.0);
            assert_eq!(matches.feature_distances[i], best.1);
        }

        // adds_error vs O(N^2) double loop
        let model = rand_cloud(seed * 13 + 6, 300, 30.0);
        let pred = rand_pose(seed * 13 + 7);
        let gt2 = rand_pose(seed * 13 + 8);
        let got_adds = adds_error(&model, &pred, &gt2);
        let mut want_adds = 0.0;
        for p in model.positions() {
            let gp = gt2.apply(p);
            let mut best = f64::INFINITY;
            for q in model.positions() {
                best = best.min((gp - pred.apply(q)).norm());
            }
            want_adds += best;
        }
        want_adds /= model.len() as f64;
        assert_eq!(got_adds, want_adds, "adds oracle mismatch at seed {seed}");
    }
    println!(
        "ACCEPTANCE oracle-equivalence: PASS (6 operations x 50 seeds, {:.1}s)",
        start.elapsed().as_secs_f64()
    );
}

/// Criterion: with 1 mm noise, 30% outlier matches, and 30% occlusion,
/// RANSAC attains RRE < 0.05 rad and RTE < 5 mm in >= 95 of 100 trials.
#[test]
fn acceptance_registration_recovery() {
    let start = Instant::now();
    let mut successes = 0;
    for trial in 0..100u64 {
        let shape = ShapeSpec::new(
            ShapeKind::all()[(trial % 4) as usize],
            120.0,
            800,
            seeding::derive(trial, 1),
        );
        let clutter = ClutterSpec {
            support_points: 800,
            distractor_count: 1,
            distractor_points_each: 200,
            ..Default::default()
        };
        let pair = generate_synthetic_pair(
            &shape,
            &PoseSpec::default(),
            &clutter,
            0.3,
            1.0,
            seeding::derive(trial, 2),
        )
        .unwrap();

        let positives =
            mine_positives(&pair.object_cloud, &pair.scene_cloud, &pair.gt_pose, 4.0, Some(200), trial)
                .unwrap();
        let mut match_pairs = positives.pairs.clone();
        let n = match_pairs.len();
        let mut rng = seeding::rng(trial, 3);
        for p in match_pairs.iter_mut().take((n as f64 * 0.3).round() as usize) {
            p.1 = rng.gen_range(0..pair.scene_cloud.len());
        }
        let matches = MatchSet {
            feature_distances: vec![0.0; n],
            pairs: match_pairs,
        };
        let cfg = RansacConfig {
            max_iterations: 10_000,
            inlier_threshold: 5.0,
            min_sample: 3,
            confidence: 0.999,
            seed: trial,
        };
        if let Ok((pose, _)) =
            ransac_register(&pair.object_cloud, &pair.scene_cloud, &matches, &cfg)
        {
            let rre = rotation_angle(pose.rotation(), pair.gt_pose.rotation());
            let rte = (pose.translation() - pair.gt_pose.translation()).norm();
            if rre < 0.05 && rte < 5.0 {
                successes += 1;
            }
        }
    }
    assert!(
        successes >= 95,
        "ACCEPTANCE registration-recovery: FAIL ({successes}/100 trials)"
    );
    println!(
        "ACCEPTANCE registration-recovery: PASS ({}/100 trials, {:.1}s)",
        successes,
        start.elapsed().as_secs_f64()
    );
}

fn e2e_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.synth_pairs = 200;
    cfg.epochs = 10;
    cfg.v_o = 1000;
    cfg.v_s = 3000;
    cfg.max_pairs = 384;
    cfg.seed = seed;
    cfg
}

/// Criterion: training on 200 synthetic pairs reaches held-out FMR >= 0.9
/// and ADD(S)-0.1d >= 80%, against FMR <= 0.1 at random initialization.
#[test]
fn acceptance_end_to_end_learning() {
    let start = Instant::now();
    let cfg = e2e_config(0);
    let dataset = Dataset::synthetic(&cfg).unwrap();
    let (_, holdout) = dataset.split(cfg.holdout_every);

    // random-initialization baseline
    let fresh = Checkpoint {
        format_version: pointpose_core::pipeline::CHECKPOINT_FORMAT_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        shared_weights: false,
        feature_dim: cfg.feature_dim,
        descriptor_r1_scale: cfg.descriptor_r1_scale,
        descriptor_r2_scale: cfg.descriptor_r2_scale,
        use_rgb: cfg.use_rgb,
        git_revision: "untrained".into(),
        models: [(
            "all".to_string(),
            ModelPair {
                object: EmbeddingModel::new(
                    DESCRIPTOR_DIM,
                    &cfg.hidden_dims,
                    cfg.feature_dim,
                    1,
                )
                .to_data(),
                scene: EmbeddingModel::new(DESCRIPTOR_DIM, &cfg.hidden_dims, cfg.feature_dim, 2)
                    .to_data(),
            },
        )]
        .into_iter()
        .collect(),
    };
    let options = EvalOptions {
        detections: None,
        indices: Some(holdout.clone()),
    };
    let untrained = evaluate(&cfg, &fresh, &dataset, &options, None).unwrap();
    assert!(
        untrained.report.fmr <= 0.1,
        "ACCEPTANCE end-to-end-learning: FAIL (random init FMR {} > 0.1)",
        untrained.report.fmr
    );

    let outcome = train(&cfg, &dataset, None).unwrap();
    let fmr = outcome.final_holdout_fmr.expect("holdout is non-empty");
    let eval = evaluate(&cfg, &outcome.checkpoint, &dataset, &options, None).unwrap();
    let addsd = eval.report.overall_addsd_01d_percent;
    assert!(
        fmr >= 0.9,
        "ACCEPTANCE end-to-end-learning: FAIL (held-out FMR {fmr} < 0.9)"
    );
    assert!(
        addsd >= 80.0,
        "ACCEPTANCE end-to-end-learning: FAIL (ADD(S)-0.1d {addsd}% < 80%)"
    );
    println!(
        "ACCEPTANCE end-to-end-learning: PASS (FMR {:.3}, ADD(S)-0.1d {:.1}%, random-init FMR {:.3}, {:.0}s)",
        fmr,
        addsd,
        untrained.report.fmr,
        start.elapsed().as_secs_f64()
    );
}

fn ablation_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.synth_pairs = 40;
    cfg.epochs = 10;
    cfg.v_o = 800;
    cfg.v_s = 2500;
    cfg.max_pairs = 256;
    cfg.seed = seed;
    cfg
}

struct AblationRun {
    fmr: f64,
    addsd: f64,
    final_loss: f64,
}

fn run_ablation_variant(cfg: &RunConfig) -> AblationRun {
    let dataset = Dataset::synthetic(cfg).unwrap();
    match train(cfg, &dataset, None) {
        Ok(outcome) => {
            let (_, holdout) = dataset.split(cfg.holdout_every);
            let options = EvalOptions {
                detections: None,
                indices: Some(holdout),
            };
            let eval = evaluate(cfg, &outcome.checkpoint, &dataset, &options, None).unwrap();
            AblationRun {
                fmr: outcome.final_holdout_fmr.unwrap_or(0.0),
                addsd: eval.report.overall_addsd_01d_percent,
                final_loss: outcome.final_mean_loss,
            }
        }
        // a diverged run counts as the worst possible outcome
        Err(PipelineError::Diverged { .. }) => AblationRun {
            fmr: 0.0,
            addsd: 0.0,
            final_loss: f64::INFINITY,
        },
        Err(e) => panic!("ablation variant failed unexpectedly: {e}"),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[values.len() / 2]
}

/// Criterion: desk-scale ablation directions over 5-seed medians:
/// (a) t_scale = 0.1 beats t_scale = 0 in held-out FMR,
/// (b) Adam beats SGD in final total loss at equal epochs,
/// (c) rgb-on beats rgb-off in ADD(S)-0.1d on textured objects.
#[test]
fn acceptance_ablation_directions() {
    let start = Instant::now();
    let seeds = [0u64, 1, 2, 3, 4];
    let mut fmr_with_safety = Vec::new();
    let mut fmr_without_safety = Vec::new();
    let mut loss_adam = Vec::new();
    let mut loss_sgd = Vec::new();
    let mut addsd_rgb_on = Vec::new();
    let mut addsd_rgb_off = Vec::new();

    for &seed in &seeds {
        let base = ablation_config(seed);
        let base_run = run_ablation_variant(&base);
        fmr_with_safety.push(base_run.fmr);
        addsd_rgb_on.push(base_run.addsd);

        let mut no_safety = base.clone();
        no_safety.t_scale = 0.0;
        fmr_without_safety.push(run_ablation_variant(&no_safety).fmr);

        let mut adam = base.clone();
        adam.optimizer = UpdateRule::Adam;
        loss_adam.push(run_ablation_variant(&adam).final_loss);

        let mut sgd = base.clone();
        sgd.optimizer = UpdateRule::Sgd;
        loss_sgd.push(run_ablation_variant(&sgd).final_loss);

        let mut rgb_off = base.clone();
        rgb_off.use_rgb = false;
        addsd_rgb_off.push(run_ablation_variant(&rgb_off).addsd);
    }

    let m_safety_on = median(&mut fmr_with_safety);
    let m_safety_off = median(&mut fmr_without_safety);
    assert!(
        m_safety_on > m_safety_off,
        "ACCEPTANCE ablation-directions: FAIL (FMR median t=0.1 {m_safety_on} !> t=0 {m_safety_off})"
    );
    let m_adam = median(&mut loss_adam);
    let m_sgd = median(&mut loss_sgd);
    assert!(
        m_adam < m_sgd,
        "ACCEPTANCE ablation-directions: FAIL (loss median adam {m_adam} !< sgd {m_sgd})"
    );
    let m_rgb_on = median(&mut addsd_rgb_on);
    let m_rgb_off = median(&mut addsd_rgb_off);
    assert!(
        m_rgb_on > m_rgb_off,
        "ACCEPTANCE ablation-directions: FAIL (ADD(S)-0.1d median rgb-on {m_rgb_on} !> rgb-off {m_rgb_off})"
    );
    println!(
        "ACCEPTANCE ablation-directions: PASS (FMR {:.3} > {:.3}; loss {:.2} < {:.2}; ADD(S)-0.1d {:.1} > {:.1}; {:.0}s)",
        m_safety_on,
        m_safety_off,
        m_adam,
        m_sgd,
        m_rgb_on,
        m_rgb_off,
        start.elapsed().as_secs_f64()
    );
}

/// Criterion: metric edge cases are exact.
#[test]
fn acceptance_metric_unit_tests() {
    let start = Instant::now();
    // ADD-S <= ADD universally
    for seed in 0..20u64 {
        let model = rand_cloud(seed + 400, 150, 25.0);
        let pred = rand_pose(seed + 420);
        let gt = rand_pose(seed + 440);
        let add = add_error(&model, &pred, &gt);
        let adds = adds_error(&model, &pred, &gt);
        assert!(
            adds <= add + 1e-12,
            "ACCEPTANCE metric-unit-tests: FAIL (ADD-S {adds} > ADD {add})"
        );
    }
    // AUC hand count: single 50.5 mm error -> exactly 50.0
    assert_eq!(add_s_auc(&[50.5], 1.0, 100.0, 1.0).unwrap(), 50.0);
    // strict 0.1 * D_O boundary
    assert!(addsd_success(9.999_999, 100.0).unwrap());
    assert!(!addsd_success(10.0, 100.0).unwrap());
    // detector delta counting on a 20-instance fixture
    let mut without = vec![false; 20];
    let mut with = vec![false; 20];
    for i in 0..8 {
        without[i] = true;
        with[i] = true;
    }
    for i in 0..3 {
        with[i] = false;
    }
    with[12] = true;
    with[15] = true;
    let (sf, fs) = detector_deltas(&with, &without).unwrap();
    assert_eq!(sf, 15.0);
    assert_eq!(fs, 10.0);
    println!(
        "ACCEPTANCE metric-unit-tests: PASS ({:.2}s)",
        start.elapsed().as_secs_f64()
    );
}

/// Criterion: identical config + seed reproduces checkpoints, reports, and
/// logs bitwise, independent of the worker count.
#[test]
fn acceptance_determinism() {
    let start = Instant::now();
    let mut cfg = RunConfig::desk();
    cfg.synth_pairs = 8;
    cfg.epochs = 2;
    cfg.v_o = 400;
    cfg.v_s = 1200;
    cfg.max_pairs = 128;
    cfg.seed = 77;

    let run = |jobs: usize, dir: &std::path::Path| {
        run_with_jobs(Some(jobs), || {
            let dataset = Dataset::synthetic(&cfg).unwrap();
            let outcome = train(&cfg, &dataset, Some(dir)).unwrap();
            let options = EvalOptions {
                detections: None,
                indices: None,
            };
            evaluate(&cfg, &outcome.checkpoint, &dataset, &options, Some(dir)).unwrap();
        });
    };

    let dir1 = tempfile::tempdir().unwrap();
    let dir4 = tempfile::tempdir().unwrap();
    run(1, dir1.path());
    run(4, dir4.path());

    for file in [
        "checkpoint.json",
        "training_log.jsonl",
        "manifest.json",
        "report.json",
        "report.csv",
        "report.txt",
        "fmr_curves.csv",
    ] {
        let a = std::fs::read(dir1.path().join(file)).unwrap();
        let b = std::fs::read(dir4.path().join(file)).unwrap();
        assert_eq!(
            a, b,
            "ACCEPTANCE determinism: FAIL ({file} differs between --jobs 1 and --jobs 4)"
        );
    }
    println!(
        "ACCEPTANCE determinism: PASS (7 artifacts bitwise equal across jobs=1 and jobs=4, {:.0}s)",
        start.elapsed().as_secs_f64()
    );
}

/// Criterion: a hand-built two-image BOP fixture parses to exact clouds,
/// intrinsics, and poses.
#[test]
fn acceptance_bop_ingestion_golden() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let intr = CameraIntrinsics::new(100.0, 200.0, 1.0, 1.0, 0.5).unwrap();

    // image 0: 2x2, one zero-depth pixel
    let depth0 = DepthImage::new(2, 2, vec![100, 0, 200, 400]);
    let rgb0 = RgbImage::new(2, 2, vec![[255, 0, 0], [0, 0, 0], [0, 255, 0], [0, 0, 255]]);
    let pose0 = RigidPose::new(
        Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        Vector3::new(1.0, 2.0, 3.0),
    )
    .unwrap();
    write_bop_scene(dir.path(), 0, &intr, &[(7, pose0)], &depth0, &rgb0).unwrap();

    // image 1: 2x1, identity pose
    let depth1 = DepthImage::new(2, 1, vec![600, 800]);
    let rgb1 = RgbImage::new(2, 1, vec![[10, 20, 30], [40, 50, 60]]);
    write_bop_scene(dir.path(), 1, &intr, &[(9, RigidPose::identity())], &depth1, &rgb1).unwrap();

    let scene0 = read_bop_scene(dir.path(), 0, 0).unwrap();
    assert_eq!(scene0.intrinsics, intr);
    assert_eq!(scene0.cloud.len(), 3);
    // pixel (0,0): z = 100*0.5 = 50, x = (0-1)*50/100 = -0.5, y = (0-1)*50/200 = -0.25
    assert_eq!(scene0.cloud.position(0), Vector3::new(-0.5, -0.25, 50.0));
    // pixel (0,1): z = 100, x = -1, y = 0
    assert_eq!(scene0.cloud.position(1), Vector3::new(-1.0, 0.0, 100.0));
    // pixel (1,1): z = 200, x = 0, y = 0
    assert_eq!(scene0.cloud.position(2), Vector3::new(0.0, 0.0, 200.0));
    assert_eq!(scene0.pixels, vec![(0, 0), (0, 1), (1, 1)]);
    let colors = scene0.cloud.colors().unwrap();
    assert_eq!(colors[0], Vector3::new(1.0, 0.0, 0.0));
    assert_eq!(colors[2], Vector3::new(0.0, 0.0, 1.0));
    let (obj0, got0) = &scene0.poses[0];
    assert_eq!(*obj0, 7);
    assert_eq!(got0.rotation(), pose0.rotation());
    assert_eq!(got0.translation(), pose0.translation());

    let scene1 = read_bop_scene(dir.path(), 1, 0).unwrap();
    assert_eq!(scene1.cloud.len(), 2);
    // pixel (0,0): z = 300, x = (0-1)*300/100 = -3, y = (0-1)*300/200 = -1.5
    assert_eq!(scene1.cloud.position(0), Vector3::new(-3.0, -1.5, 300.0));
    // pixel (1,0): z = 400, x = 0, y = -2
    assert_eq!(scene1.cloud.position(1), Vector3::new(0.0, -2.0, 400.0));
    let (obj1, got1) = &scene1.poses[0];
    assert_eq!(*obj1, 9);
    assert_eq!(got1.rotation(), RigidPose::identity().rotation());
    println!(
        "ACCEPTANCE bop-ingestion-golden: PASS (2 images exact, {:.2}s)",
        start.elapsed().as_secs_f64()
    );
}

/// Companion check used by the first criterion's oracle plumbing: the
/// mining fixtures feeding the gradient tests must themselves be valid.
#[test]
fn acceptance_fixture_sanity() {
    let object = rand_cloud(9001, 24, 30.0);
    let gt = rand_pose(9002);
    let scene = transform_cloud(&object, &gt);
    let positives: CorrespondenceSet = mine_positives(&object, &scene, &gt, 5.0, None, 0).unwrap();
    assert_eq!(positives.len(), object.len());
    let resampled = resample(&scene, 12, 3).unwrap();
    assert_eq!(resampled.len(), 12);
}
