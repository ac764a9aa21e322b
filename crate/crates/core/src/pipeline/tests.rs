use std::path::Path;

use super::*;
use crate::error::Error;
use crate::model::{Model, ModelConfig, Variant};
use crate::sim::{generate_body, generate_garment_template, GarmentSpec};
use crate::skinning::dqs;
use crate::tensor::{load_checkpoint, AdamConfig};

fn small_gen(seed: u64, count: usize) -> GenConfig {
    GenConfig {
        seed,
        count,
        garment: GarmentSpec::Grid {
            nx: 8,
            nz: 8,
            width: 0.8,
            depth: 0.8,
            clearance: 0.03,
        },
        ..Default::default()
    }
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn split_assignment_counts() {
    let s = SplitFractions::default().assign(50);
    let count = |k| s.iter().filter(|x| **x == k).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (30, 10, 10));
    assert!(SplitFractions { train: 0.5, val: 0.2, test: 0.2 }.validate().is_err());
}

#[test]
fn dataset_is_reproducible_and_sound() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_gen(7, 5);
    let ma = generate_dataset(&cfg, a.path()).unwrap();
    let mb = generate_dataset(&cfg, b.path()).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(read_all(a.path()), read_all(b.path()));
    assert_eq!(ma.samples.len() + ma.dropped.len(), 5);
    ma.validate(a.path()).unwrap();

    let ds = Dataset::open(a.path()).unwrap();
    assert_eq!(ds.manifest, ma);
    let template = generate_garment_template(&cfg.garment, cfg.weight_falloff).unwrap();
    let margin_cfg = &cfg.sim;
    for split in Split::ALL {
        for (entry, s) in ds.load(split).unwrap() {
            assert_eq!(entry.split, split);
            assert_eq!(s.template_id, "grid-8x8");
            // The stored pose reproduces the stored skinning.
            let body = generate_body(&s.shape, &s.pose, &cfg.tessellation).unwrap();
            assert_eq!(body.mesh, s.body);
            let skel = body.skeleton.retargeted(&template.rest_joints).unwrap();
            assert_eq!(dqs(&s.template, &skel, &template.weights).unwrap(), s.skinned);
            let margin = margin_cfg.margin_for(&body).unwrap();
            for v in &s.drape.vertices {
                assert!(body.signed_distance(v) >= margin - 1e-6);
            }
        }
    }
}

#[test]
fn different_seeds_differ() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_dataset(&small_gen(1, 1), a.path()).unwrap();
    generate_dataset(&small_gen(2, 1), b.path()).unwrap();
    assert_ne!(read_all(a.path()), read_all(b.path()));
}

#[test]
fn condition_vector_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig {
        size_variation: 0.1,
        ..small_gen(3, 1)
    };
    let m = generate_dataset(&cfg, dir.path()).unwrap();
    let s = DrapeSample::read(dir.path().join(&m.samples[0].file)).unwrap();
    let c = s.condition.clone().unwrap();
    assert_eq!(c.len(), 1);
    assert!((0.9..1.1).contains(&c[0]));
    let path = dir.path().join("copy.dnsm");
    s.write(&path).unwrap();
    assert_eq!(DrapeSample::read(&path).unwrap(), s);

    // A model without a condition input rejects the sample.
    let cfgm = ModelConfig::tiny(Variant::Global);
    assert!(matches!(
        PreparedSample::new(&cfgm, &s, &Default::default()),
        Err(Error::ConditionLength { expected: 0, got: 1 })
    ));
}

#[test]
fn corrupted_sample_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small_gen(4, 1), dir.path()).unwrap();
    let path = dir.path().join(&m.samples[0].file);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(DrapeSample::read(&path).is_err());
    assert!(m.validate(dir.path()).is_err());
}

fn prepared(cfg: &ModelConfig, seed: u64, count: usize) -> (tempfile::TempDir, Vec<PreparedSample>) {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small_gen(seed, count), dir.path()).unwrap();
    let samples: Vec<DrapeSample> = m.samples.iter().map(|e| DrapeSample::read(dir.path().join(&e.file)).unwrap()).collect();
    (dir, prepare_all(cfg, &samples, &Default::default()).unwrap())
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let cfg = ModelConfig::tiny(Variant::Local);
    let (_d, samples) = prepared(&cfg, 5, 2);
    let mut model = Model::new(cfg, 1).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(2);
    model.params.randomize(0.3, &mut rng);
    let before = model.params.clone();
    let tc = TrainConfig {
        epochs: 3,
        adam: AdamConfig { lr: 0.0, ..Default::default() },
        ..Default::default()
    };
    let out = train(model, &samples, &[], &tc, None).unwrap();
    assert_eq!(out.summary.steps, 6);
    for name in before.names() {
        assert_eq!(before.get(name), out.last.params.get(name), "{name}");
    }
    assert_eq!(out.summary.correspondence_updates, 6);
}

#[test]
fn training_logs_and_checkpoints() {
    let cfg = ModelConfig::tiny(Variant::Global);
    let (_d, samples) = prepared(&cfg, 6, 3);
    let dir = tempfile::tempdir().unwrap();
    let tc = TrainConfig {
        epochs: 4,
        accumulate: 2,
        ..Default::default()
    };
    let out = train(Model::new(cfg, 0).unwrap(), &samples[..2], &samples[2..], &tc, Some(dir.path())).unwrap();
    assert_eq!(out.summary.steps, 4);
    assert_eq!(out.summary.correspondence_updates, 8);

    let log = std::fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap();
    let records: Vec<LogRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let epochs: Vec<&LogRecord> = records.iter().filter(|r| matches!(r, LogRecord::Epoch { .. })).collect();
    assert_eq!(epochs.len(), 4);
    assert_eq!(records.len(), 4 + 8);
    // A record is flagged best exactly when it beats every earlier validation score.
    let mut best = mean_e_dist(&Model::new(ModelConfig::tiny(Variant::Global), 0).unwrap(), &samples[2..]).unwrap();
    for r in epochs {
        if let LogRecord::Epoch { val_e_dist, best: flag, .. } = r {
            assert_eq!(*flag, *val_e_dist < best);
            best = best.min(*val_e_dist);
        }
    }
    assert_eq!(best, out.summary.best_val_e_dist);

    let ck = Model::from_checkpoint(load_checkpoint(dir.path().join(BEST_CHECKPOINT)).unwrap()).unwrap();
    assert_eq!(ck.params, out.best.params);
    let ids: Vec<String> = (0..1).map(|i| i.to_string()).collect();
    let r1 = evaluate(&out.best, "val", &ids, &samples[2..]).unwrap();
    let r2 = evaluate(&ck, "val", &ids, &samples[2..]).unwrap();
    assert_eq!(r1, r2);
    let last = Model::from_checkpoint(load_checkpoint(dir.path().join(LAST_CHECKPOINT)).unwrap()).unwrap();
    assert_eq!(last.params, out.last.params);
}

#[test]
fn non_finite_loss_aborts_and_keeps_checkpoints() {
    let cfg = ModelConfig::tiny(Variant::Late);
    let (_d, samples) = prepared(&cfg, 8, 1);
    let dir = tempfile::tempdir().unwrap();
    let mut model = Model::new(cfg, 0).unwrap();
    let name = model.params.names().find(|n| n.starts_with("fusion.out")).unwrap().to_string();
    model.params.get_mut(&name).unwrap().data_mut()[0] = f64::NAN;
    let r = train(model, &samples, &[], &TrainConfig::default(), Some(dir.path()));
    assert!(matches!(r, Err(Error::NonFiniteLoss { step: 1 })));
    assert!(dir.path().join(BEST_CHECKPOINT).exists());
    assert!(dir.path().join(LAST_CHECKPOINT).exists());
}

#[test]
fn baseline_against_itself_scores_zero_and_means_aggregate() {
    let cfg = ModelConfig::tiny(Variant::Global);
    let (_d, mut samples) = prepared(&cfg, 9, 3);
    let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
    let report = evaluate(&Model::new(cfg.clone(), 0).unwrap(), "test", &ids, &samples).unwrap();
    for k in 0..3 {
        let s = &report.samples[k];
        // A fresh model returns the skinned garment, which is the baseline.
        assert_eq!(s.model, s.baseline);
    }
    let mean = report.samples.iter().map(|s| s.model.e_dist).sum::<f64>() / 3.0;
    assert!((report.model.e_dist - mean).abs() < 1e-12);
    let mean_n = report.samples.iter().map(|s| s.baseline.e_norm).sum::<f64>() / 3.0;
    assert!((report.baseline.e_norm - mean_n).abs() < 1e-12);
    for c in [&report.model_curves.distance, &report.model_curves.normal] {
        assert!(c.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    for s in &mut samples {
        s.target = crate::loss::GarmentTarget::new(s.skinned.clone());
    }
    let preds: Vec<_> = samples.iter().map(|s| s.skinned.clone()).collect();
    let r = evaluate_predictions("test", &ids, &preds, &samples).unwrap();
    assert_eq!(r.baseline.e_dist, 0.0);
    assert_eq!(r.model.e_dist, 0.0);

    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("model_distance_curve.csv")).unwrap();
    assert!(csv.starts_with("threshold,fraction\n"));
}

#[test]
fn gradient_suite_covers_registry() {
    let rows = gradient_suite(2, 0, GRAD_TOLERANCE).unwrap();
    assert_eq!(rows.iter().map(|r| r.name.clone()).collect::<Vec<_>>(), suite_names());
    for r in &rows {
        assert!(r.pass, "{r:?}");
        assert_eq!(r.instances, 2);
    }
}

#[test]
fn bench_reports_positive_times() {
    let cfg = BenchConfig {
        scenes: 1,
        repetitions: 1,
        garment: GarmentSpec::Grid {
            nx: 6,
            nz: 6,
            width: 0.8,
            depth: 0.8,
            clearance: 0.03,
        },
        ..Default::default()
    };
    let r = bench(&Model::new(ModelConfig::tiny(Variant::Local), 0).unwrap(), &cfg).unwrap();
    assert_eq!(r.vertex_count, 36);
    assert!(r.predict_median_s > 0.0 && r.drape_median_s > 0.0);
    assert!((r.speedup - r.drape_median_s / r.predict_median_s).abs() < 1e-12);
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
}
