use pansharp::fusion::Method;
use pansharp::imaging::{MsImage, PanImage, Resolution, SensorSpec};
use pansharp::metrics::{reduced_scores, EvalRecord, EvalReport, Metric, MetricOptions};
use pansharp::model::{encode_checkpoint, read_checkpoint, TdnetConfig};
use pansharp::trainer::{self, evaluate_model, TrainConfig, BEST_CHECKPOINT, FINAL_CHECKPOINT, LOSS_LOG_FILE};
use pansharp::wald::{make_samples, split, synthetic_scene, Dataset, DatasetManifest, Provenance, SceneOptions};
use proptest::prelude::*;

fn small_model(bands: usize) -> TdnetConfig {
    TdnetConfig {
        feature_width: 16,
        mscb_width: 5,
        ..TdnetConfig::new(bands)
    }
}

#[test]
fn simulate_train_and_evaluate_through_the_public_api() {
    let dir = tempfile::tempdir().unwrap();
    let sensor = SensorSpec::worldview3();
    let (ms, pan) = synthetic_scene(64, 64, &sensor, 3, &SceneOptions::default()).unwrap();
    let samples = make_samples(&ms, &pan, 16, 16, 0).unwrap();
    assert_eq!(samples.len(), 16);

    let ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
    let manifest = DatasetManifest {
        seed: 5,
        sensor: sensor.clone(),
        splits: split(&ids, (0.5, 0.25, 0.25), 5).unwrap(),
        provenance: Provenance::new(vec!["synthetic".into()], 16, 16, sensor.ratio),
    };
    Dataset::create(dir.path().join("data"), manifest.clone(), &samples).unwrap();
    let dataset = Dataset::open(dir.path().join("data")).unwrap();
    assert_eq!(dataset.manifest, manifest);
    assert_eq!(dataset.manifest.splits.test.len(), 4);

    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let run = dir.path().join("run");
    let outcome = trainer::train(&dataset, &small_model(sensor.bands), &cfg, Some(&run)).unwrap();
    assert_eq!(outcome.step_losses.len(), 4);
    assert!(outcome.step_losses.iter().all(|l| l.is_finite()));
    for f in [BEST_CHECKPOINT, FINAL_CHECKPOINT, LOSS_LOG_FILE] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let best = read_checkpoint(run.join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(encode_checkpoint(&best), encode_checkpoint(&outcome.best));

    let test = dataset.load_all(&dataset.manifest.splits.test).unwrap();
    let mut report = EvalReport::default();
    for r in evaluate_model(&outcome.best, &test, "tdnet", sensor.ratio).unwrap() {
        report.push(r);
    }
    for s in &test {
        let lrms = MsImage::new(s.lrms.clone(), sensor.clone(), Resolution::Reduced).unwrap();
        let pan = PanImage::new(s.pan.clone(), sensor.clone()).unwrap();
        let fused = Method::GlpHpm.fuse(&lrms, &pan).unwrap();
        let opts = MetricOptions {
            window: 16,
            ..MetricOptions::default()
        };
        let scores = reduced_scores(&fused.raster, &s.gt, sensor.ratio, &opts).unwrap();
        report.push(
            EvalRecord::new("glp-hpm", s.id.to_string())
                .with(Metric::Sam, scores.sam)
                .with(Metric::Ergas, scores.ergas)
                .with(Metric::Scc, scores.scc)
                .with(Metric::Q2n, scores.q2n),
        );
    }
    let back = EvalReport::from_csv(&report.to_csv()).unwrap();
    assert_eq!(back.methods(), report.methods());
    let table = back.rank().unwrap();
    assert_eq!(table.rows.len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn classic_fusion_stays_in_range(seed in 0u64..1000, size in prop::sample::select(vec![8usize, 12, 16])) {
        let sensor = SensorSpec::worldview3();
        let (ms, pan) = synthetic_scene(size, size, &sensor, seed, &SceneOptions::default()).unwrap();
        for method in Method::ALL {
            let out = method.fuse(&ms, &pan).unwrap();
            prop_assert_eq!(out.raster.dims(), (4 * size, 4 * size, sensor.bands));
            prop_assert!(out.raster.data().iter().all(|v| (0.0..=1.0).contains(v)), "{:?} left [0, 1]", method);
        }
    }
}
