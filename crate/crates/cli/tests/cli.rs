use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pansharp::fusion::Method;
use pansharp::imaging::{psr1, MsImage, PanImage, Raster, Resolution, SensorSpec};
use pansharp::metrics::report::{EvalReport, Metric, AGGREGATE_MEAN};
use pansharp::model::{encode_checkpoint, TdnetConfig, TdnetModel};
use pansharp::tensor::gradcheck::GradCase;
use pansharp::tensor::{Tensor, UnaryFn};
use pansharp::wald::{synthetic_scene, Dataset, Role, SceneOptions, MANIFEST_FILE};
use pansharp_cli::config::{RunConfig, EFFECTIVE_CONFIG_FILE};
use pansharp_cli::{format_gradcheck, gradcheck_rows, CliError};

fn pansharp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pansharp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small WV3 scene written as PSR1: MS `ms × ms`, PAN `4ms × 4ms`.
fn write_pair(dir: &Path, ms: usize, seed: u64) -> (MsImage, PanImage) {
    let sensor = SensorSpec::worldview3();
    let (m, p) = synthetic_scene(ms, ms, &sensor, seed, &SceneOptions::default()).unwrap();
    psr1::write(dir.join("ms.psr1"), &m.raster, 11, "WV3").unwrap();
    psr1::write(dir.join("pan.psr1"), &p.raster, 11, "WV3").unwrap();
    // What the CLI sees after the f32 round trip of the container.
    let m = MsImage::new(
        psr1::read(dir.join("ms.psr1")).unwrap().raster,
        sensor.clone(),
        Resolution::Reduced,
    )
    .unwrap();
    let p = PanImage::new(psr1::read(dir.join("pan.psr1")).unwrap().raster, sensor).unwrap();
    (m, p)
}

#[test]
fn unknown_keys_and_sections_are_config_errors() {
    assert!(matches!(
        RunConfig::parse("[train]\nepoch = 3\n"),
        Err(CliError::Config(_))
    ));
    assert!(matches!(
        RunConfig::parse("[optimizer]\nlr = 1\n"),
        Err(CliError::Config(_))
    ));
    assert!(matches!(RunConfig::parse("epochs = 3\n"), Err(CliError::Config(_))));
    let out = pansharp(&["--set", "train.epoch=3", "gradcheck"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.epoch"));
}

#[test]
fn effective_config_round_trips() {
    let mut cfg = RunConfig::parse(
        "[train]\n# comment\nepochs = 7\nlr_schedule = 0:1e-2,5:1e-3\n[model]\nvariant = single-stage\n",
    )
    .unwrap();
    cfg.apply_override("metric.window=16").unwrap();
    let again = RunConfig::parse(&cfg.to_text()).unwrap();
    assert_eq!(again, cfg);
    let t = again.train().unwrap();
    assert_eq!(t.epochs, 7);
    assert_eq!(t.lr_schedule, vec![(0, 1e-2), (5, 1e-3)]);
    assert_eq!(again.model(8, 4).unwrap().levels, 1);
    assert_eq!(again.metric().unwrap().window, 16);
    let defaults = RunConfig::default();
    assert_eq!(defaults.train().unwrap(), pansharp::trainer::TrainConfig::default());
    assert_eq!(defaults.model(8, 4).unwrap(), TdnetConfig::new(8));
}

#[test]
fn simulate_demo_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |out: &Path| {
        vec![
            "--seed".to_string(),
            "11".into(),
            "--set".into(),
            "dataset.demo_size=64".into(),
            "--set".into(),
            "dataset.patch=16".into(),
            "--set".into(),
            "dataset.stride=16".into(),
            "simulate".into(),
            "--demo".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let run = |out: &Path| pansharp(&args(out).iter().map(String::as_str).collect::<Vec<_>>());
    let text = ok(&run(&a));
    assert!(text.starts_with("16 samples"), "{text}");
    ok(&run(&b));
    assert_eq!(
        fs::read(a.join(MANIFEST_FILE)).unwrap(),
        fs::read(b.join(MANIFEST_FILE)).unwrap()
    );
    let echoed = RunConfig::load(&a.join(EFFECTIVE_CONFIG_FILE)).unwrap();
    assert_eq!(echoed.get("dataset", "seed"), "11");
    assert_eq!(echoed.get("train", "seed"), "11");
    let ds = Dataset::open(&a).unwrap();
    assert_eq!(ds.manifest.all_ids().len(), 16);
}

#[test]
fn simulate_rejects_ratio_indivisible_input() {
    let dir = tempfile::tempdir().unwrap();
    let ms = Raster::filled(10, 10, 8, 0.2);
    let pan = Raster::filled(30, 30, 1, 0.2);
    psr1::write(dir.path().join("ms.psr1"), &ms, 11, "WV3").unwrap();
    psr1::write(dir.path().join("pan.psr1"), &pan, 11, "WV3").unwrap();
    let ms_set = format!("dataset.ms={}", s(&dir.path().join("ms.psr1")));
    let pan_set = format!("dataset.pan={}", s(&dir.path().join("pan.psr1")));
    let out = pansharp(&[
        "--set",
        &ms_set,
        "--set",
        &pan_set,
        "simulate",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not divisible"));
    let out = pansharp(&["simulate", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = pansharp(&[
        "--set",
        "dataset.test_ratio=0.25",
        "simulate",
        "--demo",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fuse_matches_the_library_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let (ms, pan) = write_pair(dir.path(), 16, 3);
    for method in Method::ALL {
        let out_dir = dir.path().join(method.name());
        ok(&pansharp(&[
            "fuse",
            "--method",
            method.name(),
            "--ms",
            s(&dir.path().join("ms.psr1")),
            "--pan",
            s(&dir.path().join("pan.psr1")),
            "--out",
            s(&out_dir),
        ]));
        let lib = method.fuse(&ms, &pan).unwrap();
        let expected = psr1::encode(&lib.raster, 11, "WV3");
        assert_eq!(
            fs::read(out_dir.join("fused.psr1")).unwrap(),
            expected,
            "{}",
            method.name()
        );
        assert!(out_dir.join("fused_preview.ppm").exists());
        assert!(out_dir.join(EFFECTIVE_CONFIG_FILE).exists());
    }
}

#[test]
fn fuse_exp_of_a_constant_scene_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    psr1::write(dir.path().join("ms.psr1"), &Raster::filled(8, 8, 8, 0.375), 11, "WV3").unwrap();
    psr1::write(dir.path().join("pan.psr1"), &Raster::filled(32, 32, 1, 0.5), 11, "WV3").unwrap();
    let out = dir.path().join("o");
    ok(&pansharp(&[
        "fuse",
        "--method",
        "exp",
        "--ms",
        s(&dir.path().join("ms.psr1")),
        "--pan",
        s(&dir.path().join("pan.psr1")),
        "--out",
        s(&out),
    ]));
    let fused = psr1::read(out.join("fused.psr1")).unwrap().raster;
    assert_eq!(fused.dims(), (32, 32, 8));
    assert!(fused.data().iter().all(|&v| v == 0.375));
}

#[test]
fn fuse_with_tdnet_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (ms, pan) = write_pair(dir.path(), 8, 4);
    let model = TdnetModel::new(
        TdnetConfig {
            feature_width: 8,
            mscb_width: 3,
            ..TdnetConfig::new(8)
        },
        1,
    )
    .unwrap();
    let ckpt = dir.path().join("m.ckpt");
    fs::write(&ckpt, encode_checkpoint(&model)).unwrap();
    let out = dir.path().join("o");
    let method = format!("tdnet:{}", s(&ckpt));
    let (ms_path, pan_path) = (dir.path().join("ms.psr1"), dir.path().join("pan.psr1"));
    let args = ["--ms", s(&ms_path), "--pan", s(&pan_path)];
    let mut full = vec!["fuse", "--method", &method];
    full.extend(args);
    full.extend(["--out", s(&out)]);
    ok(&pansharp(&full));
    let fused = psr1::read(out.join("fused.psr1")).unwrap().raster;
    assert_eq!(fused.dims(), (32, 32, 8));
    let lib = model.fuse_raster(&ms.raster, &pan.raster).unwrap();
    assert_eq!(fs::read(out.join("fused.psr1")).unwrap(), psr1::encode(&lib, 11, "WV3"));

    let mut missing = vec!["fuse", "--method", "tdnet"];
    missing.extend(args);
    missing.extend(["--out", s(&out)]);
    assert_eq!(pansharp(&missing).status.code(), Some(2));
    let mut mismatch = vec!["--sensor", "gf2", "fuse", "--method", "exp"];
    mismatch.extend(args);
    mismatch.extend(["--out", s(&out)]);
    assert_eq!(pansharp(&mismatch).status.code(), Some(3));
}

fn write_set(dir: &Path, rasters: &[Raster]) {
    fs::create_dir_all(dir).unwrap();
    for (i, r) in rasters.iter().enumerate() {
        psr1::write(dir.join(format!("img{i}.psr1")), r, 11, "WV3").unwrap();
    }
}

#[test]
fn eval_reduced_ideal_row_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let refs: Vec<Raster> = (0..3)
        .map(|i| {
            synthetic_scene(32, 32, &SensorSpec::worldview3(), 20 + i, &SceneOptions::default())
                .unwrap()
                .0
                .raster
        })
        .collect();
    write_set(&dir.path().join("ref"), &refs);
    let csv = ok(&pansharp(&[
        "eval",
        "--fused",
        s(&dir.path().join("ref")),
        "--reference",
        s(&dir.path().join("ref")),
        "--method",
        "same",
        "--out",
        s(&dir.path().join("o")),
    ]));
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "method,image,sam,ergas,scc,q2n,d_lambda,d_s,qnr");
    let rep = EvalReport::from_csv(&csv).unwrap();
    assert_eq!(rep.records.len(), 3);
    for r in &rep.records {
        assert_eq!(r.get(Metric::Sam), Some(0.0));
        assert_eq!(r.get(Metric::Ergas), Some(0.0));
        assert_eq!(r.get(Metric::Scc), Some(1.0));
        assert_eq!(r.get(Metric::Q2n), Some(1.0));
    }

    let noisy: Vec<Raster> = refs
        .iter()
        .map(|r| r.map(|v| (v * 0.9 + 0.03).clamp(0.0, 1.0)))
        .collect();
    write_set(&dir.path().join("noisy"), &noisy);
    let csv = ok(&pansharp(&[
        "eval",
        "--fused",
        s(&dir.path().join("noisy")),
        "--reference",
        s(&dir.path().join("ref")),
        "--out",
        s(&dir.path().join("o2")),
    ]));
    let rep = EvalReport::from_csv(&csv).unwrap();
    let mean_row = csv
        .lines()
        .find(|l| l.starts_with(&format!("fused,{AGGREGATE_MEAN}")))
        .unwrap();
    let cells: Vec<&str> = mean_row.split(',').collect();
    for (i, m) in [Metric::Sam, Metric::Ergas, Metric::Scc, Metric::Q2n]
        .into_iter()
        .enumerate()
    {
        let recomputed = rep.records.iter().map(|r| r.get(m).unwrap()).sum::<f64>() / 3.0;
        let printed: f64 = cells[2 + i].parse().unwrap();
        assert!(
            (printed - recomputed).abs() <= 1e-5 * recomputed.abs().max(1e-12),
            "{m:?}"
        );
    }

    write_set(&dir.path().join("short"), &refs[..2]);
    let out = pansharp(&[
        "eval",
        "--fused",
        s(&dir.path().join("short")),
        "--reference",
        s(&dir.path().join("ref")),
        "--out",
        s(&dir.path().join("o3")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_full_mode_reports_qnr() {
    let dir = tempfile::tempdir().unwrap();
    let (ms, pan) = write_pair(dir.path(), 16, 5);
    let fused = Method::GlpHpm.fuse(&ms, &pan).unwrap();
    psr1::write(dir.path().join("fused.psr1"), &fused.raster, 11, "WV3").unwrap();
    let csv = ok(&pansharp(&[
        "eval",
        "--mode",
        "full",
        "--set",
        "metric.window=16",
        "--fused",
        s(&dir.path().join("fused.psr1")),
        "--ms",
        s(&dir.path().join("ms.psr1")),
        "--pan",
        s(&dir.path().join("pan.psr1")),
        "--out",
        s(&dir.path().join("o")),
    ]));
    let rep = EvalReport::from_csv(&csv).unwrap();
    let r = &rep.records[0];
    let (dl, ds, q) = (
        r.get(Metric::DLambda).unwrap(),
        r.get(Metric::Ds).unwrap(),
        r.get(Metric::Qnr).unwrap(),
    );
    assert!((0.0..=1.0).contains(&q));
    assert!((q - (1.0 - dl) * (1.0 - ds)).abs() < 1e-5);
    assert!(r.get(Metric::Sam).is_none());
}

#[test]
fn compare_ranks_methods_on_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&pansharp(&[
        "--set",
        "dataset.demo_size=64",
        "--set",
        "dataset.patch=16",
        "--set",
        "dataset.stride=16",
        "--set",
        "dataset.test_ratio=0.25",
        "--set",
        "dataset.train_ratio=0.5",
        "--set",
        "dataset.val_ratio=0.25",
        "simulate",
        "--demo",
        "--out",
        s(&data),
    ]));
    let table = ok(&pansharp(&[
        "--set",
        "metric.window=16",
        "compare",
        "--data",
        s(&data),
        "--methods",
        "exp,glp-hpm,sfim",
        "--out",
        s(&dir.path().join("cmp")),
    ]));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "{table}");
    assert!(lines[0].starts_with("method"));
    for name in ["exp", "glp-hpm", "sfim"] {
        assert_eq!(
            lines
                .iter()
                .filter(|l| l.split_whitespace().next() == Some(name))
                .count(),
            1
        );
    }
    let csv = fs::read_to_string(dir.path().join("cmp/compare.csv")).unwrap();
    let rep = EvalReport::from_csv(&csv).unwrap();
    assert_eq!(rep.methods(), vec!["exp", "glp-hpm", "sfim"]);
    let table = rep.rank().unwrap();
    for (j, m) in table.columns.iter().enumerate() {
        let best = table.rows.iter().map(|r| r.means[j]).fold(
            if m.lower_is_better() {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            },
            |a, b| {
                if m.lower_is_better() {
                    a.min(b)
                } else {
                    a.max(b)
                }
            },
        );
        for r in &table.rows {
            assert_eq!(r.best[j], r.means[j] == best);
        }
    }

    let single = ok(&pansharp(&[
        "compare",
        "--report",
        s(&dir.path().join("cmp/compare.csv")),
        "--out",
        s(&dir.path().join("cmp2")),
    ]));
    assert_eq!(single.lines().count(), 4);
    let test_ids = Dataset::open(&data).unwrap().manifest.splits.test;
    assert!(Dataset::raster_path(&data, test_ids[0], Role::Gt).exists());
}

#[test]
fn gradcheck_lists_every_operator_once_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&pansharp(&["gradcheck", "--out", s(dir.path())]));
    let names: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    let expected = [
        "conv2d",
        "conv_transpose2d",
        "relu",
        "sigmoid",
        "maxpool2d",
        "pixel_shuffle",
        "upsample_linear",
        "concat",
        "add",
        "sub",
        "mul",
        "scale",
        "sum",
        "unary",
        "l1_loss",
        "tdnet",
    ];
    assert_eq!(names, expected);
    assert!(text.lines().skip(1).all(|l| l.ends_with("PASS")), "{text}");
    assert_eq!(fs::read_to_string(dir.path().join("gradcheck.txt")).unwrap(), text);
}

#[test]
fn gradcheck_catches_a_corrupted_backward_rule() {
    const BROKEN: UnaryFn = UnaryFn {
        name: "square",
        forward: |x| x * x,
        derivative: |x| 2.1 * x,
    };
    const HONEST: UnaryFn = UnaryFn {
        name: "square",
        forward: |x| x * x,
        derivative: |x| 2.0 * x,
    };
    let input = Tensor::from_fn(&[2, 3], |i| 0.3 + 0.1 * i as f32);
    let cases = vec![
        GradCase::new(
            "honest",
            vec![input.clone()],
            Box::new(|g, v| Ok(g.unary(v[0], HONEST))),
        ),
        GradCase::new("broken", vec![input], Box::new(|g, v| Ok(g.unary(v[0], BROKEN)))),
    ];
    let rows = gradcheck_rows(&cases);
    assert!(rows[0].passed);
    assert!(!rows[1].passed);
    let text = format_gradcheck(&rows);
    assert!(text.lines().nth(2).unwrap().ends_with("FAIL"));
}
