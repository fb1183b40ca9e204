use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cfcn::config::ExperimentConfig;
use cfcn_core::densecrf::{LogRange, SearchSpace};
use cfcn_core::minifcn::NetConfig;
use cfcn_core::phantom::{DistractorSpec, LesionSpec, LiverSpec, PhantomSpec};

fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed: 3,
        out_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    c.dataset.volumes = 4;
    c.dataset.train_fraction = 0.5;
    c.dataset.phantom = PhantomSpec {
        shape: [24, 24, 12],
        liver: LiverSpec {
            center: [12.0, 12.0, 6.0],
            radii: [7.0, 6.0, 4.0],
            center_jitter: 1.0,
            ..LiverSpec::default()
        },
        lesions: LesionSpec {
            radius_min: 1.0,
            radius_max: 2.0,
            ..LesionSpec::default()
        },
        distractors: DistractorSpec {
            radius_min: 1.0,
            radius_max: 2.0,
            ..DistractorSpec::default()
        },
        ..PhantomSpec::default()
    };
    let net = NetConfig {
        depth: 1,
        base_channels: 2,
        ..NetConfig::default()
    };
    c.liver_net = net;
    c.lesion_net = net;
    for t in [&mut c.liver_train, &mut c.lesion_train] {
        t.iterations = 6;
        t.eval_every = 3;
    }
    c.cascade.roi_target_shape = [16, 16, 0];
    // the nets are barely trained; keep the liver ROI non-empty
    c.cascade.liver_threshold = 1e-6;
    let space = SearchSpace {
        sigma_bil: LogRange(0.5, 1.0),
        iterations: 2,
        include_baseline: true,
        ..c.crf_search.liver.clone().unwrap()
    };
    c.crf_search.liver = Some(space.clone());
    c.crf_search.lesion = Some(space);
    c.crf_search.budget = 2;
    c.crf_search.max_cases = Some(1);
    c.overlay.every_k = 4;
    c
}

struct Env {
    _dir: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn env() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = dir.path().join("config.json");
    tiny_config(&out).save(&config).unwrap();
    Env {
        _dir: dir,
        config,
        out,
    }
}

fn cfcn(env: &Env, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfcn"))
        .arg("--config")
        .arg(&env.config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(env: &Env, args: &[&str]) -> String {
    let o = cfcn(env, args);
    assert!(
        o.status.success(),
        "cfcn {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn fails(env: &Env, args: &[&str]) -> String {
    let o = cfcn(env, args);
    assert!(!o.status.success(), "cfcn {args:?} unexpectedly succeeded");
    String::from_utf8(o.stderr).unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn full_workflow_through_the_binary() {
    let e = env();
    ok(&e, &["phantom"]);
    let manifest = e.out.join("dataset/manifest.json");
    let first = fs::read(&manifest).unwrap();
    ok(&e, &["phantom"]);
    assert_eq!(fs::read(&manifest).unwrap(), first);

    ok(&e, &["train", "--role", "liver"]);
    ok(&e, &["train", "--role", "lesion"]);
    let curve = fs::read_to_string(e.out.join("models/liver_curve.csv")).unwrap();
    let iterations: Vec<&str> = curve.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iterations, ["3", "6"]);

    ok(&e, &["crf-search"]);
    let params = e.out.join("crf/crf_params.json");
    assert!(params.exists());
    assert_eq!(fs::read_to_string(e.out.join("crf/trials_liver.csv")).unwrap().lines().count(), 4);

    let stdout = ok(&e, &["segment", "--crf", "--crf-params", params.to_str().unwrap(), "--baseline"]);
    assert!(stdout.contains("segmented 2 volumes"), "{stdout}");
    let seg = e.out.join("segment");
    for d in ["labels", "labels_crf", "labels_single", "roi"] {
        assert_eq!(fs::read_dir(seg.join(d)).unwrap().filter(|f| {
            f.as_ref().unwrap().path().extension().is_some_and(|x| x == "json")
        }).count(), 2, "{d}");
    }
    let overlays: Vec<PathBuf> = fs::read_dir(seg.join("overlays"))
        .unwrap()
        .flat_map(|d| fs::read_dir(d.unwrap().path()).unwrap())
        .map(|f| f.unwrap().path())
        .collect();
    assert!(!overlays.is_empty());
    for p in &overlays {
        let img = image::open(p).unwrap();
        assert_eq!(img.color(), image::ColorType::Rgb8);
        assert_eq!((img.width(), img.height()), (24, 24));
    }

    let stdout = ok(&e, &["evaluate", "--pred", seg.join("labels").to_str().unwrap(), "--split", "test"]);
    assert!(stdout.contains("label 1 dice"), "{stdout}");
    let metrics = e.out.join("eval/labels_metrics.csv");
    assert_eq!(header(&metrics), "case,label,dice,voe_pct,rvd_pct,asd_mm,msd_mm,flags");
    // two cases x two labels, then mean and std rows per label
    assert_eq!(fs::read_to_string(&metrics).unwrap().lines().count(), 1 + 4 + 4);
    assert_eq!(header(&e.out.join("eval/labels_summary.csv")), "label,metric,mean,std,n");
}

#[test]
fn single_volume_with_truth_and_seed_override() {
    let e = env();
    ok(&e, &["phantom"]);
    ok(&e, &["train", "--role", "liver"]);
    ok(&e, &["train", "--role", "lesion"]);
    let vol = e.out.join("dataset/volumes/case_000.json");
    let truth = e.out.join("dataset/labels/case_000.json");
    ok(&e, &["segment", "--volume", vol.to_str().unwrap(), "--truth", truth.to_str().unwrap()]);
    assert!(e.out.join("segment/labels/case_000.json").exists());
    assert!(e.out.join("segment/overlays/case_000").is_dir());

    let other = e.out.with_file_name("other");
    ok(&e, &["--seed", "4", "--out", other.to_str().unwrap(), "phantom"]);
    assert_ne!(
        fs::read(e.out.join("dataset/volumes/case_000.raw")).unwrap(),
        fs::read(other.join("dataset/volumes/case_000.raw")).unwrap()
    );
}

#[test]
fn missing_prerequisites_are_reported() {
    let e = env();
    assert!(fails(&e, &["train", "--role", "liver"]).contains("cfcn phantom"));
    ok(&e, &["phantom"]);
    assert!(fails(&e, &["train", "--role", "lesion"]).contains("train --role liver"));
    assert!(fails(&e, &["segment"]).contains("checkpoint"));
    assert!(fails(&e, &["crf-search"]).contains("checkpoint"));

    let empty = e.out.join("empty");
    fs::create_dir_all(&empty).unwrap();
    let err = fails(&e, &["evaluate", "--pred", empty.to_str().unwrap(), "--split", "test"]);
    assert!(err.contains("predictions missing") && err.contains("case_"), "{err}");
}
