use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_virtview"));
    c.env_remove("VIRTVIEW_DATASET");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Scenes whose objects all lie inside the sweep and are well separated.
const CLEAN: [&str; 4] = [
    "--set",
    "synth.min_nearest_depth=4.5",
    "--set",
    "synth.max_2d_iou=0.4",
];

fn synth(dir: &Path, frames: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", s(dir), "--frames", frames, "--seed", "7"];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn views_emits_seventeen_inference_views_for_kitti_width() {
    let t = tempfile::tempdir().unwrap();
    let ds = t.path().join("ds");
    synth(&ds, "1", &[]);
    let out = t.path().join("views");
    let stdout = ok(&[
        "views", "--dataset", s(&ds), "--frame", "000000", "--out", s(&out), "--set", "view.z_res=5",
    ]);
    assert!(stdout.contains("views=17"), "{stdout}");
    let n = fs::read_dir(out.join("000000"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".txt"))
        .count();
    assert_eq!(n, 17);
}

#[test]
fn views_writes_resampled_images_when_the_frame_has_one() {
    let t = tempfile::tempdir().unwrap();
    let ds = t.path().join("ds");
    synth(&ds, "1", &["--render"]);
    let out = t.path().join("views");
    ok(&["views", "--dataset", s(&ds), "--frame", "000000", "--out", s(&out)]);
    let pngs = fs::read_dir(out.join("000000"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".png"))
        .count();
    assert_eq!(pngs, 17);
}

#[test]
fn missing_calibration_directory_is_a_data_error_naming_the_path() {
    let t = tempfile::tempdir().unwrap();
    let ds = t.path().join("ds");
    synth(&ds, "2", &[]);
    fs::remove_dir_all(ds.join("calib")).unwrap();
    let o = run(&["infer", "--dataset", s(&ds), "--out", s(&t.path().join("res"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(s(&ds.join("calib"))), "{err}");
}

#[test]
fn dataset_root_can_come_from_the_environment() {
    let t = tempfile::tempdir().unwrap();
    let ds = t.path().join("ds");
    synth(&ds, "1", &[]);
    let o = bin()
        .env("VIRTVIEW_DATASET", &ds)
        .args(["views", "--frame", "000000", "--out", s(&t.path().join("v"))])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["config", "--set", "no.such.key=1"]).status.code(), Some(1));
    assert_eq!(run(&["config", "--set", "view.z_min=99"]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--out", "x", "--frames", "0"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn oracle_results_evaluate_to_full_ap() {
    let t = tempfile::tempdir().unwrap();
    let ds = t.path().join("ds");
    synth(&ds, "20", &CLEAN);
    let res = t.path().join("res");
    let summary = ok(&["infer", "--dataset", s(&ds), "--out", s(&res)]);
    assert!(summary.contains("frames=20"), "{summary}");
    let ev = t.path().join("ev");
    let out = ok(&["eval", "--results", s(&res), "--gt", s(&ds.join("label_2")), "--out", s(&ev)]);
    assert!(out.lines().any(|l| l == "Car/Moderate/3D AP=100.00"), "{out}");
    for l in out.lines().filter(|l| l.contains("AP=")) {
        assert!(l.ends_with("AP=100.00"), "{l}");
    }
    let csv = fs::read_to_string(ev.join("report.csv")).unwrap();
    assert!(csv.starts_with("class,difficulty,metric,ap,tp,fp,fn"));
}

#[test]
fn stub_detector_replays_recorded_outputs() {
    let t = tempfile::tempdir().unwrap();
    let ds = t.path().join("ds");
    synth(&ds, "4", &[]);
    let (a, b, raw) = (t.path().join("a"), t.path().join("b"), t.path().join("raw"));
    ok(&[
        "infer", "--dataset", s(&ds), "--out", s(&a), "--dump-raw", s(&raw),
        "--set", "oracle.noise_depth=0.3", "--set", "oracle.clutter_rate=0.5",
    ]);
    let stub = format!("stub:{}", s(&raw));
    ok(&["infer", "--dataset", s(&ds), "--out", s(&b), "--detector", &stub]);
    assert_eq!(snapshot(&a), snapshot(&b));
    let o = run(&["infer", "--dataset", s(&ds), "--out", s(&b), "--detector", "stub:/nonexistent"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let t = tempfile::tempdir().unwrap();
    let mut snaps = Vec::new();
    for (i, jobs) in ["1", "3"].iter().enumerate() {
        let root = t.path().join(format!("run{i}"));
        let ds = root.join("ds");
        ok(&["synth", "--out", s(&ds), "--frames", "6", "--render", "--seed", "11", "--jobs", jobs]);
        ok(&[
            "infer", "--dataset", s(&ds), "--out", s(&root.join("res")), "--seed", "11", "--jobs", jobs,
            "--set", "oracle.noise_center=1", "--set", "oracle.drop_prob=0.2",
        ]);
        ok(&["views", "--dataset", s(&ds), "--mode", "training", "--out", s(&root.join("tv")), "--jobs", jobs]);
        snaps.push(snapshot(&root));
    }
    assert_eq!(snaps[0], snaps[1]);
}

#[test]
fn config_dump_reads_back_and_file_precedes_flags() {
    let t = tempfile::tempdir().unwrap();
    let dump = ok(&["config", "--set", "view.z_res=4"]);
    let p = t.path().join("run.cfg");
    fs::write(&p, &dump).unwrap();
    let again = ok(&["config", "--config", s(&p)]);
    assert_eq!(dump, again);
    let flagged = ok(&["config", "--config", s(&p), "--set", "view.z_res=6"]);
    assert!(flagged.contains("view.z_res = 6\n"));
    fs::write(&p, "view.z_res = 4\nbogus = 1\n").unwrap();
    let o = run(&["config", "--config", s(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn split_partitions_labels_by_depth() {
    let t = tempfile::tempdir().unwrap();
    let ds = t.path().join("ds");
    synth(&ds, "10", &[]);
    let out = t.path().join("split");
    let line = ok(&["split", "--dataset", s(&ds), "--kind", "far-near", "--out", s(&out)]);
    assert!(line.starts_with("split train_range=0-20 "), "{line}");
    for (name, lo, hi) in [("train", 0.0, 20.0), ("val", 20.0, 50.0)] {
        let ids = fs::read_to_string(out.join(format!("{name}.txt"))).unwrap();
        for id in ids.lines() {
            let labels = fs::read_to_string(out.join(name).join("label_2").join(format!("{id}.txt"))).unwrap();
            for l in labels.lines() {
                let z: f64 = l.split_whitespace().nth(13).unwrap().parse().unwrap();
                assert!((lo..hi).contains(&z), "{name} {z}");
            }
        }
    }
    let o = run(&["split", "--dataset", s(&ds), "--train-range", "0-5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn selftest_passes_with_defaults() {
    let out = ok(&["selftest", "--scenes", "8"]);
    assert!(out.lines().last().unwrap().ends_with("failed=0"), "{out}");
}
