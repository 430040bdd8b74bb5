use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use virtview::camera::{Box3D, CameraIntrinsics};
use virtview::classes::{class_name, NUM_CLASSES};
use virtview::codec::write_records;
use virtview::config::RunConfig;
use virtview::eval::{evaluate, frames_from_labels};
use virtview::kitti::{
    box3d_to_kitti, format_calib, format_label_file, format_split, frame_id, kitti_to_box3d,
    load_split, read_label_dir, write_atomic, Calib, KittiDataset, KittiLabel,
};
use virtview::par::{derive_seed, Execution};
use virtview::pipeline::{run_inference, Detector, Diagnostics, OracleConfig, OracleDetector};
use virtview::raster::Raster;
use virtview::synth::{filter_by_range, generate_scenes, DepthRange, RangeSplitKind};
use virtview::viewport::{
    format_view_record, inference_viewports, resample, sample_training_viewports,
};

use crate::detectors::{Recorder, StubDetector};
use crate::error::CliError;
use crate::imaging::{load_png, png_size, save_png};
use crate::{selftest, Cli, Command, DatasetArg, FrameSelect, GlobalArgs, ViewMode};

/// Focal length and principal point of the synthetic camera.
const SYNTH_CAMERA: (f64, f64, f64, f64) = (721.5377, 721.5377, 609.5593, 172.854);

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli.global)?;
    let exec = configure_jobs(cli.global.jobs)?;
    match cli.command {
        Command::Synth {
            out,
            frames,
            render,
            image_size,
        } => cmd_synth(&cfg, exec, &out, frames, render, image_size),
        Command::Views {
            data,
            select,
            mode,
            out,
        } => cmd_views(&cfg, exec, &data, &select, mode, &out),
        Command::Infer {
            data,
            select,
            detector,
            out,
            dump_raw,
        } => cmd_infer(
            &cfg,
            exec,
            &data,
            &select,
            &detector,
            &out,
            dump_raw.as_deref(),
        ),
        Command::Eval { results, gt, out } => cmd_eval(&cfg, exec, &results, &gt, out.as_deref()),
        Command::Split {
            data,
            kind,
            train_range,
            val_range,
            out,
        } => cmd_split(&data, kind, train_range, val_range, &out),
        Command::Selftest { scenes } => cmd_selftest(&cfg, exec, scenes),
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

/// Defaults, then the configuration file, then `--set` and `--seed`.
pub fn load_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    for kv in &g.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_jobs(jobs: Option<usize>) -> Result<Execution, CliError> {
    match jobs {
        None => Ok(Execution::Parallel),
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(1) => Ok(Execution::Sequential),
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Internal(e.to_string()))?;
            Ok(Execution::Parallel)
        }
    }
}

/// Random stream of a frame: its numeric id, or a hash of the id otherwise,
/// so a frame's output does not depend on which other frames are selected.
fn frame_stream(id: &str) -> u64 {
    id.parse().unwrap_or_else(|_| {
        id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        })
    })
}

/// Runs `f` on every item and returns the first error in item order.
fn try_each<T: Sync, R: Send>(
    exec: Execution,
    items: &[T],
    f: impl Fn(&T) -> Result<R, CliError> + Sync + Send,
) -> Result<Vec<R>, CliError> {
    exec.map(items, f).into_iter().collect()
}

fn select_frames(ds: &KittiDataset, sel: &FrameSelect) -> Result<Vec<String>, CliError> {
    let ids = match (&sel.frame, &sel.split) {
        (Some(f), _) => vec![f.clone()],
        (None, Some(p)) => load_split(p)?,
        (None, None) => ds.frames()?,
    };
    if ids.is_empty() {
        return Err(CliError::Data(format!(
            "no frames selected in {}",
            ds.root.display()
        )));
    }
    Ok(ids)
}

struct FrameData {
    k: CameraIntrinsics,
    image: Option<Raster>,
}

fn load_frame(
    ds: &KittiDataset,
    data: &DatasetArg,
    id: &str,
    with_pixels: bool,
) -> Result<FrameData, CliError> {
    let calib = ds.calib(id)?;
    let img_path = ds.image_path(id);
    let has_image = img_path.is_file();
    let (w, h) = if has_image {
        png_size(&img_path)?
    } else {
        data.image_size
    };
    let k = calib
        .intrinsics(w, h)
        .map_err(|e| CliError::Data(format!("{}: {e}", ds.calib_path(id).display())))?;
    let image = if has_image && with_pixels {
        Some(load_png(&img_path)?)
    } else {
        None
    };
    Ok(FrameData { k, image })
}

fn ground_truth(ds: &KittiDataset, id: &str) -> Result<Vec<Box3D>, CliError> {
    Ok(ds
        .labels(id)?
        .iter()
        .filter(|l| !l.is_dont_care())
        .map(kitti_to_box3d)
        .collect())
}

fn cmd_synth(
    cfg: &RunConfig,
    exec: Execution,
    out: &Path,
    frames: usize,
    render: bool,
    (w, h): (u32, u32),
) -> Result<(), CliError> {
    if frames == 0 {
        return Err(CliError::Usage("--frames must be at least 1".into()));
    }
    let (fx, fy, cu, cv) = SYNTH_CAMERA;
    let k = CameraIntrinsics::new(fx, fy, cu * w as f64 / 1242.0, cv * h as f64 / 375.0, w, h)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut params = cfg.synth.clone();
    params.render |= render;
    let scenes = generate_scenes(&params, &k, frames, cfg.seed, exec);
    let ds = KittiDataset::new(out);
    let calib = format_calib(&Calib::from_intrinsics(&k));
    let indices: Vec<usize> = (0..frames).collect();
    try_each(exec, &indices, |&i| {
        let id = frame_id(i);
        let s = &scenes[i];
        let labels: Vec<KittiLabel> = s
            .objects
            .iter()
            .map(|b| box3d_to_kitti(b, Some(&k)))
            .collect();
        write_atomic(&ds.calib_path(&id), calib.as_bytes())?;
        write_atomic(&ds.label_path(&id), format_label_file(&labels).as_bytes())?;
        if let Some(img) = &s.image {
            save_png(&ds.image_path(&id), img)?;
        }
        Ok(())
    })?;
    let ids: Vec<String> = indices.iter().map(|&i| frame_id(i)).collect();
    write_atomic(
        &out.join("ImageSets").join("all.txt"),
        format_split(&ids).as_bytes(),
    )?;
    let objects: usize = scenes.iter().map(|s| s.objects.len()).sum();
    println!(
        "synth frames={frames} objects={objects} images={} out={}",
        params.render,
        out.display()
    );
    Ok(())
}

fn cmd_views(
    cfg: &RunConfig,
    exec: Execution,
    data: &DatasetArg,
    sel: &FrameSelect,
    mode: ViewMode,
    out: &Path,
) -> Result<(), CliError> {
    let ds = KittiDataset::new(&data.dataset);
    let ids = select_frames(&ds, sel)?;
    let counts = try_each(exec, &ids, |id| {
        let f = load_frame(&ds, data, id, true)?;
        // (spec, extra sidecar lines)
        let views: Vec<_> = match mode {
            ViewMode::Inference => inference_viewports(&f.k, &cfg.view, f.k.width)
                .map_err(|e| CliError::Data(format!("frame {id}: {e}")))?
                .into_iter()
                .map(|s| (s, String::new()))
                .collect(),
            ViewMode::Training => {
                let gt = ground_truth(&ds, id)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, frame_stream(id)));
                sample_training_viewports(&gt, &f.k, &cfg.view, &mut rng)
                    .map_err(|e| CliError::Data(format!("frame {id}: {e}")))?
                    .into_iter()
                    .map(|v| {
                        let mut extra = String::new();
                        match v.target {
                            Some(t) => writeln!(extra, "guided {t}"),
                            None => writeln!(extra, "guided none"),
                        }
                        .ok();
                        for t in &v.targets {
                            writeln!(
                                extra,
                                "target {} {} {} {:.6}",
                                t.gt_index,
                                class_name(t.relative.class_id),
                                u8::from(t.ignore),
                                t.relative.nearest_depth()
                            )
                            .ok();
                        }
                        (v.spec, extra)
                    })
                    .collect()
            }
        };
        let dir = out.join(id);
        for (i, (spec, extra)) in views.iter().enumerate() {
            let sidecar = format!("{}\n{extra}", format_view_record(i, spec));
            write_atomic(&dir.join(format!("view_{i:02}.txt")), sidecar.as_bytes())?;
            if let Some(img) = &f.image {
                let v = resample(img, spec)
                    .map_err(|e| CliError::Data(format!("frame {id} view {i}: {e}")))?;
                save_png(&dir.join(format!("view_{i:02}.png")), &v)?;
            }
        }
        Ok(views.len())
    })?;
    println!(
        "views frames={} views={} mode={} out={}",
        ids.len(),
        counts.iter().sum::<usize>(),
        match mode {
            ViewMode::Inference => "inference",
            ViewMode::Training => "training",
        },
        out.display()
    );
    Ok(())
}

fn cmd_infer(
    cfg: &RunConfig,
    exec: Execution,
    data: &DatasetArg,
    sel: &FrameSelect,
    detector: &str,
    out: &Path,
    dump_raw: Option<&Path>,
) -> Result<(), CliError> {
    if detector != "oracle" && !detector.starts_with("stub:") {
        return Err(CliError::Usage(format!(
            "unknown detector {detector:?} (oracle or stub:DIR)"
        )));
    }
    let ds = KittiDataset::new(&data.dataset);
    let ids = select_frames(&ds, sel)?;
    let icfg = cfg.inference();
    let per_frame = try_each(exec, &ids, |id| {
        let f = load_frame(&ds, data, id, true)?;
        let gt = ground_truth(&ds, id).ok();
        let det: Box<dyn Detector> = match detector.strip_prefix("stub:") {
            Some(dir) => Box::new(StubDetector::load(
                &Path::new(dir).join(format!("{id}.vvrd")),
            )?),
            None => {
                let gt = gt.clone().ok_or_else(|| {
                    CliError::Data(format!(
                        "{}: oracle needs labels",
                        ds.label_path(id).display()
                    ))
                })?;
                let ocfg = OracleConfig {
                    seed: derive_seed(cfg.seed, frame_stream(id)),
                    ..cfg.oracle.clone()
                };
                Box::new(OracleDetector::new(gt, f.k, &icfg, ocfg))
            }
        };
        let recorder = dump_raw.map(|_| Recorder::new(det.as_ref()));
        let active: &dyn Detector = match &recorder {
            Some(r) => r,
            None => det.as_ref(),
        };
        let res = run_inference(
            &f.k,
            f.image.as_ref(),
            active,
            &icfg,
            Execution::Sequential,
            gt.as_deref(),
        )?;
        if let (Some(dir), Some(r)) = (dump_raw, recorder) {
            let mut buf = Vec::new();
            write_records(&mut buf, NUM_CLASSES as u32, &r.into_records())
                .map_err(|e| CliError::Internal(e.to_string()))?;
            write_atomic(&dir.join(format!("{id}.vvrd")), &buf)?;
        }
        let labels: Vec<KittiLabel> = res
            .detections
            .iter()
            .map(|b| box3d_to_kitti(b, Some(&f.k)))
            .collect();
        write_atomic(
            &out.join(format!("{id}.txt")),
            format_label_file(&labels).as_bytes(),
        )?;
        Ok((labels.len(), res.diagnostics))
    })?;
    let mut diag = Diagnostics::default();
    let mut n_det = 0;
    for (n, d) in &per_frame {
        n_det += n;
        diag.merge(d);
    }
    for (view, reason) in &diag.skipped_views {
        eprintln!("warning: view {view} skipped: {reason}");
    }
    println!("infer {}", diag.report());
    println!(
        "infer frames={} detections={n_det} out={}",
        ids.len(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    exec: Execution,
    results: &Path,
    gt: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let dets = frames_from_labels(&read_label_dir(results)?);
    let gts = frames_from_labels(&read_label_dir(gt)?);
    let report = evaluate(&dets, &gts, &cfg.eval, exec)?;
    if let Some(dir) = out {
        write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
        report.write_pr_files(&dir.join("pr"))?;
    }
    let lines = report.summary_lines();
    for l in &lines {
        println!("{l}");
    }
    println!("eval frames={} cells={}", gts.len(), lines.len());
    Ok(())
}

fn cmd_split(
    data: &DatasetArg,
    kind: Option<String>,
    train_range: Option<String>,
    val_range: Option<String>,
    out: &Path,
) -> Result<(), CliError> {
    let (train, val): (DepthRange, DepthRange) = match (kind, train_range, val_range) {
        (Some(k), _, _) => k
            .parse::<RangeSplitKind>()
            .map_err(CliError::Usage)?
            .ranges(),
        (None, Some(t), Some(v)) => (
            t.parse()
                .map_err(|e: String| CliError::Usage(format!("--train-range: {e}")))?,
            v.parse()
                .map_err(|e: String| CliError::Usage(format!("--val-range: {e}")))?,
        ),
        _ => {
            return Err(CliError::Usage(
                "give --kind or both --train-range and --val-range".into(),
            ))
        }
    };
    let ds = KittiDataset::new(&data.dataset);
    let frames = read_label_dir(&ds.label_dir())?;
    let labels: Vec<Vec<KittiLabel>> = frames.iter().map(|(_, l)| l.clone()).collect();
    let mut summary = String::from("split");
    for (name, range) in [("train", &train), ("val", &val)] {
        let kept = filter_by_range(&labels, range, |l: &KittiLabel| l.location[2]);
        let ids: Vec<String> = kept.iter().map(|(i, _)| frames[*i].0.clone()).collect();
        for (i, recs) in &kept {
            let p = out
                .join(name)
                .join("label_2")
                .join(format!("{}.txt", frames[*i].0));
            write_atomic(&p, format_label_file(recs).as_bytes())?;
        }
        write_atomic(
            &out.join(format!("{name}.txt")),
            format_split(&ids).as_bytes(),
        )?;
        let n_obj: usize = kept.iter().map(|(_, r)| r.len()).sum();
        write!(
            summary,
            " {name}_range={range} {name}_frames={} {name}_objects={n_obj}",
            ids.len()
        )
        .ok();
    }
    println!("{summary}");
    Ok(())
}

fn cmd_selftest(cfg: &RunConfig, exec: Execution, scenes: usize) -> Result<(), CliError> {
    let results = selftest::run_all(cfg, exec, scenes);
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!(
            "selftest {} {} {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    println!("selftest passed={} failed={failed}", results.len() - failed);
    if failed > 0 {
        return Err(CliError::Internal(format!(
            "{failed} self-test check(s) failed"
        )));
    }
    Ok(())
}
