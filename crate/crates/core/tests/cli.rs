use std::path::Path;
use std::process::{Command, Output};

use lcdnet::groundtruth::read_float_grid;
use lcdnet::model::{complexity_report, ArchitectureManifest};
use lcdnet::Error;

fn lcdnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcdnet")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes `n` synthetic scenes into `dir` and returns the manifest path.
fn synth(dir: &Path, n: usize, extra: &[&str]) -> std::path::PathBuf {
    let scenes = n.to_string();
    let mut args = vec!["synth", "--out", p(dir), "--scenes", &scenes, "--seed", "3"];
    args.extend_from_slice(extra);
    let o = lcdnet(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    dir.join("manifest.csv")
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = match std::fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect(),
        Err(_) => Vec::new(),
    };
    names.sort();
    names
}

#[test]
fn gengt_on_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.csv");
    std::fs::write(&manifest, "image_path,annotation_path,altitude\n").unwrap();
    let out = dir.path().join("gt");
    let o = lcdnet(&["gengt", "--manifest", p(&manifest), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("0 images"), "{}", stdout(&o));
    assert!(files_in(&out).is_empty());
}

#[test]
fn gengt_on_ten_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), 10, &[]);
    let out = dir.path().join("gt");
    let o = lcdnet(&["gengt", "--manifest", p(&manifest), "--out", p(&out), "--sigma", "1.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let names = files_in(&out);
    assert_eq!(names.len(), 20);
    assert!(names.contains(&"scene_0000.full.map".to_string()));
    assert!(names.contains(&"scene_0009.half.map".to_string()));

    let report = stdout(&o);
    let err: f64 = report.rsplit(' ').next().unwrap().trim().parse().unwrap();
    assert!(err < 1e-6, "{report}");
    // each stored map carries the annotation count as its mass
    let text = std::fs::read_to_string(out.join("scene_0003.half.map")).unwrap();
    let map = read_float_grid(&text, Path::new("m")).unwrap();
    let ann = std::fs::read_to_string(dir.path().join("data/scene_0003.txt")).unwrap();
    let n = ann.lines().filter(|l| !l.trim().is_empty()).count();
    assert!((map.sum() - n as f64).abs() < 1e-6);
}

#[test]
fn gengt_altitude_mode_needs_altitudes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), 3, &[]);
    let cfg = dir.path().join("gt.cfg");
    std::fs::write(&cfg, "mode = altitude\nbands = 0:50:2; 50:200:1\n").unwrap();
    let out = dir.path().join("gt");
    let o = lcdnet(&["gengt", "--manifest", p(&manifest), "--out", p(&out), "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scene_0000"), "{}", stderr(&o));
    assert!(files_in(&out).is_empty(), "partial output left behind");
}

#[test]
fn synth_writes_five_scenes_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ma = synth(&a, 5, &["--set", "width=32", "--set", "height=24"]);
    let mb = synth(&b, 5, &["--set", "width=32", "--set", "height=24"]);

    let manifest = std::fs::read_to_string(&ma).unwrap();
    assert_eq!(manifest.lines().count(), 6, "{manifest}");
    for line in manifest.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert!(a.join(cols[0]).is_file() && a.join(cols[1]).is_file(), "{line}");
    }
    assert_eq!(manifest, std::fs::read_to_string(&mb).unwrap());
    for name in files_in(&a) {
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn export_of_zero_map_is_black() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("z.map");
    std::fs::write(&map, "LCDMAP 3 2\n0 0 0\n0 0 0\n").unwrap();
    let img = dir.path().join("z.pgm");
    let o = lcdnet(&["export", "--map", p(&map), "--out", p(&img)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bytes = std::fs::read(&img).unwrap();
    let header = b"P5\n3 2\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(&bytes[header.len()..], &[0u8; 6]);
}

#[test]
fn export_to_unwritable_path_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("z.map");
    std::fs::write(&map, "LCDMAP 1 1\n1\n").unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = lcdnet(&["export", "--map", p(&map), "--out", p(&blocker.join("x.pgm"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn self_eval_gives_perfect_scores() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), 4, &["--set", "width=32", "--set", "height=32"]);
    let out = dir.path().join("eval");
    let o = lcdnet(&["eval", "--manifest", p(&manifest), "--out", p(&out), "--self-eval"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let tsv = std::fs::read_to_string(out.join("metrics.tsv")).unwrap();
    let mut lines = tsv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("{name} in {header:?}"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 5, "four images plus the aggregate row");
    for r in &rows[..4] {
        assert_eq!(r[col("abs_err")].parse::<f64>().unwrap(), 0.0, "{r:?}");
        assert_eq!(r[col("ssim")].parse::<f64>().unwrap(), 1.0, "{r:?}");
    }
    let agg = &rows[4];
    assert_eq!(agg[0], "*");
    assert_eq!(agg[col("abs_err")].parse::<f64>().unwrap(), 0.0);
    assert_eq!(agg[col("ssim")].parse::<f64>().unwrap(), 1.0);
    assert!(out.join("metrics.txt").is_file());
    assert_eq!(std::fs::read_to_string(out.join("metrics.txt")).unwrap(), stdout(&o));
}

#[test]
fn train_writes_plan_log_and_checkpoint_then_eval_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), 6, &["--set", "width=32", "--set", "height=32"]);
    let out = dir.path().join("run");
    let o = lcdnet(&[
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out),
        "--max-steps",
        "6",
        "--batch-size",
        "2",
        "--curriculum",
        "count",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(files_in(&out), ["best.ckpt", "curriculum_plan.txt", "eval_log.csv", "train_log.csv"]);

    let plan = std::fs::read_to_string(out.join("curriculum_plan.txt")).unwrap();
    let batches: Vec<Vec<&str>> = plan.split("\n\n").map(|b| b.lines().collect()).collect();
    assert_eq!(batches.len(), 3);
    let count = |id: &str| {
        let stem = id.trim_end_matches(".ppm");
        let ann = std::fs::read_to_string(dir.path().join("data").join(format!("{stem}.txt"))).unwrap();
        ann.lines().filter(|l| !l.trim().is_empty()).count() as f64
    };
    let means: Vec<f64> = batches.iter().map(|b| b.iter().map(|id| count(id)).sum::<f64>() / b.len() as f64).collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");

    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,epoch,batch_id,loss,lr,wall_ms");
    assert_eq!(log.lines().count(), 7);
    // with a plan, batch ids cycle through it in order
    let ids: Vec<usize> = log.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(ids, [0, 1, 2, 0, 1, 2]);

    let ev = dir.path().join("eval");
    let o = lcdnet(&["eval", "--manifest", p(&manifest), "--checkpoint", p(&out.join("best.ckpt")), "--out", p(&ev)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(ev.join("metrics.tsv").is_file());
}

#[test]
fn train_with_huge_learning_rate_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), 2, &["--set", "width=16", "--set", "height=16"]);
    let out = dir.path().join("run");
    let o = lcdnet(&[
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&out),
        "--lr",
        "1e200",
        "--max-steps",
        "20",
        "--batch-size",
        "1",
        "--no-augment",
        "--set",
        "init_std=1",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("scene_000"), "{}", stderr(&o));
    assert!(!out.join("best.ckpt").exists());
}

#[test]
fn usage_and_data_errors() {
    assert_eq!(lcdnet(&[]).status.code(), Some(1));
    assert_eq!(lcdnet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lcdnet(&["train", "--out", "x"]).status.code(), Some(1));
    assert_eq!(lcdnet(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let o = lcdnet(&["train", "--manifest", p(&missing), "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.csv"), "{}", stderr(&o));

    let manifest = synth(&dir.path().join("data"), 1, &[]);
    let o = lcdnet(&["train", "--manifest", p(&manifest), "--out", p(&dir.path().join("r")), "--set", "bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    // checkpoint that does not match the architecture
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"LCDNETCK not really").unwrap();
    let o = lcdnet(&["eval", "--manifest", p(&manifest), "--checkpoint", p(&bad), "--out", p(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("e").join("metrics.txt").exists());
}

#[test]
fn exit_codes_by_error_class() {
    use lcdnet::cli::exit_code;
    assert_eq!(exit_code(&Error::Config("x".into())), 2);
    assert_eq!(exit_code(&Error::Training("x".into())), 3);
    assert_eq!(exit_code(&Error::NonFiniteLoss { step: 1, batch_ids: vec![] }), 3);
}

fn bench_field(report: &str, key: &str) -> String {
    report
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("{key} missing from\n{report}"))
        .trim_start_matches(key)
        .trim()
        .to_string()
}

fn first_number(s: &str) -> u64 {
    s.split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn bench_single_run_and_cost_model() {
    let o = lcdnet(&["bench", "--height", "32", "--width", "48", "--iterations", "1", "--warmup", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = stdout(&o);
    assert_eq!(bench_field(&report, "timed_runs"), "1");
    assert_eq!(bench_field(&report, "warmup_runs"), "0");

    let m = ArchitectureManifest::lcdnet();
    let cr = complexity_report(&m, 32, 48, 4).unwrap();
    assert_eq!(first_number(&bench_field(&report, "parameters")), cr.param_count as u64);
    assert_eq!(first_number(&bench_field(&report, "MACs")), cr.mac_count);
    assert!(report.contains("published: 0.05 M"), "{report}");

    let o = lcdnet(&["bench", "--height", "64", "--width", "48", "--iterations", "1", "--warmup", "0"]);
    let doubled = stdout(&o);
    assert_eq!(first_number(&bench_field(&doubled, "MACs")), 2 * cr.mac_count);
    assert_eq!(lcdnet(&["bench", "--iterations", "0"]).status.code(), Some(2));
}

#[test]
fn in_process_runner_captures_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut buf = Vec::new();
    let out = dir.path().join("s");
    let code = lcdnet::cli::run_with_output(["lcdnet", "synth", "--out", p(&out), "--scenes", "2"], &mut buf);
    assert_eq!(code, 0);
    assert!(String::from_utf8(buf).unwrap().starts_with("2 scenes written"));
}
