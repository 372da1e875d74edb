//! The command-line front end, driven in-process and through the binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::Command;

use ttacal::augment::{self, Image};
use ttacal::cli::run;
use ttacal::io::{self as files, MethodParams};
use ttacal::metrics;
use ttacal::simplex::{Dataset, LogitMatrix, ProbVector, Sample};

fn args(list: &[&dyn AsRef<std::ffi::OsStr>]) -> Vec<OsString> {
    std::iter::once(OsString::from("ttacal"))
        .chain(list.iter().map(|a| a.as_ref().to_os_string()))
        .collect()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut a = args(&[&"synth", &"--output", &out]);
    a.extend(extra.iter().map(OsString::from));
    assert_eq!(run(a), 0);
    out
}

fn fit(dir: &Path, data: &Path, method: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(format!("{method}.params"));
    let mut a = args(&[&"fit", &"--input", &data, &"--output", &out, &"--method", &method]);
    a.extend(extra.iter().map(OsString::from));
    assert_eq!(run(a), 0, "fit {method}");
    out
}

fn apply(dir: &Path, data: &Path, params: Option<&Path>, name: &str) -> PathBuf {
    let out = dir.join(name);
    let mut a = args(&[&"apply", &"--input", &data, &"--output", &out]);
    match params {
        Some(p) => a.extend([OsString::from("--params"), p.as_os_str().to_os_string()]),
        None => a.extend([OsString::from("--method"), OsString::from("vanilla")]),
    }
    assert_eq!(run(a), 0);
    out
}

fn read_preds(path: &Path) -> files::Predictions {
    files::read_predictions(files::open(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_header_and_records_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.jsonl", &["--samples", "250", "--seed", "9"]);
    let b = synth(dir.path(), "b.jsonl", &["--samples", "250", "--seed", "9"]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.lines().next().unwrap().contains(r#""k":10,"m":2"#));
    assert_eq!(text.lines().count(), 251);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let zero = dir.path().join("zero.jsonl");
    assert_eq!(run(args(&[&"synth", &"--output", &zero, &"--samples", &"0"])), 1);
}

#[test]
fn fit_writes_method_shaped_params() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", &["--samples", "300", "--classes", "4", "--quality", "0.8,0.2,0"]);
    let quick = ["--epochs", "5"];

    let read = |p: &Path| files::read_params(files::open(p).unwrap()).unwrap();
    let matta = read(&fit(dir.path(), &data, "matta", &quick));
    assert_eq!(matta.params.value_count(), 4 * 3 + 1);
    assert_eq!(matta.training.as_ref().unwrap().loss_history.len(), 5);
    let vatta = read(&fit(dir.path(), &data, "vatta", &quick));
    assert_eq!(vatta.params.value_count(), 3 + 1);
    match read(&fit(dir.path(), &data, "temperature", &[])).params {
        MethodParams::Temperature(t) => assert!(t.temperature() > 0.0),
        other => panic!("unexpected {other:?}"),
    }
    let hist = read(&fit(dir.path(), &data, "histogram", &["--bins", "10"]));
    match hist.params {
        MethodParams::Binning(b) => assert_eq!(b.bin_count(), 10),
        other => panic!("unexpected {other:?}"),
    }
    fit(dir.path(), &data, "isotonic", &[]);

    let out = dir.path().join("v.params");
    assert_eq!(run(args(&[&"fit", &"--input", &data, &"--output", &out, &"--method", &"vanilla"])), 1);
}

#[test]
fn apply_preserves_order_and_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", &["--samples", "400", "--seed", "2"]);
    let ds = files::load_dataset(&data).unwrap();
    let vanilla_acc = metrics::accuracy(&ds.vanilla(), &ds.labels()).unwrap();

    let vanilla = read_preds(&apply(dir.path(), &data, None, "vanilla.jsonl"));
    assert_eq!(vanilla.probs, ds.vanilla());
    assert_eq!(vanilla.labels.as_deref(), Some(ds.labels().as_slice()));

    for method in ["matta", "vatta", "temperature", "isotonic", "histogram"] {
        let params = fit(dir.path(), &data, method, &["--epochs", "20"]);
        let preds = read_preds(&apply(dir.path(), &data, Some(&params), &format!("{method}.jsonl")));
        assert_eq!(preds.method, method);
        assert_eq!(preds.probs.len(), ds.len());
        assert_eq!(metrics::accuracy(&preds.probs, &ds.labels()).unwrap(), vanilla_acc, "{method}");
    }
}

#[test]
fn zero_omega_params_reproduce_vanilla() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", &["--samples", "100", "--classes", "3"]);
    let params = dir.path().join("zero.params");
    std::fs::write(
        &params,
        "{\"format\":\"ttacal-params\",\"version\":1,\"method\":\"matta\",\"k\":3,\"m\":2}\n\
         {\"weights\":[[2,-1],[0.5,3],[1,1]],\"omega_star\":0}\n",
    )
    .unwrap();
    let preds = read_preds(&apply(dir.path(), &data, Some(&params), "p.jsonl"));
    assert_eq!(preds.probs, files::load_dataset(&data).unwrap().vanilla());
}

#[test]
fn apply_rejects_mismatched_params() {
    let dir = tempfile::tempdir().unwrap();
    let small = synth(dir.path(), "small.jsonl", &["--samples", "50", "--classes", "3"]);
    let big = synth(dir.path(), "big.jsonl", &["--samples", "50", "--classes", "5"]);
    let params = fit(dir.path(), &small, "matta", &["--epochs", "2"]);
    let out = dir.path().join("p.jsonl");
    assert_eq!(run(args(&[&"apply", &"--input", &big, &"--output", &out, &"--params", &params])), 1);
    assert_eq!(
        run(args(&[&"apply", &"--input", &small, &"--output", &out, &"--params", &params, &"--method", &"vatta"])),
        1
    );
    assert_eq!(run(args(&[&"apply", &"--input", &small, &"--output", &out])), 1);
}

fn write_preds(path: &Path, probs: Vec<Vec<f64>>, labels: Option<Vec<usize>>) {
    let preds = files::Predictions {
        method: "test".into(),
        k: probs[0].len(),
        probs: probs.into_iter().map(|p| ProbVector::new(p).unwrap()).collect(),
        labels,
    };
    files::write_predictions(&preds, files::create(path).unwrap()).unwrap();
}

#[test]
fn eval_of_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("p.jsonl");
    write_preds(&input, vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]], Some(vec![0, 2]));
    let report = dir.path().join("r.jsonl");
    assert_eq!(run(args(&[&"eval", &"--input", &input, &"--output", &report])), 0);
    let r = files::read_report(files::open(&report).unwrap()).unwrap().report;
    assert_eq!((r.brier, r.mc_brier, r.ece, r.accuracy), (0.0, 0.0, 0.0, 1.0));
    assert!(r.nll.abs() < 1e-15);
    assert_eq!(r.reliability.bin_count(), 15);
}

#[test]
fn eval_requires_labels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("p.jsonl");
    write_preds(&input, vec![vec![0.5, 0.5]], None);
    assert_eq!(run(args(&[&"eval", &"--input", &input])), 1);
}

#[test]
fn eval_of_marginal_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let (probs, labels) = ttacal::synth::marginal_predictor(10_000, 3).unwrap();
    let input = dir.path().join("m.jsonl");
    write_preds(&input, probs.into_iter().map(|p| p.into_inner()).collect(), Some(labels));
    let report = dir.path().join("r.jsonl");
    assert_eq!(run(args(&[&"eval", &"--input", &input, &"--output", &report])), 0);
    let r = files::read_report(files::open(&report).unwrap()).unwrap().report;
    assert!(r.ece < 0.02);
    assert!((r.brier - 0.25).abs() < 0.01);
}

#[test]
fn eval_of_concatenated_files_is_sample_weighted() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.jsonl", &["--samples", "300", "--seed", "1"]);
    let b = synth(dir.path(), "b.jsonl", &["--samples", "700", "--seed", "2"]);
    let report = |inputs: &[&Path], name: &str| {
        let out = dir.path().join(name);
        let mut a = args(&[&"eval", &"--output", &out, &"--input"]);
        a.extend(inputs.iter().map(|p| p.as_os_str().to_os_string()));
        assert_eq!(run(a), 0);
        files::read_report(files::open(&out).unwrap()).unwrap()
    };
    let ra = report(&[&a], "ra.jsonl").report;
    let rb = report(&[&b], "rb.jsonl").report;
    let both = report(&[&a, &b], "both.jsonl");
    assert_eq!(both.samples, 1000);
    let mix = |x: f64, y: f64| (300.0 * x + 700.0 * y) / 1000.0;
    for (got, x, y) in [
        (both.report.brier, ra.brier, rb.brier),
        (both.report.mc_brier, ra.mc_brier, rb.mc_brier),
        (both.report.nll, ra.nll, rb.nll),
    ] {
        assert!((got - mix(x, y)).abs() < 1e-9);
    }
}

#[test]
fn report_renders_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.jsonl", &["--samples", "200"]);
    let params = fit(dir.path(), &data, "vatta", &["--epochs", "3"]);
    let text_out = dir.path().join("params.txt");
    assert_eq!(run(args(&[&"report", &"--input", &params, &"--output", &text_out])), 0);
    let text = std::fs::read_to_string(&text_out).unwrap();
    assert!(text.contains("vatta") && text.contains("best epoch"));

    let report = dir.path().join("r.jsonl");
    assert_eq!(run(args(&[&"eval", &"--input", &data, &"--output", &report])), 0);
    let text_out = dir.path().join("report.txt");
    assert_eq!(run(args(&[&"report", &"--input", &report, &"--output", &text_out])), 0);
    assert!(std::fs::read_to_string(&text_out).unwrap().contains("ece"));

    assert_eq!(run(args(&[&"report", &"--input", &data])), 1);
}

#[test]
fn augment_directory() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let output = dir.path().join("out");
    std::fs::create_dir(&input).unwrap();
    let gray = Image::new(5, 5, 1, (0..25).map(|v| v as f64 * 10.0).collect(), 255.0).unwrap();
    augment::save_image(&gray, &input.join("g.pgm")).unwrap();
    let tensor = Image::filled(10, 8, 3, 0.25, 1.0).unwrap();
    augment::save_image(&tensor, &input.join("t.tns")).unwrap();
    std::fs::write(input.join("notes.txt"), "ignored").unwrap();

    assert_eq!(run(args(&[&"augment", &"--input", &input, &"--output", &output, &"--policy", &"1"])), 0);
    let mut names: Vec<String> = std::fs::read_dir(&output)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 12);
    assert!(names.contains(&"g_a0_r0.pgm".to_string()));
    assert!(names.contains(&"t_a1_r4.tns".to_string()));
    let flipped = augment::load_image(&output.join("t_a0_r0.tns")).unwrap();
    assert_eq!(flipped, augment::flip(&tensor));
    let cropped = augment::load_image(&output.join("t_a1_r2.tns")).unwrap();
    assert_eq!((cropped.height(), cropped.width()), (8, 6));

    assert_eq!(run(args(&[&"augment", &"--input", &input, &"--output", &output, &"--policy", &"9"])), 1);
}

#[test]
fn datasets_written_elsewhere_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hand.jsonl");
    let p0 = ProbVector::new(vec![0.7, 0.3]).unwrap();
    let z = LogitMatrix::from_columns(vec![vec![2.0, -1.0]]).unwrap();
    let ds = Dataset::new(2, 1, vec![Sample::new(p0, z, 0).unwrap()]).unwrap();
    files::save_dataset(&ds, &path).unwrap();
    let out = apply(dir.path(), &path, None, "p.jsonl");
    assert_eq!(read_preds(&out).probs[0].values(), &[0.7, 0.3]);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_ttacal");
    let dir = tempfile::tempdir().unwrap();
    let status = |a: &[&str]| Command::new(exe).args(a).output().unwrap().status.code();
    assert_eq!(status(&["--version"]), Some(0));
    assert_eq!(status(&["fit", "--method", "nonsense"]), Some(1));
    let missing = dir.path().join("missing.jsonl");
    let out = dir.path().join("o.jsonl");
    assert_eq!(
        status(&["eval", "--input", missing.to_str().unwrap(), "--output", out.to_str().unwrap()]),
        Some(2)
    );
    let unwritable = dir.path().join("no/such/dir/d.jsonl");
    assert_eq!(status(&["synth", "--output", unwritable.to_str().unwrap()]), Some(2));
}
