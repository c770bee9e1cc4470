//! End-to-end tests of the binary: every subcommand, the exit-status
//! contract, and byte-level determinism of the written artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphcpd::{read_labels_path, read_mask_path, write_sequence_path, Frame, ImageSequence};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphcpd"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        stdout(output),
        stderr(output)
    );
}

fn assert_code(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        stdout(output),
        stderr(output)
    );
}

/// Write a sequence whose frames all hold the same constant value.
fn write_constant_sequence(
    path: &Path,
    height: usize,
    width: usize,
    bands: usize,
    frames: usize,
    value: f32,
) {
    let frame = Frame::new(height, width, bands, vec![value; height * width * bands])
        .expect("constant frame");
    let seq = ImageSequence::new(vec![frame; frames]).expect("constant sequence");
    write_sequence_path(path, &seq).expect("sequence written");
}

fn path_str(path: &Path) -> &str {
    path.to_str().expect("temp paths are UTF-8")
}

#[test]
fn segment_reports_four_segments_on_a_uniform_image() {
    let dir = tempfile::tempdir().expect("temp dir");
    let input = dir.path().join("in.mbs");
    let output = dir.path().join("labels.spl");
    write_constant_sequence(&input, 10, 10, 1, 2, 3.5);

    let out = run(&[
        "segment",
        "--input",
        path_str(&input),
        "--output",
        path_str(&output),
        "--set",
        "slic_step=5",
    ]);
    assert_success(&out);
    assert!(
        stdout(&out).contains("K = 4"),
        "stdout was: {}",
        stdout(&out)
    );
    let labeling = read_labels_path(&output).expect("labeling readable");
    assert_eq!(labeling.segment_count(), 4);
}

#[test]
fn segment_single_pixel_is_one_segment() {
    let dir = tempfile::tempdir().expect("temp dir");
    let input = dir.path().join("in.mbs");
    let output = dir.path().join("labels.spl");
    write_constant_sequence(&input, 1, 1, 1, 1, 0.0);

    let out = run(&[
        "segment",
        "--input",
        path_str(&input),
        "--output",
        path_str(&output),
        "--set",
        "slic_step=1",
    ]);
    assert_success(&out);
    assert!(stdout(&out).contains("K = 1"));
}

#[test]
fn missing_input_exits_two_and_names_the_path() {
    let dir = tempfile::tempdir().expect("temp dir");
    let absent = dir.path().join("absent.mbs");
    let out = run(&[
        "segment",
        "--input",
        path_str(&absent),
        "--output",
        path_str(&dir.path().join("x.spl")),
        "--set",
        "slic_step=5",
    ]);
    assert_code(&out, 2);
    assert!(
        stderr(&out).contains("absent.mbs"),
        "stderr was: {}",
        stderr(&out)
    );
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().expect("temp dir");
    let input = dir.path().join("in.mbs");
    write_constant_sequence(&input, 4, 4, 1, 2, 0.0);
    let out = run(&[
        "segment",
        "--input",
        path_str(&input),
        "--output",
        path_str(&dir.path().join("x.spl")),
        "--set",
        "slic_stepp=5",
    ]);
    assert_code(&out, 2);
    assert!(stderr(&out).contains("unknown key"));
}

#[test]
fn detect_rejects_inverted_averaging_rates() {
    let dir = tempfile::tempdir().expect("temp dir");
    let input = dir.path().join("in.mbs");
    write_constant_sequence(&input, 6, 6, 2, 4, 1.0);

    let out = run(&[
        "detect",
        "--input",
        path_str(&input),
        "--output",
        path_str(&dir.path().join("det")),
        "--set",
        "lambda=0.5",
        "--set",
        "Lambda=0.1",
        "--set",
        "gamma=0.1",
        "--set",
        "alpha=0.05",
        "--set",
        "sigma2=1.0",
        "--set",
        "slic_step=3",
    ]);
    assert_code(&out, 2);
    assert!(
        stderr(&out).contains("0 < lambda < Lambda < 1"),
        "stderr was: {}",
        stderr(&out)
    );
}

#[test]
fn detect_on_a_static_sequence_flags_nothing() {
    let dir = tempfile::tempdir().expect("temp dir");
    let input = dir.path().join("in.mbs");
    let det = dir.path().join("det");
    write_constant_sequence(&input, 6, 6, 2, 8, 2.0);

    let out = run(&[
        "detect",
        "--input",
        path_str(&input),
        "--output",
        path_str(&det),
        "--set",
        "lambda=0.1",
        "--set",
        "Lambda=0.6",
        "--set",
        "gamma=0.3",
        "--set",
        "alpha=0.05",
        "--set",
        "sigma2=1.0",
        "--set",
        "slic_step=3",
    ]);
    assert_success(&out);
    assert!(stdout(&out).contains("no change detected"));

    let csv = std::fs::read_to_string(det.join("statistics.csv")).expect("statistics written");
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let flag = line.rsplit(',').next().expect("flag column");
        assert_eq!(flag, "0", "line was: {line}");
        rows += 1;
    }
    assert_eq!(rows, 7 * 36, "one row per vertex per emitted frame");
    let masks = std::fs::read_dir(&det)
        .expect("output dir")
        .filter(|e| {
            e.as_ref()
                .expect("entry")
                .path()
                .extension()
                .is_some_and(|x| x == "cmk")
        })
        .count();
    assert_eq!(masks, 0, "a static sequence must produce no masks");
    assert!(det.join("labels.spl").exists(), "computed labeling saved");
}

/// Simulate the default preset, then detect with matching settings and a
/// burn-in ending right before the true change.
#[test]
fn detect_traces_a_simulated_change_after_the_true_frame() {
    let dir = tempfile::tempdir().expect("temp dir");
    let sim = dir.path().join("sim");
    let out = run(&[
        "simulate",
        "--output",
        path_str(&sim),
        "--seed",
        "1",
    ]);
    assert_success(&out);

    let det = dir.path().join("det");
    let out = run(&[
        "detect",
        "--input",
        path_str(&sim.join("sequence.mbs")),
        "--output",
        path_str(&det),
        "--set",
        "lambda=0.01",
        "--set",
        "Lambda=0.8",
        "--set",
        "gamma=0.1",
        "--set",
        "alpha=0.05",
        "--set",
        "sigma2=14.1",
        "--set",
        "burn_in=15",
        "--set",
        "slic_step=6",
    ]);
    assert_success(&out);
    let text = stdout(&out);
    let first: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("change detected: first flagged frame "))
        .and_then(|rest| rest.split(',').next())
        .and_then(|n| n.parse().ok())
        .unwrap_or_else(|| panic!("no detection reported; stdout was: {text}"));
    assert!(
        first >= 16,
        "first flagged frame {first} precedes the true change at 16"
    );
}

#[test]
fn simulate_is_deterministic_and_exact_without_noise() {
    let dir = tempfile::tempdir().expect("temp dir");
    let args = |out: &Path| -> Vec<String> {
        [
            "simulate",
            "--output",
            path_str(out),
            "--seed",
            "9",
            "--set",
            "snr_db=inf",
            "--set",
            "frames=8",
            "--set",
            "change_frame=5",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let run_a = bin().args(args(&a)).output().expect("binary runs");
    let run_b = bin().args(args(&b)).output().expect("binary runs");
    assert_success(&run_a);
    assert_success(&run_b);

    let bytes = |p: PathBuf| std::fs::read(p).expect("artifact readable");
    assert_eq!(
        bytes(a.join("sequence.mbs")),
        bytes(b.join("sequence.mbs")),
        "same seed must give byte-identical sequences"
    );
    assert_eq!(bytes(a.join("truth.cmk")), bytes(b.join("truth.cmk")));

    // Noiseless: constant before the change, constant after, different across.
    let seq = graphcpd::read_sequence_path(a.join("sequence.mbs")).expect("sequence readable");
    assert_eq!(seq.len(), 8);
    let values = |t: usize| seq.frame(t).values();
    assert_eq!(values(0), values(3), "pre-change frames are identical");
    assert_eq!(values(4), values(7), "post-change frames are identical");
    assert_ne!(values(3), values(4), "the change moves the image");

    let truth = read_mask_path(a.join("truth.cmk")).expect("truth readable");
    assert_eq!(truth.count(), 21, "the default changed block has 21 pixels");
}

#[test]
fn evaluate_scores_perfect_and_degenerate_estimates() {
    let dir = tempfile::tempdir().expect("temp dir");
    let est = dir.path().join("est");
    let truth = dir.path().join("truth");
    std::fs::create_dir_all(&est).expect("est dir");
    std::fs::create_dir_all(&truth).expect("truth dir");

    let mask = |flags: &[u8]| graphcpd::ChangeMask::new(2, 2, flags.to_vec()).expect("mask");
    for (name, flags) in [("m1.cmk", [1u8, 0, 0, 1]), ("m2.cmk", [0, 1, 1, 0])] {
        graphcpd::write_mask_path(est.join(name), &mask(&flags)).expect("estimate written");
        graphcpd::write_mask_path(truth.join(name), &mask(&flags)).expect("truth written");
    }

    let csv_path = dir.path().join("scores.csv");
    let out = run(&[
        "evaluate",
        "--input",
        path_str(&est),
        "--truth",
        path_str(&truth),
        "--output",
        path_str(&csv_path),
    ]);
    assert_success(&out);
    let text = stdout(&out);
    assert!(text.contains("Pd = 1"), "stdout was: {text}");
    assert!(text.contains("Pfa = 0"), "stdout was: {text}");
    let csv = std::fs::read_to_string(&csv_path).expect("scores written");
    assert!(csv.starts_with("pd,pfa,detected"));

    // All-zero truth: the detection rate has no denominator.
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).expect("empty dir");
    for name in ["m1.cmk", "m2.cmk"] {
        graphcpd::write_mask_path(empty.join(name), &mask(&[0, 0, 0, 0]))
            .expect("empty truth written");
    }
    let out = run(&[
        "evaluate",
        "--input",
        path_str(&est),
        "--truth",
        path_str(&empty),
    ]);
    assert_success(&out);
    assert!(stdout(&out).contains("Pd = NA"), "stdout: {}", stdout(&out));
}

#[test]
fn roc_is_deterministic_and_writes_a_plot_script() {
    let dir = tempfile::tempdir().expect("temp dir");
    let scenario = [
        "--set", "frames=14", "--set", "change_frame=7", "--set", "burn_in=2",
    ];
    let sweep = |name: &str, threads: Option<&str>| -> Vec<u8> {
        let csv = dir.path().join(name);
        let mut cmd = bin();
        cmd.args([
            "roc",
            "--output",
            path_str(&csv),
            "--grid",
            "0.05",
            "--runs",
            "6",
            "--seed",
            "4",
        ])
        .args(scenario);
        if let Some(n) = threads {
            cmd.env("GRAPHCPD_THREADS", n);
        }
        let out = cmd.output().expect("binary runs");
        assert_success(&out);
        std::fs::read(&csv).expect("sweep written")
    };

    let first = sweep("a.csv", None);
    let second = sweep("b.csv", Some("1"));
    assert_eq!(first, second, "same seed must give byte-identical sweeps");
    let text = String::from_utf8(first).expect("CSV is UTF-8");
    assert_eq!(text.lines().count(), 2, "header plus one grid row");
    assert!(text.starts_with("operating_point,pfa,pd_or_delay"));

    let script = std::fs::read_to_string(dir.path().join("a.gnuplot")).expect("script written");
    assert!(script.contains("a.csv"));

    // The frame-difference baseline sweeps magnitude thresholds instead.
    let csv = dir.path().join("cva.csv");
    let out = bin()
        .args([
            "roc",
            "--output",
            path_str(&csv),
            "--method",
            "cva",
            "--grid",
            "5.0,25.0",
            "--runs",
            "6",
            "--seed",
            "4",
        ])
        .args(scenario)
        .output()
        .expect("binary runs");
    assert_success(&out);
    let text = std::fs::read_to_string(&csv).expect("sweep written");
    assert_eq!(text.lines().count(), 3, "header plus two grid rows");
}

#[test]
fn roc_matched_mode_writes_one_row_per_target() {
    let dir = tempfile::tempdir().expect("temp dir");
    let csv = dir.path().join("matched.csv");
    let out = run(&[
        "roc",
        "--output",
        path_str(&csv),
        "--matched",
        "--grid",
        "0.1,0.25",
        "--runs",
        "8",
        "--seed",
        "5",
        "--set",
        "frames=14",
        "--set",
        "change_frame=7",
    ]);
    assert_success(&out);
    let text = std::fs::read_to_string(&csv).expect("rows written");
    assert!(text.starts_with("target_pfa,threshold"));
    assert_eq!(text.lines().count(), 3, "header plus one row per target");
}

#[test]
fn estimate_noise_recovers_the_simulated_variance() {
    let dir = tempfile::tempdir().expect("temp dir");
    let sim = dir.path().join("sim");
    let out = run(&[
        "simulate",
        "--output",
        path_str(&sim),
        "--seed",
        "2",
        "--set",
        "change_scale=0.0",
    ]);
    assert_success(&out);

    let out = run(&[
        "estimate-noise",
        "--input",
        path_str(&sim.join("sequence.mbs")),
    ]);
    assert_success(&out);
    let estimate: f64 = stdout(&out).trim().parse().expect("a bare number");
    assert!(
        (estimate - 14.1).abs() < 1.5,
        "estimate {estimate} is far from the simulated variance 14.1"
    );
}
