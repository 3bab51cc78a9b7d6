//! End-to-end runs of the compiled binary: the full corpus → train → eval →
//! score pipeline at miniature scale, resume determinism, the ablation grid,
//! and the exit-code contract (2 = bad configuration, 3 = file problems).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dnet::geometry::import_ply_scalar;

const MINI_CONFIG: &str = "\
# miniature network so the pipeline runs in seconds
classes = 8
sps.attn_dim = 6
sgc.widths = 8,8
sgc.k = 3
sgc.set_width = 16
transform.conv_width = 8
transform.hidden = 4
fusion.hidden = 8
head.hidden = 8
head.dropout = 0.2
train.lr = 0.01
train.batch_size = 8
train.epochs = 2
train.seed = 0
";

fn dnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        stdout_of(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn assert_exit(out: &Output, code: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{what}\nstdout: {}\nstderr: {}",
        stdout_of(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Generates a tiny eight-class corpus and returns its directory.
fn mini_corpus(dir: &Path) -> PathBuf {
    let corpus = dir.join("corpus");
    let out = dnet(&[
        "gen-data",
        "--out",
        corpus.to_str().unwrap(),
        "--per-class",
        "2",
        "--test-per-class",
        "1",
        "--points",
        "24",
        "--noise",
        "0.01",
        "--seed",
        "7",
    ]);
    assert_ok(&out, "gen-data");
    corpus
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(&path, format!("{MINI_CONFIG}{extra}")).unwrap();
    path
}

#[test]
fn pipeline_feeds_each_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = mini_corpus(tmp.path());
    assert!(corpus.join("manifest.csv").is_file());
    assert!(corpus.join("train/sphere_0000.xyz").is_file());
    assert!(corpus.join("test/torus_0000.xyz").is_file());

    let config = write_config(tmp.path(), "");
    let run = tmp.path().join("run");
    let out = dnet(&[
        "train",
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--model-seed",
        "1",
        "--quiet",
    ]);
    assert_ok(&out, "train");
    assert!(stdout_of(&out).contains("best test acc"));
    assert!(run.join("last.ckpt").is_file());
    assert!(run.join("best.ckpt").is_file());
    let resolved = std::fs::read_to_string(run.join("config.resolved")).unwrap();
    assert!(resolved.contains("sgc.k = 3"), "resolved config records overrides");
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,test_acc"));
    assert_eq!(lines.count(), 2, "one metrics row per epoch");

    let ckpt = run.join("best.ckpt");
    let out = dnet(&[
        "eval",
        "--data",
        corpus.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--split",
        "test",
    ]);
    assert_ok(&out, "eval");
    assert!(stdout_of(&out).contains("test accuracy"));

    let cloud = corpus.join("test/sphere_0000.xyz");
    let ply = tmp.path().join("scored.ply");
    let out = dnet(&[
        "score",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--cloud",
        cloud.to_str().unwrap(),
        "--ply",
        ply.to_str().unwrap(),
        "--top",
        "4",
    ]);
    assert_ok(&out, "score");
    let text = stdout_of(&out);
    assert!(text.contains("prediction: class"));
    assert!(text.contains("distinction scores"));
    assert!(text.contains("most distinctive points"));
    assert!(text.contains("fusion weight mean"));
    let (scored, scores) = import_ply_scalar(&ply).unwrap();
    assert_eq!(scored.len(), 24);
    assert_eq!(scores.len(), 24);
    assert!(scores.iter().all(|s| s.is_finite()));
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = mini_corpus(tmp.path());
    let config = write_config(tmp.path(), "");
    let (run_a, run_b) = (tmp.path().join("a"), tmp.path().join("b"));

    let base = [
        "train",
        "--data",
        corpus.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--model-seed",
        "5",
        "--quiet",
    ];

    // One uninterrupted three-epoch run.
    let mut args = base.to_vec();
    args.extend(["--out", run_a.to_str().unwrap(), "--epochs", "3"]);
    assert_ok(&dnet(&args), "uninterrupted train");

    // Two epochs, stop, resume for the third.
    let mut args = base.to_vec();
    args.extend(["--out", run_b.to_str().unwrap(), "--epochs", "2"]);
    assert_ok(&dnet(&args), "first leg");
    let resume_from = run_b.join("last.ckpt");
    let mut args = base.to_vec();
    args.extend([
        "--out",
        run_b.to_str().unwrap(),
        "--epochs",
        "3",
        "--resume",
        resume_from.to_str().unwrap(),
    ]);
    assert_ok(&dnet(&args), "resumed leg");

    assert_eq!(
        std::fs::read(run_a.join("last.ckpt")).unwrap(),
        std::fs::read(run_b.join("last.ckpt")).unwrap(),
        "resumed training must be bit-identical to the uninterrupted run"
    );
    assert_eq!(
        std::fs::read_to_string(run_a.join("metrics.csv")).unwrap(),
        std::fs::read_to_string(run_b.join("metrics.csv")).unwrap(),
        "metrics must agree row for row"
    );
}

#[test]
fn ablation_grid_writes_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = mini_corpus(tmp.path());
    let config = write_config(tmp.path(), "train.epochs = 1\n");
    let csv_path = tmp.path().join("ablation.csv");
    let out = dnet(&[
        "ablate",
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        csv_path.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--groups",
        "sampling",
        "--seeds",
        "1",
        "--quiet",
    ]);
    assert_ok(&out, "ablate");

    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(
        lines.next(),
        Some("cell_id,group,sampling,gate,fusion,sets,k,n1_ratio,seed_count,mean_acc,std_acc")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3, "one row per sampling cell");
    for (row, want) in rows.iter().zip(["attentive", "farthest", "random"]) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], format!("sampling={want}"));
        assert_eq!(fields[2], want);
        assert_eq!(fields[8], "1");
        let mean: f64 = fields[9].parse().unwrap();
        assert!((0.0..=1.0).contains(&mean), "mean accuracy {mean} out of range");
    }
}

#[test]
fn normals_flag_feeds_six_column_input() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = mini_corpus(tmp.path());
    let config = write_config(tmp.path(), "train.epochs = 1\n");
    let run = tmp.path().join("run");
    let out = dnet(&[
        "train",
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--normals",
        "--quiet",
    ]);
    assert_ok(&out, "train with normals");
    let resolved = std::fs::read_to_string(run.join("config.resolved")).unwrap();
    assert!(resolved.contains("with_normals = true"));

    let out = dnet(&[
        "eval",
        "--data",
        corpus.to_str().unwrap(),
        "--ckpt",
        run.join("last.ckpt").to_str().unwrap(),
    ]);
    assert_ok(&out, "eval normals checkpoint");
}

#[test]
fn configuration_problems_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = mini_corpus(tmp.path());

    // Class count disagrees with the corpus.
    let config = write_config(tmp.path(), "classes = 4\n");
    let out = dnet(&[
        "train",
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--quiet",
    ]);
    assert_exit(&out, 2, "class mismatch");

    // Unknown enum values in flags.
    let out = dnet(&["gen-data", "--out", tmp.path().join("y").to_str().unwrap(), "--rotation", "diagonal"]);
    assert_exit(&out, 2, "bad rotation");

    // A checkpoint without distinction scores cannot export a scored PLY.
    let config = write_config(tmp.path(), "sampling = farthest\ntrain.epochs = 1\n");
    let run = tmp.path().join("farthest");
    let out = dnet(&[
        "train",
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--quiet",
    ]);
    assert_ok(&out, "farthest train");
    let out = dnet(&[
        "score",
        "--ckpt",
        run.join("last.ckpt").to_str().unwrap(),
        "--cloud",
        corpus.join("test/cube_0000.xyz").to_str().unwrap(),
        "--ply",
        tmp.path().join("no.ply").to_str().unwrap(),
    ]);
    assert_exit(&out, 2, "ply without scores");
    let out = dnet(&[
        "eval",
        "--data",
        corpus.to_str().unwrap(),
        "--ckpt",
        run.join("last.ckpt").to_str().unwrap(),
        "--split",
        "validation",
    ]);
    assert_exit(&out, 2, "bad split name");
}

#[test]
fn file_problems_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = mini_corpus(tmp.path());

    let out = dnet(&[
        "train",
        "--data",
        tmp.path().join("nowhere").to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
        "--quiet",
    ]);
    assert_exit(&out, 3, "missing corpus");

    let out = dnet(&[
        "eval",
        "--data",
        corpus.to_str().unwrap(),
        "--ckpt",
        tmp.path().join("missing.ckpt").to_str().unwrap(),
    ]);
    assert_exit(&out, 3, "missing checkpoint");

    let junk = tmp.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    let out = dnet(&[
        "score",
        "--ckpt",
        junk.to_str().unwrap(),
        "--cloud",
        corpus.join("test/cone_0000.xyz").to_str().unwrap(),
    ]);
    assert_exit(&out, 3, "junk checkpoint magic");

    let bad_conf = tmp.path().join("bad.conf");
    std::fs::write(&bad_conf, "sgc.kk = 3\n").unwrap();
    let out = dnet(&[
        "train",
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        tmp.path().join("y").to_str().unwrap(),
        "--config",
        bad_conf.to_str().unwrap(),
        "--quiet",
    ]);
    assert_exit(&out, 3, "unknown config key");
}
