use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zoomprop"))
}

fn run(dir: &Path, args: &[&str]) -> String {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &[
    "--width-min", "640", "--width-max", "640", "--height-min", "480", "--height-max", "480",
    "--channels", "8", "--stride", "16",
];

fn gen(dir: &Path, data: &str, count: &str, seed: &str) {
    let mut args = vec!["gen", "--data-dir", data, "--count", count, "--seed", seed];
    args.extend_from_slice(SMALL);
    run(dir, &args);
}

#[test]
fn gen_writes_consistent_dataset() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "d", "4", "7");
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(t.path().join("d/manifest.json")).unwrap()).unwrap();
    let ids: Vec<String> = manifest["ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(manifest["seed"], 7);
    let mut files: Vec<String> = std::fs::read_dir(t.path().join("d/features"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().trim_end_matches(".fimg").to_string())
        .collect();
    files.sort();
    assert_eq!(files, ids);
    let ann = std::fs::read_to_string(t.path().join("d/annotations.jsonl")).unwrap();
    assert_eq!(ann.lines().count(), 4);
}

#[test]
fn gen_zero_scenes() {
    let t = tempfile::tempdir().unwrap();
    gen(t.path(), "d", "0", "1");
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(t.path().join("d/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["ids"].as_array().unwrap().len(), 0);
}

#[test]
fn config_file_and_errors() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(
        t.path().join("run.cfg"),
        "# small run\ndata-dir = d\ncount = 2\nwidth-min = 320\nwidth-max = 320\nheight-min = 240\nheight-max = 240\n",
    )
    .unwrap();
    let out = run(t.path(), &["gen", "--config", "run.cfg", "--seed", "3"]);
    assert!(out.contains("seed = 3"));
    assert!(out.contains("count = 2"));
    assert!(t.path().join("d/features/scene-00001.fimg").exists());

    let bad = bin().current_dir(t.path()).args(["gen", "--no-such-key", "1"]).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("no-such-key"));

    let missing = bin()
        .current_dir(t.path())
        .args(["train", "--data-dir", "nowhere"])
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nowhere"));
}

#[test]
fn train_propose_eval_sweep() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    gen(d, "train", "4", "1");
    gen(d, "test", "2", "2");

    // zero iterations stores the seeded initialization
    run(d, &["train", "--data-dir", "train", "--iterations", "0", "--model", "init.scnt", "--train-seed", "5"]);
    let init = zoomprop::scnet::load_model(d.join("init.scnt")).unwrap();
    let fresh = zoomprop::ScNetModel::init(8 * 16, 64, 13, 5);
    assert!(init.params().zip(fresh.params()).all(|(a, b)| *a == (*b as f32) as f64));

    run(d, &["train", "--data-dir", "train", "--iterations", "50"]);
    let loss = std::fs::read_to_string(d.join("run/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 51);

    let counters = |name: &str| -> u64 {
        let text = std::fs::read_to_string(d.join(name)).unwrap();
        let total = text.lines().last().unwrap().to_string();
        assert!(total.starts_with("total,"));
        total.split(',').nth(1).unwrap().parse().unwrap()
    };
    run(d, &["propose", "--data-dir", "test", "--strategy", "zoom", "--counters", "cz.csv"]);
    run(d, &["propose", "--data-dir", "test", "--strategy", "dense", "--counters", "cd.csv", "--proposals", "pd.csv"]);
    assert!(counters("cd.csv") > counters("cz.csv"));

    run(d, &["propose", "--data-dir", "test", "--conf-threshold", "1.0", "--proposals", "none.csv"]);
    assert_eq!(
        std::fs::read_to_string(d.join("none.csv")).unwrap(),
        "image_id,x1,y1,x2,y2,score,provenance\n"
    );
    run(d, &["eval", "--data-dir", "test", "--proposals", "none.csv", "--recall-csv", "r0.csv"]);
    let r0 = std::fs::read_to_string(d.join("r0.csv")).unwrap();
    for line in r0.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols[1] != "0" {
            assert_eq!(cols[2], "0");
        }
    }

    // annotations as proposals
    let scenes = zoomprop::synth::read_annotations(&d.join("test/annotations.jsonl")).unwrap();
    let mut csv = String::from("image_id,x1,y1,x2,y2\n");
    for s in &scenes {
        for b in s.gt_boxes() {
            csv += &format!("{},{},{},{},{}\n", s.image_id, b.x1(), b.y1(), b.x2(), b.y2());
        }
    }
    std::fs::write(d.join("gt.csv"), csv).unwrap();
    run(d, &["eval", "--data-dir", "test", "--proposals", "gt.csv", "--recall-csv", "r1.csv"]);
    let r1 = std::fs::read_to_string(d.join("r1.csv")).unwrap();
    assert!(r1.lines().skip(1).all(|l| l.ends_with(",1")));

    // the same boxes fed in as an external set A
    run(d, &["propose", "--data-dir", "test", "--strategy", "external", "--external-proposals", "gt.csv", "--proposals", "pe.csv"]);

    run(d, &["sweep", "--data-dir", "test", "--thresholds", "0.9,0.5,0.1,0.01,0.001"]);
    let curve = zoomprop::eval::read_curve(d.join("run/curve.csv")).unwrap();
    assert_eq!(curve.len(), 15);
    for st in zoomprop::eval::Strategy::ALL {
        let rows: Vec<_> = curve.iter().filter(|p| p.strategy == st).collect();
        assert_eq!(rows.len(), 5);
        assert!(rows.windows(2).all(|w| w[0].recall <= w[1].recall));
    }
}
