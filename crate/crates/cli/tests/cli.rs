use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

/// Runs the binary with a whitespace-separated argument string.
fn hp(dir: &Path, args: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headprune"))
        .current_dir(dir)
        .args(args.split_whitespace())
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &str) -> String {
    let out = hp(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &str) -> (i32, String) {
    let out = hp(dir, args);
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Small objective, corpus and surrogates shared by several tests.
fn trained(dir: &Path) {
    ok(
        dir,
        "oracle objective --preset separable --heads 10 --seed 4 --out obj.json",
    );
    ok(
        dir,
        "oracle generate --objective obj.json --samples 1500 --upper 4 --out corpus.jsonl",
    );
    ok(
        dir,
        "train-surrogate --corpus corpus.jsonl --max-epochs 40 --out-dir sur",
    );
}

#[test]
fn pipeline_produces_linked_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    trained(d);
    let report = std::fs::read_to_string(d.join("sur/mse_report.csv")).unwrap();
    assert!(report.starts_with("# manifest: "));
    assert!(report.contains("target,train_mse,validation_mse"));
    let sur = json(&d.join("sur/bias.surrogate.json"));
    assert_eq!(sur["manifest"], "sur/mse_report.csv.manifest.json");
    assert!(sur["report"]["validation_samples"].as_u64().unwrap() == 75);

    let stdout = ok(
        d,
        "anneal --surrogates sur --upper 4 --iterations 3000 --seeds 1,2 --out ap.json",
    );
    assert!(stdout.contains("best mask"));
    assert!(stdout.contains("over 2 seeds"));
    let ap = json(&d.join("ap.json"));
    assert_eq!(ap["method"], "ap");
    assert_eq!(ap["details"]["runs"].as_array().unwrap().len(), 2);
    assert_eq!(ap["manifest"], "ap.json.manifest.json");

    let manifest = json(&d.join("ap.json.manifest.json"));
    assert_eq!(manifest["command"], "anneal");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["config"]["epsilon"], 0.5);
    assert_eq!(manifest["config"]["seeds"], serde_json::json!([1, 2]));
    assert_eq!(manifest["outputs"][0]["path"], "ap.json");

    ok(
        d,
        "oracle score --objective obj.json --unpruned --out base.json",
    );
    ok(
        d,
        "oracle score --objective obj.json --selection ap.json --out ap.result.json",
    );
    let table = ok(d, "compare base.json ap.result.json");
    assert!(table.contains("gains are relative to base"));
    assert!(table.lines().nth(2).unwrap().starts_with("ap"));

    // no temporary files left behind by atomic writes
    for entry in std::fs::read_dir(d).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(!name.starts_with(".tmp"), "{name}");
    }
}

#[test]
fn reruns_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    trained(d);
    let first = std::fs::read(d.join("sur/ppl.surrogate.json")).unwrap();
    ok(
        d,
        "train-surrogate --corpus corpus.jsonl --max-epochs 40 --out-dir again",
    );
    let second = std::fs::read(d.join("again/ppl.surrogate.json")).unwrap();
    let strip = |b: &[u8]| {
        let mut v: Value = serde_json::from_slice(b).unwrap();
        v.as_object_mut().unwrap().remove("manifest");
        v
    };
    assert_eq!(strip(&first), strip(&second));

    ok(
        d,
        "sweep-epsilon --surrogates sur --upper 3 --iterations 2000 --seeds 0 --epsilons 0.3,0.7 --objective obj.json --out sweep.csv",
    );
    let out = ok(d, "replay sweep.csv.manifest.json");
    assert!(out.contains("outputs identical"), "{out}");

    std::fs::write(
        d.join("obj.json"),
        std::fs::read_to_string(d.join("obj.json")).unwrap() + " ",
    )
    .unwrap();
    let (c, err) = code(d, "replay sweep.csv.manifest.json");
    assert_eq!(c, 65, "{err}");
    assert!(err.contains("changed"));
}

#[test]
fn sweep_output_is_plot_ready() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    trained(d);
    let stdout = ok(
        d,
        "sweep-epsilon --surrogates sur --upper 4 --iterations 2000 --seeds 0,1 --objective obj.json --out sweep.csv",
    );
    assert!(stdout.contains("pareto (true)"));
    let text = std::fs::read_to_string(d.join("sweep.csv")).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(
        lines.next().unwrap(),
        "epsilon,seed,best_cost,predicted_bias,predicted_ppl,true_bias,true_ppl,epsilon_best,nondominated,mask"
    );
    assert_eq!(lines.count(), 10);

    // a single weight is the same search as `anneal`
    ok(
        d,
        "sweep-epsilon --surrogates sur --upper 4 --iterations 2000 --seeds 0 --epsilons 0.5 --out one.csv",
    );
    ok(
        d,
        "anneal --surrogates sur --upper 4 --iterations 2000 --seeds 0 --out one.json",
    );
    let mask = json(&d.join("one.json"))["mask"]
        .as_str()
        .unwrap()
        .to_string();
    let row = std::fs::read_to_string(d.join("one.csv")).unwrap();
    assert!(row.lines().last().unwrap().ends_with(&mask));
}

#[test]
fn config_file_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    trained(d);
    std::fs::write(
        d.join("run.toml"),
        "epsilon = 0.3\niterations = 500\nseeds = [7]\nupper = 2\n",
    )
    .unwrap();
    ok(d, "--config run.toml anneal --surrogates sur --out a.json");
    let m = json(&d.join("a.json.manifest.json"));
    assert_eq!(m["config"]["epsilon"], 0.3);
    assert_eq!(m["config"]["budget"]["iterations"], 500);
    assert_eq!(m["config"]["seeds"], serde_json::json!([7]));
    assert_eq!(m["inputs"][0]["path"], "run.toml");

    ok(
        d,
        "--config run.toml anneal --surrogates sur --epsilon 0.8 --eta 0.5 --out b.json",
    );
    let m = json(&d.join("b.json.manifest.json"));
    assert_eq!(m["config"]["epsilon"], 0.8);
    assert_eq!(m["config"]["bounds"]["upper"], 5);

    std::fs::write(d.join("bad.toml"), "epsilon = 0.3\nepsillon = 0.2\n").unwrap();
    let (c, err) = code(d, "--config bad.toml anneal --surrogates sur --out c.json");
    assert_eq!(c, 65);
    assert!(err.contains("bad.toml:2"), "{err}");
}

#[test]
fn exit_codes_by_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    // malformed corpus row: parse error with its line number
    std::fs::write(
        d.join("bad.jsonl"),
        "{\"mask\":\"0101\",\"bias\":0.3,\"ppl\":20.0}\n{\"mask\":\"0101\",\"bias\":0.3}\n",
    )
    .unwrap();
    let (c, err) = code(d, "train-surrogate --corpus bad.jsonl --out-dir x");
    assert_eq!(c, 65, "{err}");
    assert!(err.contains("bad.jsonl:2"), "{err}");

    let (c, _) = code(d, "train-surrogate --corpus missing.jsonl --out-dir x");
    assert_eq!(c, 74);

    let (c, _) = code(d, "anneal --no-such-flag");
    assert_eq!(c, 64);

    ok(
        d,
        "oracle objective --preset tradeoff --heads 6 --out o.json",
    );
    ok(d, "oracle effects --objective o.json --out e.csv");
    // floor(0.9 * 6) = 5 pruned heads cannot fit next to floor(0.5 * 6) = 3 protected ones
    let (c, err) = code(
        d,
        "fasp --effects e.csv --alpha 0.9 --gamma 0.5 --out f.json",
    );
    assert_eq!(c, 78, "{err}");
    let (c, _) = code(d, "fasp --effects e.csv --sweep-alpha --out f.json");
    assert_eq!(c, 78);

    ok(d, "oracle score --objective o.json --unpruned --out r.json");
    let (c, _) = code(d, "compare r.json");
    assert_eq!(c, 78);
    let (c, _) = code(d, "anneal --out a.json");
    assert_eq!(c, 78);
}

#[test]
fn incompatible_surrogates_are_a_configuration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for (n, dir) in [("6", "six"), ("8", "eight")] {
        ok(
            d,
            &format!("oracle objective --preset tradeoff --heads {n} --out {dir}.json"),
        );
        ok(
            d,
            &format!("oracle generate --objective {dir}.json --samples 300 --out {dir}.jsonl"),
        );
        ok(
            d,
            &format!("train-surrogate --corpus {dir}.jsonl --max-epochs 2 --out-dir {dir}"),
        );
    }
    let (c, err) = code(
        d,
        "anneal --bias-surrogate six/bias.surrogate.json --ppl-surrogate eight/ppl.surrogate.json --out a.json",
    );
    assert_eq!(c, 78, "{err}");
    let (c, _) = code(
        d,
        "anneal --bias-surrogate six/ppl.surrogate.json --ppl-surrogate six/ppl.surrogate.json --out a.json",
    );
    assert_eq!(c, 78);
    // the architecture must match the corpus width
    let (c, _) = code(
        d,
        "train-surrogate --corpus six.jsonl --arch 8,4,1 --out-dir z",
    );
    assert_eq!(c, 78);
}

#[test]
fn model_family_architectures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        "oracle objective --preset separable --heads 72 --out o.json",
    );
    ok(
        d,
        "oracle generate --objective o.json --samples 200 --out c.jsonl",
    );
    ok(
        d,
        "train-surrogate --corpus c.jsonl --model distilgpt-2 --max-epochs 1 --out-dir s",
    );
    let f = json(&d.join("s/bias.surrogate.json"));
    assert_eq!(
        f["model"]["layer_sizes"],
        serde_json::json!([72, 64, 32, 1])
    );
    let (c, _) = code(
        d,
        "train-surrogate --corpus c.jsonl --model gpt2 --out-dir t",
    );
    assert_eq!(c, 78);

    // distilgpt2-sized effects table at alpha = 0.2: floor(14.4) heads pruned
    ok(d, "oracle effects --objective o.json --out e.csv");
    ok(d, "fasp --effects e.csv --alpha 0.2 --out f.json");
    let f = json(&d.join("f.json"));
    assert_eq!(f["pruned"].as_array().unwrap().len(), 14);
    assert_eq!(f["details"]["protected"].as_array().unwrap().len(), 21);
    assert_eq!(f["details"]["gamma"], 0.3);
    ok(
        d,
        "fasp --effects e.csv --alpha 0.2 --model gpt-neo-1.3B --out g.json",
    );
    // family gamma only applies to a family of matching width; here it is just read
    assert_eq!(json(&d.join("g.json"))["details"]["gamma"], 0.6);
}

#[test]
fn evaluate_and_select_read_collector_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("tox.csv"),
        "prompt_id,subgroup,toxicity\np0,female,0.2\np1,male,0.4\n",
    )
    .unwrap();
    std::fs::write(
        d.join("loss.csv"),
        "sequence_id,mean_nll,token_count\ns0,2.0,10\ns1,4.0,30\n",
    )
    .unwrap();
    let out = ok(
        d,
        "evaluate --toxicity tox.csv --losses loss.csv --method base --out r.json",
    );
    assert!(out.contains("gender bias 0.200"), "{out}");
    let r = json(&d.join("r.json"));
    assert!((r["bias"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert!((r["ppl"].as_f64().unwrap() - 3.5f64.exp()).abs() < 1e-9);
    let (c, _) = code(
        d,
        "evaluate --toxicity tox.csv --subgroups nonbinary --losses loss.csv --method b --out x.json",
    );
    assert_eq!(c, 65);

    std::fs::write(
        d.join("scores.csv"),
        "head_index,score\n0,0.5\n1,-0.2\n2,0.9\n3,0.1\n4,0.0\n",
    )
    .unwrap();
    ok(d, "select --scores scores.csv --alpha 0.4 --out low.json");
    assert_eq!(
        json(&d.join("low.json"))["pruned"],
        serde_json::json!([1, 4])
    );
    ok(
        d,
        "select --scores scores.csv --alpha 0.4 --direction highest --out high.json",
    );
    assert_eq!(json(&d.join("high.json"))["mask"], "10100");
    ok(
        d,
        "select --random --heads 20 --alpha 0.2 --seed 3 --out rand.json",
    );
    let k = json(&d.join("rand.json"))["pruned"]
        .as_array()
        .unwrap()
        .len();
    assert!((1..=4).contains(&k));

    // delimited corpus with the same three columns
    std::fs::write(
        d.join("corpus.csv"),
        "mask,bias,ppl\n0000,0.40,30.0\n1000,0.35,31.0\n0100,0.30,33.0\n0011,0.50,29.0\n",
    )
    .unwrap();
    ok(
        d,
        "train-surrogate --corpus corpus.csv --split 0.75 --max-epochs 2 --out-dir s",
    );
}
