mod common;

use common::{hedge, hedge_with_stdin, prepared, quick_train, s};
use hedge_cli::commands::report_gradcheck;
use hedge_cli::sweep::SweepReport;
use hedge_core::checkpoint::{load_checkpoint, save_checkpoint};
use hedge_core::corpus::{CorpusStats, STATS_FILE};
use hedge_core::gradcheck::LayerCheck;
use hedge_core::metrics::mean_std;
use hedge_core::params::ParamStore;
use hedge_core::Tensor;

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), &[]);
    let out = dir.path().join("run");
    let base = ["train", "--corpus", s(&p.corpus), "--out", s(&out)];

    assert_eq!(hedge(&[]).code, 2);
    assert_eq!(hedge(&["frobnicate"]).code, 2);

    let r = hedge(
        &[
            &base[..],
            &[
                "--preset",
                "no-such-model",
                "--embeddings",
                s(&p.fixture.vectors),
            ],
        ]
        .concat(),
    );
    assert_eq!(r.code, 2);
    assert!(
        r.stderr.contains("joint-latent-gru-lstm-att"),
        "{}",
        r.stderr
    );

    let r = hedge(&[&base[..], &["--preset", "gru"]].concat());
    assert_eq!(r.code, 2, "missing embeddings");
    let r = hedge(
        &[
            &base[..],
            &[
                "--preset",
                "gru",
                "--embeddings",
                "/nonexistent/vectors.txt",
            ],
        ]
        .concat(),
    );
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("/nonexistent/vectors.txt"));
    let r = hedge(&[&base[..], &["--preset", "pos-gru", "--set", "bogus_key=3"]].concat());
    assert_eq!(r.code, 2, "{}", r.stderr);
    let r = hedge(&[&base[..], &["--preset", "pos-gru", "--set", "lr=-1"]].concat());
    assert_eq!(r.code, 2);
    let r = hedge(&[
        "train",
        "--corpus",
        "/nonexistent",
        "--out",
        s(&out),
        "--preset",
        "pos-gru",
    ]);
    assert_eq!(r.code, 2);
    assert!(
        !out.exists(),
        "validation must happen before anything is written"
    );

    let r = hedge(&[
        "prepare",
        "--train-xml",
        "/nonexistent/train.xml",
        "--eval-xml",
        "/x",
        "--heuristic-pos",
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("/nonexistent/train.xml"));
    // Existing output directory without --overwrite.
    let r = hedge(&[
        "prepare",
        "--train-xml",
        s(&p.fixture.train_xml),
        "--eval-xml",
        s(&p.fixture.eval_xml),
        "--heuristic-pos",
        "--out",
        s(&p.corpus),
    ]);
    assert_eq!(r.code, 2);
}

#[test]
fn prepare_train_evaluate_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), &[]);
    let stats: CorpusStats =
        serde_json::from_str(&std::fs::read_to_string(p.corpus.join(STATS_FILE)).unwrap()).unwrap();
    assert_eq!(
        stats.source_train.sentences,
        hedge_cli::fixture::TRAIN_SENTENCES
    );
    assert_eq!(stats.eval.sentences, hedge_cli::fixture::EVAL_SENTENCES);
    assert_eq!(stats.eval.empty_after_cleaning, 1);

    let run = dir.path().join("run");
    let r = quick_train(&p, "joint-input-gru-att", &run, 1);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("best dev F1"));
    for f in [
        "model.ckpt",
        "last.ckpt",
        "history.jsonl",
        "timing.jsonl",
        "config.json",
        "summary.json",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }

    let ckpt = run.join("model.ckpt");
    let r = hedge(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&p.corpus),
        "--split",
        "eval",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    let f1 = report["f1_x100"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&f1));
    assert_eq!(
        report["tp"].as_u64().unwrap() + report["fn"].as_u64().unwrap(),
        12
    );

    let input = "The river may flow north.\n* -- * /\nThe city is old.\n";
    let r = hedge_with_stdin(&["predict", "--checkpoint", s(&ckpt)], input);
    assert_eq!(r.code, 2, "POS model needs a tag source");
    let r = hedge_with_stdin(
        &["predict", "--checkpoint", s(&ckpt), "--heuristic-pos"],
        input,
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let lines: Vec<Vec<&str>> = r.stdout.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(lines.len(), 3);
    for (fields, text) in lines.iter().zip(input.lines()) {
        assert_eq!(fields.len(), 3);
        let p: f64 = fields[0].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(fields[1], if p >= 0.5 { "uncertain" } else { "certain" });
        assert_eq!(fields[2], text);
    }
    assert_eq!(lines[1][..2], ["0", "certain"], "noise-only line");

    let jsonl = "{\"tokens\": [\"the\", \"river\"], \"pos\": [\"DET\", \"NOUN\"]}\n";
    let r = hedge_with_stdin(&["predict", "--checkpoint", s(&ckpt), "--jsonl"], jsonl);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.ends_with("\tthe river\n"));

    let r = hedge_with_stdin(
        &["predict", "--checkpoint", s(&ckpt), "--heuristic-pos"],
        "",
    );
    assert_eq!((r.code, r.stdout.as_str()), (0, ""));
}

#[test]
fn evaluate_rejects_a_different_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), &[]);
    let run = dir.path().join("run");
    assert_eq!(quick_train(&p, "pos-gru", &run, 1).code, 0);
    let other = prepared(&dir.path().join("cased"), &["--no-lowercase"]);
    let r = hedge(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("model.ckpt")),
        "--corpus",
        s(&other.corpus),
    ]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("vocabulary hash"));
}

#[test]
fn zeroed_model_predicts_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), &[]);
    let run = dir.path().join("run");
    assert_eq!(quick_train(&p, "gru-att", &run, 2).code, 0);
    let (mut model, header) = load_checkpoint(&run.join("model.ckpt")).unwrap();
    for param in model.store.iter_mut() {
        param.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let zeroed = dir.path().join("zero.ckpt");
    save_checkpoint(&zeroed, &model, &header.corpus_vocab_hash, header.meta).unwrap();
    let r = hedge_with_stdin(
        &["predict", "--checkpoint", s(&zeroed)],
        "A festival may happen.\nIt rained.\n",
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    for line in r.stdout.lines() {
        assert!(line.starts_with("0.5\tuncertain\t"), "{line}");
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), &[]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(quick_train(&p, "joint-latent-gru-lstm-att", &a, 7).code, 0);
    assert_eq!(quick_train(&p, "joint-latent-gru-lstm-att", &b, 7).code, 0);
    for f in ["history.jsonl", "model.ckpt", "last.ckpt", "summary.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = dir.path().join("c");
    assert_eq!(quick_train(&p, "joint-latent-gru-lstm-att", &c, 8).code, 0);
    assert_ne!(
        std::fs::read(a.join("last.ckpt")).unwrap(),
        std::fs::read(c.join("last.ckpt")).unwrap()
    );
}

fn write_manifest(
    dir: &std::path::Path,
    corpus: &std::path::Path,
    vectors: &std::path::Path,
) -> std::path::PathBuf {
    let manifest = format!(
        r#"corpus = "{}"
[settings]
epochs = 4
eval_every = 2
hidden = 4
batch_size = 16
sample_start = 2
sample_count = 2

[[run]]
name = "POS GRU"
preset = "pos-gru"
seeds = [1, 2]

[[run]]
name = "GRU"
preset = "gru-att"
embeddings = ["{}"]
seeds = [3, 4, 5]
[run.settings]
lr = 0.2
"#,
        corpus.display(),
        vectors.display()
    );
    let path = dir.join("sweep.toml");
    std::fs::write(&path, manifest).unwrap();
    path
}

#[test]
fn sweep_aggregates_seeds_and_matches_parallel_runs() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), &[]);
    let manifest = write_manifest(dir.path(), &p.corpus, &p.fixture.vectors);
    let serial = dir.path().join("serial");
    let r = hedge(&["sweep", "--manifest", s(&manifest), "--out", s(&serial)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.starts_with("| run | preset |"));
    let report: SweepReport =
        serde_json::from_str(&std::fs::read_to_string(serial.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report.cells.len(), 2);
    assert_eq!(report.cells[1].seeds.len(), 3);
    for cell in &report.cells {
        let scores: Vec<f64> = cell.seeds.iter().map(|s| s.eval_f1_x100.unwrap()).collect();
        let (m, sd) = mean_std(&scores).unwrap();
        assert_eq!((cell.mean, cell.std), (Some(m), Some(sd)));
        assert!(cell.dev_sample_mean.is_some());
    }
    assert!(serial.join("report.md").exists());

    let parallel = dir.path().join("parallel");
    let r = hedge(&[
        "sweep",
        "--manifest",
        s(&manifest),
        "--out",
        s(&parallel),
        "--jobs",
        "3",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let again: SweepReport =
        serde_json::from_str(&std::fs::read_to_string(parallel.join("report.json")).unwrap())
            .unwrap();
    for (x, y) in report.cells.iter().zip(&again.cells) {
        assert_eq!(x.mean, y.mean);
        for (a, b) in x.seeds.iter().zip(&y.seeds) {
            let (fa, fb) = (a.dir.join("model.ckpt"), b.dir.join("model.ckpt"));
            assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
        }
    }
}

#[test]
fn sweep_validates_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let p = prepared(dir.path(), &[]);
    let manifest = write_manifest(
        dir.path(),
        &p.corpus,
        std::path::Path::new("/nonexistent/v.txt"),
    );
    let out = dir.path().join("out");
    let r = hedge(&["sweep", "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(!out.exists());
}

#[test]
fn gradcheck_command_and_mutation() {
    let r = hedge(&["gradcheck"]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.lines().filter(|l| l.ends_with(" ok")).count() >= 10);

    // d(x * stop_grad(x))/dx is x analytically but 2x numerically.
    let broken = LayerCheck::new(
        "broken",
        ParamStore::new(),
        vec![Tensor::vector(vec![0.7, -1.3, 0.4])],
        Box::new(|ctx, xs| {
            let frozen = ctx.g.constant(ctx.g.value(xs[0]).clone());
            ctx.g.mul(xs[0], frozen)
        }),
    );
    let mut out = Vec::new();
    let err = report_gradcheck(&[broken], &mut out).unwrap_err();
    assert_eq!(err.code, 1);
    assert!(String::from_utf8(out).unwrap().contains("FAIL"));
}
