//! The whole command-line pipeline, driven in-process:
//! synth → pretrain → finetune → recommend → evaluate.

use std::path::Path;

use iert::cli::{main_with_args, CHECKPOINT_DIR, METRICS_TABLE, RECOMMENDATIONS_FILE};

fn iert(args: &[&str]) {
    let mut argv = vec!["iert"];
    argv.extend_from_slice(args);
    println!("$ {}", argv.join(" "));
    assert_eq!(main_with_args(argv), 0);
}

fn main() {
    let root = std::env::temp_dir().join("iert-example-cli");
    let at = |sub: &str| root.join(sub).display().to_string();
    let (corpus, pre, ft, rec, ev) = (at("corpus"), at("pretrain"), at("finetune"), at("recommend"), at("evaluate"));
    let small = ["--set", "hidden_size=16", "--set", "feed_forward_size=32", "--set", "max_sequence_length=48"];

    iert(&["synth", "--seed", "1", "--out", &corpus, "--set", "n_users=30", "--set", "n_items=20", "--set", "n_pairs=2", "--set", "n_rules=3"]);

    let mut args = vec!["pretrain", "--out", &pre, "--set", "steps=10", "--set", "batch_size=8"];
    let corpus_set = format!("corpus={corpus}");
    args.extend(["--set", &corpus_set]);
    args.extend(small);
    iert(&args);

    let pretrained = format!("pretrained={}", Path::new(&pre).join(CHECKPOINT_DIR).display());
    iert(&["finetune", "--out", &ft, "--set", &corpus_set, "--set", &pretrained, "--set", "learning_rate=0.001"]);

    let model = format!("model={}", Path::new(&ft).join(CHECKPOINT_DIR).display());
    iert(&["recommend", "--out", &rec, "--set", &corpus_set, "--set", &model]);

    let recs = format!("recommendations={}", Path::new(&rec).join(RECOMMENDATIONS_FILE).display());
    iert(&["evaluate", "--out", &ev, "--set", &corpus_set, "--set", &recs]);

    print!("{}", std::fs::read_to_string(Path::new(&ev).join(METRICS_TABLE)).unwrap());
}
