//! Subcommands wiring the pipeline end to end.
//!
//! ```text
//! iert synth     --out data/synth
//! iert pretrain  --set corpus=data/synth --set steps=3000 --out runs/pre
//! iert finetune  --set corpus=data/synth --set pretrained=runs/pre/checkpoint --out runs/ft
//! iert recommend --set corpus=data/synth --set model=runs/ft/checkpoint --out runs/rec
//! iert evaluate  --set corpus=data/synth --set recommendations=runs/rec/recommendations.tsv --out runs/eval
//! ```
//!
//! Every run writes `config.resolved` into its output directory. Failures
//! print one line `error<TAB>kind=<kind><TAB>message=<text>` to stderr.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use log::info;

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, Subcommand};
use crate::corpus::{build_corpus, generate_synthetic, parse_transactions, read_corpus, split_corpus, write_corpus, Corpus};
use crate::error::{Error, Result};
use crate::eval::{evaluate, metrics_key_values, metrics_table, per_user_tsv, read_recommendations, top_baseline, write_recommendations};
use crate::finetune::{FineTuner, Initialization, Recommender};
use crate::pretrain::Pretrainer;

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const PRETRAIN_LOG: &str = "pretrain_loss.tsv";
pub const FINETUNE_LOG: &str = "finetune_loss.tsv";
pub const RECOMMENDATIONS_FILE: &str = "recommendations.tsv";
pub const METRICS_TABLE: &str = "metrics.txt";
pub const METRICS_KV: &str = "metrics.kv";
pub const PER_USER_FILE: &str = "per_user.tsv";
pub const INGEST_REPORT: &str = "ingest_report.txt";

#[derive(Parser, Debug)]
#[command(name = "iert", version, about = "Pre-trained transformer item representations for next-basket recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand, Debug)]
enum Command {
    /// Parse a transaction log into corpus files.
    Ingest(RunArgs),
    /// Generate a corpus with planted co-occurrence and sequential rules.
    Synth(RunArgs),
    /// Pre-train the encoder (masked item + next basket prediction).
    Pretrain(RunArgs),
    /// Fine-tune the recommender from a checkpoint or from scratch.
    Finetune(RunArgs),
    /// Write top-K recommendations for every user.
    Recommend(RunArgs),
    /// Score recommendations (or the TOP baseline) against test baskets.
    Evaluate(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// key=value config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Defaults, then `--config`, then `--seed`/`--out`, then `--set`.
fn resolve(sub: Subcommand, args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(sub);
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text, &path.display().to_string())?;
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &args.out {
        cfg.set("out", &out.display().to_string())?;
    }
    for s in &args.set {
        cfg.apply_override(s)?;
    }
    Ok(cfg)
}

/// Single-line, tab-free rendering of an error.
pub fn error_line(kind: &str, message: &str) -> String {
    let flat: String = message.split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error\tkind={kind}\tmessage={flat}")
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return 0;
            }
            eprintln!("{}", error_line("usage", &e.to_string()));
            return 2;
        }
    };
    let (sub, args) = match &cli.command {
        Command::Ingest(a) => (Subcommand::Ingest, a),
        Command::Synth(a) => (Subcommand::Synth, a),
        Command::Pretrain(a) => (Subcommand::Pretrain, a),
        Command::Finetune(a) => (Subcommand::Finetune, a),
        Command::Recommend(a) => (Subcommand::Recommend, a),
        Command::Evaluate(a) => (Subcommand::Evaluate, a),
    };
    match resolve(sub, args).and_then(|cfg| run(&cfg)) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            1
        }
    }
}

/// Runs one subcommand; returns the paths it wrote.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = cfg.out_dir()?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let resolved = out.join(RESOLVED_CONFIG);
    fs::write(&resolved, cfg.resolved_text()).map_err(|e| Error::io(&resolved, e))?;
    let mut written = vec![resolved];
    written.extend(match cfg.subcommand {
        Subcommand::Ingest => ingest(cfg, &out)?,
        Subcommand::Synth => synth(cfg, &out)?,
        Subcommand::Pretrain => pretrain(cfg, &out)?,
        Subcommand::Finetune => finetune(cfg, &out)?,
        Subcommand::Recommend => recommend(cfg, &out)?,
        Subcommand::Evaluate => evaluate_cmd(cfg, &out)?,
    });
    Ok(written)
}

fn write_file(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    read_corpus(cfg.required_path("corpus")?)
}

fn ingest(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let input = cfg.required_path("input")?;
    let file = File::open(&input).map_err(|e| Error::io(&input, e))?;
    let parsed = parse_transactions(std::io::BufReader::new(file), &cfg.parse_schema()?)?;
    let (corpus, report) = build_corpus(&parsed.records, &cfg.build_options()?)?;
    let (corpus, split) = split_corpus(corpus);
    write_corpus(&corpus, out)?;
    info!("ingest: {}", report.summary());
    let text = format!(
        "skipped_rows={}\n{}\nexcluded_users_split={}\n",
        parsed.skipped,
        report.summary().replace(' ', "\n"),
        split.excluded_users
    );
    Ok(vec![out.to_path_buf(), write_file(out.join(INGEST_REPORT), &text)?])
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let corpus = generate_synthetic(&cfg.synthetic_spec()?)?;
    write_corpus(&corpus, out)?;
    info!("synth: {} users, {} items, {} baskets", corpus.num_users(), corpus.vocabulary.catalog_size(), corpus.num_baskets());
    Ok(vec![out.to_path_buf()])
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let file = if append {
        OpenOptions::new().create(true).append(true).open(path)
    } else {
        File::create(path)
    };
    Ok(BufWriter::new(file.map_err(|e| Error::io(path, e))?))
}

fn pretrain(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg)?;
    let config = cfg.pretrain_config()?;
    let resume = cfg.path("resume")?;
    let mut trainer = match &resume {
        Some(dir) => Pretrainer::resume(&corpus, dir, config)?,
        None => Pretrainer::new(&corpus, cfg.encoder_config(corpus.vocabulary.size())?, config)?,
    };
    let log_path = out.join(PRETRAIN_LOG);
    let mut log = open_log(&log_path, resume.is_some())?;
    let history = trainer.run(&mut log, Some(out))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    if let Some(last) = history.last() {
        info!("pretrain: step {} l1={:.4} l2={:.4} l3={:.4}", trainer.step, last.l1, last.l2, last.l3);
    }
    let ck = out.join(CHECKPOINT_DIR);
    trainer.save(&ck)?;
    Ok(vec![log_path, ck])
}

fn finetune(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg)?;
    let config = cfg.finetune_config()?;
    let pretrained = cfg.path("pretrained")?.map(Checkpoint::load).transpose()?;
    let init = match &pretrained {
        Some(ck) => Initialization::Pretrained(ck),
        None => Initialization::Random(cfg.encoder_config(corpus.vocabulary.size())?),
    };
    let mut tuner = FineTuner::new(&corpus, init, config)?;
    let log_path = out.join(FINETUNE_LOG);
    let mut log = open_log(&log_path, false)?;
    let losses = tuner.run(&mut log)?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    info!("finetune: {} steps, last loss {:?}", tuner.step, losses.last());
    let ck = out.join(CHECKPOINT_DIR);
    tuner.model.checkpoint().save(&ck)?;
    Ok(vec![log_path, ck])
}

fn recommend(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg)?;
    let model = Recommender::from_checkpoint(&Checkpoint::load(cfg.required_path("model")?)?)?;
    if model.num_users() != corpus.num_users() || model.encoder.config.vocab_size != corpus.vocabulary.size() {
        return Err(Error::Config(format!(
            "model was fine-tuned for {} users / vocab {}, corpus has {} / {}",
            model.num_users(),
            model.encoder.config.vocab_size,
            corpus.num_users(),
            corpus.vocabulary.size()
        )));
    }
    let lists = model.recommend_all(&corpus, cfg.get("k")?, cfg.get("exclude_seen")?)?;
    let path = out.join(RECOMMENDATIONS_FILE);
    write_recommendations(&path, &lists, &corpus.vocabulary)?;
    Ok(vec![path])
}

fn evaluate_cmd(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg)?;
    let k: usize = cfg.get("k")?;
    let (name, lists) = if cfg.get::<bool>("baseline")? {
        ("TOP".to_string(), top_baseline(&corpus, k)?)
    } else {
        let path = cfg.required_path("recommendations")?;
        (cfg.raw("model_name")?.to_string(), read_recommendations(&path, &corpus.vocabulary)?)
    };
    let (metrics, per_user) = evaluate(&lists, &corpus, k)?;
    info!("evaluate: {name} F1@{k}={:.6} NDCG@{k}={:.6}", metrics.f1_at_k, metrics.ndcg_at_k);
    Ok(vec![
        write_file(out.join(METRICS_TABLE), &metrics_table(&[(&name, &metrics)]))?,
        write_file(out.join(METRICS_KV), &metrics_key_values(&name, &metrics))?,
        write_file(out.join(PER_USER_FILE), &per_user_tsv(&per_user))?,
    ])
}
