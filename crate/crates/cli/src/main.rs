//! `patclass`: train, evaluate and query patent classifiers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use patclass::corpus::{load_corpus, parse_vectors, HistoryScope};
use patclass::persist::{export_embeddings, load_model, save_model};
use patclass::train::{evaluate, evaluate_at_level, predict_topk, train, TrainOptions};
use patclass::{generate_synthetic, CorpusSplit, IclMode, ModelConfig, Part, SynthSpec, Taxonomy};

#[derive(Parser)]
#[command(name = "patclass", version, about = "Hierarchical patent classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint.
    Train {
        /// Flat key=value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory with train.jsonl, valid.jsonl and test.jsonl.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_icl)]
        icl: Option<IclMode>,
        #[arg(long, value_enum)]
        history: Option<Switch>,
        #[arg(long)]
        no_pe: bool,
        #[arg(long)]
        no_text: bool,
        #[arg(long)]
        no_label: bool,
        #[arg(long)]
        level: Option<usize>,
        /// Pretrained word vectors ("count dim" header, then "word v1 .. vT").
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Report every epoch on stderr.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Print ranking metrics for one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        k: Vec<usize>,
        #[arg(long)]
        csv: bool,
        /// Score a coarser taxonomy level by rolling predictions up to ancestors.
        #[arg(long)]
        level: Option<usize>,
        /// Corpus directory; defaults to the one recorded at training time.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write the top-k codes of every record in a JSON Lines file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Corpus providing assignee histories; defaults to the training corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with planted structure.
    Synth {
        /// Flat key=value generator spec; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write learned code vectors as JSON Lines.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_icl(s: &str) -> std::result::Result<IclMode, String> {
    s.parse().map_err(|e: patclass::Error| e.to_string())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            corpus,
            taxonomy,
            out,
            seed,
            icl,
            history,
            no_pe,
            no_text,
            no_label,
            level,
            vectors,
            workers,
            verbose,
        } => {
            let mut cfg = match &config {
                Some(p) => ModelConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
                None => ModelConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = icl {
                cfg.icl_mode = m;
            }
            if let Some(h) = history {
                cfg.history = matches!(h, Switch::On);
            }
            cfg.use_pe &= !no_pe;
            cfg.use_text &= !no_text;
            cfg.use_label &= !no_label;
            if let Some(l) = level {
                cfg.level = l;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let tax = Taxonomy::load(&taxonomy).with_context(|| format!("reading {}", taxonomy.display()))?;
            let split = CorpusSplit::load_dir(&corpus, &tax)?;
            let vectors = match &vectors {
                Some(p) => Some(parse_vectors(&fs::read_to_string(p)?)?),
                None => None,
            };
            let trained = train(cfg, &split, &tax, &TrainOptions { vectors, verbose })?;
            fs::create_dir_all(&out)?;
            let corpus_abs = fs::canonicalize(&corpus).unwrap_or(corpus);
            let ckpt = out.join("model.ckpt");
            save_model(&ckpt, &trained.model, &trained.store, corpus_abs.to_str())?;
            fs::write(out.join("report.json"), serde_json::to_string_pretty(&trained.report)?)?;
            let r = &trained.report;
            println!(
                "trained {} epochs in {:.1}s; best epoch {} (validation {}@{} = {:.4})",
                r.epochs.len(),
                r.wall_secs,
                r.best_epoch,
                trained.model.config.select_metric.name(),
                r.selection_k,
                r.best_score
            );
            println!("checkpoint: {}", ckpt.display());
        }
        Command::Evaluate {
            checkpoint,
            split,
            k,
            csv,
            level,
            corpus,
            workers,
        } => {
            let (mut model, store, meta) = load_model(&checkpoint)?;
            if let Some(w) = workers {
                model.config.workers = w;
            }
            let dir = corpus_dir(corpus, meta.corpus.as_deref())?;
            let data = CorpusSplit::load_dir(&dir, &model.taxonomy)?;
            let part = Part::parse(&split)?;
            let table = match level {
                Some(l) => evaluate_at_level(&model, &store, &data, part, l, &k)?,
                None => evaluate(&model, &store, &data, part, &k)?,
            };
            print!("{}", if csv { table.to_csv() } else { table.to_text() });
        }
        Command::Predict {
            checkpoint,
            input,
            k,
            corpus,
            out,
        } => {
            let (model, store, meta) = load_model(&checkpoint)?;
            let records = load_corpus(&input, &model.taxonomy)?;
            let known = match corpus.or_else(|| meta.corpus.map(PathBuf::from)) {
                Some(dir) if dir.exists() => CorpusSplit::load_dir(&dir, &model.taxonomy)?,
                _ => CorpusSplit::default(),
            };
            let index = known.history_index(HistoryScope::All);
            let set: Vec<_> = records
                .iter()
                .map(|r| {
                    let hist: Vec<_> = index
                        .lookup(&r.assignee, r.time, model.config.history_len)
                        .into_iter()
                        .map(|h| known.get(h))
                        .collect();
                    model.example(r, &hist)
                })
                .collect();
            let lines = predict_topk(&model, &store, &set, k)?;
            let mut w: Box<dyn Write> = match &out {
                Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
                None => Box::new(BufWriter::new(std::io::stdout().lock())),
            };
            for line in &lines {
                serde_json::to_writer(&mut w, line)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Command::Synth { spec, seed, out } => {
            let spec = match &spec {
                Some(p) => SynthSpec::parse(&fs::read_to_string(p)?)?,
                None => SynthSpec::default(),
            };
            let (tax, split) = generate_synthetic(&spec, seed)?;
            split.write_dir(&out, &tax)?;
            println!(
                "wrote {} train, {} valid, {} test records and taxonomy.json to {}",
                split.train.len(),
                split.valid.len(),
                split.test.len(),
                out.display()
            );
        }
        Command::ExportEmbeddings { checkpoint, out } => {
            let (model, store, _) = load_model(&checkpoint)?;
            let n = export_embeddings(&model, &store, &out)?;
            println!("wrote {n} code vectors to {}", out.display());
        }
    }
    Ok(())
}

fn corpus_dir(flag: Option<PathBuf>, recorded: Option<&str>) -> Result<PathBuf> {
    match flag.or_else(|| recorded.map(PathBuf::from)) {
        Some(d) if Path::new(&d).is_dir() => Ok(d),
        Some(d) => bail!("corpus directory {} not found; pass --corpus", d.display()),
        None => bail!("checkpoint records no corpus; pass --corpus"),
    }
}
