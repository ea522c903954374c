mod artifacts;
mod commands;
mod config;
mod failure;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use artifacts::Run;
use config::{parse_override, PipelineConfig};
use failure::{Context, Failure, Result};

/// Attribute-conditioned peptide generation and screening.
#[derive(Debug, Parser)]
#[command(name = "pepgen", version, about)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Configuration override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = parse_override)]
    set: Vec<(String, String)>,

    /// Master seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory all artifacts are read from and written to.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Caps the worker threads used for parallel scoring and decoding.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Prints the resolved configuration and exits.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the corpus from sequence and label files, or a synthetic one.
    Ingest {
        #[arg(long)]
        sequences: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        labels: Vec<PathBuf>,
        /// Size of a synthetic corpus with a planted attribute.
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Train the autoencoder.
    TrainAe {
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        objective: Option<String>,
    },
    /// Heldout reconstruction, BLEU, KL, MMD and perplexity panel.
    EvalAe {
        /// Score decodes with the trained language model instead of a uniform one.
        #[arg(long)]
        lm: bool,
    },
    /// Train the character language model.
    LmTrain {
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Per-sequence perplexity.
    LmScore {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior draws for the train and test splits.
    Embed,
    /// Fit the latent mixture density.
    FitGmm {
        #[arg(long)]
        components: Option<usize>,
    },
    /// Fit latent-space attribute classifiers.
    FitLatentClf {
        #[arg(long, value_delimiter = ',')]
        attr: Vec<String>,
    },
    /// Train sequence-level screening classifiers (default: one per screening stage).
    TrainSeqClf {
        #[arg(long, value_delimiter = ',')]
        attr: Vec<String>,
    },
    /// Attribute-conditioned sampling; writes FASTA and CSV candidates.
    ClassSample {
        /// `attr=0|1` pairs, comma separated; empty for unconditioned sampling.
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run the classifier and perplexity screening stages.
    Screen,
    /// Contact-trajectory screen.
    Simscreen {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Physicochemical descriptors.
    Descriptors {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Global alignment of two sequences, or of every candidate against the corpus.
    Align {
        a: Option<String>,
        b: Option<String>,
        #[arg(long)]
        novelty: bool,
    },
    /// Decode evenly spaced points between the encodings of two sequences.
    Interpolate {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Attrition funnel and top candidate dossier.
    Report {
        #[arg(long)]
        top_k: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::TrainAe { .. } => "train-ae",
            Command::EvalAe { .. } => "eval-ae",
            Command::LmTrain { .. } => "lm-train",
            Command::LmScore { .. } => "lm-score",
            Command::Embed => "embed",
            Command::FitGmm { .. } => "fit-gmm",
            Command::FitLatentClf { .. } => "fit-latent-clf",
            Command::TrainSeqClf { .. } => "train-seq-clf",
            Command::ClassSample { .. } => "class-sample",
            Command::Screen => "screen",
            Command::Simscreen { .. } => "simscreen",
            Command::Descriptors { .. } => "descriptors",
            Command::Align { .. } => "align",
            Command::Interpolate { .. } => "interpolate",
            Command::Report { .. } => "report",
        }
    }

    /// Flags that are shorthand for configuration keys.
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_owned(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let list = |v: &[String]| (!v.is_empty()).then(|| v.join(","));
        match self {
            Command::Ingest { sequences, labels, synthetic } => {
                put("paths.sequences", path(sequences));
                let labels: Vec<String> = labels.iter().map(|p| p.display().to_string()).collect();
                put("paths.labels", list(&labels));
                put("corpus.synthetic_count", synthetic.map(|n| n.to_string()));
            }
            Command::TrainAe { iterations, objective } => {
                put("ae.iterations", iterations.map(|n| n.to_string()));
                put("ae.objective", objective.clone());
            }
            Command::LmTrain { iterations } => put("lm.iterations", iterations.map(|n| n.to_string())),
            Command::FitGmm { components } => put("gmm.components", components.map(|n| n.to_string())),
            Command::FitLatentClf { attr } => put("latent_clf.attributes", list(attr)),
            Command::ClassSample { target, n } => {
                put("sampler.target", target.clone());
                put("sampler.n", n.map(|n| n.to_string()));
            }
            Command::Simscreen { manifest } => put("paths.contact_manifest", path(manifest)),
            Command::Report { top_k } => put("report.top_k", top_k.map(|n| n.to_string())),
            _ => {}
        }
        o
    }
}

fn resolve(cli: &Cli) -> Result<PipelineConfig> {
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(d) = &cli.out_dir {
        overrides.push(("paths.out_dir".into(), d.display().to_string()));
    }
    if let Some(t) = cli.threads {
        overrides.push(("threads".into(), t.to_string()));
    }
    overrides.extend(cli.command.overrides());
    if let Some(p) = &cli.config {
        if !p.exists() {
            return Err(Failure::config(format!("{} does not exist", p.display())));
        }
    }
    PipelineConfig::resolve(cli.config.as_deref(), &overrides)
}

fn execute(cli: &Cli) -> Result<Option<String>> {
    let cfg = resolve(cli)?;
    if cli.print_config {
        return Ok(Some(cfg.to_flat()));
    }
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().config_err("thread pool")?;
    }
    let mut run = Run::new(cfg)?;
    let mut printed = None;
    match &cli.command {
        Command::Ingest { .. } => commands::ingest(&mut run)?,
        Command::TrainAe { .. } => commands::train_ae(&mut run)?,
        Command::EvalAe { lm } => commands::eval_ae(&mut run, *lm)?,
        Command::LmTrain { .. } => commands::lm_train(&mut run)?,
        Command::LmScore { input, out } => commands::lm_score(&mut run, input, out)?,
        Command::Embed => commands::embed(&mut run)?,
        Command::FitGmm { .. } => commands::fit_gmm_cmd(&mut run)?,
        Command::FitLatentClf { .. } => commands::fit_latent_clf(&mut run)?,
        Command::TrainSeqClf { attr } => commands::train_seq_clf(&mut run, attr)?,
        Command::ClassSample { .. } => commands::class_sample(&mut run)?,
        Command::Screen => commands::screen(&mut run)?,
        Command::Simscreen { .. } => commands::simscreen_cmd(&mut run)?,
        Command::Descriptors { input, out } => commands::descriptors_cmd(&mut run, input, out.as_deref())?,
        Command::Align { a, b, novelty } => printed = commands::align(&mut run, a.as_deref(), b.as_deref(), *novelty)?,
        Command::Interpolate { from, to, steps } => commands::interpolate_cmd(&mut run, from, to, *steps)?,
        Command::Report { .. } => commands::report(&mut run)?,
    }
    Ok(Some(printed.unwrap_or_else(|| {
        serde_json::json!({
            "status": "ok",
            "command": cli.command.name(),
            "config_hash": run.provenance.config_hash,
            "artifacts": run.written,
        })
        .to_string()
    })))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("{}", Failure::config(e.to_string().trim_end()).to_json("pepgen"));
            std::process::exit(2);
        }
    };
    match execute(&cli) {
        Ok(out) => {
            if let Some(s) = out {
                println!("{}", s.trim_end());
            }
        }
        Err(f) => {
            eprintln!("{}", f.to_json(cli.command.name()));
            std::process::exit(f.kind.exit_code());
        }
    }
}
