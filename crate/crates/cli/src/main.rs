use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use noc::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use noc::config::{ablation_config, generate_config, pipeline_config, read_config_file, AblationConfig, Entry, GenerateConfig};
use noc::dataset::{read_captions, read_images, write_captions};
use noc::decode::DecodeMethod;
use noc::fusion::TrainConfig;
use noc::metrics::{emit_report, Captions, MentionReport};
use noc::pipeline::{ablation_table, caption_images, format_loss_log, run_ablation, train_pipeline, truth_map, PipelineConfig};
use noc::synth::{generate_world, load_split, make_heldout_split, write_split};
use noc::NocError;

#[derive(Parser)]
#[command(name = "noc", version, about = "Caption images with objects never seen in paired training data")]
struct Cli {
    /// Seed for generation, training and sampling; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and held-out split.
    Generate,
    /// Pre-train and jointly train a model on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Continue training from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Joint steps to run; defaults to the configured count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Caption every image in a labelled-image or paired-caption file.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// greedy, beam:K or sample:N
        #[arg(long, default_value = "greedy")]
        method: String,
        #[arg(long, default_value_t = 12)]
        max_len: usize,
    },
    /// Score a caption file against the test split.
    Eval {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report every object rather than only the held-out ones.
        #[arg(long)]
        all_objects: bool,
    },
    /// Run the ablation grid and print held-out F1 per row.
    Ablate {
        #[arg(long)]
        data: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Domain(NocError),
}

impl From<NocError> for CliError {
    fn from(e: NocError) -> Self {
        match e {
            NocError::Config(m) => CliError::Usage(m),
            e => CliError::Domain(e),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Domain(e) => write!(f, "error: {e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn entries(cli: &Cli) -> CliResult<Vec<Entry>> {
    match &cli.config {
        Some(p) => read_config_file(p).map_err(|e| match e {
            NocError::Io { .. } => CliError::Domain(e),
            e => CliError::Usage(e.to_string()),
        }),
        None => Ok(Vec::new()),
    }
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| CliError::Domain(NocError::io(path, e)))
}

fn generate(cli: &Cli) -> CliResult {
    let mut cfg = generate_config(&entries(cli)?, GenerateConfig::default())?;
    if let Some(s) = cli.seed {
        cfg.spec.seed = s;
    }
    let world = generate_world::<f64>(&cfg.spec)?;
    let heldout: Vec<&str> = cfg.heldout.iter().map(String::as_str).collect();
    let split = make_heldout_split(&world, &heldout)?;
    let dir = out_path(cli, "data");
    let m = write_split(&dir, &world, &split)?;
    println!(
        "wrote {} paired ({} for training), {} labelled images, {} sentences, {} test images to {}",
        world.paired.len(),
        split.train_paired.len(),
        split.image_only.len(),
        split.text_only.len(),
        split.test_paired.len(),
        dir.display()
    );
    println!("held out: {}", m.heldout.join(", "));
    Ok(())
}

fn pipeline(cli: &Cli, base: PipelineConfig) -> CliResult<PipelineConfig> {
    let mut cfg = pipeline_config(&entries(cli)?, base)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn train(cli: &Cli, data: &Path, resume: Option<&Path>, steps: Option<usize>) -> CliResult {
    let mut cfg = pipeline(cli, PipelineConfig::default())?;
    let loaded = load_split::<f64>(data)?;
    let sources = loaded.split.sources();
    let out = out_path(cli, "checkpoint");
    let (ck, log) = match resume {
        Some(path) => {
            let mut ck = load_checkpoint::<f64>(path, Some(&loaded.manifest.vocab_hash))?;
            let steps = steps.unwrap_or(ck.pipeline.train.steps);
            let trainer = ck
                .trainer
                .as_mut()
                .ok_or_else(|| CliError::Domain(NocError::Checkpoint("checkpoint has no trainer state to resume".into())))?;
            let log = trainer.run(&mut ck.model, &sources, steps)?;
            (ck, log)
        }
        None => {
            if let Some(s) = steps {
                cfg.train = TrainConfig { steps: s, ..cfg.train };
            }
            let (model, trainer, log) = train_pipeline(&loaded.vocab, &loaded.embeddings, &sources, &cfg)?;
            (Checkpoint { model, trainer: Some(trainer), pipeline: cfg }, log)
        }
    };
    save_checkpoint(&out, &ck)?;
    write_text(&out.join("train_log.csv"), &format_loss_log(&log))?;
    if let Some(last) = log.last() {
        println!(
            "step {}: l_cm {:.4} l_im {:.4} l_lm {:.4} total {:.4}",
            last.step, last.l_cm, last.l_im, last.l_lm, last.total
        );
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}

fn caption(cli: &Cli, checkpoint: &Path, images: &Path, method: &str, max_len: usize) -> CliResult {
    let method: DecodeMethod = method.parse().map_err(|e: NocError| CliError::Usage(e.to_string()))?;
    if max_len == 0 {
        return Err(CliError::Usage("--max-len must be at least 1".into()));
    }
    let ck = load_checkpoint::<f64>(checkpoint, None)?;
    let imgs = read_images::<f64>(images)?;
    let records = caption_images(&ck.model, &imgs, method, max_len, cli.seed.unwrap_or(ck.pipeline.seed))?;
    let out = out_path(cli, "captions.tsv");
    write_captions(&out, &records)?;
    println!("{} captions written to {}", records.len(), out.display());
    Ok(())
}

fn eval(cli: &Cli, captions: &Path, data: &Path, all_objects: bool) -> CliResult {
    let loaded = load_split::<f64>(data)?;
    let records = read_captions(captions)?;
    let caps: Captions = records.into_iter().map(|r| (r.id, r.tokens)).collect();
    let truth = truth_map(&loaded.vocab, &loaded.split.test_paired);
    let objects: Vec<&str> = if all_objects {
        loaded.manifest.objects.iter().map(String::as_str).collect()
    } else {
        loaded.manifest.heldout.iter().map(String::as_str).collect()
    };
    let report = MentionReport::build(&caps, &truth, &objects)?;
    let out = out_path(cli, "report.json");
    let table = emit_report(&report, &out)?;
    print!("{}", report.table());
    println!("report written to {} and {}", out.display(), table.display());
    Ok(())
}

fn ablate(cli: &Cli, data: &Path) -> CliResult {
    let mut cfg = ablation_config(&entries(cli)?, AblationConfig::default())?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let loaded = load_split::<f64>(data)?;
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let base = PipelineConfig { seed, train: TrainConfig { seed, ..cfg.pipeline.train.clone() }, ..cfg.pipeline.clone() };
        results.extend(run_ablation(&loaded.vocab, &loaded.embeddings, &loaded.split, &cfg.rows, &base)?);
    }
    let table = ablation_table(&results);
    let out = out_path(cli, "ablation.txt");
    write_text(&out, &table)?;
    let json = serde_json::to_string_pretty(&results).map_err(|e| CliError::Domain(e.into()))? + "\n";
    write_text(&out.with_extension("json"), &json)?;
    print!("{table}");
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Generate => generate(cli),
        Command::Train { data, resume, steps } => train(cli, data, resume.as_deref(), *steps),
        Command::Caption { checkpoint, images, method, max_len } => caption(cli, checkpoint, images, method, *max_len),
        Command::Eval { captions, data, all_objects } => eval(cli, captions, data, *all_objects),
        Command::Ablate { data } => ablate(cli, data),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Domain(_) => ExitCode::from(1),
            }
        }
    }
}
