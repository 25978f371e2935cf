use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sempaste::bank::MaskSource;
use sempaste::compositor::Blending;
use sempaste::config::{AugmentationConfig, CounterInit};
use sempaste::pipeline::{
    cmd_augment, cmd_build_bank, cmd_preview, cmd_stats, AugmentArgs, BuildBankArgs, PreviewArgs, StatsArgs,
};
use sempaste::{DatasetFormat, Error, SimilarityMetric, StrategyKind};

#[derive(Parser)]
#[command(name = "sempaste", version, about = "Semantic copy-paste augmentation for detection datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crop every annotated object into an object bank.
    BuildBank(BuildBankCmd),
    /// Run one augmentation epoch over a dataset.
    Augment(AugmentCmd),
    /// Per-category counts and balance, optionally before and after.
    Stats(StatsCmd),
    /// Side-by-side original/augmented images for chosen ids.
    Preview(PreviewCmd),
}

#[derive(Args)]
struct DatasetOpts {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_parser = parse::<DatasetFormat>)]
    format: DatasetFormat,
}

/// Config file plus per-key overrides.
#[derive(Args, Default)]
struct ConfigOpts {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long, value_parser = parse::<StrategyKind>)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long, value_parser = parse::<SimilarityMetric>)]
    metric: Option<SimilarityMetric>,
    #[arg(long)]
    average_similarity: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epoch: Option<u64>,
    #[arg(long)]
    objects_per_image: Option<usize>,
    #[arg(long, value_parser = parse::<Blending>)]
    blending: Option<Blending>,
    #[arg(long)]
    probability: Option<f64>,
    #[arg(long, value_parser = parse::<CounterInit>)]
    counter_init: Option<CounterInit>,
    #[arg(long)]
    ap_table: Option<PathBuf>,
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl ConfigOpts {
    fn resolve(&self) -> Result<AugmentationConfig, Error> {
        let mut c = match &self.config {
            Some(p) => AugmentationConfig::from_path(p)?,
            None => AugmentationConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(strategy, top_n, metric, seed, epoch, objects_per_image, blending, probability, counter_init);
        if self.embeddings.is_some() {
            c.embedding_path = self.embeddings.clone();
        }
        if self.embedding_dim.is_some() {
            c.embedding_dim = self.embedding_dim;
        }
        if self.ap_table.is_some() {
            c.ap_table = self.ap_table.clone();
        }
        c.average_similarity |= self.average_similarity;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct BuildBankCmd {
    #[command(flatten)]
    data: DatasetOpts,
    /// `gt` for dataset masks, or a directory of class-indexed label PNGs.
    #[arg(long, default_value = "gt", value_parser = parse::<MaskSource>)]
    masks: MaskSource,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    embedding_dim: Option<usize>,
}

#[derive(Args)]
struct AugmentCmd {
    #[command(flatten)]
    data: DatasetOpts,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Threads for decoding and writing; output does not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    config: ConfigOpts,
}

#[derive(Args)]
struct StatsCmd {
    #[command(flatten)]
    data: DatasetOpts,
    /// Augmented copy of the dataset to compare against.
    #[arg(long)]
    augmented: Option<PathBuf>,
    /// Run report to derive the augmented counts from.
    #[arg(long, conflicts_with = "augmented")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PreviewCmd {
    #[command(flatten)]
    data: DatasetOpts,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "image-id", required = true)]
    image_ids: Vec<String>,
    #[arg(long, default_value_t = 1)]
    n_variants: usize,
    #[command(flatten)]
    config: ConfigOpts,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::BuildBank(cmd) => {
            let config = ConfigOpts {
                config: cmd.config,
                embeddings: cmd.embeddings,
                embedding_dim: cmd.embedding_dim,
                ..ConfigOpts::default()
            }
            .resolve()?;
            let embeddings = config
                .resolved_embedding_path()
                .ok_or_else(|| Error::InvalidArgument("--embeddings is required".into()))?;
            let report = cmd_build_bank(&BuildBankArgs {
                dataset: cmd.data.dataset,
                format: cmd.data.format,
                masks: cmd.masks,
                out: cmd.out.clone(),
                embeddings,
                embedding_dim: config.embedding_dim,
                substitutions: config.substitutions,
            })?;
            println!(
                "bank: {} entries over {} categories, {} objects skipped -> {}",
                report.entries,
                report.per_category.len(),
                report.skipped.len(),
                cmd.out.display()
            );
        }
        Command::Augment(cmd) => {
            let report = cmd_augment(&AugmentArgs {
                dataset: cmd.data.dataset,
                format: cmd.data.format,
                bank: cmd.bank,
                out: cmd.out.clone(),
                config: cmd.config.resolve()?,
                workers: cmd.workers,
            })?;
            println!(
                "epoch {}: {} images, {} pastes, {} skips, {} removals in {:.2?} (fingerprint {})",
                report.epoch,
                report.images_written,
                report.total_pastes,
                report.skips.len(),
                report.removed_objects.len(),
                report.wall_time,
                &report.fingerprint[..12]
            );
            if !report.errors.is_empty() {
                eprintln!("{} data errors, see run_report.json", report.errors.len());
            }
        }
        Command::Stats(cmd) => {
            let report = cmd_stats(&StatsArgs {
                dataset: cmd.data.dataset,
                format: cmd.data.format,
                augmented: cmd.augmented,
                report: cmd.report,
            })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Preview(cmd) => {
            let items = cmd_preview(&PreviewArgs {
                dataset: cmd.data.dataset,
                format: cmd.data.format,
                bank: cmd.bank,
                config: cmd.config.resolve()?,
                image_ids: cmd.image_ids,
                n_variants: cmd.n_variants,
                out: cmd.out,
            })?;
            for it in items {
                println!("{} v{} {} (entry {}) -> {}", it.image_id, it.variant, it.category, it.entry_id, it.path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
