use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lesionforge::imaging::io::write;
use lesionforge::pipeline::{run_grid, ContentMode, Manifest, ManifestEntry, Pipeline, RunConfig, Stage};
use lesionforge::synth::{synth_corpus, SynthParams};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "lesionforge", version, about = "Guided style registration, CP features and ABCD descriptors for lesion images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// CSV with columns id,path,label[,mask].
    #[arg(long)]
    manifest: PathBuf,
    /// JSON or TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for reports and the resolved config.
    #[arg(long, default_value = "lesionforge-run")]
    out: PathBuf,
    /// Small images, tiny network, short transfers.
    #[arg(long)]
    test_mode: bool,
    /// Build one content image from every manifest image instead of one per training fold.
    #[arg(long)]
    content_global: bool,
    /// Allow grid and layer values outside the standard table.
    #[arg(long)]
    allow_custom: bool,
    #[arg(long)]
    hair_threshold: Option<f64>,
    #[arg(long)]
    sog_p: Option<f64>,
    /// Comma-separated CP ranks.
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the manifest and config without running anything.
    Validate(Common),
    /// Resize, median filter, hair removal and color normalization.
    Preprocess(Common),
    /// Lesion masks from the manifest or Otsu thresholding.
    Segment(Common),
    /// Mean content image per training fold (or one global image).
    ContentImage(Common),
    /// Guided style transfer of every lesion onto the content image.
    Transfer(Common),
    /// ABCD descriptors.
    Features(Common),
    /// CP models per fold and rank, and test-set projections.
    Decompose(Common),
    /// Cross-validated classifier grid over each feature set.
    Classify(Common),
    /// Metric tables, feature table, loadings and cluster rankings.
    Report(Common),
    /// Every stage listed in the config.
    Run(Common),
    /// Transfer-parameter grid with per-cell and per-axis summaries.
    Grid(Common),
    /// Write a synthetic labelled corpus and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Leave the mask column out so masks come from Otsu thresholding.
        #[arg(long)]
        no_masks: bool,
    },
}

fn load(c: &Common) -> Result<(Manifest, RunConfig)> {
    let manifest = Manifest::read(&c.manifest)?;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if c.test_mode {
        cfg.apply_test_mode();
    }
    if c.content_global {
        cfg.content_mode = ContentMode::Global;
    }
    if c.allow_custom {
        cfg.allow_custom = true;
    }
    if let Some(t) = c.hair_threshold {
        cfg.preprocess.hair_threshold = t;
    }
    if let Some(p) = c.sog_p {
        cfg.preprocess.sog_p = p;
    }
    if let Some(r) = &c.ranks {
        cfg.ranks = r.clone();
    }
    if let Ok(dir) = std::env::var("LESIONFORGE_CACHE") {
        if !dir.is_empty() {
            cfg.cache_dir = PathBuf::from(dir);
        }
    }
    Ok((manifest, cfg))
}

fn run_stage(c: &Common, stages: Option<&[Stage]>) -> Result<()> {
    let (manifest, cfg) = load(c)?;
    let mut p = Pipeline::new(manifest, cfg, &c.out)?;
    match stages {
        Some(s) => p.execute(s)?,
        None => p.run()?,
    }
    for (stage, s) in p.stats() {
        if s.hits + s.computed > 0 {
            println!("{:<14} computed {:>5}  cached {:>5}", stage.name(), s.computed, s.hits);
        }
    }
    if p.config().stages.contains(&Stage::Report) && stages.is_none_or(|s| s.contains(&Stage::Report)) {
        print!("{}", std::fs::read_to_string(c.out.join("report.txt")).context("reading report.txt")?);
    }
    Ok(())
}

fn synth(out: &PathBuf, count: usize, seed: u64, size: usize, no_masks: bool) -> Result<()> {
    if count < 2 {
        bail!("--count must be at least 2");
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let corpus = synth_corpus(count, seed, &SynthParams { size, ..SynthParams::default() })?;
    let mut entries = Vec::with_capacity(count);
    for (i, lesion) in corpus.iter().enumerate() {
        let id = format!("synth_{i:04}");
        let path = out.join(format!("{id}.png"));
        write(&lesion.image, &path)?;
        let mask = if no_masks {
            None
        } else {
            let m = out.join(format!("{id}_mask.png"));
            lesion.mask.write(&m)?;
            Some(m)
        };
        entries.push(ManifestEntry { id, path, label: lesion.label, mask });
    }
    let manifest = out.join("manifest.csv");
    Manifest { entries }.write(&manifest)?;
    println!("wrote {count} images and {}", manifest.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Validate(c) => {
            let (manifest, cfg) = load(c)?;
            manifest.validate()?;
            cfg.validate()?;
            let labels = manifest.labels();
            let pos = labels.iter().filter(|&&l| l == 1).count();
            println!(
                "ok: {} images ({} malignant, {} benign), {} CP ranks, {} classifiers, {} grid cells",
                labels.len(),
                pos,
                labels.len() - pos,
                cfg.ranks.len(),
                cfg.classifiers.len(),
                cfg.grid.cells().len()
            );
            Ok(())
        }
        Command::Preprocess(c) => run_stage(c, Some(&[Stage::Preprocess])),
        Command::Segment(c) => run_stage(c, Some(&[Stage::Segment])),
        Command::ContentImage(c) => run_stage(c, Some(&[Stage::ContentImage])),
        Command::Transfer(c) => run_stage(c, Some(&[Stage::Transfer])),
        Command::Features(c) => run_stage(c, Some(&[Stage::Features])),
        Command::Decompose(c) => run_stage(c, Some(&[Stage::Decompose])),
        Command::Classify(c) => run_stage(c, Some(&[Stage::Classify])),
        Command::Report(c) => run_stage(c, Some(&[Stage::Report])),
        Command::Run(c) => run_stage(c, None),
        Command::Grid(c) => {
            let (manifest, cfg) = load(c)?;
            let s = run_grid(&manifest, &cfg, &c.out)?;
            println!("{} cells: {} and {}", s.cells, s.cells_csv.display(), s.marginals_csv.display());
            Ok(())
        }
        Command::Synth { out, count, seed, size, no_masks } => synth(out, *count, *seed, *size, *no_masks),
    }
}
