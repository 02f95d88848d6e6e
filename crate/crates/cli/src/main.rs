//! `bpeq`: batch driver for the BPE pipeline and the reader study server.
//!
//! Exit status is 0 when every case succeeded, 1 when any case failed or a
//! run-time error stopped the command, and 2 for configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bpe_core::bpe::read_metrics_csv;
use bpe_core::phantom::{generate, PhantomSpec};
use bpe_core::pipeline::{
    read_labels_csv, read_scores_csv, recorded_failures, render_text, run_metrics, run_preprocess,
    run_report, run_segment, write_report, CaseLabel, CaseManifest, FcmOverrides, Layout,
    Manifest, Method, PipelineConfig, ReportInputs, Selection, StageReport,
};
use bpe_core::Error;

#[derive(Parser)]
#[command(name = "bpeq", version, about = "Breast MRI background parenchymal enhancement quantification")]
struct Cli {
    /// Case manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register, resample and record provenance for every case.
    Preprocess,
    /// Segment breast and FGT with one method under one operator label.
    Segment {
        #[arg(long)]
        method: Method,
        #[arg(long, default_value = "default")]
        operator: String,
    },
    /// Compute the BPE metrics of each segmentation into metrics.csv.
    Metrics {
        /// `method/operator` pairs to include (default: every mask set found).
        #[arg(long = "select")]
        select: Vec<Selection>,
    },
    /// Agreement and correlation report from metrics.csv.
    Report {
        /// Labels CSV (case_id, qualitative_bpe, density_category);
        /// taken from the manifest when omitted.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Reader score export CSV.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Serve the blinded reader study.
    ReaderServe {
        /// Study configuration (JSON); BPE_READER_* variables override it.
        #[arg(long)]
        study: PathBuf,
    },
    /// Write synthetic phantom cases and a manifest listing them.
    Phantom {
        /// Destination directory.
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Grid size as x,y,z.
        #[arg(long, value_delimiter = ',', default_values_t = [128, 128, 128])]
        dims: Vec<usize>,
        /// Enhancement of the first case, in percent; later cases add 10 each
        /// and enhance a growing share of their FGT.
        #[arg(long, default_value_t = 40.0)]
        enhancement: f32,
        #[arg(long, default_value_t = 5.0)]
        noise: f32,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidParameter(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<bpe_reader::ReaderError> for Failure {
    fn from(e: bpe_reader::ReaderError) -> Self {
        match e {
            bpe_reader::ReaderError::Config(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

/// An unreadable manifest or config is a configuration error too.
fn as_config(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

type Outcome = Result<bool, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(as_config)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    Ok(config)
}

fn layout(config: &PipelineConfig) -> Result<Layout, Failure> {
    config
        .out
        .as_ref()
        .map(Layout::new)
        .ok_or_else(|| Failure::Config("no output directory: pass --out or set `out` in the config".into()))
}

fn manifest(cli: &Cli) -> Result<Manifest, Failure> {
    let path = cli
        .manifest
        .as_ref()
        .ok_or_else(|| Failure::Config("this command needs --manifest".into()))?;
    Manifest::load(path).map_err(as_config)
}

fn summarise(r: &StageReport) -> bool {
    println!("{}: {} succeeded, {} failed", r.stage, r.succeeded.len(), r.failures.len());
    for f in &r.failures {
        eprintln!("  {}: {}", f.case_id, f.error);
    }
    r.all_ok()
}

fn open(path: &Path) -> Result<std::fs::File, Failure> {
    std::fs::File::open(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Preprocess => {
            let (m, config) = (manifest(&cli)?, load_config(&cli)?);
            Ok(summarise(&run_preprocess(&m, &config, &layout(&config)?)?))
        }
        Command::Segment { method, operator } => {
            let (m, config) = (manifest(&cli)?, load_config(&cli)?);
            Ok(summarise(&run_segment(&m, &config, &layout(&config)?, *method, operator)?))
        }
        Command::Metrics { select } => {
            let (m, config) = (manifest(&cli)?, load_config(&cli)?);
            Ok(summarise(&run_metrics(&m, &config, &layout(&config)?, select)?))
        }
        Command::Report { labels, scores } => report(&cli, labels.as_deref(), scores.as_deref()),
        Command::ReaderServe { study } => {
            let mut config = bpe_reader::StudyConfig::load(study)?;
            config.apply_env()?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
            rt.block_on(bpe_reader::serve(config))?;
            Ok(true)
        }
        Command::Phantom { dir, count, dims, enhancement, noise } => {
            let dims: [usize; 3] = dims
                .as_slice()
                .try_into()
                .map_err(|_| Failure::Config("--dims takes three values, x,y,z".into()))?;
            phantoms(dir, *count, dims, *enhancement, *noise, cli.seed.unwrap_or(0))
        }
    }
}

fn report(cli: &Cli, labels: Option<&Path>, scores: Option<&Path>) -> Outcome {
    let config = load_config(cli)?;
    config.validate()?;
    let layout = layout(&config)?;
    let labels = match labels {
        Some(p) => read_labels_csv(open(p)?)?,
        None => CaseLabel::from_manifest(&manifest(cli)?),
    };
    let scores = match scores {
        Some(p) => Some(read_scores_csv(open(p)?)?),
        None => None,
    };
    let report = run_report(ReportInputs {
        metrics: read_metrics_csv(open(&layout.metrics_csv())?)?,
        labels,
        scores,
        failures: recorded_failures(&layout)?,
        masks: Some(&layout),
        bootstrap: config.bootstrap(),
    })?;
    write_report(&layout, &report)?;
    print!("{}", render_text(&report));
    Ok(true)
}

fn phantoms(dir: &Path, count: usize, dims: [usize; 3], enhancement: f32, noise: f32, seed: u64) -> Outcome {
    if count == 0 {
        return Err(Failure::Config("--count must be at least 1".into()));
    }
    let mut cases = Vec::new();
    for i in 0..count {
        let id = format!("phantom-{:03}", i + 1);
        let p = generate(&PhantomSpec {
            dims,
            seed: seed.wrapping_add(i as u64),
            enhancement_pct: enhancement + 10.0 * i as f32,
            enhancing_fraction: 0.25 + 0.5 * i as f64 / count.saturating_sub(1).max(1) as f64,
            noise_sigma: noise,
            ..PhantomSpec::default()
        })?;
        p.write(&dir.join(&id))?;
        println!(
            "{id}: BPE volume {:.1} mm3, BPE/FGT {:.2}%",
            p.expected.bpe_volume_mm3,
            p.expected.bpe_fgt_ratio_pct.unwrap_or(f64::NAN)
        );
        cases.push(CaseManifest {
            case_id: id.clone(),
            s0: format!("{id}/s0.nii").into(),
            s1: format!("{id}/s1.nii").into(),
            qualitative_bpe: None,
            density_category: None,
            fcm: FcmOverrides::default(),
            operators: Default::default(),
        });
    }
    let manifest = Manifest::from_cases(cases, dir)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Runtime(e.to_string()))?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, json + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(true)
}
