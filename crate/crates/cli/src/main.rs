use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nfas_core::manifest::{Manifest, Modality, Params, SilhouetteSpace};
use nfas_core::pipeline::{parse_stage_filter, run_pipeline, validate_inputs, RunOptions, RunReport};
use nfas_core::synth::{write_workspace, WorkspaceSpec};
use nfas_core::Error;

#[derive(Parser, Debug)]
#[command(name = "nfas", version, about = "Depth-dynamics alignment and consistency pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Pipeline manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Treat warnings (degenerate trajectories, skipped folds, ...) as errors.
    #[arg(long, global = true)]
    strict: bool,
    /// Also write per-stimulus DMD spectra.
    #[arg(long, global = true)]
    emit_spectra: bool,
    /// Load tensors containing NaN/Inf as quarantined instead of rejecting them.
    #[arg(long, global = true)]
    allow_nonfinite: bool,
    /// z-score the SNCI maps jointly across modalities.
    #[arg(long, global = true)]
    joint_zscore: bool,
    /// Distance metric for PERMANOVA and silhouette (cosine, euclidean).
    #[arg(long, global = true)]
    metric: Option<String>,
    /// Compute the silhouette on raw alignment vectors or PCA coordinates.
    #[arg(long, global = true, value_parser = ["raw", "pca"])]
    silhouette_space: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run all stages (or the ones named by --stages).
    Pipeline {
        /// Comma-separated subset of dmd,hrf,encode,snci,stats.
        #[arg(long)]
        stages: Option<String>,
    },
    /// Stable depth-dynamics representation of every trajectory.
    Dmd,
    /// Stimulus design and HRF convolution of the z vectors.
    Hrf,
    /// Ridge encoding models and alignment vectors.
    Encode,
    /// Signal-to-noise consistency maps per modality.
    Snci,
    /// PCA, PERMANOVA, silhouette, network means and ANOVA.
    Stats,
    /// Write a synthetic workspace (trajectories, brain, atlas, manifest).
    Synth(SynthArgs),
    /// Check the manifest and every referenced file without computing.
    Validate,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON workspace spec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Comma-separated modalities.
    #[arg(long)]
    modalities: Option<String>,
    #[arg(long)]
    models_per_modality: Option<usize>,
    #[arg(long)]
    stimuli: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    rois: Option<usize>,
    #[arg(long)]
    brain_noise: Option<f64>,
    #[arg(long)]
    model_noise: Option<f64>,
    /// Permutations written into the manifest parameters.
    #[arg(long)]
    n_permutations: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Io { .. } => 4,
        Error::Csv(c) if c.is_io_error() => 4,
        Error::Strict(_)
        | Error::DegenerateTrajectory { .. }
        | Error::ZeroDynamics { .. }
        | Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn need<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Error> {
    v.as_deref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required for this command")))
}

fn run_stages(g: &Global, stages: Vec<String>) -> Result<RunReport, Error> {
    let loaded = Manifest::load(need(&g.manifest, "manifest")?)?;
    let mut params = loaded.manifest.params.clone();
    params.joint_zscore |= g.joint_zscore;
    if let Some(m) = &g.metric {
        params.distance_metric = m.clone();
    }
    match g.silhouette_space.as_deref() {
        Some("raw") => params.silhouette_space = SilhouetteSpace::Raw,
        Some("pca") => params.silhouette_space = SilhouetteSpace::Pca,
        _ => {}
    }
    let loaded = loaded.with_params(params)?;
    let out = need(&g.out, "out")?;
    let opts = RunOptions {
        stages,
        seed: g.seed,
        strict: g.strict,
        emit_spectra: g.emit_spectra,
        allow_nonfinite: g.allow_nonfinite,
    };
    run_pipeline(&loaded, out, &opts)
}

fn print_report(report: &RunReport, out: &Path) {
    println!(
        "stages {} done: {} files, {} warnings; report at {}",
        report.stages.join(","),
        report.inventory.len(),
        report.warnings.len(),
        out.join(nfas_core::pipeline::REPORT_FILE).display()
    );
}

fn synth(g: &Global, a: &SynthArgs) -> Result<(), Error> {
    let out = need(&g.out, "out")?;
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text)?
        }
        None => WorkspaceSpec::default(),
    };
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    if let Some(m) = &a.modalities {
        spec.modalities = m
            .split(',')
            .map(|s| s.trim().parse::<Modality>())
            .collect::<Result<_, _>>()?;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { spec.$f = v; })* };
    }
    set!(models_per_modality, stimuli, layers, dim, rois, brain_noise, model_noise);
    let mut params = Params::default();
    if let Some(n) = a.n_permutations {
        params.n_permutations = n;
    }
    let ws = write_workspace(&spec, out, params)?;
    println!(
        "wrote {} files; manifest at {}",
        ws.files.len(),
        ws.manifest_path.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let g = &cli.global;
    let single = |stage: &str| -> Result<(), Error> {
        let report = run_stages(g, vec![stage.to_string()])?;
        print_report(&report, need(&g.out, "out")?);
        Ok(())
    };
    match &cli.command {
        Command::Pipeline { stages } => {
            let stages = match stages {
                Some(s) => parse_stage_filter(s)?,
                None => Vec::new(),
            };
            let report = run_stages(g, stages)?;
            print_report(&report, need(&g.out, "out")?);
            Ok(())
        }
        Command::Dmd => single("dmd"),
        Command::Hrf => single("hrf"),
        Command::Encode => single("encode"),
        Command::Snci => single("snci"),
        Command::Stats => single("stats"),
        Command::Synth(a) => synth(g, a),
        Command::Validate => {
            let loaded = Manifest::load(need(&g.manifest, "manifest")?)?;
            let summary = validate_inputs(&loaded, g.allow_nonfinite)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
