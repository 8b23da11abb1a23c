use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use specphen_core::pipeline::{self, config, PipelineConfig, RunOutcome, Stage};

#[derive(Parser)]
#[command(name = "specphen", version, about = "Spectral phenotyping of annual panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write the full artifact set.
    Run(StageArgs),
    /// Write a synthetic panel, grid polygons and canonical names.
    Synth(SynthArgs),
    /// Periodograms and band powers.
    Spectral(StageArgs),
    /// Bispectral intensity per unit.
    Bispec(StageArgs),
    /// Breakpoint fits and per-cluster summaries.
    Breaks(StageArgs),
    /// k-means phenotypes with diagnostics.
    Cluster(StageArgs),
    /// Moran's I permutation tests.
    Moran(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Panel CSV (input.panel).
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Polygon GeoJSON (input.polygons).
    #[arg(long)]
    polygons: Option<PathBuf>,
    /// Canonical name list (input.canonical_names).
    #[arg(long)]
    names: Option<PathBuf>,
    /// Seed for both k-means and the permutation tests.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of clusters (clustering.k).
    #[arg(long)]
    k: Option<usize>,
    /// Minimum segment length (breaks.h).
    #[arg(long)]
    h: Option<usize>,
    /// Moran permutations (spatial.permutations).
    #[arg(long)]
    permutations: Option<usize>,
    /// Any configuration key, e.g. `--set spectral.taper=0.2`. Repeatable;
    /// applied after the other flags.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_pair)]
    set: Vec<(String, String)>,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML spec file (kind, seed, n_years, n_units and kind parameters).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Generator kind.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    years: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Kind parameter override, e.g. `--set noise_sd=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_pair)]
    set: Vec<(String, String)>,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    if k.trim().is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn path_value(p: &std::path::Path) -> String {
    config::toml_string(&p.to_string_lossy())
}

impl StageArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        let mut push = |k: &str, v: String| o.push((k.to_string(), v));
        if let Some(p) = &self.out {
            push("output.dir", path_value(p));
        }
        if let Some(p) = &self.panel {
            push("input.panel", path_value(p));
        }
        if let Some(p) = &self.polygons {
            push("input.polygons", path_value(p));
        }
        if let Some(p) = &self.names {
            push("input.canonical_names", path_value(p));
        }
        if let Some(s) = self.seed {
            push("clustering.seed", s.to_string());
            push("spatial.seed", s.to_string());
        }
        if let Some(k) = self.k {
            push("clustering.k", k.to_string());
        }
        if let Some(h) = self.h {
            push("breaks.h", h.to_string());
        }
        if let Some(n) = self.permutations {
            push("spatial.permutations", n.to_string());
        }
        o.extend(self.set.iter().cloned());
        o
    }

    fn load(&self) -> anyhow::Result<PipelineConfig> {
        Ok(PipelineConfig::load(self.config.as_deref(), &self.overrides())?)
    }
}

fn report(outcome: &RunOutcome, dir: &std::path::Path) {
    for w in &outcome.analysis.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "wrote {} artifacts and {} to {}",
        outcome.manifest.artifacts.len(),
        pipeline::MANIFEST_FILE,
        dir.display()
    );
}

fn stage_command(args: &StageArgs, stage: Option<Stage>) -> anyhow::Result<()> {
    let cfg = args.load()?;
    let outcome = match stage {
        None => pipeline::run_pipeline(&cfg)?,
        Some(s) => pipeline::run_stage(&cfg, s)?,
    };
    report(&outcome, &cfg.output.dir);
    Ok(())
}

fn synth_command(args: &SynthArgs) -> anyhow::Result<()> {
    let text = match &args.spec {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?),
        None => None,
    };
    let mut o = Vec::new();
    if let Some(k) = &args.kind {
        o.push(("kind".to_string(), config::toml_string(k)));
    }
    for (key, v) in [("seed", args.seed.map(|s| s as usize)), ("n_units", args.units), ("n_years", args.years)] {
        if let Some(v) = v {
            o.push((key.to_string(), v.to_string()));
        }
    }
    o.extend(args.set.iter().cloned());
    let spec = config::synth_spec(text.as_deref(), &o)?;
    if spec.n_units == 0 {
        bail!("n_units must be positive");
    }
    let files = pipeline::write_synthetic_inputs(&spec, &args.out)?;
    println!(
        "{} panel ({} units × {} years) written to {}, {}, {}",
        spec.kind.name(),
        spec.n_units,
        spec.n_years,
        files.panel.display(),
        files.polygons.display(),
        files.names.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => stage_command(a, None),
        Command::Synth(a) => synth_command(a),
        Command::Spectral(a) => stage_command(a, Some(Stage::Spectral)),
        Command::Bispec(a) => stage_command(a, Some(Stage::Bispectral)),
        Command::Breaks(a) => stage_command(a, Some(Stage::Breaks)),
        Command::Cluster(a) => stage_command(a, Some(Stage::Clustering)),
        Command::Moran(a) => stage_command(a, Some(Stage::Spatial)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
