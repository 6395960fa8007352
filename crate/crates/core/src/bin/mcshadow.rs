use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mcshadow::harness::{
    annotation_cdd, auto_annotate, evaluate, load_annotation, run_refine_batch, BatchOptions,
    DatasetManifest, EvalOptions, ImageRecord, MASK_THRESHOLD,
};
use mcshadow::imagery::{load_image, load_labelmap, load_mask, save_image, LabelMap};
use mcshadow::mc_edges::{render_visualization, sample_regions, SampleManifest, SamplerConfig};
use mcshadow::metrics::{LossWeights, DEFAULT_BINS, REPORT_SCALE};
use mcshadow::morphology::StructuringElement;
use mcshadow::refine::{optimize, synth_shadow, ParamMode, RefineConfig, Variant};

#[derive(Debug, Parser)]
#[command(
    version,
    about = "Shadow-removal refinement from material-consistent shadow edges"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select material-consistent shadow edges and sample pixels and patches.
    ExtractEdges(ExtractArgs),
    /// Refine one image by fitting a relighting model to its edges.
    Refine(RefineArgs),
    /// Print the CDD (x1000) of annotated pixels.
    Cdd(CddArgs),
    /// Evaluate, or refine and evaluate, every entry of a manifest.
    Bench(BenchArgs),
    /// Cast a synthetic shadow.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    segmentation: PathBuf,
    #[arg(long, default_value_t = 500)]
    min_area: usize,
    #[arg(long, default_value_t = 20)]
    tau_band: usize,
    #[arg(long, default_value_t = 1)]
    band_radius: usize,
    #[arg(long, default_value_t = 2)]
    band_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_viz: PathBuf,
    #[arg(long)]
    out_json: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Global,
    PerRegion,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    PerMask,
    Pixels,
    PixelsAndPatches,
}

#[derive(Debug, Args)]
struct RefineArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(
        long,
        conflicts_with = "fallback_single_segment",
        required_unless_present = "fallback_single_segment"
    )]
    segmentation: Option<PathBuf>,
    /// Treat the whole frame as one segment (uses every shadow edge).
    #[arg(long)]
    fallback_single_segment: bool,
    #[command(flatten)]
    opts: RefineOpts,
    #[arg(long)]
    out: PathBuf,
    /// Per-image JSON record (parameters, loss trace, CDD).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RefineOpts {
    #[arg(long, value_enum, default_value_t = ModeArg::Global)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = VariantArg::PixelsAndPatches)]
    variant: VariantArg,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, default_value_t = 1e-3)]
    fd_step: f64,
    /// Loss weights as `distance,distribution,texture,nonshadow`.
    #[arg(long, default_value = "1,1,0.1,10")]
    weights: LossWeights,
    /// Penumbra ramp width in pixels.
    #[arg(long, default_value_t = 0.0)]
    blend: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RefineOpts {
    fn config(&self) -> RefineConfig {
        RefineConfig {
            max_iters: self.iters,
            step: self.step,
            fd_step: self.fd_step,
            blend_width: self.blend,
            weights: self.weights,
            mode: match self.mode {
                ModeArg::Global => ParamMode::Global,
                ModeArg::PerRegion => ParamMode::PerRegion,
            },
            variant: match self.variant {
                VariantArg::PerMask => Variant::PerMask,
                VariantArg::Pixels => Variant::Pixels,
                VariantArg::PixelsAndPatches => Variant::PixelsAndPatches,
            },
            rng_seed: self.seed,
            ..RefineConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct CddArgs {
    #[arg(long)]
    image: PathBuf,
    /// JSON coordinates or a red/green PNG overlay.
    #[arg(long)]
    annotation: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Refine each entry before scoring it.
    #[arg(long)]
    refine: bool,
    /// Where refined images and per-image records go (required with --refine).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Report path; `.csv` writes the per-entry table, anything else JSON.
    /// Without it the JSON report goes to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Treat the whole frame as one segment for entries without a label map.
    #[arg(long)]
    fallback_single_segment: bool,
    #[command(flatten)]
    opts: RefineOpts,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Per-channel darkening scale in (0, 1]; one value or three.
    #[arg(long, value_parser = parse_triple)]
    w: [f64; 3],
    /// Per-channel offset; one value or three.
    #[arg(long, value_parser = parse_triple, default_value = "0")]
    b: [f64; 3],
    #[arg(long, default_value_t = 0.0)]
    penumbra: f64,
    /// Standard deviation of Gaussian pixel noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    match values[..] {
        [v] => Ok([v; 3]),
        [r, g, b] => Ok([r, g, b]),
        _ => Err(format!(
            "expected 1 or 3 comma-separated values, got {}",
            values.len()
        )),
    }
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_labels(path: &Path) -> Result<LabelMap> {
    let load =
        load_labelmap(path).with_context(|| format!("loading segmentation {}", path.display()))?;
    if let Some(w) = load.warning {
        eprintln!("warning: {w}");
    }
    Ok(load.labels)
}

fn extract_edges(args: ExtractArgs) -> Result<()> {
    let image = load_image(&args.image)?;
    let shadow = load_mask(&args.mask, MASK_THRESHOLD)?;
    let labels = load_labels(&args.segmentation)?;
    let cfg = SamplerConfig {
        band_se: StructuringElement::new(args.band_radius, args.band_iters)?,
        min_region_area: args.min_area,
        tau_band: args.tau_band,
        rng_seed: args.seed,
        ..SamplerConfig::default()
    };
    let samples = sample_regions(&image, &labels, &shadow, &cfg)?;
    if samples.regions.is_empty() {
        eprintln!("warning: no material-consistent shadow edge found");
    }
    render_visualization(&image, &samples.sets)
        .save(&args.out_viz)
        .with_context(|| format!("writing {}", args.out_viz.display()))?;
    let manifest = SampleManifest::new(image.dims(), &cfg, &samples);
    write_json(&args.out_json, &serde_json::to_string_pretty(&manifest)?)?;
    println!(
        "{} region(s): {}",
        samples.regions.len(),
        samples
            .regions
            .iter()
            .map(|r| r.segment_id.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn refine(args: RefineArgs) -> Result<()> {
    let image = load_image(&args.image)?;
    let shadow = load_mask(&args.mask, MASK_THRESHOLD)?;
    let labels = match &args.segmentation {
        Some(p) => load_labels(p)?,
        None => {
            eprintln!("warning: single-segment fallback: supervision comes from every shadow edge");
            LabelMap::single_segment(image.height(), image.width())?
        }
    };
    let cfg = args.opts.config();
    let result = optimize(&image, &shadow, &labels, &cfg)?;
    save_image(&result.output, &args.out)?;
    println!(
        "cdd {:.4} -> {:.4} (x{REPORT_SCALE}) in {} iterations",
        result.cdd_before * REPORT_SCALE,
        result.cdd_after * REPORT_SCALE,
        result.iterations_run
    );
    if let Some(path) = &args.report {
        let annotation = auto_annotate(&shadow, StructuringElement::default())?;
        let before = annotation_cdd(&image, &annotation, cfg.bins)? * REPORT_SCALE;
        let after = annotation_cdd(&result.output, &annotation, cfg.bins)? * REPORT_SCALE;
        let id = args
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let record =
            ImageRecord::refined(&id, &result, before, after, args.fallback_single_segment);
        write_json(path, &record.to_json())?;
    }
    Ok(())
}

fn cdd(args: CddArgs) -> Result<()> {
    let image = load_image(&args.image)?;
    let annotation = load_annotation(&args.annotation)?;
    println!(
        "{}",
        annotation_cdd(&image, &annotation, args.bins)? * REPORT_SCALE
    );
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let eval = EvalOptions {
        bins: args.bins,
        ..EvalOptions::default()
    };
    let report = if args.refine {
        let Some(out_dir) = args.out_dir.clone() else {
            bail!("--refine needs --out-dir");
        };
        run_refine_batch(
            &manifest,
            &BatchOptions {
                refine: RefineConfig {
                    bins: args.bins,
                    ..args.opts.config()
                },
                eval,
                fallback_single_segment: args.fallback_single_segment,
                out_dir,
            },
        )?
    } else {
        evaluate(&manifest, &eval)?
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for e in report.entries.iter().filter(|e| e.message.is_some()) {
        eprintln!("{}: {}", e.id, e.message.as_deref().unwrap_or_default());
    }
    match &args.report {
        Some(path) => report.save(path)?,
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let image = load_image(&args.image)?;
    let mask = load_mask(&args.mask, MASK_THRESHOLD)?;
    let out = synth_shadow(
        &image,
        &mask,
        args.w,
        args.b,
        args.penumbra,
        args.noise,
        args.seed,
    )?;
    save_image(&out, &args.out)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::ExtractEdges(a) => extract_edges(a),
        Command::Refine(a) => refine(a),
        Command::Cdd(a) => cdd(a),
        Command::Bench(a) => bench(a),
        Command::Synth(a) => synth(a),
    }
}
