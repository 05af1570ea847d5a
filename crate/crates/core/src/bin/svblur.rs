use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use svblur::descriptor::{assemble_conditioning, build_descriptor_field, fit_pca, PcaBasis};
use svblur::forward::{apply_forward, apply_forward_linear, sample_degradation_field, DegradationField, MaskSource};
use svblur::image::ImageTensor;
use svblur::kernels::{
    delta_kernel, gen_defocus_kernel, gen_motion_kernel, kernel_library, DefocusParams, Kernel,
    KernelSamplingConfig, UniformRange,
};
use svblur::masks::{load_segmentation, soften, synth_segmentation, DEFAULT_SMOOTH_SIGMA};
use svblur::metrics::MetricReport;
use svblur::pipeline::{init_thread_pool_from_env, synth_dataset, validate_manifest, SynthesisConfig};
use svblur::seed::rng_from_seed;
use svblur::solver::{cg_deconvolve, Regularizer, SolverConfig};
use svblur::{Error, Result};

#[derive(Parser)]
#[command(name = "svblur", version, about = "Spatially varying blur synthesis and deconvolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Point spread functions.
    #[command(subcommand)]
    Kernel(KernelCmd),
    /// Segmentation maps and soft region masks.
    #[command(subcommand)]
    Mask(MaskCmd),
    /// Degradation fields.
    #[command(subcommand)]
    Field(FieldCmd),
    /// Blur an image with a stored degradation field.
    Degrade(DegradeArgs),
    /// Kernel PCA bases.
    #[command(subcommand)]
    Pca(PcaCmd),
    /// Descriptor fields and conditioning tensors.
    #[command(subcommand)]
    Descriptor(DescriptorCmd),
    /// Tikhonov deconvolution with a known field.
    Deconv(DeconvArgs),
    /// PSNR and SSIM of a test image against a reference.
    Eval(EvalArgs),
    /// Synthesize a dataset from a TOML config.
    Synth(SynthArgs),
    /// Re-check every record listed in a manifest.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelType {
    Motion,
    Defocus,
    Delta,
}

#[derive(Subcommand)]
enum KernelCmd {
    Gen(KernelGenArgs),
}

#[derive(Args)]
struct KernelGenArgs {
    #[arg(long = "type", value_enum)]
    kind: KernelType,
    #[arg(long, default_value_t = 33)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Motion path length in pixels (sampled when omitted).
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    anxiety: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    exposure: Option<f64>,
    /// Initial motion direction in radians (random when omitted).
    #[arg(long)]
    direction: Option<f64>,
    #[arg(long)]
    sigma_x: Option<f64>,
    #[arg(long)]
    sigma_y: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
}

#[derive(Subcommand)]
enum MaskCmd {
    /// Soft masks from a label PNG.
    Soften {
        #[arg(long)]
        seg: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SMOOTH_SIGMA)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random Voronoi segmentation. A `.png` output stores the labels,
    /// anything else stores softened masks.
    Synth {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        regions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SMOOTH_SIGMA)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FieldCmd {
    /// Sample masks, kernels and a noise level.
    Sample(FieldSampleArgs),
}

#[derive(Args)]
struct FieldSampleArgs {
    #[arg(long, default_value_t = 512)]
    height: usize,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    min_regions: usize,
    #[arg(long, default_value_t = 6)]
    max_regions: usize,
    /// Use a label PNG instead of a synthetic partition.
    #[arg(long)]
    seg: Option<PathBuf>,
    #[arg(long, default_value_t = 33)]
    size: usize,
    #[arg(long, default_value_t = DEFAULT_SMOOTH_SIGMA)]
    smooth_sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    noise_min: f64,
    #[arg(long, default_value_t = 0.25)]
    noise_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    field: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_blurred: PathBuf,
    /// Noise-free blur.
    #[arg(long)]
    out_linear: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PcaCmd {
    Fit(PcaFitArgs),
}

#[derive(Args)]
struct PcaFitArgs {
    /// Directory of `.svbk` kernels.
    #[arg(long, conflicts_with = "synth_count", required_unless_present = "synth_count")]
    kernels: Option<PathBuf>,
    /// Generate a library of this many kernels (half motion, half defocus).
    #[arg(long)]
    synth_count: Option<usize>,
    #[arg(long, default_value_t = 33)]
    size: usize,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum DescriptorCmd {
    Build {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the conditioning tensor built from this blurred image.
        #[arg(long, requires = "conditioning")]
        blurred: Option<PathBuf>,
        #[arg(long, requires = "blurred")]
        conditioning: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RegArg {
    Identity,
    Gradient,
}

#[derive(Args)]
struct DeconvArgs {
    #[arg(long)]
    blurred: PathBuf,
    #[arg(long)]
    field: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, value_enum, default_value_t = RegArg::Gradient)]
    reg: RegArg,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    std::fs::write(path, text + "\n").map_err(|e| Error::Io { path: path.into(), source: e })
}

fn kernel_gen(a: &KernelGenArgs) -> Result<()> {
    let mut rng = rng_from_seed(a.seed);
    let defaults = KernelSamplingConfig::default();
    let kernel = match a.kind {
        KernelType::Delta => delta_kernel(a.size)?,
        KernelType::Motion => {
            let mut p = defaults.sample_motion_params(&mut rng, a.size);
            p.trajectory_length = a.length.unwrap_or(p.trajectory_length);
            p.anxiety = a.anxiety.unwrap_or(p.anxiety);
            p.num_samples = a.samples.unwrap_or(p.num_samples);
            p.exposure_fraction = a.exposure.unwrap_or(p.exposure_fraction);
            p.initial_direction = a.direction;
            gen_motion_kernel(&mut rng, a.size, &p)?
        }
        KernelType::Defocus => {
            let mut p = defaults.sample_defocus_params(&mut rng);
            p = DefocusParams {
                sigma_x: a.sigma_x.unwrap_or(p.sigma_x),
                sigma_y: a.sigma_y.unwrap_or(p.sigma_y),
                theta: a.theta.unwrap_or(p.theta),
            };
            gen_defocus_kernel(a.size, &p)?
        }
    };
    kernel.save(&a.out)
}

fn mask(cmd: &MaskCmd) -> Result<()> {
    match cmd {
        MaskCmd::Soften { seg, sigma, out } => soften(&load_segmentation(seg)?, *sigma)?.save(out),
        MaskCmd::Synth { height, width, regions, seed, sigma, out } => {
            let seg = synth_segmentation(&mut rng_from_seed(*seed), *height, *width, *regions)?;
            if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                seg.save_png(out)
            } else {
                soften(&seg, *sigma)?.save(out)
            }
        }
    }
}

fn field_sample(a: &FieldSampleArgs) -> Result<()> {
    let seg = a.seg.as_ref().map(load_segmentation).transpose()?;
    let source = match &seg {
        Some(s) => MaskSource::Segmentation(s),
        None => MaskSource::Synthetic {
            height: a.height,
            width: a.width,
            min_regions: a.min_regions,
            max_regions: a.max_regions,
        },
    };
    let field = sample_degradation_field(
        &mut rng_from_seed(a.seed),
        &source,
        a.smooth_sigma,
        a.size,
        &KernelSamplingConfig::default(),
        &UniformRange::new(a.noise_min, a.noise_max),
    )?;
    field.save(&a.out)
}

fn degrade(a: &DegradeArgs) -> Result<()> {
    let x = ImageTensor::load(&a.image)?;
    let field = DegradationField::load(&a.field)?;
    field.check()?;
    let y = apply_forward(&x, &field, &mut rng_from_seed(a.seed))?;
    y.save(&a.out_blurred)?;
    if let Some(p) = &a.out_linear {
        apply_forward_linear(&x, &field)?.save(p)?;
    }
    Ok(())
}

fn pca_fit(a: &PcaFitArgs) -> Result<()> {
    let kernels = match (&a.kernels, a.synth_count) {
        (Some(dir), _) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::Io { path: dir.clone(), source: e })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "svbk"))
                .collect();
            paths.sort();
            paths.iter().map(Kernel::load).collect::<Result<Vec<_>>>()?
        }
        (None, Some(n)) => kernel_library(a.seed, a.size, n / 2, n - n / 2, &KernelSamplingConfig::default())?,
        (None, None) => unreachable!("clap requires one source"),
    };
    let basis = fit_pca(&kernels, a.dim)?;
    basis.save(&a.out)
}

fn descriptor(cmd: &DescriptorCmd) -> Result<()> {
    let DescriptorCmd::Build { field, basis, out, blurred, conditioning } = cmd;
    let field = DegradationField::load(field)?;
    let basis = PcaBasis::load(basis)?;
    let d = build_descriptor_field(&field, &basis)?;
    d.save(out)?;
    if let (Some(b), Some(c)) = (blurred, conditioning) {
        assemble_conditioning(&ImageTensor::load(b)?, &d)?.save(c)?;
    }
    Ok(())
}

fn deconv(a: &DeconvArgs) -> Result<()> {
    let y = ImageTensor::load(&a.blurred)?;
    let field = DegradationField::load(&a.field)?;
    field.check()?;
    let cfg = SolverConfig {
        lambda: a.lambda,
        max_iters: a.iters,
        tol: a.tol,
        regularizer: match a.reg {
            RegArg::Identity => Regularizer::Identity,
            RegArg::Gradient => Regularizer::Gradient,
        },
    };
    let (x, report) = cg_deconvolve(&y, &field, &cfg)?;
    x.save(&a.out)?;
    log::info!("{} iterations, converged: {}", report.iterations_used, report.converged);
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let r = ImageTensor::load(&a.reference)?;
    let t = ImageTensor::load(&a.test)?;
    let report = MetricReport::compute(&r, &t)?;
    println!("{}", serde_json::to_string(&report).expect("serializable"));
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = SynthesisConfig::load(&a.config)?;
    if let Some(w) = a.workers {
        cfg.worker_count = w;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    let summary = synth_dataset(&cfg)?;
    println!(
        "{} records written, {} skipped; manifest {}",
        summary.records.len(),
        summary.skipped.len(),
        summary.manifest_path.display()
    );
    for s in &summary.skipped {
        eprintln!("skipped {}: {}", s.source, s.reason);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Kernel(KernelCmd::Gen(a)) => kernel_gen(a)?,
        Command::Mask(cmd) => mask(cmd)?,
        Command::Field(FieldCmd::Sample(a)) => field_sample(a)?,
        Command::Degrade(a) => degrade(a)?,
        Command::Pca(PcaCmd::Fit(a)) => pca_fit(a)?,
        Command::Descriptor(cmd) => descriptor(cmd)?,
        Command::Deconv(a) => deconv(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Synth(a) => synth(a)?,
        Command::Validate { manifest } => {
            let report = validate_manifest(manifest)?;
            for r in &report.records {
                if r.passed {
                    println!("PASS {}", r.id);
                } else {
                    println!("FAIL {}: {}", r.id, r.reasons.join("; "));
                }
            }
            if !report.all_passed() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = init_thread_pool_from_env() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
