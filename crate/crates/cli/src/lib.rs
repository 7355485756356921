//! Command-line front end: argument parsing, configuration and the five
//! subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use spatialfdr_core::baselines::{bh, local_fdr, qvalue};
use spatialfdr_core::lis::deepfdr_pipeline;
use spatialfdr_core::sim::{compute_metrics, run_replications, LabelDesign, Method, RunOptions, SimSetting};
use spatialfdr_core::volume::{load_volume_as, save_volume};
use spatialfdr_core::wnet::{padded_dims_for, WnetConfig};
use spatialfdr_core::{Error, TestOutcome, VolumeKind};

#[derive(Parser)]
#[command(name = "spatialfdr", version, about = "Spatial FDR control for 3D maps of test statistics")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replications run in parallel.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Nominal FDR level.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Use the (64,128,256) channel widths.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Record wall times in benchmark CSVs.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a label cube and mixture statistics.
    Simulate(SimulateArgs),
    /// Run the W-net pipeline on a statistic/p-value pair.
    Deepfdr(DeepfdrArgs),
    /// Run a classic FDR procedure.
    Baseline(BaselineArgs),
    /// Replication study from a configuration file.
    Bench,
    /// Confusion metrics of a rejection volume against the truth.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Grid size as nx,ny,nz.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<[usize; 3]>,
    #[arg(long)]
    p1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mu1: Option<f64>,
    #[arg(long)]
    sigma1sq: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum)]
    design: Option<DesignArg>,
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[usize; 3]>::try_from(parts).map_err(|p| format!("expected nx,ny,nz, got {} values", p.len()))
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Blobs,
    Iid,
}

#[derive(Args)]
struct DeepfdrArgs {
    /// Statistic volume.
    #[arg(long)]
    x: PathBuf,
    /// P-value volume.
    #[arg(long)]
    p: PathBuf,
    /// Also write the trained parameters.
    #[arg(long)]
    save_model: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMethod {
    Bh,
    Qvalue,
    Localfdr,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: BaselineMethod,
    /// P-value volume (bh, qvalue).
    #[arg(long)]
    p: Option<PathBuf>,
    /// Statistic volume (localfdr).
    #[arg(long)]
    x: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    rejections: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

/// Contents of `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    alpha: Option<f64>,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
    timing: Option<bool>,
    methods: Option<Vec<Method>>,
    settings: Option<Vec<SimSetting>>,
    wnet: Option<WnetConfig>,
}

/// Failure with its exit code: 2 for usage and validation, 1 otherwise.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

fn is_validation(e: &Error) -> bool {
    match e {
        Error::Stage { source, .. } => is_validation(source),
        Error::Io { .. } | Error::Diverged { .. } | Error::UninitializedStats | Error::Untrained | Error::Degenerate(_) => {
            false
        }
        _ => true,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if is_validation(&e) { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

/// Resolved settings shared by all commands.
struct Context {
    alpha: f64,
    seed: Option<u64>,
    workers: usize,
    out: PathBuf,
    timing: bool,
    paper_scale: bool,
    config: RunConfig,
}

impl Context {
    fn new(global: Global) -> Outcome<Self> {
        let config = match &global.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        let alpha = global.alpha.or(config.alpha).unwrap_or(0.1);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Failure::usage(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let workers = global.workers.or(config.workers).unwrap_or(1);
        if workers == 0 {
            return Err(Failure::usage("workers must be positive"));
        }
        Ok(Self {
            alpha,
            seed: global.seed.or(config.seed),
            workers,
            out: global.out.or(config.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
            timing: global.timing || config.timing.unwrap_or(false),
            paper_scale: global.paper_scale,
            config,
        })
    }

    /// W-net configuration for a volume of `dims`. Without an explicit
    /// configuration the padded grid is derived from the data.
    fn wnet(&self, dims: [usize; 3]) -> WnetConfig {
        let mut cfg = match &self.config.wnet {
            Some(c) => c.clone(),
            None => WnetConfig {
                padded_dims: padded_dims_for(dims),
                ..WnetConfig::default()
            },
        };
        if self.paper_scale {
            cfg.channels = WnetConfig::FULL_SCALE_CHANNELS;
            cfg.padded_dims = padded_dims_for(dims);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg
    }

    fn out_dir(&self) -> Outcome<&Path> {
        fs::create_dir_all(&self.out)
            .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

fn load_input(path: &Path, kind: VolumeKind) -> Outcome<spatialfdr_core::Volume3D> {
    // Unreadable inputs are a usage problem, not a runtime failure.
    load_volume_as(path, kind).map_err(|e| Failure::usage(e.to_string()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn simulate(ctx: &Context, args: SimulateArgs) -> Outcome {
    let mut setting = ctx
        .config
        .settings
        .as_ref()
        .and_then(|s| s.first().cloned())
        .unwrap_or_else(|| SimSetting {
            replications: 1,
            ..SimSetting::default()
        });
    if let Some(d) = args.dims {
        setting.dims = d;
    }
    if let Some(v) = args.p1 {
        setting.target_p1 = v;
    }
    if let Some(v) = args.mu1 {
        setting.mu1 = v;
    }
    if let Some(v) = args.sigma1sq {
        setting.sigma1sq = v;
    }
    if let Some(v) = args.reps {
        setting.replications = v;
    }
    if let Some(d) = args.design {
        setting.design = match d {
            DesignArg::Blobs => LabelDesign::Blobs,
            DesignArg::Iid => LabelDesign::Iid,
        };
    }
    if let Some(seed) = ctx.seed {
        setting.seed = seed;
    }
    setting.validate()?;
    let out = ctx.out_dir()?;
    let mut files = Vec::new();
    for rep in 0..setting.replications {
        let (h, x, p) = setting.replicate(rep)?;
        if rep == 0 || setting.design == LabelDesign::Iid {
            let name = if setting.design == LabelDesign::Iid {
                format!("h_rep{rep}")
            } else {
                "h".into()
            };
            save_volume(&h, &out.join(&name), VolumeKind::Label)?;
            files.push(format!("{name}.vol"));
        }
        for (name, v, kind) in [("x", &x, VolumeKind::Statistic), ("p", &p, VolumeKind::Pvalue)] {
            let name = format!("{name}_rep{rep}");
            save_volume(v, &out.join(&name), kind)?;
            files.push(format!("{name}.vol"));
        }
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        setting: &'a SimSetting,
        rep_seeds: Vec<u64>,
        files: Vec<String>,
    }
    let rep_seeds = (0..setting.replications).map(|r| setting.rep_seed(r)).collect();
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            setting: &setting,
            rep_seeds,
            files,
        },
    )
}

fn deepfdr(ctx: &Context, args: DeepfdrArgs) -> Outcome {
    let x = load_input(&args.x, VolumeKind::Statistic)?;
    let p = load_input(&args.p, VolumeKind::Pvalue)?;
    let cfg = ctx.wnet(x.dims());
    let result = deepfdr_pipeline(&x, &p, ctx.alpha, &cfg)?;
    let out = ctx.out_dir()?;
    result.outcome.save(&out.join("deepfdr"), &result.summary())?;
    let mut log = Vec::new();
    result.log.write_csv(&mut log).expect("in-memory write");
    write_text(&out.join("training_log.csv"), &String::from_utf8(log).expect("ascii"))?;
    if args.save_model {
        result.model.save(&out.join("wnet.ckpt"))?;
    }
    eprintln!(
        "deepfdr: {} of {} voxels rejected at alpha {} ({} epochs, flip {})",
        result.outcome.k,
        result.outcome.rejections.active_count(),
        ctx.alpha,
        result.log.epochs.len(),
        result.flip.flipped
    );
    Ok(())
}

fn baseline(ctx: &Context, args: BaselineArgs) -> Outcome {
    let need = |path: &Option<PathBuf>, flag: &str, kind| match path {
        Some(p) => load_input(p, kind),
        None => Err(Failure::usage(format!("this method needs --{flag}"))),
    };
    let (name, outcome): (&str, TestOutcome) = match args.method {
        BaselineMethod::Bh => ("bh", bh(&need(&args.p, "p", VolumeKind::Pvalue)?, ctx.alpha)?),
        BaselineMethod::Qvalue => ("qvalue", qvalue(&need(&args.p, "p", VolumeKind::Pvalue)?, ctx.alpha)?),
        BaselineMethod::Localfdr => ("localfdr", local_fdr(&need(&args.x, "x", VolumeKind::Statistic)?, ctx.alpha)?),
    };
    let out = ctx.out_dir()?;
    outcome.save(&out.join(name), &outcome.summary())?;
    eprintln!(
        "{name}: {} of {} voxels rejected at alpha {}",
        outcome.k,
        outcome.rejections.active_count(),
        ctx.alpha
    );
    Ok(())
}

fn bench(ctx: &Context) -> Outcome {
    let Some(settings) = ctx.config.settings.clone() else {
        return Err(Failure::usage("bench needs --config with a `settings` list"));
    };
    let settings: Vec<SimSetting> = settings
        .into_iter()
        .map(|s| SimSetting {
            seed: ctx.seed.unwrap_or(s.seed),
            ..s
        })
        .collect();
    let methods = ctx
        .config
        .methods
        .clone()
        .unwrap_or_else(|| vec![Method::Bh, Method::Qvalue, Method::Localfdr]);
    let dims = settings.first().map_or([30; 3], |s| s.dims);
    let opts = RunOptions {
        alpha: ctx.alpha,
        workers: ctx.workers,
        wnet: ctx.wnet(dims),
        timing: ctx.timing,
    };
    let report = run_replications(&settings, &methods, &opts)?;
    let out = ctx.out_dir()?;
    write_text(&out.join("rows.csv"), &report.rows_csv())?;
    write_text(&out.join("aggregate.csv"), &report.aggregate_csv())?;
    for row in &report.rows {
        if let Err(e) = &row.metrics {
            eprintln!("{} rep {} {}: {e}", row.setting_id, row.rep, row.method.as_str());
        }
    }
    Ok(())
}

fn metrics(ctx: &Context, args: MetricsArgs, out_given: bool) -> Outcome {
    let rejections = load_input(&args.rejections, VolumeKind::Rejection)?;
    let truth = load_input(&args.truth, VolumeKind::Label)?;
    if !rejections.same_layout(&truth) {
        return Err(Failure::usage(format!(
            "rejection dims {:?} do not match truth dims {:?}",
            rejections.dims(),
            truth.dims()
        )));
    }
    let rejected: Vec<usize> = rejections.active_indices().into_iter().filter(|&i| rejections.data()[i] == 1.0).collect();
    let outcome = TestOutcome::from_rejected(&rejections, &rejected, ctx.alpha, "input", None);
    let record = compute_metrics(&outcome, &truth)?;
    let text = serde_json::to_string_pretty(&record).expect("serializable");
    println!("{text}");
    if out_given {
        write_json(&ctx.out_dir()?.join("metrics.json"), &record)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let out_given = cli.global.out.is_some();
    let ctx = Context::new(cli.global)?;
    match cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Deepfdr(a) => deepfdr(&ctx, a),
        Command::Baseline(a) => baseline(&ctx, a),
        Command::Bench => bench(&ctx),
        Command::Metrics(a) => metrics(&ctx, a, out_given || ctx.config.out.is_some()),
    }
}

/// Parse `args` (program name first), run the command and return the exit
/// code: 0 on success, 2 for usage and validation errors, 1 otherwise.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(w) = cli.global.workers {
        // Kernels share the global pool; replications get their own.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
