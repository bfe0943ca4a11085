//! `teamc` command-line interface.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::bench::{self, BenchContext};
use crate::costmodel::{relative_flops, schedule_flops, BackboneSpec};
use crate::error::{Error, Result};
use crate::expand::expand_mask;
use crate::io::{export_mask_pgm, read_tokens, write_tokens};
use crate::pipeline::{merge_stage, prune_stage, run_pipeline, CompressionConfig, TokenSchedule};
use crate::report;
use crate::rng::RngState;
use crate::similarity::anchor_mask;
use crate::types::{BinaryMask, PatchGrid};
use crate::workload::{generate_workload, WorkloadSpec};

pub const SEED_ENV: &str = "TEAMC_SEED";

#[derive(Debug, Parser)]
#[command(name = "teamc", version, about = "Visual token expansion, pruning and guided merging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stage one: keep anchor-expanded and context tokens.
    Prune(PruneArgs),
    /// Stage two: merge visual rows of a hidden-state matrix into top-M sources.
    Merge(MergeArgs),
    /// Both stages plus the per-layer token schedule.
    Pipeline(PipelineArgs),
    /// FLOPs of a candidate schedule relative to a baseline.
    Cost(CostArgs),
    /// Write a synthetic workload.
    Gen(GenArgs),
    /// Render one view of a mask as a PGM image.
    Viz(VizArgs),
    /// Time repeated calls of one stage.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long, default_value_t = 2)]
    views: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
}

impl GridArgs {
    fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.views, self.height, self.width)
    }
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Write the key=value report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write a JSON mirror of the report.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Leave timing fields out so reports are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct PruneArgs {
    #[arg(long)]
    img: PathBuf,
    #[arg(long)]
    lang: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    /// Kept visual tokens (TKB1).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct MergeArgs {
    #[arg(long)]
    hidden: PathBuf,
    #[arg(long)]
    guide: PathBuf,
    #[arg(long)]
    visual_start: usize,
    #[arg(long)]
    visual_end: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long)]
    img: PathBuf,
    #[arg(long)]
    lang: PathBuf,
    #[arg(long)]
    guide: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    /// Write the token schedule as JSON.
    #[arg(long)]
    schedule_out: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct CostArgs {
    /// Candidate schedule (JSON).
    #[arg(long)]
    candidate: PathBuf,
    /// Baseline schedule (JSON).
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long, default_value_t = 32)]
    layers: usize,
    #[arg(long, default_value_t = 4096)]
    hidden: usize,
    #[arg(long, default_value_t = 11008)]
    ffn: usize,
    #[arg(long, default_value_t = 32)]
    heads: usize,
}

#[derive(Debug, Args)]
struct WorkloadArgs {
    /// Workload spec (JSON); flags below are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 4)]
    block_min: usize,
    #[arg(long, default_value_t = 6)]
    block_max: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    margin: f64,
    #[arg(long, default_value_t = 0.3)]
    anchor_fraction: f64,
    #[arg(long, default_value_t = 4)]
    guide_tokens: usize,
    #[arg(long, default_value_t = 0)]
    workload_seed: u64,
}

impl WorkloadArgs {
    fn spec(&self) -> Result<WorkloadSpec> {
        if let Some(path) = &self.spec {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return Ok(serde_json::from_str(&text)?);
        }
        Ok(WorkloadSpec {
            views: self.grid.views,
            height: self.grid.height,
            width: self.grid.width,
            blocks: self.blocks,
            block_min: self.block_min,
            block_max: self.block_max,
            dim: self.dim,
            margin: self.margin,
            anchor_fraction: self.anchor_fraction,
            guide_tokens: self.guide_tokens,
            seed: self.workload_seed,
        })
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    workload: WorkloadArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum VizStage {
    Anchors,
    Expanded,
    Kept,
}

#[derive(Debug, Args)]
struct VizArgs {
    #[arg(long)]
    img: PathBuf,
    #[arg(long)]
    lang: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 0)]
    view: usize,
    #[arg(long, value_enum, default_value_t = VizStage::Expanded)]
    stage: VizStage,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Registered stage name (anchor, expand, context, prune, merge, pipeline).
    #[arg(long)]
    stage: String,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Loads a config file over the defaults, then applies `TEAMC_SEED`.
pub fn load_config(path: Option<&Path>) -> Result<CompressionConfig> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => CompressionConfig::default(),
    };
    if let Ok(seed) = std::env::var(SEED_ENV) {
        config.seed = seed
            .trim()
            .parse()
            .map_err(|_| Error::Param(format!("{SEED_ENV}={seed:?} is not a u64")))?;
    }
    config.validate()?;
    Ok(config)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn emit(text: &str, target: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match target {
        Some(p) => write_file(p, text.as_bytes()),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn prune(args: &PruneArgs, out: &mut dyn Write) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let grid = args.grid.grid()?;
    let img = read_tokens(&args.img)?;
    let lang = read_tokens(&args.lang)?;
    let t = Instant::now();
    let outcome = prune_stage(&img, &lang, grid, &config)?;
    let ms = (!args.output.no_timing).then(|| elapsed_ms(t));
    if let Some(p) = &args.out {
        write_tokens(&outcome.kept, p)?;
    }
    if let Some(p) = &args.output.json {
        let mut v = serde_json::json!({
            "visual_tokens": grid.total_tokens(),
            "anchors": outcome.anchors.count(),
            "expanded": outcome.expanded.count(),
            "context": outcome.context.len(),
            "keep_size": outcome.kept_idx.len(),
            "pruned": grid.total_tokens() - outcome.kept_idx.len(),
            "kept_indices": outcome.kept_idx,
        });
        if let Some(ms) = ms {
            v["prune_ms"] = ms.into();
        }
        write_file(p, serde_json::to_string_pretty(&v)?.as_bytes())?;
    }
    let text = report::render_prune(&outcome, grid.total_tokens(), ms);
    emit(&text, args.output.report.as_deref(), out)
}

fn merge(args: &MergeArgs, out: &mut dyn Write) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let hidden = read_tokens(&args.hidden)?;
    let guide = read_tokens(&args.guide)?;
    let t = Instant::now();
    let (merged, rep) = merge_stage(&hidden, &guide, args.visual_start..args.visual_end, &config)?;
    let ms = (!args.output.no_timing).then(|| elapsed_ms(t));
    if let Some(p) = &args.out {
        write_tokens(&merged, p)?;
    }
    if let Some(p) = &args.output.json {
        let mut v = serde_json::to_value(&rep)?;
        if let Some(ms) = ms {
            v["merge_ms"] = ms.into();
        }
        write_file(p, serde_json::to_string_pretty(&v)?.as_bytes())?;
    }
    emit(&report::render_merge(&rep, ms), args.output.report.as_deref(), out)
}

fn pipeline(args: &PipelineArgs, out: &mut dyn Write) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let grid = args.grid.grid()?;
    let img = read_tokens(&args.img)?;
    let lang = read_tokens(&args.lang)?;
    let guide = read_tokens(&args.guide)?;
    let rep = run_pipeline(&img, &lang, &guide, grid, &config)?;
    let timing = !args.output.no_timing;
    if let Some(p) = &args.schedule_out {
        write_file(p, serde_json::to_string_pretty(&rep.schedule)?.as_bytes())?;
    }
    if let Some(p) = &args.output.json {
        let v = report::pipeline_json(&rep, timing);
        write_file(p, serde_json::to_string_pretty(&v)?.as_bytes())?;
    }
    emit(&report::render_pipeline(&rep, timing), args.output.report.as_deref(), out)
}

fn cost(args: &CostArgs, out: &mut dyn Write) -> Result<()> {
    let spec = BackboneSpec::new(args.layers, args.hidden, args.ffn, args.heads)?;
    let candidate: TokenSchedule = read_json(&args.candidate)?;
    let baseline: TokenSchedule = read_json(&args.baseline)?;
    let ratio = relative_flops(&candidate, &baseline, &spec)?;
    let text = format!(
        "candidate_flops={}\nbaseline_flops={}\nratio={:.6}\n",
        schedule_flops(&candidate, &spec)?,
        schedule_flops(&baseline, &spec)?,
        ratio
    );
    emit(&text, None, out)
}

fn gen(args: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let spec = args.workload.spec()?;
    let w = generate_workload(&spec)?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tokens(&w.e_img, dir.join("img.tkb"))?;
    write_tokens(&w.e_lang, dir.join("lang.tkb"))?;
    write_tokens(&w.guidance, dir.join("guide.tkb"))?;
    write_tokens(&w.instruction, dir.join("instruction.tkb"))?;
    for v in 0..w.grid.views {
        export_mask_pgm(&w.truth.view(v)?, dir.join(format!("truth_view{v}.pgm")))?;
    }
    write_file(&dir.join("workload.json"), serde_json::to_string_pretty(&spec)?.as_bytes())?;
    let text = format!(
        "visual_tokens={}\nlanguage_tokens={}\nguidance_tokens={}\ntruth_cells={}\nout_dir={}\n",
        w.e_img.rows(),
        w.e_lang.rows(),
        w.guidance.rows(),
        w.truth.count(),
        dir.display()
    );
    emit(&text, None, out)
}

fn viz(args: &VizArgs, out: &mut dyn Write) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let grid = args.grid.grid()?;
    let img = read_tokens(&args.img)?;
    let lang = read_tokens(&args.lang)?;
    let anchors = anchor_mask(&lang, &img, grid, config.anchor_scope)?;
    let mask = match args.stage {
        VizStage::Anchors => anchors,
        VizStage::Expanded => expand_mask(&anchors, config.expand_params(), &mut RngState::new(config.seed))?,
        VizStage::Kept => {
            let kept = prune_stage(&img, &lang, grid, &config)?.kept_idx;
            BinaryMask::from_indices(grid, kept.as_slice())?
        }
    };
    let view = mask.view(args.view)?;
    export_mask_pgm(&view, &args.out)?;
    emit(
        &format!("view={}\nset_cells={}\nout={}\n", args.view, view.count(), args.out.display()),
        None,
        out,
    )
}

fn run_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let stage = bench::stages().get(&args.stage)?;
    let config = load_config(args.config.as_deref())?;
    let workload = generate_workload(&args.workload.spec()?)?;
    let ctx = BenchContext::new(workload, config)?;
    let result = bench::run_bench(stage.as_ref(), &ctx, args.reps)?;
    if let Some(p) = &args.json {
        write_file(p, serde_json::to_string_pretty(&result)?.as_bytes())?;
    }
    emit(&bench::render(&result), args.report.as_deref(), out)
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Prune(a) => prune(a, out),
        Command::Merge(a) => merge(a, out),
        Command::Pipeline(a) => pipeline(a, out),
        Command::Cost(a) => cost(a, out),
        Command::Gen(a) => gen(a, out),
        Command::Viz(a) => viz(a, out),
        Command::Bench(a) => run_bench(a, out),
    }
}

/// Parses `argv` (including the program name) and runs it, writing results to
/// `out` and a one-line diagnostic to `err` on failure.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let rendered = e.to_string();
            let line = rendered.lines().next().unwrap_or("invalid arguments");
            let _ = writeln!(err, "teamc: {}", line.trim_start_matches("error: "));
            return 2;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "teamc: {e}");
            1
        }
    }
}

pub fn cli_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
