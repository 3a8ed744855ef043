//! `ellitrack` subcommands: synthetic generation, binning, accumulation,
//! classical detection, evaluation, timing and model-cost estimates.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ellitrack::accumulate::{
    self, accumulate, event_counts, read_representation, write_representation, AccumulationConfig,
    EptReport, Method, OverflowMode, Representation, DEFAULT_LIMIT,
};
use ellitrack::decode::{detect_classical, evaluate, DetectorConfig};
use ellitrack::ellipse::{read_labels, write_labels, Label};
use ellitrack::events::{read_events, write_events, Binning, EventFormat, EventStream, DEFAULT_BIN_COUNT};
use ellitrack::modelcost::{branches_cost, fpn_branches, layer_cost, parse_graph, LayerKind};
use ellitrack::synth::{generate, Scenario};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "FACET_THREADS";
pub const INDEX_FILE: &str = "index.csv";
pub const INDEX_HEADER: &str = "file,t_start,t_end,events";

#[derive(Debug, Parser)]
#[command(name = "ellitrack", version, about = "Event-based pupil tracking pipelines")]
#[command(arg_required_else_help = true)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic event stream plus ground-truth labels.
    Gen(GenArgs),
    /// Split events into bins and write per-bin event-count frames.
    Bin(BinArgs),
    /// Split events into bins and write accumulated representations.
    Accumulate(AccumulateArgs),
    /// Fit ellipses to a directory of representations.
    Detect(DetectArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Time binning + accumulation for every method.
    Bench(BenchArgs),
    /// Parameter / operation counts for a layer graph.
    Cost(CostArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Binary,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Volume,
    Causal,
    FastCausal,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Volume => Method::Volume,
            MethodArg::Causal => Method::Causal,
            MethodArg::FastCausal => Method::FastCausal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OverflowArg {
    Skip,
    Clip,
}

impl From<OverflowArg> for OverflowMode {
    fn from(o: OverflowArg) -> Self {
        match o {
            OverflowArg::Skip => OverflowMode::Skip,
            OverflowArg::Clip => OverflowMode::Clip,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EventIo {
    /// Event file encoding.
    #[arg(long, value_enum, default_value_t = FormatArg::Binary)]
    pub format: FormatArg,
    /// Sensor size `WxH` for CSV input (inferred from coordinates otherwise).
    #[arg(long, value_parser = parse_sensor)]
    pub sensor: Option<(u16, u16)>,
}

impl EventIo {
    pub fn event_format(&self) -> EventFormat {
        match self.format {
            FormatArg::Binary => EventFormat::Binary,
            FormatArg::Csv => EventFormat::Csv { sensor: self.sensor },
        }
    }
}

fn parse_sensor(s: &str) -> std::result::Result<(u16, u16), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let w = w.trim().parse().map_err(|_| format!("invalid width {w:?}"))?;
    let h = h.trim().parse().map_err(|_| format!("invalid height {h:?}"))?;
    Ok((w, h))
}

#[derive(Debug, Clone, Args)]
pub struct BinningArgs {
    /// Events per bin (fixed-count binning, the default).
    #[arg(long, value_name = "N", conflicts_with = "window")]
    pub count: Option<usize>,
    /// Bin length in microseconds (fixed-time binning).
    #[arg(long, value_name = "MICROS")]
    pub window: Option<u64>,
}

impl BinningArgs {
    pub fn binning(&self) -> Binning {
        match self.window {
            Some(w) => Binning::FixedTime(w),
            None => Binning::FixedCount(self.count.unwrap_or(DEFAULT_BIN_COUNT)),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AccumArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::FastCausal)]
    pub method: MethodArg,
    /// Per-pixel contribution limit for the fast causal method.
    #[arg(long, value_name = "L", default_value_t = DEFAULT_LIMIT)]
    pub limit: f64,
    #[arg(long, value_enum, default_value_t = OverflowArg::Skip)]
    pub overflow: OverflowArg,
    /// Min-max scale each channel to [0, 1].
    #[arg(long)]
    pub normalize: bool,
}

impl AccumArgs {
    pub fn config(&self) -> AccumulationConfig {
        AccumulationConfig {
            method: self.method.into(),
            limit: self.limit,
            overflow: self.overflow.into(),
            normalize: self.normalize,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scenario file (`key=value` lines); defaults apply otherwise.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Event file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Label CSV to write (default: output with `.labels.csv` extension).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Override one scenario key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub io: EventIo,
}

#[derive(Debug, Args)]
pub struct BinArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub io: EventIo,
    #[command(flatten)]
    pub binning: BinningArgs,
}

#[derive(Debug, Args)]
pub struct AccumulateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub io: EventIo,
    #[command(flatten)]
    pub binning: BinningArgs,
    #[command(flatten)]
    pub accum: AccumArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Directory written by `accumulate` or `bin`.
    #[arg(long)]
    pub input: PathBuf,
    /// Predicted label CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Quantile of non-zero activity above which pixels are fitted.
    #[arg(long, value_name = "Q", default_value_t = DetectorConfig::default().quantile)]
    pub quantile: f64,
    #[arg(long, default_value_t = DetectorConfig::default().min_points)]
    pub min_points: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted label CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Ground-truth label CSV.
    #[arg(long)]
    pub labels: PathBuf,
    /// `key=value` report to write (text report always goes to stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Event file; a default synthetic scenario is generated otherwise.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// CSV report to write (also printed to stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub io: EventIo,
    #[command(flatten)]
    pub binning: BinningArgs,
    #[arg(long, value_name = "L", default_value_t = DEFAULT_LIMIT)]
    pub limit: f64,
    #[arg(long, value_enum, default_value_t = OverflowArg::Skip)]
    pub overflow: OverflowArg,
    #[arg(long)]
    pub normalize: bool,
    /// Timed passes per method.
    #[arg(long, value_name = "R", default_value_t = 5)]
    pub reps: usize,
    /// Seed for the generated scenario.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Graph file `kind,cin,cout,k,H,W,stride`; blank lines separate branches.
    /// Without it, a four-level feature pyramid is reported.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses argv (including the program name) into a run configuration.
pub fn parse_args<I, T>(argv: I) -> std::result::Result<RunConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    RunConfig::try_parse_from(argv)
}

/// Worker pool honoring the thread cap.
fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

pub fn run(config: &RunConfig) -> Result<()> {
    match &config.command {
        Command::Gen(a) => run_gen(a).context("gen"),
        Command::Bin(a) => run_bin(a).context("bin"),
        Command::Accumulate(a) => run_accumulate(a).context("accumulate"),
        Command::Detect(a) => run_detect(a).context("detect"),
        Command::Eval(a) => run_eval(a).context("eval"),
        Command::Bench(a) => run_bench(a).context("bench"),
        Command::Cost(a) => run_cost(a).context("cost"),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn load_events(path: &Path, io: &EventIo) -> Result<EventStream> {
    read_events(open(path)?, io.event_format()).with_context(|| format!("reading {}", path.display()))
}

pub fn default_labels_path(events: &Path) -> PathBuf {
    events.with_extension("labels.csv")
}

pub fn build_scenario(a: &GenArgs) -> Result<Scenario> {
    let mut s = match &a.input {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Scenario::from_kv(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Scenario::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        s.set(k, v)?;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

fn run_gen(a: &GenArgs) -> Result<()> {
    let scenario = build_scenario(a)?;
    let (stream, labels) = generate(&scenario)?;
    let mut w = create(&a.output)?;
    write_events(&stream, a.io.event_format(), &mut w)?;
    let label_path = a.labels.clone().unwrap_or_else(|| default_labels_path(&a.output));
    write_labels(&labels, create(&label_path)?)?;
    eprintln!(
        "wrote {} events to {} and {} labels to {}",
        stream.len(),
        a.output.display(),
        labels.len(),
        label_path.display()
    );
    Ok(())
}

/// Writes representations as `bin_NNNNNN.fcv` plus an index.
fn write_frames(dir: &Path, frames: &[(Representation, u64, u64, usize)]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut index = create(&dir.join(INDEX_FILE))?;
    writeln!(index, "{INDEX_HEADER}")?;
    for (i, (rep, t_start, t_end, n)) in frames.iter().enumerate() {
        let name = format!("bin_{i:06}.fcv");
        write_representation(rep, create(&dir.join(&name))?)?;
        writeln!(index, "{name},{t_start},{t_end},{n}")?;
    }
    index.flush()?;
    Ok(())
}

fn frames_with<F>(stream: &EventStream, binning: Binning, f: F) -> Result<Vec<(Representation, u64, u64, usize)>>
where
    F: Fn(&ellitrack::events::EventBin<'_>) -> ellitrack::Result<Representation> + Sync,
{
    let bins = binning.apply(stream)?;
    let pool = thread_pool()?;
    let reps: Vec<_> = pool.install(|| {
        bins.par_iter()
            .map(|b| f(b).map(|r| (r, b.t_start, b.t_end, b.len())))
            .collect::<ellitrack::Result<Vec<_>>>()
    })?;
    Ok(reps)
}

fn run_bin(a: &BinArgs) -> Result<()> {
    let stream = load_events(&a.input, &a.io)?;
    let frames = frames_with(&stream, a.binning.binning(), event_counts)?;
    write_frames(&a.output, &frames)?;
    eprintln!("wrote {} count frames to {}", frames.len(), a.output.display());
    Ok(())
}

fn run_accumulate(a: &AccumulateArgs) -> Result<()> {
    let config = a.accum.config();
    config.validate()?;
    let stream = load_events(&a.input, &a.io)?;
    let frames = frames_with(&stream, a.binning.binning(), |b| accumulate(b, &config))?;
    write_frames(&a.output, &frames)?;
    eprintln!(
        "wrote {} {} representations to {}",
        frames.len(),
        config.method.name(),
        a.output.display()
    );
    Ok(())
}

/// `(file, t_end)` rows of a frame index.
pub fn read_index(dir: &Path) -> Result<Vec<(String, u64)>> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(INDEX_HEADER) {
        bail!("{}: expected header {INDEX_HEADER}", path.display());
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            let t_end = f.get(2).and_then(|s| s.parse().ok());
            match (f.len(), t_end) {
                (4, Some(t)) => Ok((f[0].to_string(), t)),
                _ => bail!("{}: line {}: malformed row", path.display(), i + 2),
            }
        })
        .collect()
}

fn run_detect(a: &DetectArgs) -> Result<()> {
    let index = read_index(&a.input)?;
    let pool = thread_pool()?;
    let results: Vec<_> = pool.install(|| {
        index
            .par_iter()
            .map(|(file, t_end)| -> Result<_> {
                let path = a.input.join(file);
                let rep = read_representation(open(&path)?)
                    .with_context(|| format!("reading {}", path.display()))?;
                Ok((*t_end, detect_classical(&rep, a.quantile, a.min_points)))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut labels = Vec::new();
    let mut skipped = 0;
    for (t_end, r) in results {
        match r {
            Ok(ellipse) => labels.push(Label { t_end, ellipse }),
            Err(e @ (ellitrack::Error::DetectionFailed { .. } | ellitrack::Error::Fit(_))) => {
                skipped += 1;
                eprintln!("skipping frame at t={t_end}: {e}");
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_labels(&labels, create(&a.output)?)?;
    eprintln!("detected {} ellipses, skipped {skipped} frames", labels.len());
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let pred = read_labels(open(&a.input)?).with_context(|| format!("reading {}", a.input.display()))?;
    let gt = read_labels(open(&a.labels)?).with_context(|| format!("reading {}", a.labels.display()))?;
    if pred.len() != gt.len() {
        bail!("{} predictions but {} ground-truth labels", pred.len(), gt.len());
    }
    if let Some((p, g)) = pred.iter().zip(&gt).find(|(p, g)| p.t_end != g.t_end) {
        bail!("prediction at t={} paired with label at t={}", p.t_end, g.t_end);
    }
    let centers = |ls: &[Label]| ls.iter().map(|l| l.ellipse.center()).collect::<Vec<_>>();
    let report = evaluate(&centers(&pred), &centers(&gt))?;
    println!("{report}");
    if let Some(out) = &a.output {
        let mut w = create(out)?;
        w.write_all(report.to_kv().as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

pub const BENCH_HEADER: &str = "method,samples,mean_ms,p50_ms,p95_ms";

/// EPT per method; passes are interleaved across methods so slow drift in
/// machine load affects all rows alike.
pub fn bench_rows(stream: &EventStream, binning: Binning, base: &AccumulationConfig, reps: usize) -> Result<Vec<(Method, EptReport)>> {
    if reps == 0 {
        bail!("--reps must be at least 1");
    }
    let configs: Vec<AccumulationConfig> = Method::ALL
        .iter()
        .map(|&method| AccumulationConfig { method, ..*base })
        .collect();
    let mut samples = vec![Vec::new(); configs.len()];
    for _ in 0..reps {
        for (c, s) in configs.iter().zip(&mut samples) {
            s.extend(accumulate::ept_pass(stream, binning, c)?);
        }
    }
    Method::ALL
        .iter()
        .zip(samples)
        .map(|(&m, s)| Ok((m, EptReport::from_samples(s)?)))
        .collect()
}

fn run_bench(a: &BenchArgs) -> Result<()> {
    let stream = match &a.input {
        Some(p) => load_events(p, &a.io)?,
        None => generate(&Scenario { seed: a.seed, ..Scenario::default() })?.0,
    };
    let base = AccumulationConfig {
        method: Method::FastCausal,
        limit: a.limit,
        overflow: a.overflow.into(),
        normalize: a.normalize,
    };
    base.validate()?;
    let rows = bench_rows(&stream, a.binning.binning(), &base, a.reps)?;
    let mut text = format!("{BENCH_HEADER}\n");
    for (m, r) in &rows {
        text += &format!("{},{},{:.6},{:.6},{:.6}\n", m.name(), r.samples, r.mean_ms, r.p50_ms, r.p95_ms);
    }
    print!("{text}");
    if let Some(out) = &a.output {
        let mut w = create(out)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

fn run_cost(a: &CostArgs) -> Result<()> {
    let branches = match &a.input {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_graph(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => fpn_branches(&[24, 40, 112, 160], 64, 64, 64, LayerKind::Dsc),
    };
    let mut text = String::from("branch,layer,kind,params,macs\n");
    for (bi, b) in branches.iter().enumerate() {
        for (li, l) in b.iter().enumerate() {
            let c = layer_cost(l)?;
            text += &format!("{bi},{li},{},{},{}\n", l.kind.name(), c.params, c.macs);
        }
    }
    let total = branches_cost(&branches)?;
    text += &format!("{total}\n");
    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}
