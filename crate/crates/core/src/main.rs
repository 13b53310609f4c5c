use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fiberseg::evaluation::{
    benchmark, cross_validate, parse_split, render_chart, render_fold_records, render_report, render_timings,
    split_dataset, CrossValidation, FoldAssignment, DEFAULT_MAX_ATTEMPTS,
};
use fiberseg::methods::{
    config_hash, fit, run_method, write_overlays, MethodConfig, MethodId, MethodReport,
};
use fiberseg::models::{build_backbone_3d, pretrained_tiny_2d, TINY_IRV2};
use fiberseg::synthgen::{load_dataset, write_dataset, GeneratorSpec, LabeledScan};
use fiberseg::transfer::{DepthSpec, InflateStrategy, WeightArchive};
use fiberseg::voxcore::{gridfile, Dims3};
use fiberseg::Error;

#[derive(Parser)]
#[command(name = "fiberseg", version, about = "Rough S/D/N segmentation of volumetric scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic labelled scans.
    Generate {
        /// `default`, `easy` or a TOML generator spec.
        #[arg(long, default_value = "default")]
        spec: String,
        /// Seed range `a..b` (inclusive) or a single seed.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Seeds,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inflate 2D backbone weights to a 3D archive.
    TransferWeights {
        /// 2D archive; the shipped pretext weights when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = TINY_IRV2)]
        backbone: String,
        #[arg(long, default_value = "stack", value_parser = parse_strategy)]
        strategy: InflateStrategy,
        /// 3D input block `WxHxD`.
        #[arg(long, default_value = "64x64x16", value_parser = parse_dims)]
        block: Dims3,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one method on a split and evaluate it on the test set.
    Run {
        #[command(flatten)]
        common: Common,
        /// Split file (`scan_id,group_id,set`); drawn from the seed when omitted.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Also write per-slice color overlays of the test predictions.
        #[arg(long)]
        overlays: bool,
    },
    /// k-fold cross-validation of one method.
    Crossval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Folds run in parallel on this many threads.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Median wall-clock time of repeated passes over the test set.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Comparison table (and fold charts) from earlier run / crossval outputs.
    Report {
        /// Output directories of `run` or `crossval`.
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_parser = parse_method)]
    method: MethodId,
    #[arg(long)]
    data: PathBuf,
    /// TOML method configuration; defaults throughout when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = || format!("invalid seeds {s:?}; expected N or A..B");
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
            if a > b {
                return Err(bad());
            }
            Ok(Seeds((a..=b).collect()))
        }
        None => Ok(Seeds(vec![num(s)?])),
    }
}

fn parse_strategy(s: &str) -> Result<InflateStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> Result<MethodId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_dims(s: &str) -> Result<Dims3, String> {
    let v: Vec<usize> = s
        .split('x')
        .map(|p| p.parse().map_err(|_| format!("invalid dims {s:?}; expected WxHxD")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [w, h, d] if w > 0 && h > 0 && d > 0 => Ok([w, h, d]),
        _ => Err(format!("invalid dims {s:?}; expected WxHxD")),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    method: Option<MethodId>,
    seed: Option<u64>,
    config_hash: Option<String>,
    data: Option<&'a Path>,
    files: Vec<String>,
}

impl<'a> Manifest<'a> {
    fn new(command: &'a str) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            method: None,
            seed: None,
            config_hash: None,
            data: None,
            files: Vec::new(),
        }
    }
}

struct Out {
    dir: PathBuf,
    files: Vec<String>,
}

impl Out {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| data_err(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| data_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, mut manifest: Manifest) -> anyhow::Result<()> {
        self.files.sort();
        manifest.files = std::mem::take(&mut self.files);
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.dir.join("run.json"), json + "\n").map_err(|e| data_err(&self.dir, e))?;
        Ok(())
    }
}

fn data_err(path: &Path, e: std::io::Error) -> anyhow::Error {
    anyhow::Error::new(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_config(common: &Common) -> anyhow::Result<MethodConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            MethodConfig::from_toml(&text)?
        }
        None => MethodConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_data(root: &Path) -> anyhow::Result<Vec<LabeledScan>> {
    let scans = load_dataset(root)?;
    if scans.is_empty() {
        return Err(Error::Manifest(format!("no scans found under {}", root.display())).into());
    }
    Ok(scans)
}

fn load_assignment(split: Option<&Path>, scans: &[LabeledScan], seed: u64) -> anyhow::Result<FoldAssignment> {
    Ok(match split {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| data_err(path, e))?;
            FoldAssignment::from_records(0, &parse_split(&text)?, scans)?
        }
        None => split_dataset(scans, seed, DEFAULT_MAX_ATTEMPTS)?,
    })
}

fn report_json(r: &MethodReport) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(r)? + "\n")
}

fn cmd_generate(spec: &str, seeds: &[u64], out: &Path) -> anyhow::Result<()> {
    let spec = GeneratorSpec::from_name_or_file(spec)?;
    let dirs = write_dataset(&spec, seeds.iter().copied(), out)?;
    let mut o = Out::new(out)?;
    o.files = dirs
        .iter()
        .filter_map(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let mut m = Manifest::new("generate");
    m.config_hash = Some(config_hash(&spec));
    o.finish(m)?;
    println!("wrote {} scans to {}", dirs.len(), out.display());
    Ok(())
}

fn cmd_transfer(
    weights: Option<&Path>,
    backbone: &str,
    strategy: InflateStrategy,
    block: Dims3,
    out: &Path,
) -> anyhow::Result<()> {
    let w2 = match weights {
        Some(p) => WeightArchive::load(p).map_err(|e| Error::Config(format!("cannot load {}: {e}", p.display())))?,
        None if backbone == TINY_IRV2 => pretrained_tiny_2d()?,
        None => return Err(Error::Config(format!("backbone {backbone} needs --weights")).into()),
    };
    let bb = build_backbone_3d(backbone, &DepthSpec::new(strategy), block, Some(&w2), 0)?;
    let archive = bb.network.to_archive();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| data_err(parent, e))?;
    }
    archive.save(out)?;
    println!("wrote {} tensors to {}", archive.len(), out.display());
    Ok(())
}

fn cmd_run(common: &Common, split: Option<&Path>, overlays: bool) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let scans = load_data(&common.data)?;
    let assignment = load_assignment(split, &scans, cfg.seed)?;
    let data_split = assignment.apply(&scans)?;
    let run = run_method(common.method, &cfg, &data_split)?;
    let mut o = Out::new(&common.out)?;
    o.write("split.csv", assignment.to_text())?;
    o.write("report.csv", render_report(std::slice::from_ref(&run.report))?)?;
    o.write("report.json", report_json(&run.report)?)?;
    let cv = CrossValidation {
        folds: vec![fiberseg::evaluation::FoldOutcome {
            assignment,
            report: run.report.clone(),
        }],
        mean: run.report.meanacc,
        std: 0.0,
    };
    o.write("records.csv", render_fold_records(&cv))?;
    o.write("timings.csv", render_timings(&cv))?;
    o.write("config.toml", toml::to_string(&cfg)?)?;
    for (name, h) in &run.histories {
        o.write(&format!("history/{name}.csv"), h.to_csv())?;
    }
    for (scan_id, grid) in &run.grids {
        o.write(&format!("grids/{scan_id}.grid"), gridfile::encode_predictions(grid))?;
        if overlays {
            let scan = data_split
                .test
                .iter()
                .find(|s| &s.volume.scan_id == scan_id)
                .expect("test scan");
            let dir = common.out.join("overlays").join(scan_id);
            write_overlays(&dir, &scan.volume, &grid.hardened())?;
            o.files.push(format!("overlays/{scan_id}/"));
        }
    }
    let mut m = Manifest::new("run");
    m.method = Some(common.method);
    m.seed = Some(cfg.seed);
    m.config_hash = Some(run.report.config_hash.clone());
    m.data = Some(&common.data);
    o.finish(m)?;
    println!(
        "{}: meanacc {:.4} on {} test scans ({:.2} s)",
        common.method,
        run.report.meanacc,
        data_split.test.len(),
        run.report.runtime_s
    );
    Ok(())
}

fn cmd_crossval(common: &Common, k: usize, workers: usize) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let scans = load_data(&common.data)?;
    let cv = cross_validate(common.method, &scans, k, cfg.seed, &cfg, workers)?;
    let mut o = Out::new(&common.out)?;
    o.write("folds.csv", render_fold_records(&cv))?;
    o.write("chart.csv", render_chart(&cv))?;
    o.write("timings.csv", render_timings(&cv))?;
    o.write(
        "summary.csv",
        format!("method,k,mean,std\n{},{k},{:.6},{:.6}\n", common.method, cv.mean, cv.std),
    )?;
    for f in &cv.folds {
        o.write(&format!("splits/fold_{:02}.csv", f.assignment.fold), f.assignment.to_text())?;
    }
    let mut m = Manifest::new("crossval");
    m.method = Some(common.method);
    m.seed = Some(cfg.seed);
    m.config_hash = Some(config_hash(&cfg));
    m.data = Some(&common.data);
    o.finish(m)?;
    println!("{}: meanacc {:.4} +- {:.4} over {k} folds", common.method, cv.mean, cv.std);
    Ok(())
}

fn cmd_benchmark(common: &Common, split: Option<&Path>, repeats: usize) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let scans = load_data(&common.data)?;
    let assignment = load_assignment(split, &scans, cfg.seed)?;
    let s = assignment.apply(&scans)?;
    let (mut fitted, _) = fit(common.method, &cfg, &s.train, &s.val)?;
    let rec = benchmark(common.method, &mut fitted, &s.test, repeats)?;
    let mut o = Out::new(&common.out)?;
    let runs: Vec<String> = rec.runs_s.iter().map(|r| format!("{r:.6}")).collect();
    o.write(
        "benchmark.csv",
        format!(
            "method,scans,repeats,median_s,runs_s\n{},{},{},{:.6},{}\n",
            rec.method,
            rec.scans,
            repeats,
            rec.median_s,
            runs.join(" ")
        ),
    )?;
    o.write("benchmark.json", serde_json::to_string_pretty(&rec)? + "\n")?;
    let mut m = Manifest::new("benchmark");
    m.method = Some(common.method);
    m.seed = Some(cfg.seed);
    m.config_hash = Some(config_hash(&cfg));
    m.data = Some(&common.data);
    o.finish(m)?;
    println!("{}: median {:.3} s over {repeats} passes", common.method, rec.median_s);
    Ok(())
}

fn cmd_report(inputs: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    let mut reports = Vec::new();
    let mut o = Out::new(out)?;
    for dir in inputs {
        let report = dir.join("report.json");
        let chart = dir.join("chart.csv");
        if report.is_file() {
            let text = fs::read_to_string(&report).map_err(|e| data_err(&report, e))?;
            let r: MethodReport = serde_json::from_str(&text)
                .map_err(|e| Error::Format(format!("{}: {e}", report.display())))?;
            reports.push(r);
        } else if chart.is_file() {
            let name = dir.file_name().map_or("crossval".into(), |n| n.to_string_lossy().into_owned());
            let text = fs::read_to_string(&chart).map_err(|e| data_err(&chart, e))?;
            o.write(&format!("chart_{name}.csv"), text)?;
        } else {
            return Err(Error::Manifest(format!("{} holds no run or crossval output", dir.display())).into());
        }
    }
    if !reports.is_empty() {
        o.write("table.csv", render_report(&reports)?)?;
    }
    o.finish(Manifest::new("report"))?;
    Ok(())
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Fold { source, .. } => classify(source),
        Error::Config(_) | Error::Mapping(_) => ("config", 3),
        Error::Io { .. } | Error::Format(_) | Error::Manifest(_) | Error::Split(_) => ("data", 4),
        _ => ("runtime", 5),
    }
}

fn exit_for(e: &anyhow::Error) -> (&'static str, u8) {
    if e.downcast_ref::<Usage>().is_some() {
        return ("usage", 2);
    }
    match e.downcast_ref::<Error>() {
        Some(err) => classify(err),
        None if e.downcast_ref::<toml::ser::Error>().is_some() => ("config", 3),
        None => ("runtime", 5),
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { spec, seeds, out } => cmd_generate(&spec, &seeds.0, &out),
        Command::TransferWeights {
            weights,
            backbone,
            strategy,
            block,
            out,
        } => cmd_transfer(weights.as_deref(), &backbone, strategy, block, &out),
        Command::Run {
            common,
            split,
            overlays,
        } => cmd_run(&common, split.as_deref(), overlays),
        Command::Crossval { common, k, workers } => cmd_crossval(&common, k, workers),
        Command::Benchmark {
            common,
            split,
            repeats,
        } => cmd_benchmark(&common, split.as_deref(), repeats),
        Command::Report { inputs, out } => cmd_report(&inputs, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(if code == 0 { 0 } else { 2 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = exit_for(&e);
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{kind}]: {msg}");
            ExitCode::from(code)
        }
    }
}
