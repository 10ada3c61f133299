//! `sscgan` command line: `gen-data`, `train`, `eval`, `probe`, `inspect`.
//!
//! Every run directory receives `run.json` with the resolved configuration,
//! SHA-256 hashes of all inputs and the tool version. Exit codes: 0 success,
//! 1 usage error, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{self, Dataset, Manifest, TsdfOptions};
use crate::metrics::{majority_baseline, Accumulator, Region};
use crate::nets::checkpoint::{file_hash, Checkpoint};
use crate::nets::Generator;
use crate::probe::{noise_curve, ProbeTarget, DEFAULT_LEVELS};
use crate::scenegen::SceneConfig;
use crate::train::{self, predict_labels, AdvLoss, TrainConfig, Trainer};
use crate::voxcore::sscv::{SscvFile, SscvPayload};
use crate::voxcore::{GridSpec, LabelVolume};

pub const RUN_FILE: &str = "run.json";
pub const LOCK_FILE: &str = ".lock";

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Parser)]
#[command(name = "sscgan", version, about = "Adversarial 3D semantic scene completion at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes, depth images and cameras.
    GenData(GenDataArgs),
    /// Train a generator/discriminator pair.
    Train(TrainArgs),
    /// Score a generator checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the label-noise probe against discriminator checkpoints.
    Probe(ProbeArgs),
    /// Summarize an SSCV volume, a checkpoint or a manifest.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// JSON dataset config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's scene count.
    #[arg(long)]
    count: Option<u64>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training config JSON, or the `run.json` of an earlier run to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest; may be omitted when replaying a `run.json`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    conditional: Option<bool>,
    #[arg(long, value_parser = parse_adv_loss)]
    adv_loss: Option<AdvLoss>,
    #[arg(long)]
    deterministic: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "occluded")]
    region: Region,
    /// Report JSON; a per-scene CSV is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long, num_args = 1.., required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    path: PathBuf,
}

fn parse_adv_loss(s: &str) -> Result<AdvLoss, String> {
    match s {
        "global" => Ok(AdvLoss::Global),
        "local" => Ok(AdvLoss::Local),
        _ => Err(format!("expected global or local, got {s:?}")),
    }
}

/// Dataset generation config (`gen-data --config`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub scene: SceneConfig,
    pub count: u64,
    pub first_seed: u64,
    /// Also write each TSDF input volume as `tsdf_<seed>.sscv`.
    pub emit_tsdf: bool,
    pub tsdf: TsdfOptions,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            count: 8,
            first_seed: 0,
            emit_tsdf: false,
            tsdf: TsdfOptions::default(),
        }
    }
}

/// Contents of `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub deterministic: bool,
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 over the sorted input hashes.
    pub inputs_hash: String,
}

impl RunRecord {
    fn new(command: &str, deterministic: bool, config: serde_json::Value, inputs: BTreeMap<String, String>) -> Self {
        let mut h = Sha256::new();
        for (k, v) in &inputs {
            h.update(k.as_bytes());
            h.update(v.as_bytes());
        }
        Self {
            tool: "sscgan".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            deterministic,
            config,
            inputs,
            inputs_hash: format!("{:x}", h.finalize()),
        }
    }
}

fn env_deterministic() -> bool {
    std::env::var("SSC_DETERMINISTIC").map(|v| v == "1" || v.eq_ignore_ascii_case("true")).unwrap_or(false)
}

/// Exclusive ownership of an output directory for the life of a command.
struct RunDir {
    lock: PathBuf,
}

impl RunDir {
    /// `keep` accepts a non-empty directory as is (resuming into it).
    fn claim(dir: &Path, overwrite: bool, keep: bool) -> Result<Self, BoxError> {
        let lock = dir.join(LOCK_FILE);
        if lock.exists() {
            return Err(format!("{} is locked by another run ({} exists)", dir.display(), lock.display()).into());
        }
        if !keep && dir.exists() && fs::read_dir(dir)?.next().is_some() {
            if !overwrite {
                return Err(format!("{} is not empty; pass --overwrite to replace it", dir.display()).into());
            }
            fs::remove_dir_all(dir)?;
        }
        fs::create_dir_all(dir)?;
        fs::OpenOptions::new().write(true).create_new(true).open(&lock)?;
        Ok(Self { lock })
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

fn write_run(dir: &Path, rec: &RunRecord) -> Result<(), BoxError> {
    fs::write(dir.join(RUN_FILE), serde_json::to_string_pretty(rec)?)?;
    Ok(())
}

fn hash_inputs(paths: &[PathBuf]) -> Result<BTreeMap<String, String>, BoxError> {
    let mut out = BTreeMap::new();
    for p in paths {
        out.insert(p.display().to_string(), file_hash(p).map_err(|e| format!("{}: {e}", p.display()))?);
    }
    Ok(out)
}

fn dataset_inputs(manifest_path: &Path) -> Result<Vec<PathBuf>, BoxError> {
    let m = Manifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut v = vec![manifest_path.to_path_buf()];
    for e in &m.scenes {
        v.push(dir.join(&e.labels));
        v.push(dir.join(&e.depth));
        v.push(dir.join(&e.camera));
    }
    Ok(v)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BoxError> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn gen_data(a: GenDataArgs) -> Result<(), BoxError> {
    let mut cfg: GenDataConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GenDataConfig::default(),
    };
    if let Some(c) = a.count {
        cfg.count = c;
    }
    cfg.scene.validate()?;
    let _guard = RunDir::claim(&a.out, a.overwrite, false)?;
    let seeds: Vec<u64> = (cfg.first_seed..cfg.first_seed + cfg.count).collect();
    let m = dataset::write_dataset(&cfg.scene, &seeds, &a.out, cfg.emit_tsdf.then_some(cfg.tsdf))?;
    let inputs = hash_inputs(&a.config.iter().cloned().collect::<Vec<_>>())?;
    write_run(&a.out, &RunRecord::new("gen-data", true, serde_json::to_value(&cfg)?, inputs))?;
    println!("wrote {} scenes to {}", m.scenes.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), BoxError> {
    let mut data_path = a.data.clone();
    let resume = match &a.resume {
        Some(p) => Some(Trainer::from_checkpoint(&Checkpoint::load(p)?)?),
        None => None,
    };
    let mut cfg = match &a.config {
        Some(p) => {
            let v: serde_json::Value = read_json(p)?;
            if v.get("command").and_then(|c| c.as_str()) == Some("train") {
                // Replaying an earlier run.
                let rec: RunRecord = serde_json::from_value(v)?;
                if data_path.is_none() {
                    data_path = rec.config.get("data").and_then(|d| d.as_str()).map(PathBuf::from);
                }
                serde_json::from_value(rec.config["train"].clone())?
            } else {
                serde_json::from_value::<TrainConfig>(v).map_err(|e| format!("{}: {e}", p.display()))?
            }
        }
        None => resume.as_ref().map(|t| t.config.clone()).unwrap_or_default(),
    };
    let data_path = data_path.ok_or("--data is required")?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(c) = a.conditional {
        cfg.conditional = c;
    }
    if let Some(l) = a.adv_loss {
        cfg.adv_loss = l;
    }
    if a.deterministic || env_deterministic() {
        cfg.deterministic = true;
    }
    cfg.validate()?;
    if let Some(t) = &resume {
        let same = TrainConfig { steps: t.config.steps, ..cfg.clone() };
        if same != t.config {
            return Err("--resume: configuration differs from the checkpoint's (only --steps may change)".into());
        }
    }
    let resume = resume.map(|mut t| {
        t.config.steps = cfg.steps;
        t
    });
    let data = Dataset::load(&data_path, &cfg.tsdf)?;
    let _guard = RunDir::claim(&a.out, a.overwrite, resume.is_some())?;
    let mut inputs = dataset_inputs(&data_path)?;
    inputs.extend(a.resume.iter().cloned());
    let record = RunRecord::new(
        "train",
        cfg.deterministic,
        serde_json::json!({ "train": cfg, "data": data_path, "resume": a.resume }),
        hash_inputs(&inputs)?,
    );
    write_run(&a.out, &record)?;
    eprintln!("{} on {} scenes for {} steps", cfg.variant_name(), data.len(), cfg.steps);
    let summary = train::train(&cfg, &data, &a.out, resume)?;
    if let Some(last) = summary.stats.last() {
        eprintln!(
            "step {}: mce/voxel {:.4}, disc {:.4}, d_real {:.3}, d_fake {:.3}",
            last.step, last.mce_per_voxel, last.disc_loss, last.d_real_mean, last.d_fake_mean
        );
    }
    let ck = Checkpoint::load(&summary.final_checkpoint)?;
    println!("{} {}", summary.final_checkpoint.display(), ck.hash());
    Ok(())
}

/// Per-checkpoint generator plus the TSDF options it was trained with.
fn load_generator(ck: &Checkpoint) -> Result<(Generator<f32>, crate::nets::ParamStore<f32>, TsdfOptions), BoxError> {
    let spec = serde_json::from_value(ck.meta["generator"].clone())?;
    let gen = Generator::new(spec)?;
    let mut params = gen.init_params(0);
    ck.load_store("gen", &mut params)?;
    let tsdf = ck
        .meta
        .get("config")
        .and_then(|c| c.get("tsdf"))
        .map(|t| serde_json::from_value(t.clone()))
        .transpose()?
        .unwrap_or_default();
    Ok((gen, params, tsdf))
}

fn eval_cmd(a: EvalArgs) -> Result<(), BoxError> {
    if a.out.exists() && !a.overwrite {
        return Err(format!("{} exists; pass --overwrite to replace it", a.out.display()).into());
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (gen, params, tsdf) = load_generator(&ck)?;
    let data = Dataset::load(&a.data, &tsdf)?;
    let preds = predict_labels(&gen, &params, &data.samples)?;
    let c = data.grid.num_classes;
    let mut total = Accumulator::new(c, a.region);
    let mut csv = String::from("seed,region_size,sc_precision,sc_recall,sc_iou,ssc_avg");
    for k in 1..c {
        csv.push_str(&format!(",iou_class_{k}"));
    }
    csv.push('\n');
    for (p, s) in preds.iter().zip(&data.samples) {
        let mut one = Accumulator::new(c, a.region);
        one.add(p, &s.labels)?;
        total.merge(&one);
        let r = one.report();
        csv.push_str(&format!(
            "{},{},{},{},{},{}",
            s.seed,
            r.region_size,
            r.sc_precision,
            r.sc_recall,
            r.sc_iou,
            r.ssc_avg.map(|v| v.to_string()).unwrap_or_default()
        ));
        for v in &r.per_class_iou {
            csv.push_str(&format!(",{}", v.map(|v| v.to_string()).unwrap_or_default()));
        }
        csv.push('\n');
    }
    let gts: Vec<&LabelVolume> = data.samples.iter().map(|s| &s.labels).collect();
    let report = total.report();
    let doc = serde_json::json!({
        "checkpoint": a.checkpoint,
        "step": ck.step,
        "scenes": data.len(),
        "majority_baseline_ssc_avg": majority_baseline(&gts, a.region)?,
        "report": report,
    });
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, serde_json::to_string_pretty(&doc)?)?;
    fs::write(a.out.with_extension("csv"), csv)?;
    println!(
        "SC precision {:.3} recall {:.3} IoU {:.3} | SSC avg {}",
        report.sc_precision,
        report.sc_recall,
        report.sc_iou,
        report.ssc_avg.map(|v| format!("{v:.3}")).unwrap_or_else(|| "undefined".into())
    );
    Ok(())
}

fn probe_cmd(a: ProbeArgs) -> Result<(), BoxError> {
    let levels = a.levels.clone().unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
    let targets = a.checkpoints.iter().map(ProbeTarget::load).collect::<Result<Vec<_>, _>>()?;
    let first = Checkpoint::load(&a.checkpoints[0])?;
    let tsdf: TsdfOptions = first
        .meta
        .get("config")
        .and_then(|c| c.get("tsdf"))
        .map(|t| serde_json::from_value(t.clone()))
        .transpose()?
        .unwrap_or_default();
    let data = Dataset::load(&a.data, &tsdf)?;
    let _guard = RunDir::claim(&a.out, a.overwrite, false)?;
    let curve = noise_curve(&targets, &data, &levels, &a.seeds)?;
    curve.write(&a.out)?;
    let mut inputs = dataset_inputs(&a.data)?;
    inputs.extend(a.checkpoints.iter().cloned());
    write_run(
        &a.out,
        &RunRecord::new(
            "probe",
            true,
            serde_json::json!({ "checkpoints": a.checkpoints, "data": a.data, "levels": levels, "seeds": a.seeds, "tsdf": tsdf }),
            hash_inputs(&inputs)?,
        ),
    )?;
    for t in &curve.trends {
        let per: Vec<String> = t.per_seed.iter().map(|(s, r)| format!("seed {s}: {r:.3}")).collect();
        println!("{} ({}): spearman {:.3} [{}]", t.checkpoint, t.variant, t.overall, per.join(", "));
    }
    Ok(())
}

fn inspect_cmd(a: InspectArgs) -> Result<(), BoxError> {
    let mut out = std::io::stdout().lock();
    let bytes = fs::read(&a.path).map_err(|e| format!("{}: {e}", a.path.display()))?;
    if bytes.starts_with(crate::voxcore::sscv::MAGIC) {
        let f = SscvFile::read_from(bytes.as_slice())?;
        writeln!(out, "SSCV {}x{}x{}, {} channel(s)", f.dims[0], f.dims[1], f.dims[2], f.channels)?;
        match &f.payload {
            SscvPayload::Labels(_) => {
                let vol = f.clone().into_labels(&GridSpec::default())?;
                writeln!(out, "class histogram:")?;
                for (c, n) in vol.histogram().iter().enumerate() {
                    writeln!(out, "  {c}: {n}")?;
                }
            }
            SscvPayload::Values(v) => {
                let lo = v.iter().copied().fold(f32::INFINITY, f32::min);
                let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64;
                writeln!(out, "values: min {lo} max {hi} mean {mean:.4}")?;
            }
        }
        match &f.visibility {
            Some(vis) => {
                let mut c = [0usize; 3];
                vis.iter().for_each(|&v| c[v as usize] += 1);
                writeln!(out, "visibility: observed {} occluded {} out_of_view {}", c[0], c[1], c[2])?;
            }
            None => writeln!(out, "visibility: none")?,
        }
    } else if bytes.starts_with(crate::nets::checkpoint::MAGIC) {
        let ck = Checkpoint::from_bytes(&bytes)?;
        let count = |prefix: &str| -> usize {
            ck.arrays.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, a)| a.data.len()).sum()
        };
        writeln!(out, "checkpoint at step {}", ck.step)?;
        if let Some(cfg) = ck.meta.get("config") {
            if let Ok(cfg) = serde_json::from_value::<TrainConfig>(cfg.clone()) {
                writeln!(out, "variant {}", cfg.variant_name())?;
            }
        }
        writeln!(out, "generator values {}, discriminator values {}", count("gen/"), count("disc/"))?;
        writeln!(out, "arrays {}", ck.arrays.len())?;
        writeln!(out, "sha256 {}", ck.hash())?;
    } else {
        let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| format!("{}: not an SSCV file, checkpoint or manifest ({e})", a.path.display()))?;
        let g = &m.scene_config.grid;
        writeln!(out, "manifest: {} scenes, grid {}x{}x{}, {} classes", m.scenes.len(), g.height, g.width, g.depth, g.num_classes)?;
    }
    Ok(())
}

/// Parses `argv` and runs the subcommand; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Probe(a) => probe_cmd(a),
        Command::Inspect(a) => inspect_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
