use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mvassoc::association::{
    associate_scene, parse_scene_association, scene_association_to_json, LambdaMode,
    SceneAssociationRecord, ScorerConfig, ScorerMode, DEFAULT_EPIPOLAR_WEIGHT, DEFAULT_THRESHOLD,
};
use mvassoc::descriptors::DEFAULT_ZOOM_OUT_RATIO;
use mvassoc::metrics::{evaluate, serialize_levels, scene_evaluations, ApPooling, EvalOptions, MetricsReport, PairEvaluation};
use mvassoc::scene::{load_embeddings, load_scene, EmbeddingTable, Scene};
use mvassoc::synth::{export_suite, generate_suite, load_manifest, EmbeddingMode, SimConfig, MANIFEST_FILE};
use mvassoc::{Error, Result};

/// Multi-view instance association benchmark.
#[derive(Parser, Debug)]
#[command(name = "mvassoc", version, about)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
    /// First seed when `--seeds` is not given.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Report format written to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes, sidecars and a manifest.
    Synth(SynthArgs),
    /// Associate instances across every view pair of each scene.
    Associate(AssociateArgs),
    /// Score association output against the scenes' instance ids.
    Evaluate(EvaluateArgs),
    /// Sweep one parameter and emit one metrics row per value.
    Sweep(SweepArgs),
    /// Check scene files and embedding sidecars.
    Validate(ValidateArgs),
}

fn parse_seeds(s: &str) -> std::result::Result<Range<u64>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected START..END, got {s:?}"))?;
    let start: u64 = a.trim().parse().map_err(|e| format!("bad start {a:?}: {e}"))?;
    let end: u64 = b.trim().parse().map_err(|e| format!("bad end {b:?}: {e}"))?;
    if start >= end {
        return Err(format!("seed range {s} is empty"));
    }
    Ok(start..end)
}

fn fraction(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("{v} is outside [0, 1]"));
    }
    Ok(v)
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(format!("{v} must be finite and >= 0"));
    }
    Ok(v)
}

fn ratio(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(v >= 1.0 && v.is_finite()) {
        return Err(format!("{v} must be >= 1"));
    }
    Ok(v)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum EmbeddingArg {
    Unique,
    Class,
}

#[derive(Args, Debug, Clone)]
struct SimArgs {
    /// Seed range START..END (end exclusive).
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Range<u64>>,
    #[arg(long, default_value_t = 6)]
    min_objects: usize,
    #[arg(long, default_value_t = 73)]
    max_objects: usize,
    #[arg(long, default_value_t = 9)]
    cameras: usize,
    #[arg(long, default_value_t = 0.3, value_parser = fraction)]
    identical_fraction: f64,
    #[arg(long, default_value_t = 0.3, value_parser = fraction)]
    elevated_fraction: f64,
    #[arg(long, default_value_t = 0.1, value_parser = fraction)]
    occlusion_rate: f64,
    #[arg(long, default_value_t = 0.1, value_parser = non_negative)]
    noise_sigma: f64,
    /// Table side length in meters.
    #[arg(long, default_value_t = 0.8)]
    table_extent: f64,
    #[arg(long, value_enum, default_value_t = EmbeddingArg::Unique)]
    embedding_mode: EmbeddingArg,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    /// Zoom-out ratio used for the oracle surrounding vectors.
    #[arg(long, default_value_t = DEFAULT_ZOOM_OUT_RATIO, value_parser = ratio)]
    sim_zoom_out: f64,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        SimConfig {
            seed: 0,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            n_cameras: self.cameras,
            identical_fraction: self.identical_fraction,
            elevated_fraction: self.elevated_fraction,
            full_occlusion_rate: self.occlusion_rate,
            embedding_noise_sigma: self.noise_sigma,
            table_extent: self.table_extent,
            embedding_mode: match self.embedding_mode {
                EmbeddingArg::Unique => EmbeddingMode::UniqueInstance,
                EmbeddingArg::Class => EmbeddingMode::ClassLevel,
            },
            embedding_dim: self.dim,
            zoom_out_ratio: self.sim_zoom_out,
            ..SimConfig::default()
        }
    }

    fn seeds(&self, first: u64) -> Range<u64> {
        self.seeds.clone().unwrap_or(first..first + 1)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Appearance,
    Asnet,
    Vbow,
    Homography,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum LambdaArg {
    Clamped,
    Raw,
}

#[derive(Args, Debug, Clone)]
struct ScorerArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Appearance)]
    mode: ModeArg,
    /// Add the epipolar soft constraint.
    #[arg(long)]
    epipolar: bool,
    #[arg(long, default_value_t = DEFAULT_EPIPOLAR_WEIGHT, value_parser = non_negative)]
    epipolar_weight: f64,
    /// Matches with normalized distance above this are rejected.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, value_parser = fraction)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = LambdaArg::Clamped)]
    lambda: LambdaArg,
    /// Zoom-out ratio the sidecar's surrounding vectors were computed with.
    #[arg(long, default_value_t = DEFAULT_ZOOM_OUT_RATIO, value_parser = ratio)]
    zoom_out: f64,
}

impl ScorerArgs {
    fn config(&self) -> ScorerConfig {
        ScorerConfig {
            mode: match self.mode {
                ModeArg::Appearance => ScorerMode::AppearanceOnly,
                ModeArg::Asnet => ScorerMode::AsnetFusion,
                ModeArg::Vbow => ScorerMode::Vbow,
                ModeArg::Homography => ScorerMode::Homography,
            },
            use_epipolar: self.epipolar,
            epipolar_weight: self.epipolar_weight,
            threshold: self.threshold,
            zoom_out_ratio: self.zoom_out,
            lambda_mode: match self.lambda {
                LambdaArg::Clamped => LambdaMode::Clamped,
                LambdaArg::Raw => LambdaMode::Raw,
            },
        }
    }
}

#[derive(Args, Debug)]
struct AssociateArgs {
    /// Scene JSON, manifest, or a directory holding either.
    #[arg(long)]
    input: PathBuf,
    /// Directory for `<scene_id>.assoc.json` files.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scorer: ScorerArgs,
    /// Leave the per-pair distance matrices out of the output.
    #[arg(long)]
    no_distances: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PoolingArg {
    Global,
    PerPair,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    #[arg(long, default_value_t = 15.0)]
    bin_width: f64,
    #[arg(long, default_value_t = 0.95, value_parser = fraction)]
    recall_target: f64,
    #[arg(long, value_enum, default_value_t = PoolingArg::Global)]
    pooling: PoolingArg,
}

impl EvalArgs {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            recall_target: self.recall_target,
            bin_width: self.bin_width,
            pooling: match self.pooling {
                PoolingArg::Global => ApPooling::Global,
                PoolingArg::PerPair => ApPooling::PerPairAverage,
            },
            ..EvalOptions::default()
        }
    }
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Scene JSON, manifest, or a directory holding either.
    #[arg(long)]
    scenes: PathBuf,
    /// Directory of association output, or a single output file.
    #[arg(long)]
    associations: PathBuf,
    /// Also write `metrics.json` and `metrics.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    ZoomOut,
    EpipolarWeight,
    Threshold,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated grid.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    values: Vec<f64>,
    /// Scenes on disk; without it a synthetic suite is generated.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write the rows here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Scene JSON, manifest, or a directory holding either.
    input: PathBuf,
    /// Sidecar for a single scene (defaults to the scene path with `.mteb`).
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

fn require_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    Ok(())
}

/// Scene and sidecar paths named by a scene file, a manifest, or a directory.
fn resolve_inputs(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    require_exists(path)?;
    let manifest_at = |m: &Path| -> Result<Vec<(PathBuf, PathBuf)>> {
        let dir = m.parent().unwrap_or(Path::new("."));
        Ok(load_manifest(m)?
            .scenes
            .into_iter()
            .map(|e| (dir.join(e.scene), dir.join(e.embeddings)))
            .collect())
    };
    if path.is_dir() {
        let manifest = path.join(MANIFEST_FILE);
        if manifest.exists() {
            return manifest_at(&manifest);
        }
        let mut scenes: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.ends_with(".json") && !name.ends_with(".assoc.json") && !name.starts_with("metrics")
            })
            .collect();
        scenes.sort();
        if scenes.is_empty() {
            return Err(Error::InvalidArgument(format!("{} holds no scene files", path.display())));
        }
        return Ok(scenes.into_iter().map(|s| (s.clone(), s.with_extension("mteb"))).collect());
    }
    if path.file_name().and_then(|n| n.to_str()) == Some(MANIFEST_FILE) {
        return manifest_at(path);
    }
    Ok(vec![(path.to_path_buf(), path.with_extension("mteb"))])
}

fn load_inputs(path: &Path, need_embeddings: bool) -> Result<Vec<(Scene, EmbeddingTable)>> {
    let mut out = Vec::new();
    for (scene_path, emb_path) in resolve_inputs(path)? {
        let scene = load_scene(&scene_path)?;
        let emb = if need_embeddings || emb_path.exists() {
            load_embeddings(&emb_path, &scene)?
        } else {
            EmbeddingTable::new(1)?
        };
        out.push((scene, emb));
    }
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(args: &SynthArgs, seed: u64) -> Result<()> {
    let config = args.sim.config();
    config.validate()?;
    let seeds = args.sim.seeds(seed);
    let manifest = export_suite(&config, seeds, &args.out)?;
    eprintln!("wrote {} scenes to {}", manifest.scenes.len(), args.out.display());
    Ok(())
}

fn associate_all(inputs: &[(Scene, EmbeddingTable)], config: &ScorerConfig, with_distances: bool) -> Result<Vec<SceneAssociationRecord>> {
    inputs
        .iter()
        .map(|(scene, emb)| {
            let assoc = associate_scene(scene, emb, config)?;
            Ok(SceneAssociationRecord::new(&scene.scene_id, &assoc, with_distances))
        })
        .collect()
}

fn cmd_associate(args: &AssociateArgs) -> Result<()> {
    let config = args.scorer.config();
    config.validate()?;
    let inputs = load_inputs(&args.input, config.mode != ScorerMode::Homography)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for record in associate_all(&inputs, &config, !args.no_distances)? {
        let path = args.out.join(format!("{}.assoc.json", record.scene_id));
        write_file(&path, &(scene_association_to_json(&record) + "\n"))?;
    }
    eprintln!("associated {} scenes into {}", inputs.len(), args.out.display());
    Ok(())
}

fn load_association_records(path: &Path) -> Result<Vec<SceneAssociationRecord>> {
    require_exists(path)?;
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".assoc.json")))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
            parse_scene_association(&text).map_err(|e| Error::Schema(format!("{}: {e}", f.display())))
        })
        .collect()
}

fn join_records(scenes: &[Scene], records: &[SceneAssociationRecord]) -> Result<Vec<PairEvaluation>> {
    let mut evals = Vec::new();
    for record in records {
        let scene = scenes
            .iter()
            .find(|s| s.scene_id == record.scene_id)
            .ok_or_else(|| Error::GroundTruthMismatch(format!("no scene with id {}", record.scene_id)))?;
        evals.extend(scene_evaluations(scene, record)?);
    }
    Ok(evals)
}

fn render(report: &MetricsReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json() + "\n",
        Format::Csv => report.to_csv(),
    }
}

fn cmd_evaluate(args: &EvaluateArgs, format: Format) -> Result<()> {
    let scenes: Vec<Scene> = resolve_inputs(&args.scenes)?
        .iter()
        .map(|(s, _)| load_scene(s))
        .collect::<Result<_>>()?;
    let records = load_association_records(&args.associations)?;
    let evals = join_records(&scenes, &records)?;
    let report = evaluate(&evals, &args.eval.options())?;
    if let Some(dir) = &args.out {
        write_file(&dir.join("metrics.json"), &render(&report, Format::Json))?;
        write_file(&dir.join("metrics.csv"), &render(&report, Format::Csv))?;
    }
    print!("{}", render(&report, format));
    Ok(())
}

#[derive(serde::Serialize)]
struct SweepRow {
    param: &'static str,
    value: f64,
    pairs: usize,
    matches: usize,
    ap: Option<f64>,
    fpr95: Option<f64>,
    #[serde(serialize_with = "serialize_levels")]
    ipaa: Vec<(u32, f64)>,
}

fn sweep_rows_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("param,value,pairs,matches,ap,fpr95");
    if let Some(first) = rows.first() {
        for (x, _) in &first.ipaa {
            out.push_str(&format!(",ipaa{x}"));
        }
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{}", r.param, r.value, r.pairs, r.matches, opt(r.ap), opt(r.fpr95)));
        for (_, v) in &r.ipaa {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

fn cmd_sweep(args: &SweepArgs, seed: u64, format: Format) -> Result<()> {
    if args.values.is_empty() {
        return Err(Error::InvalidArgument("empty sweep grid".into()));
    }
    let base_scorer = args.scorer.config();
    base_scorer.validate()?;
    let sim = args.sim.config();
    sim.validate()?;
    let seeds = args.sim.seeds(seed);
    let from_disk = match &args.input {
        Some(path) => {
            if args.param == SweepParam::ZoomOut {
                return Err(Error::InvalidArgument(
                    "a zoom-out sweep regenerates surrounding vectors and needs synthetic input".into(),
                ));
            }
            Some(load_inputs(path, base_scorer.mode != ScorerMode::Homography)?)
        }
        None => None,
    };
    let synthetic = |zoom: f64| -> Result<Vec<(Scene, EmbeddingTable)>> {
        let config = SimConfig {
            zoom_out_ratio: zoom,
            ..sim.clone()
        };
        Ok(generate_suite(&config, seeds.clone())?
            .into_iter()
            .map(|(s, _, e)| (s, e))
            .collect())
    };
    let fixed = match from_disk {
        Some(v) => Some(v),
        None if args.param != SweepParam::ZoomOut => Some(synthetic(sim.zoom_out_ratio)?),
        None => None,
    };
    let options = args.eval.options();
    let mut rows = Vec::with_capacity(args.values.len());
    for &value in &args.values {
        let mut scorer = base_scorer.clone();
        let regenerated;
        let inputs = match args.param {
            SweepParam::ZoomOut => {
                scorer.zoom_out_ratio = value;
                regenerated = synthetic(value)?;
                &regenerated
            }
            SweepParam::EpipolarWeight => {
                scorer.use_epipolar = true;
                scorer.epipolar_weight = value;
                fixed.as_ref().unwrap()
            }
            SweepParam::Threshold => {
                scorer.threshold = value;
                fixed.as_ref().unwrap()
            }
        };
        scorer.validate()?;
        let records = associate_all(inputs, &scorer, true)?;
        let matches = records.iter().flat_map(|r| &r.pairs).map(|p| p.matches.len()).sum();
        let scenes: Vec<Scene> = inputs.iter().map(|(s, _)| s.clone()).collect();
        let report = evaluate(&join_records(&scenes, &records)?, &options)?;
        rows.push(SweepRow {
            param: match args.param {
                SweepParam::ZoomOut => "zoom_out",
                SweepParam::EpipolarWeight => "epipolar_weight",
                SweepParam::Threshold => "threshold",
            },
            value,
            pairs: report.pairs,
            matches,
            ap: report.ap,
            fpr95: report.fpr95,
            ipaa: report.ipaa,
        });
    }
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n",
        Format::Csv => sweep_rows_csv(&rows),
    };
    if let Some(path) = &args.out {
        write_file(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let inputs = match &args.embeddings {
        Some(emb) => {
            require_exists(&args.input)?;
            vec![(args.input.clone(), emb.clone())]
        }
        None => resolve_inputs(&args.input)?,
    };
    for (scene_path, emb_path) in inputs {
        let scene = load_scene(&scene_path)?;
        let emb = load_embeddings(&emb_path, &scene)?;
        let missing = scene
            .views
            .iter()
            .flat_map(|v| v.instances.iter().map(move |i| (v.camera_id(), i.instance_id)))
            .find(|&(c, i)| emb.get(c, i).is_none());
        if let Some((camera_id, instance_id)) = missing {
            return Err(Error::MissingEmbedding { camera_id, instance_id });
        }
        println!(
            "ok {}: {} views, {} instances, {} embeddings of dim {}",
            scene.scene_id,
            scene.views.len(),
            scene.instance_count(),
            emb.len(),
            emb.dim()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs as usize)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, cli.seed),
        Command::Associate(a) => cmd_associate(a),
        Command::Evaluate(a) => cmd_evaluate(a, cli.format),
        Command::Sweep(a) => cmd_sweep(a, cli.seed, cli.format),
        Command::Validate(a) => cmd_validate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
