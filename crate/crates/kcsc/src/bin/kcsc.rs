use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use kcsc::baselines::{convfista_fd_encode, fcsc_shm_encode, reconstruct_dense};
use kcsc::bench::{
    quality_rows, timing_rows, write_csv, QualitySpec, SolverKind, TimingSpec,
};
use kcsc::error::{Error, Result};
use kcsc::ingest::{ingest, read_recording, StftConfig};
use kcsc::io::{
    list_signal_files, load_model, read_tensor, save_model, write_tensor, ModelActivations,
    ModelMetadata, RunManifest, MODEL_FORMAT_VERSION,
};
use kcsc::solver::{encode, fit, reconstruct, SolverConfig};
use kcsc::synth::{generate, snr, SynthConfig};
use kcsc::tensor::DenseTensor;
use kcsc::zstep::RegWeights;

#[derive(Parser)]
#[command(
    name = "kcsc",
    about = "Convolutional sparse coding with Kruskal activation tensors",
    version
)]
struct Cli {
    /// Cap the worker thread pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known dictionary and activations.
    Synth(SynthArgs),
    /// Convert a multichannel recording into a spectrogram tensor.
    Ingest(IngestArgs),
    /// Learn a dictionary and activations from signals.
    Fit(FitArgs),
    /// Infer activations for signals under a fixed dictionary.
    Encode(EncodeArgs),
    /// Reconstruct signals from a saved model.
    Reconstruct(ReconstructArgs),
    /// Run quality or timing benchmarks and write a CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for signals and the ground-truth model.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with synthesis settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Signal shape, e.g. 25,25,25.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    signals: Option<usize>,
    #[arg(long)]
    atoms: Option<usize>,
    /// Atom window, e.g. 5,5,5.
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    /// Probability that an activation factor entry is nonzero.
    #[arg(long)]
    density: Option<f64>,
    /// Target SNR in dB; omit for noiseless signals.
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// Recording input: a .json header next to raw samples, or a .csv.
    #[arg(long)]
    input: PathBuf,
    /// Output KTNS tensor path.
    #[arg(long)]
    out: PathBuf,
    /// Sampling rate in Hz, required for CSV input.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    overlap: Option<f64>,
    /// Bandpass range in Hz, e.g. 1,20.
    #[arg(long)]
    band: Option<String>,
    /// Kept frequency range in Hz, e.g. 0.17,14.1.
    #[arg(long)]
    crop: Option<String>,
    #[arg(long)]
    nfft: Option<usize>,
    /// Emit power instead of magnitude.
    #[arg(long)]
    power: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SolverOpts {
    /// TOML file with solver settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    /// Atom window, e.g. 5,5,5.
    #[arg(long)]
    window: Option<String>,
    /// Uniform l1 weight across modes.
    #[arg(long)]
    alpha: Option<f64>,
    /// Uniform ridge weight across modes.
    #[arg(long)]
    beta: Option<f64>,
    /// Per-mode l1 weights, e.g. 0.1,0.1,0.05.
    #[arg(long)]
    alphas: Option<String>,
    /// Per-mode ridge weights.
    #[arg(long)]
    betas: Option<String>,
    /// Constrain activation factors to be nonnegative.
    #[arg(long)]
    nonneg: bool,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    outer_tol: Option<f64>,
    #[arg(long)]
    z_iters: Option<usize>,
    #[arg(long)]
    z_tol: Option<f64>,
    #[arg(long)]
    d_iters: Option<usize>,
    #[arg(long)]
    d_tol: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Guarantee a non-increasing objective at every block update.
    #[arg(long)]
    monotone: bool,
    /// Disable the cached block-diagonal Gram representation.
    #[arg(long)]
    no_gram_opt: bool,
    /// Mode visiting order, e.g. 2,0,1.
    #[arg(long)]
    mode_order: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    /// Directory of y_<n>.ktns signals.
    #[arg(long)]
    data: PathBuf,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverOpts,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model directory providing the fixed dictionary.
    #[arg(long, conflicts_with = "dict")]
    model: Option<PathBuf>,
    /// KTNS dictionary stack, as written by fit or synth.
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// kcsc, fcsc-shm or convfista-fd.
    #[arg(long, default_value = "kcsc")]
    solver: String,
    #[command(flatten)]
    opts: SolverOpts,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Model directory written by fit or encode.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reconstruct a single signal index instead of all.
    #[arg(long)]
    signal: Option<usize>,
    /// Atom indices to drop from the reconstruction, e.g. 0,2.
    #[arg(long)]
    exclude_atoms: Option<String>,
    /// Directory of y_<n>.ktns signals to score the reconstruction against.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// quality or timing.
    #[arg(long, default_value = "quality")]
    suite: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Solvers to include.
    #[arg(long, default_value = "kcsc,fcsc-shm,convfista-fd")]
    solvers: String,
    /// Signal shape for the quality suite.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    signals: Option<usize>,
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long)]
    window: Option<String>,
    /// Kruskal ranks to sweep, e.g. 1,2,3.
    #[arg(long)]
    ranks: Option<String>,
    /// l1 weights to sweep.
    #[arg(long)]
    alphas: Option<String>,
    /// Ridge weights to sweep.
    #[arg(long)]
    betas: Option<String>,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Edge lengths for the timing suite, e.g. 16,32,64.
    #[arg(long)]
    sizes: Option<String>,
    /// Timed iterations per subproblem in the timing suite.
    #[arg(long)]
    iters: Option<usize>,
    /// Skip the gram-disabled timing variant.
    #[arg(long)]
    no_gram_variants: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Shape(_) | Error::Invalid(_) => 2,
                Error::Io { .. } | Error::Format { .. } => 3,
                Error::Divergence(_) => 4,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args, cli.threads),
        Command::Ingest(args) => cmd_ingest(args, cli.threads),
        Command::Fit(args) => cmd_fit(args, cli.threads),
        Command::Encode(args) => cmd_encode(args, cli.threads),
        Command::Reconstruct(args) => cmd_reconstruct(args, cli.threads),
        Command::Bench(args) => cmd_bench(args, cli.threads),
    }
}

fn parse_usize_list(text: &str, what: &str) -> Result<Vec<usize>> {
    text.split([',', 'x'])
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::invalid(format!("bad {what} entry {s:?}: {e}")))
        })
        .collect()
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad {what} entry {s:?}: {e}")))
        })
        .collect()
}

fn parse_pair(text: &str, what: &str) -> Result<(f64, f64)> {
    let vals = parse_f64_list(text, what)?;
    if vals.len() != 2 {
        return Err(Error::invalid(format!("{what} needs exactly two values, got {text:?}")));
    }
    Ok((vals[0], vals[1]))
}

fn exists_error(path: &Path) -> Error {
    Error::io(
        path,
        std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            "output already exists, pass --force to overwrite",
        ),
    )
}

fn prepare_output_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        let occupied = path
            .read_dir()
            .map(|mut d| d.next().is_some())
            .unwrap_or(true);
        if occupied && !force {
            return Err(exists_error(path));
        }
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn prepare_output_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(exists_error(path));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn json_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn load_signals(dir: &Path) -> Result<Vec<DenseTensor>> {
    let files = list_signal_files(dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no y_<n>.ktns signals found in {}",
            dir.display()
        )));
    }
    files.iter().map(read_tensor).collect()
}

/// Solver settings accepted from TOML; every field is optional and flags win.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SolverOverlay {
    atoms: Option<usize>,
    rank: Option<usize>,
    window: Option<Vec<usize>>,
    alpha: Option<f64>,
    beta: Option<f64>,
    alphas: Option<Vec<f64>>,
    betas: Option<Vec<f64>>,
    nonneg: Option<bool>,
    sweeps: Option<usize>,
    outer_tol: Option<f64>,
    z_iters: Option<usize>,
    z_tol: Option<f64>,
    d_iters: Option<usize>,
    d_tol: Option<f64>,
    rho: Option<f64>,
    restarts: Option<usize>,
    seed: Option<u64>,
    monotone: Option<bool>,
    gram_opt: Option<bool>,
    mode_order: Option<Vec<usize>>,
}

fn build_solver_config(opts: &SolverOpts, order: usize) -> Result<SolverConfig> {
    let overlay: SolverOverlay = match &opts.config {
        Some(path) => read_toml(path)?,
        None => SolverOverlay::default(),
    };
    let atoms = opts.atoms.or(overlay.atoms).unwrap_or(3);
    let rank = opts.rank.or(overlay.rank).unwrap_or(2);
    let window = match (&opts.window, &overlay.window) {
        (Some(text), _) => parse_usize_list(text, "window")?,
        (None, Some(w)) => w.clone(),
        (None, None) => vec![5; order],
    };
    let mut cfg = SolverConfig::new(atoms, rank, window);

    let mut alphas = vec![0.1; order];
    let mut betas = vec![0.0; order];
    if let Some(a) = overlay.alpha {
        alphas = vec![a; order];
    }
    if let Some(list) = &overlay.alphas {
        alphas = list.clone();
    }
    if let Some(b) = overlay.beta {
        betas = vec![b; order];
    }
    if let Some(list) = &overlay.betas {
        betas = list.clone();
    }
    if let Some(a) = opts.alpha {
        alphas = vec![a; order];
    }
    if let Some(text) = &opts.alphas {
        alphas = parse_f64_list(text, "alphas")?;
    }
    if let Some(b) = opts.beta {
        betas = vec![b; order];
    }
    if let Some(text) = &opts.betas {
        betas = parse_f64_list(text, "betas")?;
    }
    cfg.reg = RegWeights {
        alpha: alphas,
        beta: betas,
        nonnegative: opts.nonneg || overlay.nonneg.unwrap_or(false),
    };
    if let Some(v) = opts.sweeps.or(overlay.sweeps) {
        cfg.max_sweeps = v;
    }
    if let Some(v) = opts.outer_tol.or(overlay.outer_tol) {
        cfg.outer_tol = v;
    }
    if let Some(v) = opts.z_iters.or(overlay.z_iters) {
        cfg.z_max_iters = v;
    }
    if let Some(v) = opts.z_tol.or(overlay.z_tol) {
        cfg.z_tol = v;
    }
    if let Some(v) = opts.d_iters.or(overlay.d_iters) {
        cfg.d_max_iters = v;
    }
    if let Some(v) = opts.d_tol.or(overlay.d_tol) {
        cfg.d_tol = v;
    }
    if let Some(v) = opts.rho.or(overlay.rho) {
        cfg.rho = v;
    }
    if let Some(v) = opts.restarts.or(overlay.restarts) {
        cfg.restarts = v;
    }
    if let Some(v) = opts.seed.or(overlay.seed) {
        cfg.seed = v;
    }
    cfg.monotone = opts.monotone || overlay.monotone.unwrap_or(false);
    cfg.gram_opt = if opts.no_gram_opt {
        false
    } else {
        overlay.gram_opt.unwrap_or(true)
    };
    let mode_order = match (&opts.mode_order, &overlay.mode_order) {
        (Some(text), _) => Some(parse_usize_list(text, "mode order")?),
        (None, Some(seq)) => Some(seq.clone()),
        (None, None) => None,
    };
    cfg.mode_order = mode_order;
    Ok(cfg)
}

fn cmd_synth(args: SynthArgs, threads: Option<usize>) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(path) => read_toml(path)?,
        None => SynthConfig::default(),
    };
    if let Some(text) = &args.shape {
        cfg.shape = parse_usize_list(text, "shape")?;
    }
    if let Some(v) = args.signals {
        cfg.n_signals = v;
    }
    if let Some(v) = args.atoms {
        cfg.n_atoms = v;
    }
    if let Some(text) = &args.window {
        cfg.window = parse_usize_list(text, "window")?;
    }
    if let Some(v) = args.rank {
        cfg.rank = v;
    }
    if let Some(v) = args.density {
        cfg.density = v;
    }
    if let Some(v) = args.snr_db {
        cfg.snr_db = Some(v);
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    prepare_output_dir(&args.out, args.force)?;

    let start = Instant::now();
    let data = generate(&cfg)?;
    let mut outputs = Vec::new();
    for (n, y) in data.noisy.iter().enumerate() {
        let path = args.out.join(format!("y_{n}.ktns"));
        write_tensor(&path, y)?;
        outputs.push(path.display().to_string());
    }
    for (n, y) in data.clean.iter().enumerate() {
        let path = args.out.join(format!("clean_{n}.ktns"));
        write_tensor(&path, y)?;
        outputs.push(path.display().to_string());
    }
    let truth_dir = args.out.join("truth");
    let meta = ModelMetadata {
        format_version: MODEL_FORMAT_VERSION,
        solver: "kcsc".to_string(),
        signal_shape: cfg.shape.clone(),
        n_signals: cfg.n_signals,
        n_atoms: cfg.n_atoms,
        rank: cfg.rank,
        window: cfg.window.clone(),
        seed: cfg.seed,
        config: json_value(&cfg),
        objective_trace: Vec::new(),
    };
    save_model(
        &truth_dir,
        &data.dictionary,
        &ModelActivations::Kruskal(data.activations.clone()),
        &meta,
    )?;
    outputs.push(truth_dir.display().to_string());

    let mut manifest = RunManifest::new("synth");
    manifest.config = json_value(&cfg);
    manifest.outputs = outputs;
    manifest.seed = Some(cfg.seed);
    manifest.threads = threads;
    manifest
        .timings_sec
        .insert("total".to_string(), start.elapsed().as_secs_f64());
    if let Some(target) = cfg.snr_db {
        for (n, (c, y)) in data.clean.iter().zip(&data.noisy).enumerate() {
            let mut row = BTreeMap::new();
            row.insert("signal".to_string(), json_value(&n));
            row.insert("snr_db".to_string(), json_value(&snr(c, y)?));
            row.insert("target_snr_db".to_string(), json_value(&target));
            manifest.metrics.push(row);
        }
    }
    manifest.save(args.out.join("run_manifest.json"))?;
    println!(
        "wrote {} signals of shape {:?} to {}",
        cfg.n_signals,
        cfg.shape,
        args.out.display()
    );
    Ok(())
}

fn cmd_ingest(args: IngestArgs, threads: Option<usize>) -> Result<()> {
    let mut cfg: StftConfig = match &args.config {
        Some(path) => read_toml(path)?,
        None => StftConfig::default(),
    };
    if let Some(v) = args.window {
        cfg.window = v;
    }
    if let Some(v) = args.overlap {
        cfg.overlap = v;
    }
    if let Some(text) = &args.band {
        cfg.band = parse_pair(text, "band")?;
    }
    if let Some(text) = &args.crop {
        cfg.crop = parse_pair(text, "crop")?;
    }
    if let Some(v) = args.nfft {
        cfg.nfft = v;
    }
    if args.power {
        cfg.power = true;
    }
    prepare_output_file(&args.out, args.force)?;

    let start = Instant::now();
    let rec = read_recording(&args.input, args.rate)?;
    let read_s = start.elapsed().as_secs_f64();
    let tensor = ingest(&rec, &cfg)?;
    write_tensor(&args.out, &tensor)?;

    let mut manifest = RunManifest::new("ingest");
    manifest.config = json_value(&cfg);
    manifest.inputs = vec![args.input.display().to_string()];
    manifest.outputs = vec![args.out.display().to_string()];
    manifest.threads = threads;
    manifest.timings_sec.insert("read".to_string(), read_s);
    manifest
        .timings_sec
        .insert("total".to_string(), start.elapsed().as_secs_f64());
    let mut row = BTreeMap::new();
    row.insert("channels".to_string(), json_value(&rec.n_channels()));
    row.insert("samples".to_string(), json_value(&rec.n_samples()));
    row.insert("rate_hz".to_string(), json_value(&rec.rate));
    row.insert("tensor_shape".to_string(), json_value(&tensor.shape()));
    manifest.metrics.push(row);
    manifest.save(manifest_path_for(&args.out))?;
    println!(
        "ingested {} channels x {} samples into tensor {:?} at {}",
        rec.n_channels(),
        rec.n_samples(),
        tensor.shape(),
        args.out.display()
    );
    Ok(())
}

fn manifest_path_for(out_file: &Path) -> PathBuf {
    let name = out_file
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    out_file.with_file_name(format!("{name}.manifest.json"))
}

fn solver_metadata(
    solver: &str,
    cfg: &SolverConfig,
    shape: &[usize],
    n_signals: usize,
    trace: Vec<f64>,
) -> ModelMetadata {
    ModelMetadata {
        format_version: MODEL_FORMAT_VERSION,
        solver: solver.to_string(),
        signal_shape: shape.to_vec(),
        n_signals,
        n_atoms: cfg.n_atoms,
        rank: cfg.rank,
        window: cfg.window.clone(),
        seed: cfg.seed,
        config: json_value(cfg),
        objective_trace: trace,
    }
}

fn cmd_fit(args: FitArgs, threads: Option<usize>) -> Result<()> {
    let signals = load_signals(&args.data)?;
    let cfg = build_solver_config(&args.solver, signals[0].order())?;
    prepare_output_dir(&args.out, args.force)?;

    let start = Instant::now();
    let result = fit(&signals, &cfg)?;
    let total = start.elapsed().as_secs_f64();

    let meta = solver_metadata(
        "kcsc",
        &cfg,
        signals[0].shape(),
        signals.len(),
        result.objective_trace.clone(),
    );
    save_model(
        &args.out,
        &result.dictionary,
        &ModelActivations::Kruskal(result.activations.clone()),
        &meta,
    )?;

    let mut manifest = RunManifest::new("fit");
    manifest.config = json_value(&cfg);
    manifest.inputs = vec![args.data.display().to_string()];
    manifest.outputs = vec![args.out.display().to_string()];
    manifest.seed = Some(cfg.seed);
    manifest.threads = threads;
    manifest.timings_sec.insert("total".to_string(), total);
    manifest
        .timings_sec
        .insert("z_step".to_string(), result.z_seconds);
    manifest
        .timings_sec
        .insert("d_step".to_string(), result.d_seconds);
    let mut row = BTreeMap::new();
    row.insert("objective".to_string(), json_value(&result.objective));
    row.insert("sweeps".to_string(), json_value(&result.sweeps));
    row.insert("restart".to_string(), json_value(&result.restart));
    row.insert("converged".to_string(), json_value(&result.converged));
    row.insert(
        "z_inner_iterations".to_string(),
        json_value(&result.z_inner_iterations),
    );
    row.insert("d_iterations".to_string(), json_value(&result.d_iterations));
    manifest.metrics.push(row);
    manifest.save(args.out.join("run_manifest.json"))?;
    println!(
        "fit {} signals: objective {:.6e} after {} sweeps (restart {}), model at {}",
        signals.len(),
        result.objective,
        result.sweeps,
        result.restart,
        args.out.display()
    );
    Ok(())
}

fn cmd_encode(args: EncodeArgs, threads: Option<usize>) -> Result<()> {
    let signals = load_signals(&args.data)?;
    let dict = match (&args.model, &args.dict) {
        (Some(dir), None) => load_model(dir)?.0,
        (None, Some(path)) => kcsc::io::tensor_to_dictionary(&read_tensor(path)?)?,
        _ => {
            return Err(Error::invalid(
                "encode needs exactly one of --model or --dict".to_string(),
            ))
        }
    };
    let kind: SolverKind = args.solver.parse()?;
    let mut cfg = build_solver_config(&args.opts, signals[0].order())?;
    cfg.n_atoms = dict.n_atoms();
    cfg.window = dict.window().to_vec();
    prepare_output_dir(&args.out, args.force)?;

    let shape = signals[0].shape().to_vec();
    let start = Instant::now();
    let (activations, solver_name, objective, trace, iterations, converged) = match kind {
        SolverKind::Kcsc => {
            let result = encode(&signals, &dict, &cfg)?;
            (
                ModelActivations::Kruskal(result.activations.clone()),
                "kcsc",
                result.objective,
                result.objective_trace.clone(),
                result.z_inner_iterations,
                result.converged,
            )
        }
        SolverKind::FcscShm => {
            let fit = fcsc_shm_encode(
                &signals,
                &dict,
                cfg.reg.alpha[0],
                cfg.rho,
                cfg.z_tol,
                cfg.z_max_iters * cfg.max_sweeps,
            )?;
            (
                ModelActivations::Dense(fit.activations),
                "fcsc-shm",
                fit.objective,
                vec![fit.objective],
                fit.iterations,
                fit.converged,
            )
        }
        SolverKind::ConvFistaFd => {
            let fit = convfista_fd_encode(
                &signals,
                &dict,
                cfg.reg.alpha[0],
                cfg.z_tol,
                cfg.z_max_iters * cfg.max_sweeps,
            )?;
            (
                ModelActivations::Dense(fit.activations),
                "convfista-fd",
                fit.objective,
                vec![fit.objective],
                fit.iterations,
                fit.converged,
            )
        }
    };
    let total = start.elapsed().as_secs_f64();
    let meta = solver_metadata(solver_name, &cfg, &shape, signals.len(), trace);
    save_model(&args.out, &dict, &activations, &meta)?;

    let mut manifest = RunManifest::new("encode");
    manifest.config = json_value(&cfg);
    manifest.inputs = vec![args.data.display().to_string()];
    if let Some(dir) = &args.model {
        manifest.inputs.push(dir.display().to_string());
    }
    if let Some(path) = &args.dict {
        manifest.inputs.push(path.display().to_string());
    }
    manifest.outputs = vec![args.out.display().to_string()];
    manifest.seed = Some(cfg.seed);
    manifest.threads = threads;
    manifest.timings_sec.insert("total".to_string(), total);
    let mut row = BTreeMap::new();
    row.insert("solver".to_string(), json_value(&solver_name));
    row.insert("objective".to_string(), json_value(&objective));
    row.insert("iterations".to_string(), json_value(&iterations));
    row.insert("converged".to_string(), json_value(&converged));
    manifest.metrics.push(row);
    manifest.save(args.out.join("run_manifest.json"))?;
    println!(
        "encoded {} signals with {}: objective {objective:.6e}, model at {}",
        signals.len(),
        solver_name,
        args.out.display()
    );
    Ok(())
}

fn cmd_reconstruct(args: ReconstructArgs, threads: Option<usize>) -> Result<()> {
    let (dict, activations, meta) = load_model(&args.model)?;
    let exclude = match &args.exclude_atoms {
        Some(text) => parse_usize_list(text, "excluded atom")?,
        None => Vec::new(),
    };
    let indices: Vec<usize> = match args.signal {
        Some(n) => {
            if n >= activations.n_signals() {
                return Err(Error::invalid(format!(
                    "signal {n} out of range, model holds {}",
                    activations.n_signals()
                )));
            }
            vec![n]
        }
        None => (0..activations.n_signals()).collect(),
    };
    prepare_output_dir(&args.out, args.force)?;
    let references = match &args.reference {
        Some(dir) => Some(load_signals(dir)?),
        None => None,
    };

    let start = Instant::now();
    let mut manifest = RunManifest::new("reconstruct");
    manifest.config = json_value(&serde_json::json!({
        "model": args.model.display().to_string(),
        "exclude_atoms": exclude,
        "signal": args.signal,
    }));
    manifest.inputs = vec![args.model.display().to_string()];
    let mut outputs = Vec::new();
    for &n in &indices {
        let recon = match &activations {
            ModelActivations::Kruskal(per_signal) => {
                reconstruct(&dict, &per_signal[n], &meta.signal_shape, &exclude)?
            }
            ModelActivations::Dense(per_signal) => {
                for &k in &exclude {
                    if k >= dict.n_atoms() {
                        return Err(Error::invalid(format!(
                            "cannot exclude atom {k}, model has {}",
                            dict.n_atoms()
                        )));
                    }
                }
                let kept: Vec<DenseTensor> = per_signal[n]
                    .iter()
                    .enumerate()
                    .map(|(k, z)| {
                        if exclude.contains(&k) {
                            DenseTensor::zeros(&meta.signal_shape)
                        } else {
                            z.clone()
                        }
                    })
                    .collect();
                reconstruct_dense(&dict, &kept, &meta.signal_shape)?
            }
        };
        let path = args.out.join(format!("recon_{n}.ktns"));
        write_tensor(&path, &recon)?;
        outputs.push(path.display().to_string());
        let mut row = BTreeMap::new();
        row.insert("signal".to_string(), json_value(&n));
        if let Some(refs) = &references {
            if n < refs.len() {
                row.insert("snr_db".to_string(), json_value(&snr(&refs[n], &recon)?));
            }
        }
        manifest.metrics.push(row);
    }
    manifest.outputs = outputs;
    manifest.threads = threads;
    manifest
        .timings_sec
        .insert("total".to_string(), start.elapsed().as_secs_f64());
    manifest.save(args.out.join("run_manifest.json"))?;
    println!(
        "reconstructed {} signals from {} into {}",
        indices.len(),
        args.model.display(),
        args.out.display()
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs, threads: Option<usize>) -> Result<()> {
    prepare_output_file(&args.out, args.force)?;
    let solvers: Vec<SolverKind> = args
        .solvers
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse())
        .collect::<Result<_>>()?;
    if solvers.is_empty() {
        return Err(Error::invalid("no solvers selected".to_string()));
    }
    let start = Instant::now();
    let (rows, config) = match args.suite.as_str() {
        "quality" => {
            let mut spec = QualitySpec {
                solvers,
                ..QualitySpec::default()
            };
            if let Some(text) = &args.shape {
                spec.synth.shape = parse_usize_list(text, "shape")?;
            }
            if let Some(v) = args.signals {
                spec.synth.n_signals = v;
            }
            if let Some(v) = args.atoms {
                spec.synth.n_atoms = v;
            }
            if let Some(text) = &args.window {
                spec.synth.window = parse_usize_list(text, "window")?;
            }
            if let Some(v) = args.snr_db {
                spec.synth.snr_db = Some(v);
            }
            if let Some(text) = &args.ranks {
                spec.ranks = parse_usize_list(text, "ranks")?;
            }
            if let Some(text) = &args.alphas {
                spec.alphas = parse_f64_list(text, "alphas")?;
            }
            if let Some(text) = &args.betas {
                spec.betas = parse_f64_list(text, "betas")?;
            }
            if let Some(v) = args.sweeps {
                spec.sweeps = v;
            }
            if let Some(v) = args.inner_iters {
                spec.inner_iters = v;
            }
            if let Some(v) = args.restarts {
                spec.restarts = v;
            }
            if let Some(v) = args.seed {
                spec.seed = v;
                spec.synth.seed = v;
            }
            let config = serde_json::json!({
                "suite": "quality",
                "synth": json_value(&spec.synth),
                "alphas": spec.alphas,
                "betas": spec.betas,
                "ranks": spec.ranks,
                "sweeps": spec.sweeps,
                "inner_iters": spec.inner_iters,
                "restarts": spec.restarts,
            });
            (quality_rows(&spec)?, config)
        }
        "timing" => {
            let mut spec = TimingSpec {
                solvers,
                ..TimingSpec::default()
            };
            if let Some(text) = &args.sizes {
                spec.sizes = parse_usize_list(text, "sizes")?;
            }
            if let Some(v) = args.atoms {
                spec.n_atoms = v;
            }
            if let Some(text) = &args.ranks {
                let ranks = parse_usize_list(text, "ranks")?;
                if ranks.len() != 1 {
                    return Err(Error::invalid(
                        "the timing suite takes exactly one rank".to_string(),
                    ));
                }
                spec.rank = ranks[0];
            }
            if let Some(text) = &args.window {
                spec.window = parse_usize_list(text, "window")?;
            }
            if let Some(v) = args.iters {
                spec.iters = v;
            }
            if let Some(v) = args.seed {
                spec.seed = v;
            }
            spec.gram_variants = !args.no_gram_variants;
            let config = serde_json::json!({
                "suite": "timing",
                "sizes": spec.sizes,
                "n_atoms": spec.n_atoms,
                "rank": spec.rank,
                "window": spec.window,
                "iters": spec.iters,
                "gram_variants": spec.gram_variants,
            });
            (timing_rows(&spec)?, config)
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown bench suite {other:?}, expected quality or timing"
            )))
        }
    };
    write_csv(&args.out, &rows)?;

    let mut manifest = RunManifest::new("bench");
    manifest.config = config;
    manifest.outputs = vec![args.out.display().to_string()];
    manifest.seed = args.seed;
    manifest.threads = threads;
    manifest
        .timings_sec
        .insert("total".to_string(), start.elapsed().as_secs_f64());
    for row in &rows {
        let mut entry = BTreeMap::new();
        entry.insert("solver".to_string(), json_value(&row.solver));
        entry.insert("shape".to_string(), json_value(&row.shape));
        entry.insert("metric".to_string(), json_value(&row.metric));
        entry.insert("value".to_string(), json_value(&row.value));
        manifest.metrics.push(entry);
    }
    manifest.save(manifest_path_for(&args.out))?;
    println!("wrote {} bench rows to {}", rows.len(), args.out.display());
    Ok(())
}
