//! Benchmark harness: encode-quality sweeps and per-iteration timing trends
//! with a stable long-format CSV schema.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;

use crate::baselines::{convfista_fd_encode, fcsc_shm_encode, reconstruct_dense};
use crate::error::{Error, Result};
use crate::solver::{encode, SolverConfig};
use crate::spectral::{dft, fft_columns, SpectralTensor};
use crate::synth::{align_and_rmse, composed_activations, generate, rmse, SynthConfig, SynthData};
use crate::tensor::DenseTensor;
use crate::zstep::{
    build_mode_cache, fista_mode_q, offmode_khatri_rao, FistaOptions, NaiveModeOperator,
};

pub const CSV_HEADER: &str =
    "solver,shape,n_signals,n_atoms,rank,alpha,beta,snr_db,seed,gram_opt,metric,value";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Kcsc,
    FcscShm,
    ConvFistaFd,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolverKind::Kcsc => "kcsc",
            SolverKind::FcscShm => "fcsc-shm",
            SolverKind::ConvFistaFd => "convfista-fd",
        };
        f.write_str(s)
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kcsc" => Ok(SolverKind::Kcsc),
            "fcsc-shm" => Ok(SolverKind::FcscShm),
            "convfista-fd" => Ok(SolverKind::ConvFistaFd),
            other => Err(Error::invalid(format!(
                "unknown solver {other:?}, expected kcsc, fcsc-shm or convfista-fd"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub solver: String,
    pub shape: Vec<usize>,
    pub n_signals: usize,
    pub n_atoms: usize,
    pub rank: usize,
    pub alpha: f64,
    pub beta: f64,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub gram_opt: bool,
    pub metric: String,
    pub value: f64,
}

pub fn shape_string(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

impl BenchRow {
    fn line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.solver,
            shape_string(&self.shape),
            self.n_signals,
            self.n_atoms,
            self.rank,
            self.alpha,
            self.beta,
            self.snr_db.map_or(String::new(), |s| s.to_string()),
            self.seed,
            self.gram_opt,
            self.metric,
            self.value
        )
    }
}

pub fn csv_text(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.line());
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    std::fs::write(path, csv_text(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct QualitySpec {
    pub synth: SynthConfig,
    pub solvers: Vec<SolverKind>,
    pub alphas: Vec<f64>,
    /// Ridge weights, swept for the Kruskal solver only.
    pub betas: Vec<f64>,
    /// Kruskal ranks, swept for the Kruskal solver only.
    pub ranks: Vec<usize>,
    pub sweeps: usize,
    pub inner_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for QualitySpec {
    fn default() -> Self {
        QualitySpec {
            synth: SynthConfig::default(),
            solvers: vec![SolverKind::Kcsc, SolverKind::FcscShm, SolverKind::ConvFistaFd],
            alphas: vec![0.1],
            betas: vec![0.0],
            ranks: vec![2],
            sweeps: 10,
            inner_iters: 200,
            restarts: 1,
            seed: 0,
        }
    }
}

struct RowBase {
    solver: String,
    shape: Vec<usize>,
    n_signals: usize,
    n_atoms: usize,
    rank: usize,
    alpha: f64,
    beta: f64,
    snr_db: Option<f64>,
    seed: u64,
    gram_opt: bool,
}

impl RowBase {
    fn row(&self, metric: &str, value: f64) -> BenchRow {
        BenchRow {
            solver: self.solver.clone(),
            shape: self.shape.clone(),
            n_signals: self.n_signals,
            n_atoms: self.n_atoms,
            rank: self.rank,
            alpha: self.alpha,
            beta: self.beta,
            snr_db: self.snr_db,
            seed: self.seed,
            gram_opt: self.gram_opt,
            metric: metric.to_string(),
            value,
        }
    }
}

fn quality_metric_rows(
    base: &RowBase,
    data: &SynthData,
    truth: &[Vec<DenseTensor>],
    estimates: &[Vec<DenseTensor>],
    objective: f64,
    iterations: u64,
    seconds: f64,
) -> Result<Vec<BenchRow>> {
    let mut z_err = 0.0;
    let mut y_err = 0.0;
    for ((t, e), clean) in truth.iter().zip(estimates).zip(&data.clean) {
        z_err += align_and_rmse(t, e)?.rmse;
        let recon = reconstruct_dense(&data.dictionary, e, clean.shape())?;
        y_err += rmse(clean, &recon)?;
    }
    let n = data.clean.len() as f64;
    let mut rows = vec![
        base.row("rmse_z", z_err / n),
        base.row("rmse_y", y_err / n),
        base.row("objective", objective),
        base.row("iterations", iterations as f64),
        base.row("seconds", seconds),
    ];
    if iterations > 0 {
        rows.push(base.row("seconds_per_iteration", seconds / iterations as f64));
    }
    Ok(rows)
}

/// Encodes one synthetic dataset with the true dictionary held fixed and
/// reports aligned activation error, reconstruction error against the clean
/// signals, final objective, and work counters for every solver and
/// hyperparameter combination.
pub fn quality_rows(spec: &QualitySpec) -> Result<Vec<BenchRow>> {
    let data = generate(&spec.synth)?;
    let truth: Vec<Vec<DenseTensor>> = data
        .activations
        .iter()
        .map(|acts| composed_activations(acts))
        .collect();
    let shape = spec.synth.shape.clone();
    let mut rows = Vec::new();
    for kind in &spec.solvers {
        match kind {
            SolverKind::Kcsc => {
                for &rank in &spec.ranks {
                    for &alpha in &spec.alphas {
                        for &beta in &spec.betas {
                            let mut cfg = SolverConfig::new(
                                data.dictionary.n_atoms(),
                                rank,
                                data.dictionary.window().to_vec(),
                            );
                            cfg.reg = crate::zstep::RegWeights::uniform(shape.len(), alpha, beta);
                            cfg.max_sweeps = spec.sweeps;
                            cfg.z_max_iters = spec.inner_iters;
                            cfg.restarts = spec.restarts;
                            cfg.seed = spec.seed;
                            let start = Instant::now();
                            let fit = encode(&data.noisy, &data.dictionary, &cfg)?;
                            let seconds = start.elapsed().as_secs_f64();
                            let estimates: Vec<Vec<DenseTensor>> = fit
                                .activations
                                .iter()
                                .map(|acts| composed_activations(acts))
                                .collect();
                            let base = RowBase {
                                solver: kind.to_string(),
                                shape: shape.clone(),
                                n_signals: data.noisy.len(),
                                n_atoms: data.dictionary.n_atoms(),
                                rank,
                                alpha,
                                beta,
                                snr_db: spec.synth.snr_db,
                                seed: spec.seed,
                                gram_opt: true,
                            };
                            rows.extend(quality_metric_rows(
                                &base,
                                &data,
                                &truth,
                                &estimates,
                                fit.objective,
                                fit.z_inner_iterations,
                                seconds,
                            )?);
                        }
                    }
                }
            }
            SolverKind::FcscShm | SolverKind::ConvFistaFd => {
                for &alpha in &spec.alphas {
                    let start = Instant::now();
                    let fit = match kind {
                        SolverKind::FcscShm => fcsc_shm_encode(
                            &data.noisy,
                            &data.dictionary,
                            alpha,
                            1.0,
                            1e-6,
                            spec.inner_iters * spec.sweeps.max(1),
                        )?,
                        _ => convfista_fd_encode(
                            &data.noisy,
                            &data.dictionary,
                            alpha,
                            1e-6,
                            spec.inner_iters * spec.sweeps.max(1),
                        )?,
                    };
                    let seconds = start.elapsed().as_secs_f64();
                    let base = RowBase {
                        solver: kind.to_string(),
                        shape: shape.clone(),
                        n_signals: data.noisy.len(),
                        n_atoms: data.dictionary.n_atoms(),
                        rank: 0,
                        alpha,
                        beta: 0.0,
                        snr_db: spec.synth.snr_db,
                        seed: spec.seed,
                        gram_opt: true,
                    };
                    rows.extend(quality_metric_rows(
                        &base,
                        &data,
                        &truth,
                        &fit.activations,
                        fit.objective,
                        fit.iterations,
                        seconds,
                    )?);
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct TimingSpec {
    /// Per-mode edge lengths; each size `m` benchmarks a cube of shape
    /// `[m; window.len()]`.
    pub sizes: Vec<usize>,
    pub n_atoms: usize,
    pub rank: usize,
    pub window: Vec<usize>,
    /// Inner iterations to time per subproblem.
    pub iters: usize,
    pub seed: u64,
    pub solvers: Vec<SolverKind>,
    /// Also time the Kruskal solver with the Gram cache disabled.
    pub gram_variants: bool,
}

impl Default for TimingSpec {
    fn default() -> Self {
        TimingSpec {
            sizes: vec![16, 32, 64],
            n_atoms: 3,
            rank: 2,
            window: vec![5, 5, 5],
            iters: 20,
            seed: 0,
            solvers: vec![SolverKind::Kcsc, SolverKind::FcscShm, SolverKind::ConvFistaFd],
            gram_variants: true,
        }
    }
}

/// Mean seconds per activation-update iteration for the Kruskal solver at a
/// given problem, excluding cache construction. With `gram` the subproblems
/// run through the precomputed per-frequency Gram blocks; without it every
/// gradient touches the full matricized spectra.
pub fn kcsc_z_iteration_seconds(
    data: &SynthData,
    rank: usize,
    iters: usize,
    gram: bool,
) -> Result<f64> {
    let y = &data.noisy[0];
    let shape = y.shape().to_vec();
    let order = shape.len();
    let yhat = dft(y);
    let atom_spectra: Vec<SpectralTensor> = data
        .dictionary
        .padded_atoms(&shape)?
        .iter()
        .map(dft)
        .collect();
    let factor_spectra: Vec<Vec<Array2<Complex64>>> = data.activations[0]
        .iter()
        .map(|act| {
            (0..order)
                .map(|q| {
                    let f = act.factor(q);
                    let mut m = Array2::zeros((f.nrows(), rank));
                    for r in 0..rank.min(f.ncols()) {
                        m.column_mut(r).assign(&f.column(r));
                    }
                    fft_columns(&m)
                })
                .collect()
        })
        .collect();
    let opts = FistaOptions {
        tol: 0.0,
        max_iters: iters,
        monotone: false,
    };
    let mut elapsed = 0.0;
    let mut total_iters = 0u64;
    for (q, &n_q) in shape.iter().enumerate() {
        let y_unfold = yhat.unfold(q);
        let atom_unfolds: Vec<Array2<Complex64>> =
            atom_spectra.iter().map(|s| s.unfold(q)).collect();
        let kr: Vec<Array2<Complex64>> = factor_spectra
            .iter()
            .map(|fs| offmode_khatri_rao(fs, q))
            .collect();
        let init: Vec<Array2<f64>> = (0..data.dictionary.n_atoms())
            .map(|_| Array2::zeros((n_q, rank)))
            .collect();
        let outcome = if gram {
            let cache = build_mode_cache(q, &y_unfold, &atom_unfolds, &kr)?;
            let t = Instant::now();
            let out = fista_mode_q(&cache, &init, 0.01, 0.0, false, &opts)?;
            elapsed += t.elapsed().as_secs_f64();
            out
        } else {
            let op = NaiveModeOperator::new(&y_unfold, &atom_unfolds, &kr)?;
            let t = Instant::now();
            let out = fista_mode_q(&op, &init, 0.01, 0.0, false, &opts)?;
            elapsed += t.elapsed().as_secs_f64();
            out
        };
        total_iters += outcome.iterations as u64;
    }
    if total_iters == 0 {
        return Err(Error::invalid("no iterations were timed".to_string()));
    }
    Ok(elapsed / total_iters as f64)
}

/// Mean per-iteration seconds of the dense baselines on the same instance,
/// forced through `iters` iterations by a zero tolerance.
pub fn baseline_iteration_seconds(
    data: &SynthData,
    kind: SolverKind,
    iters: usize,
) -> Result<f64> {
    let signals = std::slice::from_ref(&data.noisy[0]);
    let fit = match kind {
        SolverKind::ConvFistaFd => {
            convfista_fd_encode(signals, &data.dictionary, 0.01, 0.0, iters)?
        }
        SolverKind::FcscShm => {
            fcsc_shm_encode(signals, &data.dictionary, 0.01, 1.0, 0.0, iters)?
        }
        SolverKind::Kcsc => {
            return Err(Error::invalid(
                "use kcsc_z_iteration_seconds for the Kruskal solver".to_string(),
            ))
        }
    };
    if fit.iterations == 0 {
        return Err(Error::invalid("no iterations were timed".to_string()));
    }
    Ok(fit.loop_seconds / fit.iterations as f64)
}

/// Times the activation update of every requested solver across problem
/// sizes, emitting `seconds_per_iteration` rows.
pub fn timing_rows(spec: &TimingSpec) -> Result<Vec<BenchRow>> {
    if spec.sizes.is_empty() || spec.iters == 0 {
        return Err(Error::invalid("need at least one size and iteration".to_string()));
    }
    let mut rows = Vec::new();
    for &m in &spec.sizes {
        let shape = vec![m; spec.window.len()];
        let window: Vec<usize> = spec.window.iter().map(|w| (*w).min(m)).collect();
        let synth = SynthConfig {
            shape: shape.clone(),
            n_signals: 1,
            n_atoms: spec.n_atoms,
            window,
            rank: spec.rank,
            snr_db: None,
            seed: spec.seed,
            ..SynthConfig::default()
        };
        let data = generate(&synth)?;
        for kind in &spec.solvers {
            match kind {
                SolverKind::Kcsc => {
                    let mut variants = vec![true];
                    if spec.gram_variants {
                        variants.push(false);
                    }
                    for gram in variants {
                        let secs = kcsc_z_iteration_seconds(&data, spec.rank, spec.iters, gram)?;
                        let base = RowBase {
                            solver: kind.to_string(),
                            shape: shape.clone(),
                            n_signals: 1,
                            n_atoms: spec.n_atoms,
                            rank: spec.rank,
                            alpha: 0.01,
                            beta: 0.0,
                            snr_db: None,
                            seed: spec.seed,
                            gram_opt: gram,
                        };
                        rows.push(base.row("seconds_per_iteration", secs));
                    }
                }
                SolverKind::FcscShm | SolverKind::ConvFistaFd => {
                    let secs = baseline_iteration_seconds(&data, *kind, spec.iters)?;
                    let base = RowBase {
                        solver: kind.to_string(),
                        shape: shape.clone(),
                        n_signals: 1,
                        n_atoms: spec.n_atoms,
                        rank: 0,
                        alpha: 0.01,
                        beta: 0.0,
                        snr_db: None,
                        seed: spec.seed,
                        gram_opt: true,
                    };
                    rows.push(base.row("seconds_per_iteration", secs));
                }
            }
        }
    }
    Ok(rows)
}

/// Least-squares slope of `log(value)` against `log(size)`; the growth
/// exponent of a timing trend.
pub fn log_log_slope(sizes: &[f64], values: &[f64]) -> Result<f64> {
    if sizes.len() != values.len() || sizes.len() < 2 {
        return Err(Error::invalid("need at least two points for a slope".to_string()));
    }
    if sizes.iter().chain(values).any(|v| *v <= 0.0) {
        return Err(Error::invalid("slope inputs must be positive".to_string()));
    }
    let xs: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_schema_is_stable_and_dense() {
        let spec = QualitySpec {
            synth: SynthConfig {
                shape: vec![8, 8, 8],
                n_signals: 2,
                window: vec![3, 3, 3],
                snr_db: Some(10.0),
                ..SynthConfig::default()
            },
            alphas: vec![0.05],
            sweeps: 2,
            inner_iters: 20,
            ..QualitySpec::default()
        };
        let rows = quality_rows(&spec).unwrap();
        assert!(!rows.is_empty());
        let text = csv_text(&rows);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let n_cols = CSV_HEADER.split(',').count();
        for line in lines {
            assert_eq!(line.split(',').count(), n_cols, "ragged row: {line}");
        }
        for solver in ["kcsc", "fcsc-shm", "convfista-fd"] {
            assert!(
                rows.iter().any(|r| r.solver == solver && r.metric == "rmse_z"),
                "missing rmse_z for {solver}"
            );
        }
    }

    #[test]
    fn timing_rows_cover_every_size_and_solver() {
        let spec = TimingSpec {
            sizes: vec![8, 12],
            iters: 3,
            window: vec![3, 3, 3],
            ..TimingSpec::default()
        };
        let rows = timing_rows(&spec).unwrap();
        // kcsc twice (gram on and off) plus two baselines, per size.
        assert_eq!(rows.len(), 2 * 4);
        assert!(rows.iter().all(|r| r.metric == "seconds_per_iteration"));
        assert!(rows.iter().all(|r| r.value > 0.0));
    }

    #[test]
    fn slope_recovers_a_planted_power_law() {
        let sizes = [16.0, 32.0, 64.0];
        let values: Vec<f64> = sizes.iter().map(|s: &f64| 3.0 * s.powf(2.5)).collect();
        let got = log_log_slope(&sizes, &values).unwrap();
        assert!((got - 2.5).abs() < 1e-12);
    }

    #[test]
    fn solver_names_round_trip() {
        for kind in [SolverKind::Kcsc, SolverKind::FcscShm, SolverKind::ConvFistaFd] {
            assert_eq!(kind.to_string().parse::<SolverKind>().unwrap(), kind);
        }
        assert!("nope".parse::<SolverKind>().is_err());
    }
}
