//! Block-coordinate solver alternating activation sweeps and dictionary
//! updates.
//!
//! One outer sweep visits every signal and every mode: each visit solves the
//! convex mode subproblem with the accelerated proximal method from
//! [`crate::zstep`], warm-started at the current factors. When the
//! dictionary is being learned, the sweep ends with the ADMM update from
//! [`crate::dstep`]. Multiple restarts draw independent initializations from
//! the seeded generator and the best final objective wins; a given seed
//! always reproduces the same trace bit for bit.

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dstep::{dstep_solve, DStepConfig};
use crate::error::{Error, Result};
use crate::spectral::{dft, fft_columns, idft, SpectralTensor};
use crate::tensor::{kruskal_compose_complex, DenseTensor, Dictionary, KruskalActivation};
use crate::zstep::{
    build_mode_cache, fista_mode_q, offmode_khatri_rao, FistaOptions, NaiveModeOperator,
    RegWeights,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub n_atoms: usize,
    pub rank: usize,
    pub window: Vec<usize>,
    pub reg: RegWeights,
    /// Outer sweep budget.
    pub max_sweeps: usize,
    /// Relative objective-change threshold ending the outer loop.
    pub outer_tol: f64,
    pub z_max_iters: usize,
    pub z_tol: f64,
    pub d_max_iters: usize,
    pub d_tol: f64,
    pub rho: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Mode visiting order; `None` sweeps modes in natural order.
    pub mode_order: Option<Vec<usize>>,
    /// Monotone updates: no inner momentum, per-block objective recording,
    /// and a dictionary step that never increases the objective.
    pub monotone: bool,
    /// Use the cached block-diagonal Gram representation (the default); when
    /// off, gradients touch every frequency each inner iteration.
    pub gram_opt: bool,
}

impl SolverConfig {
    pub fn new(n_atoms: usize, rank: usize, window: Vec<usize>) -> Self {
        let order = window.len();
        SolverConfig {
            n_atoms,
            rank,
            window,
            reg: RegWeights::uniform(order, 0.1, 0.0),
            max_sweeps: 30,
            outer_tol: 1e-4,
            z_max_iters: 200,
            z_tol: 1e-5,
            d_max_iters: 200,
            d_tol: 1e-6,
            rho: 1.0,
            restarts: 5,
            seed: 0,
            mode_order: None,
            monotone: false,
            gram_opt: true,
        }
    }

    fn resolved_mode_order(&self, order: usize) -> Result<Vec<usize>> {
        match &self.mode_order {
            None => Ok((0..order).collect()),
            Some(seq) => {
                let mut seen = vec![false; order];
                if seq.len() != order {
                    return Err(Error::invalid(format!(
                        "mode order must list all {order} modes, got {seq:?}"
                    )));
                }
                for &q in seq {
                    if q >= order || seen[q] {
                        return Err(Error::invalid(format!(
                            "mode order must be a permutation of 0..{order}, got {seq:?}"
                        )));
                    }
                    seen[q] = true;
                }
                Ok(seq.clone())
            }
        }
    }

    fn validate(&self, signal_shape: &[usize]) -> Result<()> {
        let order = signal_shape.len();
        if self.n_atoms == 0 || self.rank == 0 {
            return Err(Error::invalid(
                "need at least one atom and rank at least one".to_string(),
            ));
        }
        if self.window.len() != order {
            return Err(Error::shape(format!(
                "window {:?} does not match signal order {order}",
                self.window
            )));
        }
        if self.window.iter().zip(signal_shape).any(|(w, n)| w > n || *w == 0) {
            return Err(Error::shape(format!(
                "window {:?} does not fit signal shape {signal_shape:?}",
                self.window
            )));
        }
        self.reg.validate(order)?;
        if self.max_sweeps == 0 || self.z_max_iters == 0 || self.d_max_iters == 0 {
            return Err(Error::invalid("iteration budgets must be positive".to_string()));
        }
        if self.rho <= 0.0 || !self.rho.is_finite() {
            return Err(Error::invalid("rho must be positive".to_string()));
        }
        self.resolved_mode_order(order).map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub dictionary: Dictionary,
    /// Per-signal, per-atom activations.
    pub activations: Vec<Vec<KruskalActivation>>,
    pub objective: f64,
    /// Objective after every outer sweep, starting with the initial value.
    pub objective_trace: Vec<f64>,
    /// Objective after every block update (each mode subproblem and each
    /// dictionary step); recorded only in monotone mode.
    pub block_trace: Vec<f64>,
    pub effective_ranks: Vec<Vec<usize>>,
    pub sweeps: usize,
    pub restart: usize,
    pub converged: bool,
    pub z_seconds: f64,
    pub d_seconds: f64,
    pub z_inner_iterations: u64,
    pub d_iterations: u64,
}

struct SignalState {
    acts: Vec<KruskalActivation>,
    /// Column DFTs of each factor matrix, `[atom][mode]`.
    spec: Vec<Vec<Array2<Complex64>>>,
    fidelity: f64,
    reg: f64,
    z_iters: u64,
}

fn factor_spectra(acts: &[KruskalActivation]) -> Vec<Vec<Array2<Complex64>>> {
    acts.iter()
        .map(|a| a.factors().iter().map(fft_columns).collect())
        .collect()
}

fn composed_spectrum(spec_k: &[Array2<Complex64>], shape: &[usize]) -> SpectralTensor {
    let (cshape, data) = kruskal_compose_complex(spec_k);
    debug_assert_eq!(cshape.as_slice(), shape);
    SpectralTensor::new(cshape, data).expect("consistent factor shapes")
}

/// `½‖Y − Σ_k D_k ⊛ Z_k‖²` for one signal, evaluated in the Fourier domain.
fn signal_fidelity(
    y_spec: &SpectralTensor,
    atom_spectra: &[SpectralTensor],
    spec_n: &[Vec<Array2<Complex64>>],
) -> f64 {
    let m = y_spec.len();
    let mut resid: Vec<Complex64> = y_spec.data().to_vec();
    for (ahat, spec_k) in atom_spectra.iter().zip(spec_n) {
        let zhat = composed_spectrum(spec_k, y_spec.shape());
        for ((r, a), z) in resid.iter_mut().zip(ahat.data()).zip(zhat.data()) {
            *r -= a * z;
        }
    }
    0.5 * resid.iter().map(|v| v.norm_sqr()).sum::<f64>() / m as f64
}

fn signal_reg(acts: &[KruskalActivation], reg: &RegWeights) -> f64 {
    let mut total = 0.0;
    for act in acts {
        for (q, f) in act.factors().iter().enumerate() {
            let l1: f64 = f.iter().map(|v| v.abs()).sum();
            let sq: f64 = f.iter().map(|v| v * v).sum();
            total += reg.alpha[q] * l1 + reg.beta[q] * sq;
        }
    }
    total
}

/// Full objective: fidelity plus the per-mode elastic-net penalties over all
/// signals and atoms, with the fidelity evaluated in the time domain.
pub fn objective(
    signals: &[DenseTensor],
    dict: &Dictionary,
    activations: &[Vec<KruskalActivation>],
    reg: &RegWeights,
) -> Result<f64> {
    if signals.len() != activations.len() {
        return Err(Error::shape(format!(
            "{} signals but {} activation sets",
            signals.len(),
            activations.len()
        )));
    }
    let mut total = 0.0;
    for (y, acts) in signals.iter().zip(activations) {
        let recon = reconstruct(dict, acts, y.shape(), &[])?;
        let mut fid = 0.0;
        for (a, b) in y.data().iter().zip(recon.data()) {
            fid += (a - b) * (a - b);
        }
        total += 0.5 * fid + signal_reg(acts, reg);
    }
    Ok(total)
}

/// Sums `D_k ⊛ Z_k` over all atoms not listed in `exclude`.
pub fn reconstruct(
    dict: &Dictionary,
    activations: &[KruskalActivation],
    shape: &[usize],
    exclude: &[usize],
) -> Result<DenseTensor> {
    if activations.len() != dict.n_atoms() {
        return Err(Error::shape(format!(
            "{} activations for {} atoms",
            activations.len(),
            dict.n_atoms()
        )));
    }
    for &k in exclude {
        if k >= dict.n_atoms() {
            return Err(Error::invalid(format!(
                "cannot exclude atom {k}: dictionary has {} atoms",
                dict.n_atoms()
            )));
        }
    }
    let mut acc = SpectralTensor::zeros(shape);
    for (k, act) in activations.iter().enumerate() {
        if exclude.contains(&k) {
            continue;
        }
        if act.shape() != shape {
            return Err(Error::shape(format!(
                "activation {k} has shape {:?}, expected {shape:?}",
                act.shape()
            )));
        }
        let ahat = dft(&dict.atom(k).zero_pad(shape)?);
        let zhat = composed_spectrum(&factor_spectra(std::slice::from_ref(act))[0], shape);
        for ((o, a), z) in acc.data_mut().iter_mut().zip(ahat.data()).zip(zhat.data()) {
            *o += a * z;
        }
    }
    Ok(idft(&acc))
}

pub const EFFECTIVE_RANK_TOL: f64 = 1e-3;

/// Number of rank-one components whose magnitude `Π_q ‖z_r^(q)‖` exceeds
/// `tol` times the largest component magnitude.
pub fn effective_rank(act: &KruskalActivation, tol: f64) -> usize {
    let mags = act.component_magnitudes();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    mags.iter().filter(|&&m| m > tol * max).count()
}

fn init_activations(
    shape: &[usize],
    n_atoms: usize,
    rank: usize,
    nonnegative: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<KruskalActivation> {
    (0..n_atoms)
        .map(|_| {
            let factors = shape
                .iter()
                .map(|&n| {
                    Array2::from_shape_fn((n, rank), |_| {
                        if nonnegative {
                            rng.random_range(0.0..1.0)
                        } else {
                            rng.random_range(-1.0..1.0)
                        }
                    })
                })
                .collect();
            KruskalActivation::new(factors).expect("valid factor shapes")
        })
        .collect()
}

struct DictState {
    dict: Dictionary,
    /// Zero-padded atom spectra.
    spectra: Vec<SpectralTensor>,
    /// Mode-`q` matricized atom spectra, `[mode][atom]`.
    unfolds: Vec<Vec<Array2<Complex64>>>,
}

impl DictState {
    fn build(dict: Dictionary, shape: &[usize], modes: usize) -> Result<Self> {
        let spectra: Vec<SpectralTensor> = dict
            .padded_atoms(shape)?
            .iter()
            .map(dft)
            .collect();
        let unfolds = (0..modes)
            .map(|q| spectra.iter().map(|s| s.unfold(q)).collect())
            .collect();
        Ok(DictState {
            dict,
            spectra,
            unfolds,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep_signal(
    y_spec: &SpectralTensor,
    y_unfolds: &[Array2<Complex64>],
    dict_state: &DictState,
    state: &mut SignalState,
    cfg: &SolverConfig,
    mode_order: &[usize],
    fista: &FistaOptions,
    mut per_block: Option<&mut Vec<(f64, f64)>>,
) -> Result<()> {
    let n_atoms = state.acts.len();
    for &q in mode_order {
        let offmode: Vec<Array2<Complex64>> = (0..n_atoms)
            .map(|k| offmode_khatri_rao(&state.spec[k], q))
            .collect();
        let init: Vec<Array2<f64>> = (0..n_atoms)
            .map(|k| state.acts[k].factor(q).clone())
            .collect();
        let outcome = if cfg.gram_opt {
            let cache = build_mode_cache(q, &y_unfolds[q], &dict_state.unfolds[q], &offmode)?;
            fista_mode_q(
                &cache,
                &init,
                cfg.reg.alpha[q],
                cfg.reg.beta[q],
                cfg.reg.nonnegative,
                fista,
            )?
        } else {
            let op = NaiveModeOperator::new(&y_unfolds[q], &dict_state.unfolds[q], &offmode)?;
            fista_mode_q(
                &op,
                &init,
                cfg.reg.alpha[q],
                cfg.reg.beta[q],
                cfg.reg.nonnegative,
                fista,
            )?
        };
        state.z_iters += outcome.iterations as u64;
        for (k, factor) in outcome.factors.into_iter().enumerate() {
            state.spec[k][q] = fft_columns(&factor);
            state.acts[k].set_factor(q, factor);
        }
        if let Some(rec) = per_block.as_deref_mut() {
            state.fidelity = signal_fidelity(y_spec, &dict_state.spectra, &state.spec);
            state.reg = signal_reg(&state.acts, &cfg.reg);
            rec.push((state.fidelity, state.reg));
        }
    }
    state.fidelity = signal_fidelity(y_spec, &dict_state.spectra, &state.spec);
    state.reg = signal_reg(&state.acts, &cfg.reg);
    Ok(())
}

fn run_single(
    signals: &[DenseTensor],
    cfg: &SolverConfig,
    fixed_dict: Option<&Dictionary>,
    restart: usize,
    seed: u64,
) -> Result<FitResult> {
    let shape = signals[0].shape().to_vec();
    let order = shape.len();
    let n_signals = signals.len();
    let mode_order = cfg.resolved_mode_order(order)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let y_spectra: Vec<SpectralTensor> = signals.iter().map(dft).collect();
    let y_unfolds: Vec<Vec<Array2<Complex64>>> = y_spectra
        .iter()
        .map(|s| (0..order).map(|q| s.unfold(q)).collect())
        .collect();

    let mut dict_state = DictState::build(
        match fixed_dict {
            Some(d) => d.clone(),
            None => Dictionary::random_unit(&cfg.window, cfg.n_atoms, &mut rng),
        },
        &shape,
        order,
    )?;

    let mut states: Vec<SignalState> = (0..n_signals)
        .map(|n| {
            let acts = init_activations(&shape, cfg.n_atoms, cfg.rank, cfg.reg.nonnegative, &mut rng);
            let spec = factor_spectra(&acts);
            let fidelity = signal_fidelity(&y_spectra[n], &dict_state.spectra, &spec);
            let reg = signal_reg(&acts, &cfg.reg);
            SignalState {
                acts,
                spec,
                fidelity,
                reg,
                z_iters: 0,
            }
        })
        .collect();

    let fista = FistaOptions {
        tol: cfg.z_tol,
        max_iters: cfg.z_max_iters,
        monotone: cfg.monotone,
    };
    let dcfg = DStepConfig {
        rho: cfg.rho,
        tol: cfg.d_tol,
        max_iters: cfg.d_max_iters,
        adapt_rho: true,
    };

    let total_objective =
        |states: &[SignalState]| states.iter().map(|s| s.fidelity + s.reg).sum::<f64>();

    let mut objective_trace = vec![total_objective(&states)];
    let mut block_trace = if cfg.monotone {
        vec![objective_trace[0]]
    } else {
        Vec::new()
    };
    let mut z_seconds = 0.0;
    let mut d_seconds = 0.0;
    let mut d_iterations = 0u64;
    let mut sweeps = 0;
    let mut converged = false;

    for _sweep in 0..cfg.max_sweeps {
        sweeps += 1;
        let z_start = Instant::now();
        if cfg.monotone {
            for n in 0..n_signals {
                let mut blocks = Vec::new();
                sweep_signal(
                    &y_spectra[n],
                    &y_unfolds[n],
                    &dict_state,
                    &mut states[n],
                    cfg,
                    &mode_order,
                    &fista,
                    Some(&mut blocks),
                )?;
                // Each recorded pair is this signal's fidelity and penalty
                // right after one mode subproblem; other signals are frozen.
                let others: f64 = states
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != n)
                    .map(|(_, s)| s.fidelity + s.reg)
                    .sum();
                for (fid, reg) in blocks {
                    block_trace.push(others + fid + reg);
                }
            }
        } else {
            let dict_ref = &dict_state;
            states
                .par_iter_mut()
                .enumerate()
                .try_for_each(|(n, state)| {
                    sweep_signal(
                        &y_spectra[n],
                        &y_unfolds[n],
                        dict_ref,
                        state,
                        cfg,
                        &mode_order,
                        &fista,
                        None,
                    )
                })?;
        }
        z_seconds += z_start.elapsed().as_secs_f64();

        if fixed_dict.is_none() {
            let d_start = Instant::now();
            let act_spectra: Vec<Vec<SpectralTensor>> = states
                .iter()
                .map(|st| {
                    st.spec
                        .iter()
                        .map(|spec_k| composed_spectrum(spec_k, &shape))
                        .collect()
                })
                .collect();
            let (new_dict, stats) = dstep_solve(
                &y_spectra,
                &act_spectra,
                &cfg.window,
                Some(&dict_state.dict),
                &dcfg,
            )?;
            d_iterations += stats.iterations as u64;
            dict_state = DictState::build(new_dict, &shape, order)?;
            for (n, state) in states.iter_mut().enumerate() {
                state.fidelity =
                    signal_fidelity(&y_spectra[n], &dict_state.spectra, &state.spec);
            }
            d_seconds += d_start.elapsed().as_secs_f64();
            if cfg.monotone {
                block_trace.push(total_objective(&states));
            }
        }

        let obj = total_objective(&states);
        let prev = *objective_trace.last().unwrap();
        objective_trace.push(obj);
        if !obj.is_finite() {
            return Err(Error::divergence(format!(
                "objective became non-finite in sweep {sweeps}"
            )));
        }
        if (prev - obj).abs() <= cfg.outer_tol * prev.abs().max(1e-12) {
            converged = true;
            break;
        }
    }

    let activations: Vec<Vec<KruskalActivation>> =
        states.iter().map(|s| s.acts.clone()).collect();
    let effective_ranks = activations
        .iter()
        .map(|acts| {
            acts.iter()
                .map(|a| effective_rank(a, EFFECTIVE_RANK_TOL))
                .collect()
        })
        .collect();
    let final_objective = objective(signals, &dict_state.dict, &activations, &cfg.reg)?;
    Ok(FitResult {
        dictionary: dict_state.dict,
        activations,
        objective: final_objective,
        objective_trace,
        block_trace,
        effective_ranks,
        sweeps,
        restart,
        converged,
        z_seconds,
        d_seconds,
        z_inner_iterations: states.iter().map(|s| s.z_iters).sum(),
        d_iterations,
    })
}

fn run(
    signals: &[DenseTensor],
    cfg: &SolverConfig,
    fixed_dict: Option<&Dictionary>,
) -> Result<FitResult> {
    if signals.is_empty() {
        return Err(Error::invalid("need at least one signal".to_string()));
    }
    let shape = signals[0].shape().to_vec();
    for (n, y) in signals.iter().enumerate() {
        if y.shape() != shape.as_slice() {
            return Err(Error::shape(format!(
                "signal {n} has shape {:?}, expected {shape:?}",
                y.shape()
            )));
        }
    }
    cfg.validate(&shape)?;
    if let Some(d) = fixed_dict {
        if d.n_atoms() != cfg.n_atoms || d.window() != cfg.window.as_slice() {
            return Err(Error::shape(format!(
                "dictionary has {} atoms with window {:?}, config expects {} with {:?}",
                d.n_atoms(),
                d.window(),
                cfg.n_atoms,
                cfg.window
            )));
        }
    }
    let restarts = cfg.restarts.max(1);
    let mut best: Option<FitResult> = None;
    for restart in 0..restarts {
        let seed = cfg
            .seed
            .wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let candidate = run_single(signals, cfg, fixed_dict, restart, seed)?;
        let better = match &best {
            None => true,
            Some(b) => candidate.objective < b.objective,
        };
        if better {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Learns a dictionary and activations jointly.
pub fn fit(signals: &[DenseTensor], cfg: &SolverConfig) -> Result<FitResult> {
    run(signals, cfg, None)
}

/// Solves for activations with a fixed dictionary.
pub fn encode(signals: &[DenseTensor], dict: &Dictionary, cfg: &SolverConfig) -> Result<FitResult> {
    run(signals, cfg, Some(dict))
}
