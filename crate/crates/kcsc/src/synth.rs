//! Synthetic data generation and evaluation metrics.
//!
//! Signals are sums of circular convolutions between random unit-norm atoms
//! and sparse low-rank Kruskal activations, optionally corrupted by white
//! Gaussian noise scaled so the realized SNR matches the request exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::reconstruct;
use crate::tensor::{DenseTensor, Dictionary, KruskalActivation};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub shape: Vec<usize>,
    pub n_signals: usize,
    pub n_atoms: usize,
    pub window: Vec<usize>,
    /// Number of columns in each generated activation factor.
    pub rank: usize,
    /// Probability that a factor entry is nonzero.
    pub density: f64,
    /// Target SNR in dB; `None` generates noiseless signals.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            shape: vec![25, 25, 25],
            n_signals: 10,
            n_atoms: 3,
            window: vec![5, 5, 5],
            rank: 2,
            density: 0.2,
            snr_db: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shape.is_empty() || self.shape.contains(&0) {
            return Err(Error::invalid(format!("bad signal shape {:?}", self.shape)));
        }
        if self.window.len() != self.shape.len() {
            return Err(Error::invalid(format!(
                "window order {} differs from signal order {}",
                self.window.len(),
                self.shape.len()
            )));
        }
        if self.window.iter().zip(&self.shape).any(|(w, n)| *w == 0 || w > n) {
            return Err(Error::invalid(format!(
                "window {:?} does not fit shape {:?}",
                self.window, self.shape
            )));
        }
        if self.n_signals == 0 || self.n_atoms == 0 || self.rank == 0 {
            return Err(Error::invalid(
                "n_signals, n_atoms and rank must be positive".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::invalid(format!("density {} outside [0, 1]", self.density)));
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(Error::invalid("snr_db must be finite".to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub noisy: Vec<DenseTensor>,
    pub clean: Vec<DenseTensor>,
    pub dictionary: Dictionary,
    pub activations: Vec<Vec<KruskalActivation>>,
}

/// Draws a dataset. Sampling order is fixed (dictionary, then factors signal
/// by signal, then noise), so a seed pins every byte of the output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dictionary = Dictionary::random_unit(&cfg.window, cfg.n_atoms, &mut rng);

    let mut activations = Vec::with_capacity(cfg.n_signals);
    for _ in 0..cfg.n_signals {
        let mut per_atom = Vec::with_capacity(cfg.n_atoms);
        for _ in 0..cfg.n_atoms {
            let mut act = KruskalActivation::zeros(&cfg.shape, cfg.rank);
            for q in 0..cfg.shape.len() {
                for v in act.factor_mut(q).iter_mut() {
                    if rng.random_range(0.0..1.0) < cfg.density {
                        *v = rng.random_range(-1.0..1.0);
                    }
                }
            }
            per_atom.push(act);
        }
        activations.push(per_atom);
    }

    let mut clean = Vec::with_capacity(cfg.n_signals);
    for acts in &activations {
        clean.push(reconstruct(&dictionary, acts, &cfg.shape, &[])?);
    }

    let noisy = match cfg.snr_db {
        None => clean.clone(),
        Some(target) => {
            let mut out = Vec::with_capacity(cfg.n_signals);
            for sig in &clean {
                let eps: Vec<f64> = (0..sig.len())
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let mean_sq = eps.iter().map(|e| e * e).sum::<f64>() / eps.len() as f64;
                let var = population_variance(sig.data());
                if var == 0.0 {
                    return Err(Error::invalid(
                        "clean signal is constant, SNR is undefined".to_string(),
                    ));
                }
                // Var(sig) / mean((c ε)²) = 10^(target/10) exactly.
                let c = (var / 10f64.powf(target / 10.0) / mean_sq.max(1e-300)).sqrt();
                let mut data = sig.data().to_vec();
                for (d, e) in data.iter_mut().zip(&eps) {
                    *d += c * e;
                }
                out.push(DenseTensor::new(sig.shape().to_vec(), data)?);
            }
            out
        }
    };

    Ok(SynthData {
        noisy,
        clean,
        dictionary,
        activations,
    })
}

fn population_variance(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// `10 log₁₀(Var(reference) / MSE(reference, test))`; `+∞` when the tensors
/// match exactly.
pub fn snr(reference: &DenseTensor, test: &DenseTensor) -> Result<f64> {
    if reference.shape() != test.shape() {
        return Err(Error::shape(format!(
            "snr shapes differ: {:?} vs {:?}",
            reference.shape(),
            test.shape()
        )));
    }
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (population_variance(reference.data()) / mse).log10())
}

pub fn rmse(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "rmse shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let sq = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>();
    Ok((sq / a.len() as f64).sqrt())
}

/// Fraction of values strictly below `threshold`.
pub fn hit_rate(values: &[f64], threshold: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| **v < threshold).count() as f64 / values.len() as f64
}

#[derive(Debug, Clone)]
pub struct AtomAlignment {
    /// `perm[k]` is the estimated atom matched to true atom `k`.
    pub perm: Vec<usize>,
    /// Sign applied to the matched estimate.
    pub signs: Vec<f64>,
    pub rmse: f64,
}

fn cosine(a: &DenseTensor, b: &DenseTensor) -> f64 {
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let na = a.frobenius_norm();
    let nb = b.frobenius_norm();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..k).collect();
    fn heap(items: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if n <= 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..n {
            heap(items, n - 1, out);
            if n.is_multiple_of(2) {
                items.swap(i, n - 1);
            } else {
                items.swap(0, n - 1);
            }
        }
    }
    heap(&mut items, k, &mut out);
    out
}

/// Matches estimated per-atom tensors to the truth (permutation and sign) and
/// reports the RMSE over all entries of the aligned stack. The search is
/// exhaustive up to four atoms and greedy above that.
pub fn align_and_rmse(truth: &[DenseTensor], estimate: &[DenseTensor]) -> Result<AtomAlignment> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::shape(format!(
            "cannot align {} true against {} estimated tensors",
            truth.len(),
            estimate.len()
        )));
    }
    let k = truth.len();
    for (t, e) in truth.iter().zip(estimate) {
        if t.shape() != truth[0].shape() || e.shape() != truth[0].shape() {
            return Err(Error::shape("aligned tensors must share one shape".to_string()));
        }
    }
    let mut corr = vec![vec![0.0f64; k]; k];
    for i in 0..k {
        for j in 0..k {
            corr[i][j] = cosine(&truth[i], &estimate[j]);
        }
    }
    let perm = if k <= 4 {
        permutations(k)
            .into_iter()
            .max_by(|a, b| {
                let sa: f64 = a.iter().enumerate().map(|(i, &j)| corr[i][j].abs()).sum();
                let sb: f64 = b.iter().enumerate().map(|(i, &j)| corr[i][j].abs()).sum();
                sa.partial_cmp(&sb).unwrap()
            })
            .unwrap()
    } else {
        let mut taken = vec![false; k];
        let mut perm = vec![0usize; k];
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let ma = corr[a].iter().map(|v| v.abs()).fold(0.0, f64::max);
            let mb = corr[b].iter().map(|v| v.abs()).fold(0.0, f64::max);
            mb.partial_cmp(&ma).unwrap()
        });
        for &i in &order {
            let j = (0..k)
                .filter(|j| !taken[*j])
                .max_by(|&a, &b| corr[i][a].abs().partial_cmp(&corr[i][b].abs()).unwrap())
                .unwrap();
            taken[j] = true;
            perm[i] = j;
        }
        perm
    };
    let signs: Vec<f64> = (0..k)
        .map(|i| if corr[i][perm[i]] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let total: usize = truth.iter().map(|t| t.len()).sum();
    let mut sq = 0.0;
    for i in 0..k {
        let e = &estimate[perm[i]];
        for (a, b) in truth[i].data().iter().zip(e.data()) {
            let d = a - signs[i] * b;
            sq += d * d;
        }
    }
    Ok(AtomAlignment {
        perm,
        signs,
        rmse: (sq / total as f64).sqrt(),
    })
}

/// Composes each activation into a dense tensor; shared helper for aligning
/// Kruskal solutions against the truth.
pub fn composed_activations(acts: &[KruskalActivation]) -> Vec<DenseTensor> {
    acts.iter().map(|a| a.compose()).collect()
}

/// RMSE between true atoms and estimated atoms under a fixed alignment,
/// typically the one produced by [`align_and_rmse`] on the activations.
pub fn rmse_dictionary(
    truth: &Dictionary,
    estimate: &Dictionary,
    perm: &[usize],
    signs: &[f64],
) -> Result<f64> {
    if truth.n_atoms() != estimate.n_atoms()
        || perm.len() != truth.n_atoms()
        || signs.len() != truth.n_atoms()
    {
        return Err(Error::shape("alignment does not match dictionaries".to_string()));
    }
    if truth.window() != estimate.window() {
        return Err(Error::shape(format!(
            "dictionary windows differ: {:?} vs {:?}",
            truth.window(),
            estimate.window()
        )));
    }
    let mut sq = 0.0;
    let mut total = 0usize;
    for k in 0..truth.n_atoms() {
        let t = truth.atom(k);
        let e = estimate.atom(perm[k]);
        total += t.len();
        for (a, b) in t.data().iter().zip(e.data()) {
            let d = a - signs[k] * b;
            sq += d * d;
        }
    }
    Ok((sq / total as f64).sqrt())
}
