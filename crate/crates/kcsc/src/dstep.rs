//! Dictionary update via ADMM.
//!
//! With all activations frozen, the fidelity term couples the `K` atoms only
//! through a rank-`N` system at each frequency: the normal matrix at `ω` is
//! `ρI + Σ_n u_n(ω) u_n(ω)^H` with `u_n(ω)[k] = conj(ζ_{n,k}(ω))`, where
//! `ζ_{n,k}` is the spectrum of activation `Z_{n,k}`. Each solve applies the
//! Sherman-Morrison identity once per signal, so a full sweep over
//! frequencies costs `O(M K N²)` instead of a dense `O(M K³)` factorization.
//! The splitting variable keeps atoms supported on the window and inside the
//! unit Frobenius ball; its update is a crop followed by ball projection.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{dft, idft, SpectralTensor};
use crate::tensor::{kruskal_compose_complex, DenseTensor, Dictionary, KruskalActivation};

#[derive(Debug, Clone, Copy)]
pub struct DStepConfig {
    pub rho: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Rebalances `rho` by factors of two whenever one ADMM residual
    /// outweighs the other by more than 10x.
    pub adapt_rho: bool,
}

impl Default for DStepConfig {
    fn default() -> Self {
        DStepConfig {
            rho: 1.0,
            tol: 1e-6,
            max_iters: 200,
            adapt_rho: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DStepStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Fidelity `½ Σ_n ‖Y_n − Σ_k D_k ⊛ Z_{n,k}‖²` of the returned atoms.
    pub fidelity: f64,
    pub converged: bool,
}

/// Spectra of one signal's activation tensors, composed mode-wise so the
/// full `Π n_i` grid is only touched once per atom.
pub fn compose_activation_spectra(activations: &[KruskalActivation]) -> Vec<SpectralTensor> {
    activations
        .iter()
        .map(|act| {
            let spectra = crate::spectral::modewise_dft(act.factors());
            let (shape, data) = kruskal_compose_complex(&spectra);
            SpectralTensor::new(shape, data).expect("factor shapes are consistent")
        })
        .collect()
}

/// Solves `(ρI + Σ_n u_n u_n^H) x = b` in place by applying the
/// Sherman-Morrison identity once per rank-one term. `phi` is scratch of
/// shape `N x K` holding the running inverse applied to each later `u_n`.
pub fn sherman_morrison_solve(
    rho: f64,
    us: &[Complex64],
    n_signals: usize,
    b: &mut [Complex64],
    phi: &mut [Complex64],
) {
    let k = b.len();
    debug_assert_eq!(us.len(), n_signals * k);
    debug_assert_eq!(phi.len(), n_signals * k);
    let inv_rho = 1.0 / rho;
    for v in b.iter_mut() {
        *v *= inv_rho;
    }
    for (p, u) in phi.iter_mut().zip(us) {
        *p = u * inv_rho;
    }
    for m in 0..n_signals {
        let um = &us[m * k..(m + 1) * k];
        let (phi_m, phi_rest) = {
            let (head, tail) = phi.split_at_mut((m + 1) * k);
            (&head[m * k..], tail)
        };
        let mut gamma = Complex64::new(1.0, 0.0);
        for (u, p) in um.iter().zip(phi_m.iter()) {
            gamma += u.conj() * p;
        }
        let mut dot_b = Complex64::ZERO;
        for (u, x) in um.iter().zip(b.iter()) {
            dot_b += u.conj() * x;
        }
        let cb = dot_b / gamma;
        for (x, p) in b.iter_mut().zip(phi_m.iter()) {
            *x -= cb * p;
        }
        for n in (m + 1)..n_signals {
            let phi_n = &mut phi_rest[(n - m - 1) * k..(n - m) * k];
            let mut dot_n = Complex64::ZERO;
            for (u, p) in um.iter().zip(phi_n.iter()) {
                dot_n += u.conj() * p;
            }
            let cn = dot_n / gamma;
            for (x, p) in phi_n.iter_mut().zip(phi_m.iter()) {
                *x -= cn * p;
            }
        }
    }
}

struct Workspace {
    shape: Vec<usize>,
    n_atoms: usize,
    n_signals: usize,
    /// `u_n(ω)` stacked as `[ω][n][k]`.
    us: Vec<Complex64>,
    /// `Σ_n conj(ζ_{n,k}(ω)) ŷ_n(ω)` stacked as `[ω][k]`.
    b0: Vec<Complex64>,
    /// `ŷ_n(ω)` stacked as `[n][ω]`.
    y: Vec<Complex64>,
}

impl Workspace {
    fn build(y_spectra: &[SpectralTensor], activation_spectra: &[Vec<SpectralTensor>]) -> Result<Self> {
        let n_signals = y_spectra.len();
        if n_signals == 0 || activation_spectra.len() != n_signals {
            return Err(Error::invalid(
                "need one activation set per signal".to_string(),
            ));
        }
        let shape = y_spectra[0].shape().to_vec();
        let m = y_spectra[0].len();
        let n_atoms = activation_spectra[0].len();
        if n_atoms == 0 {
            return Err(Error::invalid("need at least one atom".to_string()));
        }
        for (n, (y, zs)) in y_spectra.iter().zip(activation_spectra).enumerate() {
            if y.shape() != shape.as_slice() || zs.len() != n_atoms {
                return Err(Error::shape(format!(
                    "signal {n} spectra do not match the first signal"
                )));
            }
            if zs.iter().any(|z| z.shape() != shape.as_slice()) {
                return Err(Error::shape(format!(
                    "signal {n} activation spectra do not match the signal shape"
                )));
            }
        }
        let mut us = vec![Complex64::ZERO; m * n_signals * n_atoms];
        let mut b0 = vec![Complex64::ZERO; m * n_atoms];
        let mut y = vec![Complex64::ZERO; n_signals * m];
        for n in 0..n_signals {
            y[n * m..(n + 1) * m].copy_from_slice(y_spectra[n].data());
        }
        for w in 0..m {
            let ub = &mut us[w * n_signals * n_atoms..(w + 1) * n_signals * n_atoms];
            let bb = &mut b0[w * n_atoms..(w + 1) * n_atoms];
            for n in 0..n_signals {
                let yw = y_spectra[n].data()[w];
                for k in 0..n_atoms {
                    let zeta = activation_spectra[n][k].data()[w];
                    ub[n * n_atoms + k] = zeta.conj();
                    bb[k] += zeta.conj() * yw;
                }
            }
        }
        Ok(Workspace {
            shape,
            n_atoms,
            n_signals,
            us,
            b0,
            y,
        })
    }

    /// `½ Σ_n ‖ŷ_n − Σ_k ĝ_k ζ_{n,k}‖² / M`, i.e. the time-domain fidelity.
    fn fidelity(&self, ghat: &[Vec<Complex64>]) -> f64 {
        let m = self.shape.iter().product::<usize>();
        let mut acc = 0.0;
        for n in 0..self.n_signals {
            let yw = &self.y[n * m..(n + 1) * m];
            for w in 0..m {
                let ub = &self.us[w * self.n_signals * self.n_atoms..];
                let un = &ub[n * self.n_atoms..(n + 1) * self.n_atoms];
                let mut model = Complex64::ZERO;
                for k in 0..self.n_atoms {
                    // `u = conj(ζ)`, so the model term is `conj(u_k) ĝ_k`.
                    model += un[k].conj() * ghat[k][w];
                }
                acc += (yw[w] - model).norm_sqr();
            }
        }
        0.5 * acc / m as f64
    }
}

fn project_window_ball(v: &DenseTensor, window: &[usize]) -> Result<DenseTensor> {
    let mut g = v.crop(window)?;
    g.project_unit_ball();
    g.zero_pad(v.shape())
}

/// Updates the dictionary for frozen activations by ADMM, returning atoms
/// supported on `window` with unit-ball Frobenius norms. When `init` is
/// given, the returned dictionary's fidelity never exceeds the initial one:
/// the best feasible iterate is tracked and kept.
pub fn dstep_solve(
    y_spectra: &[SpectralTensor],
    activation_spectra: &[Vec<SpectralTensor>],
    window: &[usize],
    init: Option<&Dictionary>,
    cfg: &DStepConfig,
) -> Result<(Dictionary, DStepStats)> {
    if cfg.rho <= 0.0 || !cfg.rho.is_finite() {
        return Err(Error::invalid("rho must be positive".to_string()));
    }
    let ws = Workspace::build(y_spectra, activation_spectra)?;
    let shape = ws.shape.clone();
    if window.len() != shape.len() || window.iter().zip(&shape).any(|(w, n)| w > n || *w == 0) {
        return Err(Error::shape(format!(
            "window {window:?} does not fit the signal shape {shape:?}"
        )));
    }
    let m: usize = shape.iter().product();
    let n_atoms = ws.n_atoms;
    let n_signals = ws.n_signals;

    let mut g: Vec<DenseTensor> = match init {
        Some(dict) => {
            if dict.n_atoms() != n_atoms || dict.window() != window {
                return Err(Error::shape(format!(
                    "initial dictionary has {} atoms with window {:?}, expected {} with {:?}",
                    dict.n_atoms(),
                    dict.window(),
                    n_atoms,
                    window
                )));
            }
            dict.padded_atoms(&shape)?
        }
        None => (0..n_atoms).map(|_| DenseTensor::zeros(&shape)).collect(),
    };
    let mut u: Vec<DenseTensor> = (0..n_atoms).map(|_| DenseTensor::zeros(&shape)).collect();
    let mut rho = cfg.rho;

    let ghat_of = |g: &[DenseTensor]| -> Vec<Vec<Complex64>> {
        g.iter().map(|t| dft(t).data().to_vec()).collect()
    };
    let mut best_g = g.clone();
    let mut best_fid = ws.fidelity(&ghat_of(&g));

    let mut d = vec![DenseTensor::zeros(&shape); n_atoms];
    let mut phi = vec![Complex64::ZERO; n_signals * n_atoms];
    let mut b = vec![Complex64::ZERO; n_atoms];
    let mut dhat: Vec<SpectralTensor> = (0..n_atoms).map(|_| SpectralTensor::zeros(&shape)).collect();

    let mut iterations = 0;
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        // d-update: per-frequency regularized least squares.
        let rhat: Vec<SpectralTensor> = (0..n_atoms)
            .map(|k| {
                let mut t = g[k].clone();
                for (x, y) in t.data_mut().iter_mut().zip(u[k].data()) {
                    *x -= y;
                }
                dft(&t)
            })
            .collect();
        for w in 0..m {
            for (k, rk) in rhat.iter().enumerate() {
                b[k] = rho * rk.data()[w] + ws.b0[w * n_atoms + k];
            }
            let us = &ws.us[w * n_signals * n_atoms..(w + 1) * n_signals * n_atoms];
            sherman_morrison_solve(rho, us, n_signals, &mut b, &mut phi);
            for (k, x) in b.iter().enumerate() {
                dhat[k].data_mut()[w] = *x;
            }
        }
        for k in 0..n_atoms {
            d[k] = idft(&dhat[k]);
        }

        // g-update: crop to the window, project onto the unit ball.
        let g_prev_norm_sq: f64 = g.iter().map(|t| t.frobenius_norm().powi(2)).sum();
        let mut dual_sq = 0.0;
        let mut primal_sq = 0.0;
        for k in 0..n_atoms {
            let mut v = d[k].clone();
            for (x, y) in v.data_mut().iter_mut().zip(u[k].data()) {
                *x += y;
            }
            let g_new = project_window_ball(&v, window)?;
            for (gp, gn) in g[k].data().iter().zip(g_new.data()) {
                dual_sq += (gp - gn) * (gp - gn);
            }
            for ((uv, dv), gv) in u[k]
                .data_mut()
                .iter_mut()
                .zip(d[k].data())
                .zip(g_new.data())
            {
                let r = dv - gv;
                primal_sq += r * r;
                *uv += r;
            }
            g[k] = g_new;
        }
        primal = primal_sq.sqrt();
        dual = rho * dual_sq.sqrt();
        if !primal.is_finite() || !dual.is_finite() {
            return Err(Error::divergence(format!(
                "non-finite ADMM residuals after {iterations} iterations"
            )));
        }

        // Track the best feasible iterate seen so far.
        let fid = ws.fidelity(&ghat_of(&g));
        if fid < best_fid {
            best_fid = fid;
            best_g = g.clone();
        }

        let d_norm_sq: f64 = d.iter().map(|t| t.frobenius_norm().powi(2)).sum();
        let g_norm_sq: f64 = g.iter().map(|t| t.frobenius_norm().powi(2)).sum();
        let u_norm_sq: f64 = u.iter().map(|t| t.frobenius_norm().powi(2)).sum();
        let primal_rel = primal / d_norm_sq.max(g_norm_sq).max(g_prev_norm_sq).sqrt().max(1e-12);
        let dual_rel = dual / (rho * u_norm_sq.sqrt()).max(1e-12);
        if primal_rel.max(dual_rel) <= cfg.tol {
            converged = true;
            break;
        }

        if cfg.adapt_rho {
            if primal > 10.0 * dual {
                rho *= 2.0;
                for t in &mut u {
                    t.scale(0.5);
                }
            } else if dual > 10.0 * primal {
                rho *= 0.5;
                for t in &mut u {
                    t.scale(2.0);
                }
            }
        }
    }

    let atoms: Vec<DenseTensor> = best_g
        .iter()
        .map(|t| {
            let mut a = t.crop(window)?;
            // Guard against roundoff pushing the norm a hair above one.
            a.project_unit_ball();
            Ok(a)
        })
        .collect::<Result<Vec<_>>>()?;
    let dict = Dictionary::new(atoms)?;
    Ok((
        dict,
        DStepStats {
            iterations,
            primal_residual: primal,
            dual_residual: dual,
            fidelity: best_fid,
            converged,
        },
    ))
}
