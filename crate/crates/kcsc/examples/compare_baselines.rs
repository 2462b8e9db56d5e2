//! Encode the same noisy signals with the constrained solver and with both
//! unconstrained baselines, then compare activation recovery.

use kcsc::baselines::{convfista_fd_encode, fcsc_shm_encode};
use kcsc::solver::{encode, SolverConfig};
use kcsc::synth::{align_and_rmse, composed_activations, generate, SynthConfig};
use kcsc::tensor::DenseTensor;
use kcsc::zstep::RegWeights;

fn median_rmse(truth: &[Vec<DenseTensor>], estimates: &[Vec<DenseTensor>]) -> f64 {
    let mut v: Vec<f64> = truth
        .iter()
        .zip(estimates)
        .map(|(t, e)| align_and_rmse(t, e).unwrap().rmse)
        .collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn main() -> kcsc::Result<()> {
    let synth = SynthConfig {
        n_signals: 6,
        snr_db: Some(10.0),
        seed: 0,
        ..SynthConfig::default()
    };
    let data = generate(&synth)?;
    let truth: Vec<Vec<DenseTensor>> = data
        .activations
        .iter()
        .map(|a| composed_activations(a))
        .collect();

    let mut cfg = SolverConfig::new(synth.n_atoms, synth.rank, synth.window.clone());
    cfg.reg = RegWeights::uniform(3, 1e-3, 1e-5);
    cfg.max_sweeps = 15;
    cfg.outer_tol = 1e-8;
    cfg.z_max_iters = 300;
    cfg.z_tol = 1e-6;
    cfg.restarts = 2;
    let kcsc_fit = encode(&data.noisy, &data.dictionary, &cfg)?;
    let kcsc_est: Vec<Vec<DenseTensor>> = kcsc_fit
        .activations
        .iter()
        .map(|a| composed_activations(a))
        .collect();
    println!("kcsc          median rmse {:.3e}", median_rmse(&truth, &kcsc_est));

    for alpha in [0.01, 0.03, 0.1] {
        let fd = convfista_fd_encode(&data.noisy, &data.dictionary, alpha, 1e-6, 400)?;
        let shm = fcsc_shm_encode(&data.noisy, &data.dictionary, alpha, 1.0, 1e-6, 400)?;
        println!(
            "alpha {alpha:<5}: convfista-fd {:.3e} ({} iters), fcsc-shm {:.3e} ({} iters)",
            median_rmse(&truth, &fd.activations),
            fd.iterations,
            median_rmse(&truth, &shm.activations),
            shm.iterations
        );
    }
    Ok(())
}
