//! Sparse-code noisy signals against the ground-truth dictionary and measure
//! how closely the recovered activations match the planted ones.

use kcsc::solver::{encode, SolverConfig};
use kcsc::synth::{align_and_rmse, composed_activations, generate, SynthConfig};
use kcsc::zstep::RegWeights;

fn main() -> kcsc::Result<()> {
    let synth = SynthConfig {
        n_signals: 4,
        snr_db: Some(10.0),
        seed: 0,
        ..SynthConfig::default()
    };
    let data = generate(&synth)?;

    let mut cfg = SolverConfig::new(synth.n_atoms, synth.rank, synth.window.clone());
    cfg.reg = RegWeights::uniform(3, 1e-3, 1e-5);
    cfg.max_sweeps = 15;
    cfg.outer_tol = 1e-8;
    cfg.z_max_iters = 300;
    cfg.z_tol = 1e-6;
    cfg.restarts = 2;
    let result = encode(&data.noisy, &data.dictionary, &cfg)?;

    println!(
        "objective {:.6e} after {} sweeps ({} inner iterations)",
        result.objective, result.sweeps, result.z_inner_iterations
    );
    for (n, est) in result.activations.iter().enumerate() {
        let truth = composed_activations(&data.activations[n]);
        let aligned = align_and_rmse(&truth, &composed_activations(est))?;
        println!(
            "signal {n}: activation rmse {:.3e}, atom permutation {:?}",
            aligned.rmse, aligned.perm
        );
    }
    Ok(())
}
