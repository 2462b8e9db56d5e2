//! Learn dictionary and activations jointly from noiseless synthetic data,
//! then compare the learned atoms to the planted ones up to permutation and
//! sign.

use kcsc::solver::{fit, SolverConfig};
use kcsc::synth::{align_and_rmse, composed_activations, generate, rmse_dictionary, SynthConfig};
use kcsc::zstep::RegWeights;

fn main() -> kcsc::Result<()> {
    let synth = SynthConfig {
        shape: vec![20, 20, 20],
        n_signals: 8,
        seed: 4,
        ..SynthConfig::default()
    };
    let data = generate(&synth)?;

    let mut cfg = SolverConfig::new(synth.n_atoms, synth.rank, synth.window.clone());
    cfg.reg = RegWeights::uniform(3, 1e-4, 1e-6);
    cfg.max_sweeps = 12;
    cfg.outer_tol = 1e-9;
    cfg.z_max_iters = 200;
    cfg.z_tol = 1e-6;
    cfg.restarts = 3;
    cfg.seed = 1;
    let result = fit(&data.noisy, &cfg)?;

    println!(
        "restart {} converged={} after {} sweeps, objective {:.6e}",
        result.restart, result.converged, result.sweeps, result.objective
    );
    println!(
        "objective trace: {}",
        result
            .objective_trace
            .iter()
            .map(|v| format!("{v:.3e}"))
            .collect::<Vec<_>>()
            .join(" -> ")
    );

    let truth = composed_activations(&data.activations[0]);
    let est = composed_activations(&result.activations[0]);
    let aligned = align_and_rmse(&truth, &est)?;
    let d_rmse = rmse_dictionary(
        &data.dictionary,
        &result.dictionary,
        &aligned.perm,
        &aligned.signs,
    )?;
    println!(
        "dictionary rmse {:.3e} under permutation {:?}, signs {:?}",
        d_rmse, aligned.perm, aligned.signs
    );
    println!("effective activation ranks: {:?}", result.effective_ranks);
    Ok(())
}
