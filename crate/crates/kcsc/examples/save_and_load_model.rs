//! Round-trip a fitted model through the on-disk layout and verify the
//! reloaded copy reconstructs the same signals.

use kcsc::io::{load_model, save_model, ModelActivations, ModelMetadata};
use kcsc::solver::{fit, reconstruct, SolverConfig};
use kcsc::synth::{generate, SynthConfig};
use kcsc::zstep::RegWeights;

fn main() -> kcsc::Result<()> {
    let synth = SynthConfig {
        shape: vec![12, 12, 12],
        n_signals: 2,
        n_atoms: 2,
        window: vec![4, 4, 4],
        rank: 1,
        seed: 2,
        ..SynthConfig::default()
    };
    let data = generate(&synth)?;

    let mut cfg = SolverConfig::new(synth.n_atoms, synth.rank, synth.window.clone());
    cfg.reg = RegWeights::uniform(3, 1e-4, 1e-6);
    cfg.max_sweeps = 6;
    cfg.z_max_iters = 100;
    cfg.restarts = 1;
    let result = fit(&data.noisy, &cfg)?;

    let dir = std::env::temp_dir().join("kcsc-model-example");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).map_err(|e| kcsc::Error::io(&dir, e))?;
    let meta = ModelMetadata {
        format_version: kcsc::io::MODEL_FORMAT_VERSION,
        solver: "kcsc".to_string(),
        signal_shape: synth.shape.clone(),
        n_signals: data.noisy.len(),
        n_atoms: cfg.n_atoms,
        rank: cfg.rank,
        window: cfg.window.clone(),
        seed: cfg.seed,
        config: serde_json::to_value(&cfg).map_err(|e| kcsc::Error::invalid(e.to_string()))?,
        objective_trace: result.objective_trace.clone(),
    };
    save_model(
        &dir,
        &result.dictionary,
        &ModelActivations::Kruskal(result.activations.clone()),
        &meta,
    )?;
    println!("saved model to {}", dir.display());

    let (dict, acts, meta) = load_model(&dir)?;
    println!(
        "reloaded: {} atoms, {} signals, solver {}",
        dict.n_atoms(),
        acts.n_signals(),
        meta.solver
    );
    let reloaded = match &acts {
        ModelActivations::Kruskal(per_signal) => {
            reconstruct(&dict, &per_signal[0], &synth.shape, &[])?
        }
        ModelActivations::Dense(_) => unreachable!(),
    };
    let original = reconstruct(&result.dictionary, &result.activations[0], &synth.shape, &[])?;
    let gap = original
        .data()
        .iter()
        .zip(reloaded.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("max reconstruction gap after reload: {gap:.2e}");
    Ok(())
}
