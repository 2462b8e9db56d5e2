//! Generate a synthetic dataset and report how noisy and sparse it is.

use kcsc::synth::{generate, snr, SynthConfig};

fn main() -> kcsc::Result<()> {
    let cfg = SynthConfig {
        shape: vec![25, 25, 25],
        n_signals: 5,
        n_atoms: 3,
        window: vec![5, 5, 5],
        rank: 2,
        density: 0.2,
        snr_db: Some(10.0),
        seed: 7,
    };
    let data = generate(&cfg)?;
    println!(
        "{} signals of shape {:?}, {} atoms with window {:?}, rank {}",
        data.noisy.len(),
        cfg.shape,
        cfg.n_atoms,
        cfg.window,
        cfg.rank
    );
    for (n, (clean, noisy)) in data.clean.iter().zip(&data.noisy).enumerate() {
        let nz = data.activations[n]
            .iter()
            .map(|a| a.compose().data().iter().filter(|v| **v != 0.0).count())
            .sum::<usize>();
        println!(
            "signal {n}: realized snr {:6.3} dB, {nz} nonzero activation entries",
            snr(clean, noisy)?
        );
    }
    Ok(())
}
