//! Turn a multichannel time series into a channels x frequency x time tensor:
//! bandpass, short-time Fourier transform, and crop to the band of interest.

use ndarray::Array2;

use kcsc::ingest::{ingest, MultichannelRecording, StftConfig};

fn main() -> kcsc::Result<()> {
    let rate = 250.0;
    let seconds = 40.0;
    let n = (rate * seconds) as usize;
    let data = Array2::from_shape_fn((3, n), |(c, i)| {
        let t = i as f64 / rate;
        let f = 2.0 + 3.0 * c as f64;
        (2.0 * std::f64::consts::PI * f * t).sin() + 0.2 * (2.0 * std::f64::consts::PI * 60.0 * t).sin()
    });
    let rec = MultichannelRecording::new(rate, data)?;

    let cfg = StftConfig::default();
    let tensor = ingest(&rec, &cfg)?;
    let bins = cfg.kept_bins(rate);
    println!(
        "{} channels x {} samples at {rate} Hz -> tensor {:?}",
        rec.n_channels(),
        rec.n_samples(),
        tensor.shape()
    );
    println!(
        "window {} hop {} keeps {} bins covering {:.2}..{:.2} Hz",
        cfg.window,
        cfg.hop(),
        bins.len(),
        bins[0] as f64 * rate / cfg.nfft as f64,
        bins[bins.len() - 1] as f64 * rate / cfg.nfft as f64
    );

    for c in 0..rec.n_channels() {
        let per = tensor.shape()[1] * tensor.shape()[2];
        let frames = tensor.shape()[2];
        let slab = &tensor.data()[c * per..(c + 1) * per];
        let peak_bin = (0..tensor.shape()[1])
            .max_by(|&a, &b| {
                let ea: f64 = slab[a * frames..(a + 1) * frames].iter().sum();
                let eb: f64 = slab[b * frames..(b + 1) * frames].iter().sum();
                ea.partial_cmp(&eb).unwrap()
            })
            .unwrap();
        println!(
            "channel {c}: peak energy at {:.2} Hz",
            bins[peak_bin] as f64 * rate / cfg.nfft as f64
        );
    }
    Ok(())
}
