//! Multichannel recording ingestion: file loading, zero-phase bandpass
//! filtering, and conversion to nonnegative spectrogram tensors of shape
//! channels x frequency bins x frames.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{plan_forward, plan_inverse};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone)]
pub struct MultichannelRecording {
    /// Sampling rate in Hz.
    pub rate: f64,
    /// Channels x samples.
    pub data: Array2<f64>,
}

impl MultichannelRecording {
    pub fn new(rate: f64, data: Array2<f64>) -> Result<Self> {
        if !rate.is_finite() || rate <= 0.0 {
            return Err(Error::invalid(format!("sampling rate {rate} must be positive")));
        }
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid("recording has no samples".to_string()));
        }
        Ok(MultichannelRecording { rate, data })
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordingHeader {
    channels: usize,
    rate: f64,
    /// "f32" or "f64", little endian, interleaved by sample.
    dtype: String,
    /// Path of the raw payload, relative to the header file.
    data: String,
}

/// Reads a recording from either a JSON header pointing at a raw interleaved
/// little-endian payload, or a headerless CSV whose rows are samples and
/// columns are channels. CSV input takes the rate from `rate_override`.
pub fn read_recording(path: &Path, rate_override: Option<f64>) -> Result<MultichannelRecording> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "json" => read_raw_with_header(path),
        "csv" => {
            let rate = rate_override.ok_or_else(|| Error::Format {
                path: path.display().to_string(),
                reason: "CSV input needs an explicit sampling rate".to_string(),
            })?;
            read_csv(path, rate)
        }
        other => Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("unsupported recording extension {other:?}, expected json or csv"),
        }),
    }
}

fn read_raw_with_header(path: &Path) -> Result<MultichannelRecording> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: RecordingHeader = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: format!("bad recording header: {e}"),
    })?;
    if header.channels == 0 {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: "header declares zero channels".to_string(),
        });
    }
    let raw_path = path.parent().unwrap_or(Path::new(".")).join(&header.data);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("unsupported dtype {other:?}"),
            })
        }
    };
    if bytes.len() % (width * header.channels) != 0 {
        return Err(Error::Format {
            path: raw_path.display().to_string(),
            reason: format!(
                "{} bytes is not a whole number of {}-channel {} samples",
                bytes.len(),
                header.channels,
                header.dtype
            ),
        });
    }
    let n_samples = bytes.len() / (width * header.channels);
    if n_samples == 0 {
        return Err(Error::Format {
            path: raw_path.display().to_string(),
            reason: "payload contains no samples".to_string(),
        });
    }
    let mut data = Array2::zeros((header.channels, n_samples));
    for t in 0..n_samples {
        for c in 0..header.channels {
            let off = (t * header.channels + c) * width;
            let v = if width == 4 {
                f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap())
            };
            data[(c, t)] = v;
        }
    }
    MultichannelRecording::new(header.rate, data)
}

fn read_csv(path: &Path, rate: f64) -> Result<MultichannelRecording> {
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    reason: format!(
                        "line {} has {} columns, expected {}",
                        i + 1,
                        row.len(),
                        first.len()
                    ),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: "no samples".to_string(),
        });
    }
    let channels = rows[0].len();
    let mut data = Array2::zeros((channels, rows.len()));
    for (t, row) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            data[(c, t)] = *v;
        }
    }
    MultichannelRecording::new(rate, data)
}

/// Writes the JSON header and raw payload next to each other; `path` must end
/// in `.json` and the payload lands at the same stem with `.raw`.
pub fn write_recording(path: &Path, rec: &MultichannelRecording, dtype: &str) -> Result<()> {
    if path.extension().and_then(|e| e.to_str()) != Some("json") {
        return Err(Error::invalid(format!(
            "recording header path {} must end in .json",
            path.display()
        )));
    }
    let raw_name = path
        .with_extension("raw")
        .file_name()
        .unwrap()
        .to_string_lossy()
        .into_owned();
    let width = match dtype {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::invalid(format!("unsupported dtype {other:?}"))),
    };
    let header = RecordingHeader {
        channels: rec.n_channels(),
        rate: rec.rate,
        dtype: dtype.to_string(),
        data: raw_name.clone(),
    };
    let mut bytes = Vec::with_capacity(rec.data.len() * width);
    for t in 0..rec.n_samples() {
        for c in 0..rec.n_channels() {
            let v = rec.data[(c, t)];
            if width == 4 {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            } else {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let raw_path = path.parent().unwrap_or(Path::new(".")).join(&raw_name);
    fs::File::create(&raw_path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(&raw_path, e))?;
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Transition band width of the bandpass edges in Hz.
const TAPER_HZ: f64 = 0.5;

/// Zero-phase bandpass: FFT each channel, scale the spectrum by a real
/// brick-wall mask with raised-cosine edges of width [`TAPER_HZ`], and
/// transform back. The mask is applied symmetrically so the output is real
/// and no group delay is introduced.
pub fn bandpass(rec: &MultichannelRecording, low: f64, high: f64) -> Result<MultichannelRecording> {
    if !(low.is_finite() && high.is_finite()) || low < 0.0 || high <= low {
        return Err(Error::invalid(format!("bad band ({low}, {high}) Hz")));
    }
    let n = rec.n_samples();
    let half = TAPER_HZ / 2.0;
    let mask = |f: f64| -> f64 {
        if f < low - half || f > high + half {
            0.0
        } else if f < low + half {
            0.5 * (1.0 - (std::f64::consts::PI * (low + half - f) / TAPER_HZ).cos())
        } else if f > high - half {
            0.5 * (1.0 - (std::f64::consts::PI * (f - high + half) / TAPER_HZ).cos())
        } else {
            1.0
        }
    };
    let fwd = plan_forward(n);
    let inv = plan_inverse(n);
    let mut out = Array2::zeros((rec.n_channels(), n));
    let mut buf = vec![Complex64::ZERO; n];
    for c in 0..rec.n_channels() {
        for (b, v) in buf.iter_mut().zip(rec.data.row(c)) {
            *b = Complex64::new(*v, 0.0);
        }
        fwd.process(&mut buf);
        for (i, b) in buf.iter_mut().enumerate() {
            let bin = i.min(n - i);
            let f = bin as f64 * rec.rate / n as f64;
            *b *= mask(f);
        }
        inv.process(&mut buf);
        let scale = 1.0 / n as f64;
        for (o, b) in out.row_mut(c).iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }
    MultichannelRecording::new(rec.rate, out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    /// Analysis window length in samples.
    pub window: usize,
    /// Fractional overlap between consecutive windows.
    pub overlap: f64,
    /// Bandpass applied before the transform, in Hz.
    pub band: (f64, f64),
    /// Frequency range kept in the output, in Hz.
    pub crop: (f64, f64),
    /// Zero-padded transform length.
    pub nfft: usize,
    /// Emit |X|² instead of |X|.
    pub power: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window: 1024,
            overlap: 0.5,
            band: (1.0, 20.0),
            crop: (0.17, 14.1),
            nfft: 1472,
            power: false,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::invalid("window must be at least 2 samples".to_string()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::invalid(format!("overlap {} outside [0, 1)", self.overlap)));
        }
        if self.nfft < self.window {
            return Err(Error::invalid(format!(
                "nfft {} is shorter than the window {}",
                self.nfft, self.window
            )));
        }
        if self.band.1 <= self.band.0 || self.band.0 < 0.0 {
            return Err(Error::invalid(format!("bad band {:?}", self.band)));
        }
        if self.crop.1 <= self.crop.0 || self.crop.0 < 0.0 {
            return Err(Error::invalid(format!("bad crop {:?}", self.crop)));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        (((self.window as f64) * (1.0 - self.overlap)).round() as usize).max(1)
    }

    /// Number of frames produced for a signal of `n_samples`: the signal is
    /// centered by padding `window/2` zeros on the left and enough on the
    /// right that every hop-aligned window fits.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop()) + 1
    }

    /// Indices of the retained FFT bins after the frequency crop.
    pub fn kept_bins(&self, rate: f64) -> Vec<usize> {
        let df = rate / self.nfft as f64;
        (0..=self.nfft / 2)
            .filter(|b| {
                let f = *b as f64 * df;
                f >= self.crop.0 - 1e-9 && f <= self.crop.1 + 1e-9
            })
            .collect()
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos()))
        .collect()
}

/// Short-time Fourier transform of every channel with a periodic Hann window,
/// zero padding to `nfft`, and the configured frequency crop. The output has
/// shape channels x kept bins x frames and holds magnitudes (or powers), so
/// every entry is nonnegative. The bandpass in `cfg.band` is not applied
/// here; see [`ingest`].
pub fn stft_tensor(rec: &MultichannelRecording, cfg: &StftConfig) -> Result<DenseTensor> {
    cfg.validate()?;
    let hop = cfg.hop();
    let frames = cfg.n_frames(rec.n_samples());
    let bins = cfg.kept_bins(rec.rate);
    if bins.is_empty() {
        return Err(Error::invalid(format!(
            "crop {:?} keeps no bins at rate {} with nfft {}",
            cfg.crop, rec.rate, cfg.nfft
        )));
    }
    let left = cfg.window / 2;
    let taps = hann(cfg.window);
    let fwd = plan_forward(cfg.nfft);
    let mut out = DenseTensor::zeros(&[rec.n_channels(), bins.len(), frames]);
    let mut buf = vec![Complex64::ZERO; cfg.nfft];
    for c in 0..rec.n_channels() {
        let row = rec.data.row(c);
        for frame in 0..frames {
            buf.fill(Complex64::ZERO);
            let start = frame * hop;
            for (j, tap) in taps.iter().enumerate() {
                let padded_idx = start + j;
                let v = if padded_idx < left {
                    0.0
                } else {
                    let idx = padded_idx - left;
                    if idx < rec.n_samples() {
                        row[idx]
                    } else {
                        0.0
                    }
                };
                buf[j] = Complex64::new(v * tap, 0.0);
            }
            fwd.process(&mut buf);
            for (bi, &b) in bins.iter().enumerate() {
                let mag = buf[b].norm();
                let v = if cfg.power { mag * mag } else { mag };
                out.set(&[c, bi, frame], v);
            }
        }
    }
    Ok(out)
}

/// Full ingestion pipeline: bandpass to `cfg.band`, then the cropped STFT.
pub fn ingest(rec: &MultichannelRecording, cfg: &StftConfig) -> Result<DenseTensor> {
    cfg.validate()?;
    let filtered = bandpass(rec, cfg.band.0, cfg.band.1)?;
    stft_tensor(&filtered, cfg)
}
