//! On-disk formats: the KTNS tensor container, model directories and run
//! manifests.
//!
//! A KTNS file holds one dense real tensor: the ASCII magic `KTNS`, a `u16`
//! format version, a `u16` order `p`, then `p` dimensions as little-endian
//! `u64`, then the row-major values as little-endian `f64`. Factor matrices
//! are stored as order-2 tensors and a dictionary as one order-`p+1` tensor
//! whose leading axis enumerates atoms.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Dictionary, KruskalActivation};

pub const KTNS_MAGIC: &[u8; 4] = b"KTNS";
pub const KTNS_VERSION: u16 = 1;

/// Guards against absurd allocations when reading corrupt headers.
const MAX_ELEMENTS: u64 = 1 << 32;

fn label(path: &Path) -> String {
    path.display().to_string()
}

pub fn write_tensor_to(w: &mut impl Write, t: &DenseTensor) -> std::io::Result<()> {
    w.write_all(KTNS_MAGIC)?;
    w.write_all(&KTNS_VERSION.to_le_bytes())?;
    w.write_all(&(t.order() as u16).to_le_bytes())?;
    for &n in t.shape() {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(label(path), e))?;
    let mut w = BufWriter::new(file);
    write_tensor_to(&mut w, t).map_err(|e| Error::io(label(path), e))?;
    w.flush().map_err(|e| Error::io(label(path), e))?;
    Ok(())
}

pub fn read_tensor_from(r: &mut impl Read, name: &str) -> Result<DenseTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::io(name, e))?;
    if &magic != KTNS_MAGIC {
        return Err(Error::format(name, "bad magic, not a KTNS file"));
    }
    let mut u16buf = [0u8; 2];
    r.read_exact(&mut u16buf)
        .map_err(|e| Error::io(name, e))?;
    let version = u16::from_le_bytes(u16buf);
    if version != KTNS_VERSION {
        return Err(Error::format(
            name,
            format!("unsupported KTNS version {version}"),
        ));
    }
    r.read_exact(&mut u16buf)
        .map_err(|e| Error::io(name, e))?;
    let order = u16::from_le_bytes(u16buf) as usize;
    if order == 0 {
        return Err(Error::format(name, "tensor order must be positive"));
    }
    let mut shape = Vec::with_capacity(order);
    let mut u64buf = [0u8; 8];
    let mut len: u64 = 1;
    for _ in 0..order {
        r.read_exact(&mut u64buf)
            .map_err(|e| Error::io(name, e))?;
        let n = u64::from_le_bytes(u64buf);
        if n == 0 {
            return Err(Error::format(name, "zero dimension in header"));
        }
        len = len.saturating_mul(n);
        shape.push(n as usize);
    }
    if len > MAX_ELEMENTS {
        return Err(Error::format(name, "header declares an implausible size"));
    }
    let mut data = vec![0.0f64; len as usize];
    let mut f64buf = [0u8; 8];
    for v in &mut data {
        r.read_exact(&mut f64buf)
            .map_err(|e| Error::io(name, e))?;
        *v = f64::from_le_bytes(f64buf);
    }
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => return Err(Error::format(name, "trailing bytes after tensor payload")),
        Err(e) => return Err(Error::io(name, e)),
    }
    DenseTensor::new(shape, data)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(label(path), e))?;
    let mut r = BufReader::new(file);
    read_tensor_from(&mut r, &label(path))
}

pub fn matrix_to_tensor(mat: &Array2<f64>) -> DenseTensor {
    let (rows, cols) = mat.dim();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            data.push(mat[[r, c]]);
        }
    }
    DenseTensor::new(vec![rows, cols], data).unwrap()
}

pub fn tensor_to_matrix(t: &DenseTensor) -> Result<Array2<f64>> {
    if t.order() != 2 {
        return Err(Error::shape(format!(
            "expected an order-2 tensor, got order {}",
            t.order()
        )));
    }
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    Ok(Array2::from_shape_fn((rows, cols), |(r, c)| {
        t.data()[r * cols + c]
    }))
}

/// Stacks the atoms into one order-`p+1` tensor with leading axis `K`.
pub fn dictionary_to_tensor(dict: &Dictionary) -> DenseTensor {
    let window = dict.window();
    let mut shape = Vec::with_capacity(window.len() + 1);
    shape.push(dict.n_atoms());
    shape.extend_from_slice(window);
    let mut data = Vec::with_capacity(shape.iter().product());
    for atom in dict.atoms() {
        data.extend_from_slice(atom.data());
    }
    DenseTensor::new(shape, data).unwrap()
}

pub fn tensor_to_dictionary(t: &DenseTensor) -> Result<Dictionary> {
    if t.order() < 2 {
        return Err(Error::shape(
            "dictionary tensor must have a leading atom axis".to_string(),
        ));
    }
    let n_atoms = t.shape()[0];
    let window = t.shape()[1..].to_vec();
    let atom_len: usize = window.iter().product();
    let atoms = (0..n_atoms)
        .map(|k| {
            DenseTensor::new(
                window.clone(),
                t.data()[k * atom_len..(k + 1) * atom_len].to_vec(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Dictionary::new(atoms)
}

/// Activations stored in a model directory: Kruskal factors for the
/// low-rank solver, dense tensors for the baselines.
#[derive(Debug, Clone)]
pub enum ModelActivations {
    Kruskal(Vec<Vec<KruskalActivation>>),
    Dense(Vec<Vec<DenseTensor>>),
}

impl ModelActivations {
    pub fn n_signals(&self) -> usize {
        match self {
            ModelActivations::Kruskal(a) => a.len(),
            ModelActivations::Dense(a) => a.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format_version: u32,
    pub solver: String,
    pub signal_shape: Vec<usize>,
    pub n_signals: usize,
    pub n_atoms: usize,
    pub rank: usize,
    pub window: Vec<usize>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub objective_trace: Vec<f64>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(label(path), e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(label(path), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(label(path), e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(label(path), e.to_string()))
}

/// Writes `dictionary.ktns`, one KTNS file per activation block and
/// `metadata.json` into `dir`, creating it if needed.
pub fn save_model(
    dir: impl AsRef<Path>,
    dict: &Dictionary,
    activations: &ModelActivations,
    meta: &ModelMetadata,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(label(dir), e))?;
    write_tensor(dir.join("dictionary.ktns"), &dictionary_to_tensor(dict))?;
    match activations {
        ModelActivations::Kruskal(per_signal) => {
            for (n, per_atom) in per_signal.iter().enumerate() {
                for (k, act) in per_atom.iter().enumerate() {
                    for (q, factor) in act.factors().iter().enumerate() {
                        write_tensor(
                            dir.join(format!("z_{n}_{k}_{q}.ktns")),
                            &matrix_to_tensor(factor),
                        )?;
                    }
                }
            }
        }
        ModelActivations::Dense(per_signal) => {
            for (n, per_atom) in per_signal.iter().enumerate() {
                for (k, z) in per_atom.iter().enumerate() {
                    write_tensor(dir.join(format!("z_{n}_{k}.ktns")), z)?;
                }
            }
        }
    }
    write_json(&dir.join("metadata.json"), meta)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<(Dictionary, ModelActivations, ModelMetadata)> {
    let dir = dir.as_ref();
    let meta: ModelMetadata = read_json(&dir.join("metadata.json"))?;
    let dict = tensor_to_dictionary(&read_tensor(dir.join("dictionary.ktns"))?)?;
    let order = meta.signal_shape.len();
    let activations = if meta.solver == "kcsc" {
        let mut per_signal = Vec::with_capacity(meta.n_signals);
        for n in 0..meta.n_signals {
            let mut per_atom = Vec::with_capacity(meta.n_atoms);
            for k in 0..meta.n_atoms {
                let mut factors = Vec::with_capacity(order);
                for q in 0..order {
                    let t = read_tensor(dir.join(format!("z_{n}_{k}_{q}.ktns")))?;
                    factors.push(tensor_to_matrix(&t)?);
                }
                per_atom.push(KruskalActivation::new(factors)?);
            }
            per_signal.push(per_atom);
        }
        ModelActivations::Kruskal(per_signal)
    } else {
        let mut per_signal = Vec::with_capacity(meta.n_signals);
        for n in 0..meta.n_signals {
            let mut per_atom = Vec::with_capacity(meta.n_atoms);
            for k in 0..meta.n_atoms {
                per_atom.push(read_tensor(dir.join(format!("z_{n}_{k}.ktns")))?);
            }
            per_signal.push(per_atom);
        }
        ModelActivations::Dense(per_signal)
    };
    Ok((dict, activations, meta))
}

/// Record of one CLI invocation with everything needed to reproduce it:
/// the resolved configuration, seed, file paths, wall-clock timings and the
/// metric rows the command reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub timings_sec: BTreeMap<String, f64>,
    pub metrics: Vec<BTreeMap<String, serde_json::Value>>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        RunManifest {
            command: command.into(),
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            threads: None,
            timings_sec: BTreeMap::new(),
            metrics: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

/// Lists the `y_<n>.ktns` signal files of a dataset directory in index order.
pub fn list_signal_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut indexed = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(label(dir), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(label(dir), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_prefix("y_").and_then(|s| s.strip_suffix(".ktns")) {
            if let Ok(idx) = stem.parse::<usize>() {
                indexed.push((idx, entry.path()));
            }
        }
    }
    indexed.sort_by_key(|(idx, _)| *idx);
    Ok(indexed.into_iter().map(|(_, p)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let shape = vec![3usize, 5, 2];
        let data: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = DenseTensor::new(shape, data).unwrap();
        let mut buf = Vec::new();
        write_tensor_to(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], KTNS_MAGIC);
        let back = read_tensor_from(&mut buf.as_slice(), "buf").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn header_layout_is_stable() {
        let t = DenseTensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        let mut buf = Vec::new();
        write_tensor_to(&mut buf, &t).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 2 + 2 * 8 + 6 * 8);
        assert_eq!(buf[4..6], 1u16.to_le_bytes());
        assert_eq!(buf[6..8], 2u16.to_le_bytes());
        assert_eq!(buf[8..16], 2u64.to_le_bytes());
        assert_eq!(buf[16..24], 3u64.to_le_bytes());
    }

    #[test]
    fn rejects_corrupt_headers_and_trailing_bytes() {
        let t = DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor_to(&mut buf, &t).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_tensor_from(&mut bad_magic.as_slice(), "m").is_err());

        let mut bad_version = buf.clone();
        bad_version[4] = 99;
        assert!(read_tensor_from(&mut bad_version.as_slice(), "v").is_err());

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read_tensor_from(&mut trailing.as_slice(), "t").is_err());

        let truncated = &buf[..buf.len() - 1];
        assert!(read_tensor_from(&mut &truncated[..], "s").is_err());
    }

    #[test]
    fn dictionary_stack_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let dict = Dictionary::random_unit(&[2, 3, 2], 3, &mut rng);
        let t = dictionary_to_tensor(&dict);
        assert_eq!(t.shape(), &[3, 2, 3, 2]);
        let back = tensor_to_dictionary(&t).unwrap();
        assert_eq!(back, dict);
    }

    #[test]
    fn model_directory_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let dir = std::env::temp_dir().join(format!("kcsc_model_test_{}", std::process::id()));
        let dict = Dictionary::random_unit(&[2, 2], 2, &mut rng);
        let act = KruskalActivation::new(vec![
            Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0)),
            Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0)),
        ])
        .unwrap();
        let acts = ModelActivations::Kruskal(vec![vec![act.clone(), act.clone()]]);
        let meta = ModelMetadata {
            format_version: MODEL_FORMAT_VERSION,
            solver: "kcsc".to_string(),
            signal_shape: vec![4, 5],
            n_signals: 1,
            n_atoms: 2,
            rank: 2,
            window: vec![2, 2],
            seed: 7,
            config: serde_json::json!({"alpha": [0.1, 0.1]}),
            objective_trace: vec![3.0, 2.0, 1.5],
        };
        save_model(&dir, &dict, &acts, &meta).unwrap();
        let (d2, a2, m2) = load_model(&dir).unwrap();
        assert_eq!(d2, dict);
        assert_eq!(m2.objective_trace, meta.objective_trace);
        match a2 {
            ModelActivations::Kruskal(per_signal) => {
                assert_eq!(per_signal.len(), 1);
                assert_eq!(per_signal[0][1].factor(0), act.factor(0));
            }
            _ => panic!("expected Kruskal activations"),
        }
        fs::remove_dir_all(&dir).unwrap();
    }
}
