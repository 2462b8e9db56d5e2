//! Convolutional sparse coding for tensor-valued signals, where each atom's
//! activation tensor is constrained to a low-rank Kruskal (CP) form.
//!
//! A signal `Y` of order `p` is modelled as a sum of circular convolutions
//! `Y ≈ Σ_k D_k ⊛ Z_k` between small dictionary atoms `D_k` and activation
//! tensors `Z_k = Σ_r z_r^(1) ∘ … ∘ z_r^(p)` of CP rank at most `R`. Encoding
//! alternates accelerated proximal updates over the factor modes of every
//! `Z_k`, each mode subproblem being convex with a block-diagonal Gram
//! structure in the Fourier domain; dictionary learning interleaves an ADMM
//! step over the atoms.
//!
//! The crate ships the solver ([`solver`]), the per-mode machinery it is
//! built from ([`zstep`], [`dstep`]), two unconstrained baselines
//! ([`baselines`]), a synthetic benchmark generator ([`synth`]), a
//! spectrogram ingestion path for multichannel recordings ([`ingest`]), and
//! a small binary tensor container format ([`io`]). The `kcsc` binary wraps
//! these as `synth`, `ingest`, `fit`, `encode`, `reconstruct` and `bench`
//! subcommands; the `examples/` directory shows the same workflows through
//! the library API.

pub mod baselines;
pub mod bench;
pub mod dstep;
pub mod error;
pub mod ingest;
pub mod io;
pub mod solver;
pub mod spectral;
pub mod synth;
pub mod tensor;
pub mod zstep;

pub use error::{Error, Result};
pub use solver::{FitResult, SolverConfig};
pub use tensor::{DenseTensor, Dictionary, KruskalActivation};
