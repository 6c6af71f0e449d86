//! Structure-based compound–protein interaction modelling.
//!
//! The crate covers the path from pre-docked coordinate files to scores and
//! evaluation reports:
//!
//! * [`chemio`] parses PDB receptors, SDF ligand poses and CSV manifests.
//! * [`fingerprint`] computes circular fingerprints and set similarities.
//! * [`geograph`] builds the typed radius graph over ligand atoms and residues.
//! * [`equinet`] is the rotation-equivariant tensor-product network.
//! * [`difftrain`] holds the reverse-mode tape, optimizers, training loop and
//!   checkpoint format.
//! * [`physscore`] is the empirical docking score and pose re-ranking.
//! * [`datasplit`] clusters compounds/proteins and emits leakage-free folds.
//! * [`metrics`] has regression and virtual-screening metrics.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iteration otherwise.

pub mod chemio;
pub mod datasplit;
pub mod difftrain;
pub mod equinet;
pub mod error;
pub mod fingerprint;
pub mod geograph;
pub mod metrics;
pub mod par;
pub mod physscore;

pub use error::{Error, Result};

/// Plain 3-vector in Ångström.
pub type Vec3 = [f64; 3];
