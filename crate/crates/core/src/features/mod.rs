//! Spectral and connectivity features of component time series.

pub mod connectivity;
pub mod extract;
pub mod spectral;

pub use connectivity::{
    amplitude_modulation, coherence, synchronization_likelihood, AmProfile, SlNeighbors, SlParams,
};
pub use extract::{Extractor, SlSettings};
pub use spectral::{relative_power, spectral_entropy, welch_psd, Psd};
