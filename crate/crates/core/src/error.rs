use thiserror::Error;

use crate::{bispectral, breaks, cluster, inference, panel, spatial, spectral, synth};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Union of the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Panel(#[from] panel::PanelError),
    #[error(transparent)]
    Spectral(#[from] spectral::SpectralError),
    #[error(transparent)]
    Bispectral(#[from] bispectral::BispectralError),
    #[error(transparent)]
    Cluster(#[from] cluster::ClusterError),
    #[error(transparent)]
    Breaks(#[from] breaks::BreakError),
    #[error(transparent)]
    Spatial(#[from] spatial::SpatialError),
    #[error(transparent)]
    Inference(#[from] inference::InferenceError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}
