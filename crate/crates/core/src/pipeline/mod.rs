//! Manifest-driven orchestration of the whole analysis with a content-hashed
//! artifact cache, plus the transfer-parameter grid runner.

mod cache;
mod config;
mod grid;
mod manifest;
mod run;

pub use cache::{atomic_write, hash_parts, Cache};
pub use config::{
    ContentMode, CpConfig, FeatureSet, GridCell, GridConfig, NetworkConfig, PreprocessConfig, RandomWidths, RunConfig,
};
pub use grid::{run_grid, GridSummary};
pub use manifest::{Manifest, ManifestEntry};
pub use run::{Pipeline, StageStats};

use crate::classify::ClassifyError;
use crate::cpdecomp::CpError;
use crate::features::FeatureError;
use crate::imaging::ImagingError;
use crate::nst::NstError;
use crate::segmentation::SegmentationError;
use crate::vggnet::VggError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing {stage} artifact ({detail}); rerun the `{stage}` stage")]
    MissingArtifact { stage: &'static str, detail: String },
    #[error("corrupt artifact {path}: {detail}")]
    Artifact { path: String, detail: String },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Nst(#[from] NstError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Cp(#[from] CpError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Vgg(#[from] VggError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Preprocess,
    Segment,
    ContentImage,
    Transfer,
    Features,
    Decompose,
    Classify,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Preprocess,
        Stage::Segment,
        Stage::ContentImage,
        Stage::Transfer,
        Stage::Features,
        Stage::Decompose,
        Stage::Classify,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Segment => "segment",
            Stage::ContentImage => "content-image",
            Stage::Transfer => "transfer",
            Stage::Features => "features",
            Stage::Decompose => "decompose",
            Stage::Classify => "classify",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}
