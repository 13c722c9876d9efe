//! Preprocessing for conversational speech corpora: CHAT transcript
//! parsing, text normalization, cohort labeling, audio segmentation and
//! features, and reproducible experiment manifests.

pub mod audio;
pub mod chat;
pub mod cohort;
pub mod features;
pub mod fixtures;
pub mod manifest;
pub mod pipeline;
pub mod text;
pub mod util;
pub mod wizard;
