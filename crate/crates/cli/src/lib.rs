//! Experiment workflow for the cascaded liver and lesion segmenter.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod overlay;
