//! Zoom-in GUI grounding toolkit.
//!
//! - [`geometry`]: boxes, points, IoU/GIoU, region proposals and the
//!   original/view coordinate bridge.
//! - [`pseudo_label`]: GIoU-thresholded pseudo boxes and their loss weights.
//! - [`training_artifacts`]: packed label sequences with span-isolating
//!   attention masks and shared position ids.
//! - [`zoom_data`]: zoom-in instruction data generation.
//! - [`inference`]: multi-stage grounding against a text-completion backend.
//! - [`evaluation`]: click accuracy, IoU histograms and size-decile reports.

pub mod geometry;
pub mod parallel;
pub mod pseudo_label;
pub mod seeding;
pub mod training_artifacts;
pub mod imaging;
pub mod inference;
pub mod prompts;
pub mod dataset;
pub mod evaluation;
pub mod zoom_data;
