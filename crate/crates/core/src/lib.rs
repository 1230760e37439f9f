//! Evaluation toolkit for late-gadolinium-enhancement infarct segmentation.
//!
//! Everything operates on [`MaskVolume`]: a co-registered intensity stack,
//! a five-class label stack and the physical voxel geometry.
//!
//! * [`volume`] - data model, on-disk container, class volumes.
//! * [`phantom`] - synthetic LV annulus phantoms with exact ground truth.
//! * [`geom`] - LV-centred region-of-interest extraction and normalization.
//! * [`seg5sd`] - remote-myocardium statistics and the mean + k·SD threshold.
//! * [`perturb`] - seeded corruption of label stacks.
//! * [`metrics`] - Dice, volume differences, detection tables, exact binomial CIs.
//! * [`stats`] - concordance, Bland-Altman, Wilcoxon, chi-square, Cohen's kappa.

pub mod components;
pub mod geom;
pub mod grid;
pub mod metrics;
pub mod perturb;
pub mod phantom;
pub mod seg5sd;
pub mod special;
pub mod stats;
pub mod volume;

pub use grid::Grid;
pub use volume::{ClassId, ClassSet, Dims, MaskVolume, Spacing};
