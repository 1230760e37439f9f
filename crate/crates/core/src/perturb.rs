//! Seeded corruption of label stacks, simulating the errors a per-slice
//! segmenter makes without inter-slice context.
//!
//! Five perturbation kinds are drawn in a fixed order, one Bernoulli trial
//! per volume each: class deletion, mask nullification, false scar, false
//! MVO and an intensity transform. An applied kind targets one uniformly
//! chosen slice. Every change is recorded in a [`PerturbationLog`] that can
//! be replayed against the input to reproduce the output exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::components::{connected_components, Components, Connectivity};
use crate::grid::Grid;
use crate::volume::{ClassId, ClassSet, MaskVolume};

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("invalid perturbation config: {0}")]
    InvalidConfig(String),
    #[error("percentile of an empty set")]
    EmptyInput,
    #[error("slice has no myocardium")]
    NoMyocardium,
    #[error("slice {slice} out of range (nz = {nz})")]
    SliceOutOfRange { slice: usize, nz: usize },
    #[error("label and image slices differ in size")]
    SliceDims,
}

/// Nearest-rank percentile: the element at index `ceil(p/100 · n) − 1` of
/// the ascending sort, clamped to `[0, n−1]`. The result is always an
/// element of `values`.
pub fn percentile(values: &[f32], p: f64) -> Result<f32, PerturbError> {
    if values.is_empty() {
        return Err(PerturbError::EmptyInput);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(PerturbError::InvalidConfig(format!(
            "percentile {p} outside [0, 100]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let rank = (p * n as f64 / 100.0).ceil() as i64 - 1;
    Ok(sorted[rank.clamp(0, n as i64 - 1) as usize])
}

/// Which classes a deletion removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeleteTarget {
    Scar,
    Mvo,
    Both,
}

impl DeleteTarget {
    pub fn classes(self) -> ClassSet {
        match self {
            DeleteTarget::Scar => ClassSet::single(ClassId::Scar),
            DeleteTarget::Mvo => ClassSet::single(ClassId::Mvo),
            DeleteTarget::Both => ClassSet::INFARCT,
        }
    }
}

fn check_slice(volume: &MaskVolume, slice: usize) -> Result<(), PerturbError> {
    let nz = volume.dims().nz;
    if slice >= nz {
        return Err(PerturbError::SliceOutOfRange { slice, nz });
    }
    Ok(())
}

/// Relabels `target` voxels on `slice` to remote myocardium. Returns the
/// flat indices of changed voxels.
pub fn delete_class_slice(
    volume: &mut MaskVolume,
    target: DeleteTarget,
    slice: usize,
) -> Result<Vec<usize>, PerturbError> {
    check_slice(volume, slice)?;
    let classes = target.classes();
    let base = slice * volume.dims().slice_len();
    let mut changed = Vec::new();
    for (i, label) in volume.slice_labels_mut(slice).iter_mut().enumerate() {
        if classes.contains(*label) {
            *label = ClassId::RemoteMyocardium;
            changed.push(base + i);
        }
    }
    Ok(changed)
}

/// Sets every label on `slice` to background. Returns changed flat indices.
pub fn nullify_mask(volume: &mut MaskVolume, slice: usize) -> Result<Vec<usize>, PerturbError> {
    check_slice(volume, slice)?;
    let base = slice * volume.dims().slice_len();
    let mut changed = Vec::new();
    for (i, label) in volume.slice_labels_mut(slice).iter_mut().enumerate() {
        if *label != ClassId::Background {
            *label = ClassId::Background;
            changed.push(base + i);
        }
    }
    Ok(changed)
}

/// Result of a false-scar insertion on one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct FalseScar {
    pub labels: Grid<ClassId>,
    /// Myocardium intensity percentile used as the candidate threshold.
    pub threshold: f32,
    /// Pixels of the largest candidate component, scan order.
    pub pixels: Vec<(usize, usize)>,
}

/// Thresholds the myocardium at its `percentile_p` intensity and relabels
/// the largest 8-connected component of pixels `>=` the threshold as scar.
/// Ties between equally large components go to the one found first in scan
/// order.
pub fn add_false_scar(
    image: &Grid<f32>,
    labels: &Grid<ClassId>,
    percentile_p: f64,
) -> Result<FalseScar, PerturbError> {
    if (image.width(), image.height()) != (labels.width(), labels.height()) {
        return Err(PerturbError::SliceDims);
    }
    let myo_values: Vec<f32> = image
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .filter(|(_, &c)| ClassSet::MYOCARDIUM.contains(c))
        .map(|(&v, _)| v)
        .collect();
    if myo_values.is_empty() {
        return Err(PerturbError::NoMyocardium);
    }
    let threshold = percentile(&myo_values, percentile_p)?;
    let candidates = Grid::from_fn(image.width(), image.height(), |x, y| {
        ClassSet::MYOCARDIUM.contains(*labels.get(x, y)) && *image.get(x, y) >= threshold
    });
    let cc = connected_components(&candidates, Connectivity::Eight);
    let largest = cc
        .largest()
        .expect("nearest-rank threshold is attained by a myocardium pixel");
    let pixels = cc.pixels_of(largest);
    let mut out = labels.clone();
    for &(x, y) in &pixels {
        out.set(x, y, ClassId::Scar);
    }
    Ok(FalseScar {
        labels: out,
        threshold,
        pixels,
    })
}

/// Relabels the scar pixels within Chebyshev distance `radius` of `seed` as MVO.
pub fn false_mvo_at(
    labels: &Grid<ClassId>,
    seed: (usize, usize),
    radius: usize,
) -> (Grid<ClassId>, Vec<(usize, usize)>) {
    let mut out = labels.clone();
    let mut changed = Vec::new();
    let r = radius as isize;
    let (sx, sy) = (seed.0 as isize, seed.1 as isize);
    for y in (sy - r).max(0)..=(sy + r).min(labels.height() as isize - 1) {
        for x in (sx - r).max(0)..=(sx + r).min(labels.width() as isize - 1) {
            let (x, y) = (x as usize, y as usize);
            if *labels.get(x, y) == ClassId::Scar {
                out.set(x, y, ClassId::Mvo);
                changed.push((x, y));
            }
        }
    }
    (out, changed)
}

/// Picks one scar pixel uniformly and converts it and its scar neighbours
/// to MVO. A slice without scar is returned unchanged.
pub fn add_false_mvo<R: Rng + ?Sized>(
    labels: &Grid<ClassId>,
    rng: &mut R,
    radius: usize,
) -> (Grid<ClassId>, Vec<(usize, usize)>) {
    let scar: Vec<(usize, usize)> = labels
        .iter_xy()
        .filter(|&(_, _, &c)| c == ClassId::Scar)
        .map(|(x, y, _)| (x, y))
        .collect();
    if scar.is_empty() {
        return (labels.clone(), Vec::new());
    }
    let seed = scar[rng.random_range(0..scar.len())];
    false_mvo_at(labels, seed, radius)
}

/// Slice-wise intensity transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "amount", rename_all = "snake_case")]
pub enum IntensityTransform {
    /// Rescale to [0, 1] over the slice range, raise to the power, rescale back.
    Gamma(f64),
    /// Add `amount · (max − min)`.
    Brightness(f64),
    /// `mean + amount · (x − mean)`.
    Contrast(f64),
    /// Box-downsample by the factor, then nearest-neighbour upsample.
    LowRes(usize),
}

impl IntensityTransform {
    pub fn apply(&self, image: &Grid<f32>) -> Grid<f32> {
        if image.is_empty() {
            return image.clone();
        }
        let values = image.as_slice();
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v as f64), hi.max(v as f64))
            });
        let range = max - min;
        match *self {
            IntensityTransform::Gamma(g) => {
                if range == 0.0 || g == 1.0 {
                    return image.clone();
                }
                image.map(|&v| (min + ((v as f64 - min) / range).powf(g) * range) as f32)
            }
            IntensityTransform::Brightness(b) => {
                if range == 0.0 {
                    return image.clone();
                }
                image.map(|&v| (v as f64 + b * range) as f32)
            }
            IntensityTransform::Contrast(c) => {
                let mean = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
                image.map(|&v| (mean + c * (v as f64 - mean)) as f32)
            }
            IntensityTransform::LowRes(f) => {
                let f = f.max(1);
                let (w, h) = (image.width(), image.height());
                let (bw, bh) = (w.div_ceil(f), h.div_ceil(f));
                let mut sums = vec![(0.0f64, 0usize); bw * bh];
                for (x, y, &v) in image.iter_xy() {
                    let b = &mut sums[(y / f) * bw + x / f];
                    b.0 += v as f64;
                    b.1 += 1;
                }
                Grid::from_fn(w, h, |x, y| {
                    let (s, n) = sums[(y / f) * bw + x / f];
                    (s / n as f64) as f32
                })
            }
        }
    }
}

/// Parameter ranges for the intensity transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntensityRanges {
    pub gamma: (f64, f64),
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub lowres_factors: Vec<usize>,
}

impl Default for IntensityRanges {
    fn default() -> Self {
        IntensityRanges {
            gamma: (0.5, 2.0),
            brightness: (-0.3, 0.3),
            contrast: (0.5, 1.5),
            lowres_factors: vec![2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullifyScope {
    /// One randomly chosen slice.
    #[default]
    Slice,
    /// Every slice of the volume.
    Volume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub p_delete_class: f64,
    pub p_nullify: f64,
    pub p_false_scar: f64,
    pub p_false_mvo: f64,
    pub p_intensity: f64,
    pub scar_percentile: f64,
    pub mvo_neighbor_radius_px: usize,
    pub nullify_scope: NullifyScope,
    pub intensity_ranges: IntensityRanges,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            p_delete_class: 0.10,
            p_nullify: 0.10,
            p_false_scar: 0.10,
            p_false_mvo: 0.02,
            p_intensity: 0.10,
            scar_percentile: 85.0,
            mvo_neighbor_radius_px: 1,
            nullify_scope: NullifyScope::Slice,
            intensity_ranges: IntensityRanges::default(),
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    pub fn with_seed(seed: u64) -> Self {
        PerturbationConfig {
            seed,
            ..Default::default()
        }
    }

    /// Every probability zero.
    pub fn disabled(seed: u64) -> Self {
        PerturbationConfig {
            p_delete_class: 0.0,
            p_nullify: 0.0,
            p_false_scar: 0.0,
            p_false_mvo: 0.0,
            p_intensity: 0.0,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        let probs = [
            ("p_delete_class", self.p_delete_class),
            ("p_nullify", self.p_nullify),
            ("p_false_scar", self.p_false_scar),
            ("p_false_mvo", self.p_false_mvo),
            ("p_intensity", self.p_intensity),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(PerturbError::InvalidConfig(format!(
                    "{name} = {p} outside [0, 1]"
                )));
            }
        }
        if !(self.scar_percentile > 0.0 && self.scar_percentile < 100.0) {
            return Err(PerturbError::InvalidConfig(format!(
                "scar_percentile = {} outside (0, 100)",
                self.scar_percentile
            )));
        }
        let r = &self.intensity_ranges;
        for (name, (lo, hi)) in [
            ("gamma", r.gamma),
            ("brightness", r.brightness),
            ("contrast", r.contrast),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(PerturbError::InvalidConfig(format!(
                    "{name} range ({lo}, {hi})"
                )));
            }
        }
        if r.gamma.0 <= 0.0 {
            return Err(PerturbError::InvalidConfig("gamma must be > 0".into()));
        }
        if r.lowres_factors.is_empty() || r.lowres_factors.contains(&0) {
            return Err(PerturbError::InvalidConfig(
                "lowres factors must be non-empty and >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    DeleteClass,
    Nullify,
    FalseScar,
    FalseMvo,
    Intensity,
}

impl PerturbationKind {
    pub const ORDER: [PerturbationKind; 5] = [
        PerturbationKind::DeleteClass,
        PerturbationKind::Nullify,
        PerturbationKind::FalseScar,
        PerturbationKind::FalseMvo,
        PerturbationKind::Intensity,
    ];
}

/// One applied perturbation. Label events set every voxel in `voxels` to
/// `relabeled_to`; intensity events apply `transform` to each slice in
/// `slices`. An event with nothing to change is still logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEvent {
    pub kind: PerturbationKind,
    pub slices: Vec<usize>,
    pub classes: ClassSet,
    pub relabeled_to: Option<ClassId>,
    /// Flat voxel indices, x fastest.
    pub voxels: Vec<usize>,
    pub transform: Option<IntensityTransform>,
}

impl PerturbationEvent {
    pub fn is_noop(&self) -> bool {
        self.voxels.is_empty() && self.transform.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerturbationLog {
    pub seed: u64,
    pub events: Vec<PerturbationEvent>,
}

impl PerturbationLog {
    pub fn count(&self, kind: PerturbationKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Re-applies the logged events to `original`.
    pub fn replay(&self, original: &MaskVolume) -> MaskVolume {
        let mut out = original.clone();
        for event in &self.events {
            if let Some(to) = event.relabeled_to {
                let labels = out.labels_mut();
                for &i in &event.voxels {
                    labels[i] = to;
                }
            }
            if let Some(t) = event.transform {
                for &z in &event.slices {
                    let transformed = t.apply(&out.slice_image(z));
                    out.slice_image_mut(z)
                        .copy_from_slice(transformed.as_slice());
                }
            }
        }
        out
    }
}

fn to_flat(pixels: &[(usize, usize)], nx: usize, base: usize) -> Vec<usize> {
    pixels.iter().map(|&(x, y)| base + y * nx + x).collect()
}

fn write_slice_labels(volume: &mut MaskVolume, z: usize, labels: &Grid<ClassId>) {
    volume
        .slice_labels_mut(z)
        .copy_from_slice(labels.as_slice());
}

/// Applies the configured perturbations to a copy of `volume`.
pub fn apply_perturbations(
    volume: &MaskVolume,
    config: &PerturbationConfig,
) -> Result<(MaskVolume, PerturbationLog), PerturbError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = volume.clone();
    let mut log = PerturbationLog {
        seed: config.seed,
        events: Vec::new(),
    };
    let dims = volume.dims();
    let nx = dims.nx;

    if rng.random_bool(config.p_delete_class) {
        let z = rng.random_range(0..dims.nz);
        let target =
            [DeleteTarget::Scar, DeleteTarget::Mvo, DeleteTarget::Both][rng.random_range(0..3)];
        let voxels = delete_class_slice(&mut out, target, z)?;
        log.events.push(PerturbationEvent {
            kind: PerturbationKind::DeleteClass,
            slices: vec![z],
            classes: target.classes(),
            relabeled_to: Some(ClassId::RemoteMyocardium),
            voxels,
            transform: None,
        });
    }

    if rng.random_bool(config.p_nullify) {
        let slices: Vec<usize> = match config.nullify_scope {
            NullifyScope::Slice => vec![rng.random_range(0..dims.nz)],
            NullifyScope::Volume => (0..dims.nz).collect(),
        };
        let mut voxels = Vec::new();
        for &z in &slices {
            voxels.extend(nullify_mask(&mut out, z)?);
        }
        log.events.push(PerturbationEvent {
            kind: PerturbationKind::Nullify,
            slices,
            classes: ClassSet::of(&ClassId::ALL[1..]),
            relabeled_to: Some(ClassId::Background),
            voxels,
            transform: None,
        });
    }

    if rng.random_bool(config.p_false_scar) {
        let z = rng.random_range(0..dims.nz);
        let voxels = match add_false_scar(
            &out.slice_image(z),
            &out.slice_labels(z),
            config.scar_percentile,
        ) {
            Ok(fs) => {
                write_slice_labels(&mut out, z, &fs.labels);
                to_flat(&fs.pixels, nx, z * dims.slice_len())
            }
            Err(PerturbError::NoMyocardium) => Vec::new(),
            Err(e) => return Err(e),
        };
        log.events.push(PerturbationEvent {
            kind: PerturbationKind::FalseScar,
            slices: vec![z],
            classes: ClassSet::single(ClassId::Scar),
            relabeled_to: Some(ClassId::Scar),
            voxels,
            transform: None,
        });
    }

    if rng.random_bool(config.p_false_mvo) {
        let z = rng.random_range(0..dims.nz);
        let (labels, pixels) = add_false_mvo(
            &out.slice_labels(z),
            &mut rng,
            config.mvo_neighbor_radius_px,
        );
        write_slice_labels(&mut out, z, &labels);
        log.events.push(PerturbationEvent {
            kind: PerturbationKind::FalseMvo,
            slices: vec![z],
            classes: ClassSet::single(ClassId::Mvo),
            relabeled_to: Some(ClassId::Mvo),
            voxels: to_flat(&pixels, nx, z * dims.slice_len()),
            transform: None,
        });
    }

    if rng.random_bool(config.p_intensity) {
        let z = rng.random_range(0..dims.nz);
        let r = &config.intensity_ranges;
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..hi)
            }
        };
        let transform = match rng.random_range(0..4) {
            0 => IntensityTransform::Gamma(uniform(&mut rng, r.gamma)),
            1 => IntensityTransform::Brightness(uniform(&mut rng, r.brightness)),
            2 => IntensityTransform::Contrast(uniform(&mut rng, r.contrast)),
            _ => IntensityTransform::LowRes(
                r.lowres_factors[rng.random_range(0..r.lowres_factors.len())],
            ),
        };
        let transformed = transform.apply(&out.slice_image(z));
        out.slice_image_mut(z)
            .copy_from_slice(transformed.as_slice());
        log.events.push(PerturbationEvent {
            kind: PerturbationKind::Intensity,
            slices: vec![z],
            classes: ClassSet::EMPTY,
            relabeled_to: None,
            voxels: Vec::new(),
            transform: Some(transform),
        });
    }

    Ok((out, log))
}
