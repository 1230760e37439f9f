//! LV-centred region-of-interest extraction and intensity normalization.
//!
//! The LV is located from a binary mask (typically myocardium plus blood
//! pool, or the output of any external detector): the centre of mass of its
//! middle slice, rounded to the nearest pixel, fixes one crop window that is
//! applied to every slice.
//!
//! Centering convention: when the difference between input and target
//! extent is odd, cropping drops the extra row/column from the high-index
//! side and padding adds the extra zero row/column on the high-index side.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::volume::{ClassId, Dims, MaskVolume};

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("lv mask has {actual} voxels, volume has {expected}")]
    MaskDims { expected: usize, actual: usize },
    #[error("crop size must be at least 1x1")]
    CropSize,
}

/// Default in-plane ROI size.
pub const DEFAULT_ROI_SIZE: (usize, usize) = (128, 128);

pub fn middle_slice_index(nz: usize) -> usize {
    nz / 2
}

/// Mean foreground `(x, y)` position.
pub fn center_of_mass(mask: &Grid<bool>) -> Result<(f64, f64), GeomError> {
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
    for (x, y, &on) in mask.iter_xy() {
        if on {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(GeomError::EmptyMask);
    }
    Ok((sx / n as f64, sy / n as f64))
}

/// Crop window of `size` centred on `center_px`: it starts at
/// `center - size / 2` (integer division) on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub center_px: (i64, i64),
    pub size: (usize, usize),
}

impl CropSpec {
    pub fn new(center_px: (i64, i64), size: (usize, usize)) -> Result<Self, GeomError> {
        if size.0 == 0 || size.1 == 0 {
            return Err(GeomError::CropSize);
        }
        Ok(CropSpec { center_px, size })
    }

    pub fn origin(&self) -> (i64, i64) {
        (
            self.center_px.0 - (self.size.0 / 2) as i64,
            self.center_px.1 - (self.size.1 / 2) as i64,
        )
    }
}

/// Copies the `size` window starting at `origin`; outside pixels are `T::default()`.
pub fn crop_window<T: Copy + Default>(
    image: &Grid<T>,
    origin: (i64, i64),
    size: (usize, usize),
) -> Grid<T> {
    Grid::from_fn(size.0, size.1, |x, y| {
        let sx = origin.0 + x as i64;
        let sy = origin.1 + y as i64;
        image
            .checked_get(sx as isize, sy as isize)
            .copied()
            .unwrap_or_default()
    })
}

fn centered_offset(input: usize, target: usize) -> i64 {
    if input >= target {
        ((input - target) / 2) as i64
    } else {
        -(((target - input) / 2) as i64)
    }
}

/// Centre crop or zero-pad to `target = (w, h)`.
pub fn pad_crop_to<T: Copy + Default>(image: &Grid<T>, target: (usize, usize)) -> Grid<T> {
    let origin = (
        centered_offset(image.width(), target.0),
        centered_offset(image.height(), target.1),
    );
    crop_window(image, origin, target)
}

/// Where the ROI centre came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterSource {
    MiddleSlice,
    WholeMask,
    ImageCenter,
}

/// Crop window chosen for a volume, with provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiPlacement {
    pub crop: CropSpec,
    pub center_of_mass: Option<(f64, f64)>,
    pub source: CenterSource,
}

/// Picks the crop window: centre of mass of the middle slice of `lv_mask`,
/// else of the whole 3D mask, else the image centre.
pub fn place_roi(
    dims: Dims,
    lv_mask: &[bool],
    size: (usize, usize),
) -> Result<RoiPlacement, GeomError> {
    if lv_mask.len() != dims.voxel_count() {
        return Err(GeomError::MaskDims {
            expected: dims.voxel_count(),
            actual: lv_mask.len(),
        });
    }
    let len = dims.slice_len();
    let mid = middle_slice_index(dims.nz);
    let mid_mask = Grid::from_vec(
        dims.nx,
        dims.ny,
        lv_mask[mid * len..(mid + 1) * len].to_vec(),
    )
    .unwrap();

    let (com, source) = match center_of_mass(&mid_mask) {
        Ok(c) => (Some(c), CenterSource::MiddleSlice),
        Err(_) => {
            // Project the whole stack onto one plane, counting every voxel.
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
            for (i, &on) in lv_mask.iter().enumerate() {
                if on {
                    let p = i % len;
                    sx += (p % dims.nx) as f64;
                    sy += (p / dims.nx) as f64;
                    n += 1;
                }
            }
            if n > 0 {
                (
                    Some((sx / n as f64, sy / n as f64)),
                    CenterSource::WholeMask,
                )
            } else {
                (None, CenterSource::ImageCenter)
            }
        }
    };
    let center = match com {
        Some((cx, cy)) => (cx.round() as i64, cy.round() as i64),
        None => ((dims.nx / 2) as i64, (dims.ny / 2) as i64),
    };
    Ok(RoiPlacement {
        crop: CropSpec::new(center, size)?,
        center_of_mass: com,
        source,
    })
}

/// Applies one crop window to every slice of image and labels. Spacing and
/// ids are kept; all slices are retained.
pub fn apply_crop(volume: &MaskVolume, crop: CropSpec) -> MaskVolume {
    let dims = volume.dims();
    let (w, h) = crop.size;
    let origin = crop.origin();
    let mut image = Vec::with_capacity(w * h * dims.nz);
    let mut labels = Vec::with_capacity(w * h * dims.nz);
    for z in 0..dims.nz {
        image.extend(crop_window(&volume.slice_image(z), origin, crop.size).into_vec());
        labels.extend(
            crop_window(&volume.slice_labels(z).map(|c| c.code()), origin, crop.size)
                .into_vec()
                .into_iter()
                .map(|c| ClassId::from_code(c).expect("codes come from valid labels")),
        );
    }
    MaskVolume::new(
        Dims::new(w, h, dims.nz).expect("crop size is positive"),
        image,
        labels,
        volume.spacing(),
        volume.patient_id(),
        volume.series_id(),
    )
    .expect("buffers sized from crop")
}

/// Extracts the LV-centred stack of in-plane `size`.
pub fn extract_roi_stack(
    volume: &MaskVolume,
    lv_mask: &[bool],
    size: (usize, usize),
) -> Result<(MaskVolume, RoiPlacement), GeomError> {
    let placement = place_roi(volume.dims(), lv_mask, size)?;
    Ok((apply_crop(volume, placement.crop), placement))
}

/// Zero-mean, unit population-SD rescaling. Near-constant input (SD below
/// 1e-8) maps to all zeros.
pub fn normalize(values: &[f32]) -> Vec<f32> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let sd = var.sqrt();
    if sd < 1e-8 {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v as f64 - mean) / sd) as f32)
        .collect()
}
