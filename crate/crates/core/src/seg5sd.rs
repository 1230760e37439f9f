//! Reference scar segmentation by thresholding at the remote-myocardium mean
//! plus `k` standard deviations (k = 5 by default).
//!
//! A myocardial pixel is marked when its intensity is `>=` the threshold.
//! The ROI SD is the population SD. MVO is not thresholded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::{remove_small_components, Connectivity};
use crate::grid::Grid;
use crate::volume::{ClassId, ClassSet, MaskVolume};

pub const DEFAULT_K: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum Seg5sdError {
    #[error("remote ROI is empty")]
    EmptyRoi,
    #[error("ROI pixel ({x}, {y}) lies outside the {width}x{height} slice")]
    RoiOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("ROI slice {slice} out of range (nz = {nz})")]
    RoiSlice { slice: usize, nz: usize },
    #[error("{masks} scar masks given for a volume of {nz} slices")]
    MaskCount { masks: usize, nz: usize },
    #[error("mask of {got:?} does not match slice dims {expected:?}")]
    MaskDims {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Pixels of one slice drawn in healthy myocardium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRoi {
    pub slice_index: usize,
    pub pixels: Vec<(usize, usize)>,
}

impl RemoteRoi {
    /// All `remote_myocardium` pixels of a slice.
    pub fn all_remote(volume: &MaskVolume, slice_index: usize) -> Self {
        let pixels = volume
            .slice_labels(slice_index)
            .iter_xy()
            .filter(|&(_, _, &c)| c == ClassId::RemoteMyocardium)
            .map(|(x, y, _)| (x, y))
            .collect();
        RemoteRoi {
            slice_index,
            pixels,
        }
    }

    /// Pixels inside the half-open rectangle `[x0, x1) × [y0, y1)`.
    pub fn rect(slice_index: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let pixels = (y0..y1)
            .flat_map(|y| (x0..x1).map(move |x| (x, y)))
            .collect();
        RemoteRoi {
            slice_index,
            pixels,
        }
    }

    /// Checks bounds (hard error) and returns the ROI pixels that are not
    /// labelled remote myocardium (a warning for the caller to surface).
    pub fn validate(&self, volume: &MaskVolume) -> Result<Vec<(usize, usize)>, Seg5sdError> {
        let dims = volume.dims();
        if self.pixels.is_empty() {
            return Err(Seg5sdError::EmptyRoi);
        }
        if self.slice_index >= dims.nz {
            return Err(Seg5sdError::RoiSlice {
                slice: self.slice_index,
                nz: dims.nz,
            });
        }
        let labels = volume.slice_labels(self.slice_index);
        let mut off_remote = Vec::new();
        for &(x, y) in &self.pixels {
            if x >= dims.nx || y >= dims.ny {
                return Err(Seg5sdError::RoiOutOfBounds {
                    x,
                    y,
                    width: dims.nx,
                    height: dims.ny,
                });
            }
            if *labels.get(x, y) != ClassId::RemoteMyocardium {
                off_remote.push((x, y));
            }
        }
        Ok(off_remote)
    }
}

/// Mean and population SD of the ROI intensities.
pub fn remote_stats(image: &Grid<f32>, roi: &RemoteRoi) -> Result<(f64, f64), Seg5sdError> {
    if roi.pixels.is_empty() {
        return Err(Seg5sdError::EmptyRoi);
    }
    let mut values = Vec::with_capacity(roi.pixels.len());
    for &(x, y) in &roi.pixels {
        match image.checked_get(x as isize, y as isize) {
            Some(&v) => values.push(v as f64),
            None => {
                return Err(Seg5sdError::RoiOutOfBounds {
                    x,
                    y,
                    width: image.width(),
                    height: image.height(),
                })
            }
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Marks myocardial pixels with intensity `>= mean + k·sd`.
pub fn threshold_5sd(
    image: &Grid<f32>,
    myocardium: &Grid<bool>,
    mean: f64,
    sd: f64,
    k: f64,
) -> Result<Grid<bool>, Seg5sdError> {
    if (image.width(), image.height()) != (myocardium.width(), myocardium.height()) {
        return Err(Seg5sdError::MaskDims {
            expected: (image.width(), image.height()),
            got: (myocardium.width(), myocardium.height()),
        });
    }
    let threshold = mean + k * sd;
    let data = image
        .as_slice()
        .iter()
        .zip(myocardium.as_slice())
        .map(|(&v, &m)| m && v as f64 >= threshold)
        .collect();
    Ok(Grid::from_vec(image.width(), image.height(), data).unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub mean: f64,
    pub sd: f64,
    pub k: f64,
}

impl ThresholdParams {
    pub fn threshold(&self) -> f64 {
        self.mean + self.k * self.sd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub mean: f64,
    pub sd: f64,
    pub k: f64,
    pub threshold: f64,
    pub per_slice_area_mm2: Vec<f64>,
    pub total_volume_ml: f64,
}

impl ThresholdReport {
    /// `slice,area_mm2` rows followed by `mean`, `sd`, `threshold` and
    /// `total_ml` footer rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice,area_mm2\n");
        for (z, a) in self.per_slice_area_mm2.iter().enumerate() {
            out.push_str(&format!("{z},{a}\n"));
        }
        out.push_str(&format!("mean,{}\n", self.mean));
        out.push_str(&format!("sd,{}\n", self.sd));
        out.push_str(&format!("threshold,{}\n", self.threshold));
        out.push_str(&format!("total_ml,{}\n", self.total_volume_ml));
        out
    }
}

/// Per-slice hyperenhanced area and the volume over the effective slice spacing.
pub fn infarct_report(
    volume: &MaskVolume,
    scar_masks: &[Grid<bool>],
    params: ThresholdParams,
) -> Result<ThresholdReport, Seg5sdError> {
    let dims = volume.dims();
    if scar_masks.len() != dims.nz {
        return Err(Seg5sdError::MaskCount {
            masks: scar_masks.len(),
            nz: dims.nz,
        });
    }
    let spacing = volume.spacing();
    let mut areas = Vec::with_capacity(dims.nz);
    for m in scar_masks {
        if (m.width(), m.height()) != (dims.nx, dims.ny) {
            return Err(Seg5sdError::MaskDims {
                expected: (dims.nx, dims.ny),
                got: (m.width(), m.height()),
            });
        }
        areas.push(m.count() as f64 * spacing.pixel_area_mm2());
    }
    let total = areas.iter().sum::<f64>() * spacing.effective_slice_spacing() / 1000.0;
    Ok(ThresholdReport {
        mean: params.mean,
        sd: params.sd,
        k: params.k,
        threshold: params.threshold(),
        per_slice_area_mm2: areas,
        total_volume_ml: total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    pub k: f64,
    /// Lower bound applied to the ROI SD before thresholding.
    pub sd_floor: f64,
    /// Components smaller than this (8-connected) are discarded.
    pub min_component: usize,
    pub myocardium: ClassSet,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            k: DEFAULT_K,
            sd_floor: 0.0,
            min_component: 1,
            myocardium: ClassSet::MYOCARDIUM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub scar_masks: Vec<Grid<bool>>,
    pub report: ThresholdReport,
    /// ROI pixels not labelled remote myocardium.
    pub off_remote_roi_pixels: Vec<(usize, usize)>,
}

impl Segmentation {
    /// Copy of `volume` whose myocardium is relabelled: thresholded pixels
    /// become scar, the rest of the myocardium remote. MVO labels are kept.
    pub fn relabel(&self, volume: &MaskVolume) -> MaskVolume {
        let mut out = volume.clone();
        for (z, mask) in self.scar_masks.iter().enumerate() {
            for (label, &hit) in out.slice_labels_mut(z).iter_mut().zip(mask.as_slice()) {
                match *label {
                    ClassId::RemoteMyocardium | ClassId::Scar => {
                        *label = if hit {
                            ClassId::Scar
                        } else {
                            ClassId::RemoteMyocardium
                        };
                    }
                    _ => {}
                }
            }
        }
        out
    }
}

/// Thresholds every slice of `volume` against statistics from `roi`.
pub fn segment_volume(
    volume: &MaskVolume,
    roi: &RemoteRoi,
    options: &SegmentOptions,
) -> Result<Segmentation, Seg5sdError> {
    let off_remote = roi.validate(volume)?;
    let (mean, sd) = remote_stats(&volume.slice_image(roi.slice_index), roi)?;
    let params = ThresholdParams {
        mean,
        sd: sd.max(options.sd_floor),
        k: options.k,
    };
    let mut masks = Vec::with_capacity(volume.dims().nz);
    for z in 0..volume.dims().nz {
        let myo = volume.slice_mask(z, options.myocardium);
        let marked = threshold_5sd(
            &volume.slice_image(z),
            &myo,
            params.mean,
            params.sd,
            params.k,
        )?;
        masks.push(remove_small_components(
            &marked,
            options.min_component,
            Connectivity::Eight,
        ));
    }
    let report = infarct_report(volume, &masks, params)?;
    Ok(Segmentation {
        scar_masks: masks,
        report,
        off_remote_roi_pixels: off_remote,
    })
}
