//! Synthetic LV phantoms: an annulus of myocardium around a blood pool, an
//! angular scar wedge and an optional MVO core inside the wedge.
//!
//! Region membership is decided at pixel centres, with pixel `(x, y)`
//! centred at coordinates `(x, y)`. A pixel at radius `r` from the centre is
//! blood pool when `r < inner`, myocardium when `inner <= r < outer` and
//! background otherwise. Angles are `atan2(y - cy, x - cx)`; a wedge covers
//! the half-open arc from `start_angle` counter-clockwise to `end_angle`.

use std::f64::consts::TAU;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{ClassId, ClassSet, Dims, MaskVolume, Spacing};

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("radii must satisfy 0 < inner < outer (got {inner}, {outer})")]
    Radii { inner: f64, outer: f64 },
    #[error("angular span must lie in [0, 2π], got {0}")]
    Span(f64),
    #[error("slice range {start}..{end} exceeds nz = {nz}")]
    Slices { start: usize, end: usize, nz: usize },
    #[error("MVO core is not inside the scar wedge: {0}")]
    MvoOutsideScar(&'static str),
    #[error("noise_sd must be finite and >= 0, got {0}")]
    Noise(f64),
    #[error("dims must all be positive, got {0:?}")]
    Dims([usize; 3]),
}

/// Arc from `start_angle` to `end_angle` (radians) over a slice range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wedge {
    pub start_angle: f64,
    pub end_angle: f64,
    pub slices: Range<usize>,
}

impl Wedge {
    pub fn span(&self) -> f64 {
        self.end_angle - self.start_angle
    }

    fn contains_angle(&self, theta: f64) -> bool {
        (theta - self.start_angle).rem_euclid(TAU) < self.span()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvoCore {
    pub start_angle: f64,
    pub end_angle: f64,
    pub inner_radius_px: f64,
    pub outer_radius_px: f64,
    pub slices: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub background: f32,
    pub blood: f32,
    pub remote: f32,
    pub scar: f32,
    pub mvo: f32,
}

impl Default for Intensities {
    fn default() -> Self {
        Intensities {
            background: 0.0,
            blood: 160.0,
            remote: 100.0,
            scar: 220.0,
            mvo: 60.0,
        }
    }
}

impl Intensities {
    fn of(&self, class: ClassId) -> f32 {
        match class {
            ClassId::Background => self.background,
            ClassId::Bloodpool => self.blood,
            ClassId::RemoteMyocardium => self.remote,
            ClassId::Scar => self.scar,
            ClassId::Mvo => self.mvo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: Spacing,
    pub inner_radius_px: f64,
    pub outer_radius_px: f64,
    pub center_px: (f64, f64),
    pub scar_wedge: Wedge,
    pub mvo_core: Option<MvoCore>,
    pub intensities: Intensities,
    pub noise_sd: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Annulus centred in the frame with a 60° scar wedge through every
    /// slice, no MVO and no noise.
    pub fn centered(dims: [usize; 3], inner_radius_px: f64, outer_radius_px: f64) -> Self {
        PhantomSpec {
            dims,
            spacing: Spacing::default(),
            inner_radius_px,
            outer_radius_px,
            center_px: ((dims[0] / 2) as f64, (dims[1] / 2) as f64),
            scar_wedge: Wedge {
                start_angle: 0.0,
                end_angle: TAU / 6.0,
                slices: 0..dims[2],
            },
            mvo_core: None,
            intensities: Intensities::default(),
            noise_sd: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<Dims, PhantomError> {
        let [nx, ny, nz] = self.dims;
        let dims = Dims::new(nx, ny, nz).map_err(|_| PhantomError::Dims(self.dims))?;
        let (inner, outer) = (self.inner_radius_px, self.outer_radius_px);
        if !(inner > 0.0 && inner < outer && outer.is_finite()) {
            return Err(PhantomError::Radii { inner, outer });
        }
        let span = self.scar_wedge.span();
        if !(0.0..=TAU).contains(&span) {
            return Err(PhantomError::Span(span));
        }
        check_slices(&self.scar_wedge.slices, nz)?;
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(PhantomError::Noise(self.noise_sd));
        }
        if let Some(core) = &self.mvo_core {
            check_slices(&core.slices, nz)?;
            let core_span = core.end_angle - core.start_angle;
            if !(0.0..=TAU).contains(&core_span) {
                return Err(PhantomError::Span(core_span));
            }
            let offset = (core.start_angle - self.scar_wedge.start_angle).rem_euclid(TAU);
            if offset + core_span > span {
                return Err(PhantomError::MvoOutsideScar("angle range"));
            }
            if !(core.inner_radius_px >= inner
                && core.inner_radius_px < core.outer_radius_px
                && core.outer_radius_px <= outer)
            {
                return Err(PhantomError::MvoOutsideScar("radial band"));
            }
            let w = &self.scar_wedge.slices;
            if !core.slices.is_empty() && (core.slices.start < w.start || core.slices.end > w.end) {
                return Err(PhantomError::MvoOutsideScar("slice range"));
            }
        }
        Ok(dims)
    }

    /// Class of the pixel centred at `(x, y)` on slice `z`.
    pub fn class_at(&self, x: usize, y: usize, z: usize) -> ClassId {
        let dx = x as f64 - self.center_px.0;
        let dy = y as f64 - self.center_px.1;
        let r2 = dx * dx + dy * dy;
        if r2 < self.inner_radius_px * self.inner_radius_px {
            return ClassId::Bloodpool;
        }
        if r2 >= self.outer_radius_px * self.outer_radius_px {
            return ClassId::Background;
        }
        let theta = dy.atan2(dx);
        if !(self.scar_wedge.slices.contains(&z) && self.scar_wedge.contains_angle(theta)) {
            return ClassId::RemoteMyocardium;
        }
        if let Some(core) = &self.mvo_core {
            let in_band = r2 >= core.inner_radius_px * core.inner_radius_px
                && r2 < core.outer_radius_px * core.outer_radius_px;
            let in_arc =
                (theta - core.start_angle).rem_euclid(TAU) < core.end_angle - core.start_angle;
            if core.slices.contains(&z) && in_band && in_arc {
                return ClassId::Mvo;
            }
        }
        ClassId::Scar
    }
}

fn check_slices(slices: &Range<usize>, nz: usize) -> Result<(), PhantomError> {
    if slices.end > nz || slices.start > slices.end {
        return Err(PhantomError::Slices {
            start: slices.start,
            end: slices.end,
            nz,
        });
    }
    Ok(())
}

/// Per-class voxel counts and volumes of a generated phantom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub counts: [usize; 5],
    pub voxel_volume_mm3: f64,
}

impl GroundTruth {
    pub fn count(&self, class: ClassId) -> usize {
        self.counts[class.code() as usize]
    }

    pub fn count_set(&self, classes: ClassSet) -> usize {
        classes.iter().map(|c| self.count(c)).sum()
    }

    pub fn volume_ml(&self, classes: ClassSet) -> f64 {
        self.count_set(classes) as f64 * self.voxel_volume_mm3 / 1000.0
    }
}

/// Renders the phantom. Noise is drawn from a generator seeded with
/// `spec.seed`, one draw per voxel in storage order.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(MaskVolume, GroundTruth), PhantomError> {
    let dims = spec.validate()?;
    let n = dims.voxel_count();
    let mut labels = Vec::with_capacity(n);
    let mut counts = [0usize; 5];
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let c = spec.class_at(x, y, z);
                counts[c.code() as usize] += 1;
                labels.push(c);
            }
        }
    }

    let mut image: Vec<f32> = labels.iter().map(|&c| spec.intensities.of(c)).collect();
    if spec.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal =
            Normal::new(0.0, spec.noise_sd).map_err(|_| PhantomError::Noise(spec.noise_sd))?;
        for v in &mut image {
            *v += normal.sample(&mut rng) as f32;
        }
    }

    let volume = MaskVolume::new(
        dims,
        image,
        labels,
        spec.spacing,
        "phantom",
        format!("seed-{}", spec.seed),
    )
    .expect("phantom buffers match dims");
    let truth = GroundTruth {
        counts,
        voxel_volume_mm3: spec.spacing.effective_voxel_volume_mm3(),
    };
    Ok((volume, truth))
}
