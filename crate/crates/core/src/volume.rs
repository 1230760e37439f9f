//! Mask-volume data model and the on-disk volume container.
//!
//! A container is a directory holding three files:
//!
//! * `meta.json` - dims, spacing, ids and the label map.
//! * `image.raw` - little-endian `f32` intensities, x fastest, then y, then z.
//! * `labels.raw` - one `u8` class code per voxel, same order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

pub const META_FILE: &str = "meta.json";
pub const IMAGE_FILE: &str = "image.raw";
pub const LABELS_FILE: &str = "labels.raw";

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("missing container file {0}")]
    MissingFile(PathBuf),
    #[error("{file}: expected {expected} bytes for dims {dims:?}, found {actual}")]
    DimsMismatch {
        file: &'static str,
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("invalid label code {code} at voxel index {index}")]
    InvalidLabel { index: usize, code: u8 },
    #[error("invalid dims {0:?}: every extent must be positive")]
    InvalidDims([usize; 3]),
    #[error("invalid spacing: {0}")]
    InvalidSpacing(String),
    #[error("payload length {actual} does not match dims ({expected} voxels)")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("label map entry {key:?} = {value:?} does not match the fixed class table")]
    LabelMap { key: String, value: String },
    #[error("malformed meta.json: {0}")]
    Meta(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One of the five segmentation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ClassId {
    Background = 0,
    Bloodpool = 1,
    RemoteMyocardium = 2,
    Scar = 3,
    Mvo = 4,
}

impl ClassId {
    pub const ALL: [ClassId; 5] = [
        ClassId::Background,
        ClassId::Bloodpool,
        ClassId::RemoteMyocardium,
        ClassId::Scar,
        ClassId::Mvo,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Background => "background",
            ClassId::Bloodpool => "bloodpool",
            ClassId::RemoteMyocardium => "remote_myocardium",
            ClassId::Scar => "scar",
            ClassId::Mvo => "mvo",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A set of classes, stored as a bitmask over the five codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ClassSet(u8);

impl ClassSet {
    pub const EMPTY: ClassSet = ClassSet(0);
    /// {remote_myocardium, scar, mvo}
    pub const MYOCARDIUM: ClassSet = ClassSet(0b11100);
    /// {scar, mvo}
    pub const INFARCT: ClassSet = ClassSet(0b11000);
    /// Myocardium plus blood pool: the whole left ventricle.
    pub const LEFT_VENTRICLE: ClassSet = ClassSet(0b11110);

    pub fn of(classes: &[ClassId]) -> Self {
        classes.iter().fold(Self::EMPTY, |s, &c| s.with(c))
    }

    pub fn single(class: ClassId) -> Self {
        ClassSet(1 << class.code())
    }

    pub fn with(self, class: ClassId) -> Self {
        ClassSet(self.0 | (1 << class.code()))
    }

    #[inline]
    pub fn contains(self, class: ClassId) -> bool {
        self.0 & (1 << class.code()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_disjoint(self, other: ClassSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn union(self, other: ClassSet) -> Self {
        ClassSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = ClassId> {
        ClassId::ALL.into_iter().filter(move |&c| self.contains(c))
    }

    /// Parses either a named group (`myocardium`, `infarct`, `lv`) or a
    /// comma-separated list of class names or codes.
    pub fn parse(text: &str) -> Option<Self> {
        match text.trim() {
            "myocardium" => return Some(Self::MYOCARDIUM),
            "infarct" => return Some(Self::INFARCT),
            "lv" | "left_ventricle" => return Some(Self::LEFT_VENTRICLE),
            _ => {}
        }
        let mut set = Self::EMPTY;
        for part in text.split(',') {
            let part = part.trim();
            let class = match part.parse::<u8>() {
                Ok(code) => ClassId::from_code(code)?,
                Err(_) => ClassId::from_name(part)?,
            };
            set = set.with(class);
        }
        (!set.is_empty()).then_some(set)
    }
}

// Serialized as a list of class names.
impl Serialize for ClassSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let names: Vec<&str> = self.iter().map(|c| c.name()).collect();
        names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClassSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        let mut set = ClassSet::EMPTY;
        for n in names {
            let c = ClassId::from_name(&n)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown class {n:?}")))?;
            set = set.with(c);
        }
        Ok(set)
    }
}

/// Physical voxel geometry in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub dx: f64,
    pub dy: f64,
    pub slice_thickness: f64,
    pub interslice_gap: f64,
}

impl Spacing {
    pub fn new(
        dx: f64,
        dy: f64,
        slice_thickness: f64,
        interslice_gap: f64,
    ) -> Result<Self, VolumeError> {
        let s = Spacing {
            dx,
            dy,
            slice_thickness,
            interslice_gap,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        let fields = [
            ("dx", self.dx),
            ("dy", self.dy),
            ("slice_thickness", self.slice_thickness),
            ("interslice_gap", self.interslice_gap),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(VolumeError::InvalidSpacing(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Slice thickness plus the interslice gap.
    pub fn effective_slice_spacing(&self) -> f64 {
        self.slice_thickness + self.interslice_gap
    }

    pub fn pixel_area_mm2(&self) -> f64 {
        self.dx * self.dy
    }

    /// In-plane footprint times the effective slice spacing.
    pub fn effective_voxel_volume_mm3(&self) -> f64 {
        self.dx * self.dy * self.effective_slice_spacing()
    }
}

impl Default for Spacing {
    /// 2.2 × 1.6 mm pixels, 8 mm slices with a 2 mm gap.
    fn default() -> Self {
        Spacing {
            dx: 2.2,
            dy: 1.6,
            slice_thickness: 8.0,
            interslice_gap: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self, VolumeError> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(VolumeError::InvalidDims([nx, ny, nz]));
        }
        Ok(Dims { nx, ny, nz })
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn slice_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

/// Intensity stack, label stack and geometry of one examination.
///
/// Slices are indexed `0..nz` from base to apex.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    dims: Dims,
    image: Vec<f32>,
    labels: Vec<ClassId>,
    spacing: Spacing,
    patient_id: String,
    series_id: String,
}

impl MaskVolume {
    pub fn new(
        dims: Dims,
        image: Vec<f32>,
        labels: Vec<ClassId>,
        spacing: Spacing,
        patient_id: impl Into<String>,
        series_id: impl Into<String>,
    ) -> Result<Self, VolumeError> {
        let n = dims.voxel_count();
        for len in [image.len(), labels.len()] {
            if len != n {
                return Err(VolumeError::LengthMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        spacing.validate()?;
        Ok(MaskVolume {
            dims,
            image,
            labels,
            spacing,
            patient_id: patient_id.into(),
            series_id: series_id.into(),
        })
    }

    /// Like [`MaskVolume::new`] but with raw label codes, rejecting unknown codes.
    pub fn from_codes(
        dims: Dims,
        image: Vec<f32>,
        codes: &[u8],
        spacing: Spacing,
        patient_id: impl Into<String>,
        series_id: impl Into<String>,
    ) -> Result<Self, VolumeError> {
        let labels = decode_labels(codes)?;
        Self::new(dims, image, labels, spacing, patient_id, series_id)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn series_id(&self) -> &str {
        &self.series_id
    }

    pub fn image(&self) -> &[f32] {
        &self.image
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn image_mut(&mut self) -> &mut [f32] {
        &mut self.image
    }

    pub fn labels_mut(&mut self) -> &mut [ClassId] {
        &mut self.labels
    }

    pub fn set_ids(&mut self, patient_id: impl Into<String>, series_id: impl Into<String>) {
        self.patient_id = patient_id.into();
        self.series_id = series_id.into();
    }

    /// Same geometry and ids with a different label stack.
    pub fn with_labels(&self, labels: Vec<ClassId>) -> Result<Self, VolumeError> {
        Self::new(
            self.dims,
            self.image.clone(),
            labels,
            self.spacing,
            self.patient_id.clone(),
            self.series_id.clone(),
        )
    }

    fn slice_range(&self, z: usize) -> std::ops::Range<usize> {
        assert!(
            z < self.dims.nz,
            "slice {z} out of range (nz = {})",
            self.dims.nz
        );
        let len = self.dims.slice_len();
        z * len..(z + 1) * len
    }

    pub fn slice_image(&self, z: usize) -> Grid<f32> {
        let r = self.slice_range(z);
        Grid::from_vec(self.dims.nx, self.dims.ny, self.image[r].to_vec()).unwrap()
    }

    pub fn slice_labels(&self, z: usize) -> Grid<ClassId> {
        let r = self.slice_range(z);
        Grid::from_vec(self.dims.nx, self.dims.ny, self.labels[r].to_vec()).unwrap()
    }

    pub fn slice_image_raw(&self, z: usize) -> &[f32] {
        let r = self.slice_range(z);
        &self.image[r]
    }

    pub fn slice_labels_raw(&self, z: usize) -> &[ClassId] {
        let r = self.slice_range(z);
        &self.labels[r]
    }

    pub fn slice_image_mut(&mut self, z: usize) -> &mut [f32] {
        let r = self.slice_range(z);
        &mut self.image[r]
    }

    pub fn slice_labels_mut(&mut self, z: usize) -> &mut [ClassId] {
        let r = self.slice_range(z);
        &mut self.labels[r]
    }

    /// Binary mask of a class set on one slice.
    pub fn slice_mask(&self, z: usize, classes: ClassSet) -> Grid<bool> {
        let r = self.slice_range(z);
        let data = self.labels[r]
            .iter()
            .map(|&c| classes.contains(c))
            .collect();
        Grid::from_vec(self.dims.nx, self.dims.ny, data).unwrap()
    }

    /// Binary mask of a class set over the whole stack.
    pub fn mask(&self, classes: ClassSet) -> Vec<bool> {
        self.labels.iter().map(|&c| classes.contains(c)).collect()
    }

    pub fn count(&self, classes: ClassSet) -> usize {
        self.labels.iter().filter(|&&c| classes.contains(c)).count()
    }

    pub fn count_in_slice(&self, z: usize, classes: ClassSet) -> usize {
        self.slice_labels_raw(z)
            .iter()
            .filter(|&&c| classes.contains(c))
            .count()
    }
}

/// Volume in millilitres of all voxels labelled with one of `classes`.
pub fn class_volume_ml(volume: &MaskVolume, classes: ClassSet) -> f64 {
    volume.count(classes) as f64 * volume.spacing.effective_voxel_volume_mm3() / 1000.0
}

fn decode_labels(codes: &[u8]) -> Result<Vec<ClassId>, VolumeError> {
    codes
        .iter()
        .enumerate()
        .map(|(index, &code)| {
            ClassId::from_code(code).ok_or(VolumeError::InvalidLabel { index, code })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Meta {
    dims: [usize; 3],
    spacing: Spacing,
    patient_id: String,
    series_id: String,
    labels: BTreeMap<String, String>,
}

fn label_map() -> BTreeMap<String, String> {
    ClassId::ALL
        .iter()
        .map(|c| (c.code().to_string(), c.name().to_string()))
        .collect()
}

fn read_required(path: &Path) -> Result<Vec<u8>, VolumeError> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => VolumeError::MissingFile(path.to_path_buf()),
        _ => VolumeError::Io(e),
    })
}

/// Reads a volume container directory.
pub fn load_volume(dir: impl AsRef<Path>) -> Result<MaskVolume, VolumeError> {
    let dir = dir.as_ref();
    let meta: Meta = serde_json::from_slice(&read_required(&dir.join(META_FILE))?)?;
    for (key, value) in &meta.labels {
        let known = key
            .parse::<u8>()
            .ok()
            .and_then(ClassId::from_code)
            .is_some_and(|c| c.name() == value);
        if !known {
            return Err(VolumeError::LabelMap {
                key: key.clone(),
                value: value.clone(),
            });
        }
    }
    let [nx, ny, nz] = meta.dims;
    let dims = Dims::new(nx, ny, nz)?;
    let n = dims.voxel_count();

    let image_bytes = read_required(&dir.join(IMAGE_FILE))?;
    if image_bytes.len() != n * 4 {
        return Err(VolumeError::DimsMismatch {
            file: IMAGE_FILE,
            dims: meta.dims,
            expected: n * 4,
            actual: image_bytes.len(),
        });
    }
    let label_bytes = read_required(&dir.join(LABELS_FILE))?;
    if label_bytes.len() != n {
        return Err(VolumeError::DimsMismatch {
            file: LABELS_FILE,
            dims: meta.dims,
            expected: n,
            actual: label_bytes.len(),
        });
    }

    let image = image_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    MaskVolume::from_codes(
        dims,
        image,
        &label_bytes,
        meta.spacing,
        meta.patient_id,
        meta.series_id,
    )
}

/// Writes a volume container directory, creating it if needed.
///
/// Output bytes depend only on the volume.
pub fn save_volume(volume: &MaskVolume, dir: impl AsRef<Path>) -> Result<(), VolumeError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let meta = Meta {
        dims: volume.dims.as_array(),
        spacing: volume.spacing,
        patient_id: volume.patient_id.clone(),
        series_id: volume.series_id.clone(),
        labels: label_map(),
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    fs::write(dir.join(META_FILE), json)?;

    let mut image = Vec::with_capacity(volume.image.len() * 4);
    for v in &volume.image {
        image.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(IMAGE_FILE), image)?;

    let labels: Vec<u8> = volume.labels.iter().map(|c| c.code()).collect();
    fs::write(dir.join(LABELS_FILE), labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(labels: Vec<ClassId>, dims: Dims) -> MaskVolume {
        let n = dims.voxel_count();
        MaskVolume::new(dims, vec![0.0; n], labels, Spacing::default(), "p", "s").unwrap()
    }

    #[test]
    fn smallest_legal_volume_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let v = tiny(vec![ClassId::Background], Dims::new(1, 1, 1).unwrap());
        save_volume(&v, dir.path()).unwrap();
        let back = load_volume(dir.path()).unwrap();
        assert_eq!(back.dims(), Dims::new(1, 1, 1).unwrap());
        assert_eq!(back, v);
    }

    #[test]
    fn short_label_payload_is_dims_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(4, 4, 2).unwrap();
        let v = tiny(vec![ClassId::Background; 32], dims);
        save_volume(&v, dir.path()).unwrap();
        fs::write(dir.path().join(LABELS_FILE), vec![0u8; 31]).unwrap();
        match load_volume(dir.path()) {
            Err(VolumeError::DimsMismatch {
                file,
                expected,
                actual,
                ..
            }) => {
                assert_eq!(file, LABELS_FILE);
                assert_eq!((expected, actual), (32, 31));
            }
            other => panic!("expected dims mismatch, got {other:?}"),
        }
    }

    #[test]
    fn invalid_code_reports_voxel_index() {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(2, 2, 1).unwrap();
        save_volume(&tiny(vec![ClassId::Background; 4], dims), dir.path()).unwrap();
        fs::write(dir.path().join(LABELS_FILE), [0u8, 1, 7, 2]).unwrap();
        assert!(matches!(
            load_volume(dir.path()),
            Err(VolumeError::InvalidLabel { index: 2, code: 7 })
        ));
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_volume(dir.path()),
            Err(VolumeError::MissingFile(_))
        ));
    }

    #[test]
    fn save_writes_expected_sizes_and_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let dims = Dims::new(3, 2, 2).unwrap();
        let v = MaskVolume::new(
            dims,
            (0..12).map(|i| i as f32 * 0.5).collect(),
            vec![ClassId::Scar; 12],
            Spacing::default(),
            "p1",
            "s1",
        )
        .unwrap();
        save_volume(&v, a.path()).unwrap();
        save_volume(&v, b.path()).unwrap();
        for f in [META_FILE, IMAGE_FILE, LABELS_FILE] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
        assert_eq!(fs::metadata(a.path().join(IMAGE_FILE)).unwrap().len(), 48);
        assert_eq!(fs::metadata(a.path().join(LABELS_FILE)).unwrap().len(), 12);
        let meta: serde_json::Value =
            serde_json::from_slice(&fs::read(a.path().join(META_FILE)).unwrap()).unwrap();
        assert_eq!(meta["dims"], serde_json::json!([3, 2, 2]));
        assert_eq!(meta["labels"]["3"], "scar");
        assert_eq!(meta["spacing"]["interslice_gap"], 2.0);
    }

    #[test]
    fn class_volume_formula() {
        let dims = Dims::new(10, 1, 1).unwrap();
        let mut v = tiny(vec![ClassId::Scar; 10], dims);
        v.spacing = Spacing::new(2.0, 2.0, 8.0, 2.0).unwrap();
        assert!((class_volume_ml(&v, ClassSet::single(ClassId::Scar)) - 0.4).abs() < 1e-15);
        assert_eq!(class_volume_ml(&v, ClassSet::single(ClassId::Mvo)), 0.0);
    }

    #[test]
    fn spacing_rejects_non_positive() {
        assert!(Spacing::new(1.0, 1.0, 8.0, 0.0).is_err());
        assert!(Spacing::new(1.0, f64::NAN, 8.0, 2.0).is_err());
        let s = Spacing::default();
        assert!((s.effective_voxel_volume_mm3() - 35.2).abs() < 1e-12);
    }

    #[test]
    fn class_set_parsing() {
        assert_eq!(ClassSet::parse("infarct"), Some(ClassSet::INFARCT));
        assert_eq!(
            ClassSet::parse("scar,4"),
            Some(ClassSet::of(&[ClassId::Scar, ClassId::Mvo]))
        );
        assert_eq!(ClassSet::parse("heart"), None);
        assert_eq!(
            ClassSet::MYOCARDIUM.iter().collect::<Vec<_>>(),
            vec![ClassId::RemoteMyocardium, ClassId::Scar, ClassId::Mvo]
        );
    }
}
