//! Segmentation accuracy metrics and per-patient detection statistics.
//!
//! Dice of two empty sets is defined as 1. Volumes use the effective voxel
//! volume (slice thickness plus gap). Sensitivity and specificity carry
//! exact (Clopper-Pearson) binomial confidence intervals.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::beta_inc_inv;
use crate::volume::{ClassSet, MaskVolume, Spacing};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("voxel sets differ in size ({0} vs {1})")]
    SizeMismatch(usize, usize),
    #[error("myocardium volume is zero")]
    ZeroMyocardium,
    #[error("confidence level must lie in (0, 1), got {0}")]
    Level(f64),
    #[error("{k} successes out of {n} trials")]
    Counts { k: u64, n: u64 },
    #[error("volumes differ in geometry")]
    Geometry,
}

fn check_len(p: &[bool], g: &[bool]) -> Result<(), MetricsError> {
    if p.len() != g.len() {
        return Err(MetricsError::SizeMismatch(p.len(), g.len()));
    }
    Ok(())
}

/// `2|P∩G| / (|P| + |G|)`, or 1 when both sets are empty.
pub fn dice(p: &[bool], g: &[bool]) -> Result<f64, MetricsError> {
    check_len(p, g)?;
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&a, &b) in p.iter().zip(g) {
        np += a as usize;
        ng += b as usize;
        inter += (a && b) as usize;
    }
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + ng) as f64)
}

/// Absolute volume difference in ml.
pub fn avd(p: &[bool], g: &[bool], spacing: &Spacing) -> Result<f64, MetricsError> {
    check_len(p, g)?;
    let np = p.iter().filter(|&&b| b).count() as f64;
    let ng = g.iter().filter(|&&b| b).count() as f64;
    Ok((np - ng).abs() * spacing.effective_voxel_volume_mm3() / 1000.0)
}

/// AVD as a fraction of the myocardial volume.
pub fn avdr(avd_ml: f64, v_myo_ml: f64) -> Result<f64, MetricsError> {
    if v_myo_ml <= 0.0 {
        return Err(MetricsError::ZeroMyocardium);
    }
    Ok(avd_ml / v_myo_ml)
}

/// Infarct share of the myocardium, in percent.
pub fn infarct_fraction(
    volume: &MaskVolume,
    infarct: ClassSet,
    myocardium: ClassSet,
) -> Result<f64, MetricsError> {
    let myo = volume.count(myocardium);
    if myo == 0 {
        return Err(MetricsError::ZeroMyocardium);
    }
    Ok(100.0 * volume.count(infarct) as f64 / myo as f64)
}

pub fn patient_detection(volume: &MaskVolume, classes: ClassSet) -> bool {
    volume.labels().iter().any(|&c| classes.contains(c))
}

/// Per-slice Dice for one class set.
pub fn dice_per_slice(
    pred: &MaskVolume,
    gt: &MaskVolume,
    classes: ClassSet,
) -> Result<Vec<f64>, MetricsError> {
    if pred.dims() != gt.dims() {
        return Err(MetricsError::Geometry);
    }
    (0..pred.dims().nz)
        .map(|z| {
            dice(
                pred.slice_mask(z, classes).as_slice(),
                gt.slice_mask(z, classes).as_slice(),
            )
        })
        .collect()
}

/// Metrics of one examination for one class set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dice: f64,
    pub avd_ml: f64,
    /// `None` when the ground-truth myocardium is empty.
    pub avdr: Option<f64>,
    /// Class set share of the predicted myocardium, percent.
    pub infarct_pct_pred: Option<f64>,
    /// Class set share of the ground-truth myocardium, percent.
    pub infarct_pct_gt: Option<f64>,
}

/// Compares a prediction with ground truth over 3D volumes. `V_myo` is the
/// ground-truth myocardial volume.
pub fn metric_row(
    pred: &MaskVolume,
    gt: &MaskVolume,
    classes: ClassSet,
    myocardium: ClassSet,
) -> Result<MetricRow, MetricsError> {
    if pred.dims() != gt.dims() || pred.spacing() != gt.spacing() {
        return Err(MetricsError::Geometry);
    }
    let p = pred.mask(classes);
    let g = gt.mask(classes);
    let avd_ml = avd(&p, &g, &gt.spacing())?;
    let v_myo = crate::volume::class_volume_ml(gt, myocardium);
    Ok(MetricRow {
        dice: dice(&p, &g)?,
        avd_ml,
        avdr: avdr(avd_ml, v_myo).ok(),
        infarct_pct_pred: infarct_fraction(pred, classes, myocardium).ok(),
        infarct_pct_gt: infarct_fraction(gt, classes, myocardium).ok(),
    })
}

/// 2×2 detection table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Contingency {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Contingency {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Contingency { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

pub fn contingency(predictions: &[bool], truths: &[bool]) -> Result<Contingency, MetricsError> {
    check_len(predictions, truths)?;
    let mut table = Contingency::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        table.add(p, t);
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Exact binomial interval for `k` successes in `n` trials at `level`.
/// Bounds are beta quantiles; `k = 0` gives lower 0 and `k = n` upper 1.
pub fn clopper_pearson(k: u64, n: u64, level: f64) -> Result<Interval, MetricsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::Level(level));
    }
    if n == 0 || k > n {
        return Err(MetricsError::Counts { k, n });
    }
    let alpha = 1.0 - level;
    let (kf, nf) = (k as f64, n as f64);
    let lower = if k == 0 {
        0.0
    } else {
        beta_inc_inv(kf, nf - kf + 1.0, alpha / 2.0)
    };
    let upper = if k == n {
        1.0
    } else {
        beta_inc_inv(kf + 1.0, nf - kf, 1.0 - alpha / 2.0)
    };
    Ok(Interval { lower, upper })
}

/// A proportion with its CI, or undefined when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Estimate {
    Defined { value: f64, ci: Interval },
    Undefined,
}

impl Estimate {
    pub fn value(&self) -> Option<f64> {
        match self {
            Estimate::Defined { value, .. } => Some(*value),
            Estimate::Undefined => None,
        }
    }

    pub fn ci(&self) -> Option<Interval> {
        match self {
            Estimate::Defined { ci, .. } => Some(*ci),
            Estimate::Undefined => None,
        }
    }
}

impl fmt::Display for Estimate {
    /// Percentages to one decimal, `−` when undefined.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimate::Defined { value, ci } => write!(
                f,
                "{:.1}% [{:.1}, {:.1}]",
                value * 100.0,
                ci.lower * 100.0,
                ci.upper * 100.0
            ),
            Estimate::Undefined => f.write_str("\u{2212}"),
        }
    }
}

fn estimate(k: u64, n: u64, level: f64) -> Result<Estimate, MetricsError> {
    if n == 0 {
        return Ok(Estimate::Undefined);
    }
    Ok(Estimate::Defined {
        value: k as f64 / n as f64,
        ci: clopper_pearson(k, n, level)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensSpec {
    pub sensitivity: Estimate,
    pub specificity: Estimate,
}

pub fn sens_spec_ci(table: &Contingency, level: f64) -> Result<SensSpec, MetricsError> {
    Ok(SensSpec {
        sensitivity: estimate(table.tp, table.tp + table.fn_, level)?,
        specificity: estimate(table.tn, table.tn + table.fp, level)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, PhantomSpec};
    use crate::volume::{ClassId, Dims};

    fn set(n: usize, on: &[usize]) -> Vec<bool> {
        let mut v = vec![false; n];
        for &i in on {
            v[i] = true;
        }
        v
    }

    #[test]
    fn dice_examples() {
        let p = set(10, &[1, 2, 3]);
        assert_eq!(dice(&p, &p).unwrap(), 1.0);
        assert_eq!(dice(&set(10, &[]), &set(10, &[])).unwrap(), 1.0);
        let p = set(10, &[0, 1, 2, 3]);
        let g = set(10, &[1, 2, 3, 4, 5, 6]);
        assert!((dice(&p, &g).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(dice(&set(10, &[1]), &set(10, &[])).unwrap(), 0.0);
        assert!(dice(&set(2, &[]), &set(3, &[])).is_err());
    }

    #[test]
    fn avd_examples() {
        let s = Spacing::default();
        let p: Vec<bool> = (0..200).map(|i| i < 100).collect();
        let g: Vec<bool> = (0..200).map(|i| i >= 120).collect();
        assert!((avd(&p, &g, &s).unwrap() - 0.704).abs() < 1e-12);
        assert_eq!(avd(&p, &g, &s).unwrap(), avd(&g, &p, &s).unwrap());
        assert_eq!(avd(&p, &p, &s).unwrap(), 0.0);
    }

    #[test]
    fn avdr_examples() {
        assert_eq!(avdr(0.0, 10.0).unwrap(), 0.0);
        assert!((avdr(4.97, 123.0).unwrap() - 0.0404).abs() < 5e-5);
        assert_eq!(avdr(1.0, 0.0), Err(MetricsError::ZeroMyocardium));
        let r = avdr(4.97, 123.0).unwrap();
        assert!((r * 123.0 - 4.97).abs() <= 1e-12 * 4.97);
    }

    #[test]
    fn infarct_fraction_on_phantom() {
        let spec = PhantomSpec::centered([96, 96, 1], 20.0, 40.0);
        let (v, gt) = make_phantom(&spec).unwrap();
        let pct = infarct_fraction(&v, ClassSet::INFARCT, ClassSet::MYOCARDIUM).unwrap();
        let exact = 100.0 * gt.count_set(ClassSet::INFARCT) as f64
            / gt.count_set(ClassSet::MYOCARDIUM) as f64;
        assert_eq!(pct, exact);
        // One sixth of the annulus angle.
        assert!((pct - 100.0 / 6.0).abs() < 1.0, "{pct}");

        let mut none = v.clone();
        for c in none.labels_mut() {
            if *c == ClassId::Scar {
                *c = ClassId::RemoteMyocardium;
            }
        }
        assert_eq!(
            infarct_fraction(&none, ClassSet::INFARCT, ClassSet::MYOCARDIUM).unwrap(),
            0.0
        );
        let mut all = v.clone();
        for c in all.labels_mut() {
            if *c == ClassId::RemoteMyocardium {
                *c = ClassId::Scar;
            }
        }
        assert_eq!(
            infarct_fraction(&all, ClassSet::INFARCT, ClassSet::MYOCARDIUM).unwrap(),
            100.0
        );
    }

    #[test]
    fn detection_examples() {
        let dims = Dims::new(2, 2, 1).unwrap();
        let mut v = MaskVolume::new(
            dims,
            vec![0.0; 4],
            vec![ClassId::Background; 4],
            Spacing::default(),
            "p",
            "s",
        )
        .unwrap();
        assert!(!patient_detection(&v, ClassSet::INFARCT));
        v.labels_mut()[0] = ClassId::Scar;
        assert!(!patient_detection(&v, ClassSet::single(ClassId::Mvo)));
        v.labels_mut()[1] = ClassId::Mvo;
        assert!(patient_detection(&v, ClassSet::single(ClassId::Mvo)));
    }

    #[test]
    fn contingency_examples() {
        assert_eq!(
            contingency(&[true; 5], &[true; 5]).unwrap(),
            Contingency::new(5, 0, 0, 0)
        );
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        for (p, t, n) in [
            (true, true, 15),
            (true, false, 4),
            (false, true, 8),
            (false, false, 125),
        ] {
            preds.extend(std::iter::repeat_n(p, n));
            truths.extend(std::iter::repeat_n(t, n));
        }
        assert_eq!(
            contingency(&preds, &truths).unwrap(),
            Contingency::new(15, 4, 8, 125)
        );
        assert!(contingency(&[true], &[]).is_err());
    }

    fn pct1(x: f64) -> f64 {
        (x * 1000.0).round() / 10.0
    }

    #[test]
    fn clopper_pearson_reference_rows() {
        let cases = [
            (150, 152, 95.3, 99.8),
            (152, 152, 97.6, 100.0),
            (15, 23, 42.7, 83.6),
            (125, 129, 92.3, 99.2),
            (21, 23, 72.0, 99.0),
            (128, 129, 95.8, 100.0),
        ];
        for (k, n, lo, hi) in cases {
            let ci = clopper_pearson(k, n, 0.95).unwrap();
            assert!(
                (pct1(ci.lower) - lo).abs() <= 0.1 + 1e-9,
                "{k}/{n} lower {}",
                ci.lower
            );
            assert!(
                (pct1(ci.upper) - hi).abs() <= 0.1 + 1e-9,
                "{k}/{n} upper {}",
                ci.upper
            );
        }
        // All-success lower bound has a closed form.
        let ci = clopper_pearson(152, 152, 0.95).unwrap();
        assert!((ci.lower - 0.025f64.powf(1.0 / 152.0)).abs() < 1e-12);
    }

    #[test]
    fn sens_spec_examples() {
        let s = sens_spec_ci(&Contingency::new(150, 0, 2, 0), 0.95).unwrap();
        assert_eq!(s.specificity, Estimate::Undefined);
        assert_eq!(s.specificity.to_string(), "\u{2212}");
        assert_eq!(s.sensitivity.to_string(), "98.7% [95.3, 99.8]");

        let s = sens_spec_ci(&Contingency::new(15, 4, 8, 125), 0.95).unwrap();
        assert_eq!(s.sensitivity.to_string(), "65.2% [42.7, 83.6]");

        let s = sens_spec_ci(&Contingency::new(0, 0, 10, 0), 0.95).unwrap();
        assert_eq!(s.sensitivity.value(), Some(0.0));
        assert_eq!(s.sensitivity.ci().unwrap().lower, 0.0);
    }

    #[test]
    fn wider_level_never_narrows() {
        for n in 1..40u64 {
            for k in 0..=n {
                let a = clopper_pearson(k, n, 0.90).unwrap();
                let b = clopper_pearson(k, n, 0.95).unwrap();
                let c = clopper_pearson(k, n, 0.99).unwrap();
                assert!(b.lower <= a.lower && a.upper <= b.upper);
                assert!(c.lower <= b.lower && b.upper <= c.upper);
                assert!(a.contains(k as f64 / n as f64));
            }
        }
    }

    #[test]
    fn metric_row_on_identical_masks() {
        let spec = PhantomSpec::centered([32, 32, 3], 5.0, 10.0);
        let (v, _) = make_phantom(&spec).unwrap();
        let row = metric_row(&v, &v, ClassSet::INFARCT, ClassSet::MYOCARDIUM).unwrap();
        assert_eq!(row.dice, 1.0);
        assert_eq!(row.avd_ml, 0.0);
        assert_eq!(row.avdr, Some(0.0));
        assert_eq!(row.infarct_pct_pred, row.infarct_pct_gt);
    }

    #[test]
    fn per_slice_dice() {
        let spec = PhantomSpec::centered([32, 32, 2], 5.0, 10.0);
        let (v, _) = make_phantom(&spec).unwrap();
        let mut p = v.clone();
        for c in p.slice_labels_mut(1) {
            if *c == ClassId::Scar {
                *c = ClassId::RemoteMyocardium;
            }
        }
        let d = dice_per_slice(&p, &v, ClassSet::single(ClassId::Scar)).unwrap();
        assert_eq!(d, vec![1.0, 0.0]);
    }
}
