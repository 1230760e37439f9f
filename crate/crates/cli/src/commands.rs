use infarct_core::geom::{extract_roi_stack, normalize};
use infarct_core::metrics::{
    contingency, metric_row, patient_detection, sens_spec_ci, Contingency, SensSpec,
};
use infarct_core::perturb::{apply_perturbations, PerturbationConfig};
use infarct_core::phantom::{make_phantom, MvoCore, PhantomSpec, Wedge};
use infarct_core::seg5sd::{segment_volume, RemoteRoi, SegmentOptions};
use infarct_core::stats::{
    bland_altman, bland_altman_points, concordance, wilcoxon_signed_rank, PairedSeries,
    WilcoxonMode, ZeroMethod,
};
use infarct_core::volume::{load_volume, save_volume};
use infarct_core::{ClassId, ClassSet, Spacing};
use infarct_rating::{AppState, SessionStore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::{
    CliError, Command, EvalArgs, PerturbArgs, PhantomArgs, RoiArgs, Seg5sdArgs, ServeArgs,
    StatsArgs,
};

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn numbers<T: std::str::FromStr>(text: &str, n: usize, what: &str) -> Result<Vec<T>, CliError> {
    let v: Vec<T> = text
        .split(',')
        .map(|s| s.trim().parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            invalid(format!(
                "{what}: expected {n} comma-separated numbers, got {text:?}"
            ))
        })?;
    if v.len() != n {
        return Err(invalid(format!(
            "{what}: expected {n} comma-separated numbers, got {text:?}"
        )));
    }
    Ok(v)
}

fn write_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn write_json_file(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(invalid)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub(crate) fn dispatch(
    command: Command,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    match command {
        Command::Phantom(a) => phantom(a, out),
        Command::Roi(a) => roi(a, out),
        Command::Seg5sd(a) => seg5sd(a, out, err),
        Command::Perturb(a) => perturb(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Stats(a) => stats(a, out, err),
        Command::Serve(a) => serve(a, err),
    }
}

fn phantom(a: PhantomArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = match &a.config {
        Some(path) => PhantomSpec {
            seed: a.seed,
            ..read_json(path)?
        },
        None => {
            let d: Vec<usize> = numbers(&a.dims, 3, "--dims")?;
            let s: Vec<f64> = numbers(&a.spacing, 4, "--spacing")?;
            let mut spec =
                PhantomSpec::centered([d[0], d[1], d[2]], a.inner_radius, a.outer_radius);
            spec.spacing = Spacing::new(s[0], s[1], s[2], s[3]).map_err(invalid)?;
            let (start, end) = (a.scar_start.to_radians(), a.scar_end.to_radians());
            spec.scar_wedge = Wedge {
                start_angle: start,
                end_angle: end,
                slices: 0..d[2],
            };
            if a.mvo {
                let span = spec.scar_wedge.span();
                let thick = a.outer_radius - a.inner_radius;
                spec.mvo_core = Some(MvoCore {
                    start_angle: start + span / 3.0,
                    end_angle: start + 2.0 * span / 3.0,
                    inner_radius_px: a.inner_radius + thick / 3.0,
                    outer_radius_px: a.inner_radius + 2.0 * thick / 3.0,
                    slices: 0..d[2],
                });
            }
            spec.noise_sd = a.noise_sd;
            spec.seed = a.seed;
            spec
        }
    };
    let (volume, truth) = make_phantom(&spec).map_err(invalid)?;
    save_volume(&volume, &a.out)?;
    let by_class: serde_json::Map<String, serde_json::Value> = ClassId::ALL
        .iter()
        .map(|&c| {
            (
                c.name().to_string(),
                json!({ "voxels": truth.count(c), "volume_ml": truth.volume_ml(ClassSet::single(c)) }),
            )
        })
        .collect();
    write_json(
        out,
        &json!({
            "out": a.out,
            "seed": spec.seed,
            "voxel_volume_mm3": truth.voxel_volume_mm3,
            "classes": by_class,
            "infarct_ml": truth.volume_ml(ClassSet::INFARCT),
            "myocardium_ml": truth.volume_ml(ClassSet::MYOCARDIUM),
        }),
    )
}

fn roi(a: RoiArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let size: Vec<usize> = numbers(&a.size, 2, "--size")?;
    let classes = ClassSet::parse(&a.lv_classes)
        .ok_or_else(|| invalid(format!("unknown classes {:?}", a.lv_classes)))?;
    let volume = load_volume(&a.input)?;
    let (mut cropped, placement) =
        extract_roi_stack(&volume, &volume.mask(classes), (size[0], size[1])).map_err(invalid)?;
    if a.normalize {
        let scaled = normalize(cropped.image());
        cropped.image_mut().copy_from_slice(&scaled);
    }
    save_volume(&cropped, &a.out)?;
    write_json(out, &placement)
}

fn seg5sd(a: Seg5sdArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let volume = load_volume(&a.input)?;
    let slice = a.roi_slice.unwrap_or(volume.dims().nz / 2);
    let roi = match &a.roi_rect {
        Some(r) => {
            let c: Vec<usize> = numbers(r, 4, "--roi-rect")?;
            RemoteRoi::rect(slice, c[0], c[1], c[2], c[3])
        }
        None => RemoteRoi::all_remote(&volume, slice),
    };
    let options = SegmentOptions {
        k: a.k,
        sd_floor: a.sd_floor,
        min_component: a.min_component,
        ..Default::default()
    };
    let seg = segment_volume(&volume, &roi, &options).map_err(invalid)?;
    if !seg.off_remote_roi_pixels.is_empty() {
        writeln!(
            err,
            "warning: {} ROI pixels are not labelled remote myocardium",
            seg.off_remote_roi_pixels.len()
        )?;
    }
    if let Some(path) = &a.csv {
        std::fs::write(path, seg.report.to_csv())?;
    }
    if let Some(dir) = &a.out {
        save_volume(&seg.relabel(&volume), dir)?;
    }
    write_json(out, &seg.report)
}

fn perturb(a: PerturbArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = match &a.config {
        Some(path) => PerturbationConfig {
            seed: a.seed,
            ..read_json(path)?
        },
        None => PerturbationConfig::with_seed(a.seed),
    };
    let volume = load_volume(&a.input)?;
    let (perturbed, log) = apply_perturbations(&volume, &config).map_err(invalid)?;
    save_volume(&perturbed, &a.out)?;
    match &a.log {
        Some(path) => write_json_file(path, &log),
        None => write_json(out, &log),
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub patient_id: String,
    pub pred_path: PathBuf,
    pub gt_path: PathBuf,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, CliError> {
    let file =
        std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rows: Vec<ManifestRow> = Vec::new();
    for r in csv::Reader::from_reader(file).deserialize() {
        let mut row: ManifestRow = r.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if rows.iter().any(|x| x.patient_id == row.patient_id) {
            return Err(invalid(format!(
                "duplicate patient_id {:?}",
                row.patient_id
            )));
        }
        for p in [&mut row.pred_path, &mut row.gt_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Class sets reported by `eval`, in output order.
pub const EVAL_CLASSES: [&str; 4] = ["myocardium", "scar", "mvo", "infarct"];

/// The class set behind an `EVAL_CLASSES` name.
pub fn eval_class_set(name: &str) -> Option<ClassSet> {
    match name {
        "scar" => Some(ClassSet::single(ClassId::Scar)),
        "mvo" => Some(ClassSet::single(ClassId::Mvo)),
        other => ClassSet::parse(other),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub patient_id: String,
    pub class: String,
    pub dice: f64,
    pub avd_ml: f64,
    pub avdr: Option<f64>,
    pub infarct_pct_pred: Option<f64>,
    pub infarct_pct_gt: Option<f64>,
}

#[derive(Debug, Serialize)]
struct MeanSd {
    n: usize,
    mean: Option<f64>,
    sd: Option<f64>,
}

fn mean_sd(values: impl Iterator<Item = f64>) -> MeanSd {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    let mean = (n > 0).then(|| v.iter().sum::<f64>() / n as f64);
    let sd = mean
        .filter(|_| n > 1)
        .map(|m| (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt());
    MeanSd { n, mean, sd }
}

#[derive(Debug, Serialize)]
struct ClassSummary {
    class: String,
    dice: MeanSd,
    avd_ml: MeanSd,
    avdr: MeanSd,
    detection: Contingency,
    sens_spec: SensSpec,
    sensitivity_text: String,
    specificity_text: String,
}

/// Metric rows and `(predicted, truth)` detection flags, one per eval class.
type CaseResult = (Vec<EvalRow>, Vec<(bool, bool)>);

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = read_manifest(&a.manifest)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads)
        .build()
        .map_err(invalid)?;
    let per_case: Vec<Result<CaseResult, CliError>> = pool.install(|| {
        manifest
            .par_iter()
            .map(|m| {
                let pred = load_volume(&m.pred_path)?;
                let gt = load_volume(&m.gt_path)?;
                let mut rows = Vec::with_capacity(EVAL_CLASSES.len());
                let mut detections = Vec::with_capacity(EVAL_CLASSES.len());
                for name in EVAL_CLASSES {
                    let classes = eval_class_set(name).expect("known class name");
                    let r = metric_row(&pred, &gt, classes, ClassSet::MYOCARDIUM)
                        .map_err(|e| invalid(format!("{}: {e}", m.patient_id)))?;
                    rows.push(EvalRow {
                        patient_id: m.patient_id.clone(),
                        class: name.to_string(),
                        dice: r.dice,
                        avd_ml: r.avd_ml,
                        avdr: r.avdr,
                        infarct_pct_pred: r.infarct_pct_pred,
                        infarct_pct_gt: r.infarct_pct_gt,
                    });
                    detections.push((
                        patient_detection(&pred, classes),
                        patient_detection(&gt, classes),
                    ));
                }
                Ok((rows, detections))
            })
            .collect()
    });
    let per_case: Vec<CaseResult> = per_case.into_iter().collect::<Result<_, _>>()?;

    let mut w = csv::Writer::from_path(&a.out).map_err(|e| CliError::Io(e.to_string()))?;
    for (rows, _) in &per_case {
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    if per_case.is_empty() {
        w.write_record([
            "patient_id",
            "class",
            "dice",
            "avd_ml",
            "avdr",
            "infarct_pct_pred",
            "infarct_pct_gt",
        ])
        .map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush()?;

    let mut summaries = Vec::new();
    for (i, name) in EVAL_CLASSES.iter().enumerate() {
        let rows: Vec<&EvalRow> = per_case.iter().map(|(r, _)| &r[i]).collect();
        let (pred, truth): (Vec<bool>, Vec<bool>) = per_case.iter().map(|(_, d)| d[i]).unzip();
        let table = contingency(&pred, &truth).map_err(invalid)?;
        let ss = sens_spec_ci(&table, 0.95).map_err(invalid)?;
        summaries.push(ClassSummary {
            class: name.to_string(),
            dice: mean_sd(rows.iter().map(|r| r.dice)),
            avd_ml: mean_sd(rows.iter().map(|r| r.avd_ml)),
            avdr: mean_sd(rows.iter().filter_map(|r| r.avdr)),
            detection: table,
            sensitivity_text: ss.sensitivity.to_string(),
            specificity_text: ss.specificity.to_string(),
            sens_spec: ss,
        });
    }
    let summary = json!({ "cases": per_case.len(), "classes": summaries });
    match &a.summary {
        Some(path) => write_json_file(path, &summary),
        None => write_json(out, &summary),
    }
}

fn stats(a: StatsArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let cols: Vec<&str> = a.pair.split(',').map(str::trim).collect();
    let [xcol, ycol] = cols[..] else {
        return Err(invalid(format!(
            "--pair expects two column names, got {:?}",
            a.pair
        )));
    };
    let mode = match a.wilcoxon.as_str() {
        "exact" => WilcoxonMode::Exact,
        "normal" => WilcoxonMode::Normal,
        "auto" => WilcoxonMode::Auto,
        other => return Err(invalid(format!("unknown Wilcoxon mode {other:?}"))),
    };
    let zeros = match a.zero_method.as_str() {
        "wilcox" => ZeroMethod::Wilcox,
        "pratt" => ZeroMethod::Pratt,
        other => return Err(invalid(format!("unknown zero method {other:?}"))),
    };
    let file = std::fs::File::open(&a.input)
        .map_err(|e| CliError::Io(format!("{}: {e}", a.input.display())))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(invalid)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("column {name:?} not found")))
    };
    let (xi, yi) = (find(xcol)?, find(ycol)?);
    let ci = match &a.class {
        Some(_) => Some(find("class")?),
        None => None,
    };
    let (mut x, mut y, mut skipped) = (Vec::new(), Vec::new(), 0usize);
    for rec in reader.records() {
        let rec = rec.map_err(invalid)?;
        if let (Some(ci), Some(want)) = (ci, &a.class) {
            if rec.get(ci) != Some(want.as_str()) {
                continue;
            }
        }
        let (xs, ys) = (rec.get(xi).unwrap_or(""), rec.get(yi).unwrap_or(""));
        if xs.is_empty() || ys.is_empty() {
            skipped += 1;
            continue;
        }
        x.push(
            xs.parse::<f64>()
                .map_err(|_| invalid(format!("not a number: {xs:?}")))?,
        );
        y.push(
            ys.parse::<f64>()
                .map_err(|_| invalid(format!("not a number: {ys:?}")))?,
        );
    }
    if skipped > 0 {
        writeln!(err, "skipped {skipped} rows with empty values")?;
    }
    let series = PairedSeries::new(x, y).map_err(invalid)?;
    let ccc = concordance(&series, a.level).map_err(invalid)?;
    let ba = bland_altman(&series, a.loa_multiplier).map_err(invalid)?;
    let wx = wilcoxon_signed_rank(&series, mode, zeros).map_err(invalid)?;
    if let Some(path) = &a.points {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_record(["x", "y", "mean", "diff"])
            .map_err(|e| CliError::Io(e.to_string()))?;
        for ((xv, yv), (m, d)) in series
            .x()
            .iter()
            .zip(series.y())
            .zip(bland_altman_points(&series))
        {
            w.write_record([xv.to_string(), yv.to_string(), m.to_string(), d.to_string()])
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush()?;
    }
    write_json(
        out,
        &json!({
            "x": xcol,
            "y": ycol,
            "n": series.len(),
            "skipped": skipped,
            "ccc": ccc,
            "bland_altman": ba,
            "wilcoxon": wx,
        }),
    )
}

fn serve(a: ServeArgs, err: &mut dyn Write) -> Result<(), CliError> {
    let addr: std::net::SocketAddr = format!("{}:{}", a.host, a.port).parse().map_err(invalid)?;
    let store = SessionStore::open(&a.data_dir).map_err(|e| CliError::Io(e.to_string()))?;
    let state = Arc::new(AppState::new(store, a.admin_token));
    writeln!(err, "listening on http://{addr}")?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(infarct_rating::server::serve(addr, state))?;
    Ok(())
}
