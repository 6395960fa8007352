//! Dataset-level evaluation and batch refinement.
//!
//! [`evaluate`] scores images against edge-pixel annotations with CDD;
//! [`run_refine_batch`] refines every manifest entry, writes the results and
//! scores them before and after. Both run entries in parallel and return
//! entries sorted by id, so reports do not depend on scheduling. Reported
//! CDD values are scaled by [`REPORT_SCALE`].

mod annotation;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use annotation::{
    auto_annotate, load_annotation, save_annotation, save_annotation_png, Annotation,
    NONSHADOW_COLOR, SHADOW_COLOR,
};
pub use manifest::{DatasetManifest, ManifestEntry};

use crate::error::{Error, Result};
use crate::imagery::{
    gather_colors, load_image, load_labelmap, load_mask, save_image, BinaryMask, LabelMap, RgbImage,
};
use crate::metrics::{cdd, cdd_aggregate, CddAggregate, LossReport, DEFAULT_BINS, REPORT_SCALE};
use crate::morphology::StructuringElement;
use crate::refine::{optimize, RefineConfig, RefineResult, RelightParams};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Mask pixels whose mean channel value exceeds this are shadow.
pub const MASK_THRESHOLD: f64 = 0.5;

/// CDD of annotated pixels in `image`, unscaled.
pub fn annotation_cdd(image: &RgbImage, annotation: &Annotation, bins: usize) -> Result<f64> {
    let s = gather_colors(image, annotation.s_pixels())?;
    let ns = gather_colors(image, annotation.ns_pixels())?;
    cdd(s.colors(), ns.colors(), bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationSource {
    File,
    /// Derived from the shadow mask's inner and outer bands.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryStatus {
    Evaluated,
    Refined,
    /// No material-consistent edge; the input was copied through.
    NoMcEdges,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub id: String,
    pub status: EntryStatus,
    pub cdd_before: Option<f64>,
    pub cdd_after: Option<f64>,
    pub annotation: Option<AnnotationSource>,
    pub fallback_single_segment: bool,
    /// Output file name inside the batch output directory.
    pub output: Option<String>,
    pub message: Option<String>,
}

impl EntryReport {
    fn failed(id: &str, err: &Error) -> Self {
        Self {
            id: id.to_string(),
            status: EntryStatus::Failed,
            cdd_before: None,
            cdd_after: None,
            annotation: None,
            fallback_single_segment: false,
            output: None,
            message: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub bins: usize,
    /// Histograms are built per color channel.
    pub histogram: HistogramKind,
    pub annotation_bands: StructuringElement,
    pub refine: Option<RefineConfig>,
    pub fallback_single_segment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistogramKind {
    PerChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool: String,
    pub version: String,
    pub config: ReportConfig,
    /// Scale applied to every CDD value in this report.
    pub scale: f64,
    pub entries: Vec<EntryReport>,
    /// Population statistics of the `cdd_before` column.
    pub aggregate_before: Option<CddAggregate>,
    /// Population statistics of the `cdd_after` column.
    pub aggregate_after: Option<CddAggregate>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    fn new(
        config: ReportConfig,
        mut entries: Vec<EntryReport>,
        mut warnings: Vec<String>,
    ) -> Result<Self> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let column = |f: fn(&EntryReport) -> Option<f64>| -> Result<Option<CddAggregate>> {
            let values: Vec<f64> = entries.iter().filter_map(f).collect();
            if values.is_empty() {
                Ok(None)
            } else {
                cdd_aggregate(&values).map(Some)
            }
        };
        let aggregate_before = column(|e| e.cdd_before)?;
        let aggregate_after = column(|e| e.cdd_after)?;
        let fallback: Vec<&str> = entries
            .iter()
            .filter(|e| e.fallback_single_segment)
            .map(|e| e.id.as_str())
            .collect();
        if !fallback.is_empty() {
            warnings.insert(
                0,
                format!(
                    "single-segment fallback used (supervision from all shadow edges, not material-consistent ones): {}",
                    fallback.join(", ")
                ),
            );
        }
        Ok(Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config,
            scale: REPORT_SCALE,
            entries,
            aggregate_before,
            aggregate_after,
            warnings,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are serializable")
    }

    /// One row per entry: `id,cdd_before,cdd_after`; missing values are empty.
    pub fn to_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            cdd_before: Option<f64>,
            cdd_after: Option<f64>,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(Row {
                id: &e.id,
                cdd_before: e.cdd_before,
                cdd_after: e.cdd_after,
            })
            .map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes CSV for a `.csv` path and JSON otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let is_csv = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let text = if is_csv {
            self.to_csv()?
        } else {
            self.to_json()
        };
        write_text(path, &text)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub bins: usize,
    /// Bands used when an entry has no annotation file.
    pub annotation_bands: StructuringElement,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            annotation_bands: StructuringElement::default(),
        }
    }
}

fn entry_annotation(
    entry: &ManifestEntry,
    shadow: &BinaryMask,
    bands: StructuringElement,
) -> Result<(Annotation, AnnotationSource)> {
    match &entry.annotation_path {
        Some(p) => Ok((load_annotation(p)?, AnnotationSource::File)),
        None => Ok((auto_annotate(shadow, bands)?, AnnotationSource::Auto)),
    }
}

/// Scores each entry's input image (`cdd_before`) and, when present, its
/// result image (`cdd_after`). Entries without an annotation file use the
/// shadow mask's bands. Any failure aborts the evaluation; no file is
/// written.
pub fn evaluate(manifest: &DatasetManifest, opts: &EvalOptions) -> Result<EvalReport> {
    let entries = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let image = load_image(&entry.image_path)?;
            let shadow = load_mask(&entry.shadow_mask_path, MASK_THRESHOLD)?;
            let (annotation, source) = entry_annotation(entry, &shadow, opts.annotation_bands)?;
            let before = annotation_cdd(&image, &annotation, opts.bins)? * REPORT_SCALE;
            let after = match &entry.result_path {
                Some(p) => {
                    Some(annotation_cdd(&load_image(p)?, &annotation, opts.bins)? * REPORT_SCALE)
                }
                None => None,
            };
            Ok(EntryReport {
                id: entry.id.clone(),
                status: EntryStatus::Evaluated,
                cdd_before: Some(before),
                cdd_after: after,
                annotation: Some(source),
                fallback_single_segment: false,
                output: None,
                message: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let config = ReportConfig {
        bins: opts.bins,
        histogram: HistogramKind::PerChannel,
        annotation_bands: opts.annotation_bands,
        refine: None,
        fallback_single_segment: false,
    };
    EvalReport::new(config, entries, Vec::new())
}

/// Per-image refinement record written next to each refined image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub status: EntryStatus,
    pub fallback_single_segment: bool,
    /// Annotation CDD of the input and the output, scaled.
    pub cdd_before: f64,
    pub cdd_after: f64,
    /// CDD over the pooled edge samples used for refinement, scaled.
    pub edge_cdd_before: Option<f64>,
    pub edge_cdd_after: Option<f64>,
    pub params: Option<RelightParams>,
    pub region_ids: Vec<u32>,
    pub iterations_run: usize,
    pub converged: bool,
    pub loss_trace: Vec<LossReport>,
}

impl ImageRecord {
    pub fn refined(
        id: &str,
        result: &RefineResult,
        cdd_before: f64,
        cdd_after: f64,
        fallback: bool,
    ) -> Self {
        Self {
            id: id.to_string(),
            status: EntryStatus::Refined,
            fallback_single_segment: fallback,
            cdd_before,
            cdd_after,
            edge_cdd_before: Some(result.cdd_before * REPORT_SCALE),
            edge_cdd_after: Some(result.cdd_after * REPORT_SCALE),
            params: Some(result.params.clone()),
            region_ids: result.region_ids.clone(),
            iterations_run: result.iterations_run,
            converged: result.converged,
            loss_trace: result.loss_trace.clone(),
        }
    }

    fn copied(id: &str, cdd: f64, fallback: bool) -> Self {
        Self {
            id: id.to_string(),
            status: EntryStatus::NoMcEdges,
            fallback_single_segment: fallback,
            cdd_before: cdd,
            cdd_after: cdd,
            edge_cdd_before: None,
            edge_cdd_after: None,
            params: None,
            region_ids: Vec::new(),
            iterations_run: 0,
            converged: false,
            loss_trace: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record fields are serializable")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    pub refine: RefineConfig,
    pub eval: EvalOptions,
    /// Treat the whole frame as one segment for entries without a label map.
    pub fallback_single_segment: bool,
    pub out_dir: PathBuf,
}

/// Label map for an entry, plus whether the fallback was used and any load
/// warning.
fn entry_labels(
    entry: &ManifestEntry,
    dims: (usize, usize),
    fallback: bool,
) -> Result<(LabelMap, bool, Option<String>)> {
    match &entry.labelmap_path {
        Some(p) => {
            let load = load_labelmap(p)?;
            Ok((load.labels, false, load.warning))
        }
        None if fallback => Ok((LabelMap::single_segment(dims.0, dims.1)?, true, None)),
        None => Err(Error::InvalidConfig(
            "entry has no label map and the single-segment fallback is off".into(),
        )),
    }
}

fn refine_entry(
    entry: &ManifestEntry,
    opts: &BatchOptions,
) -> Result<(EntryReport, Option<String>)> {
    let image = load_image(&entry.image_path)?;
    let shadow = load_mask(&entry.shadow_mask_path, MASK_THRESHOLD)?;
    shadow.ensure_dims(image.dims())?;
    let (annotation, source) = entry_annotation(entry, &shadow, opts.eval.annotation_bands)?;
    let bins = opts.eval.bins;
    let before = annotation_cdd(&image, &annotation, bins)? * REPORT_SCALE;
    let (labels, fallback, warning) =
        entry_labels(entry, image.dims(), opts.fallback_single_segment)?;
    let output_name = format!("{}.png", entry.id);
    let output_path = opts.out_dir.join(&output_name);

    let (record, output) = match optimize(&image, &shadow, &labels, &opts.refine) {
        Ok(result) => {
            let after = annotation_cdd(&result.output, &annotation, bins)? * REPORT_SCALE;
            (
                ImageRecord::refined(&entry.id, &result, before, after, fallback),
                result.output,
            )
        }
        Err(Error::NoMcEdges) => (ImageRecord::copied(&entry.id, before, fallback), image),
        Err(e) => return Err(e),
    };
    save_image(&output, &output_path)?;
    write_text(
        &opts.out_dir.join(format!("{}.json", entry.id)),
        &record.to_json(),
    )?;
    let report = EntryReport {
        id: entry.id.clone(),
        status: record.status,
        cdd_before: Some(record.cdd_before),
        cdd_after: Some(record.cdd_after),
        annotation: Some(source),
        fallback_single_segment: fallback,
        output: Some(output_name),
        message: (record.status == EntryStatus::NoMcEdges).then(|| Error::NoMcEdges.to_string()),
    };
    Ok((report, warning.map(|w| format!("{}: {w}", entry.id))))
}

/// Refines every entry, writing `<out_dir>/<id>.png` and `<out_dir>/<id>.json`.
///
/// Entries without a material-consistent edge are copied through and
/// flagged; any other per-entry failure is recorded in the report and the
/// batch continues. Only failing to create `out_dir` is an error.
pub fn run_refine_batch(manifest: &DatasetManifest, opts: &BatchOptions) -> Result<EvalReport> {
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let results: Vec<(EntryReport, Option<String>)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            refine_entry(entry, opts).unwrap_or_else(|e| (EntryReport::failed(&entry.id, &e), None))
        })
        .collect();
    let mut warnings = Vec::new();
    let mut entries = Vec::with_capacity(results.len());
    for (report, warning) in results {
        entries.push(report);
        warnings.extend(warning);
    }
    warnings.sort();
    let config = ReportConfig {
        bins: opts.eval.bins,
        histogram: HistogramKind::PerChannel,
        annotation_bands: opts.eval.annotation_bands,
        refine: Some(opts.refine),
        fallback_single_segment: opts.fallback_single_segment,
    };
    EvalReport::new(config, entries, warnings)
}
