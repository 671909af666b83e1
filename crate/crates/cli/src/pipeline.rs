//! End-to-end run: preprocess, classify, bone mesh, localize, annotate.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use osteopipe_core::bonemesh::{build_bone_model, BoneMeshConfig, BoneModel};
use osteopipe_core::classify::ConfidenceProvider;
use osteopipe_core::confidence::{write_confidence_csv, ConfidenceSeries};
use osteopipe_core::io::{load_volume, save_mask, save_volume, VolumeFormat};
use osteopipe_core::mesh::{save_mesh, Aabb, TriMesh};
use osteopipe_core::preproc::{preprocess_study, PreprocReport, Roi};
use osteopipe_core::tumorloc::{annotate_tumor_box, tumor_slice_range, TumorLocConfig};
use osteopipe_core::volume::{BinaryMask, Spacing, Volume};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::exit::{Stage, StageError, StageExt};

pub fn roi_id(patient_id: &str, side: &str) -> String {
    format!("{patient_id}_{side}")
}

/// Confidences for one ROI. A CSV without rows for `roi_id` falls back to
/// the rows of `patient_id`, so whole-study CSVs work for every leg.
pub fn classify_roi(
    provider: &ConfidenceProvider,
    roi: &Volume,
    roi_id: &str,
    patient_id: &str,
) -> osteopipe_core::Result<ConfidenceSeries> {
    let key = if provider.knows(roi_id) || !provider.knows(patient_id) { roi_id } else { patient_id };
    let series = provider.confidences(roi, key)?;
    ConfidenceSeries::new(roi_id, series.values().to_vec())
}

/// Span and annotated mesh for one ROI. Without a span the mesh is returned
/// unannotated.
pub fn localize_roi(
    series: &ConfidenceSeries,
    mesh: &TriMesh,
    bone_mask: &BinaryMask,
    spacing: Spacing,
    cfg: &TumorLocConfig,
) -> osteopipe_core::Result<(Option<(usize, usize)>, TriMesh)> {
    let span = tumor_slice_range(series, cfg)?;
    let mesh = match span {
        Some(s) => annotate_tumor_box(mesh, bone_mask, s, spacing)?,
        None => mesh.clone(),
    };
    Ok((span, mesh))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiBoxes {
    pub roi_id: String,
    /// Inclusive slice span, absent when no tumor was found.
    pub span: Option<[usize; 2]>,
    pub boxes: Vec<Aabb>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxesReport {
    pub rois: Vec<RoiBoxes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiArtifacts {
    pub roi_id: String,
    pub volume: PathBuf,
    pub bone_mask: PathBuf,
    pub mesh: PathBuf,
    pub bone_voxels: usize,
    pub mesh_vertices: usize,
    pub mesh_faces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub patient_id: String,
    pub stages: Vec<StageTiming>,
    pub confidences: PathBuf,
    pub boxes: PathBuf,
    pub preprocess_report: PathBuf,
    pub rois: Vec<RoiArtifacts>,
    pub warnings: Vec<String>,
}

/// Everything a run produced, for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct RoiResult {
    pub roi: Roi,
    pub roi_id: String,
    pub confidences: ConfidenceSeries,
    pub bone: BoneModel,
    pub span: Option<(usize, usize)>,
    pub annotated: TriMesh,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub manifest: RunManifest,
    pub report: PreprocReport,
    pub boxes: BoxesReport,
    pub rois: Vec<RoiResult>,
}

struct Timer {
    stages: Vec<StageTiming>,
    start: Instant,
}

impl Timer {
    fn new() -> Self {
        Self { stages: Vec::new(), start: Instant::now() }
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        self.stages.push(StageTiming { stage: stage.name().into(), seconds: (now - self.start).as_secs_f64() });
        self.start = now;
    }
}

fn create_dir(path: &Path) -> Result<(), StageError> {
    fs::create_dir_all(path).map_err(|e| StageError::new(Stage::Io, None, anyhow::anyhow!("creating {}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), StageError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|e| StageError::new(Stage::Io, None, anyhow::anyhow!("writing {}: {e}", path.display())))
}

fn bone_models(rois: &[Roi], ids: &[String], cfg: &BoneMeshConfig) -> Result<Vec<BoneModel>, StageError> {
    rois.par_iter()
        .zip(ids)
        .map(|(roi, id)| build_bone_model(&roi.volume, cfg).stage(Stage::Bonemesh, Some(id)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Runs every stage on `cfg.io.input` and writes all artifacts under
/// `cfg.io.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun, StageError> {
    cfg.validate().stage(Stage::Other, None)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().stage(Stage::Other, None)?;
    pool.install(|| run_stages(cfg))
}

fn run_stages(cfg: &PipelineConfig) -> Result<PipelineRun, StageError> {
    let patient_id = cfg.io.patient_id();
    let pid = Some(patient_id.as_str());
    let out = &cfg.io.output_dir;
    let mut timer = Timer::new();

    let provider = ConfidenceProvider::open(cfg.provider.kind, &cfg.provider.source).stage(Stage::Classify, pid)?;
    let input = &cfg.io.input;
    let volume = load_volume(input, VolumeFormat::infer(input)).stage(Stage::Io, pid)?;
    log::info!("loaded {} with dims {:?}", input.display(), volume.dims());

    let pre = preprocess_study(&volume, &cfg.preproc).stage(Stage::Preprocess, pid)?;
    timer.lap(Stage::Preprocess);
    let ids: Vec<String> = pre.rois.iter().map(|r| roi_id(&patient_id, r.side.as_str())).collect();

    let series: Vec<ConfidenceSeries> = pre
        .rois
        .iter()
        .zip(&ids)
        .map(|(roi, id)| classify_roi(&provider, &roi.volume, id, &patient_id).stage(Stage::Classify, Some(id)))
        .collect::<Result<_, _>>()?;
    timer.lap(Stage::Classify);

    let bones = bone_models(&pre.rois, &ids, &cfg.bonemesh)?;
    timer.lap(Stage::Bonemesh);

    let mut located = Vec::with_capacity(ids.len());
    for (((roi, id), s), bone) in pre.rois.iter().zip(&ids).zip(&series).zip(&bones) {
        let r = localize_roi(s, &bone.mesh, &bone.mask, roi.volume.spacing(), &cfg.tumorloc).stage(Stage::Localize, Some(id))?;
        located.push(r);
    }
    timer.lap(Stage::Localize);

    let rois_dir = out.join("rois");
    let mesh_dir = out.join("meshes");
    create_dir(&rois_dir)?;
    create_dir(&mesh_dir)?;
    let ext = cfg.io.mesh_format.extension();
    let mut artifacts = Vec::with_capacity(ids.len());
    let mut boxes = BoxesReport::default();
    for (((roi, id), bone), (span, annotated)) in pre.rois.iter().zip(&ids).zip(&bones).zip(&located) {
        let volume_path = rois_dir.join(format!("{id}.ostv"));
        let mask_path = rois_dir.join(format!("{id}.bone.ostv"));
        let mesh_path = mesh_dir.join(format!("{id}.{ext}"));
        save_volume(&roi.volume, &volume_path).stage(Stage::Io, Some(id))?;
        save_mask(&bone.mask, roi.volume.spacing(), &mask_path).stage(Stage::Io, Some(id))?;
        save_mesh(annotated, &mesh_path, cfg.io.mesh_format.format()).stage(Stage::Io, Some(id))?;
        boxes.rois.push(RoiBoxes { roi_id: id.clone(), span: span.map(|(a, b)| [a, b]), boxes: annotated.boxes.clone() });
        artifacts.push(RoiArtifacts {
            roi_id: id.clone(),
            volume: volume_path,
            bone_mask: mask_path,
            mesh: mesh_path,
            bone_voxels: bone.mask.count(),
            mesh_vertices: annotated.vertices.len(),
            mesh_faces: annotated.faces.len(),
        });
    }
    let confidences = out.join("confidences.csv");
    write_confidence_csv(&series, &confidences).stage(Stage::Io, pid)?;
    let boxes_path = out.join("boxes.json");
    write_json(&boxes, &boxes_path)?;
    let report_path = out.join("preprocess_report.json");
    write_json(&pre.report, &report_path)?;
    timer.lap(Stage::Io);

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        patient_id: patient_id.clone(),
        stages: timer.stages,
        confidences,
        boxes: boxes_path,
        preprocess_report: report_path,
        rois: artifacts,
        warnings: pre.report.warnings.clone(),
    };
    write_json(&manifest, &out.join("run.json"))?;

    let rois = pre
        .rois
        .into_iter()
        .zip(ids)
        .zip(series)
        .zip(bones)
        .zip(located)
        .map(|((((roi, roi_id), confidences), bone), (span, annotated))| RoiResult { roi, roi_id, confidences, bone, span, annotated })
        .collect();
    Ok(PipelineRun { manifest, report: pre.report, boxes, rois })
}
