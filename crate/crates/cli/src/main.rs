use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use osteopipe_cli::config::PipelineConfig;
use osteopipe_cli::exit::{Stage, StageError, StageExt};
use osteopipe_cli::pipeline::{classify_roi, localize_roi, roi_id, run_pipeline, BoxesReport, RoiBoxes};
use osteopipe_core::augment::augment_dataset;
use osteopipe_core::bonemesh::{bone_mask, build_bone_model};
use osteopipe_core::classify::{ConfidenceProvider, ProviderKind};
use osteopipe_core::confidence::{write_confidence_csv, ConfidenceTable};
use osteopipe_core::curation::{apply_curation, find_conflicts, EmbeddingSet};
use osteopipe_core::io::{load_mask, load_volume, save_mask, save_volume, VolumeFormat};
use osteopipe_core::manifest::DatasetManifest;
use osteopipe_core::mesh::{read_mesh, save_mesh, MeshFormat};
use osteopipe_core::metrics::{evaluate_patientwise, FoldSet};
use osteopipe_core::phantom::{generate_phantom, PhantomSpec};
use osteopipe_core::preproc::preprocess_study;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "osteopipe", version, about = "Bone tumor localization pipeline for lower-limb CT")]
struct Cli {
    /// TOML configuration; stage parameters not given fall back to defaults.
    #[arg(long, global = true, env = "OSTEOPIPE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a configuration template with every default filled in.
    Init {
        #[arg(long, default_value = "osteopipe.toml")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Generate a synthetic two-leg phantom study with known bone and tumor.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        /// Per-slice tumor confidences for the phantom, keyed by the file stem.
        #[arg(long)]
        confidences: Option<PathBuf>,
        /// Ground-truth bone mask.
        #[arg(long)]
        bone_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Table removal, leg separation and ROI cropping.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        patient_id: Option<String>,
    },
    /// Remove near-duplicate slices with conflicting labels.
    Curate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = osteopipe_core::curation::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Conflict pairs and summary as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write augmented copies of every training slice.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        copies: u32,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-slice tumor confidences for one ROI.
    Classify {
        #[arg(long)]
        roi: PathBuf,
        #[arg(long)]
        provider: Option<ProviderKind>,
        #[arg(long)]
        source: Option<PathBuf>,
        /// Series id; defaults to the ROI file stem.
        #[arg(long)]
        id: Option<String>,
        /// Fallback id looked up when the CSV has no rows for `--id`.
        #[arg(long)]
        patient_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bone segmentation and surface mesh for one ROI.
    Bonemesh {
        #[arg(long)]
        roi: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Find the tumor slice span and add its box to the mesh.
    Localize {
        #[arg(long)]
        confidences: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        mesh: PathBuf,
        /// Bone mask from `bonemesh --mask-out`.
        #[arg(long, required_unless_present = "roi")]
        bone_mask: Option<PathBuf>,
        /// Recompute the bone mask from this ROI instead.
        #[arg(long)]
        roi: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        boxes_out: Option<PathBuf>,
    },
    /// Patient-wise cross-validated metrics with 95% intervals.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        confidences: PathBuf,
        #[arg(long)]
        folds: PathBuf,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage on one study.
    Pipeline {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        patient_id: Option<String>,
        #[arg(long)]
        provider: Option<ProviderKind>,
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

type Outcome = Result<(), StageError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> StageError {
    StageError::new(Stage::Io, None, anyhow::anyhow!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Outcome {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn ensure_parent(path: &Path) -> Outcome {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| io_err(p, e)),
        _ => Ok(()),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "study".into())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, StageError> {
    match path {
        Some(p) => PipelineConfig::load(p).stage(Stage::Usage, None),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Init { out, force } => {
            if out.exists() && !force {
                return Err(StageError::new(Stage::Usage, None, anyhow::anyhow!("{} exists; pass --force to overwrite", out.display())));
            }
            ensure_parent(&out)?;
            fs::write(&out, cfg.to_toml()).map_err(|e| io_err(&out, e))?;
            println!("wrote {}", out.display());
        }
        Command::Phantom { out, confidences, bone_out, seed } => {
            let phantom = generate_phantom(&PhantomSpec::standard(seed)).stage(Stage::Other, None)?;
            ensure_parent(&out)?;
            save_volume(&phantom.volume, &out).stage(Stage::Io, None)?;
            if let Some(path) = confidences {
                let mut series = phantom.confidences.clone();
                series.patient_id = stem(&out);
                ensure_parent(&path)?;
                write_confidence_csv(&[series], &path).stage(Stage::Io, None)?;
            }
            if let Some(path) = bone_out {
                ensure_parent(&path)?;
                save_mask(&phantom.bone, phantom.volume.spacing(), &path).stage(Stage::Io, None)?;
            }
            println!("wrote {}", out.display());
        }
        Command::Preprocess { input, out_dir, patient_id } => {
            let pid = patient_id.unwrap_or_else(|| stem(&input));
            let volume = load_volume(&input, VolumeFormat::infer(&input)).stage(Stage::Io, Some(&pid))?;
            let pre = preprocess_study(&volume, &cfg.preproc).stage(Stage::Preprocess, Some(&pid))?;
            let rois_dir = out_dir.join("rois");
            fs::create_dir_all(&rois_dir).map_err(|e| io_err(&rois_dir, e))?;
            for roi in &pre.rois {
                let id = roi_id(&pid, roi.side.as_str());
                let path = rois_dir.join(format!("{id}.ostv"));
                save_volume(&roi.volume, &path).stage(Stage::Io, Some(&id))?;
                println!("{}", path.display());
            }
            write_json(&pre.report, &out_dir.join("preprocess_report.json"))?;
        }
        Command::Curate { manifest, embeddings, threshold, out, report } => {
            let records = DatasetManifest::load(&manifest).stage(Stage::Io, None)?;
            let emb = EmbeddingSet::read_csv(&embeddings).stage(Stage::Io, None)?;
            let conflicts = find_conflicts(&emb, &records, threshold).stage(Stage::Other, None)?;
            let (curated, summary) = apply_curation(&records, &conflicts).stage(Stage::Other, None)?;
            ensure_parent(&out)?;
            curated.save(&out).stage(Stage::Io, None)?;
            if let Some(path) = report {
                #[derive(Serialize)]
                struct CurationOutput<'a> {
                    summary: &'a osteopipe_core::curation::CurationSummary,
                    conflicts: &'a osteopipe_core::curation::ConflictReport,
                }
                write_json(&CurationOutput { summary: &summary, conflicts: &conflicts }, &path)?;
            }
            println!(
                "{} conflicting pairs, {} slices removed, {} -> {} records",
                conflicts.pairs.len(),
                conflicts.removed_ids.len(),
                summary.records_before,
                summary.records_after
            );
        }
        Command::Augment { manifest, out_dir, copies, seed } => {
            if let Some(seed) = seed {
                cfg.augment.seed = seed;
            }
            let records = DatasetManifest::load(&manifest).stage(Stage::Io, None)?;
            let augmented = augment_dataset(&records, &cfg.augment, copies, &out_dir).stage(Stage::Other, None)?;
            let path = out_dir.join("manifest.json");
            augmented.save(&path).stage(Stage::Io, None)?;
            println!("{} records, manifest at {}", augmented.len(), path.display());
        }
        Command::Classify { roi, provider, source, id, patient_id, out } => {
            let id = id.unwrap_or_else(|| stem(&roi));
            let kind = provider.unwrap_or(cfg.provider.kind);
            let source = source.unwrap_or(cfg.provider.source);
            let provider = ConfidenceProvider::open(kind, source).stage(Stage::Classify, Some(&id))?;
            let volume = load_volume(&roi, VolumeFormat::infer(&roi)).stage(Stage::Io, Some(&id))?;
            let fallback = patient_id.unwrap_or_else(|| id.clone());
            let series = classify_roi(&provider, &volume, &id, &fallback).stage(Stage::Classify, Some(&id))?;
            ensure_parent(&out)?;
            write_confidence_csv(&[series], &out).stage(Stage::Io, Some(&id))?;
        }
        Command::Bonemesh { roi, out, mask_out } => {
            let id = stem(&roi);
            let volume = load_volume(&roi, VolumeFormat::infer(&roi)).stage(Stage::Io, Some(&id))?;
            let model = build_bone_model(&volume, &cfg.bonemesh).stage(Stage::Bonemesh, Some(&id))?;
            let format = MeshFormat::from_path(&out).stage(Stage::Usage, None)?;
            ensure_parent(&out)?;
            save_mesh(&model.mesh, &out, format).stage(Stage::Io, Some(&id))?;
            if let Some(path) = mask_out {
                ensure_parent(&path)?;
                save_mask(&model.mask, volume.spacing(), &path).stage(Stage::Io, Some(&id))?;
            }
            println!("{} vertices, {} faces", model.mesh.vertices.len(), model.mesh.faces.len());
        }
        Command::Localize { confidences, id, mesh, bone_mask: mask_path, roi, out, boxes_out } => {
            let (mask, spacing) = match (mask_path, roi) {
                (Some(path), _) => load_mask(&path).stage(Stage::Io, Some(&id))?,
                (None, Some(roi)) => {
                    let volume = load_volume(&roi, VolumeFormat::infer(&roi)).stage(Stage::Io, Some(&id))?;
                    (bone_mask(&volume, &cfg.bonemesh).stage(Stage::Bonemesh, Some(&id))?, volume.spacing())
                }
                (None, None) => unreachable!("clap requires one of --bone-mask and --roi"),
            };
            let table = ConfidenceTable::read(&confidences).stage(Stage::Io, Some(&id))?;
            let series = table.series(&id, mask.dims()[2]).stage(Stage::Localize, Some(&id))?;
            let base = read_mesh(&mesh).stage(Stage::Io, Some(&id))?;
            let (span, annotated) = localize_roi(&series, &base, &mask, spacing, &cfg.tumorloc).stage(Stage::Localize, Some(&id))?;
            let format = MeshFormat::from_path(&out).stage(Stage::Usage, None)?;
            ensure_parent(&out)?;
            save_mesh(&annotated, &out, format).stage(Stage::Io, Some(&id))?;
            if let Some(path) = boxes_out {
                let report = BoxesReport {
                    rois: vec![RoiBoxes { roi_id: id.clone(), span: span.map(|(a, b)| [a, b]), boxes: annotated.boxes.clone() }],
                };
                write_json(&report, &path)?;
            }
            match span {
                Some((a, b)) => println!("tumor slices {a}..={b}"),
                None => println!("no tumor span"),
            }
        }
        Command::Evaluate { manifest, confidences, folds, threshold, out } => {
            let records = DatasetManifest::load(&manifest).stage(Stage::Io, None)?;
            let table = ConfidenceTable::read(&confidences).stage(Stage::Io, None)?;
            let text = fs::read_to_string(&folds).map_err(|e| io_err(&folds, e))?;
            let folds: FoldSet = serde_json::from_str(&text).stage(Stage::Usage, None)?;
            let report = evaluate_patientwise(&records, &table, &folds, threshold).stage(Stage::Other, None)?;
            for (name, metric) in [("AUC", &report.auc), ("TPR", &report.tpr), ("TNR", &report.tnr)] {
                match metric {
                    Some(m) => println!("{name} {}", m.formatted),
                    None => println!("{name} n/a"),
                }
            }
            if let Some(path) = out {
                write_json(&report, &path)?;
            }
        }
        Command::Pipeline { input, output_dir, patient_id, provider, source, seed, jobs } => {
            if let Some(seed) = seed {
                cfg = cfg.with_seed(seed);
            }
            if let Some(v) = input {
                cfg.io.input = v;
            }
            if let Some(v) = output_dir {
                cfg.io.output_dir = v;
            }
            if patient_id.is_some() {
                cfg.io.patient_id = patient_id;
            }
            if let Some(v) = provider {
                cfg.provider.kind = v;
            }
            if let Some(v) = source {
                cfg.provider.source = v;
            }
            if let Some(v) = jobs {
                cfg.jobs = v;
            }
            let run = run_pipeline(&cfg)?;
            for roi in &run.boxes.rois {
                match roi.span {
                    Some([a, b]) => println!("{}: tumor slices {a}..={b}", roi.roi_id),
                    None => println!("{}: no tumor span", roi.roi_id),
                }
            }
            for w in &run.manifest.warnings {
                log::warn!("{w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OSTEOPIPE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(Stage::Usage.code() as u8) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.code() as u8)
        }
    }
}
