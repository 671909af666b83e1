//! Pipeline configuration, stored as TOML.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use osteopipe_core::augment::AugmentConfig;
use osteopipe_core::bonemesh::BoneMeshConfig;
use osteopipe_core::classify::ProviderKind;
use osteopipe_core::mesh::MeshFormat;
use osteopipe_core::preproc::PreprocConfig;
use osteopipe_core::tumorloc::TumorLocConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub source: PathBuf,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self { kind: ProviderKind::Csv, source: PathBuf::from("confidences.csv") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormatName {
    #[default]
    Stl,
    Ply,
}

impl MeshFormatName {
    pub fn format(self) -> MeshFormat {
        match self {
            MeshFormatName::Stl => MeshFormat::StlBinary,
            MeshFormatName::Ply => MeshFormat::PlyAscii,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            MeshFormatName::Stl => "stl",
            MeshFormatName::Ply => "ply",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoConfig {
    /// `.ostv` file or PNG stack directory.
    pub input: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to the input file stem.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    pub mesh_format: MeshFormatName,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("study.ostv"),
            output_dir: PathBuf::from("out"),
            patient_id: None,
            mesh_format: MeshFormatName::Stl,
        }
    }
}

impl IoConfig {
    pub fn patient_id(&self) -> String {
        self.patient_id.clone().unwrap_or_else(|| {
            self.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "study".into())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub io: IoConfig,
    pub provider: ProviderConfig,
    pub preproc: PreprocConfig,
    pub augment: AugmentConfig,
    pub bonemesh: BoneMeshConfig,
    pub tumorloc: TumorLocConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            io: IoConfig::default(),
            provider: ProviderConfig::default(),
            preproc: PreprocConfig::default(),
            augment: AugmentConfig::default(),
            bonemesh: BoneMeshConfig::default(),
            tumorloc: TumorLocConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The run seed feeds every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.augment.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.preproc.validate()?;
        self.augment.validate()?;
        self.bonemesh.validate()?;
        self.tumorloc.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_round_trips() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: PipelineConfig = toml::from_str("seed = 7\n[tumorloc]\nthreshold = 0.9\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.tumorloc.threshold, 0.9);
        assert_eq!(cfg.tumorloc.median_kernel, 3);
        assert_eq!(cfg.bonemesh, BoneMeshConfig::default());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let b = PipelineConfig::default().with_seed(1);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
