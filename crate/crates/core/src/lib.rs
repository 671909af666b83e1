//! Osteosarcoma CT pipeline: leg-ROI preprocessing, label curation,
//! augmentation, tumor-confidence providers, bone meshing, tumor
//! localization and evaluation metrics.

// `!(x > y)` is how parameter checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod bonemesh;
pub mod classify;
pub mod confidence;
pub mod curation;
pub mod error;
pub mod grid;
pub mod io;
pub mod labeling;
pub mod manifest;
pub mod metrics;
pub mod mesh;
pub mod morphology;
pub mod phantom;
pub mod preproc;
pub mod signal;
pub mod tumorloc;
pub mod volume;

pub use augment::{augment_slice, AugmentConfig};
pub use bonemesh::{build_bone_model, BoneMeshConfig, BoneModel};
pub use classify::{softmax, ConfidenceProvider, ProviderKind, SliceClassifier};
pub use confidence::{ConfidenceSeries, ConfidenceTable};
pub use curation::{find_conflicts, ConflictReport, EmbeddingSet};
pub use error::{Error, Result};
pub use grid::{Grid2, Mask2, Slice};
pub use io::{load_volume, save_volume, VolumeFormat};
pub use manifest::{DatasetManifest, Label, Record, SliceId, Split};
pub use mesh::{save_mesh, Aabb, MeshFormat, TriMesh};
pub use metrics::{roc_auc, t_confidence_interval, ConfusionCounts, FoldSummary};
pub use phantom::{generate_phantom, Phantom, PhantomSpec};
pub use tumorloc::{annotate_tumor_box, tumor_slice_range, TumorLocConfig};
pub use volume::{BinaryMask, Volume};
