//! Tumor-confidence providers: a CSV reader and an ONNX model runner.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tract_onnx::pb;
use tract_onnx::prelude::*;

use crate::confidence::{ConfidenceSeries, ConfidenceTable};
use crate::error::{Error, Result};
use crate::grid::Slice;
use crate::volume::Volume;

/// Metadata key and value every model file must carry.
pub const CLASS_ORDER_KEY: &str = "class_order";
pub const CLASS_ORDER: &str = "healthy,tumor";

/// Index of the tumor class in the model output.
pub const TUMOR_CLASS: usize = 1;

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty);
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("softmax of non-finite logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Csv,
    Model,
}

impl FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ProviderKind::Csv),
            "model" => Ok(ProviderKind::Model),
            other => Err(Error::Invalid(format!("unknown provider kind `{other}`"))),
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Csv => "csv",
            ProviderKind::Model => "model",
        })
    }
}

/// Anything that maps one normalized slice to a tumor probability.
pub trait SliceClassifier: Send + Sync {
    fn tumor_probability(&self, slice: &Slice) -> Result<f64>;
}

/// A dimension read from the model's declared input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dim {
    Fixed(usize),
    Free,
}

impl Dim {
    fn resolve(self, wanted: usize) -> Result<usize> {
        match self {
            Dim::Free => Ok(wanted),
            Dim::Fixed(d) if d == wanted => Ok(d),
            Dim::Fixed(d) => Err(Error::Model(format!("input-shape mismatch: model expects {d}, got {wanted}"))),
        }
    }
}

fn declared_input_shape(proto: &pb::ModelProto) -> Result<[Dim; 4]> {
    let graph = proto.graph.as_ref().ok_or_else(|| Error::Model("model has no graph".into()))?;
    let initializers: Vec<&str> = graph.initializer.iter().map(|t| t.name.as_str()).collect();
    let input = graph
        .input
        .iter()
        .find(|i| !initializers.contains(&i.name.as_str()))
        .ok_or_else(|| Error::Model("model has no input".into()))?;
    let tensor = match input.r#type.as_ref().and_then(|t| t.value.as_ref()) {
        Some(pb::type_proto::Value::TensorType(t)) => t,
        None => return Err(Error::Model("model input is not a tensor".into())),
    };
    let dims = tensor.shape.as_ref().map(|s| s.dim.as_slice()).unwrap_or(&[]);
    if dims.len() != 4 {
        return Err(Error::Model(format!("expected a rank-4 NCHW input, found rank {}", dims.len())));
    }
    let mut out = [Dim::Free; 4];
    for (slot, d) in out.iter_mut().zip(dims) {
        use pb::tensor_shape_proto::dimension::Value;
        *slot = match d.value {
            Some(Value::DimValue(v)) if v > 0 => Dim::Fixed(v as usize),
            _ => Dim::Free,
        };
    }
    Ok(out)
}

fn check_class_order(proto: &pb::ModelProto) -> Result<()> {
    let found = proto.metadata_props.iter().find(|p| p.key == CLASS_ORDER_KEY).map(|p| p.value.trim());
    match found {
        Some(v) if v.replace(' ', "") == CLASS_ORDER => Ok(()),
        Some(v) => Err(Error::Model(format!("{CLASS_ORDER_KEY} is `{v}`, expected `{CLASS_ORDER}`"))),
        None => Err(Error::Model(format!("missing metadata `{CLASS_ORDER_KEY}`"))),
    }
}

type Plan = Arc<TypedRunnableModel>;

/// ONNX classifier. The network is compiled for the slice size of the first
/// volume it sees and recompiled only if a different size turns up.
pub struct OnnxClassifier {
    proto: pb::ModelProto,
    declared: [Dim; 4],
    channels: usize,
    plan: std::sync::Mutex<Option<((usize, usize), Plan)>>,
}

impl fmt::Debug for OnnxClassifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OnnxClassifier").field("declared", &self.declared).field("channels", &self.channels).finish()
    }
}

impl OnnxClassifier {
    pub fn open(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "model file not found")));
        }
        let proto = tract_onnx::onnx()
            .proto_model_for_path(path)
            .map_err(|e| Error::format(path, format!("not an ONNX model: {e}")))?;
        Self::from_proto(proto)
    }

    pub fn from_proto(proto: pb::ModelProto) -> Result<Self> {
        check_class_order(&proto)?;
        let declared = declared_input_shape(&proto)?;
        // A free channel axis is treated as single-channel input.
        let channels = match declared[1] {
            Dim::Fixed(c) => c,
            Dim::Free => 1,
        };
        if let Dim::Fixed(b) = declared[0] {
            if b != 1 {
                return Err(Error::Model(format!("batch dimension must be 1 or free, found {b}")));
            }
        }
        Ok(Self { proto, declared, channels, plan: std::sync::Mutex::new(None) })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn plan_for(&self, height: usize, width: usize) -> Result<Plan> {
        let h = self.declared[2].resolve(height)?;
        let w = self.declared[3].resolve(width)?;
        let mut guard = self.plan.lock().expect("plan lock poisoned");
        if let Some((shape, plan)) = guard.as_ref() {
            if *shape == (h, w) {
                return Ok(plan.clone());
            }
        }
        let plan = tract_onnx::onnx()
            .model_for_proto_model(&self.proto)
            .and_then(|m| m.with_input_fact(0, f32::fact([1, self.channels, h, w]).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| Error::Model(format!("{e:#}")))?;
        *guard = Some(((h, w), plan.clone()));
        Ok(plan)
    }

    fn logits(&self, plan: &Plan, slice: &Slice) -> Result<Vec<f64>> {
        let (h, w) = (slice.height(), slice.width());
        let plane: Vec<f32> = slice.as_slice().iter().map(|&v| v as f32).collect();
        let mut data = Vec::with_capacity(plane.len() * self.channels);
        for _ in 0..self.channels {
            data.extend_from_slice(&plane);
        }
        let input = Tensor::from_shape(&[1, self.channels, h, w], &data).map_err(|e| Error::Model(e.to_string()))?;
        let outputs = plan.run(tvec!(input.into_tvalue())).map_err(|e| Error::Model(format!("{e:#}")))?;
        let out = outputs[0].cast_to::<f32>().map_err(|e| Error::Model(e.to_string()))?;
        let logits: Vec<f64> =
            out.to_plain_array_view::<f32>().map_err(|e| Error::Model(e.to_string()))?.iter().map(|&v| v as f64).collect();
        if logits.len() != 2 {
            return Err(Error::Model(format!("expected 2 output logits, found {}", logits.len())));
        }
        Ok(logits)
    }
}

impl SliceClassifier for OnnxClassifier {
    fn tumor_probability(&self, slice: &Slice) -> Result<f64> {
        let plan = self.plan_for(slice.height(), slice.width())?;
        let probs = softmax(&self.logits(&plan, slice)?)?;
        Ok(probs[TUMOR_CLASS])
    }
}

/// Runs `classifier` over every slice of `roi`, in parallel, keeping slice order.
pub fn classify_volume(classifier: &dyn SliceClassifier, roi: &Volume, patient_id: &str) -> Result<ConfidenceSeries> {
    let values = (0..roi.slice_count())
        .into_par_iter()
        .map(|z| classifier.tumor_probability(&roi.slice(z)).map_err(|e| Error::at_slice(z, e)))
        .collect::<Result<Vec<f64>>>()?;
    ConfidenceSeries::new(patient_id, values)
}

enum Backend {
    Csv(ConfidenceTable),
    Model(Box<dyn SliceClassifier>),
}

pub struct ConfidenceProvider {
    kind: ProviderKind,
    source: PathBuf,
    backend: Backend,
}

impl fmt::Debug for ConfidenceProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConfidenceProvider").field("kind", &self.kind).field("source", &self.source).finish()
    }
}

impl ConfidenceProvider {
    pub fn open(kind: ProviderKind, source: impl Into<PathBuf>) -> Result<Self> {
        let source = source.into();
        if !source.is_file() {
            return Err(Error::io(&source, std::io::Error::new(std::io::ErrorKind::NotFound, "provider source not found")));
        }
        let backend = match kind {
            ProviderKind::Csv => Backend::Csv(ConfidenceTable::read(&source)?),
            ProviderKind::Model => Backend::Model(Box::new(OnnxClassifier::open(&source)?)),
        };
        Ok(Self { kind, source, backend })
    }

    /// Wraps an in-memory classifier, e.g. a test double.
    pub fn from_classifier(classifier: Box<dyn SliceClassifier>) -> Self {
        Self { kind: ProviderKind::Model, source: PathBuf::new(), backend: Backend::Model(classifier) }
    }

    pub fn from_table(table: ConfidenceTable) -> Self {
        Self { kind: ProviderKind::Csv, source: PathBuf::new(), backend: Backend::Csv(table) }
    }

    pub fn kind(&self) -> ProviderKind {
        self.kind
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    /// Whether a CSV provider has rows for `id`; model providers know every id.
    pub fn knows(&self, id: &str) -> bool {
        match &self.backend {
            Backend::Csv(t) => t.contains(id),
            Backend::Model(_) => true,
        }
    }

    pub fn confidences(&self, roi: &Volume, patient_id: &str) -> Result<ConfidenceSeries> {
        match &self.backend {
            Backend::Csv(table) => table.series(patient_id, roi.slice_count()),
            Backend::Model(c) => classify_volume(c.as_ref(), roi, patient_id),
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::write_confidence_csv;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for c in [-40.0, 0.0, 7.5, 1e3] {
            for p in softmax(&[c, c, c]).unwrap() {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        let p = softmax(&[2.0, 0.0]).unwrap();
        // e^2 / (e^2 + 1), evaluated independently.
        let e2 = std::f64::consts::E * std::f64::consts::E;
        assert!((p[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.88079708).abs() < 1e-7);
        assert!((p[1] - 0.11920292).abs() < 1e-7);
        assert!(matches!(softmax(&[]), Err(Error::Empty)));
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
    }

    fn roi(n: usize, size: usize, value: f32) -> Volume {
        Volume::filled([size, size, n], [1.0, 1.0, 1.0], value).unwrap()
    }

    #[test]
    fn csv_provider_reads_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_confidence_csv(&[ConfidenceSeries::new("p1", vec![0.0; 4]).unwrap()], &path).unwrap();
        let p = ConfidenceProvider::open(ProviderKind::Csv, &path).unwrap();
        let s = p.confidences(&roi(4, 8, 0.5), "p1").unwrap();
        assert_eq!(s.values(), &[0.0; 4]);
        assert!(p.knows("p1"));
        assert!(!p.knows("p2"));
        assert!(matches!(p.confidences(&roi(5, 8, 0.5), "p1"), Err(Error::MissingSlice { slice_index: 4, .. })));
    }

    #[test]
    fn csv_out_of_range_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        std::fs::write(&path, "patient_id,slice_index,p_tumor\np1,0,1.2\n").unwrap();
        let err = ConfidenceProvider::open(ProviderKind::Csv, &path).unwrap_err();
        assert!(err.to_string().contains("probability out of range"), "{err}");
    }

    #[test]
    fn missing_source_is_io_error() {
        let err = ConfidenceProvider::open(ProviderKind::Model, "/nonexistent/model.onnx").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn constant_logit_model_gives_half() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.onnx");
        std::fs::write(&path, stub::linear_model(3, 16, [0.0, 0.0], [0.25, 0.25], Some(CLASS_ORDER))).unwrap();
        let p = ConfidenceProvider::open(ProviderKind::Model, &path).unwrap();
        let s = p.confidences(&roi(5, 16, 0.7), "p").unwrap();
        assert_eq!(s.len(), 5);
        for &v in s.values() {
            assert!((v - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn model_output_follows_softmax_of_mean() {
        let proto = {
            use prost::Message;
            pb::ModelProto::decode(stub::linear_model(3, 8, [-2.0, 2.0], [0.0, 0.0], Some("healthy,tumor")).as_slice())
                .unwrap()
        };
        let c = OnnxClassifier::from_proto(proto).unwrap();
        assert_eq!(c.channels(), 3);
        let slice = Slice::from_fn(8, 8, |x, _| if x < 4 { 0.0 } else { 1.0 });
        let p = c.tumor_probability(&slice).unwrap();
        // mean 0.5 -> logits (-1, 1)
        let expected = softmax(&[-1.0, 1.0]).unwrap()[1];
        assert!((p - expected).abs() < 1e-6, "{p} vs {expected}");
        // deterministic across calls
        assert_eq!(p, c.tumor_probability(&slice).unwrap());
    }

    #[test]
    fn model_validation() {
        use prost::Message;
        let decode = |bytes: Vec<u8>| pb::ModelProto::decode(bytes.as_slice()).unwrap();
        let missing = OnnxClassifier::from_proto(decode(stub::linear_model(1, 8, [0.0; 2], [0.0; 2], None)));
        assert!(matches!(missing, Err(Error::Model(_))));
        let swapped =
            OnnxClassifier::from_proto(decode(stub::linear_model(1, 8, [0.0; 2], [0.0; 2], Some("tumor,healthy"))));
        assert!(matches!(swapped, Err(Error::Model(_))));

        let c = OnnxClassifier::from_proto(decode(stub::linear_model(1, 8, [0.0; 2], [0.0; 2], Some(CLASS_ORDER))))
            .unwrap();
        let wrong = Slice::filled(16, 16, 0.0);
        let err = c.tumor_probability(&wrong).unwrap_err();
        assert!(err.to_string().contains("input-shape mismatch"), "{err}");
    }

    #[test]
    fn garbage_model_file_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.onnx");
        std::fs::write(&path, b"\xff\xff not a protobuf").unwrap();
        assert!(OnnxClassifier::open(&path).is_err());
    }
}
