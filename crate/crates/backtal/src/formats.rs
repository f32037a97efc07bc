//! On-disk formats: binary feature files, JSON documents, checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use backtal_core::network::ParamTensor;
use backtal_core::{FeatureSequence, Matrix, ModelParams, NetworkShape, VideoAnnotation};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FEATURE_MAGIC: [u8; 4] = *b"BTF1";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BTCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const FEATURE_HEADER_LEN: usize = 12;
const CHECKPOINT_HEADER_LEN: usize = 4 + 4 * 11;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {error}")]
    Io { path: PathBuf, error: std::io::Error },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload size mismatch: header declares {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("{path}: {error}")]
    Json { path: PathBuf, error: serde_json::Error },
    #[error("invalid content: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, FormatError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |error| FormatError::Io { path: path.to_path_buf(), error }
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Header: magic, `D_in`, `T_raw` (u32 LE); payload: `T_raw` rows of `D_in` f32 LE.
pub fn encode_features(data: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * data.as_slice().len());
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&(data.cols() as u32).to_le_bytes());
    out.extend_from_slice(&(data.rows() as u32).to_le_bytes());
    for &v in data.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Returns the `T_raw x D_in` matrix exactly as stored.
pub fn decode_features(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(FormatError::Header(format!("{} bytes is shorter than the 12-byte header", bytes.len())));
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(FormatError::Header("bad magic".into()));
    }
    let dim = read_u32(bytes, 4) as usize;
    let len = read_u32(bytes, 8) as usize;
    if dim == 0 || len == 0 {
        return Err(FormatError::Header(format!("D_in = {dim}, T_raw = {len}; both must be positive")));
    }
    let expected = dim
        .checked_mul(len)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::Header("declared size overflows".into()))?;
    let payload = &bytes[FEATURE_HEADER_LEN..];
    if payload.len() != expected {
        return Err(FormatError::PayloadSize { expected, found: payload.len() });
    }
    let mut values = Vec::with_capacity(dim * len);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite(i));
        }
        values.push(f64::from(v));
    }
    Ok(Matrix::from_vec(len, dim, values).expect("length checked above"))
}

pub fn load_feature_file(path: &Path) -> Result<Matrix> {
    decode_features(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_feature_file(path: &Path, data: &Matrix) -> Result<()> {
    write_atomic(path, &encode_features(data))
}

/// Feature sequence with the snippet rate implied by the video duration.
pub fn load_feature_sequence(path: &Path, video_id: &str, duration_sec: f64) -> Result<FeatureSequence> {
    let data = load_feature_file(path)?;
    let fps = data.rows() as f64 / duration_sec;
    FeatureSequence::new(video_id, data, fps).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|error| FormatError::Json { path: path.to_path_buf(), error })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_annotation(path: &Path) -> Result<VideoAnnotation> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub feature_path: String,
    pub annotation_path: String,
    pub duration_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub videos: Vec<ManifestEntry>,
    #[serde(rename = "T_fixed")]
    pub t_fixed: usize,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() || self.t_fixed < 2 {
            return Err(FormatError::Invalid("manifest needs at least one class and T_fixed >= 2".into()));
        }
        let mut ids: Vec<&str> = self.videos.iter().map(|v| v.video_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(FormatError::Invalid(format!("duplicate video_id {}", w[0])));
        }
        if let Some(v) = self.videos.iter().find(|v| !(v.duration_sec > 0.0)) {
            return Err(FormatError::Invalid(format!("{}: duration_sec must be positive", v.video_id)));
        }
        Ok(())
    }
}

/// Manifest with relative paths resolved against its directory.
pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let m: DatasetManifest = read_json(path)?;
    m.validate()?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for v in &m.videos {
        for p in [&v.feature_path, &v.annotation_path] {
            let full = root.join(p);
            if !full.is_file() {
                return Err(FormatError::Io {
                    path: full,
                    error: std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file missing"),
                });
            }
        }
    }
    Ok((m, root))
}

/// Everything needed to rebuild a trained model for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub t_fixed: usize,
    pub k: usize,
    pub use_affinity: bool,
    pub suppression: bool,
}

/// Header: magic, then u32 LE version, C, T, D_in, D_emb, h, two hidden widths,
/// k and a flag word (bit 0 affinity, bit 1 suppression); then every tensor in
/// declared order as f64 LE.
pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let s = ck.params.shape;
    let flags = u32::from(ck.use_affinity) | (u32::from(ck.suppression) << 1);
    let header = [
        CHECKPOINT_VERSION,
        s.num_classes as u32,
        ck.t_fixed as u32,
        s.feature_dim as u32,
        s.embed_dim as u32,
        s.kernel_size as u32,
        s.hidden[0] as u32,
        s.hidden[1] as u32,
        ck.k as u32,
        flags,
        ParamTensor::ALL.len() as u32,
    ];
    let mut out = Vec::with_capacity(CHECKPOINT_HEADER_LEN + 8 * ck.params.values.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    for h in header {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for t in ParamTensor::ALL {
        for v in ck.params.tensor(t) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < CHECKPOINT_HEADER_LEN || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(FormatError::Header("not a checkpoint".into()));
    }
    let h: Vec<usize> = (0..11).map(|i| read_u32(bytes, 4 + 4 * i) as usize).collect();
    if h[0] != CHECKPOINT_VERSION as usize {
        return Err(FormatError::Header(format!("unsupported checkpoint version {}", h[0])));
    }
    if h[10] != ParamTensor::ALL.len() {
        return Err(FormatError::Header(format!("expected {} tensors, header says {}", ParamTensor::ALL.len(), h[10])));
    }
    let shape = NetworkShape { num_classes: h[1], feature_dim: h[3], embed_dim: h[4], kernel_size: h[5], hidden: [h[6], h[7]] };
    shape.validate().map_err(|e| FormatError::Header(e.to_string()))?;
    let payload = &bytes[CHECKPOINT_HEADER_LEN..];
    let expected = 8 * shape.num_params();
    if payload.len() != expected {
        return Err(FormatError::PayloadSize { expected, found: payload.len() });
    }
    let mut params = ModelParams::zeros(shape).map_err(|e| FormatError::Header(e.to_string()))?;
    let mut chunks = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for t in ParamTensor::ALL {
        for slot in params.tensor_mut(t) {
            *slot = chunks.next().expect("length checked above");
        }
    }
    if let Some(i) = params.values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(i));
    }
    Ok(Checkpoint { params, t_fixed: h[2], k: h[8], use_affinity: h[9] & 1 != 0, suppression: h[9] & 2 != 0 })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path).map_err(io_err(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_file_layout() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let bytes = encode_features(&m);
        assert_eq!(&bytes[..4], b"BTF1");
        assert_eq!(read_u32(&bytes, 4), 2);
        assert_eq!(read_u32(&bytes, 8), 3);
        assert_eq!(bytes.len(), 12 + 24);
        assert_eq!(decode_features(&bytes).unwrap(), m);
    }

    #[test]
    fn feature_errors_are_distinct() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let good = encode_features(&m);
        assert!(matches!(decode_features(&good[..good.len() - 4]), Err(FormatError::PayloadSize { expected: 24, found: 20 })));
        assert!(matches!(decode_features(&good[..7]), Err(FormatError::Header(_))));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_features(&bad), Err(FormatError::Header(_))));
        let mut nan = good;
        nan[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_features(&nan), Err(FormatError::NonFinite(0))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let shape = NetworkShape { num_classes: 3, feature_dim: 5, embed_dim: 4, kernel_size: 3, hidden: [6, 7] };
        let ck = Checkpoint { params: ModelParams::init(shape, 9).unwrap(), t_fixed: 32, k: 4, use_affinity: true, suppression: false };
        let bytes = encode_checkpoint(&ck);
        assert_eq!(bytes.len(), CHECKPOINT_HEADER_LEN + 8 * shape.num_params());
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode_checkpoint(&back), bytes);
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 8]), Err(FormatError::PayloadSize { .. })));
    }
}
