//! IDX (MNIST) file reading.

use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::sync::OnceLock;

use flate2::read::GzDecoder;

use super::{DataError, Dataset};
use crate::nn::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

type OpenHook = Box<dyn Fn(&Path) + Send + Sync>;

static OPEN_HOOK: OnceLock<OpenHook> = OnceLock::new();

/// Installs a process-wide callback invoked with every IDX path before it
/// is opened. Only the first installation takes effect.
pub fn set_open_hook(hook: impl Fn(&Path) + Send + Sync + 'static) -> bool {
    OPEN_HOOK.set(Box::new(hook)).is_ok()
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    if let Some(hook) = OPEN_HOOK.get() {
        hook(path);
    }
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = File::open(path).map_err(io)?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes).map_err(io)?;
    } else {
        file.read_to_end(&mut bytes).map_err(io)?;
    }
    Ok(bytes)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            expected: offset + 4,
        })
}

/// Parses an IDX header with `rank` dimensions, returning the dims and the
/// payload slice after checking its length.
fn parse<'a>(bytes: &'a [u8], magic: u32, rank: usize, path: &Path) -> Result<(Vec<usize>, &'a [u8]), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            offset: 0,
            expected: magic,
            found,
        });
    }
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let start = 4 + 4 * rank;
    if let Some(i) = dims.iter().position(|&d| d == 0) {
        return Err(DataError::DimensionMismatch {
            path: path.to_path_buf(),
            offset: 4 + 4 * i,
            message: "zero-sized dimension".into(),
        });
    }
    let len: usize = dims.iter().product();
    let payload = &bytes[start..];
    if payload.len() < len {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            expected: start + len,
        });
    }
    if payload.len() > len {
        return Err(DataError::DimensionMismatch {
            path: path.to_path_buf(),
            offset: start + len,
            message: format!("{} trailing bytes after payload", payload.len() - len),
        });
    }
    Ok((dims, payload))
}

/// Reads an image file into a `(n, 1, rows, cols)` tensor scaled to [0, 1].
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Tensor, DataError> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let (dims, payload) = parse(&bytes, IMAGES_MAGIC, 3, path)?;
    let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Tensor::new(vec![dims[0], 1, dims[1], dims[2]], data).expect("dims validated"))
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>, DataError> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let (_, payload) = parse(&bytes, LABELS_MAGIC, 1, path)?;
    if let Some(pos) = payload.iter().position(|&l| l > 9) {
        return Err(DataError::DimensionMismatch {
            path: path.to_path_buf(),
            offset: 8 + pos,
            message: format!("label {} outside 0-9", payload[pos]),
        });
    }
    Ok(payload.to_vec())
}

/// Loads a labelled dataset from an image file and a label file.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let images = load_idx_images(images_path)?;
    let labels_path = labels_path.as_ref();
    let labels = load_idx_labels(labels_path)?;
    if labels.len() != images.batch() {
        return Err(DataError::DimensionMismatch {
            path: labels_path.to_path_buf(),
            offset: 4,
            message: format!("{} labels for {} images", labels.len(), images.batch()),
        });
    }
    Ok(Dataset::new(images, Some(labels)).expect("counts checked"))
}

/// Which standard MNIST file pair to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistPart {
    Train,
    Test,
}

impl MnistPart {
    fn prefix(self) -> &'static str {
        match self {
            MnistPart::Train => "train",
            MnistPart::Test => "t10k",
        }
    }
}

fn locate(dir: &Path, stem: &str) -> std::path::PathBuf {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

pub fn mnist_images_path(dir: impl AsRef<Path>, part: MnistPart) -> std::path::PathBuf {
    locate(dir.as_ref(), &format!("{}-images-idx3-ubyte", part.prefix()))
}

pub fn mnist_labels_path(dir: impl AsRef<Path>, part: MnistPart) -> std::path::PathBuf {
    locate(dir.as_ref(), &format!("{}-labels-idx1-ubyte", part.prefix()))
}

/// Loads one MNIST part from a directory holding the standard file names
/// (optionally gzipped). With `with_labels` false the label file is not
/// opened at all.
pub fn load_mnist(dir: impl AsRef<Path>, part: MnistPart, with_labels: bool) -> Result<Dataset, DataError> {
    let dir = dir.as_ref();
    if with_labels {
        load_idx(mnist_images_path(dir, part), mnist_labels_path(dir, part))
    } else {
        Ok(Dataset::new(load_idx_images(mnist_images_path(dir, part))?, None).expect("unlabelled"))
    }
}
