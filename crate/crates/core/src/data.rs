//! Dataset parsers (IDX, CIFAR-10 binary), stratified subsetting and
//! PGM/PPM image writers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "SNN_DATA_DIR";

const IDX_IMAGES: u32 = 2051;
const IDX_LABELS: u32 = 2049;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Images in `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]`
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub name: String,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, name: impl Into<String>, classes: usize) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::InvalidShape {
                shape: images.shape().to_vec(),
                reason: format!("expected [N, C, H, W] images for {} labels", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {classes} classes")));
        }
        Ok(Dataset {
            images,
            labels,
            name: name.into(),
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image(&self, i: usize) -> Tensor {
        let n: usize = self.image_shape().iter().product();
        Tensor::new(self.image_shape().to_vec(), self.images.data()[i * n..(i + 1) * n].to_vec()).expect("image slice")
    }

    /// Gather a batch `[len, C, H, W]` plus labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let n: usize = self.image_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * n..(i + 1) * n]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.image_shape());
        (Tensor::new(shape, data).expect("batch shape"), indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.batch(indices);
        Dataset {
            images,
            labels,
            name: self.name.clone(),
            classes: self.classes,
        }
    }

    /// Class-stratified seeded subset of `n` examples.
    ///
    /// Indices are shuffled, then classes are visited round-robin taking
    /// each class's next example in shuffled order, so every class
    /// contributes its first `ceil(n / classes)` shuffled occurrences when it
    /// has that many. The result keeps the shuffled order; `n = N` yields a
    /// permutation of the whole set.
    pub fn subset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::InvalidArgument(format!("subset of {n} from {} examples", self.len())));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        Rng::new(seed).shuffle(&mut order);
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); self.classes];
        for (pos, &i) in order.iter().enumerate() {
            per_class[self.labels[i]].push(pos);
        }
        if n >= self.classes {
            if let Some(c) = per_class.iter().position(|v| v.is_empty()) {
                return Err(Error::InvalidArgument(format!("class {c} has no examples to stratify")));
            }
        }
        let mut picked = Vec::with_capacity(n);
        let mut round = 0;
        while picked.len() < n {
            for class in &per_class {
                if picked.len() == n {
                    break;
                }
                if let Some(&pos) = class.get(round) {
                    picked.push(pos);
                }
            }
            round += 1;
        }
        picked.sort_unstable();
        let indices: Vec<usize> = picked.into_iter().map(|pos| order[pos]).collect();
        Ok(self.select(&indices))
    }
}

fn format_err(path: &Path, offset: u64, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset,
        reason: reason.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len() as u64, "truncated header"))
}

/// Parse an IDX header; returns the dimension sizes and the payload offset.
fn idx_header(bytes: &[u8], path: &Path, magic: u32) -> Result<(Vec<usize>, usize)> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(format_err(path, 0, format!("magic {found}, expected {magic}")));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|d| be_u32(bytes, 4 + 4 * d, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndims;
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(path, 4, "dimension product overflows"))?;
    if bytes.len() - start < expected {
        return Err(format_err(path, bytes.len() as u64, format!("truncated payload: {} of {expected} bytes", bytes.len() - start)));
    }
    if bytes.len() - start > expected {
        return Err(format_err(path, (start + expected) as u64, "trailing bytes after payload"));
    }
    Ok((dims, start))
}

/// Read an IDX image/label file pair (MNIST, FashionMNIST).
pub fn read_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    parse_idx(&read_bytes(images)?, &read_bytes(labels)?, images, labels)
}

/// Parse in-memory IDX image and label files; `images` and `labels` only
/// name the sources in error messages.
pub fn parse_idx(ib: &[u8], lb: &[u8], images: &Path, labels: &Path) -> Result<Dataset> {
    let (idims, istart) = idx_header(ib, images, IDX_IMAGES)?;
    let (ldims, lstart) = idx_header(lb, labels, IDX_LABELS)?;
    if idims[0] != ldims[0] {
        return Err(format_err(labels, 4, format!("{} labels for {} images", ldims[0], idims[0])));
    }
    let label_bytes = &lb[lstart..];
    if let Some(pos) = label_bytes.iter().position(|&l| l >= 10) {
        return Err(format_err(labels, (lstart + pos) as u64, format!("label {} out of range", label_bytes[pos])));
    }
    let pixels = ib[istart..].iter().map(|&p| p as f64 / 255.0).collect();
    let name = images.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(
        Tensor::new(vec![idims[0], 1, idims[1], idims[2]], pixels)?,
        label_bytes.iter().map(|&l| l as usize).collect(),
        name,
        10,
    )
}

/// Read CIFAR-10 binary batches (3073-byte records, channel-planar pixels).
pub fn read_cifar10(paths: &[PathBuf]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_bytes(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
            return Err(format_err(path, whole as u64, format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len())));
        }
        for (r, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
            if rec[0] >= 10 {
                return Err(format_err(path, (r * CIFAR_RECORD) as u64, format!("label {} out of range", rec[0])));
            }
            labels.push(rec[0] as usize);
            pixels.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
        }
    }
    Dataset::new(Tensor::new(vec![labels.len(), 3, 32, 32], pixels)?, labels, "cifar10", 10)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Fmnist,
    Cifar10,
}

impl DatasetKind {
    pub fn image_shape(self) -> [usize; 3] {
        match self {
            DatasetKind::Mnist | DatasetKind::Fmnist => [1, 28, 28],
            DatasetKind::Cifar10 => [3, 32, 32],
        }
    }
}

/// Dataset root: `$SNN_DATA_DIR`, else `./data`.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

/// Load the train or test split from `root/<name>/` in the standard file
/// layout of each distribution.
pub fn load(kind: DatasetKind, root: &Path, train: bool) -> Result<Dataset> {
    match kind {
        DatasetKind::Mnist | DatasetKind::Fmnist => {
            let dir = root.join(if kind == DatasetKind::Mnist { "mnist" } else { "fmnist" });
            let prefix = if train { "train" } else { "t10k" };
            let mut d = read_idx(&dir.join(format!("{prefix}-images-idx3-ubyte")), &dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
            d.name = format!("{}-{}", if kind == DatasetKind::Mnist { "mnist" } else { "fmnist" }, if train { "train" } else { "test" });
            Ok(d)
        }
        DatasetKind::Cifar10 => {
            let dir = root.join("cifar10");
            let files: Vec<PathBuf> = if train {
                (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
            } else {
                vec![dir.join("test_batch.bin")]
            };
            let mut d = read_cifar10(&files)?;
            d.name = format!("cifar10-{}", if train { "train" } else { "test" });
            Ok(d)
        }
    }
}

/// Encode a `[C, H, W]` image as binary PGM (C = 1) or PPM (C = 3).
pub fn encode_image(img: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = match img.shape() {
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "image must be [C, H, W]".into(),
            })
        }
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(Error::InvalidShape {
                shape: img.shape().to_vec(),
                reason: "only 1 or 3 channels can be written".into(),
            })
        }
    };
    if let Some(v) = img.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("pixel {v} outside [0, 1]")));
    }
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            out.push((255.0 * img.data()[ch * plane + p] + 0.5).floor() as u8);
        }
    }
    Ok(out)
}

pub fn write_image(img: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_image(img)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Decode a binary PGM/PPM with maxval 255 into `[C, H, W]` raw byte values.
pub fn decode_pnm(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bad = |offset: usize, reason: &str| format_err(Path::new("<pnm>"), offset as u64, reason);
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(pos, "truncated header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let c = match fields[0].1.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad(0, "not a binary PGM/PPM")),
    };
    let num = |i: usize| fields[i].1.parse::<usize>().map_err(|_| bad(fields[i].0, "bad header number"));
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(bad(fields[3].0, "maxval must be 255"));
    }
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != c * w * h {
        return Err(bad(pos, "raster size does not match header"));
    }
    Ok((c, h, w, raster.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend(d.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn write_pair(dir: &Path, img: &[u8], lab: &[u8]) -> (PathBuf, PathBuf) {
        let (a, b) = (dir.join("img"), dir.join("lab"));
        fs::write(&a, img).unwrap();
        fs::write(&b, lab).unwrap();
        (a, b)
    }

    #[test]
    fn idx_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = idx_bytes(2051, &[2, 2, 2], &[0, 255, 51, 102, 1, 2, 3, 4]);
        assert_eq!(&img[..4], &[0, 0, 8, 3]);
        let lab = idx_bytes(2049, &[2], &[7, 3]);
        let (a, b) = write_pair(dir.path(), &img, &lab);
        let d = read_idx(&a, &b).unwrap();
        assert_eq!(d.images.shape(), &[2, 1, 2, 2]);
        assert_eq!(d.labels, vec![7, 3]);
        assert_eq!(d.images.data()[1], 1.0);
        assert_eq!(d.images.data()[2], 0.2);

        // label file with the image magic
        let (a, b) = write_pair(dir.path(), &img, &idx_bytes(2051, &[2], &[7, 3]));
        assert!(matches!(read_idx(&a, &b), Err(Error::Format { offset: 0, .. })));
        // truncated image payload
        let (a, b) = write_pair(dir.path(), &img[..img.len() - 1], &lab);
        assert!(matches!(read_idx(&a, &b), Err(Error::Format { offset: 23, .. })));
        // truncated header
        let (a, b) = write_pair(dir.path(), &img[..6], &lab);
        assert!(matches!(read_idx(&a, &b), Err(Error::Format { .. })));
        // count mismatch
        let (a, b) = write_pair(dir.path(), &img, &idx_bytes(2049, &[1], &[7]));
        assert!(matches!(read_idx(&a, &b), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn cifar_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![7u8];
        rec.extend((0..3072).map(|i| if i == 0 { 255 } else { (i % 200) as u8 }));
        let p = dir.path().join("b.bin");
        fs::write(&p, [rec.clone(), rec.clone()].concat()).unwrap();
        let d = read_cifar10(std::slice::from_ref(&p)).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels, vec![7, 7]);
        assert_eq!(d.images.data()[0], 1.0);
        assert_eq!(d.images.shape(), &[2, 3, 32, 32]);
        fs::write(&p, &rec[..3000]).unwrap();
        assert!(matches!(read_cifar10(&[p]), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn pgm_ppm_encoding() {
        let white = Tensor::full(&[1, 1, 1], 1.0);
        assert_eq!(encode_image(&white).unwrap(), b"P5\n1 1\n255\n\xff");
        let half = Tensor::full(&[1, 1, 1], 0.5);
        assert_eq!(*encode_image(&half).unwrap().last().unwrap(), 128);
        let rgb = Tensor::new(vec![3, 1, 2], vec![1.0, 0.0, 0.5, 0.0, 0.0, 1.0]).unwrap();
        let bytes = encode_image(&rgb).unwrap();
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[255, 128, 0, 0, 0, 255]);
        assert!(encode_image(&Tensor::zeros(&[2, 1, 1])).is_err());
        assert!(encode_image(&Tensor::full(&[1, 1, 1], 1.5)).is_err());
        let (c, h, w, raster) = decode_pnm(&bytes).unwrap();
        assert_eq!((c, h, w), (3, 1, 2));
        assert_eq!(raster, vec![255, 128, 0, 0, 0, 255]);
    }

    fn toy(n_per: &[usize]) -> Dataset {
        let labels: Vec<usize> = n_per.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let n = labels.len();
        Dataset::new(Tensor::from_fn(&[n, 1, 1, 1], |i| i as f64), labels, "toy", n_per.len()).unwrap()
    }

    #[test]
    fn subset_stratifies() {
        let d = toy(&[5, 3, 7, 4]);
        let s = d.subset(4, 1).unwrap();
        let mut l = s.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
        let full = d.subset(d.len(), 9).unwrap();
        let mut ids: Vec<usize> = full.images.data().iter().map(|&v| v as usize).collect();
        ids.sort();
        assert_eq!(ids, (0..d.len()).collect::<Vec<_>>());
        assert_eq!(d.subset(8, 3).unwrap(), d.subset(8, 3).unwrap());
        assert!(d.subset(100, 0).is_err());
        assert!(toy(&[3, 0, 2]).subset(3, 0).is_err());
    }
}
