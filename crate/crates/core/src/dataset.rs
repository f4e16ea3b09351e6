//! Feature-vector datasets for the source and target domains.
//!
//! Features are kept in memory as a dense row-major `f64` matrix. On disk they
//! use a small little-endian binary container:
//!
//! ```text
//! feature file: "FVEC" | version u32 = 1 | num_samples u32 | dim u32 | num_samples*dim f32
//! label file:   "LBLS" | version u32 = 1 | num_samples u32 | num_samples i32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FVEC";
pub const LABEL_MAGIC: &[u8; 4] = b"LBLS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainTag {
    Source,
    Target,
}

/// Dense feature matrix with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    num_samples: usize,
    dim: usize,
    labels: Option<Vec<usize>>,
    domain: DomainTag,
    ids: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from a row-major feature buffer. Ids are `0..num_samples`.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Option<Vec<usize>>,
        domain: DomainTag,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("feature dimension must be positive".into()));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::Consistency(format!(
                "feature buffer of length {} is not a multiple of dim {}",
                features.len(),
                dim
            )));
        }
        let num_samples = features.len() / dim;
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature value at sample {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        if let Some(l) = &labels {
            if l.len() != num_samples {
                return Err(Error::Consistency(format!(
                    "{} labels for {} samples",
                    l.len(),
                    num_samples
                )));
            }
        }
        Ok(Self {
            features,
            num_samples,
            dim,
            labels,
            domain,
            ids: (0..num_samples).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.num_samples
    }

    pub fn is_empty(&self) -> bool {
        self.num_samples == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Feature row of sample `id`.
    pub fn row(&self, id: usize) -> &[f64] {
        &self.features[id * self.dim..(id + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    /// Checks that every label lies in `[0, n_classes)`.
    pub fn check_labels(&self, n_classes: usize) -> Result<()> {
        if let Some(labels) = &self.labels {
            if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
                return Err(Error::Data(format!(
                    "label {y} of sample {i} outside [0, {n_classes})"
                )));
            }
        }
        Ok(())
    }

    /// Scales every row to unit Euclidean norm. Zero rows are left unchanged.
    pub fn l2_normalize(&mut self) {
        let dim = self.dim;
        for row in self.features.chunks_exact_mut(dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    /// Drops the labels, returning them.
    pub fn take_labels(&mut self) -> Option<Vec<usize>> {
        self.labels.take()
    }
}

/// True target labels, possibly for only some samples. Only the partitioner
/// (for annotating the reward set) and the final evaluation should read these.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth(Vec<Option<usize>>);

impl GroundTruth {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels.into_iter().map(Some).collect())
    }

    pub fn partial(labels: Vec<Option<usize>>) -> Self {
        Self(labels)
    }

    pub fn label(&self, id: usize) -> Option<usize> {
        self.0[id]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Ids that carry a label.
    pub fn annotated(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|l| (i, l)))
    }

    pub fn check_classes(&self, n_classes: usize) -> Result<()> {
        match self.annotated().find(|&(_, y)| y >= n_classes) {
            Some((i, y)) => Err(Error::Data(format!(
                "target label {y} of sample {i} outside [0, {n_classes})"
            ))),
            None => Ok(()),
        }
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn read_payload(r: &mut impl Read, bytes: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; bytes];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(buf)
}

/// Reads a feature file and, optionally, its label file.
pub fn load_feature_matrix(
    path: &Path,
    labels_path: Option<&Path>,
    domain: DomainTag,
) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, FEATURE_MAGIC)?;
    let num = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    if dim == 0 {
        return Err(Error::Format("feature dimension must be positive".into()));
    }
    let raw = read_payload(&mut r, num * dim * 4)?;
    let features: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let labels = labels_path.map(read_labels).transpose()?;
    if let Some(l) = &labels {
        if l.len() != num {
            return Err(Error::Consistency(format!(
                "label file has {} entries, feature file has {} samples",
                l.len(),
                num
            )));
        }
    }
    Dataset::new(features, dim, labels, domain)
}

fn read_raw_labels(path: &Path) -> Result<Vec<i32>> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, LABEL_MAGIC)?;
    let num = read_u32(&mut r)? as usize;
    let raw = read_payload(&mut r, num * 4)?;
    Ok(raw
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Reads a label file in which every sample must be labeled.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_raw_labels(path)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            usize::try_from(v).map_err(|_| Error::Data(format!("negative label {v} at {i}")))
        })
        .collect()
}

/// Reads a label file where `-1` marks an unannotated sample.
pub fn read_partial_labels(path: &Path) -> Result<GroundTruth> {
    read_raw_labels(path)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| match v {
            -1 => Ok(None),
            v if v >= 0 => Ok(Some(v as usize)),
            v => Err(Error::Data(format!("invalid label {v} at {i}"))),
        })
        .collect::<Result<Vec<_>>>()
        .map(GroundTruth::partial)
}

/// Writes the features as f32. Values that are not representable in f32 are rounded.
pub fn write_feature_matrix(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(data.len() as u32).to_le_bytes())?;
    w.write_all(&(data.dim() as u32).to_le_bytes())?;
    for &v in data.features() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(LABEL_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(labels.len() as u32).to_le_bytes())?;
    for &y in labels {
        let y = i32::try_from(y).map_err(|_| Error::Data(format!("label {y} overflows i32")))?;
        w.write_all(&y.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn default_class_radius() -> f64 {
    4.0
}

/// Gaussian-blob generator for a source/target pair under an affine shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub dim: usize,
    pub samples_per_class_source: usize,
    pub samples_per_class_target: usize,
    /// RMS displacement of the class means under the domain shift.
    pub shift_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Norm of each source class mean.
    #[serde(default = "default_class_radius")]
    pub class_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 5,
            dim: 16,
            samples_per_class_source: 100,
            samples_per_class_target: 100,
            shift_scale: 2.0,
            noise_sigma: 1.0,
            seed: 0,
            class_radius: default_class_radius(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("dim must be at least 2".into()));
        }
        if self.samples_per_class_source == 0 || self.samples_per_class_target == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if !(self.shift_scale >= 0.0 && self.shift_scale.is_finite()) {
            return Err(Error::Config(
                "shift_scale must be finite and nonnegative".into(),
            ));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        if !(self.class_radius > 0.0 && self.class_radius.is_finite()) {
            return Err(Error::Config("class_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Affine map `x -> x + scale * ((R - I) x + offset)` with `R` a plane rotation.
#[derive(Clone, Debug)]
struct DomainShift {
    plane: (usize, usize),
    angle: f64,
    offset: Vec<f64>,
    scale: f64,
}

impl DomainShift {
    fn displacement(&self, x: &[f64]) -> Vec<f64> {
        let (i, j) = self.plane;
        let (s, c) = self.angle.sin_cos();
        let mut d = self.offset.clone();
        d[i] += (c - 1.0) * x[i] - s * x[j];
        d[j] += s * x[i] + (c - 1.0) * x[j];
        d.iter_mut().for_each(|v| *v *= self.scale);
        d
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.displacement(x))
            .map(|(a, b)| a + b)
            .collect()
    }
}

fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

fn draw_blobs(
    rng: &mut impl Rng,
    means: &[Vec<f64>],
    per_class: usize,
    sigma: f64,
) -> (Vec<f64>, Vec<usize>) {
    let dim = means[0].len();
    let mut features = Vec::with_capacity(means.len() * per_class * dim);
    let mut labels = Vec::with_capacity(means.len() * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let z: f64 = rng.sample(StandardNormal);
                // Stored at f32 precision so the in-memory data matches its file form.
                features.push((m + sigma * z) as f32 as f64);
            }
            labels.push(c);
        }
    }
    debug_assert_eq!(features.len(), labels.len() * dim);
    (features, labels)
}

/// Generated source/target pair plus the quarantined target labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub source: Dataset,
    pub target: Dataset,
    pub target_truth: GroundTruth,
    pub source_means: Vec<Vec<f64>>,
    pub target_means: Vec<Vec<f64>>,
}

/// Draws a labeled source domain and an unlabeled, affinely shifted target domain.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let source_means: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| {
            unit_gaussian(&mut rng, cfg.dim)
                .into_iter()
                .map(|v| v * cfg.class_radius)
                .collect()
        })
        .collect();

    let i = rng.random_range(0..cfg.dim);
    let j = (i + rng.random_range(1..cfg.dim)) % cfg.dim;
    let angle = rng.random_range(std::f64::consts::FRAC_PI_6..std::f64::consts::FRAC_PI_3);
    let offset: Vec<f64> = unit_gaussian(&mut rng, cfg.dim)
        .into_iter()
        .map(|v| v * cfg.class_radius)
        .collect();
    let mut shift = DomainShift {
        plane: (i, j),
        angle,
        offset,
        scale: 1.0,
    };
    let rms = (source_means
        .iter()
        .map(|m| shift.displacement(m).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / cfg.n_classes as f64)
        .sqrt();
    shift.scale = if rms > 0.0 {
        cfg.shift_scale / rms
    } else {
        0.0
    };
    let target_means: Vec<Vec<f64>> = source_means.iter().map(|m| shift.apply(m)).collect();

    let (sf, sl) = draw_blobs(
        &mut rng,
        &source_means,
        cfg.samples_per_class_source,
        cfg.noise_sigma,
    );
    let (tf, tl) = draw_blobs(
        &mut rng,
        &target_means,
        cfg.samples_per_class_target,
        cfg.noise_sigma,
    );
    Ok(SynthData {
        source: Dataset::new(sf, cfg.dim, Some(sl), DomainTag::Source)?,
        target: Dataset::new(tf, cfg.dim, None, DomainTag::Target)?,
        target_truth: GroundTruth::new(tl),
        source_means,
        target_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, bytes: &[u8]) {
        std::fs::write(path, bytes).unwrap();
    }

    fn feature_bytes(num: u32, dim: u32, values: &[f32]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(FEATURE_MAGIC);
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&num.to_le_bytes());
        b.extend_from_slice(&dim.to_le_bytes());
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn loads_header_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_raw(&p, &feature_bytes(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let d = load_feature_matrix(&p, None, DomainTag::Source).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.row(2), &[5.0, 6.0]);
        assert_eq!(d.ids(), &[0, 1, 2]);
    }

    #[test]
    fn label_length_mismatch_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let l = dir.path().join("l.bin");
        write_raw(&p, &feature_bytes(3, 2, &[0.0; 6]));
        write_labels(&l, &[0, 1]).unwrap();
        let err = load_feature_matrix(&p, Some(&l), DomainTag::Source).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)), "{err}");
    }

    #[test]
    fn nan_payload_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        write_raw(&p, &feature_bytes(2, 2, &[0.0, 1.0, f32::NAN, 2.0]));
        let err = load_feature_matrix(&p, None, DomainTag::Target).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let mut bytes = feature_bytes(1, 2, &[0.0, 1.0]);
        bytes[0] = b'X';
        write_raw(&p, &bytes);
        assert!(matches!(
            load_feature_matrix(&p, None, DomainTag::Source),
            Err(Error::Format(_))
        ));
        let bytes = feature_bytes(2, 2, &[0.0, 1.0]);
        write_raw(&p, &bytes);
        assert!(matches!(
            load_feature_matrix(&p, None, DomainTag::Source),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn negative_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let l = dir.path().join("l.bin");
        let mut b = Vec::new();
        b.extend_from_slice(LABEL_MAGIC);
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&(-3i32).to_le_bytes());
        write_raw(&l, &b);
        assert!(matches!(read_labels(&l), Err(Error::Data(_))));
        assert!(matches!(read_partial_labels(&l), Err(Error::Data(_))));
    }

    #[test]
    fn partial_labels_mark_missing() {
        let dir = tempfile::tempdir().unwrap();
        let l = dir.path().join("l.bin");
        let mut b = Vec::new();
        b.extend_from_slice(LABEL_MAGIC);
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&(-1i32).to_le_bytes());
        b.extend_from_slice(&4i32.to_le_bytes());
        write_raw(&l, &b);
        let t = read_partial_labels(&l).unwrap();
        assert_eq!(t.label(0), None);
        assert_eq!(t.annotated().collect::<Vec<_>>(), vec![(1, 4)]);
        assert!(t.check_classes(4).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(
            synth_generate(&cfg).unwrap().target,
            synth_generate(&other).unwrap().target
        );
    }

    #[test]
    fn zero_shift_keeps_means() {
        let cfg = SynthConfig {
            shift_scale: 0.0,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        assert_eq!(data.source_means, data.target_means);
    }

    #[test]
    fn shift_scale_is_rms_mean_displacement() {
        let cfg = SynthConfig::default();
        let data = synth_generate(&cfg).unwrap();
        let ms: f64 = data
            .source_means
            .iter()
            .zip(&data.target_means)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
            .sum::<f64>()
            / cfg.n_classes as f64;
        assert!((ms.sqrt() - cfg.shift_scale).abs() < 1e-12);
    }

    #[test]
    fn synth_rejects_bad_config() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn l2_normalize_rows() {
        let mut d = Dataset::new(vec![3.0, 4.0, 0.0, 0.0], 2, None, DomainTag::Source).unwrap();
        d.l2_normalize();
        assert_eq!(d.row(0), &[0.6, 0.8]);
        assert_eq!(d.row(1), &[0.0, 0.0]);
    }
}
