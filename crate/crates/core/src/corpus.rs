//! Synthetic 10-family binary corpus and the three featurizers.
//!
//! Each family draws a byte distribution once from a symmetric Dirichlet;
//! its files are i.i.d. multinomial samples from that distribution. Low
//! concentration makes families nearly disjoint in histogram space, high
//! concentration pushes everything toward uniform. One family pair shares a
//! base distribution with a small blend of fresh noise, so the pair stays
//! systematically confusable the way real sibling families are.
//!
//! Everything is deterministic from `CorpusSpec::seed`: family sub-seeds are
//! drawn up front, so per-family generation order (or parallelism) cannot
//! change the output.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;

pub const FAMILY_COUNT: usize = 10;
/// Floor on file size so the default 64x64 byte-image never pads.
pub const MIN_FILE_BYTES: u64 = 4096;

#[derive(Debug)]
pub enum CorpusError {
    Io(io::Error),
    InvalidSpec(String),
    EmptyInput,
    BadFraction(f64),
    ClassTooSmall { class: usize, count: usize },
    BadManifest(String),
    BadDataset(String),
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "i/o error: {e}"),
            Self::InvalidSpec(msg) => write!(f, "invalid corpus spec: {msg}"),
            Self::EmptyInput => write!(f, "empty input"),
            Self::BadFraction(v) => write!(f, "test fraction {v} outside (0, 1)"),
            Self::ClassTooSmall { class, count } => {
                write!(f, "class {class} has {count} samples, need at least 2")
            }
            Self::BadManifest(msg) => write!(f, "bad manifest: {msg}"),
            Self::BadDataset(msg) => write!(f, "bad dataset: {msg}"),
        }
    }
}

impl std::error::Error for CorpusError {}

impl From<io::Error> for CorpusError {
    fn from(e: io::Error) -> Self {
        CorpusError::Io(e)
    }
}

/// Ties a family's byte distribution to another family's, mixing in a
/// `blend` fraction of its own Dirichlet draw.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Similarity {
    pub base: String,
    pub blend: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FamilySpec {
    pub name: String,
    pub sample_count: u32,
    pub dirichlet_concentration: f64,
    #[serde(default)]
    pub similar_to: Option<Similarity>,
}

/// Generation parameters for the synthetic corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusSpec {
    pub families: Vec<FamilySpec>,
    /// Inclusive per-file size range in bytes.
    pub size_range: (u64, u64),
    pub seed: u64,
}

/// Default family table: one tenth of the published 10-family sample counts
/// (round-half-even), 1535 files total. The `vbinject` family is a blended
/// sibling of `vb`.
pub const DEFAULT_FAMILIES: [(&str, u32); FAMILY_COUNT] = [
    ("adload", 122),
    ("bho", 141),
    ("ceeinject", 108),
    ("onlinegames", 151),
    ("renos", 157),
    ("startpage", 135),
    ("vb", 111),
    ("vbinject", 269),
    ("vobfus", 111),
    ("winwebsec", 230),
];

/// Calibrated generation constants; see the pipeline tests for the
/// calibration evidence.
pub const DEFAULT_CONCENTRATION: f64 = 4.0;
pub const DEFAULT_BLEND: f64 = 0.22;
pub const DEFAULT_SIZE_RANGE: (u64, u64) = (4096, 12288);

impl CorpusSpec {
    pub fn default_with_seed(seed: u64) -> Self {
        let families = DEFAULT_FAMILIES
            .iter()
            .map(|&(name, sample_count)| FamilySpec {
                name: name.to_string(),
                sample_count,
                dirichlet_concentration: DEFAULT_CONCENTRATION,
                similar_to: (name == "vbinject").then(|| Similarity {
                    base: "vb".to_string(),
                    blend: DEFAULT_BLEND,
                }),
            })
            .collect();
        CorpusSpec {
            families,
            size_range: DEFAULT_SIZE_RANGE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.families.len() != FAMILY_COUNT {
            return Err(CorpusError::InvalidSpec(format!(
                "exactly {FAMILY_COUNT} families required, got {}",
                self.families.len()
            )));
        }
        for f in &self.families {
            if f.name.is_empty() || f.name.contains(['/', ',', '\n']) {
                return Err(CorpusError::InvalidSpec(format!(
                    "family name {:?} must be nonempty and path/CSV safe",
                    f.name
                )));
            }
            if f.sample_count < 1 {
                return Err(CorpusError::InvalidSpec(format!(
                    "family {:?} needs at least one sample",
                    f.name
                )));
            }
            if !(f.dirichlet_concentration > 0.0) || !f.dirichlet_concentration.is_finite() {
                return Err(CorpusError::InvalidSpec(format!(
                    "family {:?} concentration must be a positive real",
                    f.name
                )));
            }
            if let Some(sim) = &f.similar_to {
                let base = self
                    .families
                    .iter()
                    .find(|b| b.name == sim.base)
                    .ok_or_else(|| {
                        CorpusError::InvalidSpec(format!(
                            "family {:?} references unknown base {:?}",
                            f.name, sim.base
                        ))
                    })?;
                if base.similar_to.is_some() || sim.base == f.name {
                    return Err(CorpusError::InvalidSpec(format!(
                        "similarity base {:?} must itself be a plain family",
                        sim.base
                    )));
                }
                if !(0.0..=1.0).contains(&sim.blend) {
                    return Err(CorpusError::InvalidSpec(format!(
                        "blend {} outside [0, 1]",
                        sim.blend
                    )));
                }
            }
        }
        if self.families.len()
            != self
                .families
                .iter()
                .map(|f| f.name.as_str())
                .collect::<std::collections::BTreeSet<_>>()
                .len()
        {
            return Err(CorpusError::InvalidSpec("duplicate family names".into()));
        }
        let (lo, hi) = self.size_range;
        if lo < MIN_FILE_BYTES || hi < lo {
            return Err(CorpusError::InvalidSpec(format!(
                "size range [{lo}, {hi}] must satisfy {MIN_FILE_BYTES} <= min <= max"
            )));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> u64 {
        self.families.iter().map(|f| f.sample_count as u64).sum()
    }
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self::default_with_seed(42)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the corpus root, `<family>/<index>.bin`.
    pub path: String,
    pub family: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn family_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for e in &self.entries {
            if !names.contains(&e.family) {
                names.push(e.family.clone());
            }
        }
        names
    }
}

fn dirichlet_draw(rng: &mut SplitMix64, concentration: f64) -> [f64; 256] {
    let mut probs = [0.0f64; 256];
    let mut sum = 0.0;
    for p in probs.iter_mut() {
        *p = rng.next_gamma(concentration);
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    probs
}

fn cumulative(probs: &[f64; 256]) -> [f64; 256] {
    let mut cum = [0.0f64; 256];
    let mut acc = 0.0;
    for (c, p) in cum.iter_mut().zip(probs) {
        acc += p;
        *c = acc;
    }
    cum[255] = f64::INFINITY; // absorb rounding so the last bucket always catches
    cum
}

fn sample_file(rng: &mut SplitMix64, cum: &[f64; 256], size_range: (u64, u64)) -> Vec<u8> {
    let (lo, hi) = size_range;
    let size = lo + rng.next_below(hi - lo + 1);
    let mut bytes = Vec::with_capacity(size as usize);
    for _ in 0..size {
        let u = rng.next_f64();
        let idx = cum.partition_point(|&c| c <= u);
        bytes.push(idx.min(255) as u8);
    }
    bytes
}

/// Generates the corpus directory (`<out>/<family>/<index>.bin`) plus
/// `manifest.csv`, deterministically from the spec seed.
pub fn gen_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<CorpusManifest, CorpusError> {
    spec.validate()?;
    let mut seed_rng = SplitMix64::new(spec.seed);
    let sub_seeds: Vec<u64> = spec.families.iter().map(|_| seed_rng.next_u64()).collect();

    // Base distributions first so blended families can reference them
    // regardless of list position.
    let mut base_probs: Vec<Option<[f64; 256]>> = vec![None; spec.families.len()];
    for (i, fam) in spec.families.iter().enumerate() {
        if fam.similar_to.is_none() {
            let mut rng = SplitMix64::new(sub_seeds[i]);
            base_probs[i] = Some(dirichlet_draw(&mut rng, fam.dirichlet_concentration));
        }
    }

    let mut manifest = CorpusManifest::default();
    for (i, fam) in spec.families.iter().enumerate() {
        let mut rng = SplitMix64::new(sub_seeds[i]);
        let own = dirichlet_draw(&mut rng, fam.dirichlet_concentration);
        let probs = match &fam.similar_to {
            None => own,
            Some(sim) => {
                let base_idx = spec
                    .families
                    .iter()
                    .position(|b| b.name == sim.base)
                    .expect("validated");
                let base = base_probs[base_idx].expect("bases drawn first");
                let mut mixed = [0.0f64; 256];
                for k in 0..256 {
                    mixed[k] = (1.0 - sim.blend) * base[k] + sim.blend * own[k];
                }
                mixed
            }
        };
        let cum = cumulative(&probs);
        let family_dir = out_dir.join(&fam.name);
        fs::create_dir_all(&family_dir)?;
        for index in 0..fam.sample_count {
            let bytes = sample_file(&mut rng, &cum, spec.size_range);
            let rel = format!("{}/{}.bin", fam.name, index);
            fs::write(out_dir.join(&rel), &bytes)?;
            manifest.entries.push(ManifestEntry {
                path: rel,
                family: fam.name.clone(),
                bytes: bytes.len() as u64,
            });
        }
    }
    write_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &CorpusManifest, path: &Path) -> Result<(), CorpusError> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "path,family,bytes")?;
    for e in &manifest.entries {
        writeln!(file, "{},{},{}", e.path, e.family, e.bytes)?;
    }
    Ok(())
}

/// Reads `manifest.csv` from a corpus directory; `#` lines are comments.
pub fn read_manifest(dir: &Path) -> Result<CorpusManifest, CorpusError> {
    let text = fs::read_to_string(dir.join("manifest.csv"))?;
    let mut entries = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != "path,family,bytes" {
                return Err(CorpusError::BadManifest(format!(
                    "unexpected header {line:?}"
                )));
            }
            saw_header = true;
            continue;
        }
        let mut parts = line.split(',');
        let (path, family, bytes) = (parts.next(), parts.next(), parts.next());
        match (path, family, bytes, parts.next()) {
            (Some(p), Some(f), Some(b), None) => entries.push(ManifestEntry {
                path: p.to_string(),
                family: f.to_string(),
                bytes: b
                    .parse()
                    .map_err(|_| CorpusError::BadManifest(format!("bad byte count in {line:?}")))?,
            }),
            _ => return Err(CorpusError::BadManifest(format!("bad row {line:?}"))),
        }
    }
    if !saw_header {
        return Err(CorpusError::BadManifest("missing header".into()));
    }
    Ok(CorpusManifest { entries })
}

/// Relative byte histogram: entry `i` is `count(byte == i) / len`.
pub fn byte_histogram(bytes: &[u8]) -> Result<Vec<f64>, CorpusError> {
    if bytes.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut counts = [0u64; 256];
    for &b in bytes {
        counts[b as usize] += 1;
    }
    let len = bytes.len() as f64;
    Ok(counts.iter().map(|&c| c as f64 / len).collect())
}

/// First `w*h` bytes as a row-major `h x w` matrix scaled into `[0, 1]`,
/// zero-padded when the input is short.
pub fn byte_image(bytes: &[u8], w: usize, h: usize) -> Array2<f64> {
    assert!(w >= 1 && h >= 1, "image dims must be positive");
    let mut image = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            if let Some(&b) = bytes.get(r * w + c) {
                image[(r, c)] = b as f64 / 255.0;
            }
        }
    }
    image
}

/// First `n` bytes scaled into `[0, 1]`, zero-padded when short.
pub fn byte_sequence(bytes: &[u8], n: usize) -> Vec<f64> {
    assert!(n >= 1, "sequence length must be positive");
    (0..n)
        .map(|i| bytes.get(i).map_or(0.0, |&b| b as f64 / 255.0))
        .collect()
}

/// The three feature extractors behind one handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Featurizer {
    Histogram,
    Image { width: usize, height: usize },
    Sequence { len: usize },
}

impl Featurizer {
    /// CLI spelling: `hist`, `image` (64x64), or `seq` (length 300).
    pub fn parse(spec: &str) -> Result<Self, CorpusError> {
        match spec {
            "hist" => Ok(Featurizer::Histogram),
            "image" => Ok(Featurizer::Image {
                width: 64,
                height: 64,
            }),
            "seq" => Ok(Featurizer::Sequence { len: 300 }),
            other => Err(CorpusError::BadDataset(format!(
                "unknown featurizer {other:?} (expected hist, image, or seq)"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Featurizer::Histogram => 256,
            Featurizer::Image { width, height } => width * height,
            Featurizer::Sequence { len } => *len,
        }
    }

    pub fn features(&self, bytes: &[u8]) -> Result<Vec<f64>, CorpusError> {
        match self {
            Featurizer::Histogram => byte_histogram(bytes),
            Featurizer::Image { width, height } => Ok(byte_image(bytes, *width, *height)
                .into_raw_vec_and_offset()
                .0),
            Featurizer::Sequence { len } => Ok(byte_sequence(bytes, *len)),
        }
    }
}

/// Feature matrix plus labels for the 10-class problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self, CorpusError> {
        if features.nrows() != labels.len() {
            return Err(CorpusError::BadDataset(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if class_names.len() != FAMILY_COUNT {
            return Err(CorpusError::BadDataset(format!(
                "{} class names, expected {FAMILY_COUNT}",
                class_names.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= FAMILY_COUNT) {
            return Err(CorpusError::BadDataset(format!(
                "label {bad} outside [0, {}]",
                FAMILY_COUNT - 1
            )));
        }
        Ok(Dataset {
            features,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    fn take_rows(&self, rows: &[usize]) -> Dataset {
        let mut features = Array2::zeros((rows.len(), self.feature_dim()));
        let mut labels = Vec::with_capacity(rows.len());
        for (out_r, &r) in rows.iter().enumerate() {
            features.row_mut(out_r).assign(&self.features.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            features,
            labels,
            class_names: self.class_names.clone(),
        }
    }
}

/// Featurizes every manifest entry of a generated corpus. Labels follow the
/// manifest's family order of first appearance.
pub fn featurize_corpus(dir: &Path, featurizer: Featurizer) -> Result<Dataset, CorpusError> {
    let manifest = read_manifest(dir)?;
    let class_names = manifest.family_names();
    if class_names.len() != FAMILY_COUNT {
        return Err(CorpusError::BadManifest(format!(
            "{} families in manifest, expected {FAMILY_COUNT}",
            class_names.len()
        )));
    }
    let mut features = Array2::zeros((manifest.entries.len(), featurizer.dim()));
    let mut labels = Vec::with_capacity(manifest.entries.len());
    for (row, entry) in manifest.entries.iter().enumerate() {
        let bytes = fs::read(dir.join(&entry.path))?;
        let feats = featurizer.features(&bytes)?;
        for (col, v) in feats.into_iter().enumerate() {
            features[(row, col)] = v;
        }
        let label = class_names
            .iter()
            .position(|n| n == &entry.family)
            .expect("family taken from the same manifest");
        labels.push(label);
    }
    Dataset::new(features, labels, class_names)
}

/// Deterministic train/test split. Stratified mode preserves per-class
/// proportions within one sample and requires every class to have at least
/// two samples.
pub fn split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Dataset, Dataset), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::BadFraction(test_fraction));
    }
    let mut rng = SplitMix64::new(seed);
    let mut test_rows = Vec::new();
    let mut train_rows = Vec::new();
    if stratified {
        for class in 0..FAMILY_COUNT {
            let mut rows: Vec<usize> = (0..dataset.len())
                .filter(|&i| dataset.labels[i] == class)
                .collect();
            if rows.is_empty() {
                continue;
            }
            if rows.len() < 2 {
                return Err(CorpusError::ClassTooSmall {
                    class,
                    count: rows.len(),
                });
            }
            rng.shuffle(&mut rows);
            let want = (test_fraction * rows.len() as f64 + 0.5).floor() as usize;
            let take = want.clamp(1, rows.len() - 1);
            test_rows.extend_from_slice(&rows[..take]);
            train_rows.extend_from_slice(&rows[take..]);
        }
    } else {
        let mut rows: Vec<usize> = (0..dataset.len()).collect();
        if rows.len() < 2 {
            return Err(CorpusError::BadDataset(
                "need at least 2 samples to split".into(),
            ));
        }
        rng.shuffle(&mut rows);
        let want = (test_fraction * rows.len() as f64 + 0.5).floor() as usize;
        let take = want.clamp(1, rows.len() - 1);
        test_rows.extend_from_slice(&rows[..take]);
        train_rows.extend_from_slice(&rows[take..]);
    }
    // Row order within each side follows the original dataset; the shuffle
    // only decides membership.
    test_rows.sort_unstable();
    train_rows.sort_unstable();
    Ok((dataset.take_rows(&train_rows), dataset.take_rows(&test_rows)))
}
