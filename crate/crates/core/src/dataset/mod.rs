//! Class-folder ingestion, seeded splitting and cached batching.

mod image;

pub use image::{decode_image, resize, save_ppm, write_ppm};

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub image_path: PathBuf,
    pub class_index: usize,
    pub class_name: String,
}

/// Samples plus the sorted class roster. `warnings` lists non-fatal findings
/// such as empty class folders.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    pub samples: Vec<LabeledSample>,
    pub classes: Vec<String>,
    pub warnings: Vec<String>,
}

fn is_hidden(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with('.'))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in
        std::fs::read_dir(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?
    {
        let path = entry?.path();
        if !is_hidden(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Index `<root>/<class_name>/<files>`. Classes are sorted lexicographically;
/// files within a class are sorted by path.
pub fn scan_dataset(root: &Path) -> Result<DatasetIndex> {
    let mut index = DatasetIndex::default();
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no class directories",
            root.display()
        )));
    }
    for dir in class_dirs {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Data(format!("non UTF-8 class folder {}", dir.display())))?
            .to_string();
        let files: Vec<PathBuf> = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| p.is_file())
            .collect();
        if files.is_empty() {
            index.warnings.push(format!("class {name:?} has no images"));
        }
        let class_index = index.classes.len();
        index
            .samples
            .extend(files.into_iter().map(|image_path| LabeledSample {
                image_path,
                class_index,
                class_name: name.clone(),
            }));
        index.classes.push(name);
    }
    Ok(index)
}

/// Read a manifest of `path<TAB>class` lines. Relative paths resolve against
/// the manifest's directory; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<DatasetIndex> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (p, class) = line.split_once('\t').ok_or_else(|| {
            Error::Data(format!(
                "{}:{}: expected path<TAB>class",
                path.display(),
                n + 1
            ))
        })?;
        if class.is_empty() {
            return Err(Error::Data(format!(
                "{}:{}: empty class name",
                path.display(),
                n + 1
            )));
        }
        rows.push((base.join(p), class.to_string()));
    }
    let classes: Vec<String> = rows
        .iter()
        .map(|(_, c)| c.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.is_empty() {
        return Err(Error::Data(format!(
            "{}: manifest lists no samples",
            path.display()
        )));
    }
    let samples = rows
        .into_iter()
        .map(|(image_path, class_name)| LabeledSample {
            image_path,
            class_index: classes
                .binary_search(&class_name)
                .expect("class collected above"),
            class_name,
        })
        .collect();
    Ok(DatasetIndex {
        samples,
        classes,
        warnings: Vec::new(),
    })
}

fn default_fraction() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            seed: 0,
            shuffle: true,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// `ceil(fraction * n)`, kept inside `[1, n - 1]` so neither side is empty.
/// A tiny tolerance stops products like `0.7 * 10` from rounding up twice.
pub fn train_size(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    raw.clamp(1, n.saturating_sub(1).max(1))
}

/// Seeded shuffle then a ceil-sized train prefix; the rest is validation.
pub fn split<S: Clone>(samples: &[S], cfg: &SplitConfig) -> Result<(Vec<S>, Vec<S>)> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(Error::Data(format!(
            "split needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if cfg.shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    }
    let k = train_size(samples.len(), cfg.train_fraction);
    let train = order[..k].iter().map(|&i| samples[i].clone()).collect();
    let val = order[k..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, val))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub drop_last: bool,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for BatchPlan {
    fn default() -> Self {
        BatchPlan {
            batch_size: 32,
            drop_last: false,
            shuffle: true,
            seed: 0,
        }
    }
}

impl BatchPlan {
    /// Sample order for one epoch. Each epoch draws from its own ChaCha
    /// stream, so order depends only on `(seed, epoch)`.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if self.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }
        order
    }

    pub fn batch_sizes(&self, n: usize) -> Vec<usize> {
        let b = self.batch_size.max(1);
        let mut sizes = vec![b; n / b];
        if !n.is_multiple_of(b) && !self.drop_last {
            sizes.push(n % b);
        }
        sizes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Positions of the batch members in the loader's sample list.
    pub indices: Vec<usize>,
}

/// Decodes and resizes samples on demand, optionally caching the result so
/// later epochs touch no files.
pub struct Loader {
    samples: Vec<LabeledSample>,
    size: (usize, usize),
    cache: Option<Vec<Option<Tensor<f32>>>>,
    reads: usize,
}

impl Loader {
    pub fn new(samples: Vec<LabeledSample>, size: (usize, usize), cache: bool) -> Self {
        let cache = cache.then(|| vec![None; samples.len()]);
        Loader {
            samples,
            size,
            cache,
            reads: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class_index).collect()
    }

    /// Number of image files decoded so far.
    pub fn reads(&self) -> usize {
        self.reads
    }

    /// Decoded, resized `[h, w, 3]` image for sample `i`.
    pub fn image(&mut self, i: usize) -> Result<Tensor<f32>> {
        if let Some(Some(t)) = self.cache.as_ref().map(|c| &c[i]) {
            return Ok(t.clone());
        }
        self.reads += 1;
        let img = resize(&decode_image(&self.samples[i].image_path)?, self.size)?;
        if let Some(cache) = &mut self.cache {
            cache[i] = Some(img.clone());
        }
        Ok(img)
    }

    /// Assemble the batch for the given sample positions.
    pub fn batch(&mut self, indices: &[usize]) -> Result<Batch> {
        let (h, w) = self.size;
        let mut data = Vec::with_capacity(indices.len() * h * w * 3);
        for &i in indices {
            data.extend_from_slice(self.image(i)?.data());
        }
        Ok(Batch {
            images: Tensor::new(vec![indices.len(), h, w, 3], data)?,
            labels: indices
                .iter()
                .map(|&i| self.samples[i].class_index)
                .collect(),
            indices: indices.to_vec(),
        })
    }

    /// Batches of one epoch in delivery order. Batches are produced lazily.
    pub fn batches<'a>(&'a mut self, plan: &BatchPlan, epoch: usize) -> Batches<'a> {
        let order = plan.epoch_order(self.len(), epoch);
        let sizes = plan.batch_sizes(self.len());
        Batches {
            loader: self,
            order,
            sizes,
            next: 0,
            pos: 0,
        }
    }
}

pub struct Batches<'a> {
    loader: &'a mut Loader,
    order: Vec<usize>,
    sizes: Vec<usize>,
    next: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let size = *self.sizes.get(self.next)?;
        self.next += 1;
        let idx = &self.order[self.pos..self.pos + size];
        self.pos += size;
        Some(self.loader.batch(idx))
    }
}
