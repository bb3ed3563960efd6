//! Dataset indexing and deterministic train/val/test splits.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// File extensions picked up by indexing.
pub const IMAGE_EXTENSIONS: [&str; 5] = ["ppm", "jpg", "jpeg", "png", "tktn"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub path: PathBuf,
    pub class: usize,
    pub split: Split,
}

/// Per-class ratio split of a flat `root/<class>/*` tree.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioSplit {
    /// Percentage of each class assigned to train.
    pub train_pct: u32,
    /// Percentage used instead for the designated normal class.
    pub normal_train_pct: u32,
    pub normal_class: String,
    pub case_sensitive: bool,
}

impl Default for RatioSplit {
    fn default() -> Self {
        RatioSplit {
            train_pct: 70,
            normal_train_pct: 65,
            normal_class: "normal".into(),
            case_sensitive: false,
        }
    }
}

impl RatioSplit {
    fn is_normal(&self, class: &str) -> bool {
        if self.case_sensitive {
            class == self.normal_class
        } else {
            class.eq_ignore_ascii_case(&self.normal_class)
        }
    }

    pub fn train_pct_for(&self, class: &str) -> u32 {
        if self.is_normal(class) {
            self.normal_train_pct
        } else {
            self.train_pct
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitMode {
    /// `root/<class>/*`, split per class by ratio.
    Ratio(RatioSplit),
    /// `root/{train,val,test}/<class>/*`, taken verbatim.
    Predefined,
}

impl SplitMode {
    pub fn parse(s: &str) -> Result<SplitMode> {
        match s {
            "aider" | "ratio" => Ok(SplitMode::Ratio(RatioSplit::default())),
            "aiderv2" | "predefined" => Ok(SplitMode::Predefined),
            _ => Err(Error::Invalid(format!("unknown split mode {s:?} (expected aider or aiderv2)"))),
        }
    }
}

/// Train count for `n` files at `pct` percent: `floor(n * pct / 100)`; the rest is test.
pub fn split_counts(n: usize, pct: u32) -> (usize, usize) {
    let train = n * pct as usize / 100;
    (train, n - train)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub classes: Vec<String>,
    pub records: Vec<Record>,
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn class_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    Ok(list_dir(dir)?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?.to_string();
            (!name.starts_with('.')).then_some((name, p))
        })
        .collect())
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(list_dir(dir)?
        .into_iter()
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect())
}

fn class_seed(seed: u64, class: usize) -> u64 {
    seed ^ (class as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Indexes a dataset tree; see [`SplitMode`] for the two layouts.
pub fn index_dataset(root: &Path, mode: &SplitMode, seed: u64) -> Result<DatasetIndex> {
    match mode {
        SplitMode::Ratio(r) => index_ratio(root, r, seed),
        SplitMode::Predefined => index_predefined(root),
    }
}

fn index_ratio(root: &Path, r: &RatioSplit, seed: u64) -> Result<DatasetIndex> {
    let dirs = class_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::Empty(format!("no class directories under {}", root.display())));
    }
    let mut classes = Vec::new();
    let mut records = Vec::new();
    for (c, (name, dir)) in dirs.into_iter().enumerate() {
        let mut files = image_files(&dir)?;
        if files.is_empty() {
            return Err(Error::Empty(format!("class directory {} has no images", dir.display())));
        }
        files.shuffle(&mut ChaCha8Rng::seed_from_u64(class_seed(seed, c)));
        let (train, _) = split_counts(files.len(), r.train_pct_for(&name));
        for (i, path) in files.into_iter().enumerate() {
            let split = if i < train { Split::Train } else { Split::Test };
            records.push(Record { path, class: c, split });
        }
        classes.push(name);
    }
    Ok(DatasetIndex { classes, records })
}

fn index_predefined(root: &Path) -> Result<DatasetIndex> {
    let mut per_split = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for split in Split::ALL {
        let dir = root.join(split.name());
        if !dir.is_dir() {
            continue;
        }
        let dirs = class_dirs(&dir)?;
        names.extend(dirs.iter().map(|(n, _)| n.clone()));
        per_split.push((split, dirs));
    }
    if per_split.is_empty() {
        return Err(Error::Empty(format!("no train/val/test directories under {}", root.display())));
    }
    names.sort();
    names.dedup();
    let mut records = Vec::new();
    for (split, dirs) in per_split {
        for (name, dir) in dirs {
            let class = names.binary_search(&name).expect("name collected above");
            let files = image_files(&dir)?;
            if files.is_empty() {
                return Err(Error::Empty(format!("class directory {} has no images", dir.display())));
            }
            records.extend(files.into_iter().map(|path| Record { path, class, split }));
        }
    }
    Ok(DatasetIndex { classes: names, records })
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    path: String,
    class: String,
    split: Split,
}

impl DatasetIndex {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.split(split).next().is_some()
    }

    /// `counts[class][split]` in `Split::ALL` order.
    pub fn counts(&self) -> Vec<[usize; 3]> {
        let mut out = vec![[0; 3]; self.classes.len()];
        for r in &self.records {
            out[r.class][r.split as usize] += 1;
        }
        out
    }

    pub fn split_totals(&self) -> [usize; 3] {
        self.counts().iter().fold([0; 3], |a, c| [a[0] + c[0], a[1] + c[1], a[2] + c[2]])
    }

    /// CSV `path,class,split` with class names.
    pub fn write_manifest<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(ManifestRow {
                path: r.path.to_string_lossy().into_owned(),
                class: self.classes[r.class].clone(),
                split: r.split,
            })
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a manifest; class ids follow sorted class names.
    pub fn read_manifest<R: std::io::Read>(r: R) -> Result<DatasetIndex> {
        let mut rows = Vec::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: ManifestRow = row.map_err(|e| Error::Format(format!("manifest: {e}")))?;
            rows.push(row);
        }
        let mut classes: Vec<String> = rows.iter().map(|r| r.class.clone()).collect();
        classes.sort();
        classes.dedup();
        let records = rows
            .into_iter()
            .map(|row| Record {
                class: classes.binary_search(&row.class).expect("collected above"),
                path: PathBuf::from(row.path),
                split: row.split,
            })
            .collect();
        Ok(DatasetIndex { classes, records })
    }
}
