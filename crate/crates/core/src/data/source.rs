//! Labeled image sources and the synthetic dataset.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{decode_image, encode_ppm};
use super::index::{DatasetIndex, Split};
use super::mix_seed;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Random access to labeled `(3, H, W)` images in `[0, 1]`.
pub trait ImageSource: Sync {
    fn len(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn label(&self, i: usize) -> usize;
    fn load(&self, i: usize) -> Result<Tensor>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

/// Image files of one or more splits of an index.
#[derive(Clone, Debug)]
pub struct FileSource {
    paths: Vec<PathBuf>,
    labels: Vec<usize>,
    classes: usize,
}

impl FileSource {
    pub fn from_index(index: &DatasetIndex, splits: &[Split]) -> FileSource {
        let (paths, labels) = index
            .records
            .iter()
            .filter(|r| splits.contains(&r.split))
            .map(|r| (r.path.clone(), r.class))
            .unzip();
        FileSource { paths, labels, classes: index.num_classes() }
    }

    pub fn path(&self, i: usize) -> &Path {
        &self.paths[i]
    }
}

impl ImageSource for FileSource {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn load(&self, i: usize) -> Result<Tensor> {
        decode_image(&self.paths[i])
    }
}

/// Deterministic class-colored structured noise: sample `i` has class `i % classes`.
///
/// Every pixel is the class color modulated by a random low-frequency
/// sinusoidal pattern plus small white noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSource {
    pub samples: usize,
    pub classes: usize,
    pub size: (usize, usize),
    pub seed: u64,
}

/// Fully saturated-ish colors evenly spaced in hue.
pub fn class_color(class: usize, classes: usize) -> [f32; 3] {
    let h = class as f32 / classes as f32 * 6.0;
    let (s, v) = (0.75f32, 0.85f32);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

impl SyntheticSource {
    pub fn new(samples: usize, classes: usize, size: (usize, usize), seed: u64) -> SyntheticSource {
        SyntheticSource { samples, classes, size, seed }
    }

    pub fn generate(&self, i: usize) -> Tensor {
        let (h, w) = self.size;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, i as u64));
        let color = class_color(i % self.classes, self.classes);
        let waves: Vec<(f32, f32, f32)> = (0..3)
            .map(|_| {
                let angle = rng.random_range(0.0..std::f32::consts::PI);
                let freq = rng.random_range(1.0..4.0) * std::f32::consts::TAU;
                let phase = rng.random_range(0.0..std::f32::consts::TAU);
                (angle.cos() * freq, angle.sin() * freq, phase)
            })
            .collect();
        let plane = h * w;
        let mut v = vec![0f32; 3 * plane];
        for y in 0..h {
            let fy = y as f32 / h as f32;
            for x in 0..w {
                let fx = x as f32 / w as f32;
                let s: f32 = waves.iter().map(|&(ky, kx, ph)| (ky * fy + kx * fx + ph).sin()).sum::<f32>() / 3.0;
                for (ch, &col) in color.iter().enumerate() {
                    let noise = rng.random_range(-0.08f32..0.08);
                    v[ch * plane + y * w + x] = (col * (0.7 + 0.3 * s) + noise).clamp(0.0, 1.0);
                }
            }
        }
        Tensor::from_vec(&[3, h, w], v).expect("shape matches")
    }

    /// Writes `root/class_<k>/<i>.ppm`, or `root/<split>/class_<k>/<i>.ppm` when
    /// `splits` gives per-split sample counts.
    pub fn write_tree(&self, root: &Path, splits: Option<&[(Split, usize)]>) -> Result<()> {
        let name = |c: usize| format!("class_{c}");
        let write = |dir: &Path, i: usize| -> Result<()> {
            let d = dir.join(name(self.label(i)));
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            let p = d.join(format!("{i:05}.ppm"));
            std::fs::write(&p, encode_ppm(&self.generate(i))?).map_err(|e| Error::io(&p, e))
        };
        match splits {
            None => (0..self.samples).try_for_each(|i| write(root, i)),
            Some(parts) => {
                let mut next = 0;
                for &(split, n) in parts {
                    let dir = root.join(split.name());
                    for i in next..next + n {
                        write(&dir, i)?;
                    }
                    next += n;
                }
                Ok(())
            }
        }
    }
}

impl ImageSource for SyntheticSource {
    fn len(&self) -> usize {
        self.samples
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn label(&self, i: usize) -> usize {
        i % self.classes
    }

    fn load(&self, i: usize) -> Result<Tensor> {
        if i >= self.samples {
            return Err(Error::Invalid(format!("sample {i} out of range")));
        }
        Ok(self.generate(i))
    }
}
