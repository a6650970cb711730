//! Synthetic class-structured images.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{blob_name, decode_f32, encode_f32, read_manifest, resolve_blob, write_manifest};
use crate::rng::{below, stream, unit_f32, Rng};
use crate::tensor::{ImageTensor, Shape};

pub const IMAGE_SHAPE: Shape = Shape::new(8, 8, 1);
/// Fraction of a generated dataset tagged as training data.
pub const TRAIN_FRACTION: f64 = 0.8;
pub const MAX_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled images; the first `num_train` are the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub images: Vec<ImageTensor<f32>>,
    pub labels: Vec<usize>,
    pub num_train: usize,
    pub classes: usize,
    pub seed: u64,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn split(&self, i: usize) -> Split {
        if i < self.num_train {
            Split::Train
        } else {
            Split::Test
        }
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.num_train
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.num_train..self.len()
    }
}

/// Class patterns: horizontal bar, vertical bar, diagonal stroke, square blob.
fn draw(rng: &mut Rng, class: usize) -> Vec<f32> {
    let (h, w) = (IMAGE_SHAPE.height, IMAGE_SHAPE.width);
    let mut img: Vec<f32> = (0..h * w).map(|_| 0.15 * unit_f32(rng)).collect();
    let level = 0.6 + 0.4 * unit_f32(rng);
    let ink = |img: &mut Vec<f32>, y: usize, x: usize, rng: &mut Rng| {
        let v = (level * (0.9 + 0.1 * unit_f32(rng))).min(1.0);
        let p = &mut img[y * w + x];
        *p = p.max(v);
    };
    match class {
        0 | 1 => {
            let pos = 1 + below(rng, h - 2);
            let thick = 1 + below(rng, 2);
            let (from, to) = (below(rng, 2), w - below(rng, 2));
            for a in pos..(pos + thick).min(h) {
                for b in from..to {
                    let (y, x) = if class == 0 { (a, b) } else { (b, a) };
                    ink(&mut img, y, x, rng);
                }
            }
        }
        2 => {
            let off = below(rng, 5) as isize - 2;
            let anti = below(rng, 2) == 1;
            for y in 0..h {
                let x = y as isize + off;
                if (0..w as isize).contains(&x) {
                    let x = if anti { w - 1 - x as usize } else { x as usize };
                    ink(&mut img, y, x, rng);
                }
            }
        }
        _ => {
            let (y0, x0) = (1 + below(rng, h - 4), 1 + below(rng, w - 4));
            for y in y0..y0 + 3 {
                for x in x0..x0 + 3 {
                    ink(&mut img, y, x, rng);
                }
            }
        }
    }
    img
}

/// `size` images with labels cycling through `0..k`, image `i` drawn from
/// stream `i` of the generator seeded with `seed`.
pub fn gen_dataset(seed: u64, size: usize, k: usize) -> Result<ToyDataset> {
    if size == 0 {
        return Err(Error::OutOfRange("dataset size must be at least 1".into()));
    }
    if !(2..=MAX_CLASSES).contains(&k) {
        return Err(Error::OutOfRange(format!("classes = {k}, expected 2..={MAX_CLASSES}")));
    }
    let mut images = Vec::with_capacity(size);
    let mut labels = Vec::with_capacity(size);
    for i in 0..size {
        let class = i % k;
        let mut rng = stream(seed, i as u64);
        images.push(ImageTensor::new(IMAGE_SHAPE, draw(&mut rng, class))?);
        labels.push(class);
    }
    let num_train = ((size as f64 * TRAIN_FRACTION).round() as usize).min(size);
    Ok(ToyDataset { images, labels, num_train, classes: k, seed })
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    kind: String,
    blob: String,
    shape: [usize; 3],
    classes: usize,
    seed: u64,
    num_train: usize,
    labels: Vec<usize>,
}

/// Write the dataset in the model container format (`kind = "dataset"`).
pub fn save_dataset(data: &ToyDataset, path: &Path) -> Result<()> {
    let shape = data.images.first().map(|i| i.shape()).unwrap_or(IMAGE_SHAPE);
    let blob = blob_name(path);
    fs::write(resolve_blob(path, &blob)?, encode_f32(data.images.iter().flat_map(|i| i.data().iter().copied())))?;
    write_manifest(path, &DatasetManifest {
        kind: "dataset".into(),
        blob,
        shape: [shape.height, shape.width, shape.channels],
        classes: data.classes,
        seed: data.seed,
        num_train: data.num_train,
        labels: data.labels.clone(),
    })
}

pub fn load_dataset(path: &Path) -> Result<ToyDataset> {
    let m: DatasetManifest = read_manifest(path)?;
    if m.kind != "dataset" {
        return Err(Error::Format(format!("expected kind \"dataset\", found {:?}", m.kind)));
    }
    let shape = Shape::new(m.shape[0], m.shape[1], m.shape[2]);
    let values = decode_f32(&fs::read(resolve_blob(path, &m.blob)?)?)?;
    if shape.is_empty() || values.len() != shape.len() * m.labels.len() {
        return Err(Error::Format(format!(
            "blob holds {} values, expected {} images of {shape}",
            values.len(),
            m.labels.len()
        )));
    }
    if m.classes < 2 || m.labels.iter().any(|&l| l >= m.classes) || m.num_train > m.labels.len() {
        return Err(Error::Format("labels or split out of range".into()));
    }
    let images = values
        .chunks_exact(shape.len())
        .map(|c| {
            let img = ImageTensor::new(shape, c.to_vec())?;
            img.check_unit_range()?;
            Ok(img)
        })
        .collect::<Result<_>>()?;
    Ok(ToyDataset { images, labels: m.labels, num_train: m.num_train, classes: m.classes, seed: m.seed })
}
