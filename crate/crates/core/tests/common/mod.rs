#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fpgap_core::modelgen::{load_dataset, ToyDataset};
use fpgap_core::rng::{self, Rng};
use fpgap_core::{load_model, ImageTensor, Network, Shape};

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/demo")
}

pub struct Demo {
    pub net: Network,
    pub data: ToyDataset,
    pub eps: f64,
    pub seeds: Vec<usize>,
}

pub fn demo() -> Demo {
    let dir = demo_dir();
    let net = load_model(&dir.join("model.fpgap")).unwrap();
    let data = load_dataset(&dir.join("dataset.fpgap")).unwrap();
    let seeds: toml::Value = std::fs::read_to_string(dir.join("seeds.toml")).unwrap().parse().unwrap();
    let eps = seeds["eps"].as_float().unwrap();
    let seeds = seeds["indices"].as_array().unwrap().iter().map(|v| v.as_integer().unwrap() as usize).collect();
    Demo { net, data, eps, seeds }
}

pub fn random_image(rng: &mut Rng, shape: Shape) -> ImageTensor<f32> {
    ImageTensor::new(shape, (0..shape.len()).map(|_| rng::unit_f32(rng)).collect()).unwrap()
}
