#![allow(dead_code)]

use std::path::{Path, PathBuf};

use bombus::imaging::save_png;
use bombus_core::dataset::{ClassCatalog, DatasetManifest, ImageRecord, Source, Split};
use bombus_core::image::{Geometry, Image};
use bombus_core::rng;
use rand::Rng;

pub const SHAPES: [&str; 3] = ["disc", "square", "triangle"];
pub const NEGATIVE: &str = "honey";

/// A jittered filled shape on a noisy background. Class 3 is a cross.
pub fn shape_image(class: usize, index: u64, g: Geometry) -> Image {
    let mut r = rng::seeded(rng::derive(index, "toy-shape", SHAPES.get(class).unwrap_or(&NEGATIVE)));
    let (h, w) = (g.height as f64, g.width as f64);
    let size = r.random_range(0.25..0.4) * h.min(w);
    let cy = r.random_range(0.35..0.65) * h;
    let cx = r.random_range(0.35..0.65) * w;
    let fg = [r.random_range(0.7..0.95), r.random_range(0.6..0.9), r.random_range(0.1..0.3)];
    let bg = r.random_range(0.15..0.3);
    let mut data = Vec::with_capacity(g.pixels() * 3);
    for y in 0..g.height {
        for x in 0..g.width {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let inside = match class {
                0 => dy * dy + dx * dx <= size * size,
                1 => dy.abs() <= size * 0.85 && dx.abs() <= size * 0.85,
                2 => dy >= -size && dy <= size && dx.abs() <= (dy + size) * 0.6,
                _ => (dy.abs() <= size * 0.25 && dx.abs() <= size) || (dx.abs() <= size * 0.25 && dy.abs() <= size),
            };
            let noise: f32 = r.random_range(-0.03..0.03);
            for c in 0..3 {
                let v = if inside { fg[c] as f32 } else { bg as f32 };
                data.push((v + noise).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(g, data).expect("geometry matches data")
}

pub fn shapes(per_class: usize, g: Geometry, offset: u64) -> Vec<(Image, usize)> {
    (0..per_class as u64)
        .flat_map(|i| (0..SHAPES.len()).map(move |c| (c, i)))
        .map(|(c, i)| (shape_image(c, offset + i, g), c))
        .collect()
}

pub struct ToySource {
    pub manifest: PathBuf,
    pub negatives: PathBuf,
}

/// Write a small source dataset: `per_class` unassigned and `test_per_class`
/// test images per shape, plus `negatives` cross images.
pub fn write_toy_source(dir: &Path, per_class: usize, test_per_class: usize, negatives: usize) -> ToySource {
    let g = Geometry::new(48, 48);
    let mut labels: Vec<String> = SHAPES.iter().map(|s| s.to_string()).collect();
    labels.push(NEGATIVE.into());
    let catalog = ClassCatalog::new(labels, Some(NEGATIVE.into())).unwrap();
    let mut records = Vec::new();
    for (c, name) in SHAPES.iter().enumerate() {
        for i in 0..per_class + test_per_class {
            let id = format!("{name}-{i:03}");
            let path = format!("img/{id}.png");
            save_png(&dir.join(&path), &shape_image(c, i as u64, g)).unwrap();
            let split = if i < per_class { Split::Unassigned } else { Split::Test };
            records.push(ImageRecord::new(id, path, *name).with_split(split));
        }
    }
    let manifest = dir.join("manifest.jsonl");
    bombus::manifest::save_manifest(&manifest, &DatasetManifest::new(catalog.clone(), records, 0).unwrap()).unwrap();

    let mut neg = Vec::new();
    for i in 0..negatives {
        let id = format!("{NEGATIVE}-{i:03}");
        let path = format!("neg/{id}.png");
        save_png(&dir.join(&path), &shape_image(3, i as u64, g)).unwrap();
        neg.push(ImageRecord::new(id, path, NEGATIVE).with_source(Source::Negative));
    }
    let negatives = dir.join("negatives.jsonl");
    bombus::manifest::save_manifest(&negatives, &DatasetManifest::new(catalog, neg, 0).unwrap()).unwrap();
    ToySource { manifest, negatives }
}

/// Config for a quick one-epoch run over the toy source.
pub fn toy_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "seed": 7,
        "dataset": { "manifest": "manifest.jsonl", "negatives": "negatives.jsonl" },
        "augmentation": { "augment_rate": 0.5 },
        "model": {
            "head": { "nodes_per_layer": [64], "output_classes": 4 },
            "optimizer": { "learning_rate": 1e-3 },
            "train": { "epochs": 1, "batch_size": 8, "train_fraction": 0.75 }
        },
        "output": "out"
    });
    let path = dir.join("experiment.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_bombus")
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run(dir: &Path, args: &[&str]) -> Run {
    let out = std::process::Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove(bombus::pipeline::MODEL_DIR_ENV)
        .output()
        .expect("spawn bombus");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn catalog_of(n: usize) -> ClassCatalog {
    ClassCatalog::from_labels((0..n).map(|i| format!("species{i:02}")).collect::<Vec<_>>()).unwrap()
}

/// A briefly trained model over the toy shapes, labels 0..3 of `classes`.
pub fn quick_model(
    spec: bombus_core::model::BackboneSpec,
    head: bombus_core::model::HeadConfig,
    classes: usize,
    epochs: usize,
) -> bombus_core::model::TrainedModel {
    use bombus_core::model::{train, Model, OptimizerConfig, TrainConfig};
    let g = spec.input_geometry;
    let model = Model::build(spec, head, 1).unwrap();
    let data = shapes(4, g, 0);
    let tc = TrainConfig { epochs, batch_size: 4, train_fraction: 1.0, seed: 1, use_augmented: false, overfit_patience: None };
    train(model, &catalog_of(classes), &data, &[], &tc, &OptimizerConfig::adam(1e-3)).unwrap()
}
