//! Acceptance suite. Runs every criterion, prints one line each and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use bombus::config::resolve;
use bombus_core::augment::{apply_policy, build_augmented_set, contrast, occlude, salt_pepper, AugmentationPolicy, Region};
use bombus_core::dataset::{ClassCatalog, DatasetManifest, ImageRecord, Split};
use bombus_core::ensemble::{rank_row, sum_softmax, top_k, ProbabilityMatrix, ScoreRows};
use bombus_core::eval::{confusion_from_scores, leakage, precision_recall, top_k_accuracy};
use bombus_core::image::{Geometry, Image};
use bombus_core::model::{
    first_overfit_epoch, lr_at, train, BackboneName, BackboneSpec, DecayUnit, HeadConfig, Model, OptimizerConfig,
    TrainConfig, WeightSource,
};
use bombus_core::rng;
use rand::Rng;
use serde_json::{json, Value};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img{i:04}")).collect()
}

/// Rows of small integer weights normalised to one; ties are common.
fn tied_rows(r: &mut rng::Rng, n: usize, c: usize, denom: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * c);
    for _ in 0..n {
        let mut w = vec![0u32; c];
        for _ in 0..denom {
            w[r.random_range(0..c)] += 1;
        }
        out.extend(w.iter().map(|&v| f64::from(v) / f64::from(denom)));
    }
    out
}

fn criterion_1() -> Result<String, String> {
    let mut r = rng::seeded(1);
    let start = Instant::now();
    for fixture in 0..200 {
        let c = r.random_range(2..=10);
        let n = r.random_range(1..=200);
        let negative = r.random_bool(0.5).then_some(c - 1);
        let names = labels(c);
        let catalog = ClassCatalog::new(names.clone(), negative.map(|i| names[i].clone())).unwrap();
        let values = tied_rows(&mut r, n, c, 8);
        let m = ProbabilityMatrix::new(ids(n), catalog, values.clone()).unwrap();
        let actual: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let truth: BTreeMap<String, String> = ids(n).into_iter().zip(actual.iter().map(|&a| names[a].clone())).collect();

        // Brute force: a class outranks the truth if it scores higher, or
        // equal with a lower index.
        let row = |i: usize| &values[i * c..(i + 1) * c];
        let rank = |i: usize, t: usize| (0..c).filter(|&j| row(i)[j] > row(i)[t] || (row(i)[j] == row(i)[t] && j < t)).count();
        let argmax = |i: usize| (0..c).find(|&j| rank(i, j) == 0).unwrap();
        let mut counts = vec![vec![0u64; c]; c];
        for i in 0..n {
            counts[actual[i]][argmax(i)] += 1;
        }
        let cm = confusion_from_scores(&m, &truth).map_err(|e| e.to_string())?;
        ensure(cm.counts() == counts.as_slice(), || format!("fixture {fixture}: confusion differs"))?;

        for k in 1..=c {
            let want = (0..n).filter(|&i| rank(i, actual[i]) < k).count() as f64 / n as f64;
            let got = top_k_accuracy(&m, &truth, k).map_err(|e| e.to_string())?;
            ensure((got - want).abs() <= 1e-12, || format!("fixture {fixture}: top-{k} {got} vs {want}"))?;
        }

        for (j, pr) in precision_recall(&cm).iter().enumerate() {
            let tp = counts[j][j];
            let col: u64 = (0..c).map(|a| counts[a][j]).sum();
            let rowsum: u64 = counts[j].iter().sum();
            let check = |got: &bombus_core::eval::Ratio, den: u64, what: &str| {
                let want = if den == 0 { 0.0 } else { tp as f64 / den as f64 };
                ensure(got.undefined == (den == 0) && (got.value - want).abs() <= 1e-12, || {
                    format!("fixture {fixture}: {what} of class {j}: {got:?} vs {want}")
                })
            };
            check(&pr.precision, col, "precision")?;
            check(&pr.recall, rowsum, "recall")?;
        }

        if let Some(neg) = negative {
            let count: u64 = (0..c).filter(|&a| a != neg).map(|a| counts[a][neg]).sum();
            let total: u64 = (0..c).filter(|&a| a != neg).map(|a| counts[a].iter().sum::<u64>()).sum();
            let l = leakage(&cm, &names[neg]).map_err(|e| e.to_string())?;
            let frac = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            ensure(l.count == count && l.target_total == total && (l.fraction - frac).abs() <= 1e-12, || {
                format!("fixture {fixture}: leakage {l:?} vs {count}/{total}")
            })?;
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(30), || format!("took {t:?}"))?;
    Ok(format!("200 fixtures in {t:.2?}"))
}

fn criterion_2() -> Result<String, String> {
    let mut r = rng::seeded(2);
    let (c, n) = (30, 50);
    let catalog = ClassCatalog::from_labels(labels(c)).unwrap();
    let start = Instant::now();
    let mut ties = 0;
    for set in 0..1000 {
        let members = r.random_range(2..=4);
        // Multiples of 1/64 add exactly, so ties in the sums are real ties.
        let rows: Vec<Vec<f64>> = (0..members).map(|_| tied_rows(&mut r, n, c, 64)).collect();
        let matrices: Vec<ProbabilityMatrix> =
            rows.iter().map(|v| ProbabilityMatrix::new(ids(n), catalog.clone(), v.clone()).unwrap()).collect();
        let composite = sum_softmax(&matrices).map_err(|e| e.to_string())?;
        let top = top_k(&composite, 1).map_err(|e| e.to_string())?;
        for i in 0..n {
            let sums: Vec<f64> = (0..c).map(|j| rows.iter().map(|m| m[i * c + j]).sum()).collect();
            let mut best = 0;
            for j in 1..c {
                if sums[j] > sums[best] {
                    best = j;
                }
            }
            if sums.iter().filter(|&&s| s == sums[best]).count() > 1 {
                ties += 1;
            }
            ensure(top[i].ranked_labels[0] == catalog.label(best), || {
                format!("set {set} row {i}: {} vs {}", top[i].ranked_labels[0], catalog.label(best))
            })?;
        }
    }
    let t = start.elapsed();
    ensure(ties > 0, || "fixtures produced no ties".into())?;
    ensure(t < Duration::from_secs(10), || format!("took {t:?}"))?;
    Ok(format!("1000 sets, {ties} tied rows, {t:.2?}"))
}

fn criterion_3() -> Result<String, String> {
    let (n, c) = (200usize, 4usize);
    let catalog = ClassCatalog::from_labels(labels(c)).unwrap();
    let truth_of = |i: usize| i % c;
    let truth: BTreeMap<String, String> = ids(n).into_iter().enumerate().map(|(i, id)| (id, format!("c{}", truth_of(i)))).collect();
    // Confident and right on its own half; weak elsewhere, right on 20 of
    // the other 100.
    let member = |own: std::ops::Range<usize>| {
        let mut v = Vec::with_capacity(n * c);
        for i in 0..n {
            let (t, decoy) = (truth_of(i), (truth_of(i) + 1) % c);
            let mut row = vec![0.0; c];
            let other = if own.contains(&i) {
                row[t] = 0.85;
                0.05
            } else {
                let weak_right = (i - if own.start == 0 { n / 2 } else { 0 }) < 20;
                row[t] = if weak_right { 0.40 } else { 0.30 };
                row[decoy] = if weak_right { 0.30 } else { 0.40 };
                0.15
            };
            for (j, x) in row.iter_mut().enumerate() {
                if j != t && (j != decoy || own.contains(&i)) {
                    *x = other;
                }
            }
            v.extend(row);
        }
        ProbabilityMatrix::new(ids(n), catalog.clone(), v).unwrap()
    };
    let a = member(0..n / 2);
    let b = member(n / 2..n);
    let top1 = |s: &dyn ScoreRows| top_k_accuracy(s, &truth, 1).unwrap();
    let (ta, tb) = (top1(&a), top1(&b));
    let composite = sum_softmax(&[a, b]).map_err(|e| e.to_string())?;
    let tc = top1(&composite);
    ensure((ta - 0.6).abs() < 1e-12 && (tb - 0.6).abs() < 1e-12, || format!("members at {ta}, {tb}, expected 0.6"))?;
    ensure(tc > ta && tc > tb, || format!("composite {tc} vs members {ta}, {tb}"))?;
    Ok(format!("members {ta:.3} / {tb:.3}, composite {tc:.3}"))
}

fn criterion_4() -> Result<String, String> {
    let start = Instant::now();
    let spec = BackboneSpec::new(BackboneName::Vgg16, WeightSource::Pretrained, true);
    let g = spec.input_geometry;
    let catalog = ClassCatalog::from_labels(common::SHAPES).unwrap();
    let data = common::shapes(20, g, 0);
    ensure(data.len() == 60, || format!("{} images", data.len()))?;
    let oc = OptimizerConfig::adam(1e-3);
    let tc = TrainConfig { epochs: 30, batch_size: 8, train_fraction: 1.0, seed: 4, use_augmented: false, overfit_patience: None };
    let model = Model::build(spec.clone(), HeadConfig::new(vec![256], 0.0, 3), 4).map_err(|e| e.to_string())?;
    let trained = train(model, &catalog, &data, &[], &tc, &oc).map_err(|e| e.to_string())?;
    let h = trained.history();
    ensure(h.len() == 30 && h.stopped_early_at.is_none(), || format!("history length {}", h.len()))?;
    ensure(h.epochs.iter().enumerate().all(|(i, e)| e.epoch == i + 1 && e.val_loss.is_none()), || "epoch numbering".into())?;
    let images: Vec<Image> = data.iter().map(|(i, _)| i.clone()).collect();
    let probs = trained.predict(&ids(60), &images).map_err(|e| e.to_string())?;
    let correct = (0..60).filter(|&i| rank_row(probs.row(i), 1)[0] == data[i].1).count();
    let acc = correct as f64 / 60.0;
    ensure(acc >= 0.95, || format!("train accuracy {acc}"))?;

    // Early stopping: validation labels are rotated, so validation loss
    // climbs as the fit improves.
    let val: Vec<(Image, usize)> = common::shapes(4, g, 100).into_iter().map(|(i, y)| (i, (y + 1) % 3)).collect();
    let tc = TrainConfig { overfit_patience: Some(2), ..tc };
    let model = Model::build(spec, HeadConfig::new(vec![256], 0.0, 3), 4).map_err(|e| e.to_string())?;
    let stopped = train(model, &catalog, &data, &val, &tc, &oc).map_err(|e| e.to_string())?;
    let h = stopped.history();
    let tl: Vec<f64> = h.epochs.iter().map(|e| e.train_loss).collect();
    let vl: Vec<f64> = h.epochs.iter().map(|e| e.val_loss.unwrap()).collect();
    let at = h.stopped_early_at.ok_or("detector never fired")?;
    ensure(h.len() == at && first_overfit_epoch(&tl, &vl, 2) == Some(at), || {
        format!("stopped at {at} with {} epochs recorded", h.len())
    })?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(600), || format!("took {t:?}"))?;
    Ok(format!("train accuracy {acc:.3} after 30 epochs; early stop at epoch {at}; {t:.1?}"))
}

fn criterion_5() -> Result<String, String> {
    let start = Instant::now();
    let g = Geometry::new(32, 32);
    let img = common::shape_image(0, 1, g);
    let policy = AugmentationPolicy { seed: 11, ..AugmentationPolicy::default() };
    for draw in 0..50 {
        let (a, ops_a) = apply_policy(&img, &policy, draw).map_err(|e| e.to_string())?;
        let (b, ops_b) = apply_policy(&img, &policy, draw).map_err(|e| e.to_string())?;
        let same = ops_a == ops_b && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || format!("draw {draw} not reproducible"))?;
    }

    let catalog = ClassCatalog::from_labels(["a"]).unwrap();
    let records: Vec<ImageRecord> =
        (0..10_000).map(|i| ImageRecord::new(format!("r{i}"), format!("r{i}.png"), "a").with_split(Split::Train)).collect();
    let manifest = DatasetManifest::new(catalog, records, 0).unwrap();
    let (_, jobs) = build_augmented_set(&manifest, &policy).map_err(|e| e.to_string())?;
    let rate = jobs.len() as f64 / 10_000.0;
    ensure((0.23..=0.27).contains(&rate), || format!("augment rate {rate}"))?;
    let (_, again) = build_augmented_set(&manifest, &policy).map_err(|e| e.to_string())?;
    ensure(again == jobs, || "augmented set not reproducible".into())?;

    let region = Region { row: 5, col: 9, height: 7, width: 12 };
    let o = occlude(&img, region);
    for r in 0..32 {
        for c in 0..32 {
            let inside = (5..12).contains(&r) && (9..21).contains(&c);
            for ch in 0..3 {
                let ok = if inside { o.get(r, c, ch) == 0.0 } else { o.get(r, c, ch).to_bits() == img.get(r, c, ch).to_bits() };
                ensure(ok, || format!("occlusion wrong at ({r}, {c}, {ch})"))?;
            }
        }
    }

    let gray = Image::filled(Geometry::new(64, 64), 0.5);
    let p = 0.1;
    let mut flipped = 0u64;
    let seeds = 20;
    for seed in 0..seeds {
        let s = salt_pepper(&gray, p, seed).map_err(|e| e.to_string())?;
        let f = s.data().chunks_exact(3).filter(|px| px[0] != 0.5).count() as u64;
        let n = 4096.0;
        let sigma = (n * p * (1.0 - p)).sqrt();
        ensure((f as f64 - n * p).abs() <= 3.0 * sigma, || format!("seed {seed}: {f} flips"))?;
        flipped += f;
    }
    let n = 4096.0 * seeds as f64;
    let sigma = (n * p * (1.0 - p)).sqrt();
    ensure((flipped as f64 - n * p).abs() <= 3.0 * sigma, || format!("{flipped} flips of {n}"))?;

    // Channel means are all 0.5.
    let hand = Image::new(Geometry::new(1, 2), vec![0.25, 0.5, 0.75, 0.75, 0.5, 0.25]).unwrap();
    let c = contrast(&hand, 1.5).map_err(|e| e.to_string())?;
    ensure(c.data() == [0.125, 0.5, 0.875, 0.875, 0.5, 0.125], || format!("{:?}", c.data()))?;
    let c = contrast(&hand, 3.0).map_err(|e| e.to_string())?;
    ensure(c.data() == [0.0, 0.5, 1.0, 1.0, 0.5, 0.0], || format!("{:?}", c.data()))?;

    let t = start.elapsed();
    ensure(t < Duration::from_secs(60), || format!("took {t:?}"))?;
    Ok(format!("rate {rate:.4}, {flipped} flips over {seeds} seeds, {t:.2?}"))
}

fn criterion_6() -> Result<String, String> {
    let start = Instant::now();
    let cfg = resolve(json!({ "preset": "vgg19-best" }), &[]).map_err(|e| e.to_string())?;
    let oc = &cfg.model.optimizer;
    let decay = oc.decay.ok_or("preset has no decay")?;
    ensure(decay.rate == 0.96 && decay.interval == 100 && decay.unit == DecayUnit::Steps, || format!("{decay:?}"))?;
    let lr0 = oc.learning_rate;
    let mut worst = 0.0f64;
    for step in 0..=1_000_000u64 {
        let want = lr0 * ((step / 100) as f64 * 0.96f64.ln()).exp();
        let rel = ((lr_at(step, oc) - want) / want).abs();
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-12, || format!("worst relative error {worst:e}"))?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(1), || format!("took {t:?}"))?;
    Ok(format!("worst relative error {worst:.1e} over 1e6 steps, {t:.2?}"))
}

fn criterion_7() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let catalog = common::catalog_of(30);
    let mut worst_sum = 0.0f64;
    for (i, name) in [BackboneName::Vgg16, BackboneName::Vgg19, BackboneName::Resnet50, BackboneName::InceptionV3].into_iter().enumerate() {
        let ws = if name == BackboneName::Resnet50 { WeightSource::Random } else { WeightSource::Pretrained };
        let spec = BackboneSpec::new(name, ws, i % 2 == 0);
        let g = spec.input_geometry;
        let head = HeadConfig { global_average_pooling: spec.global_average_pooling, ..HeadConfig::new(vec![64], 0.2, 30) };
        let trained = common::quick_model(spec, head, 30, 1);
        let images: Vec<Image> = (0..5).map(|k| common::shape_image(k % 4, 50 + k as u64, g)).collect();
        let probs = trained.predict(&ids(5), &images).map_err(|e| e.to_string())?;
        ensure(probs.shape() == (5, 30) && probs.catalog() == &catalog, || format!("{name:?}: shape {:?}", probs.shape()))?;
        for r in 0..5 {
            worst_sum = worst_sum.max((probs.row(r).iter().sum::<f64>() - 1.0).abs());
        }
        ensure(worst_sum <= 1e-5, || format!("{name:?}: row sum off by {worst_sum:e}"))?;

        let path = dir.path().join(name.as_str());
        bombus::artifact::save_model(&path, &trained).map_err(|e| e.to_string())?;
        let loaded = bombus::artifact::load_model(&path).map_err(|e| e.to_string())?;
        let again = loaded.predict(&ids(5), &images).map_err(|e| e.to_string())?;
        let drift = probs.values().iter().zip(again.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(drift <= 1e-6, || format!("{name:?}: drift {drift:e}"))?;
    }
    Ok(format!("4 backbones, N x 30, worst row-sum error {worst_sum:.1e}"))
}

fn criterion_8() -> Result<String, String> {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    // (preset, backbone, weights, GAP, hidden, dropout, lr, decay, epochs, batch)
    let expected = [
        ("vgg19-best", "vgg19", "pretrained", false, json!([2048, 2048]), 0.5, 1e-5, json!({"rate": 0.96, "interval": 100, "unit": "steps"}), 10, 64),
        ("vgg16-best", "vgg16", "pretrained", false, json!([2048, 2048, 2048]), 0.3, 1e-4, Value::Null, 20, 64),
        ("resnet50-final", "resnet50", "random", true, json!([]), 0.0, 5e-4, Value::Null, 15, 64),
        ("inception-best", "inception_v3", "pretrained", true, json!([1536, 1536]), 0.5, 5e-5, Value::Null, 21, 12),
    ];
    for (name, backbone, weights, gap, nodes, dropout, lr, decay, epochs, batch) in expected {
        let cfg = resolve(json!({ "preset": name }), &[]).map_err(|e| e.to_string())?;
        let text = cfg.to_canonical_json();
        let file = std::fs::read_to_string(golden.join(format!("preset-{name}.json"))).map_err(|e| e.to_string())?;
        ensure(text == file, || format!("{name}: snapshot differs from golden"))?;
        let v: Value = serde_json::from_str(&text).unwrap();
        let m = &v["model"];
        let checks = [
            ("backbone", m["backbone"]["name"] == backbone),
            ("weights", m["backbone"]["weight_source"] == weights),
            ("pooling", m["head"]["global_average_pooling"] == gap),
            ("nodes", m["head"]["nodes_per_layer"] == nodes),
            ("hidden_layers", m["head"]["hidden_layers"] == nodes.as_array().unwrap().len()),
            ("dropout", m["head"]["dropout"] == dropout),
            ("classes", m["head"]["output_classes"] == 30),
            ("optimizer", m["optimizer"]["kind"] == "adam"),
            ("learning_rate", m["optimizer"]["learning_rate"] == lr),
            ("decay", m["optimizer"]["decay"] == decay),
            ("epochs", m["train"]["epochs"] == epochs),
            ("batch", m["train"]["batch_size"] == batch),
        ];
        if let Some((field, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(format!("{name}: {field} differs: {}", m));
        }
    }
    Ok("4 presets match field-for-field and their goldens".into())
}

fn criterion_9() -> Result<String, String> {
    let start = Instant::now();
    let d = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = d.path();
    common::write_toy_source(dir, 6, 3, 3);
    let cfg = common::toy_config(dir);
    let cfg = cfg.to_str().unwrap();
    let steps: [&[&str]; 8] = [
        &["dataset", "build", "--config", cfg],
        &["augment", "--config", cfg],
        &["train", "--config", cfg],
        &["train", "--config", cfg, "--model-dir", "out/model_b", "--set", "model.train.seed=8"],
        &["predict", "--config", cfg, "--model", "out/model"],
        &["ensemble", "--config", cfg, "--members", "out/model", "out/model_b"],
        &["evaluate", "--config", cfg],
        &["report", "--config", cfg, "--format", "json"],
    ];
    for args in steps {
        let r = common::run(dir, args);
        ensure(r.code == 0, || format!("`{}` exited {}: {}", args[..2].join(" "), r.code, r.stderr.trim()))?;
    }
    let out = dir.join("out");
    let text = std::fs::read_to_string(out.join("report/report.json")).map_err(|e| e.to_string())?;
    let report = bombus::report::parse_report(&text).map_err(|e| e.to_string())?;
    for f in bombus::report::SERIES_FILES {
        ensure(out.join("report").join(f).is_file(), || format!("missing {f}"))?;
    }
    ensure(report.evaluated == 9 && report.series.is_some(), || format!("{} images evaluated", report.evaluated))?;
    let r = common::run(dir, &["report", "--config", cfg, "--format", "markdown"]);
    ensure(r.code == 0 && out.join("report/report.md").is_file(), || r.stderr.clone())?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(900), || format!("took {t:?}"))?;
    Ok(format!("pipeline ok, composite top-1 {:.3} on {} images, {t:.1?}", report.top1_accuracy, report.evaluated))
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("metric oracle equivalence", criterion_1),
        ("ensemble argmax law", criterion_2),
        ("constructed ensemble improvement", criterion_3),
        ("toy overfit sanity", criterion_4),
        ("augmentation suite", criterion_5),
        ("learning-rate schedule", criterion_6),
        ("softmax and shape contracts", criterion_7),
        ("preset fidelity", criterion_8),
        ("end-to-end smoke", criterion_9),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
