use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use bcnn::binarize::{binarize_network, layer_costs};
use bcnn::dataset::{
    decode_image, load_manifest, resize_to_input, synth_generate, DatasetManifest, ManifestSource, SampleSource,
};
use bcnn::metrics::{accumulate, compute_metrics, ConfusionCounts};
use bcnn::network::{classify, forward, LayerSpec, NetworkSpec};
use bcnn::packed::{op_count_report_for_model, packed_forward, BinarizedModel};
use bcnn::store::{
    load_any, model_kind, save_binarized, save_checkpoint, save_float, structure_bytes, LoadedModel, Metadata,
    ModelKind,
};
use bcnn::tensor::{Shape4, Tensor4};
use bcnn::train::{train_loop, TrainConfig, TrainMode};
use bcnn::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::report::{sha256_hex, RunReport};
use crate::{BenchArgs, BinarizeArgs, EvalArgs, InferArgs, InspectArgs, SynthArgs, TrainArgs};

/// Invalid flag values caught by the CLI itself.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Divergence { .. } => 4,
                Error::InvalidArgument(_) => 2,
                _ => 3,
            };
        }
    }
    3
}

const EVAL_BATCH: usize = 32;

fn manifest_from(path: &Path, root: Option<&Path>) -> Result<DatasetManifest> {
    load_manifest(path, root).with_context(|| format!("loading manifest {}", path.display()))
}

/// Digest over every image's bytes, in manifest order.
fn images_digest(m: &DatasetManifest) -> Result<String> {
    let mut all = String::new();
    for i in 0..m.len() {
        let p = m.full_path(i);
        let bytes = fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
        all.push_str(&sha256_hex(&bytes));
    }
    Ok(sha256_hex(all.as_bytes()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let start = Instant::now();
    let m = synth_generate(&a.out, a.count, a.positive_frac, a.seed)?;
    if !m.has_both_classes() {
        eprintln!("warning: corpus contains a single class; a model cannot be trained on it");
    }
    let mut r = RunReport::new(Some(a.seed));
    r.digest_file("manifest", &a.out.join(bcnn::dataset::MANIFEST_NAME))?;
    r.inputs.insert("images".into(), images_digest(&m)?);
    r.timing_s.insert("synth".into(), start.elapsed().as_secs_f64());
    r.sizes.insert("frames".into(), json!(m.len()));
    r.sizes.insert("positives".into(), json!(m.positives()));
    r.emit(None)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mode: TrainMode = a.mode.parse()?;
    let cfg = TrainConfig {
        mode,
        iterations: a.iterations,
        batch_size: a.batch,
        learning_rate: a.lr,
        momentum: a.momentum,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
    };
    cfg.validate()?;
    let manifest = manifest_from(&a.manifest, a.root.as_deref())?;
    if !manifest.has_both_classes() {
        bail!(
            "refusing to train: {} has {} positives among {} frames; both classes are required",
            a.manifest.display(),
            manifest.positives(),
            manifest.len()
        );
    }
    let mut r = RunReport::new(Some(a.seed));
    r.digest_file("manifest", &a.manifest)?;
    r.inputs.insert("images".into(), images_digest(&manifest)?);

    let start = Instant::now();
    let source = ManifestSource::new(manifest);
    let spec = NetworkSpec::canonical();
    let mut written = Vec::new();
    let out = train_loop(&spec, &source, &cfg, |ck| {
        if ck.iteration % cfg.checkpoint_every == 0 {
            let path = with_suffix(&a.out, &format!(".ckpt-{}", ck.iteration));
            save_checkpoint(ck, &path)?;
            eprintln!("checkpoint {} -> {}", ck.iteration, path.display());
            written.push(path.display().to_string());
        }
        Ok(())
    })?;
    r.timing_s.insert("train".into(), start.elapsed().as_secs_f64());

    let master = out.final_params();
    let meta = Metadata {
        iteration: cfg.iterations,
        seed: cfg.seed,
        config: cfg.clone(),
    };
    match mode {
        TrainMode::Float => save_float(master, Some(&meta), &a.out)?,
        TrainMode::Binarized => {
            let model = BinarizedModel::from_binarized(&binarize_network(master)?)?;
            save_binarized(&model, Some(&meta), &a.out)?;
            let mpath = with_suffix(&a.out, ".master");
            save_float(master, Some(&meta), &mpath)?;
            r.sizes.insert("master_bytes".into(), json!(fs::metadata(&mpath)?.len()));
            r.detail("master", mpath.display().to_string());
        }
    }
    r.sizes.insert("model_bytes".into(), json!(fs::metadata(&a.out)?.len()));
    let tail = &out.losses[out.losses.len().saturating_sub(10)..];
    r.detail("mode", mode);
    r.detail("iterations", cfg.iterations);
    r.detail("final_loss", out.losses.last());
    r.detail("mean_loss_last_10", tail.iter().sum::<f64>() / tail.len() as f64);
    r.detail("model", a.out.display().to_string());
    r.detail("checkpoints", written);
    r.emit(Some(&with_suffix(&a.out, ".report.json")))
}

/// Label/probability pairs for a batch from either model kind.
fn predict(model: &LoadedModel, x: &Tensor4) -> Result<(Vec<u8>, Tensor4)> {
    Ok(match model {
        LoadedModel::Float(p) => classify(&forward(p.spec(), p.layers(), x)?)?,
        LoadedModel::Binarized(b) => packed_forward(b, x)?,
    })
}

fn check_frame_input(spec: &NetworkSpec) -> Result<()> {
    let want = NetworkSpec::canonical().input();
    if spec.input() != want {
        return Err(anyhow!(
            "layer 0: model expects {} inputs but frames are resized to {want}",
            spec.input()
        ));
    }
    Ok(())
}

fn kind_name(k: ModelKind) -> &'static str {
    match k {
        ModelKind::Float => "float",
        ModelKind::Binarized => "binarized",
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let t0 = Instant::now();
    let (model, _) = load_any(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    check_frame_input(model.spec())?;
    let manifest = manifest_from(&a.manifest, a.root.as_deref())?;
    let mut r = RunReport::new(None);
    r.digest_file("model", &a.model)?;
    r.digest_file("manifest", &a.manifest)?;
    r.inputs.insert("images".into(), images_digest(&manifest)?);
    let source = ManifestSource::new(manifest.clone());
    r.timing_s.insert("load".into(), t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let mut counts = ConfusionCounts::default();
    let mut csv = String::from("path,label,prediction,prob_positive\n");
    let idx: Vec<usize> = (0..source.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, labels) = source.load_batch(chunk)?;
        let (pred, probs) = predict(&model, &x)?;
        counts += accumulate(&pred, &labels)?;
        for (j, &i) in chunk.iter().enumerate() {
            let rec = &manifest.records()[i];
            writeln!(csv, "{},{},{},{}", rec.path, rec.label, pred[j], probs.sample(j)[1]).unwrap();
        }
    }
    r.timing_s.insert("eval".into(), t1.elapsed().as_secs_f64());
    r.set_metrics(&compute_metrics(&counts)?, counts);
    r.sizes.insert("frames".into(), json!(manifest.len()));
    r.sizes.insert("model_bytes".into(), json!(fs::metadata(&a.model)?.len()));
    r.detail("model_kind", kind_name(model.kind()));
    r.detail(
        "inference_path",
        match model.kind() {
            ModelKind::Float => "dense",
            ModelKind::Binarized => "packed",
        },
    );
    if let Some(report) = &a.report {
        let pred_path = with_suffix(report, ".predictions.csv");
        fs::write(&pred_path, &csv).with_context(|| format!("writing {}", pred_path.display()))?;
        r.detail("predictions", pred_path.display().to_string());
        r.detail("predictions_sha256", sha256_hex(csv.as_bytes()));
    }
    r.emit(a.report.as_deref())
}

pub fn binarize(a: BinarizeArgs) -> Result<()> {
    let (model, meta) = load_any(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let LoadedModel::Float(params) = model else {
        bail!("{} is already binarized; binarize expects a float model", a.model.display());
    };
    let bin = binarize_network(&params)?;
    let costs = layer_costs(&params, &bin)?;
    let packed = BinarizedModel::from_binarized(&bin)?;
    save_binarized(&packed, meta.as_ref(), &a.out)?;

    let mut r = RunReport::new(meta.as_ref().map(|m| m.seed));
    r.digest_file("model", &a.model)?;
    let layers: Vec<_> = bin
        .layers()
        .iter()
        .zip(&costs)
        .enumerate()
        .map(|(i, (l, j))| json!({"layer": i, "kernels": l.out_features(), "cost": j}))
        .collect();
    r.detail("layers", layers);
    r.detail("total_cost", costs.iter().sum::<f64>());
    r.sizes.insert("float_bytes".into(), json!(fs::metadata(&a.model)?.len()));
    r.sizes.insert("binarized_bytes".into(), json!(fs::metadata(&a.out)?.len()));
    r.emit(a.report.as_deref())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let (model, _) = load_any(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    check_frame_input(model.spec())?;
    let bytes = fs::read(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let frame = decode_image(&bytes).with_context(|| format!("decoding {}", a.image.display()))?;
    let x = resize_to_input(&frame)?;
    let (labels, probs) = predict(&model, &x)?;
    let p = probs.sample(0);
    println!("image = {}", a.image.display());
    println!("label = {}", labels[0]);
    println!("prob_negative = {}", p[0]);
    println!("prob_positive = {}", p[1]);
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    if a.batches == 0 || a.batch == 0 {
        return Err(usage("--batches and --batch must be >= 1"));
    }
    let (model, _) = load_any(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let packed = match model {
        LoadedModel::Float(p) => BinarizedModel::from_binarized(&binarize_network(&p)?)?,
        LoadedModel::Binarized(b) => b,
    };
    let dense = packed.dense_params();
    let spec = packed.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let shape: Shape4 = spec.input().batch(a.batch);
    let batches: Vec<Tensor4> = (0..a.batches)
        .map(|_| Tensor4::from_vec(shape, (0..shape.len()).map(|_| rng.gen::<f64>()).collect()))
        .collect::<bcnn::Result<_>>()?;

    // warm-up
    forward(&spec, dense.layers(), &batches[0])?;
    packed.logits(&batches[0])?;

    let mut agree = 0;
    let t = Instant::now();
    let mut dense_labels = Vec::new();
    for x in &batches {
        dense_labels.push(classify(&forward(&spec, dense.layers(), x)?)?.0);
    }
    let dense_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let mut packed_labels = Vec::new();
    for x in &batches {
        packed_labels.push(packed_forward(&packed, x)?.0);
    }
    let packed_s = t.elapsed().as_secs_f64();
    for (d, p) in dense_labels.iter().zip(&packed_labels) {
        agree += d.iter().zip(p).filter(|(x, y)| x == y).count();
    }
    let images = (a.batches * a.batch) as f64;

    let mut r = RunReport::new(Some(a.seed));
    r.digest_file("model", &a.model)?;
    r.timing_s.insert("dense".into(), dense_s);
    r.timing_s.insert("packed".into(), packed_s);
    r.detail("images", images as u64);
    r.detail("label_agreement", agree as f64 / images);
    r.detail(
        "measured",
        json!({
            "dense_images_per_s": images / dense_s,
            "packed_images_per_s": images / packed_s,
            "packed_speedup": dense_s / packed_s,
        }),
    );
    r.detail("op_counts", op_count_report_for_model(&packed).total);
    r.emit(a.report.as_deref())
}

fn layer_row(layer: &LayerSpec) -> (String, String) {
    match *layer {
        LayerSpec::Conv { size, stride, features } => ("conv".into(), format!("{size}x{size}/{stride}, {features} out")),
        LayerSpec::MaxPool { size, stride } => ("maxpool".into(), format!("{size}x{size}/{stride}")),
        LayerSpec::Fc { features } => ("fc".into(), format!("{features} out")),
        LayerSpec::Relu => ("relu".into(), String::new()),
        LayerSpec::SoftmaxXent => ("softmax".into(), String::new()),
    }
}

/// First layer index at which two architectures differ.
fn architecture_mismatch(a: &NetworkSpec, b: &NetworkSpec) -> Option<String> {
    if a.input() != b.input() {
        return Some(format!("layer 0: inputs differ ({} vs {})", a.input(), b.input()));
    }
    let n = a.layers().len().max(b.layers().len());
    (0..n).find_map(|i| match (a.layers().get(i), b.layers().get(i)) {
        (Some(x), Some(y)) if x == y => None,
        (x, y) => Some(format!("layer {i}: {x:?} vs {y:?}")),
    })
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let bytes = fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let kind = model_kind(&bytes)?;
    let (model, meta) = load_any(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let spec = model.spec();
    let mut r = RunReport::new(meta.as_ref().map(|m| m.seed));
    r.digest_file("model", &a.model)?;
    r.detail("kind", kind_name(kind));
    r.detail("magic", String::from_utf8_lossy(&bytes[..8]));
    r.detail("input", spec.input().to_string());
    let shapes = spec.output_shapes();
    let dims = spec.param_dims();
    let mut p = 0;
    let rows: Vec<_> = spec
        .layers()
        .iter()
        .zip(&shapes)
        .enumerate()
        .map(|(i, (l, s))| {
            let (ty, desc) = layer_row(l);
            let mut row = json!({"index": i, "type": ty, "desc": desc, "output": s.to_string()});
            if l.has_params() {
                let d = dims[p];
                row["weights"] = json!(d.weight_count());
                row["biases"] = json!(d.out_features);
                p += 1;
            }
            row
        })
        .collect();
    r.detail("layers", rows);
    r.sizes.insert("file_bytes".into(), json!(bytes.len()));
    r.sizes.insert("structure_bytes".into(), json!(structure_bytes(spec)));
    r.sizes.insert("weights".into(), json!(spec.weight_count()));
    r.sizes.insert("biases".into(), json!(spec.bias_count()));
    if let Some(m) = &meta {
        r.detail("metadata", json!({"iteration": m.iteration, "seed": m.seed, "config": m.config}));
    }
    if let Some(other) = &a.compare {
        let (om, _) = load_any(other).with_context(|| format!("loading model {}", other.display()))?;
        if let Some(msg) = architecture_mismatch(spec, om.spec()) {
            bail!("{} and {} differ at {msg}", a.model.display(), other.display());
        }
        r.digest_file("compare", other)?;
        let other_bytes = fs::metadata(other)?.len() as f64;
        let this = bytes.len() as f64;
        let (ratio, how) = match (model.kind(), om.kind()) {
            (ModelKind::Float, ModelKind::Binarized) => (this / other_bytes, "float/binarized"),
            (ModelKind::Binarized, ModelKind::Float) => (other_bytes / this, "float/binarized"),
            _ => (this / other_bytes, "model/compare"),
        };
        r.sizes.insert("compare_bytes".into(), json!(other_bytes as u64));
        r.sizes.insert("ratio".into(), json!(ratio));
        r.detail("ratio_definition", how);
    }
    r.emit(a.report.as_deref())
}
