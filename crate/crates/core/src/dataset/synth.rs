//! Seeded synthetic frames: a smooth tinted background for every frame, plus
//! one soft-edged bright ellipse on positives.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::manifest::{DatasetManifest, Record};
use crate::dataset::pnm::{encode_ppm, Frame};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub width: usize,
    pub height: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        // 4:3 frames, so the loader's resize is exercised.
        SynthOptions { width: 160, height: 120 }
    }
}

/// Number of positives for `count` frames at `positive_fraction`.
pub fn positive_count(count: usize, positive_fraction: f64) -> usize {
    ((count as f64 * positive_fraction).round() as usize).min(count)
}

/// Labels in corpus order: exactly [`positive_count`] ones, seeded shuffle.
fn labels(count: usize, positive_fraction: f64, seed: u64) -> Vec<u8> {
    let positives = positive_count(count, positive_fraction);
    let mut labels: Vec<u8> = (0..count).map(|i| u8::from(i < positives)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);
    labels
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    gain: f64,
}

/// Renders frame `index` of the corpus deterministically.
pub fn render_frame(seed: u64, index: usize, positive: bool, opts: SynthOptions) -> Frame {
    let (w, h) = (opts.width, opts.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);

    let base = [rng.gen_range(0.45..0.65), rng.gen_range(0.22..0.36), rng.gen_range(0.16..0.30)];
    let tint = [1.0, rng.gen_range(0.6..0.9), rng.gen_range(0.5..0.8)];
    let scale = w.max(h) as f64;
    let waves: Vec<Wave> = (0..3)
        .map(|_| {
            let angle = rng.gen_range(0.0..TAU);
            let cycles = rng.gen_range(0.3..1.5);
            Wave {
                kx: angle.cos() * cycles * TAU / scale,
                ky: angle.sin() * cycles * TAU / scale,
                phase: rng.gen_range(0.0..TAU),
                amp: rng.gen_range(0.03..0.08),
            }
        })
        .collect();
    let ellipse = positive.then(|| {
        let m = w.min(h) as f64;
        let a = rng.gen_range(0.10..0.20) * m;
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        Ellipse {
            cx: rng.gen_range(0.25..0.75) * w as f64,
            cy: rng.gen_range(0.25..0.75) * h as f64,
            a,
            b: a * rng.gen_range(0.55..1.0),
            cos: theta.cos(),
            sin: theta.sin(),
            gain: rng.gen_range(0.28..0.38),
        }
    });

    let mut rgb = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let shade: f64 = waves
                .iter()
                .map(|wv| wv.amp * (wv.kx * xf + wv.ky * yf + wv.phase).sin())
                .sum();
            let blob = ellipse.as_ref().map_or(0.0, |e| {
                let (dx, dy) = (xf - e.cx, yf - e.cy);
                let u = (dx * e.cos + dy * e.sin) / e.a;
                let v = (-dx * e.sin + dy * e.cos) / e.b;
                let r = (u * u + v * v).sqrt();
                // 1 inside, 0 outside, smooth over r in [0.85, 1.15]
                let t = ((1.15 - r) / 0.3).clamp(0.0, 1.0);
                e.gain * t * t * (3.0 - 2.0 * t)
            });
            for c in 0..3 {
                let noise = rng.gen_range(-0.015..0.015);
                let v = base[c] + shade * tint[c] + blob + noise;
                rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Frame::new(w, h, rgb).expect("dims match")
}

/// Writes `count` frames and `manifest.csv` into `out_dir`. A pure function of
/// `(seed, count, positive_fraction, opts)`.
pub fn synth_generate(out_dir: &Path, count: usize, positive_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    synth_generate_with(out_dir, count, positive_fraction, seed, SynthOptions::default())
}

pub fn synth_generate_with(
    out_dir: &Path,
    count: usize,
    positive_fraction: f64,
    seed: u64,
    opts: SynthOptions,
) -> Result<DatasetManifest> {
    if count < 2 {
        return Err(Error::InvalidArgument(format!("count must be >= 2, got {count}")));
    }
    if !(0.0..=1.0).contains(&positive_fraction) {
        return Err(Error::InvalidArgument(format!(
            "positive fraction must be in [0, 1], got {positive_fraction}"
        )));
    }
    if opts.width < 2 || opts.height < 2 {
        return Err(Error::InvalidArgument("synthetic frames must be >= 2x2".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let labels = labels(count, positive_fraction, seed);
    let mut records = Vec::with_capacity(count);
    for (i, &label) in labels.iter().enumerate() {
        let name = format!("frame_{i:05}.ppm");
        let frame = render_frame(seed, i, label == 1, opts);
        let path = out_dir.join(&name);
        fs::write(&path, encode_ppm(&frame)).map_err(|e| Error::io(&path, e))?;
        records.push(Record { path: name, label });
    }
    let manifest = DatasetManifest::new(out_dir, records)?;
    manifest.write(out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}
