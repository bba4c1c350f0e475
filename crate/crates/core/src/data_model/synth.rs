//! Deterministic synthetic dataset generator.
//!
//! Each 128x128 image mimics the visual premise of the real task: the cell of
//! interest sits at the image center while unrelated peripheral cells crowd
//! the border. The class signal (blob darkness, speckle texture, boundary
//! irregularity) is confined to the central 60% region; 1-4 distractor blobs
//! carry class-uncorrelated appearance and are placed strictly outside that
//! region, so cropping at ratio 0.6 removes them from the model input
//! entirely. Rendering is a pure function of (seed, index, label): pixel
//! noise comes from position hashes, not from draw order.

use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{label_name, save_manifest, DatasetManifest, SampleRecord, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Bounds of the central 60% region of a 128px image: side 77, offset 25.
const CENTER_LO: f64 = 25.0;
const CENTER_HI: f64 = 102.0;
const EDGE_SOFT: f64 = 1.5;

/// Subtle per-domain tint, standing in for scanner/stain variation.
const DOMAIN_TINT: [[f64; 3]; 4] = [
    [0.0, 0.0, 0.0],
    [0.030, -0.020, 0.012],
    [-0.022, 0.018, 0.028],
    [0.018, 0.028, -0.022],
];

#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub with_distractors: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            with_distractors: true,
        }
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    color: [f64; 3],
    speckle: f64,
    lobe2: (f64, f64),
    lobe3: (f64, f64),
    noise_salt: u64,
}

impl Blob {
    fn effective_radius(&self, theta: f64) -> f64 {
        self.radius
            * (1.0
                + self.lobe2.0 * (2.0 * theta + self.lobe2.1).cos()
                + self.lobe3.0 * (3.0 * theta + self.lobe3.1).cos())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Position-keyed noise in [0, 1): independent of pixel visit order.
fn pixel_noise(img_key: u64, salt: u64, x: u32, y: u32) -> f64 {
    let key = img_key ^ (salt << 40) ^ (u64::from(y) << 20) ^ u64::from(x);
    (splitmix64(key) >> 11) as f64 / (1u64 << 53) as f64
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Render one sample. Central blob appearance encodes the class: atypical
/// figures are darker, heavily speckled and lobed; normal figures are smooth
/// discs. Distractors (when enabled) draw their appearance from a
/// class-independent distribution.
pub fn render_synthetic_sample(seed: u64, index: usize, label: u8, opts: &SynthOptions) -> RgbImage {
    let mut rng = derive_rng(seed, &format!("synth/sample/{index}"));
    let img_key = splitmix64(splitmix64(seed ^ 0xC0FF_EE11) ^ index as u64);
    let domain = index % 4;

    // Background tissue tone with per-image jitter.
    let mut bg = [0.91, 0.82, 0.88];
    for (c, v) in bg.iter_mut().enumerate() {
        *v += DOMAIN_TINT[domain][c] + rng.random_range(-0.025..=0.025);
    }

    // Central mitotic figure. Parameters are drawn before any distractor
    // draws so the central appearance is identical with and without them.
    let cx = 63.5 + rng.random_range(-5.0..=5.0);
    let cy = 63.5 + rng.random_range(-5.0..=5.0);
    let radius = rng.random_range(13.0..=18.0);
    let jitter: f64 = rng.random_range(-0.04..=0.04);
    let center = if label == 1 {
        Blob {
            cx,
            cy,
            radius,
            color: [0.22 + jitter, 0.12 + jitter, 0.38 + jitter],
            speckle: 0.85,
            lobe2: (rng.random_range(0.15..=0.30), rng.random_range(0.0..std::f64::consts::TAU)),
            lobe3: (rng.random_range(0.10..=0.25), rng.random_range(0.0..std::f64::consts::TAU)),
            noise_salt: 1,
        }
    } else {
        // Consume the same number of draws as the atypical branch so the
        // distractor stream does not depend on the label.
        let _ = rng.random_range(0.15..=0.30);
        let _ = rng.random_range(0.0..std::f64::consts::TAU);
        let _ = rng.random_range(0.10..=0.25);
        let _ = rng.random_range(0.0..std::f64::consts::TAU);
        Blob {
            cx,
            cy,
            radius,
            color: [0.48 + jitter, 0.32 + jitter, 0.62 + jitter],
            speckle: 0.06,
            lobe2: (0.03, 0.0),
            lobe3: (0.0, 0.0),
            noise_salt: 1,
        }
    };

    let mut blobs = vec![center];
    if opts.with_distractors {
        let count = rng.random_range(1..=4usize);
        for d in 0..count {
            let radius = rng.random_range(5.0..=9.0);
            let lobe_amp = rng.random_range(0.0..=0.30);
            let reach = radius * (1.0 + lobe_amp) + EDGE_SOFT + 1.0;
            let side = u64::from(IMAGE_SIZE) as f64;
            // One of four peripheral bands; the blob (plus its lobes and
            // soft edge) must stay outside the central region.
            let band = rng.random_range(0..4u8);
            let (cx, cy) = match band {
                0 => (
                    rng.random_range(2.0..=side - 3.0),
                    rng.random_range(2.0..=CENTER_LO - reach),
                ),
                1 => (
                    rng.random_range(2.0..=side - 3.0),
                    rng.random_range(CENTER_HI + reach..=side - 3.0),
                ),
                2 => (
                    rng.random_range(2.0..=CENTER_LO - reach),
                    rng.random_range(2.0..=side - 3.0),
                ),
                _ => (
                    rng.random_range(CENTER_HI + reach..=side - 3.0),
                    rng.random_range(2.0..=side - 3.0),
                ),
            };
            let darkness: f64 = rng.random_range(0.0..=1.0);
            let color = lerp3([0.80, 0.68, 0.78], [0.22, 0.12, 0.38], darkness);
            let speckled = rng.random::<f64>() < 0.5;
            blobs.push(Blob {
                cx,
                cy,
                radius,
                color,
                speckle: if speckled { 0.85 } else { 0.06 },
                lobe2: (lobe_amp, rng.random_range(0.0..std::f64::consts::TAU)),
                lobe3: (0.0, 0.0),
                noise_salt: 16 + d as u64,
            });
        }
    }

    let mut img = RgbImage::new(IMAGE_SIZE, IMAGE_SIZE);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let mut px = bg;
            let grain = pixel_noise(img_key, 0, x, y) - 0.5;
            for v in px.iter_mut() {
                *v += grain * 0.06;
            }
            for blob in &blobs {
                let dx = f64::from(x) - blob.cx;
                let dy = f64::from(y) - blob.cy;
                let dist = (dx * dx + dy * dy).sqrt();
                let r_eff = blob.effective_radius(dy.atan2(dx));
                let alpha = ((r_eff - dist) / EDGE_SOFT).clamp(0.0, 1.0);
                if alpha <= 0.0 {
                    continue;
                }
                let texture =
                    1.0 + blob.speckle * (pixel_noise(img_key, blob.noise_salt, x, y) - 0.5);
                let shade = 0.88 + 0.12 * (dist / r_eff).min(1.0);
                for (c, v) in px.iter_mut().enumerate() {
                    let blob_v = blob.color[c] * texture * shade;
                    *v = *v + (blob_v - *v) * alpha;
                }
            }
            let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x, y, image::Rgb([to_u8(px[0]), to_u8(px[1]), to_u8(px[2])]));
        }
    }
    img
}

/// Generate `n` samples with exactly `round(n * amf_fraction)` atypical
/// figures, write PNGs plus a manifest under `out_dir`, and return the
/// manifest. Output is byte-identical for identical `(n, amf_fraction,
/// seed)`.
pub fn generate_synthetic_dataset(
    n: usize,
    amf_fraction: f64,
    seed: u64,
    out_dir: &Path,
    fingerprint: Option<&str>,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be > 0".into()));
    }
    if !(amf_fraction > 0.0 && amf_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "amf_fraction {amf_fraction} outside (0, 1)"
        )));
    }
    let n_amf = (n as f64 * amf_fraction).round() as usize;
    let mut labels = vec![1u8; n_amf];
    labels.resize(n, 0u8);
    labels.shuffle(&mut derive_rng(seed, "synth/labels"));

    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut records = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let sample_id = format!("synth_{i:05}");
        let rel_path = format!("images/{sample_id}.png");
        let img = render_synthetic_sample(seed, i, label, &SynthOptions::default());
        let abs_path = out_dir.join(&rel_path);
        img.save(&abs_path).map_err(|e| Error::Image {
            path: abs_path.clone(),
            message: e.to_string(),
        })?;
        records.push(SampleRecord {
            sample_id,
            image_path: rel_path.into(),
            label,
            domain_id: (i % 4).to_string(),
            case_id: format!("case_{:04}", i / 10),
        });
    }

    let manifest = DatasetManifest::from_records(records, out_dir.to_path_buf());
    save_manifest(&manifest, &out_dir.join("manifest.csv"), fingerprint)?;
    log::info!(
        "generated {n} synthetic samples ({} {} / {} {}) under {}",
        manifest.n_amf,
        label_name(1),
        manifest.n_nmf,
        label_name(0),
        out_dir.display()
    );
    Ok(manifest)
}
