//! Browser demo: three interactive views over the core pipeline, compiled to
//! WebAssembly. Everything heavy (rendering, crop geometry, the cosine
//! schedule, metrics) calls straight into the library; this crate only
//! marshals pixels and JSON across the boundary.
//!
//! Build with crates/demo/build-demo.sh, then serve crates/demo/www.

use wasm_bindgen::prelude::*;

use mitoslice::data_model::{render_synthetic_sample, SynthOptions};
use mitoslice::ensemble::decide;
use mitoslice::metrics::{balanced_accuracy, basic_rates, confusion, roc_auc, roc_curve};
use mitoslice::model::sigmoid;
use mitoslice::preprocess::{
    center_crop, crop_offset, crop_side, float_to_image, image_to_float, resize, CropSpec,
};
use mitoslice::rng::derive_rng;
use mitoslice::train::cosine_lr;
use rand::Rng;
use serde::Serialize;

fn to_rgba(img: &image::RgbImage) -> Vec<u8> {
    let mut out = Vec::with_capacity((img.width() * img.height() * 4) as usize);
    for px in img.pixels() {
        out.extend_from_slice(&[px.0[0], px.0[1], px.0[2], 255]);
    }
    out
}

fn js_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// One synthetic sample plus its center-crop view: the original pixels, the
/// crop rectangle, and the crop-then-resize result the model would consume.
#[wasm_bindgen]
pub struct SamplePreview {
    original: Vec<u8>,
    processed: Vec<u8>,
    crop_side: u32,
    crop_offset: u32,
    side: u32,
}

#[wasm_bindgen]
impl SamplePreview {
    #[wasm_bindgen(getter)]
    pub fn original(&self) -> Vec<u8> {
        self.original.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn processed(&self) -> Vec<u8> {
        self.processed.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn crop_side(&self) -> u32 {
        self.crop_side
    }

    #[wasm_bindgen(getter)]
    pub fn crop_offset(&self) -> u32 {
        self.crop_offset
    }

    #[wasm_bindgen(getter)]
    pub fn side(&self) -> u32 {
        self.side
    }
}

/// Render sample `index` of the synthetic dataset for `seed` and show what
/// a given center-crop ratio keeps. RGBA buffers are 128x128.
#[wasm_bindgen]
pub fn render_sample(
    seed: u32,
    index: u32,
    atypical: bool,
    crop_ratio: f64,
) -> Result<SamplePreview, String> {
    let label = u8::from(atypical);
    let img_u8 = render_synthetic_sample(
        u64::from(seed),
        index as usize,
        label,
        &SynthOptions::default(),
    );
    let float = image_to_float(&img_u8);
    let (h, _, _) = float.dim();
    let spec = CropSpec {
        ratio: crop_ratio,
        output_size: 128,
    };
    let cropped = center_crop(&float, &spec).map_err(js_err)?;
    let resized = resize(&cropped, spec.output_size).map_err(js_err)?;
    let side = crop_side(h, crop_ratio).map_err(js_err)?;
    Ok(SamplePreview {
        original: to_rgba(&img_u8),
        processed: to_rgba(&float_to_image(&resized)),
        crop_side: side as u32,
        crop_offset: crop_offset(h, side) as u32,
        side: h as u32,
    })
}

/// Cosine annealing values at t = 0..=total, the exact schedule the trainer
/// steps through (per-epoch when total = epochs).
#[wasm_bindgen]
pub fn lr_schedule_curve(lr_max: f64, lr_min: f64, total: u32) -> Result<Vec<f64>, String> {
    (0..=total as usize)
        .map(|t| cosine_lr(t, total as usize, lr_max, lr_min).map_err(js_err))
        .collect()
}

#[derive(Serialize)]
struct ThresholdReport {
    n: usize,
    threshold: f64,
    roc_auc: Option<f64>,
    accuracy: Option<f64>,
    sensitivity: Option<f64>,
    specificity: Option<f64>,
    balanced_accuracy: Option<f64>,
    counts: [u64; 4],
    roc: Vec<(f64, f64)>,
    operating_point: (f64, f64),
}

/// Draw synthetic ensemble probabilities for two classes separated by
/// `separation` logits, threshold them, and report the full metric set plus
/// the ROC curve. Returns JSON.
#[wasm_bindgen]
pub fn threshold_explorer(
    seed: u32,
    n_per_class: u32,
    separation: f64,
    threshold: f64,
) -> Result<String, String> {
    if n_per_class == 0 {
        return Err("need at least one sample per class".to_string());
    }
    let mut rng = derive_rng(u64::from(seed), "demo/scores");
    let mut gaussian = move || {
        // Box-Muller from two uniform draws.
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let n = n_per_class as usize;
    let mut scores = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for label in [0u8, 1u8] {
        let center = if label == 1 {
            separation / 2.0
        } else {
            -separation / 2.0
        };
        for _ in 0..n {
            scores.push(sigmoid(center + gaussian()));
            labels.push(label);
        }
    }
    let preds: Vec<u8> = scores
        .iter()
        .map(|&s| decide(s, threshold))
        .collect::<Result<_, _>>()
        .map_err(js_err)?;
    let c = confusion(&labels, &preds).map_err(js_err)?;
    let rates = basic_rates(&c);
    let report = ThresholdReport {
        n: 2 * n,
        threshold,
        roc_auc: roc_auc(&scores, &labels).map_err(js_err)?,
        accuracy: rates.accuracy,
        sensitivity: rates.sensitivity,
        specificity: rates.specificity,
        balanced_accuracy: balanced_accuracy(&c),
        counts: [
            c.true_positives,
            c.false_positives,
            c.true_negatives,
            c.false_negatives,
        ],
        roc: roc_curve(&scores, &labels).map_err(js_err)?,
        operating_point: (
            rates.specificity.map_or(0.0, |s| 1.0 - s),
            rates.sensitivity.unwrap_or(0.0),
        ),
    };
    serde_json::to_string(&report).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_buffers_have_rgba_shape() {
        let p = render_sample(7, 3, true, 0.6).unwrap();
        assert_eq!(p.original.len(), 128 * 128 * 4);
        assert_eq!(p.processed.len(), 128 * 128 * 4);
        assert_eq!(p.crop_side, 77);
        assert_eq!(p.crop_offset, 25);
        assert_eq!(p.side, 128);
        // Alpha channel is opaque.
        assert!(p.original.iter().skip(3).step_by(4).all(|&a| a == 255));
        assert!(render_sample(7, 3, true, 1.7).is_err());
    }

    #[test]
    fn schedule_curve_hits_the_endpoints() {
        let curve = lr_schedule_curve(1e-4, 0.0, 5).unwrap();
        assert_eq!(curve.len(), 6);
        assert!((curve[0] - 1e-4).abs() < 1e-12);
        assert!(curve[5].abs() < 1e-12);
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn threshold_report_is_consistent_json() {
        let json = threshold_explorer(3, 200, 2.0, 0.5).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let sens = v["sensitivity"].as_f64().unwrap();
        let spec = v["specificity"].as_f64().unwrap();
        let ba = v["balanced_accuracy"].as_f64().unwrap();
        assert!((ba - (sens + spec) / 2.0).abs() < 1e-12);
        assert!(v["roc_auc"].as_f64().unwrap() > 0.5);
        let roc = v["roc"].as_array().unwrap();
        assert_eq!(roc.first().unwrap()[0], 0.0);
        assert_eq!(roc.last().unwrap()[1], 1.0);

        // Same seed, same JSON.
        assert_eq!(json, threshold_explorer(3, 200, 2.0, 0.5).unwrap());
    }
}
