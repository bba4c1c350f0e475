//! Image preprocessing: center cropping, bilinear resize, per-channel
//! normalization and the stochastic training augmentation policy.
//!
//! All operations work on `FloatImage` (H x W x 3, values in [0, 1]) and are
//! pure given an explicit RNG, so worker pools can partition streams and stay
//! deterministic. The canonical pipelines are
//! crop -> resize -> augment -> normalize (training) and
//! crop -> resize -> normalize (evaluation / inference).

use image::RgbImage;
use ndarray::{s, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// H x W x 3 image with values in [0, 1].
pub type FloatImage = Array3<f32>;

/// Fraction of the side length retained around the center, and the side of
/// the tensor handed to the model after resizing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropSpec {
    pub ratio: f64,
    #[serde(default = "default_output_size")]
    pub output_size: usize,
}

fn default_output_size() -> usize {
    128
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec {
            ratio: 0.6,
            output_size: 128,
        }
    }
}

impl CropSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::InvalidCropRatio { ratio: self.ratio });
        }
        if self.output_size == 0 {
            return Err(Error::InvalidArgument("output_size must be > 0".into()));
        }
        Ok(())
    }
}

/// Magnitude limits for the shift-scale-rotate transform: shift as a fraction
/// of the side, scale as a relative factor, rotation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsrLimits {
    pub shift: f64,
    pub scale: f64,
    pub rotate_deg: f64,
}

impl Default for SsrLimits {
    fn default() -> Self {
        SsrLimits {
            shift: 0.0625,
            scale: 0.10,
            rotate_deg: 45.0,
        }
    }
}

/// Per-transform application probabilities, applied in the fixed order
/// transpose, horizontal flip, vertical flip, shift-scale-rotate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub p_transpose: f64,
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_ssr: f64,
    pub ssr_limits: SsrLimits,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            p_transpose: 0.5,
            p_hflip: 0.5,
            p_vflip: 0.5,
            p_ssr: 0.5,
            ssr_limits: SsrLimits::default(),
        }
    }
}

impl AugmentPolicy {
    /// Policy that never applies any transform (training path == eval path).
    pub fn disabled() -> Self {
        AugmentPolicy {
            p_transpose: 0.0,
            p_hflip: 0.0,
            p_vflip: 0.0,
            p_ssr: 0.0,
            ssr_limits: SsrLimits::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_transpose", self.p_transpose),
            ("p_hflip", self.p_hflip),
            ("p_vflip", self.p_vflip),
            ("p_ssr", self.p_ssr),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Per-channel mean/std used for input standardization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormalizationStats {
    /// The ImageNet statistics.
    fn default() -> Self {
        NormalizationStats {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl NormalizationStats {
    pub fn validate(&self) -> Result<()> {
        for &s in &self.std {
            if s.is_nan() || s <= 0.0 {
                return Err(Error::InvalidNormalization { std: s });
            }
        }
        Ok(())
    }
}

/// Convert an 8-bit RGB image into a float image in [0, 1].
pub fn image_to_float(img: &RgbImage) -> FloatImage {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        f32::from(img.get_pixel(x as u32, y as u32).0[c]) / 255.0
    })
}

/// Convert a float image in [0, 1] back to 8-bit RGB (for rendering).
pub fn float_to_image(img: &FloatImage) -> RgbImage {
    let (h, w, _) = img.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            (img[(y as usize, x as usize, c)].clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Side length of the center crop for a square image of side `h`.
pub fn crop_side(h: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidCropRatio { ratio });
    }
    let c = (ratio * h as f64).round() as usize;
    if c < 1 {
        return Err(Error::InvalidArgument(format!(
            "crop side rounds to zero for h={h}, ratio={ratio}"
        )));
    }
    Ok(c)
}

/// Leading-edge offset of the center crop (floor of the half margin).
pub fn crop_offset(h: usize, side: usize) -> usize {
    (h - side) / 2
}

/// Extract the centered `round(ratio * H)`-sided square. Pixel values are
/// copied untouched; the odd remainder goes to the trailing edge.
pub fn center_crop(img: &FloatImage, spec: &CropSpec) -> Result<FloatImage> {
    let (h, w, _) = img.dim();
    if h != w {
        return Err(Error::NonSquareImage {
            height: h,
            width: w,
        });
    }
    let side = crop_side(h, spec.ratio)?;
    let off = crop_offset(h, side);
    Ok(img
        .slice(s![off..off + side, off..off + side, ..])
        .to_owned())
}

/// Bilinear resize (half-pixel-center convention) to `size` x `size`.
pub fn resize(img: &FloatImage, size: usize) -> Result<FloatImage> {
    if size == 0 {
        return Err(Error::InvalidArgument("resize target must be > 0".into()));
    }
    let (h, w, _) = img.dim();
    let scale_y = h as f64 / size as f64;
    let scale_x = w as f64 / size as f64;
    let mut out = Array3::zeros((size, size, 3));
    let src = img.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("standard layout");
    // Horizontal sampling positions are shared by every row.
    let xcoords: Vec<(usize, usize, f32)> = (0..size)
        .map(|ox| {
            let sx = (ox as f64 + 0.5) * scale_x - 0.5;
            let x0f = sx.floor();
            let tx = (sx - x0f) as f32;
            let x0 = (x0f.max(0.0) as usize).min(w - 1);
            let x1 = ((x0f + 1.0).max(0.0) as usize).min(w - 1);
            (3 * x0, 3 * x1, tx)
        })
        .collect();
    for oy in 0..size {
        let sy = (oy as f64 + 0.5) * scale_y - 0.5;
        let y0f = sy.floor();
        let ty = (sy - y0f) as f32;
        let y0 = (y0f.max(0.0) as usize).min(h - 1);
        let y1 = ((y0f + 1.0).max(0.0) as usize).min(h - 1);
        let row0 = &src[y0 * w * 3..(y0 + 1) * w * 3];
        let row1 = &src[y1 * w * 3..(y1 + 1) * w * 3];
        let out_row = &mut dst[oy * size * 3..(oy + 1) * size * 3];
        for (px, &(x0, x1, tx)) in out_row.chunks_exact_mut(3).zip(&xcoords) {
            for (c, v) in px.iter_mut().enumerate() {
                let v00 = row0[x0 + c];
                let v01 = row0[x1 + c];
                let v10 = row1[x0 + c];
                let v11 = row1[x1 + c];
                let top = v00 + (v01 - v00) * tx;
                let bot = v10 + (v11 - v10) * tx;
                *v = top + (bot - top) * ty;
            }
        }
    }
    Ok(out)
}

/// Per-channel standardization: out = (in - mean) / std.
pub fn normalize(img: &FloatImage, stats: &NormalizationStats) -> Result<FloatImage> {
    stats.validate()?;
    let mean: [f32; 3] = stats.mean.map(|m| m as f32);
    let std: [f32; 3] = stats.std.map(|s| s as f32);
    let mut out = img.clone();
    for px in out
        .as_slice_mut()
        .expect("standard layout")
        .chunks_exact_mut(3)
    {
        for (c, v) in px.iter_mut().enumerate() {
            *v = (*v - mean[c]) / std[c];
        }
    }
    Ok(out)
}

/// Inverse of [`normalize`].
pub fn denormalize(img: &FloatImage, stats: &NormalizationStats) -> Result<FloatImage> {
    stats.validate()?;
    let mean: [f32; 3] = stats.mean.map(|m| m as f32);
    let std: [f32; 3] = stats.std.map(|s| s as f32);
    let mut out = img.clone();
    for px in out
        .as_slice_mut()
        .expect("standard layout")
        .chunks_exact_mut(3)
    {
        for (c, v) in px.iter_mut().enumerate() {
            *v = *v * std[c] + mean[c];
        }
    }
    Ok(out)
}

/// HWC -> CHW, the layout the model consumes.
pub fn to_model_input(img: &FloatImage) -> Array3<f32> {
    let (h, w, _) = img.dim();
    let src = img.as_slice().expect("standard layout");
    let mut out = Array3::<f32>::zeros((3, h, w));
    let dst = out.as_slice_mut().expect("standard layout");
    for c in 0..3 {
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for (dv, px) in plane.iter_mut().zip(src.chunks_exact(3)) {
            *dv = px[c];
        }
    }
    out
}

// All three produce fresh standard-layout arrays; downstream stages rely on
// contiguous storage.
fn transpose_hw(img: &FloatImage) -> FloatImage {
    img.view().permuted_axes([1, 0, 2]).as_standard_layout().into_owned()
}

fn hflip(img: &FloatImage) -> FloatImage {
    img.slice(s![.., ..;-1, ..]).as_standard_layout().into_owned()
}

fn vflip(img: &FloatImage) -> FloatImage {
    img.slice(s![..;-1, .., ..]).as_standard_layout().into_owned()
}

/// Mirror an index into [0, n) without repeating the edge sample.
fn reflect_101(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as i64 {
        m = period - m;
    }
    m as usize
}

fn bilinear_reflect(img: &FloatImage, sy: f64, sx: f64, c: usize) -> f32 {
    let (h, w, _) = img.dim();
    let y0f = sy.floor();
    let x0f = sx.floor();
    let ty = (sy - y0f) as f32;
    let tx = (sx - x0f) as f32;
    let y0 = reflect_101(y0f as i64, h);
    let y1 = reflect_101(y0f as i64 + 1, h);
    let x0 = reflect_101(x0f as i64, w);
    let x1 = reflect_101(x0f as i64 + 1, w);
    let v00 = img[(y0, x0, c)];
    let v01 = img[(y0, x1, c)];
    let v10 = img[(y1, x0, c)];
    let v11 = img[(y1, x1, c)];
    let top = v00 + (v01 - v00) * tx;
    let bot = v10 + (v11 - v10) * tx;
    top + (bot - top) * ty
}

/// Affine warp: rotate by `angle_deg` and scale around the image center,
/// then shift; sampled with bilinear interpolation and reflected borders.
fn shift_scale_rotate(
    img: &FloatImage,
    shift_x: f64,
    shift_y: f64,
    scale: f64,
    angle_deg: f64,
) -> FloatImage {
    let (h, w, _) = img.dim();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let theta = angle_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let tx = shift_x * w as f64;
    let ty = shift_y * h as f64;

    let mut out = Array3::zeros((h, w, 3));
    for oy in 0..h {
        for ox in 0..w {
            // Invert the forward map: undo shift, then rotate back and
            // unscale around the center.
            let dy = oy as f64 - cy - ty;
            let dx = ox as f64 - cx - tx;
            let sx = (dx * cos_t + dy * sin_t) / scale + cx;
            let sy = (-dx * sin_t + dy * cos_t) / scale + cy;
            for c in 0..3 {
                out[(oy, ox, c)] = bilinear_reflect(img, sy, sx, c);
            }
        }
    }
    out
}

/// Apply the augmentation policy in fixed order (transpose, hflip, vflip,
/// shift-scale-rotate), each gated by its own probability. Deterministic
/// given the RNG state; the gate draws are consumed whether or not a
/// transform fires.
pub fn augment<R: Rng>(img: &FloatImage, policy: &AugmentPolicy, rng: &mut R) -> FloatImage {
    let apply_transpose = rng.random::<f64>() < policy.p_transpose;
    let apply_hflip = rng.random::<f64>() < policy.p_hflip;
    let apply_vflip = rng.random::<f64>() < policy.p_vflip;
    let apply_ssr = rng.random::<f64>() < policy.p_ssr;

    let mut out = img.clone();
    if apply_transpose {
        out = transpose_hw(&out);
    }
    if apply_hflip {
        out = hflip(&out);
    }
    if apply_vflip {
        out = vflip(&out);
    }
    if apply_ssr {
        let lim = policy.ssr_limits;
        let shift_x = rng.random_range(-lim.shift..=lim.shift);
        let shift_y = rng.random_range(-lim.shift..=lim.shift);
        let scale = rng.random_range(1.0 - lim.scale..=1.0 + lim.scale);
        let angle = rng.random_range(-lim.rotate_deg..=lim.rotate_deg);
        out = shift_scale_rotate(&out, shift_x, shift_y, scale, angle);
    }
    out
}

/// Training pipeline: crop -> resize -> augment -> normalize -> CHW.
pub fn preprocess_train<R: Rng>(
    img: &FloatImage,
    crop: &CropSpec,
    policy: &AugmentPolicy,
    stats: &NormalizationStats,
    rng: &mut R,
) -> Result<Array3<f32>> {
    let cropped = center_crop(img, crop)?;
    let resized = resize(&cropped, crop.output_size)?;
    let augmented = augment(&resized, policy, rng);
    let normed = normalize(&augmented, stats)?;
    Ok(to_model_input(&normed))
}

/// Evaluation / inference pipeline: crop -> resize -> normalize -> CHW.
/// No test-time augmentation.
pub fn preprocess_eval(
    img: &FloatImage,
    crop: &CropSpec,
    stats: &NormalizationStats,
) -> Result<Array3<f32>> {
    let cropped = center_crop(img, crop)?;
    let resized = resize(&cropped, crop.output_size)?;
    let normed = normalize(&resized, stats)?;
    Ok(to_model_input(&normed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn gradient_image(h: usize, w: usize) -> FloatImage {
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            ((y * 31 + x * 7 + c * 131) % 256) as f32 / 255.0
        })
    }

    #[test]
    fn crop_60_percent_of_128_is_77_at_offset_25() {
        let side = crop_side(128, 0.6).unwrap();
        assert_eq!(side, 77);
        assert_eq!(crop_offset(128, side), 25);

        let img = gradient_image(128, 128);
        let spec = CropSpec {
            ratio: 0.6,
            output_size: 128,
        };
        let cropped = center_crop(&img, &spec).unwrap();
        assert_eq!(cropped.dim(), (77, 77, 3));
        // Rows/cols 25..=101 inclusive, values untouched.
        for (y, x) in [(0, 0), (76, 76), (40, 3)] {
            for c in 0..3 {
                assert_eq!(cropped[(y, x, c)], img[(y + 25, x + 25, c)]);
            }
        }
    }

    #[test]
    fn crop_ratio_one_is_identity() {
        let img = gradient_image(64, 64);
        let spec = CropSpec {
            ratio: 1.0,
            output_size: 64,
        };
        assert_eq!(center_crop(&img, &spec).unwrap(), img);
    }

    #[test]
    fn crop_half_of_100_is_50_at_offset_25() {
        let side = crop_side(100, 0.5).unwrap();
        assert_eq!(side, 50);
        assert_eq!(crop_offset(100, side), 25);
    }

    #[test]
    fn crop_rejects_bad_input() {
        let img = gradient_image(10, 12);
        let spec = CropSpec::default();
        assert!(matches!(
            center_crop(&img, &spec),
            Err(Error::NonSquareImage { .. })
        ));
        assert!(matches!(
            crop_side(128, 0.0),
            Err(Error::InvalidCropRatio { .. })
        ));
        assert!(matches!(
            crop_side(128, 1.5),
            Err(Error::InvalidCropRatio { .. })
        ));
        assert!(crop_side(2, 0.2).is_err()); // rounds to zero
    }

    #[test]
    fn resize_77_to_128_shape_and_identity() {
        let img = gradient_image(77, 77);
        let up = resize(&img, 128).unwrap();
        assert_eq!(up.dim(), (128, 128, 3));

        let same = resize(&img, 77).unwrap();
        assert_eq!(same, img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Array3::from_elem((10, 10, 3), 0.37f32);
        let up = resize(&img, 20).unwrap();
        assert_eq!(up.dim(), (20, 20, 3));
        for &v in up.iter() {
            assert_eq!(v, 0.37);
        }
    }

    #[test]
    fn normalize_identity_and_known_value() {
        let img = gradient_image(8, 8);
        let id = NormalizationStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        assert_eq!(normalize(&img, &id).unwrap(), img);

        let stats = NormalizationStats::default();
        let mut px = Array3::zeros((1, 1, 3));
        px[(0, 0, 0)] = 0.485;
        let out = normalize(&px, &stats).unwrap();
        assert!(out[(0, 0, 0)].abs() < 1e-6);

        // Constant image equal to the channel means -> all-zero output.
        let means = Array3::from_shape_fn((4, 4, 3), |(_, _, c)| stats.mean[c] as f32);
        let out = normalize(&means, &stats).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn normalize_rejects_zero_std() {
        let stats = NormalizationStats {
            mean: [0.0; 3],
            std: [0.5, 0.0, 0.5],
        };
        assert!(matches!(
            normalize(&gradient_image(2, 2), &stats),
            Err(Error::InvalidNormalization { .. })
        ));
    }

    #[test]
    fn normalize_denormalize_roundtrip() {
        let img = gradient_image(16, 16);
        let stats = NormalizationStats::default();
        let back = denormalize(&normalize(&img, &stats).unwrap(), &stats).unwrap();
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn augment_all_skip_is_identity() {
        let img = gradient_image(32, 32);
        let mut rng = derive_rng(1, "test");
        let out = augment(&img, &AugmentPolicy::disabled(), &mut rng);
        assert_eq!(out, img);
    }

    #[test]
    fn hflip_twice_is_identity() {
        let img = gradient_image(32, 32);
        let policy = AugmentPolicy {
            p_transpose: 0.0,
            p_hflip: 1.0,
            p_vflip: 0.0,
            p_ssr: 0.0,
            ssr_limits: SsrLimits::default(),
        };
        let mut rng = derive_rng(2, "test");
        let once = augment(&img, &policy, &mut rng);
        assert_ne!(once, img);
        let twice = augment(&once, &policy, &mut rng);
        assert_eq!(twice, img);
    }

    #[test]
    fn augment_fixed_seed_is_stable() {
        let img = gradient_image(64, 64);
        let policy = AugmentPolicy::default();
        let out1 = augment(&img, &policy, &mut derive_rng(9, "aug"));
        let out2 = augment(&img, &policy, &mut derive_rng(9, "aug"));
        assert_eq!(out1, out2);
        // The stream matters: a different purpose gives a different draw.
        let out3 = augment(&img, &policy, &mut derive_rng(9, "other"));
        // (Could collide but does not for these seeds.)
        assert_ne!(out1, out3);
    }

    #[test]
    fn ssr_applied_changes_image_and_stays_finite() {
        let img = gradient_image(32, 32);
        let policy = AugmentPolicy {
            p_transpose: 0.0,
            p_hflip: 0.0,
            p_vflip: 0.0,
            p_ssr: 1.0,
            ssr_limits: SsrLimits::default(),
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let out = augment(&img, &policy, &mut rng);
        assert_ne!(out, img);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn reflect_101_folds_as_expected() {
        assert_eq!(reflect_101(-1, 5), 1);
        assert_eq!(reflect_101(0, 5), 0);
        assert_eq!(reflect_101(4, 5), 4);
        assert_eq!(reflect_101(5, 5), 3);
        assert_eq!(reflect_101(-2, 5), 2);
        assert_eq!(reflect_101(3, 1), 0);
    }

    #[test]
    fn eval_pipeline_shape_contract() {
        let img = gradient_image(128, 128);
        let out = preprocess_eval(
            &img,
            &CropSpec::default(),
            &NormalizationStats::default(),
        )
        .unwrap();
        assert_eq!(out.dim(), (3, 128, 128));
    }

    #[test]
    fn train_all_skip_equals_eval() {
        let img = gradient_image(128, 128);
        let crop = CropSpec::default();
        let stats = NormalizationStats::default();
        let mut rng = derive_rng(3, "t");
        let train =
            preprocess_train(&img, &crop, &AugmentPolicy::disabled(), &stats, &mut rng).unwrap();
        let eval = preprocess_eval(&img, &crop, &stats).unwrap();
        assert_eq!(train, eval);
    }

    proptest! {
        #[test]
        fn crop_side_and_margins(h in 2usize..=512, ridx in 0usize..5) {
            let ratio = [0.25, 0.5, 0.6, 0.75, 1.0][ridx];
            if let Ok(side) = crop_side(h, ratio) {
                prop_assert_eq!(side, (ratio * h as f64).round() as usize);
                let off = crop_offset(h, side);
                let trailing = h - side - off;
                // Margin asymmetry at most one pixel.
                prop_assert!(off.abs_diff(trailing) <= 1);
            } else {
                // Only tiny sides may round to zero.
                prop_assert!((ratio * h as f64).round() < 1.0);
            }
        }

        #[test]
        fn flips_are_involutions(seed in 0u64..64) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = Array3::from_shape_fn((16, 16, 3), |_| rng.random::<f32>());
            prop_assert_eq!(hflip(&hflip(&img)), img.clone());
            prop_assert_eq!(vflip(&vflip(&img)), img.clone());
            prop_assert_eq!(transpose_hw(&transpose_hw(&img)), img);
        }
    }
}
