//! Dynamic loss scaling for reduced-precision training.
//!
//! The reduced-precision path quantizes activations through f16 at layer
//! boundaries (see the model's `forward_trace`); this scaler keeps small
//! gradients representable there. Parameter updates always run in f32.

pub struct GradScaler {
    scale: f64,
    growth_factor: f64,
    backoff_factor: f64,
    growth_interval: u64,
    good_steps: u64,
}

impl Default for GradScaler {
    fn default() -> Self {
        GradScaler {
            scale: 65536.0,
            growth_factor: 2.0,
            backoff_factor: 0.5,
            growth_interval: 2000,
            good_steps: 0,
        }
    }
}

impl GradScaler {
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Unscale gradients in place; returns false (and backs the scale off)
    /// when any gradient is non-finite, in which case the step is skipped.
    pub fn unscale_and_check(&mut self, grads: &mut [Vec<f32>]) -> bool {
        let inv = (1.0 / self.scale) as f32;
        let mut finite = true;
        for tensor in grads.iter_mut() {
            for g in tensor.iter_mut() {
                *g *= inv;
                if !g.is_finite() {
                    finite = false;
                }
            }
        }
        if finite {
            self.good_steps += 1;
            if self.good_steps >= self.growth_interval {
                self.scale *= self.growth_factor;
                self.good_steps = 0;
            }
        } else {
            self.scale = (self.scale * self.backoff_factor).max(1.0);
            self.good_steps = 0;
        }
        finite
    }
}
