//! Adam with classical (coupled) L2 weight decay.

/// First/second moment state, one pair of buffers per parameter tensor.
pub struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(shapes: &[usize]) -> Self {
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(
        &mut self,
        params: &mut [&mut [f32]],
        grads: &[Vec<f32>],
        lr: f64,
        weight_decay: f64,
    ) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        let lr_f = lr as f32;
        let wd = weight_decay as f32;
        let eps = self.eps as f32;
        let inv_bias1 = (1.0 / bias1) as f32;
        let inv_bias2 = (1.0 / bias2) as f32;

        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..param.len() {
                let g = grad[i] + wd * param[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] * inv_bias1;
                let v_hat = v[i] * inv_bias2;
                param[i] -= lr_f * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
