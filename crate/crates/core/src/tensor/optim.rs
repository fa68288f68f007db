//! Optimizers and learning-rate schedules used by both training stages.

use super::Param;

/// Adaptive-moment optimizer state over a fixed parameter list.
///
/// `decoupled = true` gives AdamW (weight decay applied directly to the
/// parameter); `false` gives classical Adam with L2-coupled decay folded
/// into the gradient.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub decoupled: bool,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn adamw(params: &[&Param], lr: f64, weight_decay: f64, eps: f64, betas: (f64, f64)) -> Self {
        Self::new(params, lr, weight_decay, eps, betas, true)
    }

    pub fn adam(params: &[&Param], lr: f64, weight_decay: f64, eps: f64, betas: (f64, f64)) -> Self {
        Self::new(params, lr, weight_decay, eps, betas, false)
    }

    fn new(
        params: &[&Param],
        lr: f64,
        weight_decay: f64,
        eps: f64,
        betas: (f64, f64),
        decoupled: bool,
    ) -> Self {
        OptimizerState {
            lr,
            weight_decay,
            eps,
            beta1: betas.0,
            beta2: betas.1,
            decoupled,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    /// One update over all parameters. `grads` must align with the parameter
    /// list the state was built from, shape for shape.
    pub fn step(&mut self, params: &mut [&mut Param], grads: &[Vec<f64>]) {
        assert_eq!(params.len(), self.m.len(), "optimizer: parameter count changed");
        assert_eq!(params.len(), grads.len(), "optimizer: gradient count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(
                param.numel(),
                grad.len(),
                "optimizer: gradient shape mismatch for {}",
                param.name
            );
            for i in 0..grad.len() {
                let mut g = grad[i];
                if !self.decoupled && self.weight_decay != 0.0 {
                    g += self.weight_decay * param.value[i];
                }
                if self.decoupled && self.weight_decay != 0.0 {
                    param.value[i] -= self.lr * self.weight_decay * param.value[i];
                }
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param.value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Global-norm gradient clipping. If the joint L2 norm exceeds `max_norm`,
/// every gradient is scaled by `max_norm / norm`; returns the scale applied.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip_gradients: max_norm must be positive");
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum();
    let norm = sq.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for g in grads.iter_mut() {
        for x in g.iter_mut() {
            *x *= scale;
        }
    }
    scale
}

/// Piecewise-constant decay: rate(epoch) = base * gamma^(#milestones <= epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl LrSchedule {
    pub fn new(base: f64, mut milestones: Vec<usize>, gamma: f64) -> Self {
        milestones.sort_unstable();
        LrSchedule {
            base,
            milestones,
            gamma,
        }
    }

    pub fn constant(base: f64) -> Self {
        Self::new(base, vec![], 1.0)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base * self.gamma.powi(passed as i32)
    }
}
