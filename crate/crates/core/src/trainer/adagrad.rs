use crate::scorenet::ModelParams;

/// Per-coordinate adaptive learning rates from accumulated squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGrad {
    pub learning_rate: f64,
    pub epsilon: f64,
    accum: Vec<f64>,
}

impl AdaGrad {
    pub fn new(learning_rate: f64, num_params: usize) -> Self {
        AdaGrad {
            learning_rate,
            epsilon: 1e-8,
            accum: vec![0.0; num_params],
        }
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accum
    }

    /// `G += g^2; theta -= lr * g / (sqrt(G) + eps)`.
    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        assert_eq!(
            params.len(),
            self.accum.len(),
            "optimizer sized for another model"
        );
        assert_eq!(grad.len(), self.accum.len(), "gradient sized for another model");
        for ((theta, &g), acc) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(self.accum.iter_mut())
        {
            *acc += g * g;
            *theta -= self.learning_rate * g / (acc.sqrt() + self.epsilon);
        }
    }
}
