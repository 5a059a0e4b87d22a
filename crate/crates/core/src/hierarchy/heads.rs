use rand::Rng;

use crate::model::uniform_fill;
use crate::tensor::{dot, Matrix, Vector};

/// Logistic heads on issue and release states, and a one-hidden-layer tanh
/// perceptron on the project vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub issue_w: Vector,
    pub issue_b: Vector,
    pub release_w: Vector,
    pub release_b: Vector,
    /// `mlp_hidden × release_hidden`
    pub project_w1: Matrix,
    pub project_b1: Vector,
    pub project_w2: Vector,
    pub project_b2: Vector,
}

/// Intermediate values of the project perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectHeadCache {
    pub hidden: Vector,
    pub logit: f64,
}

impl HeadParams {
    pub fn zeros(issue_dim: usize, release_dim: usize, mlp_hidden: usize) -> Self {
        Self {
            issue_w: Vector::zeros(issue_dim),
            issue_b: Vector::zeros(1),
            release_w: Vector::zeros(release_dim),
            release_b: Vector::zeros(1),
            project_w1: Matrix::zeros(mlp_hidden, release_dim),
            project_b1: Vector::zeros(mlp_hidden),
            project_w2: Vector::zeros(mlp_hidden),
            project_b2: Vector::zeros(1),
        }
    }

    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init(&mut self, rng: &mut impl Rng) {
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let (di, dr, dm) = (self.issue_w.len(), self.release_w.len(), self.project_w2.len());
        uniform_fill(&mut self.issue_w, fan(di), rng);
        uniform_fill(&mut self.release_w, fan(dr), rng);
        uniform_fill(self.project_w1.as_mut_slice(), fan(dr), rng);
        uniform_fill(&mut self.project_w2, fan(dm), rng);
        for b in [&mut self.issue_b, &mut self.release_b, &mut self.project_b1, &mut self.project_b2] {
            b.as_mut_slice().fill(0.0);
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let v = |x: &Vector| vec![x.len()];
        vec![
            ("issue_head.w", v(&self.issue_w), self.issue_w.as_slice()),
            ("issue_head.b", v(&self.issue_b), self.issue_b.as_slice()),
            ("release_head.w", v(&self.release_w), self.release_w.as_slice()),
            ("release_head.b", v(&self.release_b), self.release_b.as_slice()),
            (
                "project_head.W1",
                vec![self.project_w1.rows(), self.project_w1.cols()],
                self.project_w1.as_slice(),
            ),
            ("project_head.b1", v(&self.project_b1), self.project_b1.as_slice()),
            ("project_head.w2", v(&self.project_w2), self.project_w2.as_slice()),
            ("project_head.b2", v(&self.project_b2), self.project_b2.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.issue_w.as_mut_slice(),
            self.issue_b.as_mut_slice(),
            self.release_w.as_mut_slice(),
            self.release_b.as_mut_slice(),
            self.project_w1.as_mut_slice(),
            self.project_b1.as_mut_slice(),
            self.project_w2.as_mut_slice(),
            self.project_b2.as_mut_slice(),
        ]
    }

    pub fn issue_logit(&self, h: &[f64]) -> f64 {
        dot(&self.issue_w, h) + self.issue_b[0]
    }

    pub fn release_logit(&self, g: &[f64]) -> f64 {
        dot(&self.release_w, g) + self.release_b[0]
    }

    pub fn project_forward(&self, s: &[f64]) -> ProjectHeadCache {
        let mut hidden = self.project_b1.clone();
        self.project_w1.matvec_acc(s, &mut hidden);
        for a in hidden.iter_mut() {
            *a = a.tanh();
        }
        let logit = dot(&self.project_w2, &hidden) + self.project_b2[0];
        ProjectHeadCache { hidden, logit }
    }

    /// Backward through the perceptron for upstream logit gradient `dz`.
    /// Accumulates into `grads` and returns ∂/∂s.
    pub fn project_backward(&self, s: &[f64], cache: &ProjectHeadCache, dz: f64, grads: &mut HeadParams) -> Vector {
        grads.project_w2.add_scaled(dz, &cache.hidden);
        grads.project_b2[0] += dz;
        let da: Vec<f64> = cache
            .hidden
            .iter()
            .zip(self.project_w2.iter())
            .map(|(h, w)| dz * w * (1.0 - h * h))
            .collect();
        grads.project_w1.add_outer(&da, s);
        grads.project_b1.add_scaled(1.0, &da);
        let mut ds = Vector::zeros(s.len());
        self.project_w1.matvec_t_acc(&da, &mut ds);
        ds
    }
}
