//! Time-aware LSTM cell with exact backpropagation through time.
//!
//! One step computes, with φ = [`time_features`]`(Δ)` and d = [`decay`]`(Δ)`:
//!
//! ```text
//! f  = σ(W_f x_t + P_f p_{t-1} + U_f h_{t-1} + Q_f φ + b_f)
//! i  = σ(W_i x_t + P_i p_{t-1} + U_i h_{t-1} + Q_i φ + b_i)
//! o  = σ(W_o x_t + P_o p_t     + U_o h_{t-1}        + b_o)
//! ĉ  = tanh(W_c x_t + P_c p_t  + U_c h_{t-1}        + b_c)
//! c_t = d · (f ⊙ c_{t-1}) + i ⊙ ĉ
//! h_t = o ⊙ tanh(c_t)
//! ```
//!
//! The forget and input gates look at the previous issue's resolution, the
//! output gate and candidate at the current one. `Q_f`/`Q_i` only take part in
//! [`TimeMode::Parametric`]; the decay factor differs from 1 only in
//! [`TimeMode::Monotonic`].
//!
//! The same cell without a resolution channel and without time handling is the
//! plain LSTM used at release level.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{time_features, IssueStepInput, TIME_FEATURE_DIM};
use crate::tensor::{sigmoid_scalar, Matrix, Vector};

/// How elapsed time between steps enters the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    #[default]
    None,
    /// Carried memory is scaled by 1 / ln(e + Δ).
    Monotonic,
    /// Learnable weights on φ(Δ) in the forget and input gates.
    Parametric,
}

impl TimeMode {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "none" => Some(Self::None),
            "monotonic" => Some(Self::Monotonic),
            "parametric" => Some(Self::Parametric),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Monotonic => "monotonic",
            Self::Parametric => "parametric",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LstmError {
    #[error("cannot unroll an empty input sequence")]
    EmptySequence,
}

/// Multiplicative attenuation of carried memory after a gap of `delta_days`.
pub fn decay(delta_days: f64, mode: TimeMode) -> f64 {
    match mode {
        TimeMode::Monotonic => 1.0 / (std::f64::consts::E + delta_days).ln(),
        TimeMode::None | TimeMode::Parametric => 1.0,
    }
}

/// Gate order used by every per-gate array: forget, input, output, candidate.
pub const GATES: [&str; 4] = ["f", "i", "o", "c"];
const F: usize = 0;
const I: usize = 1;
const O: usize = 2;
const C: usize = 3;

/// Learnable tensors of one cell. Also used, zero-initialized, as the
/// gradient bundle for those tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAwareLstmParams {
    /// `W_g`: hidden × input.
    pub input: [Matrix; 4],
    /// `P_g`: hidden × resolution. Absent for the release-level cell.
    pub resolution: Option<[Matrix; 4]>,
    /// `U_g`: hidden × hidden.
    pub recurrent: [Matrix; 4],
    pub bias: [Vector; 4],
    /// `Q_f`, `Q_i`: hidden × 2. Absent for the release-level cell.
    pub time: Option<[Matrix; 2]>,
    pub time_mode: TimeMode,
    /// Whether the input gate also sees φ(Δ) in parametric mode.
    pub time_input_gate: bool,
}

impl TimeAwareLstmParams {
    /// All-zero issue-level cell.
    pub fn zeros(input_dim: usize, resolution_dim: usize, hidden: usize, time_mode: TimeMode) -> Self {
        let mat = |cols| std::array::from_fn(|_| Matrix::zeros(hidden, cols));
        Self {
            input: mat(input_dim),
            resolution: Some(mat(resolution_dim)),
            recurrent: mat(hidden),
            bias: std::array::from_fn(|_| Vector::zeros(hidden)),
            time: Some(std::array::from_fn(|_| Matrix::zeros(hidden, TIME_FEATURE_DIM))),
            time_mode,
            time_input_gate: true,
        }
    }

    /// All-zero plain cell: no resolution channel, no time handling.
    pub fn zeros_plain(input_dim: usize, hidden: usize) -> Self {
        let mat = |cols| std::array::from_fn(|_| Matrix::zeros(hidden, cols));
        Self {
            input: mat(input_dim),
            resolution: None,
            recurrent: mat(hidden),
            bias: std::array::from_fn(|_| Vector::zeros(hidden)),
            time: None,
            time_mode: TimeMode::None,
            time_input_gate: false,
        }
    }

    /// Uniform(±1/√hidden) weights, forget bias +1, other biases 0. Time
    /// matrices stay zero unless they are live in the current mode.
    pub fn init(&mut self, rng: &mut impl Rng) {
        let bound = 1.0 / (self.hidden_dim() as f64).sqrt();
        let mut fill = |m: &mut Matrix| {
            for v in m.as_mut_slice() {
                *v = rng.random_range(-bound..=bound);
            }
        };
        self.input.iter_mut().for_each(&mut fill);
        if let Some(p) = &mut self.resolution {
            p.iter_mut().for_each(&mut fill);
        }
        self.recurrent.iter_mut().for_each(&mut fill);
        if self.time_mode == TimeMode::Parametric {
            if let Some([q_f, q_i]) = &mut self.time {
                fill(q_f);
                if self.time_input_gate {
                    fill(q_i);
                }
            }
        }
        for (g, b) in self.bias.iter_mut().enumerate() {
            let value = if g == F { 1.0 } else { 0.0 };
            b.as_mut_slice().fill(value);
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.recurrent[0].rows()
    }

    pub fn input_dim(&self) -> usize {
        self.input[0].cols()
    }

    pub fn resolution_dim(&self) -> usize {
        self.resolution.as_ref().map_or(0, |p| p[0].cols())
    }

    fn q_f_live(&self) -> bool {
        self.time_mode == TimeMode::Parametric && self.time.is_some()
    }

    fn q_i_live(&self) -> bool {
        self.q_f_live() && self.time_input_gate
    }

    /// Named tensors in canonical order: `W_*`, `P_*`, `U_*`, `b_*`, `Q_f`, `Q_i`.
    /// The flag says whether the tensor is trained in the current configuration.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64], bool)> {
        let mut out = Vec::new();
        let mat = |m: &Matrix| vec![m.rows(), m.cols()];
        for (g, m) in GATES.iter().zip(&self.input) {
            out.push((format!("W_{g}"), mat(m), m.as_slice(), true));
        }
        if let Some(ps) = &self.resolution {
            for (g, m) in GATES.iter().zip(ps) {
                out.push((format!("P_{g}"), mat(m), m.as_slice(), true));
            }
        }
        for (g, m) in GATES.iter().zip(&self.recurrent) {
            out.push((format!("U_{g}"), mat(m), m.as_slice(), true));
        }
        for (g, b) in GATES.iter().zip(&self.bias) {
            out.push((format!("b_{g}"), vec![b.len()], b.as_slice(), true));
        }
        if let Some([q_f, q_i]) = &self.time {
            out.push(("Q_f".into(), mat(q_f), q_f.as_slice(), self.q_f_live()));
            out.push(("Q_i".into(), mat(q_i), q_i.as_slice(), self.q_i_live()));
        }
        out
    }

    /// Mutable views in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.extend(self.input.iter_mut().map(Matrix::as_mut_slice));
        if let Some(ps) = &mut self.resolution {
            out.extend(ps.iter_mut().map(Matrix::as_mut_slice));
        }
        out.extend(self.recurrent.iter_mut().map(Matrix::as_mut_slice));
        out.extend(self.bias.iter_mut().map(Vector::as_mut_slice));
        if let Some(qs) = &mut self.time {
            out.extend(qs.iter_mut().map(Matrix::as_mut_slice));
        }
        out
    }

    /// Same structure, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }
}

/// Anything the cell can consume as one time step.
pub trait StepInput {
    fn x(&self) -> &[f64];
    /// Current resolution vector, if the cell has a resolution channel.
    fn p(&self) -> Option<&[f64]>;
    fn delta_days(&self) -> f64;
}

impl StepInput for IssueStepInput {
    fn x(&self) -> &[f64] {
        &self.x
    }

    fn p(&self) -> Option<&[f64]> {
        Some(&self.p)
    }

    fn delta_days(&self) -> f64 {
        self.delta_days
    }
}

/// Plain vectors are inputs with no resolution and no elapsed time.
impl StepInput for Vector {
    fn x(&self) -> &[f64] {
        self
    }

    fn p(&self) -> Option<&[f64]> {
        None
    }

    fn delta_days(&self) -> f64 {
        0.0
    }
}

/// Output of one step plus the activations backward needs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub h: Vector,
    pub c: Vector,
    pub f: Vector,
    pub i: Vector,
    pub o: Vector,
    pub c_hat: Vector,
    pub decay_factor: f64,
}

impl StepState {
    pub fn zero(hidden: usize) -> Self {
        let z = Vector::zeros(hidden);
        Self {
            h: z.clone(),
            c: z.clone(),
            f: z.clone(),
            i: z.clone(),
            o: z.clone(),
            c_hat: z,
            decay_factor: 1.0,
        }
    }
}

fn check_dims<S: StepInput + ?Sized>(params: &TimeAwareLstmParams, u: &S, p_prev: Option<&[f64]>) {
    assert_eq!(u.x().len(), params.input_dim(), "step: input length mismatch");
    match (&params.resolution, u.p()) {
        (Some(_), Some(p)) => {
            assert_eq!(p.len(), params.resolution_dim(), "step: resolution length mismatch");
            if let Some(pp) = p_prev {
                assert_eq!(pp.len(), params.resolution_dim(), "step: previous resolution length mismatch");
            }
        }
        (Some(_), None) => panic!("step: cell expects a resolution vector"),
        (None, _) => {}
    }
}

/// One forward step. `p_prev` is the previous step's resolution vector
/// (`None` or zeros at the first step).
pub fn step<S: StepInput + ?Sized>(
    params: &TimeAwareLstmParams,
    u: &S,
    p_prev: Option<&[f64]>,
    prev: &StepState,
) -> StepState {
    check_dims(params, u, p_prev);
    let hidden = params.hidden_dim();
    let x = u.x();
    let mut pre: [Vec<f64>; 4] = std::array::from_fn(|g| params.bias[g].to_vec());
    for (g, z) in pre.iter_mut().enumerate() {
        params.input[g].matvec_acc(x, z);
        params.recurrent[g].matvec_acc(&prev.h, z);
    }
    if let Some(ps) = &params.resolution {
        if let Some(pp) = p_prev {
            ps[F].matvec_acc(pp, &mut pre[F]);
            ps[I].matvec_acc(pp, &mut pre[I]);
        }
        let p = u.p().expect("checked");
        ps[O].matvec_acc(p, &mut pre[O]);
        ps[C].matvec_acc(p, &mut pre[C]);
    }
    if params.q_f_live() {
        let phi = time_features(u.delta_days());
        let [q_f, q_i] = params.time.as_ref().expect("live");
        q_f.matvec_acc(&phi, &mut pre[F]);
        if params.q_i_live() {
            q_i.matvec_acc(&phi, &mut pre[I]);
        }
    }

    let d = decay(u.delta_days(), params.time_mode);
    let squash = |v: &[f64]| -> Vector { v.iter().map(|&z| sigmoid_scalar(z)).collect::<Vec<_>>().into() };
    let f = squash(&pre[F]);
    let i = squash(&pre[I]);
    let o = squash(&pre[O]);
    let c_hat: Vector = pre[C].iter().map(|z| z.tanh()).collect::<Vec<_>>().into();
    let mut c = Vector::zeros(hidden);
    let mut h = Vector::zeros(hidden);
    for k in 0..hidden {
        c[k] = d * (f[k] * prev.c[k]) + i[k] * c_hat[k];
        h[k] = o[k] * c[k].tanh();
    }
    StepState { h, c, f, i, o, c_hat, decay_factor: d }
}

/// Fold [`step`] over `inputs` from the zero state.
pub fn unroll<S: StepInput>(params: &TimeAwareLstmParams, inputs: &[S]) -> Result<Vec<StepState>, LstmError> {
    if inputs.is_empty() {
        return Err(LstmError::EmptySequence);
    }
    let mut states = Vec::with_capacity(inputs.len());
    let zero = StepState::zero(params.hidden_dim());
    for (t, u) in inputs.iter().enumerate() {
        let prev = states.last().unwrap_or(&zero);
        let p_prev = if t == 0 { None } else { inputs[t - 1].p() };
        let next = step(params, u, p_prev, prev);
        states.push(next);
    }
    Ok(states)
}

/// Gradients of `L = Σ_t grad_h[t] · h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGradients {
    pub params: TimeAwareLstmParams,
    /// ∂L/∂x_t per step.
    pub dx: Vec<Vector>,
    /// ∂L/∂p_t per step; empty vectors for a cell without resolution channel.
    pub dp: Vec<Vector>,
}

/// Reverse-mode pass through an unrolled sequence.
///
/// `states` must come from [`unroll`] on the same `params` and `inputs`.
/// Time matrices that are not live in the current mode get zero gradient.
pub fn backward<S: StepInput>(
    params: &TimeAwareLstmParams,
    inputs: &[S],
    states: &[StepState],
    grad_h: &[Vector],
) -> LstmGradients {
    let steps = inputs.len();
    assert_eq!(states.len(), steps, "backward: states/inputs length mismatch");
    assert_eq!(grad_h.len(), steps, "backward: grad_h/inputs length mismatch");
    let hidden = params.hidden_dim();
    let res_dim = params.resolution_dim();

    let mut grads = params.zeros_like();
    let mut dx = vec![Vector::zeros(params.input_dim()); steps];
    let mut dp = vec![Vector::zeros(res_dim); steps];
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let zero = StepState::zero(hidden);

    for t in (0..steps).rev() {
        let s = &states[t];
        let prev = if t == 0 { &zero } else { &states[t - 1] };
        assert_eq!(grad_h[t].len(), hidden, "backward: grad_h entry length mismatch");

        let mut dpre: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden]);
        let mut dc_carry = vec![0.0; hidden];
        for k in 0..hidden {
            let dh = grad_h[t][k] + dh_next[k];
            let tc = s.c[k].tanh();
            let dc = dc_next[k] + dh * s.o[k] * (1.0 - tc * tc);
            dpre[O][k] = dh * tc * s.o[k] * (1.0 - s.o[k]);
            dpre[C][k] = dc * s.i[k] * (1.0 - s.c_hat[k] * s.c_hat[k]);
            dpre[I][k] = dc * s.c_hat[k] * s.i[k] * (1.0 - s.i[k]);
            dpre[F][k] = dc * s.decay_factor * prev.c[k] * s.f[k] * (1.0 - s.f[k]);
            dc_carry[k] = dc * s.decay_factor * s.f[k];
        }

        let x = inputs[t].x();
        let mut dh_prev = vec![0.0; hidden];
        for (g, d) in dpre.iter().enumerate() {
            grads.input[g].add_outer(d, x);
            grads.recurrent[g].add_outer(d, &prev.h);
            grads.bias[g].add_scaled(1.0, d);
            params.input[g].matvec_t_acc(d, &mut dx[t]);
            params.recurrent[g].matvec_t_acc(d, &mut dh_prev);
        }

        if let (Some(ps), Some(gps)) = (&params.resolution, &mut grads.resolution) {
            let p = inputs[t].p().expect("cell expects a resolution vector");
            gps[O].add_outer(&dpre[O], p);
            gps[C].add_outer(&dpre[C], p);
            ps[O].matvec_t_acc(&dpre[O], &mut dp[t]);
            ps[C].matvec_t_acc(&dpre[C], &mut dp[t]);
            if t > 0 {
                let p_prev = inputs[t - 1].p().expect("cell expects a resolution vector");
                gps[F].add_outer(&dpre[F], p_prev);
                gps[I].add_outer(&dpre[I], p_prev);
                ps[F].matvec_t_acc(&dpre[F], &mut dp[t - 1]);
                ps[I].matvec_t_acc(&dpre[I], &mut dp[t - 1]);
            }
        }

        if params.q_f_live() {
            let phi = time_features(inputs[t].delta_days());
            let gq = grads.time.as_mut().expect("live");
            gq[0].add_outer(&dpre[F], &phi);
            if params.q_i_live() {
                gq[1].add_outer(&dpre[I], &phi);
            }
        }

        dh_next = dh_prev;
        dc_next = dc_carry;
    }

    LstmGradients { params: grads, dx, dp }
}
