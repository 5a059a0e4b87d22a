//! A second, scalar-generic implementation of the project loss. Written
//! independently of the production forward pass and evaluated in
//! double-double precision so central differences resolve tiny gradients.
//!
//! Quantities that do not depend on parameters (window membership, pooling
//! weights, decay factors, time features, one-hot attributes) are taken from
//! the production code as constants.

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::dd::Dd;
use crate::data::ProjectHistory;
use crate::encoder::{encode_issues, time_features};
use crate::hierarchy::{assign_windows, pool_weights};
use crate::model::Model;
use crate::tlstm::decay;
use crate::train::loss::{LossWeights, PROB_CLAMP};

pub trait Real:
    Copy + From<f64> + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn approx(self) -> f64;
}

impl Real for f64 {
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn approx(self) -> f64 {
        self
    }
}

impl Real for Dd {
    fn exp(self) -> Self {
        Dd::exp(self)
    }
    fn ln(self) -> Self {
        Dd::ln(self)
    }
    fn approx(self) -> f64 {
        self.to_f64()
    }
}

fn sigmoid<R: Real>(z: R) -> R {
    let one = R::from(1.0);
    if z.approx() >= 0.0 {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    }
}

fn tanh<R: Real>(z: R) -> R {
    let one = R::from(1.0);
    let negative = z.approx() < 0.0;
    let a = if negative { -z } else { z };
    let e = (R::from(-2.0) * a).exp();
    let t = (one - e) / (one + e);
    if negative {
        -t
    } else {
        t
    }
}

fn bce<R: Real>(p: R, y: bool) -> R {
    let one = R::from(1.0);
    let p = if p.approx() < PROB_CLAMP {
        R::from(PROB_CLAMP)
    } else if p.approx() > 1.0 - PROB_CLAMP {
        R::from(1.0 - PROB_CLAMP)
    } else {
        p
    };
    if y {
        -p.ln()
    } else {
        -(one - p).ln()
    }
}

/// Parameter tensors lifted to `R`, addressed by canonical name.
pub struct Lifted<R> {
    tensors: HashMap<String, (Vec<usize>, Vec<R>)>,
    live: HashMap<String, bool>,
}

impl<R: Real> Lifted<R> {
    /// Lift every tensor; if `nudge` is `Some((k, j, delta))`, entry `j` of
    /// tensor `k` (canonical order) becomes `value + delta` computed in `R`.
    pub fn new(model: &Model, nudge: Option<(usize, usize, R)>) -> Self {
        let mut tensors = HashMap::new();
        let mut live = HashMap::new();
        for (k, t) in model.params.tensors().into_iter().enumerate() {
            let mut values: Vec<R> = t.values.iter().map(|&v| R::from(v)).collect();
            if let Some((nk, j, delta)) = nudge {
                if nk == k {
                    values[j] = values[j] + delta;
                }
            }
            live.insert(t.name.clone(), t.trainable);
            tensors.insert(t.name, (t.shape, values));
        }
        Self { tensors, live }
    }

    fn get(&self, name: &str) -> &(Vec<usize>, Vec<R>) {
        self.tensors.get(name).unwrap_or_else(|| panic!("reference: no tensor {name}"))
    }

    fn has(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    /// `out += M v` for the matrix `name`.
    fn matvec_acc(&self, name: &str, v: &[R], out: &mut [R]) {
        let (shape, m) = self.get(name);
        let (rows, cols) = (shape[0], shape[1]);
        assert_eq!(v.len(), cols, "reference: {name} width");
        for r in 0..rows {
            let mut acc = out[r];
            for c in 0..cols {
                acc = acc + m[r * cols + c] * v[c];
            }
            out[r] = acc;
        }
    }

    fn vector(&self, name: &str) -> &[R] {
        &self.get(name).1
    }
}

fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).fold(R::from(0.0), |acc, (&x, &y)| acc + x * y)
}

struct CellStep<'a, R> {
    x: &'a [R],
    p_prev: Option<&'a [R]>,
    p: Option<&'a [R]>,
    phi: [f64; 2],
    decay: f64,
}

fn cell<R: Real>(lift: &Lifted<R>, prefix: &str, step: &CellStep<'_, R>, h: &[R], c: &[R]) -> (Vec<R>, Vec<R>) {
    let hidden = h.len();
    let name = |kind: &str, g: &str| format!("{prefix}.{kind}_{g}");
    let mut pre: Vec<Vec<R>> = Vec::new();
    for g in ["f", "i", "o", "c"] {
        let mut z = lift.vector(&name("b", g)).to_vec();
        lift.matvec_acc(&name("W", g), step.x, &mut z);
        lift.matvec_acc(&name("U", g), h, &mut z);
        let uses_prev = g == "f" || g == "i";
        let p_vec = if uses_prev { step.p_prev } else { step.p };
        if let Some(p) = p_vec {
            if lift.has(&name("P", g)) {
                lift.matvec_acc(&name("P", g), p, &mut z);
            }
        }
        let q = format!("{prefix}.Q_{g}");
        if uses_prev && lift.has(&q) && lift.live[&q] {
            let phi: Vec<R> = step.phi.iter().map(|&v| R::from(v)).collect();
            lift.matvec_acc(&q, &phi, &mut z);
        }
        pre.push(z);
    }
    let d = R::from(step.decay);
    let mut c_new = Vec::with_capacity(hidden);
    let mut h_new = Vec::with_capacity(hidden);
    for k in 0..hidden {
        let f = sigmoid(pre[0][k]);
        let i = sigmoid(pre[1][k]);
        let o = sigmoid(pre[2][k]);
        let c_hat = tanh(pre[3][k]);
        let ck = d * (f * c[k]) + i * c_hat;
        c_new.push(ck);
        h_new.push(o * tanh(ck));
    }
    (h_new, c_new)
}

fn weighted_sum<R: Real>(states: &[&[R]], weights: &[f64], dim: usize) -> Vec<R> {
    let mut out = vec![R::from(0.0); dim];
    for (s, &w) in states.iter().zip(weights) {
        for k in 0..dim {
            out[k] = out[k] + R::from(w) * s[k];
        }
    }
    out
}

fn mean_bce<R: Real>(pairs: &[(R, bool)]) -> Option<R> {
    if pairs.is_empty() {
        return None;
    }
    let sum = pairs.iter().fold(R::from(0.0), |acc, &(p, y)| acc + bce(p, y));
    Some(sum / R::from(pairs.len() as f64))
}

/// Weighted loss of one project, `None` when it has no labels.
pub fn project_loss<R: Real>(lift: &Lifted<R>, model: &Model, project: &ProjectHistory, weights: &LossWeights) -> Option<R> {
    let cfg = &model.config;
    let d_e = cfg.embed_dim;
    let d_h = cfg.hidden_dim;
    let d_g = cfg.release_hidden();
    let encoded = encode_issues(&project.issues, &model.vocab, &model.params.embedding).expect("fixture encodes");

    let (_, table) = lift.get("embedding.table");
    let text = |ids: &[usize], tail: &[f64]| -> Vec<R> {
        let mut v = vec![R::from(0.0); d_e];
        if !ids.is_empty() {
            for &id in ids {
                for k in 0..d_e {
                    v[k] = v[k] + table[id * d_e + k];
                }
            }
            let n = R::from(ids.len() as f64);
            v.iter_mut().for_each(|x| *x = *x / n);
        }
        v.extend(tail.iter().map(|&a| R::from(a)));
        v
    };
    let xs: Vec<Vec<R>> = encoded.iter().map(|e| text(&e.description_ids, &e.input.x[d_e..])).collect();
    let ps: Vec<Vec<R>> = encoded.iter().map(|e| text(&e.patch_ids, &e.input.p[d_e..])).collect();

    let mut h = vec![R::from(0.0); d_h];
    let mut c = vec![R::from(0.0); d_h];
    let mut hs = Vec::new();
    for (t, e) in encoded.iter().enumerate() {
        let delta = e.input.delta_days;
        let step = CellStep {
            x: &xs[t],
            p_prev: (t > 0).then(|| ps[t - 1].as_slice()),
            p: Some(&ps[t]),
            phi: time_features(delta),
            decay: decay(delta, cfg.time_mode),
        };
        (h, c) = cell(lift, "issue_lstm", &step, &h, &c);
        hs.push(h.clone());
    }

    let issue_w = lift.vector("issue_head.w");
    let issue_b = lift.vector("issue_head.b")[0];
    let issue_pairs: Vec<(R, bool)> = hs
        .iter()
        .zip(&project.issues)
        .filter_map(|(h, i)| i.label_delayed.map(|y| (sigmoid(dot(issue_w, h) + issue_b), y)))
        .collect();

    let mut release_pairs = Vec::new();
    let mut project_pair = None;
    if !project.releases.is_empty() {
        let windows = assign_windows(project);
        let mut g = vec![R::from(0.0); d_g];
        let mut gc = vec![R::from(0.0); d_g];
        let mut gs = Vec::new();
        for w in &windows {
            let ages: Vec<f64> = w.members.iter().map(|&t| (w.anchor_at - project.issues[t].resolved_at) as f64).collect();
            let r = if ages.is_empty() {
                vec![R::from(0.0); d_h]
            } else {
                let states: Vec<&[R]> = w.members.iter().map(|&t| hs[t].as_slice()).collect();
                weighted_sum(&states, &pool_weights(&ages, &cfg.release_pooling), d_h)
            };
            let step = CellStep { x: &r, p_prev: None, p: None, phi: [0.0; 2], decay: 1.0 };
            (g, gc) = cell(lift, "release_lstm", &step, &g, &gc);
            gs.push(g.clone());
        }
        let rw = lift.vector("release_head.w");
        let rb = lift.vector("release_head.b")[0];
        for ((w, g), rel) in windows.iter().zip(&gs).filter(|(w, _)| !w.is_pending).zip(&project.releases) {
            debug_assert!(!w.is_pending);
            if let Some(y) = rel.label_delayed {
                release_pairs.push((sigmoid(dot(rw, g) + rb), y));
            }
        }
        let last = project.last_event_at();
        let ages: Vec<f64> = windows.iter().map(|w| (last - w.anchor_at) as f64).collect();
        let states: Vec<&[R]> = gs.iter().map(|g| g.as_slice()).collect();
        let s = weighted_sum(&states, &pool_weights(&ages, &cfg.project_pooling), d_g);
        let mut hidden = lift.vector("project_head.b1").to_vec();
        lift.matvec_acc("project_head.W1", &s, &mut hidden);
        let hidden: Vec<R> = hidden.into_iter().map(tanh).collect();
        let z = dot(lift.vector("project_head.w2"), &hidden) + lift.vector("project_head.b2")[0];
        project_pair = project.label_project.map(|y| (sigmoid(z), y));
    }

    let issue = mean_bce(&issue_pairs);
    let release = mean_bce(&release_pairs);
    let proj = project_pair.map(|(p, y)| bce(p, y));
    if issue.is_none() && release.is_none() && proj.is_none() {
        return None;
    }
    let zero = R::from(0.0);
    Some(
        R::from(weights.issue) * issue.unwrap_or(zero)
            + R::from(weights.release) * release.unwrap_or(zero)
            + R::from(weights.project) * proj.unwrap_or(zero),
    )
}

pub fn total_loss<R: Real>(lift: &Lifted<R>, model: &Model, projects: &[ProjectHistory], weights: &LossWeights) -> R {
    projects
        .iter()
        .filter_map(|p| project_loss(lift, model, p, weights))
        .fold(R::from(0.0), |a, b| a + b)
}
