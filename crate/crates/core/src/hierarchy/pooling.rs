use serde::{Deserialize, Serialize};

use crate::tensor::{mean_of, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    #[default]
    Mean,
    /// Softmax weights over `−λ · age`, favoring recent members.
    Recency,
}

impl PoolingKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "mean" => Some(Self::Mean),
            "recency" => Some(Self::Recency),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingSpec {
    pub kind: PoolingKind,
    /// Decay rate per day of age; ignored by mean pooling.
    pub lambda_per_day: f64,
}

impl Default for PoolingSpec {
    fn default() -> Self {
        Self { kind: PoolingKind::Mean, lambda_per_day: 0.01 }
    }
}

impl PoolingSpec {
    pub fn mean() -> Self {
        Self::default()
    }

    pub fn recency(lambda_per_day: f64) -> Self {
        Self { kind: PoolingKind::Recency, lambda_per_day }
    }
}

/// Weight of each member. Recency weights are a max-shifted softmax of
/// `−λ · age` and sum to one.
pub fn pool_weights(ages_days: &[f64], spec: &PoolingSpec) -> Vec<f64> {
    let n = ages_days.len();
    match spec.kind {
        PoolingKind::Mean => vec![1.0 / n as f64; n],
        PoolingKind::Recency => {
            let logits: Vec<f64> = ages_days.iter().map(|a| -spec.lambda_per_day * a).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        }
    }
}

/// Aggregate `states` into one vector. `None` for an empty group.
///
/// Mean pooling goes through [`mean_of`]; recency pooling sums
/// `w_k · states[k]` left to right.
pub fn pool(states: &[&[f64]], ages_days: &[f64], spec: &PoolingSpec) -> Option<Vector> {
    assert_eq!(states.len(), ages_days.len(), "pool: states/ages length mismatch");
    match spec.kind {
        PoolingKind::Mean => mean_of(states.iter().copied()),
        PoolingKind::Recency => {
            let first = states.first()?;
            let mut out = Vector::zeros(first.len());
            for (s, w) in states.iter().zip(pool_weights(ages_days, spec)) {
                out.add_scaled(w, s);
            }
            Some(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recency_cases() {
        let a = [1.0, 2.0, 3.0];
        let b = [-4.0, 0.5, 9.0];
        let zero_lambda = pool(&[&a, &b], &[0.0, 50.0], &PoolingSpec::recency(0.0)).unwrap();
        let mean = pool(&[&a, &b], &[0.0, 50.0], &PoolingSpec::mean()).unwrap();
        for (x, y) in zero_lambda.iter().zip(mean.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(pool(&[&a], &[30.0], &PoolingSpec::recency(0.01)).unwrap().as_slice(), &a);

        // softmax(0, -0.7)
        let w = pool_weights(&[0.0, 70.0], &PoolingSpec::recency(0.01));
        let e = (-0.7f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((w[0] - 0.6682).abs() < 1e-4 && (w[1] - 0.3318).abs() < 1e-4);
    }

    #[test]
    fn empty_group_has_no_pool() {
        assert!(pool(&[], &[], &PoolingSpec::mean()).is_none());
        assert!(pool(&[], &[], &PoolingSpec::recency(1.0)).is_none());
    }

    #[test]
    fn extreme_ages_stay_finite() {
        let w = pool_weights(&[0.0, 1e6, 1e7], &PoolingSpec::recency(5.0));
        assert!(w.iter().all(|x| x.is_finite()));
        assert_eq!(w[0], 1.0);
    }

    proptest! {
        #[test]
        fn recency_weights_sum_to_one(
            ages in proptest::collection::vec(0.0..5000.0f64, 1..40),
            lambda in 0.0..2.0f64,
        ) {
            let w = pool_weights(&ages, &PoolingSpec::recency(lambda));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn recency_invariant_under_consistent_permutation(
            rows in proptest::collection::vec((proptest::collection::vec(-3.0..3.0f64, 3), 0.0..100.0f64), 1..8),
            shift in 0usize..8,
        ) {
            let spec = PoolingSpec::recency(0.05);
            let states: Vec<&[f64]> = rows.iter().map(|r| r.0.as_slice()).collect();
            let ages: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let a = pool(&states, &ages, &spec).unwrap();
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            perm.rotate_left(shift % rows.len());
            let ps: Vec<&[f64]> = perm.iter().map(|&i| states[i]).collect();
            let pa: Vec<f64> = perm.iter().map(|&i| ages[i]).collect();
            let b = pool(&ps, &pa, &spec).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
