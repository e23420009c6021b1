//! Single-channel Gaussian mixture with hard component assignment.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Components per class.
pub const COMPONENTS: usize = 5;
/// Lower bound on component variance, in intensity squared.
pub const VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Component {
    /// `-ln(weight * N(z | mean, variance))`; infinite for an empty component.
    #[inline]
    pub fn cost(&self, z: f64) -> f64 {
        if self.weight <= 0.0 {
            return f64::INFINITY;
        }
        let d = z - self.mean;
        -self.weight.ln() + 0.5 * (2.0 * PI * self.variance).ln() + d * d / (2.0 * self.variance)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub components: Vec<Component>,
}

impl GmmModel {
    /// Sorts the samples and splits them into `COMPONENTS` equal-count bins;
    /// returns the per-sample bin assignment in the original sample order.
    pub fn quantile_assignment(samples: &[f64]) -> Vec<usize> {
        let n = samples.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]).then(a.cmp(&b)));
        let mut assign = vec![0; n];
        for (rank, &i) in order.iter().enumerate() {
            assign[i] = (rank * COMPONENTS / n.max(1)).min(COMPONENTS - 1);
        }
        assign
    }

    /// Maximum-likelihood parameters for the given hard assignment.
    /// Components with no samples get zero weight; `previous` supplies their
    /// mean and variance so the model stays well-formed.
    pub fn learn(samples: &[f64], assign: &[usize], previous: Option<&GmmModel>) -> GmmModel {
        let mut count = [0usize; COMPONENTS];
        let mut sum = [0.0f64; COMPONENTS];
        for (&z, &k) in samples.iter().zip(assign) {
            count[k] += 1;
            sum[k] += z;
        }
        let mut sq = [0.0f64; COMPONENTS];
        for (&z, &k) in samples.iter().zip(assign) {
            let d = z - sum[k] / count[k] as f64;
            sq[k] += d * d;
        }
        let total = samples.len().max(1) as f64;
        let components = (0..COMPONENTS)
            .map(|k| {
                if count[k] == 0 {
                    let prev = previous.map(|p| p.components[k]).unwrap_or(Component {
                        weight: 0.0,
                        mean: 0.0,
                        variance: 1.0,
                    });
                    Component { weight: 0.0, ..prev }
                } else {
                    let n = count[k] as f64;
                    Component {
                        weight: n / total,
                        mean: sum[k] / n,
                        variance: (sq[k] / n).max(VARIANCE_FLOOR),
                    }
                }
            })
            .collect();
        GmmModel { components }
    }

    /// Cheapest component and its cost; ties go to the lowest index.
    #[inline]
    pub fn best_component(&self, z: f64) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.components.iter().enumerate() {
            let cost = c.cost(z);
            if cost < best.1 {
                best = (k, cost);
            }
        }
        best
    }

    pub fn weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_bins_are_balanced() {
        let samples: Vec<f64> = (0..100).rev().map(|i| i as f64).collect();
        let a = GmmModel::quantile_assignment(&samples);
        for k in 0..COMPONENTS {
            assert_eq!(a.iter().filter(|&&x| x == k).count(), 20);
        }
        // smallest values land in bin 0
        assert_eq!(a[99], 0);
        assert_eq!(a[0], COMPONENTS - 1);
    }

    #[test]
    fn learned_weights_sum_to_one_and_respect_floor() {
        let samples = vec![3.0; 10];
        let a = GmmModel::quantile_assignment(&samples);
        let m = GmmModel::learn(&samples, &a, None);
        assert!((m.weight_sum() - 1.0).abs() < 1e-9);
        assert!(m.components.iter().all(|c| c.variance >= VARIANCE_FLOOR));
    }

    #[test]
    fn empty_component_never_wins() {
        let samples = vec![1.0, 1.0, 1.0];
        let m = GmmModel::learn(&samples, &[0, 0, 0], None);
        assert_eq!(m.components[1].weight, 0.0);
        assert_eq!(m.best_component(50.0).0, 0);
    }
}
