//! Numerical self-checks against the reference implementations in
//! `emoc-oracle`, used by `emoc check`.

use emoc_core::rng::seeded;
use emoc_core::select::{emoc_score, map_label};
use emoc_core::{CandidateSet, LossKind, RegularizerConfig, SampleStore, SelectionConfig, Tensor};
use emoc_oracle::fixtures::{random_small_network, softmax_regression};
use emoc_oracle::{
    brute_force_emoc, contracted_output, fd_gradient, fd_jacobian, max_relative_error, naive_objective, uniform_vec,
    SoftmaxRegression,
};
use serde::Serialize;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const FD_FLOOR: f64 = 1e-6;
pub const EMOC_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: &'static str,
    pub cases: usize,
    pub worst_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst_error <= self.tolerance
    }
}

/// Backpropagated gradients (contracted output and full objective) against
/// central differences on `networks` small random networks.
pub fn gradient_check(networks: u64) -> CheckReport {
    let mut worst: f64 = 0.0;
    for seed in 0..networks {
        let (net, x) = random_small_network(seed, 0.5);
        let mut rng = seeded(7_000 + seed);
        let cot = uniform_vec(&mut rng, net.num_classes(), 1.0);
        let analytic = net.backward_scalar(&x, &cot).expect("backward");
        let numeric = fd_gradient(&net, FD_STEP, |n| contracted_output(n, &x, &cot));
        worst = worst.max(max_relative_error(analytic.as_slice(), &numeric, FD_FLOOR));

        let y = seed as usize % net.num_classes();
        let reg = RegularizerConfig { l2: 0.01, l1: 0.0 };
        let analytic =
            emoc_core::training::sample_gradient(&net, &x, y, LossKind::SoftmaxCrossEntropy, &reg).expect("gradient");
        let numeric = fd_gradient(&net, FD_STEP, |n| naive_objective(n, &x, y, true, reg.l2, reg.l1));
        worst = worst.max(max_relative_error(analytic.as_slice(), &numeric, FD_FLOOR));
    }
    CheckReport { name: "gradient", cases: networks as usize, worst_error: worst, tolerance: FD_TOLERANCE }
}

/// Output Jacobians against central differences. Also folds in the largest
/// column sum, which must vanish because posteriors sum to one.
pub fn jacobian_check(networks: u64) -> CheckReport {
    let mut worst: f64 = 0.0;
    for seed in 0..networks {
        let (net, x) = random_small_network(seed, 0.5);
        let jac = net.output_jacobian(&x).expect("jacobian");
        let numeric = fd_jacobian(&net, &x, FD_STEP);
        for (c, row) in numeric.iter().enumerate() {
            worst = worst.max(max_relative_error(jac.row(c), row, FD_FLOOR));
        }
        for j in 0..jac.cols() {
            let s: f64 = (0..jac.rows()).map(|c| jac.get(c, j)).sum();
            worst = worst.max(s.abs() * FD_TOLERANCE / 1e-9);
        }
    }
    CheckReport { name: "jacobian", cases: networks as usize, worst_error: worst, tolerance: FD_TOLERANCE }
}

/// Set scores against explicit loops over the closed-form softmax
/// regression Jacobian and gradient.
pub fn emoc_check(cases: u64) -> CheckReport {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let inputs = 2 + (case % 3) as usize;
        let classes = 2 + (case % 2) as usize;
        let net = softmax_regression(inputs, classes, 1.5, case);
        let mut rng = seeded(9_000 + case);
        let parts = (0..6).map(|_| (Tensor::from_vec(uniform_vec(&mut rng, inputs, 2.0)), None));
        let store = SampleStore::from_parts(parts).expect("store");
        let eval_ids = [0, 1, 2];
        let mut set = CandidateSet::new(vec![3, 4, 5], 0);
        set.label = Some(map_label(&net, &set, &store).expect("label"));
        let reg = RegularizerConfig { l2: 0.01 * (case % 3) as f64, l1: 0.002 * (case % 2) as f64 };
        let cfg = SelectionConfig { gamma: 0.5 + case as f64 / 10.0, ..Default::default() };
        let got = emoc_score(&net, &set, &eval_ids, &store, LossKind::SoftmaxCrossEntropy, &reg, &cfg).expect("score");

        let oracle = SoftmaxRegression::from_network(&net);
        let features = |i: usize| store.features(i).expect("sample").values().to_vec();
        let jacobians: Vec<_> = eval_ids.iter().map(|&i| oracle.jacobian(&features(i))).collect();
        let grads: Vec<_> = set
            .sample_ids
            .iter()
            .map(|&i| oracle.cross_entropy_gradient(&features(i), set.label.unwrap_or(0), reg.l2, reg.l1))
            .collect();
        let want = brute_force_emoc(&jacobians, &grads, cfg.gamma);
        worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
    }
    CheckReport { name: "emoc", cases: cases as usize, worst_error: worst, tolerance: EMOC_TOLERANCE }
}

pub fn run_all() -> Vec<CheckReport> {
    vec![gradient_check(24), jacobian_check(24), emoc_check(100)]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for r in super::run_all() {
            assert!(r.passed(), "{r:?}");
        }
    }
}
