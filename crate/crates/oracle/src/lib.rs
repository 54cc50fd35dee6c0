//! Reference computations that do not share code paths with `emoc-core`'s
//! derivative and scoring machinery: finite differences, closed-form
//! softmax-regression derivatives, naive forward passes and loop-based EMOC.
//!
//! Everything here is deliberately naive and `f64`-only.

use emoc_core::{LayerSpec, Network, Tensor};
use rand::Rng;

pub mod fixtures;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest elementwise [`relative_error`].
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y, floor))
        .fold(0.0, f64::max)
}

/// Central finite-difference gradient of `f` with respect to the flattened
/// parameters of `net`.
pub fn fd_gradient(net: &Network<f64>, step: f64, f: impl Fn(&Network<f64>) -> f64) -> Vec<f64> {
    let mut probe = net.clone();
    (0..net.num_params())
        .map(|j| {
            let orig = net.params()[j];
            probe.params_mut()[j] = orig + step;
            let up = f(&probe);
            probe.params_mut()[j] = orig - step;
            let down = f(&probe);
            probe.params_mut()[j] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `cᵀ f(x; θ)` evaluated through the network's forward pass only.
pub fn contracted_output(net: &Network<f64>, x: &Tensor<f64>, cotangent: &[f64]) -> f64 {
    let p = net.forward(x).expect("valid input");
    p.iter().zip(cotangent).map(|(a, b)| a * b).sum()
}

/// Finite-difference Jacobian rows `∂f_c/∂θ`.
pub fn fd_jacobian(net: &Network<f64>, x: &Tensor<f64>, step: f64) -> Vec<Vec<f64>> {
    let classes = net.num_classes();
    (0..classes)
        .map(|c| {
            let mut e = vec![0.0; classes];
            e[c] = 1.0;
            fd_gradient(net, step, |n| contracted_output(n, x, &e))
        })
        .collect()
}

/// Loss of one labeled example computed from posteriors, `cross_entropy`
/// selecting `−ln p_y` over `½‖p − e_y‖²`.
pub fn naive_loss(p: &[f64], y: usize, cross_entropy: bool) -> f64 {
    if cross_entropy {
        -p[y].ln()
    } else {
        p.iter()
            .enumerate()
            .map(|(c, &v)| {
                let d = v - if c == y { 1.0 } else { 0.0 };
                0.5 * d * d
            })
            .sum()
    }
}

/// Elastic net `l2·Σθ² + l1·Σ|θ|` by plain loops.
pub fn naive_regularizer(theta: &[f64], l2: f64, l1: f64) -> f64 {
    let mut s2 = 0.0;
    let mut s1 = 0.0;
    for &t in theta {
        s2 += t * t;
        s1 += t.abs();
    }
    l2 * s2 + l1 * s1
}

/// Single-example objective through forward passes only.
pub fn naive_objective(net: &Network<f64>, x: &Tensor<f64>, y: usize, cross_entropy: bool, l2: f64, l1: f64) -> f64 {
    let p = net.forward(x).expect("valid input");
    naive_loss(&p, y, cross_entropy) + naive_regularizer(net.params().as_slice(), l2, l1)
}

/// Forward pass of a fully connected / ReLU / softmax stack written as plain
/// loops over the per-layer weight matrices.
pub fn straight_line_forward(net: &Network<f64>, x: &[f64]) -> Vec<f64> {
    let theta = net.params().as_slice();
    let mut offset = 0;
    let mut a = x.to_vec();
    for layer in net.layers() {
        match *layer {
            LayerSpec::FullyConnected { inputs, outputs } => {
                let w = &theta[offset..offset + inputs * outputs];
                let b = &theta[offset + inputs * outputs..offset + inputs * outputs + outputs];
                offset += inputs * outputs + outputs;
                let mut z = vec![0.0; outputs];
                for o in 0..outputs {
                    let mut s = b[o];
                    for i in 0..inputs {
                        s += w[o * inputs + i] * a[i];
                    }
                    z[o] = s;
                }
                a = z;
            }
            LayerSpec::Relu => {
                for v in &mut a {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            LayerSpec::Softmax => {
                let e: Vec<f64> = a.iter().map(|v| v.exp()).collect();
                let s: f64 = e.iter().sum();
                a = e.iter().map(|v| v / s).collect();
            }
            _ => panic!("straight-line oracle covers dense stacks only"),
        }
    }
    a
}

/// Closed-form derivatives of a single dense layer followed by softmax,
/// `p = softmax(W x + b)` with `W` stored row-major `(C, D)` and parameters
/// laid out as `[W, b]`.
pub struct SoftmaxRegression {
    pub classes: usize,
    pub inputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl SoftmaxRegression {
    pub fn from_network(net: &Network<f64>) -> Self {
        let [LayerSpec::FullyConnected { inputs, outputs }, LayerSpec::Softmax] = net.layers() else {
            panic!("expected a single dense layer followed by softmax");
        };
        let theta = net.params().as_slice();
        Self {
            classes: *outputs,
            inputs: *inputs,
            weights: theta[..inputs * outputs].to_vec(),
            biases: theta[inputs * outputs..].to_vec(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.classes * self.inputs + self.classes
    }

    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = (0..self.classes)
            .map(|c| {
                let mut s = self.biases[c];
                for i in 0..self.inputs {
                    s += self.weights[c * self.inputs + i] * x[i];
                }
                s
            })
            .collect();
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    /// `∂p_c/∂W_{j,i} = p_c (δ_cj − p_j) x_i`, `∂p_c/∂b_j = p_c (δ_cj − p_j)`.
    pub fn jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let p = self.posterior(x);
        (0..self.classes)
            .map(|c| {
                let mut row = vec![0.0; self.num_params()];
                for j in 0..self.classes {
                    let d = p[c] * (if c == j { 1.0 } else { 0.0 } - p[j]);
                    for i in 0..self.inputs {
                        row[j * self.inputs + i] = d * x[i];
                    }
                    row[self.classes * self.inputs + j] = d;
                }
                row
            })
            .collect()
    }

    /// Gradient of `−ln p_y + l2‖θ‖² + l1‖θ‖₁`: `(p_j − δ_jy) x_i` for weights.
    pub fn cross_entropy_gradient(&self, x: &[f64], y: usize, l2: f64, l1: f64) -> Vec<f64> {
        let p = self.posterior(x);
        let mut g = vec![0.0; self.num_params()];
        for j in 0..self.classes {
            let r = p[j] - if j == y { 1.0 } else { 0.0 };
            for i in 0..self.inputs {
                g[j * self.inputs + i] = r * x[i];
            }
            g[self.classes * self.inputs + j] = r;
        }
        let theta: Vec<f64> = self.weights.iter().chain(&self.biases).copied().collect();
        for (gj, t) in g.iter_mut().zip(theta) {
            *gj += 2.0 * l2 * t;
            if t > 0.0 {
                *gj += l1;
            } else if t < 0.0 {
                *gj -= l1;
            }
        }
        g
    }
}

/// `γ Σ_{x′} (1/R) Σ_x Σ_c |Σ_j J_x[c][j] g_{x′}[j]|` with explicit loops.
pub fn brute_force_emoc(jacobians: &[Vec<Vec<f64>>], gradients: &[Vec<f64>], gamma: f64) -> f64 {
    let mut total = 0.0;
    for g in gradients {
        let mut mean = 0.0;
        for jac in jacobians {
            let mut l1 = 0.0;
            for row in jac {
                let mut dot = 0.0;
                for (a, b) in row.iter().zip(g) {
                    dot += a * b;
                }
                l1 += dot.abs();
            }
            mean += l1;
        }
        total += mean / jacobians.len() as f64;
    }
    gamma * total
}

/// Mean output change `E_x ‖f(x; θ − η g) − f(x; θ)‖₁` obtained by actually
/// moving the parameters.
pub fn applied_output_change(net: &Network<f64>, eval: &[&Tensor<f64>], gradient: &[f64], step: f64) -> f64 {
    let mut moved = net.clone();
    for (t, g) in moved.params_mut().as_mut_slice().iter_mut().zip(gradient) {
        *t -= step * g;
    }
    let mut total = 0.0;
    for x in eval {
        let before = net.forward(x).expect("valid input");
        let after = moved.forward(x).expect("valid input");
        total += before.iter().zip(&after).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    total / eval.len() as f64
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("no NaN"));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[order[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}

/// Fraction of points whose nearest class mean (Euclidean) is their own.
pub fn nearest_mean_accuracy(points: &[(Vec<f64>, usize)]) -> f64 {
    let classes = points.iter().map(|p| p.1).max().map_or(0, |m| m + 1);
    let dim = points.first().map_or(0, |p| p.0.len());
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (x, y) in points {
        counts[*y] += 1;
        for (s, v) in sums[*y].iter_mut().zip(x) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.into_iter().map(|v| v / n.max(1) as f64).collect())
        .collect();
    let mut correct = 0;
    for (x, y) in points {
        let mut best = (f64::INFINITY, 0);
        for (c, m) in means.iter().enumerate() {
            if counts[c] == 0 {
                continue;
            }
            let d: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        if best.1 == *y {
            correct += 1;
        }
    }
    correct as f64 / points.len() as f64
}

/// Uniform random vector in `[-scale, scale]^n`.
pub fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_of_monotone_map_is_one() {
        let a = [0.1, 0.5, 0.3, 2.0];
        let b: Vec<f64> = a.iter().map(|v: &f64| v.powi(3)).collect();
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-15);
        let c: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn cross_entropy_of_quarter_three_quarters() {
        let v = naive_loss(&[0.25, 0.75], 1, true);
        assert!((v - 0.287_682_072_451_780_9).abs() < 1e-15);
    }
}
