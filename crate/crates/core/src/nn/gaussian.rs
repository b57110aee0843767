//! Diagonal Gaussian posteriors against a standard-normal prior.

use super::error::NnError;
use super::graph::{Graph, Var};

/// `N(mean, exp(log_variance))` with both vectors living on a graph.
#[derive(Clone, Copy, Debug)]
pub struct GaussianParams {
    pub mean: Var,
    pub log_variance: Var,
}

impl GaussianParams {
    pub fn new(g: &Graph, mean: Var, log_variance: Var) -> Result<Self, NnError> {
        let (m, l) = (g.value(mean).len(), g.value(log_variance).len());
        if m != l {
            return Err(NnError::Dimension {
                context: "gaussian log-variance".into(),
                expected: m,
                found: l,
            });
        }
        Ok(Self { mean, log_variance })
    }

    /// Splits a `2m` vector into mean (first half) and log-variance.
    pub fn from_concat(g: &mut Graph, v: Var) -> Result<Self, NnError> {
        let n = g.value(v).len();
        if !n.is_multiple_of(2) {
            return Err(NnError::Dimension {
                context: "gaussian head must have even width".into(),
                expected: n + 1,
                found: n,
            });
        }
        let mean = g.slice(v, 0, n / 2)?;
        let log_variance = g.slice(v, n / 2, n / 2)?;
        Ok(Self { mean, log_variance })
    }

    pub fn dim(&self, g: &Graph) -> usize {
        g.value(self.mean).len()
    }
}

/// `KL(q || N(0, I)) = 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2)` as a graph node.
pub fn gaussian_kl(g: &mut Graph, q: &GaussianParams) -> Var {
    let mu2 = g.square(q.mean);
    let var = g.exp(q.log_variance);
    let a = g.add(mu2, var).expect("GaussianParams have equal widths");
    let b = g.sub(a, q.log_variance).expect("GaussianParams have equal widths");
    let s = g.sum(b);
    let n = g.value(q.mean).len() as f64;
    let s = g.scale(s, 0.5);
    // subtract the constant 0.5 * m
    let c = g.constant(vec![0.5 * n]);
    g.sub(s, c).expect("scalars")
}

/// Closed-form KL for plain vectors.
pub fn gaussian_kl_value(mean: &[f64], log_variance: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(log_variance)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// `z = mean + exp(0.5 * log_variance) * noise`, differentiable in both parameters.
pub fn reparameterize(g: &mut Graph, q: &GaussianParams, noise: &[f64]) -> Result<Var, NnError> {
    let m = q.dim(g);
    if noise.len() != m {
        return Err(NnError::Dimension {
            context: "reparameterization noise".into(),
            expected: m,
            found: noise.len(),
        });
    }
    let half = g.scale(q.log_variance, 0.5);
    let std = g.exp(half);
    let eps = g.constant(noise.to_vec());
    let scaled = g.mul(std, eps)?;
    g.add(q.mean, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn kl_of(mean: Vec<f64>, lv: Vec<f64>) -> f64 {
        let mut g = Graph::new();
        let m = g.constant(mean);
        let l = g.constant(lv);
        let q = GaussianParams::new(&g, m, l).unwrap();
        let k = gaussian_kl(&mut g, &q);
        g.scalar(k)
    }

    #[test]
    fn kl_spot_values() {
        assert_eq!(kl_of(vec![0.0; 3], vec![0.0; 3]), 0.0);
        assert!((kl_of(vec![1.0], vec![0.0]) - 0.5).abs() < 1e-12);
        let expected = 0.5 * (4.0 - 1.0 - 4.0f64.ln());
        assert!((kl_of(vec![0.0], vec![4.0f64.ln()]) - expected).abs() < 1e-12);
        assert!((expected - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn kl_graph_matches_closed_form() {
        let (m, l) = (vec![0.3, -1.1, 2.0], vec![-0.5, 0.7, 0.0]);
        assert!((kl_of(m.clone(), l.clone()) - gaussian_kl_value(&m, &l)).abs() < 1e-12);
    }

    #[test]
    fn reparameterize_edge_cases() {
        let mut g = Graph::new();
        let m = g.constant(vec![1.5, -2.0]);
        let l = g.constant(vec![0.3, -0.7]);
        let q = GaussianParams::new(&g, m, l).unwrap();
        let z = reparameterize(&mut g, &q, &[0.0, 0.0]).unwrap();
        assert_eq!(g.value(z), &[1.5, -2.0]);
        assert!(reparameterize(&mut g, &q, &[0.0]).is_err());

        let mut g = Graph::new();
        let m = g.constant(vec![0.0, 0.0]);
        let l = g.constant(vec![0.0, 0.0]);
        let q = GaussianParams::new(&g, m, l).unwrap();
        let z = reparameterize(&mut g, &q, &[0.7, -1.3]).unwrap();
        assert_eq!(g.value(z), &[0.7, -1.3]);
    }

    #[test]
    fn reparameterize_gradient_reaches_both_parameters() {
        let mut g = Graph::new();
        let m = g.input(vec![0.2]);
        let l = g.input(vec![0.4]);
        let q = GaussianParams::new(&g, m, l).unwrap();
        let z = reparameterize(&mut g, &q, &[1.5]).unwrap();
        let s = g.sum(z);
        g.backward(s).unwrap();
        assert_eq!(g.grad(m).unwrap(), &[1.0]);
        let expected = 0.5 * (0.2f64).exp() * 1.5;
        assert!((g.grad(l).unwrap()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn reparameterized_mean_is_unbiased() {
        let mean = [0.5, -1.0, 2.0];
        let lv = [0.0, 1.0, -1.0];
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let eps: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut g = Graph::new();
            let m = g.constant(mean.to_vec());
            let l = g.constant(lv.to_vec());
            let q = GaussianParams::new(&g, m, l).unwrap();
            let z = reparameterize(&mut g, &q, &eps).unwrap();
            for (a, v) in acc.iter_mut().zip(g.value(z)) {
                *a += v;
            }
        }
        for i in 0..3 {
            let sigma = (0.5 * lv[i]).exp();
            let tol = 4.0 * sigma / (n as f64).sqrt();
            assert!((acc[i] / n as f64 - mean[i]).abs() < tol);
        }
    }
}
