//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dsu::adaptation::ShiftRegion;
use dsu::autodiff::{finite_difference_gradient, relative_error, Tape, Var};
use dsu::dsu::dsu_transform;
use dsu::stats::instance_stats;
use dsu::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

/// Per-instance channel mean and `sqrt(biased var + eps)` by explicit loops.
pub fn loop_instance_stats(x: &Tensor, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut mu = vec![0.0; b * c];
    let mut sigma = vec![0.0; b * c];
    for i in 0..b {
        for j in 0..c {
            let mut sum = 0.0;
            for y in 0..h {
                for z in 0..w {
                    sum += x.get(&[i, j, y, z]);
                }
            }
            let m = sum / (h * w) as f64;
            let mut sq = 0.0;
            for y in 0..h {
                for z in 0..w {
                    let d = x.get(&[i, j, y, z]) - m;
                    sq += d * d;
                }
            }
            mu[i * c + j] = m;
            sigma[i * c + j] = (sq / (h * w) as f64 + eps).sqrt();
        }
    }
    (mu, sigma)
}

/// Biased standard deviation over the batch of a row-major `[B, C]` array.
pub fn loop_batch_spread(v: &[f64], b: usize, c: usize) -> Vec<f64> {
    (0..c)
        .map(|j| {
            let m = (0..b).map(|i| v[i * c + j]).sum::<f64>() / b as f64;
            ((0..b).map(|i| (v[i * c + j] - m).powi(2)).sum::<f64>() / b as f64).sqrt()
        })
        .collect()
}

/// `gamma * (x - mu) / sigma + beta` with sampled statistics, by loops.
pub fn loop_dsu(x: &Tensor, eps_mu: &Tensor, eps_sigma: &Tensor, eps: f64) -> Vec<f64> {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (mu, sigma) = loop_instance_stats(x, eps);
    let smu = loop_batch_spread(&mu, b, c);
    let ssig = loop_batch_spread(&sigma, b, c);
    let mut out = vec![0.0; x.numel()];
    for i in 0..b {
        for j in 0..c {
            let k = i * c + j;
            let beta = mu[k] + eps_mu.data()[k] * smu[j];
            let gamma = sigma[k] + eps_sigma.data()[k] * ssig[j];
            for y in 0..h {
                for z in 0..w {
                    let idx = ((i * c + j) * h + y) * w + z;
                    out[idx] = gamma * (x.data()[idx] - mu[k]) / sigma[k] + beta;
                }
            }
        }
    }
    out
}

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    let d = t.shape()[0];
    DMatrix::from_row_slice(d, d, t.data())
}

fn sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let vals = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose()
}

/// Gaussian 2-Wasserstein distance through nalgebra's eigensolver.
pub fn w2_nalgebra(mu1: &[f64], s1: &Tensor, mu2: &[f64], s2: &Tensor) -> f64 {
    let (a, b) = (to_matrix(s1), to_matrix(s2));
    let rb = sqrtm(&b);
    let cross = sqrtm(&(&rb * &a * &rb));
    let mean: f64 = mu1.iter().zip(mu2).map(|(x, y)| (x - y).powi(2)).sum();
    (mean + (a.trace() + b.trace() - 2.0 * cross.trace()).max(0.0)).sqrt()
}

/// Random SPD matrix `A A^T + 0.1 I`.
pub fn random_spd(r: &mut ChaCha8Rng, d: usize) -> Tensor {
    let a = normal_tensor(r, &[d, d]);
    let mut s = a.matmul(&a.transpose().unwrap()).unwrap();
    for i in 0..d {
        s.data_mut()[i * d + i] += 0.1;
    }
    s
}

/// Mean and biased std of each column of a list of rows, two passes.
pub fn two_pass(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let c = rows[0].len();
    let mean: Vec<f64> = (0..c).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..c)
        .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    (mean, std)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn region(mu_bar: Vec<f64>, sm: Vec<f64>, sigma_bar: Vec<f64>, ss: Vec<f64>, n: f64, omega: f64) -> ShiftRegion {
    ShiftRegion {
        position: 0,
        n,
        omega,
        count: 100,
        degenerate: false,
        mu_bar,
        sigma_bar,
        sigma_mu_bar: sm,
        sigma_sigma_bar: ss,
    }
}

pub fn random_region(r: &mut ChaCha8Rng, c: usize, omega: f64) -> ShiftRegion {
    region(
        (0..c).map(|_| r.random_range(-2.0..2.0)).collect(),
        (0..c).map(|_| r.random_range(0.0..1.0)).collect(),
        (0..c).map(|_| r.random_range(1.0..3.0)).collect(),
        (0..c).map(|_| r.random_range(0.0..0.8)).collect(),
        r.random_range(0.0..2.0),
        omega,
    )
}

/// One instance whose channel planes have the requested mean and std.
pub fn styled(r: &mut ChaCha8Rng, mu: &[f64], sigma: &[f64]) -> Tensor {
    let c = mu.len();
    let raw = normal_tensor(r, &[1, c, 4, 4]);
    let s = instance_stats(&raw, 0.0).unwrap();
    let mut x = raw.clone();
    for (i, plane) in x.data_mut().chunks_exact_mut(16).enumerate() {
        plane
            .iter_mut()
            .for_each(|v| *v = (*v - s.mu.data()[i]) / s.sigma.data()[i] * sigma[i] + mu[i]);
    }
    x
}

pub struct Mlp {
    pub x: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub target: Tensor,
    pub em: Tensor,
    pub es: Tensor,
}

const B: usize = 4;
const D: usize = 5;
const C: usize = 3;
const HW: usize = 4;

impl Mlp {
    pub fn random(r: &mut ChaCha8Rng) -> Self {
        Self {
            x: normal_tensor(r, &[B, D]),
            w1: normal_tensor(r, &[D, C * HW]),
            b1: normal_tensor(r, &[C * HW]).scale(0.1),
            w2: normal_tensor(r, &[C * HW, 2]).scale(0.5),
            target: normal_tensor(r, &[B, 2]),
            em: normal_tensor(r, &[B, C]),
            es: normal_tensor(r, &[B, C]),
        }
    }

    fn pre_activation(&self) -> Tensor {
        self.x.matmul(&self.w1).unwrap().add(&self.b1).unwrap()
    }

    /// Smooth enough for central differences: no pre-activation near the kink
    /// and no instance plane close to constant.
    pub fn well_conditioned(&self) -> bool {
        let z = self.pre_activation();
        let h = z.map(|v| v.max(0.0)).reshape([B, C, 2, 2]).unwrap();
        let s = instance_stats(&h, 1e-6).unwrap();
        z.data().iter().all(|v| v.abs() > 1e-2) && s.sigma.data().iter().all(|&v| v > 0.1)
    }

    fn loss(&self, tape: &mut Tape, w1: &Tensor) -> (Var, Var) {
        let x = tape.constant(self.x.clone());
        let w1v = tape.leaf(w1.clone());
        let b1 = tape.constant(self.b1.clone());
        let w2 = tape.constant(self.w2.clone());
        let z = tape.matmul(x, w1v).unwrap();
        let z = tape.add(z, b1).unwrap();
        let h = tape.relu(z).unwrap();
        let h = tape.reshape(h, [B, C, 2, 2]).unwrap();
        let d = dsu_transform(tape, h, &self.em, &self.es, 1e-6, false).unwrap().out;
        let d = tape.reshape(d, [B, C * HW]).unwrap();
        let y = tape.matmul(d, w2).unwrap();
        let t = tape.constant(self.target.clone());
        (w1v, tape.squared_error(y, t).unwrap())
    }

    /// Relative error between the tape gradient and central differences
    /// with respect to the first-layer weights.
    pub fn gradient_error(&self) -> f64 {
        let mut tape = Tape::new();
        let (w1, loss) = self.loss(&mut tape, &self.w1);
        let analytic = tape.backward(loss).unwrap().get(w1).unwrap();
        let numeric = finite_difference_gradient(
            |w| {
                let mut t = Tape::untraced();
                let (_, l) = self.loss(&mut t, w);
                t.value(l).item()
            },
            &self.w1,
            1e-5,
        )
        .unwrap();
        relative_error(&analytic, &numeric)
    }
}
