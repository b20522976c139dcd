use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// `½(θ−c)ᵀA(θ−c) + b`, optionally with additive Gaussian noise on the loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTaskSpec {
    pub dim: usize,
    /// Row-major `dim x dim`, symmetric positive-definite.
    pub matrix: Vec<f64>,
    pub center: Vec<f64>,
    pub offset: f64,
    pub noise_scale: f64,
}

impl QuadraticTaskSpec {
    pub fn new(matrix: Vec<f64>, center: Vec<f64>, offset: f64, noise_scale: f64) -> Result<Self, ModelError> {
        let spec = Self {
            dim: center.len(),
            matrix,
            center,
            offset,
            noise_scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `A = Q diag(eigenvalues) Qᵀ` with `Q` a random orthogonal matrix.
    pub fn random<R: Rng + ?Sized>(
        eigenvalues: &[f64],
        center: Vec<f64>,
        offset: f64,
        noise_scale: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let dim = eigenvalues.len();
        if center.len() != dim {
            return Err(ModelError::Dimension {
                expected: dim,
                got: center.len(),
            });
        }
        let q = random_orthogonal(dim, rng);
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                a[i * dim + j] = (0..dim).map(|k| q[i * dim + k] * eigenvalues[k] * q[j * dim + k]).sum();
            }
        }
        // exact symmetry
        for i in 0..dim {
            for j in 0..i {
                let s = 0.5 * (a[i * dim + j] + a[j * dim + i]);
                a[i * dim + j] = s;
                a[j * dim + i] = s;
            }
        }
        Self::new(a, center, offset, noise_scale)
    }

    pub fn identity(center: Vec<f64>, offset: f64) -> Self {
        let dim = center.len();
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        Self {
            dim,
            matrix: a,
            center,
            offset,
            noise_scale: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.dim;
        if n == 0 || self.center.len() != n || self.matrix.len() != n * n {
            return Err(ModelError::InvalidQuadratic(format!(
                "dim {n}, center {}, matrix {}",
                self.center.len(),
                self.matrix.len()
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(ModelError::InvalidQuadratic(
                "noise_scale must be finite and >= 0".into(),
            ));
        }
        if self.matrix.iter().chain(&self.center).any(|v| !v.is_finite()) || !self.offset.is_finite() {
            return Err(ModelError::InvalidQuadratic("non-finite entry".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (self.matrix[i * n + j] - self.matrix[j * n + i]).abs() > 1e-12 {
                    return Err(ModelError::InvalidQuadratic(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        if !is_positive_definite(&self.matrix, n) {
            return Err(ModelError::InvalidQuadratic("matrix is not positive-definite".into()));
        }
        Ok(())
    }

    /// Noiseless loss and gradient.
    pub fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), ModelError> {
        if theta.len() != self.dim {
            return Err(ModelError::Dimension {
                expected: self.dim,
                got: theta.len(),
            });
        }
        let n = self.dim;
        let d: Vec<f64> = theta.iter().zip(&self.center).map(|(t, c)| t - c).collect();
        let grad: Vec<f64> = (0..n)
            .map(|i| self.matrix[i * n..(i + 1) * n].iter().zip(&d).map(|(a, x)| a * x).sum())
            .collect();
        let quad: f64 = d.iter().zip(&grad).map(|(x, g)| x * g).sum();
        Ok((0.5 * quad + self.offset, grad))
    }
}

/// Loss (with noise when `noise_scale > 0`) and noiseless gradient `A(θ−c)`.
/// The rng is only drawn from when the task is noisy.
pub fn quadratic_loss<R: Rng + ?Sized>(
    theta: &[f64],
    spec: &QuadraticTaskSpec,
    rng: &mut R,
) -> Result<(f64, Vec<f64>), ModelError> {
    let (loss, grad) = spec.eval(theta)?;
    let noise = if spec.noise_scale > 0.0 {
        let eta: f64 = rng.sample(StandardNormal);
        spec.noise_scale * eta
    } else {
        0.0
    };
    Ok((loss + noise, grad))
}

fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    // Gram-Schmidt on Gaussian columns, stored column k at q[i*n + k].
    loop {
        let mut q: Vec<f64> = (0..n * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut ok = true;
        for k in 0..n {
            for prev in 0..k {
                let dot: f64 = (0..n).map(|i| q[i * n + k] * q[i * n + prev]).sum();
                for i in 0..n {
                    q[i * n + k] -= dot * q[i * n + prev];
                }
            }
            let norm = (0..n).map(|i| q[i * n + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for i in 0..n {
                q[i * n + k] /= norm;
            }
        }
        if ok {
            return q;
        }
    }
}

fn is_positive_definite(a: &[f64], n: usize) -> bool {
    // Cholesky succeeds iff the symmetric matrix is positive-definite.
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if d <= 0.0 {
                    return false;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    true
}
