//! Single-excitation hopping matrices for the three coupling profiles, and
//! the spectral machinery used for every exact exponential in the crate.
//!
//! Sites are 1-based in formulas and output; vectors are 0-based.
//! The hopping amplitude between sites `i` and `i+1` is exactly
//! `J_{i,i+1}`, which puts perfect transfer in the PST chain at `t = π/2`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

/// A state vector in the single-excitation sector.
pub type State = DVector<C64>;

/// Which nearest-neighbour couplings the chain carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CouplingProfile {
    /// `J_{i,i+1} = j` everywhere.
    Uniform { j: f64 },
    /// Engineered couplings `J_{i,i+1} = √(i(N−i))`.
    Pst,
    /// End bonds `j0`, interior bonds `j`, with `0 < j0 < j`.
    WeakEnds { j: f64, j0: f64 },
}

impl CouplingProfile {
    pub fn uniform() -> Self {
        CouplingProfile::Uniform { j: 1.0 }
    }

    pub fn weak_ends(j0: f64) -> Self {
        CouplingProfile::WeakEnds { j: 1.0, j0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CouplingProfile::Uniform { j } => {
                if !(j > 0.0 && j.is_finite()) {
                    return Err(Error::InvalidProfile(format!("uniform coupling j = {j} must be positive")));
                }
            }
            CouplingProfile::Pst => {}
            CouplingProfile::WeakEnds { j, j0 } => {
                if !(j > 0.0 && j.is_finite()) {
                    return Err(Error::InvalidProfile(format!("bulk coupling j = {j} must be positive")));
                }
                if !(j0 > 0.0 && j0 < j) {
                    return Err(Error::InvalidProfile(format!(
                        "end coupling j0 = {j0} must satisfy 0 < j0 < j = {j}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match self {
            CouplingProfile::Uniform { .. } => "uniform",
            CouplingProfile::Pst => "pst",
            CouplingProfile::WeakEnds { .. } => "weak_ends",
        }
    }
}

/// The `n − 1` bond strengths of a chain of `n` sites.
pub fn couplings(profile: &CouplingProfile, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidSize { n, min: 2 });
    }
    profile.validate()?;
    let bonds = match *profile {
        CouplingProfile::Uniform { j } => vec![j; n - 1],
        CouplingProfile::Pst => (1..n).map(|i| ((i * (n - i)) as f64).sqrt()).collect(),
        CouplingProfile::WeakEnds { j, j0 } => {
            if n < 3 {
                return Err(Error::InvalidProfile(format!(
                    "weak-ends profile needs at least 3 sites, got {n}"
                )));
            }
            let mut c = vec![j; n - 1];
            c[0] = j0;
            c[n - 2] = j0;
            c
        }
    };
    Ok(bonds)
}

/// Real symmetric tridiagonal hopping matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct HoppingMatrix {
    bonds: Vec<f64>,
    matrix: DMatrix<f64>,
}

impl HoppingMatrix {
    pub fn from_couplings(bonds: &[f64]) -> Result<Self> {
        if bonds.is_empty() {
            return Err(Error::InvalidSize { n: 1, min: 2 });
        }
        if let Some(bad) = bonds.iter().find(|b| !b.is_finite()) {
            return Err(Error::InvalidProfile(format!("non-finite coupling {bad}")));
        }
        let n = bonds.len() + 1;
        let mut matrix = DMatrix::zeros(n, n);
        for (i, &b) in bonds.iter().enumerate() {
            matrix[(i, i + 1)] = b;
            matrix[(i + 1, i)] = b;
        }
        Ok(HoppingMatrix {
            bonds: bonds.to_vec(),
            matrix,
        })
    }

    pub fn from_profile(profile: &CouplingProfile, n: usize) -> Result<Self> {
        Self::from_couplings(&couplings(profile, n)?)
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn bonds(&self) -> &[f64] {
        &self.bonds
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Convenience wrapper mirroring the operation name.
pub fn hopping_matrix(bonds: &[f64]) -> Result<HoppingMatrix> {
    HoppingMatrix::from_couplings(bonds)
}

/// Eigen-decomposition `h = U diag(λ) Uᵀ` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector for `eigenvalues[k]`.
    eigenvectors: DMatrix<f64>,
}

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

impl SpectralDecomposition {
    pub fn new(h: &HoppingMatrix) -> Result<Self> {
        let m = h.matrix();
        let n = m.nrows();
        let eig = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(|| {
            Error::Numeric(format!(
                "symmetric eigensolver did not converge (n = {n}, max |h| = {:.3e})",
                m.amax()
            ))
        })?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            eigenvectors.set_column(col, &eig.eigenvectors.column(k));
        }
        if eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric(format!("non-finite eigenvalue for n = {n}")));
        }
        Ok(SpectralDecomposition {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `max |h − U diag(λ) Uᵀ|`.
    pub fn reconstruction_residual(&self, h: &HoppingMatrix) -> f64 {
        let u = &self.eigenvectors;
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues));
        (h.matrix() - u * d * u.transpose()).amax()
    }

    /// `max |UᵀU − I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let n = self.n();
        (self.eigenvectors.transpose() * &self.eigenvectors - DMatrix::identity(n, n)).amax()
    }

    /// Dense `exp(−i h t)`.
    pub fn unitary(&self, t: f64) -> DMatrix<C64> {
        let n = self.n();
        let u = &self.eigenvectors;
        let phases = self.phases(t);
        DMatrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| phases[k] * (u[(i, k)] * u[(j, k)])).sum()
        })
    }

    fn phases(&self, t: f64) -> Vec<C64> {
        self.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -l * t)).collect()
    }

    /// `exp(−i h t) v` without forming the dense unitary.
    pub fn propagate(&self, t: f64, v: &State) -> Result<State> {
        let n = self.n();
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
        let u = &self.eigenvectors;
        let phases = self.phases(t);
        // coefficients in the eigenbasis, rotated
        let coeff: Vec<C64> = (0..n)
            .map(|k| {
                let col = u.column(k);
                let c: C64 = col.iter().zip(v.iter()).map(|(&a, &b)| b * a).sum();
                c * phases[k]
            })
            .collect();
        let mut out = State::zeros(n);
        for (k, c) in coeff.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(u.column(k).iter()) {
                *o += c * a;
            }
        }
        Ok(out)
    }
}

pub fn spectral(h: &HoppingMatrix) -> Result<SpectralDecomposition> {
    SpectralDecomposition::new(h)
}

pub fn propagate_exact(s: &SpectralDecomposition, t: f64, v: &State) -> Result<State> {
    s.propagate(t, v)
}

/// Site basis vector `e_site` (1-based site label).
pub fn site_state(n: usize, site: usize) -> State {
    assert!(site >= 1 && site <= n, "site {site} outside 1..={n}");
    let mut v = State::zeros(n);
    v[site - 1] = C64::new(1.0, 0.0);
    v
}
