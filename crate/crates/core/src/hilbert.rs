//! Dense complex operators on small Hilbert spaces.
//!
//! Everything here is plain `ndarray` storage; matrix products go through
//! `Array2::dot`. Hermitian eigendecompositions are delegated to `nalgebra`
//! and post-processed into a deterministic form: eigenvalues ascending,
//! each eigenvector's largest-magnitude entry rotated real positive.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
/// Dense complex matrix. Operators are square `CMat`s in a fixed basis.
pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

pub const ONE: C64 = C64::new(1.0, 0.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Identity operator of dimension `n`.
pub fn identity(n: usize) -> CMat {
    Array2::eye(n).mapv(|x: f64| C64::new(x, 0.0))
}

/// Kronecker product, row-major block convention:
/// `kron(a, b)[i*p + k, j*q + l] = a[i, j] * b[k, l]` for `b` of shape (p, q).
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (m, n) = a.dim();
    let (p, q) = b.dim();
    let mut out = Array2::zeros((m * p, n * q));
    for i in 0..m {
        for j in 0..n {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            for k in 0..p {
                for l in 0..q {
                    out[[i * p + k, j * q + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Truncated bosonic annihilation operator: `a[m, m+1] = sqrt(m+1)`.
pub fn annihilation(n: usize) -> CMat {
    let mut a = Array2::zeros((n, n));
    for m in 0..n.saturating_sub(1) {
        a[[m, m + 1]] = C64::new(((m + 1) as f64).sqrt(), 0.0);
    }
    a
}

/// Number operator a†a, diagonal 0..n-1 exactly.
pub fn number_op(n: usize) -> CMat {
    let mut out = Array2::zeros((n, n));
    for m in 0..n {
        out[[m, m]] = C64::new(m as f64, 0.0);
    }
    out
}

/// Pauli z in the qubit basis {|g> = 0, |e> = 1}: diag(-1, +1).
pub fn sigma_z() -> CMat {
    let mut s = Array2::zeros((2, 2));
    s[[0, 0]] = C64::new(-1.0, 0.0);
    s[[1, 1]] = ONE;
    s
}

pub fn sigma_x() -> CMat {
    let mut s = Array2::zeros((2, 2));
    s[[0, 1]] = ONE;
    s[[1, 0]] = ONE;
    s
}

/// Raising operator |e><g|.
pub fn sigma_plus() -> CMat {
    let mut s = Array2::zeros((2, 2));
    s[[1, 0]] = ONE;
    s
}

/// Lowering operator |g><e|.
pub fn sigma_minus() -> CMat {
    let mut s = Array2::zeros((2, 2));
    s[[0, 1]] = ONE;
    s
}

/// Conjugate transpose.
pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

/// [a, b] = ab - ba.
pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a.dot(b) - b.dot(a)
}

/// Largest entry magnitude.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

/// Largest deviation from Hermiticity, max |a - a†|.
pub fn herm_error(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Basis vector |k> in dimension `n`.
pub fn basis_vec(n: usize, k: usize) -> CVec {
    let mut v = Array1::zeros(n);
    v[k] = ONE;
    v
}

/// Density matrix |v><v| / <v|v>.
pub fn pure_rho(v: &CVec) -> CMat {
    let norm_sq: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    let n = v.len();
    let mut rho = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            rho[[i, j]] = v[i] * v[j].conj() / norm_sq;
        }
    }
    rho
}

/// Coherent state |alpha> truncated to `n` levels and renormalized.
pub fn coherent_vec(n: usize, alpha: C64) -> CVec {
    let mut v = Array1::zeros(n);
    let mut amp = ONE;
    v[0] = amp;
    for m in 1..n {
        amp *= alpha / C64::new((m as f64).sqrt(), 0.0);
        v[m] = amp;
    }
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv_into(|z| z / norm)
}

/// Tr(op * rho).
pub fn expectation(op: &CMat, rho: &CMat) -> C64 {
    let n = op.nrows();
    assert_eq!(op.dim(), rho.dim(), "expectation: operator/state shape mismatch");
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..n {
            acc += op[[i, j]] * rho[[j, i]];
        }
    }
    acc
}

pub fn trace(a: &CMat) -> C64 {
    a.diag().sum()
}

/// Eigendecomposition of a Hermitian operator.
///
/// `vectors` holds eigenvectors in columns, ordered like `values`
/// (ascending). The per-column phase is fixed so the largest-magnitude
/// entry is real positive, making repeated runs bit-reproducible.
#[derive(Debug, Clone)]
pub struct EigSystem {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl EigSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Transition angular frequency values\[m\] - values\[n\].
    pub fn omega(&self, m: usize, n: usize) -> f64 {
        self.values[m] - self.values[n]
    }

    /// Rotate a lab-frame operator into this eigenbasis: V† M V.
    pub fn to_eigenbasis(&self, m: &CMat) -> CMat {
        dagger(&self.vectors).dot(m).dot(&self.vectors)
    }

    /// Rotate an eigenbasis operator back to the lab frame: V M V†.
    pub fn to_lab(&self, m: &CMat) -> CMat {
        self.vectors.dot(m).dot(&dagger(&self.vectors))
    }

    /// Reorder and re-phase eigenpairs to follow `prev` continuously.
    ///
    /// Column j of the result is the eigenvector with the largest overlap
    /// against `prev` column j, re-phased so that overlap is real positive.
    /// Fails when the best overlap magnitude drops below 0.5 (the bases no
    /// longer identify states one-to-one) or two previous states claim the
    /// same new eigenvector.
    pub fn match_gauge_to(&self, prev: &EigSystem) -> Result<EigSystem> {
        let n = self.dim();
        if prev.dim() != n {
            return Err(Error::Shape(format!(
                "gauge matching dims {} vs {}",
                prev.dim(),
                n
            )));
        }
        // overlap[i, j] = <prev_i | new_j>
        let overlap = dagger(&prev.vectors).dot(&self.vectors);
        let mut perm = vec![usize::MAX; n];
        let mut taken = vec![false; n];
        for i in 0..n {
            let mut best = 0.0;
            let mut best_j = 0;
            for j in 0..n {
                let o = overlap[[i, j]].norm();
                if o > best {
                    best = o;
                    best_j = j;
                }
            }
            if best * best < 0.5 {
                return Err(Error::GaugeMatching(format!(
                    "state {} has max overlap^2 {:.3e} < 0.5; basis moved too far in one step",
                    i,
                    best * best
                )));
            }
            if taken[best_j] {
                return Err(Error::GaugeMatching(format!(
                    "eigenvector {} claimed by two continued states",
                    best_j
                )));
            }
            taken[best_j] = true;
            perm[i] = best_j;
        }
        let mut values = vec![0.0; n];
        let mut vectors = Array2::zeros((n, n));
        for i in 0..n {
            let j = perm[i];
            values[i] = self.values[j];
            let o = overlap[[i, j]];
            let phase = o / o.norm();
            // divide by the phase so <prev_i | new_i> becomes real positive
            for r in 0..n {
                vectors[[r, i]] = self.vectors[[r, j]] * phase.conj();
            }
        }
        Ok(EigSystem { values, vectors })
    }
}

/// Relative Hermiticity tolerance accepted by [`eigh`].
pub const HERM_TOL: f64 = 1e-12;

/// Hermitian eigendecomposition with deterministic ordering and gauge.
///
/// Rejects inputs whose Hermiticity defect exceeds `HERM_TOL` relative to
/// the largest entry.
pub fn eigh(h: &CMat) -> Result<EigSystem> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Shape(format!("eigh needs square input, got {:?}", h.dim())));
    }
    let scale = max_abs(h).max(1e-300);
    let defect = herm_error(h);
    if defect > HERM_TOL * scale {
        return Err(Error::NotHermitian(format!(
            "max |H - H†| = {:.3e} exceeds {:.1e} * max|H| = {:.3e}",
            defect,
            HERM_TOL,
            HERM_TOL * scale
        )));
    }
    let dm = nalgebra::DMatrix::<C64>::from_fn(n, n, |i, j| {
        // symmetrize so the solver sees an exactly Hermitian matrix
        0.5 * (h[[i, j]] + h[[j, i]].conj())
    });
    let se = dm.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let mut values = Vec::with_capacity(n);
    let mut vectors = Array2::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        values.push(se.eigenvalues[k]);
        // gauge: rotate the largest-magnitude entry to the positive real axis
        let mut big = 0.0;
        let mut big_r = 0;
        for r in 0..n {
            let m = se.eigenvectors[(r, k)].norm();
            if m > big {
                big = m;
                big_r = r;
            }
        }
        let pivot = se.eigenvectors[(big_r, k)];
        let phase = if big > 0.0 { pivot / big } else { ONE };
        let inv_phase = phase.conj();
        for r in 0..n {
            vectors[[r, col]] = se.eigenvectors[(r, k)] * inv_phase;
        }
    }
    Ok(EigSystem { values, vectors })
}

/// Smallest eigenvalue of a Hermitian operator (positivity monitor).
pub fn min_eigenvalue(h: &CMat) -> f64 {
    let n = h.nrows();
    let dm = nalgebra::DMatrix::<C64>::from_fn(n, n, |i, j| 0.5 * (h[[i, j]] + h[[j, i]].conj()));
    let ev = dm.symmetric_eigenvalues();
    ev.iter().cloned().fold(f64::INFINITY, f64::min)
}
