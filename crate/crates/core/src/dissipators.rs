//! Dissipator constructions for a system coupled linearly to a bosonic bath.
//!
//! Three generators of open-system dynamics share one bath description:
//!
//! * Lindblad single-quantum loss, kappa D[a].
//! * Static Redfield: the rank-4 generator assembled in the eigenbasis of
//!   the undriven Hamiltonian, with the bath entering only through J(omega)
//!   sampled at transition frequencies.
//! * Time-dependent Redfield: the same construction repeated in the
//!   instantaneous eigenbasis of the driven Hamiltonian.
//!
//! Rate convention: the population decay rate of transition mu <- nu is
//! J(omega_{nu mu}) |A_{mu nu}|^2. Each half-range correlation integral
//! carries a 1/2 and its imaginary (Lamb shift) part is dropped.
//!
//! The full non-secular generator is never materialized as a rank-4 array.
//! It is kept in factored form: with the gain-weighted coupling
//! Ag[m,n] = A[m,n] J(eps_n - eps_m), the dissipative derivative is
//!
//!   D(rho) = 1/2 ( [Ag rho, A] + [A, rho Ag†] )
//!
//! which costs a handful of dim^3 products per application. For Hermitian
//! rho the two terms are mutual adjoints and D(rho) = 1/2 [P - P†, A] with
//! P = Ag rho. Secular-filtered tensors are stored as explicit entry lists.

use ndarray::Array2;

use crate::environment::SpectralDensity;
use crate::error::{Error, Result};
use crate::hilbert::{dagger, eigh, herm_error, max_abs, CMat, EigSystem, C64};

/// System side of a system-bath coupling H_int = A (x) B: the Hermitian
/// coupling operator in the lab basis and the bath spectral density.
#[derive(Debug, Clone)]
pub struct CorrelationSpec {
    pub coupling: CMat,
    pub spectrum: SpectralDensity,
}

impl CorrelationSpec {
    pub fn new(coupling: CMat, spectrum: SpectralDensity) -> Result<Self> {
        let scale = max_abs(&coupling).max(1e-300);
        if herm_error(&coupling) > 1e-12 * scale {
            return Err(Error::NotHermitian(
                "bath coupling operator must be Hermitian".into(),
            ));
        }
        Ok(CorrelationSpec { coupling, spectrum })
    }
}

/// Which dissipator terms survive secular filtering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SecularFilter {
    /// Keep everything (full non-secular generator).
    None,
    /// Keep terms with |omega_{mu nu} - omega_{mu' nu'}| < omega_sec.
    Cutoff(f64),
    /// Textbook secularization: keep only self-coupling terms
    /// (mu,nu)=(mu',nu') and population transfer mu=nu, mu'=nu'.
    Full,
}

#[derive(Debug, Clone)]
enum Storage {
    /// Full non-secular generator in factored form.
    Factored { a: CMat, ag: CMat },
    /// Explicit entry list: d rho[mu,nu] += val * rho[mup,nup].
    Entries(Vec<Entry>),
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    mu: u32,
    nu: u32,
    mup: u32,
    nup: u32,
    val: C64,
}

/// Redfield generator in a fixed eigenbasis.
#[derive(Debug, Clone)]
pub struct RedfieldTensor {
    pub basis: EigSystem,
    pub filter: SecularFilter,
    storage: Storage,
}

/// Gain-weighted coupling: ag[m,n] = a[m,n] * J(eps_n - eps_m).
/// At zero temperature only downward transitions (eps_n > eps_m) survive.
fn gain_weighted(a_eig: &CMat, values: &[f64], j: &SpectralDensity) -> CMat {
    let n = values.len();
    Array2::from_shape_fn((n, n), |(m, k)| {
        a_eig[[m, k]] * C64::new(j.eval(values[k] - values[m]), 0.0)
    })
}

/// 1/2 ([ag rho, a] + [a, rho ag†]) for arbitrary rho.
fn factored_apply(a: &CMat, ag: &CMat, rho: &CMat) -> CMat {
    let p = ag.dot(rho);
    let q = rho.dot(&dagger(ag));
    let t1 = p.dot(a) - a.dot(&p);
    let t2 = a.dot(&q) - q.dot(a);
    (t1 + t2).mapv(|z| 0.5 * z)
}

/// Same generator restricted to Hermitian rho: 1/2 [P - P†, a], P = ag rho.
pub(crate) fn factored_apply_hermitian(a: &CMat, ag: &CMat, rho: &CMat) -> CMat {
    let p = ag.dot(rho);
    let s = &p - &dagger(&p);
    let c = s.dot(a) - a.dot(&s);
    c.mapv(|z| 0.5 * z)
}

impl RedfieldTensor {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Dissipative derivative for rho expressed in `basis`.
    pub fn apply(&self, rho_eig: &CMat) -> Result<CMat> {
        if rho_eig.dim() != (self.dim(), self.dim()) {
            return Err(Error::Shape(format!(
                "rho shape {:?} does not match tensor dim {}",
                rho_eig.dim(),
                self.dim()
            )));
        }
        Ok(match &self.storage {
            Storage::Factored { a, ag } => factored_apply(a, ag, rho_eig),
            Storage::Entries(items) => entries_apply(items, self.dim(), rho_eig),
        })
    }

    /// Cheaper variant valid when rho is Hermitian.
    pub fn apply_hermitian(&self, rho_eig: &CMat) -> Result<CMat> {
        if rho_eig.dim() != (self.dim(), self.dim()) {
            return Err(Error::Shape(format!(
                "rho shape {:?} does not match tensor dim {}",
                rho_eig.dim(),
                self.dim()
            )));
        }
        Ok(match &self.storage {
            Storage::Factored { a, ag } => factored_apply_hermitian(a, ag, rho_eig),
            Storage::Entries(items) => entries_apply(items, self.dim(), rho_eig),
        })
    }

    /// Factored matrices (coupling, gain-weighted coupling) when the tensor
    /// is stored unfiltered.
    pub fn factored_parts(&self) -> Option<(&CMat, &CMat)> {
        match &self.storage {
            Storage::Factored { a, ag } => Some((a, ag)),
            Storage::Entries(_) => None,
        }
    }

    pub fn n_entries(&self) -> Option<usize> {
        match &self.storage {
            Storage::Factored { .. } => None,
            Storage::Entries(items) => Some(items.len()),
        }
    }

    /// Dense superoperator S[(mu,nu),(mu',nu')] with row-major pair
    /// indices, for small-dimension comparisons.
    pub fn dense_superop(&self) -> CMat {
        let d = self.dim();
        let mut s = Array2::zeros((d * d, d * d));
        for mup in 0..d {
            for nup in 0..d {
                let mut e = CMat::zeros((d, d));
                e[[mup, nup]] = C64::new(1.0, 0.0);
                let col = self.apply(&e).unwrap();
                for mu in 0..d {
                    for nu in 0..d {
                        s[[mu * d + nu, mup * d + nup]] = col[[mu, nu]];
                    }
                }
            }
        }
        s
    }
}

fn entries_apply(items: &[Entry], dim: usize, rho: &CMat) -> CMat {
    let mut out = CMat::zeros((dim, dim));
    for e in items {
        out[[e.mu as usize, e.nu as usize]] +=
            e.val * rho[[e.mup as usize, e.nup as usize]];
    }
    out
}

/// Assemble the Redfield generator in the eigenbasis of `h0`.
pub fn build_redfield(
    h0: &CMat,
    spec: &CorrelationSpec,
    filter: SecularFilter,
) -> Result<RedfieldTensor> {
    let eig = eigh(h0)?;
    build_redfield_in_basis(eig, spec, filter)
}

/// Same, reusing an existing eigendecomposition of the Hamiltonian.
pub fn build_redfield_in_basis(
    eig: EigSystem,
    spec: &CorrelationSpec,
    filter: SecularFilter,
) -> Result<RedfieldTensor> {
    let dim = eig.dim();
    if spec.coupling.dim() != (dim, dim) {
        return Err(Error::Shape(format!(
            "coupling shape {:?} does not match basis dim {}",
            spec.coupling.dim(),
            dim
        )));
    }
    let scale = max_abs(&spec.coupling).max(1e-300);
    if herm_error(&spec.coupling) > 1e-12 * scale {
        return Err(Error::NotHermitian("coupling operator must be Hermitian".into()));
    }
    let a = eig.to_eigenbasis(&spec.coupling);
    let ag = gain_weighted(&a, &eig.values, &spec.spectrum);
    let storage = match filter {
        SecularFilter::None => Storage::Factored { a, ag },
        SecularFilter::Cutoff(omega_sec) => {
            if !(omega_sec > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "secular cutoff must be positive, got {omega_sec}"
                )));
            }
            Storage::Entries(cutoff_entries(&eig, &a, &ag, &spec.spectrum, omega_sec))
        }
        SecularFilter::Full => Storage::Entries(structural_entries(&eig, &a, &ag, &spec.spectrum)),
    };
    Ok(RedfieldTensor { basis: eig, filter, storage })
}

/// Total tensor element R[mu,nu,mu',nu'] from the factored pieces.
/// `m_mat` = a.ag and `k_mat` = ag†.a carry the summed loss terms.
fn element(
    eig: &EigSystem,
    a: &CMat,
    j: &SpectralDensity,
    m_mat: &CMat,
    k_mat: &CMat,
    mu: usize,
    nu: usize,
    mup: usize,
    nup: usize,
) -> C64 {
    let jj = 0.5
        * (j.eval(eig.values[mup] - eig.values[mu]) + j.eval(eig.values[nup] - eig.values[nu]));
    let mut val = a[[mu, mup]] * a[[nup, nu]] * C64::new(jj, 0.0);
    if nu == nup {
        val -= 0.5 * m_mat[[mu, mup]];
    }
    if mu == mup {
        val -= 0.5 * k_mat[[nup, nu]];
    }
    val
}

fn cutoff_entries(
    eig: &EigSystem,
    a: &CMat,
    ag: &CMat,
    j: &SpectralDensity,
    omega_sec: f64,
) -> Vec<Entry> {
    let dim = eig.dim();
    let m_mat = a.dot(ag);
    let k_mat = dagger(ag).dot(a);
    let thresh = 1e-16 * max_abs(ag).max(1e-300) * max_abs(a).max(1.0);
    let mut items = Vec::new();
    for mu in 0..dim {
        for nu in 0..dim {
            let w = eig.omega(mu, nu);
            for mup in 0..dim {
                for nup in 0..dim {
                    if (w - eig.omega(mup, nup)).abs() >= omega_sec {
                        continue;
                    }
                    let val = element(eig, a, j, &m_mat, &k_mat, mu, nu, mup, nup);
                    if val.norm() > thresh {
                        items.push(Entry {
                            mu: mu as u32,
                            nu: nu as u32,
                            mup: mup as u32,
                            nup: nup as u32,
                            val,
                        });
                    }
                }
            }
        }
    }
    items
}

fn structural_entries(
    eig: &EigSystem,
    a: &CMat,
    ag: &CMat,
    j: &SpectralDensity,
) -> Vec<Entry> {
    let dim = eig.dim();
    let m_mat = a.dot(ag);
    let k_mat = dagger(ag).dot(a);
    let thresh = 1e-16 * max_abs(ag).max(1e-300) * max_abs(a).max(1.0);
    let mut items = Vec::new();
    let mut push = |mu: usize, nu: usize, mup: usize, nup: usize| {
        let val = element(eig, a, j, &m_mat, &k_mat, mu, nu, mup, nup);
        if val.norm() > thresh {
            items.push(Entry {
                mu: mu as u32,
                nu: nu as u32,
                mup: mup as u32,
                nup: nup as u32,
                val,
            });
        }
    };
    for mu in 0..dim {
        for nu in 0..dim {
            push(mu, nu, mu, nu);
        }
    }
    for mu in 0..dim {
        for mup in 0..dim {
            if mup != mu {
                push(mu, mu, mup, mup);
            }
        }
    }
    items
}

/// kappa ( a rho a† - 1/2 {a†a, rho} ).
pub fn lindblad_apply(rho: &CMat, a: &CMat, kappa: f64) -> Result<CMat> {
    if rho.dim() != a.dim() {
        return Err(Error::Shape(format!(
            "rho shape {:?} vs operator shape {:?}",
            rho.dim(),
            a.dim()
        )));
    }
    let ad = dagger(a);
    let n_op = ad.dot(a);
    let sandwich = a.dot(rho).dot(&ad);
    let anti = n_op.dot(rho) + rho.dot(&n_op);
    Ok((sandwich - anti.mapv(|z| 0.5 * z)).mapv(|z| z * kappa))
}

/// Dense superoperator of kappa D[a], same index convention as
/// [`RedfieldTensor::dense_superop`].
pub fn lindblad_superop(a: &CMat, kappa: f64) -> CMat {
    let d = a.nrows();
    let mut s = Array2::zeros((d * d, d * d));
    for mup in 0..d {
        for nup in 0..d {
            let mut e = CMat::zeros((d, d));
            e[[mup, nup]] = C64::new(1.0, 0.0);
            let col = lindblad_apply(&e, a, kappa).unwrap();
            for mu in 0..d {
                for nu in 0..d {
                    s[[mu * d + nu, mup * d + nup]] = col[[mu, nu]];
                }
            }
        }
    }
    s
}

/// Lindblad transition rate kappa |<mu|a|nu>|^2 between eigenstates.
pub fn lindblad_rate(eig: &EigSystem, a_lab: &CMat, kappa: f64, mu: usize, nu: usize) -> f64 {
    let a_eig = eig.to_eigenbasis(a_lab);
    kappa * a_eig[[mu, nu]].norm_sqr()
}

/// Golden-rule decay rate of transition mu <- nu under a Redfield bath:
/// J(omega_{nu mu}) |A_{mu nu}|^2.
pub fn redfield_rate(eig: &EigSystem, spec: &CorrelationSpec, mu: usize, nu: usize) -> f64 {
    let a_eig = eig.to_eigenbasis(&spec.coupling);
    spec.spectrum.eval(eig.omega(nu, mu)) * a_eig[[mu, nu]].norm_sqr()
}

/// Gain-weighted coupling in the lab frame for an arbitrary Hamiltonian:
/// Ag = V (W o V†XV) V† with W[m,n] = J(eps_n - eps_m). Basis-invariant
/// (eigenvector phases and ordering cancel), so no gauge bookkeeping.
pub fn instantaneous_gain(h: &CMat, spec: &CorrelationSpec) -> Result<CMat> {
    let eig = eigh(h)?;
    let a_inst = eig.to_eigenbasis(&spec.coupling);
    let ag_inst = gain_weighted(&a_inst, &eig.values, &spec.spectrum);
    Ok(eig.to_lab(&ag_inst))
}

/// One step of the time-dependent Redfield construction.
///
/// Diagonalizes the instantaneous Hamiltonian, continues its eigenbasis
/// from `prev_gauge` (max-overlap ordering, phases fixed real positive
/// against the previous step), and returns the dissipative derivative of
/// `rho_lab` in the lab frame together with the matched eigensystem. The
/// gauge matching is the adiabaticity diagnostic: it fails when the basis
/// rotates too far between calls.
pub fn td_redfield_apply(
    hs_t: &CMat,
    spec: &CorrelationSpec,
    rho_lab: &CMat,
    prev_gauge: Option<&EigSystem>,
) -> Result<(CMat, EigSystem)> {
    let raw = eigh(hs_t)?;
    let gauge = match prev_gauge {
        Some(prev) => raw.match_gauge_to(prev)?,
        None => raw,
    };
    let a_inst = gauge.to_eigenbasis(&spec.coupling);
    let ag_inst = gain_weighted(&a_inst, &gauge.values, &spec.spectrum);
    let rho_inst = gauge.to_eigenbasis(rho_lab);
    let d_inst = factored_apply(&a_inst, &ag_inst, &rho_inst);
    Ok((gauge.to_lab(&d_inst), gauge))
}

/// Stroboscopic cache of the time-dependent Redfield generator over one
/// drive period.
///
/// Stores the lab-frame gain-weighted coupling Ag(t_k) rotated into a fixed
/// reference eigenbasis at equidistant phases, and blends neighbours
/// linearly in between. The dissipative derivative is linear in Ag with
/// real weights, so blending Ag matrices equals blending applied
/// dissipators.
#[derive(Debug, Clone)]
pub struct TdbrCache {
    ag_ref: Vec<CMat>,
    period: f64,
}

impl TdbrCache {
    /// `h_of_t` must be periodic with `period`; `reference` is the basis
    /// (typically of the undriven Hamiltonian) the cache is stored in.
    pub fn build(
        reference: &EigSystem,
        h_of_t: &dyn Fn(f64) -> CMat,
        spec: &CorrelationSpec,
        period: f64,
        points: usize,
    ) -> Result<Self> {
        if points < 4 {
            return Err(Error::InvalidParameter(format!(
                "cache needs at least 4 phase points, got {points}"
            )));
        }
        if !(period > 0.0) {
            return Err(Error::InvalidParameter(format!("period must be positive, got {period}")));
        }
        let mut ag_ref = Vec::with_capacity(points);
        for k in 0..points {
            let t = period * k as f64 / points as f64;
            let ag_lab = instantaneous_gain(&h_of_t(t), spec)?;
            ag_ref.push(reference.to_eigenbasis(&ag_lab));
        }
        Ok(TdbrCache { ag_ref, period })
    }

    pub fn points(&self) -> usize {
        self.ag_ref.len()
    }

    /// Interpolated Ag in the reference basis at time `t` (wraps mod period).
    pub fn gain_at(&self, t: f64) -> CMat {
        let m = self.ag_ref.len();
        let s = (t / self.period).rem_euclid(1.0) * m as f64;
        let k = (s.floor() as usize).min(m - 1);
        let theta = s - k as f64;
        let next = (k + 1) % m;
        let w0 = C64::new(1.0 - theta, 0.0);
        let w1 = C64::new(theta, 0.0);
        let mut out = self.ag_ref[k].mapv(|z| z * w0);
        out.scaled_add(w1, &self.ag_ref[next]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::SpectralDensity;
    use crate::ghz;
    use crate::hilbert::{
        annihilation, basis_vec, expectation, identity, number_op, pure_rho, trace, ONE, ZERO,
    };
    use crate::model::{DriveKind, DriveSpec, SystemParams};
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, n), |_| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        &a + &dagger(&a)
    }

    fn cavity_h0(n: usize, omega_r: f64) -> CMat {
        number_op(n).mapv(|z| z * omega_r)
    }

    fn cavity_spec(n: usize, j: SpectralDensity) -> CorrelationSpec {
        let a = annihilation(n);
        CorrelationSpec::new(&a + &dagger(&a), j).unwrap()
    }

    #[test]
    fn lindblad_dark_state_and_single_photon_rate() {
        let n = 5;
        let a = annihilation(n);
        let kappa = 0.37;
        let vac = pure_rho(&basis_vec(n, 0));
        assert!(max_abs(&lindblad_apply(&vac, &a, kappa).unwrap()) < 1e-15);
        let fock1 = pure_rho(&basis_vec(n, 1));
        let d = lindblad_apply(&fock1, &a, kappa).unwrap();
        // d<n>/dt = -kappa for the one-photon state
        assert_relative_eq!(
            expectation(&number_op(n), &d).re,
            -kappa,
            max_relative = 1e-12
        );
    }

    #[test]
    fn lindblad_traceless_on_random_state() {
        let n = 6;
        let a = annihilation(n);
        let rho = random_hermitian(n, 5);
        let d = lindblad_apply(&rho, &a, 1.3).unwrap();
        assert!(trace(&d).norm() < 1e-12 * max_abs(&rho));
        assert!(herm_error(&d) < 1e-12 * max_abs(&d).max(1.0));
    }

    #[test]
    fn gain_weighting_is_one_sided() {
        // decoupled cavity with flat J: the gain matrix is exactly kappa * a
        let n = 7;
        let kappa = 0.8;
        let eig = eigh(&cavity_h0(n, 47.0)).unwrap();
        let spec = cavity_spec(n, SpectralDensity::flat(kappa));
        let a_e = eig.to_eigenbasis(&spec.coupling);
        let ag = gain_weighted(&a_e, &eig.values, &spec.spectrum);
        let want = eig.to_eigenbasis(&annihilation(n)).mapv(|z| z * kappa);
        assert!(max_abs(&(&ag - &want)) < 1e-12);
    }

    #[test]
    fn factored_apply_matches_dense_rank4_oracle() {
        // independent oracle: assemble the rank-4 tensor from the textbook
        // four-term expression and contract it by brute force
        let dim = 4;
        let h = random_hermitian(dim, 11);
        let coupling = random_hermitian(dim, 12);
        for spectrum in [
            SpectralDensity::flat(0.6),
            SpectralDensity::ohmic(0.05, 30.0),
        ] {
            let spec = CorrelationSpec::new(coupling.clone(), spectrum).unwrap();
            let tensor =
                build_redfield(&h, &spec, SecularFilter::None).unwrap();
            let eig = &tensor.basis;
            let a = eig.to_eigenbasis(&coupling);
            let jf = |w: f64| spectrum.eval(w);
            let ev = &eig.values;
            let mut r = vec![ZERO; dim * dim * dim * dim];
            let idx = |a_: usize, b: usize, c: usize, d: usize| {
                ((a_ * dim + b) * dim + c) * dim + d
            };
            for mu in 0..dim {
                for nu in 0..dim {
                    for mup in 0..dim {
                        for nup in 0..dim {
                            let mut val = 0.5
                                * a[[mu, mup]]
                                * a[[nup, nu]]
                                * C64::new(jf(ev[mup] - ev[mu]) + jf(ev[nup] - ev[nu]), 0.0);
                            if nu == nup {
                                for n in 0..dim {
                                    val -= 0.5
                                        * a[[mu, n]]
                                        * a[[n, mup]]
                                        * C64::new(jf(ev[mup] - ev[n]), 0.0);
                                }
                            }
                            if mu == mup {
                                for n in 0..dim {
                                    val -= 0.5
                                        * a[[nup, n]]
                                        * a[[n, nu]]
                                        * C64::new(jf(ev[nup] - ev[n]), 0.0);
                                }
                            }
                            r[idx(mu, nu, mup, nup)] = val;
                        }
                    }
                }
            }
            // contract against a random (non-Hermitian) state
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let rho = Array2::from_shape_fn((dim, dim), |_| {
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let rho_e = eig.to_eigenbasis(&rho);
            let mut want = CMat::zeros((dim, dim));
            for mu in 0..dim {
                for nu in 0..dim {
                    let mut acc = ZERO;
                    for mup in 0..dim {
                        for nup in 0..dim {
                            acc += r[idx(mu, nu, mup, nup)] * rho_e[[mup, nup]];
                        }
                    }
                    want[[mu, nu]] = acc;
                }
            }
            let got = tensor.apply(&rho_e).unwrap();
            assert!(
                max_abs(&(&got - &want)) < 1e-12 * max_abs(&want).max(1.0),
                "factored/dense mismatch {:.3e}",
                max_abs(&(&got - &want))
            );
        }
    }

    #[test]
    fn hermitian_fast_path_agrees_with_general() {
        let dim = 6;
        let h = random_hermitian(dim, 21);
        let spec = CorrelationSpec::new(random_hermitian(dim, 22), SpectralDensity::ohmic(0.1, 40.0))
            .unwrap();
        let tensor = build_redfield(&h, &spec, SecularFilter::None).unwrap();
        let rho = {
            let r = random_hermitian(dim, 23);
            let tr = trace(&r);
            r.mapv(|z| z / tr)
        };
        let rho_e = tensor.basis.to_eigenbasis(&rho);
        let a = tensor.apply(&rho_e).unwrap();
        let b = tensor.apply_hermitian(&rho_e).unwrap();
        assert!(max_abs(&(&a - &b)) < 1e-12 * max_abs(&a).max(1.0));
    }

    #[test]
    fn trace_and_hermiticity_preserved_by_all_filters() {
        let dim = 6;
        let h = random_hermitian(dim, 31);
        let spec =
            CorrelationSpec::new(random_hermitian(dim, 32), SpectralDensity::flat(0.9)).unwrap();
        for filter in [
            SecularFilter::None,
            SecularFilter::Cutoff(0.7),
            SecularFilter::Full,
        ] {
            let tensor = build_redfield(&h, &spec, filter).unwrap();
            for seed in 40..44 {
                let rho = random_hermitian(dim, seed);
                let rho_e = tensor.basis.to_eigenbasis(&rho);
                let d = tensor.apply(&rho_e).unwrap();
                assert!(
                    trace(&d).norm() < 1e-11 * max_abs(&d).max(1.0),
                    "trace leak under {filter:?}"
                );
                assert!(
                    herm_error(&d) < 1e-11 * max_abs(&d).max(1.0),
                    "hermiticity broken under {filter:?}"
                );
            }
        }
    }

    #[test]
    fn decoupled_cavity_fock1_decays_at_kappa() {
        let n = 6;
        let kappa = 1.1;
        let spec = cavity_spec(n, SpectralDensity::flat(kappa));
        let tensor = build_redfield(&cavity_h0(n, 47.0), &spec, SecularFilter::None).unwrap();
        let fock1 = pure_rho(&basis_vec(n, 1));
        let rho_e = tensor.basis.to_eigenbasis(&fock1);
        let d = tensor.apply_hermitian(&rho_e).unwrap();
        let d_lab = tensor.basis.to_lab(&d);
        assert_relative_eq!(
            expectation(&number_op(n), &d_lab).re,
            -kappa,
            max_relative = 1e-10
        );
    }

    #[test]
    fn cutoff_filtered_superop_equals_lindblad_on_cavity() {
        // dropping the +-2 omega_r cross terms leaves exactly kappa D[a]
        let n = 6;
        let kappa = 0.62;
        let omega_r = ghz(7.5);
        let spec = cavity_spec(n, SpectralDensity::flat(kappa));
        let tensor =
            build_redfield(&cavity_h0(n, omega_r), &spec, SecularFilter::Cutoff(omega_r)).unwrap();
        // basis of a diagonal Hamiltonian is the identity, so superoperators
        // are directly comparable
        assert!(max_abs(&(&tensor.basis.vectors - &identity(n))) < 1e-12);
        let s_br = tensor.dense_superop();
        let s_l = lindblad_superop(&annihilation(n), kappa);
        assert!(max_abs(&(&s_br - &s_l)) < 1e-10 * kappa);
    }

    #[test]
    fn nonsecular_cavity_generator_carries_cross_terms() {
        // the unfiltered generator additionally couples rho_{12} -> rho_{01};
        // structural secularization removes that entry again
        let n = 4;
        let kappa = 0.62;
        let spec = cavity_spec(n, SpectralDensity::flat(kappa));
        let h0 = cavity_h0(n, ghz(7.5));
        let full = build_redfield(&h0, &spec, SecularFilter::None).unwrap();
        let sec = build_redfield(&h0, &spec, SecularFilter::Full).unwrap();
        let mut e12 = CMat::zeros((n, n));
        e12[[1, 2]] = ONE;
        let d_full = full.apply(&e12).unwrap();
        let d_sec = sec.apply(&e12).unwrap();
        assert!(d_full[[0, 1]].norm() > 0.1 * kappa);
        assert!(d_sec[[0, 1]].norm() < 1e-14);
        // population transfer survives secularization
        let mut e11 = CMat::zeros((n, n));
        e11[[1, 1]] = ONE;
        let p_sec = sec.apply(&e11).unwrap();
        assert_relative_eq!(p_sec[[0, 0]].re, kappa, max_relative = 1e-10);
    }

    #[test]
    fn secular_filter_is_monotone_in_cutoff() {
        let dim = 5;
        let h = random_hermitian(dim, 51);
        let spec =
            CorrelationSpec::new(random_hermitian(dim, 52), SpectralDensity::flat(0.4)).unwrap();
        let full = build_redfield(&h, &spec, SecularFilter::None).unwrap();
        let mut prev_count = 0;
        for cutoff in [0.1, 1.0, 10.0, 1e6] {
            let t = build_redfield(&h, &spec, SecularFilter::Cutoff(cutoff)).unwrap();
            let count = t.n_entries().unwrap();
            assert!(count >= prev_count, "entry count shrank as cutoff grew");
            prev_count = count;
        }
        // at a cutoff beyond every frequency mismatch the full tensor returns
        let wide = build_redfield(&h, &spec, SecularFilter::Cutoff(1e6)).unwrap();
        let rho = random_hermitian(dim, 53);
        let rho_e = full.basis.to_eigenbasis(&rho);
        let a = full.apply(&rho_e).unwrap();
        let b = wide.apply(&rho_e).unwrap();
        assert!(max_abs(&(&a - &b)) < 1e-11 * max_abs(&a).max(1.0));
    }

    #[test]
    fn ohmic_cutoff_silences_high_transitions() {
        // transitions above the spectral cutoff draw zero rate
        let n = 6;
        let omega_r = 30.0;
        let spec = cavity_spec(n, SpectralDensity::ohmic(0.01, 40.0));
        let eig = eigh(&cavity_h0(n, omega_r)).unwrap();
        // double-quantum gap 2 omega_r = 60 exceeds the cutoff 40; the
        // single-quantum gap stays inside
        assert!(spec.spectrum.eval(2.0 * omega_r) == 0.0);
        assert!(spec.spectrum.eval(omega_r) > 0.0);
        let a_e = eig.to_eigenbasis(&spec.coupling);
        let ag = gain_weighted(&a_e, &eig.values, &spec.spectrum);
        for m in 0..n - 1 {
            assert!(ag[[m, m + 1]].norm() > 0.0);
        }
    }

    #[test]
    fn golden_rate_purcell_value() {
        let p = SystemParams {
            omega_q: ghz(5.304),
            omega_r: ghz(7.5),
            g: ghz(0.211),
            n_trunc: 8,
        };
        let kappa = 0.7;
        let spec = CorrelationSpec::new(
            {
                let a = p.a_full();
                &a + &dagger(&a)
            },
            SpectralDensity::flat(kappa),
        )
        .unwrap();
        let eig = eigh(&p.build_rabi()).unwrap();
        let labels = crate::model::dressed_labels(&eig, p.n_trunc).unwrap();
        let e0 = crate::model::find_labeled(&labels, 1, 0).unwrap();
        let g0 = crate::model::find_labeled(&labels, 0, 0).unwrap();
        let rate = redfield_rate(&eig, &spec, g0, e0);
        // leading-order value J |g (Sigma - Delta) / (Sigma Delta)|^2
        let delta = p.detuning();
        let sigma = p.omega_q + p.omega_r;
        let pert = kappa * (p.g * (sigma - delta) / (sigma * delta)).powi(2);
        assert_relative_eq!(rate, pert, max_relative = 2e-2);
    }

    #[test]
    fn td_apply_reduces_to_static_without_drive() {
        let dim = 6;
        let h = random_hermitian(dim, 61);
        let spec =
            CorrelationSpec::new(random_hermitian(dim, 62), SpectralDensity::ohmic(0.02, 50.0))
                .unwrap();
        let rho = {
            let r = random_hermitian(dim, 63);
            let tr = trace(&r);
            r.mapv(|z| z / tr)
        };
        let tensor = build_redfield(&h, &spec, SecularFilter::None).unwrap();
        let rho_e = tensor.basis.to_eigenbasis(&rho);
        let want = tensor.basis.to_lab(&tensor.apply(&rho_e).unwrap());
        let (got, _gauge) = td_redfield_apply(&h, &spec, &rho, None).unwrap();
        assert!(max_abs(&(&got - &want)) < 1e-11 * max_abs(&want).max(1.0));
    }

    #[test]
    fn td_apply_at_drive_zero_crossing_matches_static() {
        // cosine drive vanishes a quarter period in; the instantaneous
        // generator there is the undriven one
        let p = SystemParams {
            omega_q: ghz(5.304),
            omega_r: ghz(7.5),
            g: ghz(0.211),
            n_trunc: 4,
        };
        let drive = DriveSpec { kind: DriveKind::Cosine, amplitude: 0.9, omega_d: ghz(7.5) };
        let h0 = p.build_rabi();
        let t_zero = 0.25 * drive.period();
        let h_t = &h0 + &drive.hamiltonian(&p, t_zero);
        let spec = CorrelationSpec::new(
            {
                let a = p.a_full();
                &a + &dagger(&a)
            },
            SpectralDensity::flat(0.5),
        )
        .unwrap();
        let rho = pure_rho(&basis_vec(p.dim(), p.bare_index(1, 0)));
        let (d_static, _) = td_redfield_apply(&h0, &spec, &rho, None).unwrap();
        let (d_inst, _) = td_redfield_apply(&h_t, &spec, &rho, None).unwrap();
        assert!(max_abs(&(&d_inst - &d_static)) < 1e-7 * max_abs(&d_static));
    }

    #[test]
    fn td_apply_rejects_discontinuous_gauge() {
        let dim = 5;
        let spec =
            CorrelationSpec::new(random_hermitian(dim, 71), SpectralDensity::flat(0.3)).unwrap();
        let prev = eigh(&random_hermitian(dim, 72)).unwrap();
        let h_new = random_hermitian(dim, 73);
        let rho = pure_rho(&basis_vec(dim, 0));
        assert!(matches!(
            td_redfield_apply(&h_new, &spec, &rho, Some(&prev)),
            Err(Error::GaugeMatching(_))
        ));
    }

    #[test]
    fn instantaneous_gain_is_basis_invariant() {
        // conjugating H and X by a unitary conjugates Ag the same way
        let dim = 5;
        let h = random_hermitian(dim, 81);
        let x = random_hermitian(dim, 82);
        let w = eigh(&random_hermitian(dim, 83)).unwrap().vectors;
        let j = SpectralDensity::ohmic(0.07, 60.0);
        let spec = CorrelationSpec::new(x.clone(), j).unwrap();
        let ag = instantaneous_gain(&h, &spec).unwrap();
        let h2 = w.dot(&h).dot(&dagger(&w));
        let x2 = w.dot(&x).dot(&dagger(&w));
        let spec2 = CorrelationSpec::new(x2, j).unwrap();
        let ag2 = instantaneous_gain(&h2, &spec2).unwrap();
        let want = w.dot(&ag).dot(&dagger(&w));
        assert!(max_abs(&(&ag2 - &want)) < 1e-10 * max_abs(&want).max(1.0));
    }

    #[test]
    fn cache_reproduces_grid_points_and_interpolates() {
        let p = SystemParams {
            omega_q: ghz(5.304),
            omega_r: ghz(7.5),
            g: ghz(0.211),
            n_trunc: 4,
        };
        let drive = DriveSpec { kind: DriveKind::Cosine, amplitude: 2.0, omega_d: ghz(7.5) };
        let h0 = p.build_rabi();
        let eig0 = eigh(&h0).unwrap();
        let spec = CorrelationSpec::new(
            {
                let a = p.a_full();
                &a + &dagger(&a)
            },
            SpectralDensity::ohmic_calibrated(0.6, p.omega_r).unwrap(),
        )
        .unwrap();
        let h_of_t = |t: f64| &h0 + &drive.hamiltonian(&p, t);
        let period = drive.period();
        let cache = TdbrCache::build(&eig0, &h_of_t, &spec, period, 64).unwrap();
        // exact at stored phases, including the periodic wrap
        for &t in &[0.0, period / 4.0, period * 63.0 / 64.0, period, 2.5 * period] {
            let direct = eig0.to_eigenbasis(&instantaneous_gain(&h_of_t(t), &spec).unwrap());
            let k = (t / period).rem_euclid(1.0) * 64.0;
            if (k - k.round()).abs() < 1e-9 {
                assert!(max_abs(&(&cache.gain_at(t) - &direct)) < 1e-10 * max_abs(&direct));
            }
        }
        // between phases the linear blend tracks the direct build closely
        let t_mid = period * (10.5 / 64.0);
        let direct = eig0.to_eigenbasis(&instantaneous_gain(&h_of_t(t_mid), &spec).unwrap());
        let err = max_abs(&(&cache.gain_at(t_mid) - &direct)) / max_abs(&direct);
        assert!(err < 2e-3, "interpolation error {err:.2e}");
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        // trace and Hermiticity preservation must hold for every filter and
        // spectrum, not just the fixtures above
        #[test]
        fn apply_is_traceless_and_hermiticity_preserving(
            seed in 0u64..(1 << 48),
            dim in 3usize..6,
            level in 0.05f64..2.0,
            omega_r in 0.7f64..4.0,
            use_ohmic: bool,
            filter in prop_oneof![
                Just(SecularFilter::None),
                Just(SecularFilter::Full),
                (0.3f64..4.0).prop_map(SecularFilter::Cutoff),
            ],
        ) {
            let h0 = random_hermitian(dim, seed);
            let coupling = random_hermitian(dim, seed ^ 0xa5a5);
            let j = if use_ohmic {
                SpectralDensity::ohmic_calibrated(level, omega_r).unwrap()
            } else {
                SpectralDensity::flat(level)
            };
            let tensor =
                build_redfield(&h0, &CorrelationSpec::new(coupling, j).unwrap(), filter).unwrap();
            let rho = random_hermitian(dim, seed ^ 0x5a5a);
            let d = tensor.apply(&rho).unwrap();
            let scale = max_abs(&d).max(1e-12);
            prop_assert!(trace(&d).norm() < 1e-11 * scale.max(max_abs(&rho)));
            prop_assert!(herm_error(&d) < 1e-11 * scale);
            // the Hermitian fast path must agree with the general one
            let dh = tensor.apply_hermitian(&rho).unwrap();
            prop_assert!(max_abs(&(&d - &dh)) < 1e-11 * scale);
        }
    }
}
