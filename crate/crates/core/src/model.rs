//! Qubit-resonator Hamiltonians and drives.
//!
//! The composite basis is qubit (x) cavity with index `q * n_trunc + n`,
//! qubit 0 = ground. All frequencies are angular (rad/ns), hbar = 1.
//!
//! Two coupling models are provided: the full transverse coupling
//! g sigma_x (a + a†), and its rotating-wave form g (sigma+ a + sigma- a†).
//! They differ by the counter-rotating pair g (sigma+ a† + sigma- a), which
//! is what shifts the qubit relaxation physics studied here.

use crate::error::{Error, Result};
use crate::hilbert::{
    self, annihilation, dagger, identity, kron, sigma_minus, sigma_plus, sigma_x, sigma_z, CMat,
    EigSystem,
};

/// Static system parameters. `n_trunc` is the cavity Fock-space truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub omega_q: f64,
    pub omega_r: f64,
    pub g: f64,
    pub n_trunc: usize,
}

impl SystemParams {
    pub fn dim(&self) -> usize {
        2 * self.n_trunc
    }

    /// Composite index of the bare state |q, n>.
    pub fn bare_index(&self, q: usize, n: usize) -> usize {
        q * self.n_trunc + n
    }

    /// Cavity annihilation operator on the composite space.
    pub fn a_full(&self) -> CMat {
        kron(&identity(2), &annihilation(self.n_trunc))
    }

    pub fn sz_full(&self) -> CMat {
        kron(&sigma_z(), &identity(self.n_trunc))
    }

    pub fn sx_full(&self) -> CMat {
        kron(&sigma_x(), &identity(self.n_trunc))
    }

    pub fn sp_full(&self) -> CMat {
        kron(&sigma_plus(), &identity(self.n_trunc))
    }

    pub fn sm_full(&self) -> CMat {
        kron(&sigma_minus(), &identity(self.n_trunc))
    }

    /// Photon number operator on the composite space.
    pub fn n_full(&self) -> CMat {
        kron(&identity(2), &hilbert::number_op(self.n_trunc))
    }

    /// H = omega_q/2 sigma_z + omega_r a†a + g sigma_x (a + a†).
    pub fn build_rabi(&self) -> CMat {
        let a = self.a_full();
        let x = &a + &dagger(&a);
        let mut h = self.bare_part();
        h = h + self.sx_full().dot(&x).mapv(|z| z * self.g);
        h
    }

    /// H = omega_q/2 sigma_z + omega_r a†a + g (sigma+ a + sigma- a†).
    pub fn build_jc(&self) -> CMat {
        let a = self.a_full();
        let mut h = self.bare_part();
        h = h + (self.sp_full().dot(&a) + self.sm_full().dot(&dagger(&a))).mapv(|z| z * self.g);
        h
    }

    fn bare_part(&self) -> CMat {
        let mut h = self.sz_full().mapv(|z| z * (0.5 * self.omega_q));
        h = h + self.n_full().mapv(|z| z * self.omega_r);
        h
    }

    /// Qubit-resonator detuning omega_q - omega_r.
    pub fn detuning(&self) -> f64 {
        self.omega_q - self.omega_r
    }

    /// Dispersive shift chi = g^2 (1/Delta + 1/Sigma) with
    /// Delta = omega_q - omega_r and Sigma = omega_q + omega_r.
    /// The qubit frequency pulls by 2 chi per cavity photon.
    pub fn dispersive_shift(&self) -> f64 {
        let delta = self.omega_q - self.omega_r;
        let sigma = self.omega_q + self.omega_r;
        self.g * self.g * (1.0 / delta + 1.0 / sigma)
    }

    /// AC-Stark shifted qubit frequency at mean photon number `nbar`.
    pub fn stark_shifted_freq(&self, nbar: f64) -> f64 {
        self.omega_q + 2.0 * self.dispersive_shift() * nbar
    }
}

/// Time profile of the cavity drive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriveKind {
    /// eta cos(omega_d t) (a + a†).
    Cosine,
    /// eps (a e^{i omega_d t} + a† e^{-i omega_d t}), the rotating-wave
    /// counterpart of a cosine drive with eta = 2 eps.
    Rwa,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSpec {
    pub kind: DriveKind,
    /// Drive amplitude: eta for `Cosine`, eps for `Rwa` (rad/ns).
    pub amplitude: f64,
    pub omega_d: f64,
}

impl DriveSpec {
    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega_d
    }

    /// Scalar coefficients (f_x, f_y) of the drive expanded over the two
    /// Hermitian quadratures X = a + a† and Y = i (a† - a):
    /// H_d(t) = f_x(t) X + f_y(t) Y.
    pub fn coefficients(&self, t: f64) -> (f64, f64) {
        let (s, c) = (self.omega_d * t).sin_cos();
        match self.kind {
            DriveKind::Cosine => (self.amplitude * c, 0.0),
            // a e^{iwt} + a† e^{-iwt} = cos(wt) X - sin(wt) Y
            DriveKind::Rwa => (self.amplitude * c, -self.amplitude * s),
        }
    }

    /// Drive Hamiltonian at time `t` on the composite space.
    pub fn hamiltonian(&self, params: &SystemParams, t: f64) -> CMat {
        let a = params.a_full();
        let ad = dagger(&a);
        let x = &a + &ad;
        let y = (&ad - &a).mapv(|z| z * hilbert::I);
        let (fx, fy) = self.coefficients(t);
        x.mapv(|z| z * fx) + y.mapv(|z| z * fy)
    }

    /// Mean steady photon number for this drive on a bare cavity with
    /// energy decay rate `kappa`, detuned by `delta` = omega_r - omega_d:
    /// for the rotating-wave drive, nbar = eps^2 / (delta^2 + kappa^2/4).
    /// A cosine drive of amplitude eta = 2 eps settles to the same mean up
    /// to micromotion.
    pub fn steady_photon_number(&self, delta: f64, kappa: f64) -> f64 {
        let eps = match self.kind {
            DriveKind::Cosine => 0.5 * self.amplitude,
            DriveKind::Rwa => self.amplitude,
        };
        eps * eps / (delta * delta + 0.25 * kappa * kappa)
    }

    /// Amplitude eps that drives a bare cavity (decay `kappa`, detuning
    /// `delta`) to mean photon number `nbar` in steady state.
    pub fn amplitude_for_nbar(kind: DriveKind, nbar: f64, delta: f64, kappa: f64) -> f64 {
        let eps = (nbar * (delta * delta + 0.25 * kappa * kappa)).sqrt();
        match kind {
            DriveKind::Cosine => 2.0 * eps,
            DriveKind::Rwa => eps,
        }
    }
}

/// Label eigenstates by their dominant bare component.
///
/// Returns `labels[k] = (q, n)` for eigenvector k. Each eigenvector must
/// put more than half its weight on a single bare state, and no two
/// eigenvectors may claim the same bare state; otherwise the dressing is
/// too strong for bare labels to mean anything and an error is returned.
pub fn dressed_labels(eig: &EigSystem, n_trunc: usize) -> Result<Vec<(usize, usize)>> {
    let dim = eig.dim();
    if dim != 2 * n_trunc {
        return Err(Error::Shape(format!(
            "eigensystem dim {} does not match 2 * n_trunc = {}",
            dim,
            2 * n_trunc
        )));
    }
    let mut labels = Vec::with_capacity(dim);
    let mut claimed = vec![false; dim];
    for k in 0..dim {
        let mut best = 0.0;
        let mut best_i = 0;
        for i in 0..dim {
            let w = eig.vectors[[i, k]].norm_sqr();
            if w > best {
                best = w;
                best_i = i;
            }
        }
        if best < 0.5 {
            return Err(Error::LabelAmbiguity(format!(
                "eigenstate {k} has max bare weight {best:.3}; no dominant component"
            )));
        }
        if claimed[best_i] {
            return Err(Error::LabelAmbiguity(format!(
                "bare state {best_i} claimed by two eigenstates"
            )));
        }
        claimed[best_i] = true;
        labels.push((best_i / n_trunc, best_i % n_trunc));
    }
    Ok(labels)
}

/// Index of the eigenstate labeled (q, n), if the labeling succeeded.
pub fn find_labeled(labels: &[(usize, usize)], q: usize, n: usize) -> Option<usize> {
    labels.iter().position(|&l| l == (q, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ghz;
    use crate::hilbert::{eigh, max_abs, C64, ZERO};
    use approx::assert_relative_eq;

    fn readout_params(n_trunc: usize) -> SystemParams {
        SystemParams {
            omega_q: ghz(5.304),
            omega_r: ghz(7.5),
            g: ghz(0.211),
            n_trunc,
        }
    }

    #[test]
    fn rabi_minus_jc_is_counter_rotating_pair() {
        let p = readout_params(5);
        let a = p.a_full();
        let diff = p.build_rabi() - p.build_jc();
        let want =
            (p.sp_full().dot(&dagger(&a)) + p.sm_full().dot(&a)).mapv(|z| z * p.g);
        assert!(max_abs(&(&diff - &want)) < 1e-12);
    }

    #[test]
    fn hamiltonians_are_hermitian() {
        let p = readout_params(4);
        assert!(hilbert::herm_error(&p.build_rabi()) == 0.0);
        assert!(hilbert::herm_error(&p.build_jc()) == 0.0);
        let d = DriveSpec { kind: DriveKind::Rwa, amplitude: 0.3, omega_d: ghz(7.5) };
        for &t in &[0.0, 0.137, 2.4] {
            assert!(hilbert::herm_error(&d.hamiltonian(&p, t)) < 1e-15);
        }
    }

    #[test]
    fn bare_diagonal_when_uncoupled() {
        let mut p = readout_params(3);
        p.g = 0.0;
        let h = p.build_rabi();
        for q in 0..2 {
            for n in 0..3 {
                let i = p.bare_index(q, n);
                let want = 0.5 * p.omega_q * if q == 1 { 1.0 } else { -1.0 } + p.omega_r * n as f64;
                assert_relative_eq!(h[[i, i]].re, want, max_relative = 1e-15);
            }
        }
        let offdiag = h.indexed_iter().any(|((i, j), z)| i != j && *z != ZERO);
        assert!(!offdiag);
    }

    #[test]
    fn dispersive_shift_equivalent_forms() {
        // g^2 (1/Delta + 1/Sigma) == 2 g^2 omega_q / (omega_q^2 - omega_r^2)
        let p = readout_params(2);
        let alt = 2.0 * p.g * p.g * p.omega_q / (p.omega_q * p.omega_q - p.omega_r * p.omega_r);
        assert_relative_eq!(p.dispersive_shift(), alt, max_relative = 1e-14);
        assert!(p.dispersive_shift() < 0.0);
    }

    #[test]
    fn dispersive_shift_matches_spectrum_perturbatively() {
        // weak coupling: chi from the full spectrum, chi = (w_{e1,g1} - w_{e0,g0}) / 2
        let mut p = readout_params(12);
        p.g = ghz(0.02);
        let eig = eigh(&p.build_rabi()).unwrap();
        let labels = dressed_labels(&eig, p.n_trunc).unwrap();
        let idx = |q, n| find_labeled(&labels, q, n).unwrap();
        let w0 = eig.values[idx(1, 0)] - eig.values[idx(0, 0)];
        let w1 = eig.values[idx(1, 1)] - eig.values[idx(0, 1)];
        let chi_num = 0.5 * (w1 - w0);
        assert_relative_eq!(chi_num, p.dispersive_shift(), max_relative = 2e-3);
    }

    #[test]
    fn stark_shift_pulls_downward_here() {
        let p = readout_params(2);
        let w10 = p.stark_shifted_freq(10.0);
        assert_relative_eq!(
            w10,
            p.omega_q + 20.0 * p.dispersive_shift(),
            max_relative = 1e-15
        );
        assert!(w10 < p.omega_q);
    }

    #[test]
    fn cosine_and_rwa_drives_agree_on_x_quadrature() {
        let c = DriveSpec { kind: DriveKind::Cosine, amplitude: 0.8, omega_d: 3.0 };
        let r = DriveSpec { kind: DriveKind::Rwa, amplitude: 0.4, omega_d: 3.0 };
        for &t in &[0.0, 0.3, 1.7, 4.0] {
            let (cx, cy) = c.coefficients(t);
            let (rx, _ry) = r.coefficients(t);
            assert_relative_eq!(cx, 2.0 * rx, max_relative = 1e-14);
            assert_eq!(cy, 0.0);
        }
    }

    #[test]
    fn rwa_drive_matrix_form() {
        // eps (a e^{iwt} + a† e^{-iwt}) built directly
        let p = readout_params(4);
        let d = DriveSpec { kind: DriveKind::Rwa, amplitude: 0.25, omega_d: 2.2 };
        let t = 0.83;
        let a = p.a_full();
        let phase = C64::new(0.0, d.omega_d * t).exp();
        let want = (a.mapv(|z| z * phase) + dagger(&a).mapv(|z| z * phase.conj()))
            .mapv(|z| z * d.amplitude);
        assert!(max_abs(&(&d.hamiltonian(&p, t) - &want)) < 1e-14);
    }

    #[test]
    fn drive_amplitude_round_trip() {
        let kappa = ghz(0.5);
        let delta = 0.0;
        for kind in [DriveKind::Cosine, DriveKind::Rwa] {
            let amp = DriveSpec::amplitude_for_nbar(kind, 6.0, delta, kappa);
            let d = DriveSpec { kind, amplitude: amp, omega_d: ghz(7.5) };
            assert_relative_eq!(d.steady_photon_number(delta, kappa), 6.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn labels_track_identity_at_zero_coupling() {
        let mut p = readout_params(4);
        p.g = 0.0;
        let eig = eigh(&p.build_rabi()).unwrap();
        let labels = dressed_labels(&eig, p.n_trunc).unwrap();
        // every bare state appears exactly once
        for q in 0..2 {
            for n in 0..4 {
                assert!(find_labeled(&labels, q, n).is_some());
            }
        }
    }

    #[test]
    fn labels_reject_equal_superpositions() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut vectors = CMat::zeros((2, 2));
        vectors[[0, 0]] = C64::new(s, 0.0);
        vectors[[1, 0]] = C64::new(s, 0.0);
        vectors[[0, 1]] = C64::new(s, 0.0);
        vectors[[1, 1]] = C64::new(-s, 0.0);
        let eig = EigSystem { values: vec![0.0, 1.0], vectors };
        assert!(dressed_labels(&eig, 1).is_err());
    }
}
