//! Propagation of the master equation.
//!
//! States are integrated in the interaction picture of the undriven
//! Hamiltonian: with H0 = V Lambda V† and rho_e the state in the H0
//! eigenbasis, the working variable is sigma = e^{i Lambda t} rho_e
//! e^{-i Lambda t}. Fast bare phases never enter sigma; what remains are
//! drive sidebands and dissipator terms, so the adaptive integrator is not
//! throttled by the largest level splitting. Rotations by e^{i Lambda t}
//! are elementwise phase masks, never matrix products.
//!
//! Two propagation methods:
//!
//! * adaptive embedded Runge-Kutta 5(4) (Dormand-Prince) with a fifth-order
//!   continuous extension evaluated on a uniform output grid;
//! * a scaling-and-squaring matrix exponential of the full superoperator
//!   for time-independent generators on uniform grids.
//!
//! Trace drift beyond 1e-6 and step-size underflow are hard errors.

use ndarray::{Array1, Array2};

use crate::dissipators::{
    build_redfield_in_basis, factored_apply_hermitian, instantaneous_gain, lindblad_apply,
    CorrelationSpec, RedfieldTensor, SecularFilter, TdbrCache,
};
use crate::error::{Error, Result};
use crate::hilbert::{
    dagger, herm_error, max_abs, min_eigenvalue, trace, CMat, EigSystem, C64,
};
use crate::model::DriveSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk45,
    /// Exponential of the dense superoperator; requires a time-independent
    /// generator and dim <= 24.
    MatrixExp,
}

#[derive(Debug, Clone, Copy)]
pub struct PropagatorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub t_final: f64,
    /// Uniform output points including both endpoints. When `None`, driven
    /// runs resolve each drive period with 40 points and undriven runs use
    /// 1201 points.
    pub n_out: Option<usize>,
    /// States kept along the trajectory are thinned to at most this many.
    pub snapshot_cap: usize,
}

impl PropagatorConfig {
    pub fn new(t_final: f64) -> Self {
        PropagatorConfig {
            method: Method::Rk45,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: f64::INFINITY,
            t_final,
            n_out: None,
            snapshot_cap: 2000,
        }
    }
}

/// A coherent drive line: the scalar envelope and the lowering operator of
/// the driven mode (lab frame).
#[derive(Debug, Clone)]
pub struct DriveChannel {
    pub spec: DriveSpec,
    pub lower: CMat,
}

/// Dissipative part of the generator, lab frame.
#[derive(Debug, Clone)]
pub enum DissipatorSpec {
    None,
    Lindblad { op: CMat, kappa: f64 },
    RedfieldStatic { corr: CorrelationSpec, filter: SecularFilter },
    /// Redfield in the instantaneous eigenbasis of the driven Hamiltonian.
    /// `cache_points` enables the stroboscopic cache with that many phase
    /// points per drive period; `None` rebuilds at every stage.
    RedfieldTd { corr: CorrelationSpec, cache_points: Option<usize> },
}

struct DriveTerms {
    spec: DriveSpec,
    x_e: CMat,
    y_e: CMat,
    x_lab: CMat,
    y_lab: CMat,
}

enum DissInner {
    None,
    Lindblad { a_e: CMat, n_e: CMat, kappa: f64 },
    Static(RedfieldTensor),
    TdCached { a_e: CMat, cache: TdbrCache },
    TdDirect { corr: CorrelationSpec, a_e: CMat },
}

/// Right-hand side of the master equation, fixed at construction.
pub struct Generator {
    eig: EigSystem,
    h0_lab: CMat,
    drive: Option<DriveTerms>,
    diss: DissInner,
}

impl Generator {
    pub fn new(h0: CMat, drive: Option<DriveChannel>, diss: DissipatorSpec) -> Result<Self> {
        let eig = crate::hilbert::eigh(&h0)?;
        let dim = eig.dim();
        let drive = match drive {
            None => None,
            Some(ch) => {
                if ch.lower.dim() != (dim, dim) {
                    return Err(Error::Shape(format!(
                        "drive operator shape {:?} vs dim {}",
                        ch.lower.dim(),
                        dim
                    )));
                }
                let ad = dagger(&ch.lower);
                let x_lab = &ch.lower + &ad;
                let y_lab = (&ad - &ch.lower).mapv(|z| z * crate::hilbert::I);
                Some(DriveTerms {
                    spec: ch.spec,
                    x_e: eig.to_eigenbasis(&x_lab),
                    y_e: eig.to_eigenbasis(&y_lab),
                    x_lab,
                    y_lab,
                })
            }
        };
        let diss = match diss {
            DissipatorSpec::None => DissInner::None,
            DissipatorSpec::Lindblad { op, kappa } => {
                if kappa < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "negative decay rate {kappa}"
                    )));
                }
                let a_e = eig.to_eigenbasis(&op);
                let n_e = dagger(&a_e).dot(&a_e);
                DissInner::Lindblad { a_e, n_e, kappa }
            }
            DissipatorSpec::RedfieldStatic { corr, filter } => {
                DissInner::Static(build_redfield_in_basis(eig.clone(), &corr, filter)?)
            }
            DissipatorSpec::RedfieldTd { corr, cache_points } => match (&drive, cache_points) {
                // without a drive the instantaneous construction is the
                // static one
                (None, _) => {
                    DissInner::Static(build_redfield_in_basis(eig.clone(), &corr, SecularFilter::None)?)
                }
                (Some(d), Some(points)) => {
                    let h0c = h0.clone();
                    let xc = d.x_lab.clone();
                    let yc = d.y_lab.clone();
                    let spec_c = d.spec;
                    let h_of_t = move |t: f64| {
                        let (fx, fy) = spec_c.coefficients(t);
                        let mut h = h0c.clone();
                        h.scaled_add(C64::new(fx, 0.0), &xc);
                        h.scaled_add(C64::new(fy, 0.0), &yc);
                        h
                    };
                    let a_e = eig.to_eigenbasis(&corr.coupling);
                    let cache =
                        TdbrCache::build(&eig, &h_of_t, &corr, d.spec.period(), points)?;
                    DissInner::TdCached { a_e, cache }
                }
                (Some(_), None) => {
                    let a_e = eig.to_eigenbasis(&corr.coupling);
                    DissInner::TdDirect { corr, a_e }
                }
            },
        };
        Ok(Generator { eig, h0_lab: h0, drive, diss })
    }

    pub fn dim(&self) -> usize {
        self.eig.dim()
    }

    pub fn basis(&self) -> &EigSystem {
        &self.eig
    }

    pub fn is_time_independent(&self) -> bool {
        self.drive.is_none()
    }

    pub fn drive_period(&self) -> Option<f64> {
        self.drive.as_ref().map(|d| d.spec.period())
    }

    /// d sigma / dt in the interaction picture.
    fn rhs(&self, t: f64, sigma: &CMat) -> Result<CMat> {
        let u = phases(&self.eig.values, t);
        let rho_e = unmask(sigma, &u);
        let mut out = CMat::zeros(sigma.raw_dim());
        if let Some(d) = &self.drive {
            let (fx, fy) = d.spec.coefficients(t);
            let mut hd = d.x_e.mapv(|z| z * fx);
            if fy != 0.0 {
                hd.scaled_add(C64::new(fy, 0.0), &d.y_e);
            }
            let hd_m = mask(&hd, &u);
            let c = hd_m.dot(sigma) - sigma.dot(&hd_m);
            out.scaled_add(-crate::hilbert::I, &c);
        }
        let d_e = match &self.diss {
            DissInner::None => None,
            DissInner::Lindblad { a_e, n_e, kappa } => {
                let sandwich = a_e.dot(&rho_e).dot(&dagger(a_e));
                let anti = n_e.dot(&rho_e) + rho_e.dot(n_e);
                Some((sandwich - anti.mapv(|z| 0.5 * z)).mapv(|z| z * *kappa))
            }
            DissInner::Static(tensor) => Some(tensor.apply_hermitian(&rho_e)?),
            DissInner::TdCached { a_e, cache } => {
                Some(factored_apply_hermitian(a_e, &cache.gain_at(t), &rho_e))
            }
            DissInner::TdDirect { corr, a_e } => {
                let mut h = self.h0_lab.clone();
                if let Some(d) = &self.drive {
                    let (fx, fy) = d.spec.coefficients(t);
                    h.scaled_add(C64::new(fx, 0.0), &d.x_lab);
                    h.scaled_add(C64::new(fy, 0.0), &d.y_lab);
                }
                let ag_e = self.eig.to_eigenbasis(&instantaneous_gain(&h, corr)?);
                Some(factored_apply_hermitian(a_e, &ag_e, &rho_e))
            }
        };
        if let Some(d_e) = d_e {
            out += &mask(&d_e, &u);
        }
        Ok(out)
    }

    /// Full static generator -i[Lambda, rho] + D(rho) applied to an
    /// arbitrary matrix in the eigenbasis. Only valid without a drive.
    fn apply_static(&self, rho_e: &CMat) -> Result<CMat> {
        let dim = self.dim();
        let mut out = Array2::from_shape_fn((dim, dim), |(m, n)| {
            -crate::hilbert::I * C64::new(self.eig.values[m] - self.eig.values[n], 0.0)
                * rho_e[[m, n]]
        });
        match &self.diss {
            DissInner::None => {}
            DissInner::Lindblad { a_e, kappa, .. } => {
                out += &lindblad_apply(rho_e, a_e, *kappa)?;
            }
            DissInner::Static(tensor) => out += &tensor.apply(rho_e)?,
            DissInner::TdCached { .. } | DissInner::TdDirect { .. } => {
                return Err(Error::InvalidParameter(
                    "time-dependent dissipator has no static superoperator".into(),
                ))
            }
        }
        Ok(out)
    }

    /// Dense superoperator of the full static generator, row-major pair
    /// indices, eigenbasis.
    pub fn dense_superop(&self) -> Result<CMat> {
        if !self.is_time_independent() {
            return Err(Error::InvalidParameter(
                "dense superoperator requires a time-independent generator".into(),
            ));
        }
        let d = self.dim();
        let mut s = CMat::zeros((d * d, d * d));
        for mup in 0..d {
            for nup in 0..d {
                let mut e = CMat::zeros((d, d));
                e[[mup, nup]] = C64::new(1.0, 0.0);
                let col = self.apply_static(&e)?;
                for mu in 0..d {
                    for nu in 0..d {
                        s[[mu * d + nu, mup * d + nup]] = col[[mu, nu]];
                    }
                }
            }
        }
        Ok(s)
    }
}

fn phases(values: &[f64], t: f64) -> Vec<C64> {
    values.iter().map(|&e| C64::from_polar(1.0, e * t)).collect()
}

/// sigma = e^{i Lambda t} rho e^{-i Lambda t}, elementwise.
fn mask(m: &CMat, u: &[C64]) -> CMat {
    Array2::from_shape_fn(m.raw_dim(), |(i, j)| u[i] * m[[i, j]] * u[j].conj())
}

fn unmask(m: &CMat, u: &[C64]) -> CMat {
    Array2::from_shape_fn(m.raw_dim(), |(i, j)| u[i].conj() * m[[i, j]] * u[j])
}

/// Integrated trajectory. Scalar series live on the uniform output grid;
/// density matrices and their smallest eigenvalue on the thinned snapshot
/// grid. States are lab frame.
pub struct Trajectory {
    pub times: Vec<f64>,
    names: Vec<String>,
    values: Vec<Vec<f64>>,
    pub snapshot_times: Vec<f64>,
    pub snapshots: Vec<CMat>,
    pub min_eig: Vec<f64>,
    pub final_rho: CMat,
    pub n_steps: usize,
    pub n_rejected: usize,
}

impl Trajectory {
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i].as_slice())
    }
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 0.2;
const C3: f64 = 0.3;
const C4: f64 = 0.8;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
// b - b_hat: weights of the embedded error estimate
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// fifth-order continuous extension: y(t + th) = y + h sum_i k_i q_i(th),
// q_i(th) = sum_j P[i][j] th^{j+1}
const P: [[f64; 4]; 7] = [
    [
        1.0,
        -8048581381.0 / 2820520608.0,
        8663915743.0 / 2820520608.0,
        -12715105075.0 / 11282082432.0,
    ],
    [0.0, 0.0, 0.0, 0.0],
    [
        0.0,
        131558114200.0 / 32700410799.0,
        -68118460800.0 / 10900136933.0,
        87487479700.0 / 32700410799.0,
    ],
    [
        0.0,
        -1754552775.0 / 470086768.0,
        14199869525.0 / 1410260304.0,
        -10690763975.0 / 1880347072.0,
    ],
    [
        0.0,
        127303824393.0 / 49829197408.0,
        -318862633887.0 / 49829197408.0,
        701980252875.0 / 199316789632.0,
    ],
    [
        0.0,
        -282668133.0 / 205662961.0,
        2019193451.0 / 616988883.0,
        -1453857185.0 / 822651844.0,
    ],
    [
        0.0,
        40617522.0 / 29380423.0,
        -110615467.0 / 29380423.0,
        69997945.0 / 29380423.0,
    ],
];

const TOL_GUARD: f64 = 16.0;

fn lc(base: &CMat, h: f64, terms: &[(f64, &CMat)]) -> CMat {
    let mut out = base.clone();
    for (c, k) in terms {
        out.scaled_add(C64::new(h * c, 0.0), k);
    }
    out
}

struct OutputCollector<'a> {
    times: Vec<f64>,
    obs_e: Vec<(String, CMat)>,
    series: Vec<Vec<f64>>,
    trace_series: Vec<f64>,
    snap_stride: usize,
    snapshot_times: Vec<f64>,
    snapshots: Vec<CMat>,
    min_eig: Vec<f64>,
    eig: &'a EigSystem,
    next: usize,
}

impl<'a> OutputCollector<'a> {
    fn new(
        times: Vec<f64>,
        obs: &[(&str, &CMat)],
        eig: &'a EigSystem,
        snapshot_cap: usize,
    ) -> Self {
        let obs_e: Vec<(String, CMat)> = obs
            .iter()
            .map(|(n, op)| (n.to_string(), eig.to_eigenbasis(op)))
            .collect();
        let snap_stride = times.len().div_ceil(snapshot_cap).max(1);
        OutputCollector {
            series: vec![Vec::with_capacity(times.len()); obs_e.len()],
            trace_series: Vec::with_capacity(times.len()),
            obs_e,
            snap_stride,
            snapshot_times: Vec::new(),
            snapshots: Vec::new(),
            min_eig: Vec::new(),
            eig,
            times,
            next: 0,
        }
    }

    /// Record the state (eigenbasis, Schroedinger picture) at output slot
    /// `self.next`.
    fn record(&mut self, rho_e: &CMat) -> Result<()> {
        let t = self.times[self.next];
        let tr = trace(rho_e);
        if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-6 {
            return Err(Error::Propagation(format!(
                "trace drifted to {} + {}i at t = {t:.6}",
                tr.re, tr.im
            )));
        }
        self.trace_series.push(tr.re);
        for (i, (_, op)) in self.obs_e.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for m in 0..rho_e.nrows() {
                for n in 0..rho_e.ncols() {
                    acc += op[[m, n]] * rho_e[[n, m]];
                }
            }
            self.series[i].push(acc.re);
        }
        if self.next % self.snap_stride == 0 || self.next + 1 == self.times.len() {
            self.snapshot_times.push(t);
            self.min_eig.push(min_eigenvalue(rho_e));
            self.snapshots.push(self.eig.to_lab(rho_e));
        }
        self.next += 1;
        Ok(())
    }

    fn finish(self, final_rho_e: &CMat, n_steps: usize, n_rejected: usize) -> Trajectory {
        let mut names: Vec<String> = self.obs_e.iter().map(|(n, _)| n.clone()).collect();
        let mut values = self.series;
        names.push("trace".into());
        values.push(self.trace_series);
        Trajectory {
            times: self.times,
            names,
            values,
            snapshot_times: self.snapshot_times,
            snapshots: self.snapshots,
            min_eig: self.min_eig,
            final_rho: self.eig.to_lab(final_rho_e),
            n_steps,
            n_rejected,
        }
    }
}

fn validate_state(rho: &CMat, dim: usize) -> Result<()> {
    if rho.dim() != (dim, dim) {
        return Err(Error::Shape(format!(
            "initial state shape {:?} vs dim {}",
            rho.dim(),
            dim
        )));
    }
    let scale = max_abs(rho).max(1e-300);
    if herm_error(rho) > 1e-10 * scale {
        return Err(Error::InvalidParameter("initial state is not Hermitian".into()));
    }
    let tr = trace(rho);
    if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
        return Err(Error::InvalidParameter(format!(
            "initial state trace {} + {}i != 1",
            tr.re, tr.im
        )));
    }
    if min_eigenvalue(rho) < -1e-10 {
        return Err(Error::InvalidParameter(
            "initial state has a negative eigenvalue".into(),
        ));
    }
    Ok(())
}

fn output_times(gen: &Generator, cfg: &PropagatorConfig) -> Result<Vec<f64>> {
    if !(cfg.t_final > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "t_final must be positive, got {}",
            cfg.t_final
        )));
    }
    let n = match cfg.n_out {
        Some(n) => {
            if n < 2 {
                return Err(Error::InvalidParameter("need at least 2 output points".into()));
            }
            n
        }
        None => match gen.drive_period() {
            Some(period) => ((40.0 * cfg.t_final / period).ceil() as usize + 1).max(41),
            None => 1201,
        },
    };
    let dt = cfg.t_final / (n - 1) as f64;
    Ok((0..n).map(|i| i as f64 * dt).collect())
}

/// Integrate the master equation from `rho0_lab`, sampling the Hermitian
/// lab-frame operators in `obs` on the output grid.
pub fn propagate(
    gen: &Generator,
    rho0_lab: &CMat,
    obs: &[(&str, &CMat)],
    cfg: &PropagatorConfig,
) -> Result<Trajectory> {
    validate_state(rho0_lab, gen.dim())?;
    match cfg.method {
        Method::Rk45 => propagate_rk(gen, rho0_lab, obs, cfg),
        Method::MatrixExp => propagate_expm(gen, rho0_lab, obs, cfg),
    }
}

fn propagate_rk(
    gen: &Generator,
    rho0_lab: &CMat,
    obs: &[(&str, &CMat)],
    cfg: &PropagatorConfig,
) -> Result<Trajectory> {
    let times = output_times(gen, cfg)?;
    let mut coll = OutputCollector::new(times, obs, &gen.eig, cfg.snapshot_cap);
    // sigma(0) = rho_e(0)
    let mut y = gen.eig.to_eigenbasis(rho0_lab);
    let mut t = 0.0_f64;
    let u0 = phases(&gen.eig.values, 0.0);
    coll.record(&unmask(&y, &u0))?;

    let max_step = if cfg.max_step.is_finite() {
        cfg.max_step
    } else {
        // resolve drive sidebands; adaptivity then works downward
        match gen.drive_period() {
            Some(p) => 0.2 * p,
            None => cfg.t_final,
        }
    };
    let mut h = (1e-4 * cfg.t_final).min(max_step);
    let mut k1 = gen.rhs(t, &y)?;
    let mut n_steps = 0usize;
    let mut n_rejected = 0usize;
    let mut just_rejected = false;

    while t < cfg.t_final * (1.0 - 1e-14) {
        h = h.min(cfg.t_final - t).min(max_step);
        if h < 1e-13 * cfg.t_final.max(1.0) {
            return Err(Error::Propagation(format!(
                "step size underflow at t = {t:.6} (stiff or discontinuous generator)"
            )));
        }
        let k2 = gen.rhs(t + C2 * h, &lc(&y, h, &[(A21, &k1)]))?;
        let k3 = gen.rhs(t + C3 * h, &lc(&y, h, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = gen.rhs(t + C4 * h, &lc(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = gen.rhs(
            t + C5 * h,
            &lc(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        )?;
        let k6 = gen.rhs(
            t + h,
            &lc(
                &y,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        )?;
        let y_new = lc(
            &y,
            h,
            &[(B[0], &k1), (B[2], &k3), (B[3], &k4), (B[4], &k5), (B[5], &k6)],
        );
        let k7 = gen.rhs(t + h, &y_new)?;
        let err_mat = lc(
            &CMat::zeros(y.raw_dim()),
            h,
            &[
                (E[0], &k1),
                (E[2], &k3),
                (E[3], &k4),
                (E[4], &k5),
                (E[5], &k6),
                (E[6], &k7),
            ],
        );
        // uniform scale: error budget set by the matrix norm, so small
        // coherences are not over-resolved. The controller targets a
        // fraction of the requested tolerance; accumulated error then stays
        // below rel_tol even with the ~10x growth seen over long runs,
        // which keeps halving rel_tol a strict convergence bound.
        let scale = (cfg.abs_tol + cfg.rel_tol * max_abs(&y).max(max_abs(&y_new))) / TOL_GUARD;
        let err = max_abs(&err_mat) / scale;

        if err <= 1.0 {
            let ks = [&k1, &k2, &k3, &k4, &k5, &k6, &k7];
            while coll.next < coll.times.len() && coll.times[coll.next] <= t + h * (1.0 + 1e-12) {
                let t_out = coll.times[coll.next];
                let theta = ((t_out - t) / h).clamp(0.0, 1.0);
                let mut y_out = y.clone();
                for (i, k) in ks.iter().enumerate() {
                    let q = theta
                        * (P[i][0]
                            + theta * (P[i][1] + theta * (P[i][2] + theta * P[i][3])));
                    if q != 0.0 {
                        y_out.scaled_add(C64::new(h * q, 0.0), k);
                    }
                }
                let u = phases(&gen.eig.values, t_out);
                coll.record(&unmask(&y_out, &u))?;
            }
            t += h;
            y = y_new;
            k1 = k7;
            n_steps += 1;
            let grow = if just_rejected { 1.0 } else { 5.0 };
            h *= (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, grow);
            just_rejected = false;
        } else {
            n_rejected += 1;
            just_rejected = true;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    let u = phases(&gen.eig.values, cfg.t_final);
    let rho_final = unmask(&y, &u);
    // numerical fuzz can leave the last grid point unrecorded
    while coll.next < coll.times.len() {
        coll.record(&rho_final)?;
    }
    Ok(coll.finish(&rho_final, n_steps, n_rejected))
}

fn propagate_expm(
    gen: &Generator,
    rho0_lab: &CMat,
    obs: &[(&str, &CMat)],
    cfg: &PropagatorConfig,
) -> Result<Trajectory> {
    if !gen.is_time_independent() {
        return Err(Error::InvalidParameter(
            "matrix exponential path requires a time-independent generator".into(),
        ));
    }
    let dim = gen.dim();
    if dim > 24 {
        return Err(Error::InvalidParameter(format!(
            "matrix exponential path limited to dim <= 24, got {dim}"
        )));
    }
    let times = output_times(gen, cfg)?;
    let dt = times[1] - times[0];
    let l = gen.dense_superop()?;
    let m = expm(&l.mapv(|z| z * dt));
    let mut coll = OutputCollector::new(times, obs, &gen.eig, cfg.snapshot_cap);
    let mut w: Array1<C64> = gen
        .eig
        .to_eigenbasis(rho0_lab)
        .into_shape_with_order(dim * dim)
        .unwrap();
    let n_steps = coll.times.len() - 1;
    loop {
        let rho_e = w
            .clone()
            .into_shape_with_order((dim, dim))
            .unwrap();
        coll.record(&rho_e)?;
        if coll.next >= coll.times.len() {
            return Ok(coll.finish(&rho_e, n_steps, 0));
        }
        w = m.dot(&w);
    }
}

/// Matrix exponential by scaling and squaring with a degree-13 Pade
/// approximant.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| a[[i, j]].norm()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let theta13 = 5.371920351148152;
    let s = if norm1 > theta13 {
        (norm1 / theta13).log2().ceil() as i32
    } else {
        0
    };
    let a = a.mapv(|z| z / C64::new(2f64.powi(s), 0.0));
    const B13: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let id: CMat = Array2::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let w1 = a6.mapv(|z| z * B13[13]) + a4.mapv(|z| z * B13[11]) + a2.mapv(|z| z * B13[9]);
    let w2 = a6.mapv(|z| z * B13[7]) + a4.mapv(|z| z * B13[5]) + a2.mapv(|z| z * B13[3])
        + id.mapv(|z| z * B13[1]);
    let u = a.dot(&(a6.dot(&w1) + w2));
    let z1 = a6.mapv(|z| z * B13[12]) + a4.mapv(|z| z * B13[10]) + a2.mapv(|z| z * B13[8]);
    let v = a6.dot(&z1)
        + a6.mapv(|z| z * B13[6])
        + a4.mapv(|z| z * B13[4])
        + a2.mapv(|z| z * B13[2])
        + id.mapv(|z| z * B13[0]);
    // (V - U) X = (V + U)
    let vmu = &v - &u;
    let vpu = &v + &u;
    let na_a = nalgebra::DMatrix::from_fn(n, n, |i, j| vmu[[i, j]]);
    let na_b = nalgebra::DMatrix::from_fn(n, n, |i, j| vpu[[i, j]]);
    let x = na_a
        .lu()
        .solve(&na_b)
        .expect("Pade denominator is nonsingular for scaled inputs");
    let mut r = Array2::from_shape_fn((n, n), |(i, j)| x[(i, j)]);
    for _ in 0..s {
        r = r.dot(&r);
    }
    r
}

/// Mean of `name` over the final drive period, with a convergence check
/// against the preceding period.
pub fn steady_mean(traj: &Trajectory, name: &str, period: f64) -> Result<f64> {
    let y = traj
        .series(name)
        .ok_or_else(|| Error::InvalidParameter(format!("no series named {name}")))?;
    if traj.times.len() < 3 {
        return Err(Error::InvalidParameter("trajectory too short".into()));
    }
    let dt = traj.times[1] - traj.times[0];
    let ppp = (period / dt).round() as usize;
    if ppp < 4 {
        return Err(Error::InvalidParameter(format!(
            "output grid resolves a period with only {ppp} points"
        )));
    }
    if y.len() < 2 * ppp + 1 {
        return Err(Error::NotConverged(
            "trajectory shorter than two drive periods".into(),
        ));
    }
    let n = y.len();
    let m1 = y[n - ppp..].iter().sum::<f64>() / ppp as f64;
    let m2 = y[n - 2 * ppp..n - ppp].iter().sum::<f64>() / ppp as f64;
    let scale = m1.abs().max(1e-12);
    let drift = (m1 - m2).abs() / scale;
    if m1.abs() > 1e-9 && drift > 5e-3 {
        return Err(Error::NotConverged(format!(
            "inter-period drift {drift:.2e} exceeds 5e-3; steady state not reached"
        )));
    }
    Ok(m1)
}
