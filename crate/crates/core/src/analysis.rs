//! Rate extraction and parameter sweeps.
//!
//! Decay rates are measured the same way the plots are made: propagate,
//! sample <sigma_z>, fit A e^{-gamma t} + B. For driven runs the samples
//! are taken stroboscopically at integer drive periods so micromotion never
//! enters the fit. Closed-form perturbative rates live alongside as oracle
//! columns.

use rayon::prelude::*;

use crate::dissipators::{CorrelationSpec, SecularFilter};
use crate::dynamics::{
    propagate, steady_mean, DissipatorSpec, DriveChannel, Generator, Method, PropagatorConfig,
};
use crate::environment::SpectralDensity;
use crate::error::{Error, Result};
use crate::hilbert::dagger;
use crate::model::{dressed_labels, find_labeled, DriveKind, DriveSpec, SystemParams};

/// Result of a three-parameter exponential fit y = a e^{-gamma t} + b.
#[derive(Debug, Clone, Copy)]
pub struct FitResult {
    pub a: f64,
    pub gamma: f64,
    pub b: f64,
    pub rms_residual: f64,
    /// Diagonal of the parameter covariance, order (a, gamma, b).
    pub covariance: [f64; 3],
}

/// Fit y = a e^{-gamma t} + b by damped Gauss-Newton.
///
/// Requires at least 20 samples spanning at least two decay constants of
/// the pre-fit estimate; fails with a descriptive error when the data do
/// not decay. Initial values: b from the tail mean, gamma from a
/// log-linear regression.
pub fn fit_exp_decay(t: &[f64], y: &[f64]) -> Result<FitResult> {
    if t.len() != y.len() {
        return Err(Error::Fit(format!(
            "length mismatch: {} times vs {} samples",
            t.len(),
            y.len()
        )));
    }
    let n = t.len();
    if n < 20 {
        return Err(Error::Fit(format!("need at least 20 samples, got {n}")));
    }
    let tail = (n / 10).max(2);
    let b0 = y[n - tail..].iter().sum::<f64>() / tail as f64;
    let a0 = y[0] - b0;
    let span = t[n - 1] - t[0];
    if a0.abs() < 1e-12 * y.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300) {
        return Err(Error::Fit("signal is flat: nothing to fit".into()));
    }
    // log-linear pre-fit on the decaying part
    let sign = a0.signum();
    let mut st = 0.0;
    let mut sz = 0.0;
    let mut stt = 0.0;
    let mut stz = 0.0;
    let mut m = 0usize;
    for i in 0..n {
        let z = sign * (y[i] - b0);
        if z > 1e-3 * a0.abs() {
            let lz = z.ln();
            st += t[i];
            sz += lz;
            stt += t[i] * t[i];
            stz += t[i] * lz;
            m += 1;
        }
    }
    if m < 5 {
        return Err(Error::Fit("too few points above the baseline".into()));
    }
    let denom = m as f64 * stt - st * st;
    let slope = (m as f64 * stz - st * sz) / denom;
    if slope >= 0.0 {
        return Err(Error::Fit(format!(
            "no decay detected: log-slope {slope:.3e} is nonnegative"
        )));
    }
    let gamma0 = -slope;
    if gamma0 * span < 2.0 {
        return Err(Error::Fit(format!(
            "window spans only {:.2} decay constants; need at least 2",
            gamma0 * span
        )));
    }

    // damped Gauss-Newton on (a, gamma, b); step sizes are judged against
    // these scales rather than the parameters themselves, so a baseline
    // converging to zero cannot stall the termination test
    let scale = [a0.abs(), gamma0, a0.abs()];
    let mut p = [a0, gamma0, b0];
    let ssr_of = |p: &[f64; 3]| -> f64 {
        t.iter()
            .zip(y)
            .map(|(&ti, &yi)| {
                let r = p[0] * (-p[1] * ti).exp() + p[2] - yi;
                r * r
            })
            .sum()
    };
    let mut ssr = ssr_of(&p);
    let mut lambda = 1e-6;
    let mut converged = false;
    for _ in 0..200 {
        // normal equations
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = nalgebra::Vector3::<f64>::zeros();
        for (&ti, &yi) in t.iter().zip(y) {
            let e = (-p[1] * ti).exp();
            let r = p[0] * e + p[2] - yi;
            let j = nalgebra::Vector3::new(e, -p[0] * ti * e, 1.0);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut accepted = false;
        for _ in 0..25 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-30);
            }
            let Some(delta) = damped.lu().solve(&(-jtr)) else {
                lambda *= 7.0;
                continue;
            };
            let cand = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]];
            if cand[1] <= 0.0 {
                lambda *= 7.0;
                continue;
            }
            let ssr_cand = ssr_of(&cand);
            if ssr_cand <= ssr {
                let rel_step = (0..3)
                    .map(|k| delta[k].abs() / p[k].abs().max(scale[k]))
                    .fold(0.0_f64, f64::max);
                p = cand;
                ssr = ssr_cand;
                lambda = (lambda / 3.0).max(1e-14);
                accepted = true;
                if rel_step < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda *= 7.0;
        }
        if !accepted {
            // damping saturated: the quadratic model cannot improve further
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::Fit("no convergence within 200 iterations".into()));
    }
    // the pre-fit estimate can pass while the converged rate is far slower,
    // so the window guard is re-checked against the fitted value
    if p[1] * span < 2.0 {
        return Err(Error::Fit(format!(
            "window spans only {:.2} fitted decay constants; need at least 2",
            p[1] * span
        )));
    }
    let rms = (ssr / n as f64).sqrt();
    if p[0].abs() <= 5.0 * rms {
        return Err(Error::Fit(format!(
            "no decay resolved: amplitude {:.3e} sits below the residual noise {:.3e}",
            p[0], rms
        )));
    }

    // covariance from the final Jacobian
    let mut jtj = nalgebra::Matrix3::<f64>::zeros();
    for &ti in t {
        let e = (-p[1] * ti).exp();
        let j = nalgebra::Vector3::new(e, -p[0] * ti * e, 1.0);
        jtj += j * j.transpose();
    }
    let sigma2 = ssr / (n as f64 - 3.0).max(1.0);
    let covariance = match jtj.try_inverse() {
        Some(inv) => [sigma2 * inv[(0, 0)], sigma2 * inv[(1, 1)], sigma2 * inv[(2, 2)]],
        None => [f64::NAN; 3],
    };
    Ok(FitResult {
        a: p[0],
        gamma: p[1],
        b: p[2],
        rms_residual: rms,
        covariance,
    })
}

/// Perturbative qubit relaxation rate through the cavity:
/// J(omega_q) |2 omega_r g / (omega_q^2 - omega_r^2)|^2.
pub fn purcell_rate_analytic(p: &SystemParams, j: &SpectralDensity) -> Result<f64> {
    stark_rate(p, j, 0.0)
}

/// The same rate with the qubit frequency Stark-shifted by a mean cavity
/// population nbar: omega_q -> omega_q + 2 chi nbar.
pub fn stark_rate(p: &SystemParams, j: &SpectralDensity, nbar: f64) -> Result<f64> {
    if nbar < 0.0 {
        return Err(Error::InvalidParameter(format!("negative nbar {nbar}")));
    }
    let wq = p.stark_shifted_freq(nbar);
    let scale = p.omega_r.abs().max(p.omega_q.abs()).max(1e-300);
    // a degenerate qubit makes the dispersive shift blow up, so wq can be
    // NaN here and must be caught by the finiteness check
    if !wq.is_finite()
        || (wq - p.omega_r).abs() < 1e-9 * scale
        || (wq + p.omega_r).abs() < 1e-9 * scale
    {
        return Err(Error::InvalidParameter(format!(
            "shifted qubit frequency {wq} is degenerate with the cavity"
        )));
    }
    let amp = 2.0 * p.omega_r * p.g / (wq * wq - p.omega_r * p.omega_r);
    Ok(j.eval(wq) * amp * amp)
}

/// Ratio of the flat-spectrum Redfield Purcell rate to the Lindblad one:
/// (2 omega_r / (omega_q + omega_r))^2.
pub fn br_lindblad_ratio(p: &SystemParams) -> Result<f64> {
    let sigma = p.omega_q + p.omega_r;
    if sigma.abs() < 1e-12 * p.omega_r.abs().max(1.0) {
        return Err(Error::InvalidParameter("omega_q + omega_r vanishes".into()));
    }
    let r = 2.0 * p.omega_r / sigma;
    Ok(r * r)
}

/// Leading-order Lindblad relaxation rate with a Stark-shifted detuning:
/// kappa (g / (omega_q(nbar) - omega_r))^2.
pub fn lindblad_stark_rate(p: &SystemParams, kappa: f64, nbar: f64) -> Result<f64> {
    let wq = p.stark_shifted_freq(nbar);
    let delta = wq - p.omega_r;
    if !delta.is_finite() || delta.abs() < 1e-9 * p.omega_r.abs().max(1.0) {
        return Err(Error::InvalidParameter(
            "qubit degenerate with cavity: no dispersive rate".into(),
        ));
    }
    Ok(kappa * (p.g / delta) * (p.g / delta))
}

/// T1 gain of a filtered bath relative to the unfiltered one.
pub fn gain_from_traces(gamma_unfiltered: f64, gamma_filtered: f64) -> Result<f64> {
    if !(gamma_unfiltered > 0.0) || !(gamma_filtered > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rates must be positive, got {gamma_unfiltered} and {gamma_filtered}"
        )));
    }
    Ok(gamma_unfiltered / gamma_filtered)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepDissipator {
    Lindblad,
    RedfieldStatic,
    RedfieldTd { cache_points: Option<usize> },
}

/// One driven relaxation sweep: a family of runs at increasing drive
/// amplitude, each fitted for the qubit decay rate.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// n_trunc acts as the cap; each row adapts its own truncation to the
    /// target photon number.
    pub params: SystemParams,
    pub spectrum: SpectralDensity,
    pub dissipator: SweepDissipator,
    pub drive_kind: DriveKind,
    pub omega_d: f64,
    pub kappa: f64,
    pub nbar_targets: Vec<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl SweepConfig {
    pub fn new(
        params: SystemParams,
        spectrum: SpectralDensity,
        dissipator: SweepDissipator,
        drive_kind: DriveKind,
        kappa: f64,
        nbar_targets: Vec<f64>,
    ) -> Self {
        SweepConfig {
            omega_d: params.omega_r,
            params,
            spectrum,
            dissipator,
            drive_kind,
            kappa,
            nbar_targets,
            rel_tol: 2e-5,
            abs_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub nbar_target: f64,
    pub drive_amp: f64,
    /// Measured steady photon number.
    pub nbar: f64,
    pub gamma1: f64,
    pub gamma1_over_gamma0: f64,
    /// Closed-form rate at the measured photon number.
    pub formula_gamma1: f64,
    pub n_trunc: usize,
    pub status: String,
}

fn adapt_trunc(nbar: f64, cap: usize) -> usize {
    ((nbar + 5.0 * nbar.sqrt() + 8.0).ceil() as usize).clamp(8, cap.max(8))
}

fn row_formula(cfg: &SweepConfig, nbar: f64) -> Result<f64> {
    match cfg.dissipator {
        SweepDissipator::Lindblad => lindblad_stark_rate(&cfg.params, cfg.kappa, nbar),
        _ => stark_rate(&cfg.params, &cfg.spectrum, nbar),
    }
}

fn run_row(cfg: &SweepConfig, nbar_target: f64) -> Result<(f64, f64, f64, usize)> {
    let n_trunc = adapt_trunc(nbar_target, cfg.params.n_trunc);
    let p = SystemParams { n_trunc, ..cfg.params };
    let delta = p.omega_r - cfg.omega_d;
    let amplitude = DriveSpec::amplitude_for_nbar(cfg.drive_kind, nbar_target, delta, cfg.kappa);
    let drive = DriveSpec { kind: cfg.drive_kind, amplitude, omega_d: cfg.omega_d };
    let h0 = p.build_rabi();
    let a_full = p.a_full();
    let corr = || {
        CorrelationSpec::new(&a_full + &dagger(&a_full), cfg.spectrum)
    };
    let diss = match cfg.dissipator {
        SweepDissipator::Lindblad => DissipatorSpec::Lindblad { op: a_full.clone(), kappa: cfg.kappa },
        SweepDissipator::RedfieldStatic => {
            DissipatorSpec::RedfieldStatic { corr: corr()?, filter: SecularFilter::None }
        }
        SweepDissipator::RedfieldTd { cache_points } => {
            DissipatorSpec::RedfieldTd { corr: corr()?, cache_points }
        }
    };
    let driven = amplitude != 0.0;
    let channel = driven.then(|| DriveChannel { spec: drive, lower: a_full.clone() });
    let gen = Generator::new(h0, channel, diss)?;

    let labels = dressed_labels(gen.basis(), n_trunc)?;
    let e0 = find_labeled(&labels, 1, 0).ok_or_else(|| {
        Error::LabelAmbiguity("no dressed excited-qubit vacuum state found".into())
    })?;
    let col = gen.basis().vectors.column(e0).to_owned();
    let rho0 = crate::hilbert::pure_rho(&col);

    // 2.6 predicted decay constants leaves headroom over the fitter's
    // two-constant window floor when the fitted rate comes out low
    let gamma_pred = row_formula(cfg, nbar_target)?.max(1e-9 * cfg.kappa);
    let period = drive.period();
    let (t_start, t_final) = if driven {
        // the cavity field rings up at kappa/2
        let start = (12.0 / cfg.kappa / period).ceil() * period;
        let span = (2.6 / gamma_pred / period).ceil() * period;
        (start, start + span)
    } else {
        (0.0, 2.6 / gamma_pred)
    };

    let mut pc = PropagatorConfig::new(t_final);
    pc.rel_tol = cfg.rel_tol;
    pc.abs_tol = cfg.abs_tol;
    pc.snapshot_cap = 200;
    if !driven && p.dim() <= 24 {
        pc.method = Method::MatrixExp;
    }
    let sz = p.sz_full();
    let num = p.n_full();
    let traj = propagate(&gen, &rho0, &[("sigma_z", &sz), ("photon_number", &num)], &pc)?;

    // truncation guard: population in the top two Fock levels. The
    // integrator leaves ~1e-7 noise per level at the default tolerances
    // (visible as negative diagonal entries), and a truncation scan shows
    // the fitted rate moves by < 1e-5 relative while this weight is at
    // 1e-5, so the threshold sits well above the noise floor and well
    // below where truncation visibly bends rates.
    let mut top_weight = 0.0_f64;
    for snap in &traj.snapshots {
        let mut w = 0.0;
        for q in 0..2 {
            for lvl in [n_trunc - 1, n_trunc - 2] {
                let i = p.bare_index(q, lvl);
                w += snap[[i, i]].re;
            }
        }
        top_weight = top_weight.max(w);
    }
    if top_weight > 1e-4 {
        return Err(Error::NotConverged(format!(
            "truncation weight {top_weight:.2e} in top two Fock levels (n_trunc = {n_trunc})"
        )));
    }

    let times = &traj.times;
    let szs = traj.series("sigma_z").unwrap();
    let (fit_t, fit_y): (Vec<f64>, Vec<f64>) = if driven {
        // stroboscopic samples at integer periods, after ring-up
        let dt = times[1] - times[0];
        let per_period = (period / dt).round() as usize;
        (0..times.len())
            .filter(|&i| i % per_period == 0 && times[i] >= t_start - 0.5 * dt)
            .map(|i| (times[i] - t_start, szs[i]))
            .unzip()
    } else {
        (times.to_vec(), szs.to_vec())
    };
    let fit = fit_exp_decay(&fit_t, &fit_y)?;

    let nbar = if driven {
        steady_mean(&traj, "photon_number", period)?
    } else {
        0.0
    };
    Ok((amplitude, nbar, fit.gamma, n_trunc))
}

/// Run every row of the sweep. Rows never abort the sweep; failures are
/// recorded in `status`.
pub fn run_sweep(cfg: &SweepConfig) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = cfg
        .nbar_targets
        .par_iter()
        .map(|&nbar_target| match run_row(cfg, nbar_target) {
            Ok((drive_amp, nbar, gamma1, n_trunc)) => {
                let formula = row_formula(cfg, nbar).unwrap_or(f64::NAN);
                SweepRow {
                    nbar_target,
                    drive_amp,
                    nbar,
                    gamma1,
                    gamma1_over_gamma0: f64::NAN,
                    formula_gamma1: formula,
                    n_trunc,
                    status: "ok".into(),
                }
            }
            Err(e) => SweepRow {
                nbar_target,
                drive_amp: f64::NAN,
                nbar: f64::NAN,
                gamma1: f64::NAN,
                gamma1_over_gamma0: f64::NAN,
                formula_gamma1: f64::NAN,
                n_trunc: adapt_trunc(nbar_target, cfg.params.n_trunc),
                status: e.to_string(),
            },
        })
        .collect();
    // normalize by the undriven rate: fitted when the sweep contains a
    // zero-drive row, analytic otherwise
    let gamma0 = rows
        .iter()
        .find(|r| r.status == "ok" && r.drive_amp == 0.0)
        .map(|r| r.gamma1)
        .or_else(|| row_formula(cfg, 0.0).ok())
        .unwrap_or(f64::NAN);
    for r in &mut rows {
        r.gamma1_over_gamma0 = r.gamma1 / gamma0;
    }
    rows
}
