//! Experiment configuration: strict-schema JSON, GHz at the boundary.
//!
//! Loading fills every optional field with its resolved default, so the
//! config echo written next to the outputs is fully explicit and re-running
//! it reproduces the same artifacts.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use masterlab_core::dissipators::SecularFilter;
use masterlab_core::environment::{FilterSpec, SpectralDensity};
use masterlab_core::ghz;
use masterlab_core::model::{DriveKind, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    PurcellSweep,
    DrivenSweep,
    CavityBench,
    FilterGain,
    RabiVsJc,
}

impl Experiment {
    /// File-name prefix for artifacts of this experiment.
    pub fn prefix(self) -> &'static str {
        match self {
            Experiment::PurcellSweep => "purcell_sweep",
            Experiment::DrivenSweep => "driven_sweep",
            Experiment::CavityBench => "cavity_bench",
            Experiment::FilterGain => "filter_gain",
            Experiment::RabiVsJc => "rabi_vs_jc",
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub omega_q_ghz: f64,
    pub omega_r_ghz: f64,
    pub g_ghz: f64,
    pub n_trunc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumKind {
    #[default]
    Flat,
    Ohmic,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FilterBlock {
    #[serde(default)]
    pub omega_f_ghz: Option<f64>,
    pub gamma_f_ghz: f64,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBlock {
    #[serde(default)]
    pub kind: SpectrumKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DissipatorChoice {
    Lindblad,
    #[default]
    RedfieldStatic,
    RedfieldTd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriveKindChoice {
    #[default]
    Cosine,
    Rwa,
}

impl DriveKindChoice {
    pub fn to_core(self) -> DriveKind {
        match self {
            DriveKindChoice::Cosine => DriveKind::Cosine,
            DriveKindChoice::Rwa => DriveKind::Rwa,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DriveBlock {
    #[serde(default)]
    pub kind: DriveKindChoice,
    #[serde(default)]
    pub omega_d_ghz: Option<f64>,
    /// Drive amplitude (eta for cosine, eps for rwa); used by cavity-bench.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_ghz: Option<f64>,
    /// Target steady photon numbers; used by driven-sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbar_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecularMode {
    #[default]
    None,
    Cutoff,
    Full,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SecularBlock {
    #[serde(default)]
    pub mode: SecularMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_sec_ghz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    /// Matrix exponential when the generator is static and small, RK
    /// otherwise.
    #[default]
    Auto,
    Rk45,
    Expm,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationBlock {
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
    #[serde(default)]
    pub method: MethodChoice,
    /// Time horizon override; cavity-bench defaults to 16/kappa.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final_ns: Option<f64>,
    /// Phase-grid size of the stroboscopic Redfield cache.
    #[serde(default)]
    pub tdbr_cache_points: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: Experiment,
    pub system: SystemBlock,
    #[serde(default)]
    pub spectrum: SpectrumBlock,
    #[serde(default)]
    pub dissipator: DissipatorChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveBlock>,
    #[serde(default)]
    pub secular: SecularBlock,
    #[serde(default)]
    pub kappa_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_grid_ghz: Option<Vec<f64>>,
    /// Filter half-width scan for filter-gain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_gamma_f_ghz: Option<Vec<f64>>,
    /// Filter center for filter-gain; defaults to omega_r.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_omega_f_ghz: Option<f64>,
    #[serde(default)]
    pub propagation: PropagationBlock,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn load(path: &Path, cli_out: Option<&Path>) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut cfg: ConfigFile = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse config {}", path.display()))?;
    resolve(&mut cfg, cli_out)?;
    Ok(cfg)
}

/// Fill defaults and check cross-field consistency. Idempotent, so running
/// from a config echo resolves to the identical configuration.
pub fn resolve(cfg: &mut ConfigFile, cli_out: Option<&Path>) -> Result<()> {
    let sys = &cfg.system;
    if !(sys.omega_q_ghz > 0.0) || !(sys.omega_r_ghz > 0.0) {
        bail!("system frequencies must be positive");
    }
    if sys.g_ghz < 0.0 || !sys.g_ghz.is_finite() {
        bail!("coupling g_ghz must be finite and nonnegative");
    }
    if sys.n_trunc < 4 || sys.n_trunc > 512 {
        bail!("n_trunc {} outside the supported range 4..=512", sys.n_trunc);
    }

    let exp = cfg.experiment;

    // kappa: purcell-sweep takes a grid, everything else a scalar
    if exp == Experiment::PurcellSweep {
        if cfg.kappa_ghz.is_some() {
            bail!("purcell-sweep takes kappa_grid_ghz, not kappa_ghz");
        }
        let grid = cfg
            .kappa_grid_ghz
            .get_or_insert_with(|| vec![0.05, 0.1, 0.25, 0.5, 1.0, 2.0]);
        if grid.is_empty() || grid.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
            bail!("kappa_grid_ghz entries must be positive and finite");
        }
    } else {
        if cfg.kappa_grid_ghz.is_some() {
            bail!("kappa_grid_ghz is only used by purcell-sweep");
        }
        let default = match exp {
            Experiment::DrivenSweep => 1.0,
            Experiment::CavityBench | Experiment::FilterGain => 0.5,
            Experiment::RabiVsJc => 0.02,
            Experiment::PurcellSweep => unreachable!(),
        };
        let k = *cfg.kappa_ghz.get_or_insert(default);
        if !(k > 0.0) || !k.is_finite() {
            bail!("kappa_ghz must be positive and finite");
        }
    }

    if let Some(f) = &cfg.spectrum.filter {
        if !(f.gamma_f_ghz > 0.0) {
            bail!("spectrum.filter.gamma_f_ghz must be positive");
        }
        if exp == Experiment::FilterGain {
            bail!(
                "filter-gain composes its own filters; use filter_gamma_f_ghz \
                 and filter_omega_f_ghz instead of spectrum.filter"
            );
        }
    }
    if let Some(f) = cfg.spectrum.filter.as_mut() {
        f.omega_f_ghz.get_or_insert(sys.omega_r_ghz);
    }

    // drive: only driven experiments take one
    match exp {
        Experiment::DrivenSweep => {
            let d = cfg.drive.get_or_insert_with(Default::default);
            d.omega_d_ghz.get_or_insert(sys.omega_r_ghz);
            if d.amplitude_ghz.is_some() {
                bail!("driven-sweep sets amplitudes through nbar_grid, not amplitude_ghz");
            }
            let grid = d
                .nbar_grid
                .get_or_insert_with(|| vec![0.0, 0.5, 1.5, 4.0, 8.0, 15.0]);
            if grid.is_empty() || grid.iter().any(|n| *n < 0.0 || !n.is_finite()) {
                bail!("nbar_grid entries must be nonnegative and finite");
            }
        }
        Experiment::CavityBench => {
            let kappa = cfg.kappa_ghz.unwrap();
            let d = cfg.drive.get_or_insert_with(Default::default);
            d.omega_d_ghz.get_or_insert(sys.omega_r_ghz);
            if d.nbar_grid.is_some() {
                bail!("cavity-bench takes a single amplitude_ghz, not nbar_grid");
            }
            // default drive rings the cavity up to nbar = 2
            let delta = ghz(sys.omega_r_ghz) - ghz(d.omega_d_ghz.unwrap());
            let default_amp = masterlab_core::model::DriveSpec::amplitude_for_nbar(
                d.kind.to_core(),
                2.0,
                delta,
                ghz(kappa),
            ) / std::f64::consts::TAU;
            let amp = *d.amplitude_ghz.get_or_insert(default_amp);
            if amp < 0.0 || !amp.is_finite() {
                bail!("drive.amplitude_ghz must be nonnegative and finite");
            }
        }
        _ => {
            if cfg.drive.is_some() {
                bail!("{:?} does not take a drive block", exp);
            }
        }
    }

    match cfg.secular.mode {
        SecularMode::Cutoff => {
            let w = cfg
                .secular
                .omega_sec_ghz
                .context("secular mode cutoff requires omega_sec_ghz")?;
            if !(w > 0.0) {
                bail!("omega_sec_ghz must be positive");
            }
        }
        _ => {
            if cfg.secular.omega_sec_ghz.is_some() {
                bail!("omega_sec_ghz is only valid with secular mode cutoff");
            }
        }
    }
    if matches!(exp, Experiment::DrivenSweep | Experiment::CavityBench)
        && cfg.secular.mode != SecularMode::None
    {
        bail!("{:?} fixes its own secular treatment; leave the secular block at its default", exp);
    }

    // filter-gain scan parameters
    if exp == Experiment::FilterGain {
        let scan = cfg
            .filter_gamma_f_ghz
            .get_or_insert_with(|| vec![1.5, 1.0]);
        if scan.is_empty() || scan.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            bail!("filter_gamma_f_ghz entries must be positive and finite");
        }
        cfg.filter_omega_f_ghz.get_or_insert(sys.omega_r_ghz);
    } else {
        if cfg.filter_gamma_f_ghz.is_some() || cfg.filter_omega_f_ghz.is_some() {
            bail!("filter_gamma_f_ghz / filter_omega_f_ghz are only used by filter-gain");
        }
    }

    if exp == Experiment::RabiVsJc {
        if cfg.spectrum.kind != SpectrumKind::Flat || cfg.spectrum.filter.is_some() {
            bail!("rabi-vs-jc compares rates under a bare flat spectrum");
        }
        if cfg.dissipator == DissipatorChoice::RedfieldTd {
            bail!("rabi-vs-jc is undriven; use lindblad or redfield-static");
        }
    }

    // propagation defaults
    let prop = &mut cfg.propagation;
    let rel_default = match exp {
        Experiment::DrivenSweep => 2e-5,
        Experiment::CavityBench => 1e-6,
        _ => 1e-8,
    };
    let rel = *prop.rel_tol.get_or_insert(rel_default);
    let abs = *prop.abs_tol.get_or_insert(if exp == Experiment::DrivenSweep {
        1e-9
    } else {
        1e-10
    });
    if !(rel > 0.0) || !(abs > 0.0) {
        bail!("tolerances must be positive");
    }
    if prop.method == MethodChoice::Expm
        && matches!(exp, Experiment::DrivenSweep | Experiment::CavityBench)
    {
        bail!("the matrix-exponential method only applies to undriven experiments");
    }
    if prop.t_final_ns.is_some() && exp != Experiment::CavityBench {
        bail!("t_final_ns is only used by cavity-bench");
    }
    let pts = *prop.tdbr_cache_points.get_or_insert(128);
    if pts < 4 {
        bail!("tdbr_cache_points must be at least 4");
    }

    // output directory precedence: --out, then config, then MASTERLAB_OUT
    let resolved_out = cli_out
        .map(|p| p.to_string_lossy().into_owned())
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var("MASTERLAB_OUT").ok())
        .unwrap_or_else(|| ".".into());
    cfg.output_dir = Some(resolved_out);
    cfg.seed.get_or_insert(0);
    Ok(())
}

impl ConfigFile {
    pub fn params(&self) -> SystemParams {
        SystemParams {
            omega_q: ghz(self.system.omega_q_ghz),
            omega_r: ghz(self.system.omega_r_ghz),
            g: ghz(self.system.g_ghz),
            n_trunc: self.system.n_trunc,
        }
    }

    /// Bath spectral density for a given Lindblad-equivalent decay rate
    /// (rad/ns), including the optional emission filter.
    pub fn base_spectrum(&self, kappa: f64) -> Result<SpectralDensity> {
        let base = match self.spectrum.kind {
            SpectrumKind::Flat => SpectralDensity::flat(kappa),
            SpectrumKind::Ohmic => {
                SpectralDensity::ohmic_calibrated(kappa, ghz(self.system.omega_r_ghz))?
            }
        };
        Ok(match &self.spectrum.filter {
            Some(f) => base.with_filter(FilterSpec {
                omega_f: ghz(f.omega_f_ghz.unwrap()),
                gamma_f: ghz(f.gamma_f_ghz),
            }),
            None => base,
        })
    }

    pub fn secular_filter(&self) -> SecularFilter {
        match self.secular.mode {
            SecularMode::None => SecularFilter::None,
            SecularMode::Cutoff => SecularFilter::Cutoff(ghz(self.secular.omega_sec_ghz.unwrap())),
            SecularMode::Full => SecularFilter::Full,
        }
    }
}
