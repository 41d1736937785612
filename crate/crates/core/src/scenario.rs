//! Scenario configuration: a TOML schema describing one experiment, with
//! strict parsing (unknown keys are errors) and deterministic assembly of
//! the simulation objects it names.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{sgrid_nodes, ExpMode, HistoryState};
use crate::integrator::{MassKind, Scheme, StepConfig, SystemState};
use crate::kernel::{MemoryKernel, Tail};
use crate::nonlin::Nonlinearity;
use crate::spectral::{DomainSpec, SpectralField, Transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Evolve,
    DecayStudy,
    AbsorbingStudy,
    Splitting,
    Equilibria,
    KernelCertify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub edge_lengths: Vec<f64>,
    pub modes_per_axis: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Zero,
    Prony { terms: Vec<(f64, f64)> },
    PiecewiseConstant { breakpoints: Vec<f64>, values: Vec<f64> },
    Tabulated {
        nodes: Vec<f64>,
        values: Vec<f64>,
        origin_exponent: f64,
        tail: TailConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailConfig {
    Exponential { rate: f64 },
    PowerLaw { exponent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinConfig {
    pub coeffs: Vec<f64>,
    #[serde(default = "one")]
    pub nu: f64,
    #[serde(default)]
    pub m_f: f64,
}

/// A named spectral field: either zero, a single eigenfunction, or an
/// explicit coefficient list in row-major mode order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Zero,
    Eigenfunction { mode: Vec<usize>, amplitude: f64 },
    Coeffs { coeffs: Vec<f64> },
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig::Zero
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Eta0Config {
    /// No past history.
    Zero,
    /// The Volterra preset eta0(s) = u0, constant in age.
    Volterra,
    /// Explicit samples (age, coefficient list), linear between ages.
    Explicit { ages: Vec<f64>, coeffs: Vec<Vec<f64>> },
}

impl Default for Eta0Config {
    fn default() -> Self {
        Eta0Config::Zero
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub u0: FieldConfig,
    pub v0: FieldConfig,
    pub eta0: Eta0Config,
    /// Uniform coefficient noise of this amplitude, drawn from the run seed,
    /// added to u0 and v0.
    pub perturbation: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            u0: FieldConfig::Zero,
            v0: FieldConfig::Zero,
            eta0: Eta0Config::Zero,
            perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeConfig {
    ImplicitMidpoint,
    SemiImplicitTheta { theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSection {
    pub dt: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
    #[serde(default = "default_scheme")]
    pub scheme: SchemeConfig,
    /// Age-grid density for non-Prony kernels.
    #[serde(default = "default_npd")]
    pub nodes_per_decade: usize,
}

fn one() -> f64 {
    1.0
}
fn default_tolerance() -> f64 {
    1e-12
}
fn default_max_inner() -> usize {
    200
}
fn default_scheme() -> SchemeConfig {
    SchemeConfig::ImplicitMidpoint
}
fn default_npd() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverConfig {
    /// Emit one CSV row every `stride` steps.
    pub stride: usize,
    /// Write the final state snapshot.
    pub snapshot: bool,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        ObserverConfig {
            stride: 1,
            snapshot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Decay-fit window; defaults to [horizon/5, 4 horizon/5].
    pub fit_window: Option<(f64, f64)>,
    /// Final fraction of the series used for the tail limsup.
    pub tail_fraction: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            fit_window: None,
            tail_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriaConfig {
    pub seeds: Vec<FieldConfig>,
    pub random_starts: usize,
    pub tolerance: f64,
}

impl Default for EquilibriaConfig {
    fn default() -> Self {
        EquilibriaConfig {
            seeds: vec![FieldConfig::Zero],
            random_starts: 8,
            tolerance: 1e-11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub experiment: ExperimentKind,
    pub rho: f64,
    pub horizon: f64,
    pub domain: DomainConfig,
    pub kernel: KernelConfig,
    pub nonlinearity: NonlinConfig,
    #[serde(default)]
    pub forcing: FieldConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    pub step: StepSection,
    #[serde(default)]
    pub observer: ObserverConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub equilibria: EquilibriaConfig,
}

/// The simulation objects a scenario names, ready to run.
pub struct BuiltScenario {
    pub domain: Arc<DomainSpec>,
    pub transform: Arc<Transform>,
    pub kernel: MemoryKernel,
    pub nl: Nonlinearity,
    pub h: SpectralField,
    pub z0: SystemState,
    pub cfg: StepConfig,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let sc: Scenario =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_path(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=4.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!(
                "rho = {} must lie in [0, 4]",
                self.rho
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if self.observer.stride == 0 {
            return Err(Error::InvalidConfig("observer stride must be positive".into()));
        }
        if !(self.analysis.tail_fraction > 0.0 && self.analysis.tail_fraction <= 1.0) {
            return Err(Error::InvalidConfig("tail fraction must lie in (0, 1]".into()));
        }
        // Assembling everything exercises the component validators.
        self.build(0)?;
        Ok(())
    }

    pub fn kernel(&self) -> Result<MemoryKernel> {
        let kernel = match &self.kernel {
            KernelConfig::Zero => MemoryKernel::zero(),
            KernelConfig::Prony { terms } => MemoryKernel::prony(terms)?,
            KernelConfig::PiecewiseConstant { breakpoints, values } => {
                MemoryKernel::PiecewiseConstant {
                    breakpoints: breakpoints.clone(),
                    values: values.clone(),
                }
            }
            KernelConfig::Tabulated {
                nodes,
                values,
                origin_exponent,
                tail,
            } => MemoryKernel::Tabulated {
                nodes: nodes.clone(),
                values: values.clone(),
                origin_exponent: *origin_exponent,
                tail: match tail {
                    TailConfig::Exponential { rate } => Tail::Exponential { rate: *rate },
                    TailConfig::PowerLaw { exponent } => Tail::PowerLaw { exponent: *exponent },
                },
            },
        };
        kernel.validate()?;
        Ok(kernel)
    }

    pub fn step_config(&self) -> Result<StepConfig> {
        let cfg = StepConfig {
            dt: self.step.dt,
            rho: self.rho,
            tolerance: self.step.tolerance,
            max_inner: self.step.max_inner,
            scheme: match self.step.scheme {
                SchemeConfig::ImplicitMidpoint => Scheme::ImplicitMidpoint,
                SchemeConfig::SemiImplicitTheta { theta } => Scheme::SemiImplicitTheta { theta },
            },
            mass: MassKind::InertiaPlusA,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Assembles domain, kernel, nonlinearity, forcing, initial state and
    /// step configuration.  The seed only drives the initial-data
    /// perturbation; everything else is seed-free.
    pub fn build(&self, seed: u64) -> Result<BuiltScenario> {
        let domain = DomainSpec::new(&self.domain.edge_lengths, &self.domain.modes_per_axis)?;
        let transform = domain.transform(2);
        let kernel = self.kernel()?;
        let nl = Nonlinearity::new(
            &self.nonlinearity.coeffs,
            self.nonlinearity.nu,
            self.nonlinearity.m_f,
        )?;
        let h = build_field(&domain, &self.forcing)?;
        let cfg = self.step_config()?;

        let mut u0 = build_field(&domain, &self.initial.u0)?;
        let mut v0 = build_field(&domain, &self.initial.v0)?;
        if self.initial.perturbation != 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let amp = self.initial.perturbation;
            for c in u0.coeffs_mut().iter_mut() {
                *c += amp * rng.gen_range(-1.0..1.0);
            }
            for c in v0.coeffs_mut().iter_mut() {
                *c += amp * rng.gen_range(-1.0..1.0);
            }
        }
        let eta0 = self.build_eta0(&domain, &kernel, &u0)?;
        let z0 = SystemState::new(u0, v0, eta0);
        Ok(BuiltScenario {
            domain,
            transform,
            kernel,
            nl,
            h,
            z0,
            cfg,
        })
    }

    fn build_eta0(
        &self,
        domain: &Arc<DomainSpec>,
        kernel: &MemoryKernel,
        u0: &SpectralField,
    ) -> Result<HistoryState> {
        let prony_terms = match kernel {
            MemoryKernel::Prony { terms } => Some(terms.clone()),
            _ => None,
        };
        match (&self.initial.eta0, &prony_terms) {
            (Eta0Config::Zero, Some(_)) => HistoryState::exp_modes_zero(domain, kernel),
            (Eta0Config::Zero, None) => {
                if kernel.is_zero() {
                    return HistoryState::exp_modes_zero(domain, &MemoryKernel::zero());
                }
                HistoryState::sgrid_zero(domain, kernel, self.step.dt, self.step.nodes_per_decade)
            }
            (Eta0Config::Volterra, Some(terms)) => {
                // zeta_j = int e^{-d_j s} u0 ds = u0 / d_j.
                let modes = terms
                    .iter()
                    .map(|&(c, d)| ExpMode {
                        zeta: u0.scale(1.0 / d),
                        rate: d,
                        weight: c,
                    })
                    .collect();
                Ok(HistoryState::exp_modes_from(domain, modes))
            }
            (Eta0Config::Volterra, None) => {
                let nodes = sgrid_nodes(kernel, self.step.dt, self.step.nodes_per_decade)?;
                HistoryState::sgrid_from_fn(domain, &nodes, |_| u0.clone())
            }
            (Eta0Config::Explicit { ages, coeffs }, _) => {
                if ages.len() != coeffs.len() || ages.is_empty() {
                    return Err(Error::InvalidConfig(
                        "explicit eta0 needs matching, nonempty ages and coefficients".into(),
                    ));
                }
                let samples: Vec<(f64, SpectralField)> = ages
                    .iter()
                    .zip(coeffs)
                    .map(|(&s, c)| Ok((s, field_from_flat(domain, c)?)))
                    .collect::<Result<_>>()?;
                let nodes = sgrid_nodes(kernel, self.step.dt, self.step.nodes_per_decade)?;
                HistoryState::sgrid_from_fn(domain, &nodes, |s| interp_samples(&samples, s))
            }
        }
    }
}

pub(crate) fn build_field(domain: &Arc<DomainSpec>, spec: &FieldConfig) -> Result<SpectralField> {
    match spec {
        FieldConfig::Zero => Ok(SpectralField::zeros(domain)),
        FieldConfig::Eigenfunction { mode, amplitude } => {
            SpectralField::eigenfunction(domain, mode, *amplitude)
        }
        FieldConfig::Coeffs { coeffs } => field_from_flat(domain, coeffs),
    }
}

fn field_from_flat(domain: &Arc<DomainSpec>, flat: &[f64]) -> Result<SpectralField> {
    if flat.len() != domain.mode_count() {
        return Err(Error::InvalidConfig(format!(
            "coefficient list has {} entries, domain has {} modes",
            flat.len(),
            domain.mode_count()
        )));
    }
    let shape: Vec<usize> = domain.modes_per_axis().to_vec();
    let arr = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&shape), flat.to_vec())
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    SpectralField::from_coeffs(domain, arr)
}

/// Piecewise-linear interpolation in age with clamped ends.
fn interp_samples(samples: &[(f64, SpectralField)], s: f64) -> SpectralField {
    if s <= samples[0].0 {
        return samples[0].1.clone();
    }
    let last = samples.len() - 1;
    if s >= samples[last].0 {
        return samples[last].1.clone();
    }
    let i = samples.partition_point(|(a, _)| *a <= s) - 1;
    let (s0, f0) = &samples[i];
    let (s1, f1) = &samples[i + 1];
    let w = (s - s0) / (s1 - s0);
    let mut out = f0.scale(1.0 - w);
    out.axpy(w, f1);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_toml() -> &'static str {
        r#"
experiment = "decay_study"
rho = 2.0
horizon = 50.0

[domain]
edge_lengths = [3.141592653589793]
modes_per_axis = [16]

[kernel]
type = "prony"
terms = [[1.0, 1.0]]

[nonlinearity]
coeffs = [0.0, 0.0, 0.0, 1.0]
nu = 1.0
m_f = 0.0

[forcing]
type = "zero"

[initial.u0]
type = "eigenfunction"
mode = [1]
amplitude = 1.0

[initial.v0]
type = "zero"

[initial.eta0]
type = "zero"

[step]
dt = 0.05
"#
    }

    #[test]
    fn parses_and_builds() {
        let sc = Scenario::from_toml_str(sample_toml()).unwrap();
        assert_eq!(sc.experiment, ExperimentKind::DecayStudy);
        let built = sc.build(0).unwrap();
        assert_eq!(built.domain.mode_count(), 16);
        assert!((built.z0.u.sobolev_norm(0.0) - 1.0).abs() < 1e-12);
        assert!(built.z0.eta.is_exp_modes());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = sample_toml().replace("[step]\ndt = 0.05", "[step]\ndt = 0.05\ntypo = 1");
        let err = Scenario::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn round_trip_is_identity() {
        let sc = Scenario::from_toml_str(sample_toml()).unwrap();
        let text = sc.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn invalid_rho_rejected() {
        let text = sample_toml().replace("rho = 2.0", "rho = 5.0");
        assert!(Scenario::from_toml_str(&text).is_err());
    }

    #[test]
    fn volterra_preset_matches_u0() {
        let text = sample_toml().replace("[initial.eta0]\ntype = \"zero\"", "[initial.eta0]\ntype = \"volterra\"");
        let sc = Scenario::from_toml_str(&text).unwrap();
        let built = sc.build(0).unwrap();
        // zeta_1 = u0 / d_1 with d_1 = 1.
        let modes = built.z0.eta.exp_modes().unwrap();
        assert!(modes[0].zeta.sub(&built.z0.u).sobolev_norm(1.0) < 1e-14);
    }

    #[test]
    fn perturbation_depends_only_on_seed() {
        let text = sample_toml().replace(
            "[initial.u0]",
            "[initial]\nperturbation = 1e-3\n\n[initial.u0]",
        );
        let sc = Scenario::from_toml_str(&text).unwrap();
        let a = sc.build(7).unwrap();
        let b = sc.build(7).unwrap();
        let c = sc.build(8).unwrap();
        assert_eq!(a.z0.u.coeffs(), b.z0.u.coeffs());
        assert!(a.z0.u.sub(&c.z0.u).sobolev_norm(0.0) > 0.0);
    }
}
