//! Run configuration: scenario presets, file overrides and the content hash
//! that keys every cached stage.
//!
//! A config file is flat dotted-key TOML (`lattice.num_sites = 400`). The
//! optional top-level `scenario` key selects the preset the remaining keys
//! are layered over.

use std::path::{Path, PathBuf};

use gradflow_core::continuum::{DEFAULT_DT, GRID_POINTS};
use gradflow_core::epinet::EpinetConfig;
use gradflow_core::fe::{FeBasis, Projector};
use gradflow_core::lattice::{InitialProfile, Interaction, LatticeConfig, SamplingSchedule};
use gradflow_core::lrm::LrmConfig;
use gradflow_core::models::{BaseConfig, BaselineConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// N = 400, 8 profiles, R = 10³.
    Desk,
    /// N = 2000, 28 profiles, R = 10⁴.
    Full,
    /// Full scale restricted to the first 4 profiles.
    Scarcer,
    /// Full scale with R = 10³.
    Noisier,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Desk => "desk",
            Scenario::Full => "full",
            Scenario::Scarcer => "scarcer",
            Scenario::Noisier => "noisier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    None,
    /// Flat kernel `βĴ(r) = strength/(2·range + 1)` for `|r| ≤ range`.
    LongRange,
    /// `βĴ(±1) = strength`.
    ShortRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub num_sites: usize,
    pub jump_frequency: f64,
    pub binding_energy: f64,
    pub inverse_temperature: f64,
    pub interaction: InteractionKind,
    pub range: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesSection {
    /// 1-based rows of the standard 28-profile table.
    pub rows: Vec<usize>,
}

/// Sampling times in units of the single-particle waiting time `ε²/d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub realizations: usize,
    pub equilibration_ticks: f64,
    pub interval_ticks: f64,
    pub interval_count: usize,
    pub macro_ticks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeSection {
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub diffusion_steps: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub sample_steps: usize,
}

impl From<BaseConfig> for NetSection {
    fn from(c: BaseConfig) -> Self {
        Self {
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            diffusion_steps: c.diffusion_steps,
            hidden_width: c.hidden_width,
            hidden_layers: c.hidden_layers,
            sample_steps: c.sample_steps,
        }
    }
}

impl NetSection {
    pub fn base(&self) -> BaseConfig {
        BaseConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            diffusion_steps: self.diffusion_steps,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            sample_steps: self.sample_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpinetSection {
    pub index_dim: usize,
    pub prior_scale: f64,
    pub prior_width: usize,
    pub prior_layers: usize,
    pub learnable_width: usize,
    pub learnable_layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub index_batch: usize,
}

impl From<EpinetConfig> for EpinetSection {
    fn from(c: EpinetConfig) -> Self {
        Self {
            index_dim: c.index_dim,
            prior_scale: c.prior_scale,
            prior_width: c.prior_width,
            prior_layers: c.prior_layers,
            learnable_width: c.learnable_width,
            learnable_layers: c.learnable_layers,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            index_batch: c.index_batch,
        }
    }
}

impl EpinetSection {
    pub fn epinet(&self) -> EpinetConfig {
        EpinetConfig {
            index_dim: self.index_dim,
            prior_scale: self.prior_scale,
            prior_width: self.prior_width,
            prior_layers: self.prior_layers,
            learnable_width: self.learnable_width,
            learnable_layers: self.learnable_layers,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            index_batch: self.index_batch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub k1_epochs: usize,
    pub f_epochs: usize,
    pub learning_rate: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl From<BaselineConfig> for BaselineSection {
    fn from(c: BaselineConfig) -> Self {
        Self {
            k1_epochs: c.k1_epochs,
            f_epochs: c.f_epochs,
            learning_rate: c.learning_rate,
            hidden_width: c.hidden_width,
            hidden_layers: c.hidden_layers,
        }
    }
}

impl BaselineSection {
    pub fn baseline(&self) -> BaselineConfig {
        BaselineConfig {
            k1_epochs: self.k1_epochs,
            f_epochs: self.f_epochs,
            learning_rate: self.learning_rate,
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
        }
    }
}

/// Held-out test profile and the continuum prediction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    pub frequency: u32,
    pub amplitude: f64,
    pub mean: f64,
    pub t_end: f64,
    pub intervals: usize,
    pub dt: f64,
    pub members: usize,
    pub grid_points: usize,
    /// Also write every ensemble member's trajectory.
    pub per_realization: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    /// KMC realizations started from the test profile.
    pub realizations: usize,
    /// Points of the uniform-density grid for the `K̄1` and `f̄` errors.
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Persist site-level snapshots in addition to the projected ones.
    pub raw_snapshots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub lattice: LatticeSection,
    pub profiles: ProfilesSection,
    pub sampling: SamplingSection,
    pub fe: FeSection,
    pub k1: NetSection,
    pub f: NetSection,
    pub epinet: EpinetSection,
    pub baseline: BaselineSection,
    pub predict: PredictSection,
    pub validate: ValidateSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn preset(scenario: Scenario) -> Self {
        let (num_sites, range, rows, realizations) = match scenario {
            Scenario::Desk => (400, 20, 8, 1000),
            Scenario::Full => (2000, 100, 28, 10_000),
            Scenario::Scarcer => (2000, 100, 4, 10_000),
            Scenario::Noisier => (2000, 100, 28, 1000),
        };
        let baseline = if realizations <= 1000 {
            BaselineConfig::noisier()
        } else {
            BaselineConfig::default()
        };
        // κ = 1 gives desk-scale bands several times wider than the spread
        // between independent KMC runs; 0.3 was picked on the desk run.
        let prior_scale = if scenario == Scenario::Desk { 0.3 } else { 1.0 };
        Self {
            scenario,
            seed: 1,
            output_dir: PathBuf::from("out"),
            lattice: LatticeSection {
                num_sites,
                jump_frequency: 1.0,
                binding_energy: 0.0,
                inverse_temperature: 1.0,
                interaction: InteractionKind::LongRange,
                range,
                strength: 1.0,
            },
            profiles: ProfilesSection {
                rows: (1..=rows).collect(),
            },
            sampling: SamplingSection {
                realizations,
                equilibration_ticks: 50.0,
                interval_ticks: 0.25,
                interval_count: 10,
                macro_ticks: 25.0,
            },
            fe: FeSection { nodes: 25 },
            k1: BaseConfig::k1_default().into(),
            f: BaseConfig::f_default().into(),
            epinet: EpinetConfig {
                prior_scale,
                ..EpinetConfig::default()
            }
            .into(),
            baseline: baseline.into(),
            predict: PredictSection {
                frequency: 1,
                amplitude: 0.2,
                mean: 0.5,
                t_end: 0.01,
                intervals: 10,
                dt: DEFAULT_DT,
                members: 200,
                grid_points: GRID_POINTS,
                per_realization: false,
            },
            validate: ValidateSection {
                realizations: 300,
                grid_points: 101,
            },
            output: OutputSection {
                raw_snapshots: false,
            },
        }
    }

    /// Parses config text: the preset named by `scenario` (default `desk`)
    /// with every other key layered over it.
    pub fn from_toml(text: &str) -> Result<Self> {
        let overrides: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        let scenario = match overrides.get("scenario") {
            None => Scenario::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| CliError::Config(format!("scenario: {e}")))?,
        };
        let mut base = toml::Table::try_from(Self::preset(scenario))
            .map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut base, overrides);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e| CliError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Canonical flat `section.key = value` rendering. Parsing it back
    /// yields the same config.
    pub fn to_flat_toml(&self) -> String {
        let table = toml::Table::try_from(self).expect("config serializes");
        let mut out = String::new();
        flatten(&table, "", &mut out);
        out
    }

    /// SHA-256 of the canonical rendering of the selected sections.
    pub fn hash_of(&self, sections: &[&str]) -> String {
        let table = toml::Table::try_from(self).expect("config serializes");
        let mut h = Sha256::new();
        for s in sections {
            let mut text = String::new();
            if let Some(v) = table.get(*s) {
                match v {
                    toml::Value::Table(t) => flatten(t, s, &mut text),
                    other => text.push_str(&format!("{s} = {other}\n")),
                }
            }
            h.update(text.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn hash(&self) -> String {
        let mut all: Vec<&str> = SECTIONS.to_vec();
        all.retain(|s| *s != "output_dir");
        self.hash_of(&all)
    }

    pub fn validate(&self) -> Result<()> {
        let lattice = self.lattice_config()?;
        let basis = self.basis()?;
        Projector::new(basis, lattice.num_sites)?;
        if self.profiles.rows.is_empty() {
            return Err(CliError::Config(
                "at least one training profile is required".into(),
            ));
        }
        for &r in &self.profiles.rows {
            if InitialProfile::table(r).is_none() {
                return Err(CliError::Config(format!(
                    "profile row {r} is outside 1..=28"
                )));
            }
        }
        self.schedule(&lattice).validate()?;
        self.k1.base().validate()?;
        self.f.base().validate()?;
        self.epinet.epinet().validate()?;
        self.baseline.baseline().validate()?;
        self.test_profile()?;
        let p = &self.predict;
        if !(p.t_end > 0.0 && p.t_end.is_finite()) || p.intervals == 0 || !(p.dt > 0.0) {
            return Err(CliError::Config(
                "predict needs t_end > 0, intervals >= 1 and dt > 0".into(),
            ));
        }
        if p.members == 0 || p.grid_points < 2 {
            return Err(CliError::Config(
                "predict needs members >= 1 and grid_points >= 2".into(),
            ));
        }
        if self.validate.realizations == 0 || self.validate.grid_points < 2 {
            return Err(CliError::Config(
                "validate needs realizations >= 1 and grid_points >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn lattice_config(&self) -> Result<LatticeConfig> {
        let l = &self.lattice;
        let interaction = match l.interaction {
            InteractionKind::None => Interaction::none(),
            InteractionKind::LongRange => Interaction::flat(l.range, l.strength),
            InteractionKind::ShortRange => Interaction::nearest_neighbour(l.strength),
        };
        Ok(LatticeConfig::new(
            l.num_sites,
            l.jump_frequency,
            l.binding_energy,
            l.inverse_temperature,
            interaction,
        )?)
    }

    pub fn basis(&self) -> Result<FeBasis> {
        Ok(FeBasis::new(self.fe.nodes)?)
    }

    pub fn projector(&self) -> Result<Projector> {
        Ok(Projector::new(self.basis()?, self.lattice.num_sites)?)
    }

    pub fn lrm(&self) -> Result<LrmConfig> {
        Ok(LrmConfig::from_lattice(
            &self.lattice_config()?,
            &self.basis()?,
        )?)
    }

    pub fn schedule(&self, lattice: &LatticeConfig) -> SamplingSchedule {
        let eps = lattice.spacing();
        let tick = eps * eps / lattice.jump_frequency;
        let s = &self.sampling;
        SamplingSchedule {
            equilibration: s.equilibration_ticks * tick,
            fluctuation_interval: s.interval_ticks * tick,
            interval_count: s.interval_count,
            macro_interval: s.macro_ticks * tick,
            realizations: s.realizations,
        }
    }

    /// Row `row` of the standard profile table.
    pub fn profile(&self, row: usize) -> Result<InitialProfile> {
        InitialProfile::table(row)
            .ok_or_else(|| CliError::Config(format!("profile row {row} is outside 1..=28")))
    }

    pub fn test_profile(&self) -> Result<InitialProfile> {
        let p = &self.predict;
        Ok(InitialProfile::new(p.frequency, p.amplitude, p.mean)?)
    }
}

/// Top-level keys in declaration order.
pub const SECTIONS: &[&str] = &[
    "scenario",
    "seed",
    "output_dir",
    "lattice",
    "profiles",
    "sampling",
    "fe",
    "k1",
    "f",
    "epinet",
    "baseline",
    "predict",
    "validate",
    "output",
];

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn flatten(table: &toml::Table, prefix: &str, out: &mut String) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(t, &key, out),
            other => out.push_str(&format!("{key} = {other}\n")),
        }
    }
}
