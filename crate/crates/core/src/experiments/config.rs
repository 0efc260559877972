//! Experiment configuration: schema, defaults and validation.
//!
//! Every optional field left out of a configuration is filled by
//! [`ExperimentConfig::resolve`], which reports the dotted path of each
//! default it applied. A resolved configuration has every field set, so
//! serializing and reloading it is idempotent.

use serde::{Deserialize, Serialize};

use crate::action::{ProfileOptions, Smoothing, DEFAULT_ADAPTIVE_FRACTION};
use crate::error::{Error, Result};
use crate::hilbert::PhysicalConstants;
use crate::models::{qubit_system, ring_system, spin_system_shared, ModelSystem, RingParameters};

/// Version of the configuration schema, recorded in run manifests.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Qubit,
    Spin {
        j: f64,
    },
    Ring {
        #[serde(default = "default_sites")]
        sites: usize,
        #[serde(default = "default_circumference")]
        circumference: f64,
        #[serde(default = "default_mass")]
        mass: f64,
        #[serde(default = "default_flight_time")]
        flight_time: f64,
    },
}

fn default_sites() -> usize {
    RingParameters::default().sites
}
fn default_circumference() -> f64 {
    RingParameters::default().circumference
}
fn default_mass() -> f64 {
    RingParameters::default().mass
}
fn default_flight_time() -> f64 {
    RingParameters::default().flight_time
}

impl ModelConfig {
    pub fn ring_parameters(&self) -> Option<RingParameters> {
        match *self {
            ModelConfig::Ring {
                sites,
                circumference,
                mass,
                flight_time,
            } => Some(RingParameters {
                sites,
                circumference,
                mass,
                flight_time,
            }),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Qubit => "qubit",
            ModelConfig::Spin { .. } => "spin",
            ModelConfig::Ring { .. } => "ring",
        }
    }

    /// Builds the model. Spin systems come from a process-wide cache.
    pub fn build(&self, constants: PhysicalConstants) -> Result<std::sync::Arc<ModelSystem>> {
        match *self {
            ModelConfig::Qubit => Ok(std::sync::Arc::new(qubit_system())),
            ModelConfig::Spin { j } => spin_system_shared(j),
            ModelConfig::Ring { .. } => Ok(std::sync::Arc::new(ring_system(
                self.ring_parameters().expect("ring variant"),
                constants,
            )?)),
        }
    }
}

/// An endpoint state: an eigenstate of a named basis, or a Gaussian packet
/// over that basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub basis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
}

impl StateSpec {
    pub fn eigenstate(basis: &str, value: f64) -> Self {
        Self {
            basis: basis.into(),
            value: Some(value),
            center: None,
            width: None,
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        match (self.value, self.center, self.width) {
            (Some(v), None, None) if v.is_finite() => Ok(()),
            (None, Some(c), Some(w)) if c.is_finite() => {
                if w > 0.0 && w.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("{path}.width"), "must be positive"))
                }
            }
            _ => Err(Error::invalid(
                path,
                "give either `value` or both `center` and `width`",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionUnits {
    /// Multiples of the resolution limit at the dominant stationary point.
    DeltaXM,
    /// Eigenvalue units.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub resolutions: Vec<f64>,
    pub units: ResolutionUnits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmergenceConfig {
    /// Endpoint eigenvalue pairs `(x_a, x_b)` expected to have a classical
    /// intermediate value.
    pub pairs: Vec<[f64; 2]>,
    /// Pairs expected to have none.
    #[serde(default)]
    pub forbidden: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationConfig {
    /// Generator basis the packets are windowed in. Unset means the
    /// intermediate basis, or `energy` on the ring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<String>,
    /// Packet centres on the generator grid.
    pub centers: Vec<f64>,
    /// Packet width in local grid spacings.
    pub width_spacings: f64,
    /// Extra back-propagation of the detection state (ring only).
    #[serde(default)]
    pub delay: f64,
    pub scan: ScanConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbar: Option<f64>,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<StateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<StateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<Smoothing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emergence: Option<EmergenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagation: Option<PropagationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

/// Default output directory when neither the config nor the caller gives one.
pub const DEFAULT_OUTPUT_DIRECTORY: &str = "results";

/// Nearest spin eigenvalue to `v`: integers for integer `j`, half-integers otherwise.
fn snap(j: f64, v: f64) -> f64 {
    let offset = j.fract();
    (v - offset).round() + offset
}

impl ExperimentConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            hbar: None,
            model,
            a: None,
            b: None,
            intermediate: None,
            smoothing: None,
            sweep: None,
            emergence: None,
            propagation: None,
            seed: None,
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))
    }

    /// Canonical text used for provenance hashing.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Fills every unset field with its model-dependent default, validates
    /// the result and returns the dotted paths of the defaults applied.
    pub fn resolve(mut self) -> Result<(Self, Vec<String>)> {
        let mut applied = Vec::new();
        let mut note = |path: &str| applied.push(path.to_string());
        if self.hbar.is_none() {
            self.hbar = Some(1.0);
            note("hbar");
        }
        let (a, b, intermediate, smoothing) = match self.model {
            ModelConfig::Qubit => (
                StateSpec::eigenstate("x", 0.5),
                StateSpec::eigenstate("y", 0.5),
                "z",
                Smoothing::None,
            ),
            ModelConfig::Spin { j } => {
                let half = snap(j, j / 2.0);
                (
                    StateSpec::eigenstate("x", half),
                    StateSpec::eigenstate("y", half),
                    "z",
                    Smoothing::Adaptive {
                        fraction: DEFAULT_ADAPTIVE_FRACTION,
                    },
                )
            }
            ModelConfig::Ring { circumference, .. } => (
                StateSpec::eigenstate("position", (circumference * 100.0 / 256.0).round()),
                StateSpec::eigenstate("position", (circumference * 120.0 / 256.0).round()),
                "momentum",
                Smoothing::None,
            ),
        };
        if self.a.is_none() {
            self.a = Some(a);
            note("a");
        }
        if self.b.is_none() {
            self.b = Some(b);
            note("b");
        }
        if self.intermediate.is_none() {
            self.intermediate = Some(intermediate.into());
            note("intermediate");
        }
        if self.smoothing.is_none() {
            self.smoothing = Some(smoothing);
            note("smoothing");
        }
        if self.sweep.is_none() {
            self.sweep = Some(SweepConfig {
                resolutions: vec![0.25, 1.0, 4.0, 16.0],
                units: ResolutionUnits::DeltaXM,
            });
            note("sweep");
        }
        if self.emergence.is_none() {
            self.emergence = Some(default_emergence(&self.model));
            note("emergence");
        }
        if self.propagation.is_none() {
            self.propagation = Some(default_propagation(&self.model, self.hbar.unwrap()));
            note("propagation");
        }
        if self.seed.is_none() {
            self.seed = Some(0);
            note("seed");
        }
        let output = self.output.get_or_insert(OutputConfig {
            directory: None,
            format: None,
        });
        if output.directory.is_none() {
            output.directory = Some(DEFAULT_OUTPUT_DIRECTORY.into());
            note("output.directory");
        }
        if output.format.is_none() {
            output.format = Some(OutputFormat::Csv);
            note("output.format");
        }
        self.validate()?;
        Ok((self, applied))
    }

    /// Checks a resolved configuration. Errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let hbar = self.hbar.unwrap_or(1.0);
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::invalid("hbar", "must be positive and finite"));
        }
        match self.model {
            ModelConfig::Spin { j } => {
                crate::models::spin_twice_j(j).map_err(|_| {
                    Error::invalid("model.j", "must be a positive integer or half-integer")
                })?;
            }
            ModelConfig::Ring { .. } => {
                self.model
                    .ring_parameters()
                    .expect("ring variant")
                    .validate()
                    .map_err(|e| prefix("model", e))?;
            }
            ModelConfig::Qubit => {}
        }
        let bases = basis_names(&self.model);
        let check_basis = |path: &str, name: &str| {
            if bases.contains(&name) {
                Ok(())
            } else {
                Err(Error::invalid(
                    path,
                    format!("unknown basis `{name}`; expected one of {bases:?}"),
                ))
            }
        };
        for (path, spec) in [("a", &self.a), ("b", &self.b)] {
            if let Some(s) = spec {
                check_basis(&format!("{path}.basis"), &s.basis)?;
                s.validate(path)?;
            }
        }
        if let Some(m) = &self.intermediate {
            check_basis("intermediate", m)?;
        }
        if let Some(s) = self.smoothing {
            ProfileOptions {
                smoothing: s,
                ..ProfileOptions::default()
            }
            .validate()?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.resolutions.is_empty() {
                return Err(Error::invalid("sweep.resolutions", "must not be empty"));
            }
            for (i, r) in sweep.resolutions.iter().enumerate() {
                if !(*r > 0.0 && r.is_finite()) {
                    return Err(Error::invalid(
                        format!("sweep.resolutions[{i}]"),
                        format!("must be positive, got {r}"),
                    ));
                }
            }
        }
        if let Some(e) = &self.emergence {
            for (name, list) in [("pairs", &e.pairs), ("forbidden", &e.forbidden)] {
                for (i, p) in list.iter().enumerate() {
                    if p.iter().any(|v| !v.is_finite()) {
                        return Err(Error::invalid(
                            format!("emergence.{name}[{i}]"),
                            "must be finite",
                        ));
                    }
                }
            }
        }
        if let Some(p) = &self.propagation {
            if let Some(b) = &p.basis {
                check_basis("propagation.basis", b)?;
            }
            if p.centers.is_empty() {
                return Err(Error::invalid("propagation.centers", "must not be empty"));
            }
            if !(p.width_spacings > 0.0) {
                return Err(Error::invalid(
                    "propagation.width_spacings",
                    "must be positive",
                ));
            }
            if !(p.scan.stop > p.scan.start) || p.scan.steps < 3 {
                return Err(Error::invalid(
                    "propagation.scan",
                    "needs start < stop and at least 3 steps",
                ));
            }
        }
        Ok(())
    }

    pub fn constants(&self) -> Result<PhysicalConstants> {
        PhysicalConstants::new(self.hbar.unwrap_or(1.0))
    }

    pub fn profile_options(&self) -> ProfileOptions {
        ProfileOptions {
            smoothing: self.smoothing.unwrap_or(Smoothing::None),
            ..ProfileOptions::default()
        }
    }

    /// Basis the propagation packets are windowed in.
    pub fn propagation_basis(&self) -> String {
        let explicit = self.propagation.as_ref().and_then(|p| p.basis.clone());
        explicit.unwrap_or_else(|| match self.model {
            ModelConfig::Ring { .. } => "energy".into(),
            _ => self.intermediate.clone().unwrap_or_else(|| "z".into()),
        })
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

fn prefix(path: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => {
            Error::invalid(format!("{path}.{field}"), reason)
        }
        other => other,
    }
}

pub fn basis_names(model: &ModelConfig) -> Vec<&'static str> {
    match model {
        ModelConfig::Qubit => vec!["x", "y", "z"],
        ModelConfig::Spin { .. } => vec!["x", "y", "z"],
        ModelConfig::Ring { .. } => vec!["position", "momentum", "energy"],
    }
}

fn default_emergence(model: &ModelConfig) -> EmergenceConfig {
    match *model {
        ModelConfig::Spin { j } => {
            let values: Vec<f64> = [0.4, 0.5, 0.6].iter().map(|f| snap(j, f * j)).collect();
            let pairs = values
                .iter()
                .flat_map(|&xa| values.iter().map(move |&xb| [xa, xb]))
                .collect();
            let far = snap(j, 0.8 * j);
            EmergenceConfig {
                pairs,
                forbidden: vec![[far, far]],
            }
        }
        ModelConfig::Ring { circumference, .. } => {
            let at = |f: f64| (circumference * f / 256.0).round();
            EmergenceConfig {
                pairs: vec![
                    [at(100.0), at(120.0)],
                    [at(100.0), at(110.0)],
                    [at(100.0), at(90.0)],
                    [at(60.0), at(75.0)],
                ],
                forbidden: Vec::new(),
            }
        }
        ModelConfig::Qubit => EmergenceConfig {
            pairs: vec![[0.5, 0.5]],
            forbidden: Vec::new(),
        },
    }
}

fn default_propagation(model: &ModelConfig, hbar: f64) -> PropagationConfig {
    match *model {
        ModelConfig::Ring {
            circumference,
            mass,
            flight_time,
            ..
        } => {
            // Packets in signed energy around the classical momentum of the
            // default endpoints.
            let dx =
                (circumference * 120.0 / 256.0).round() - (circumference * 100.0 / 256.0).round();
            let p_star = mass * dx / flight_time;
            let centers = [0.8, 0.9, 1.0, 1.1, 1.2]
                .iter()
                .map(|f| {
                    let q = f * p_star;
                    q.signum() * q * q / (2.0 * mass)
                })
                .collect();
            PropagationConfig {
                basis: Some("energy".into()),
                centers,
                width_spacings: 4.0,
                delay: 0.0,
                scan: ScanConfig {
                    start: -flight_time,
                    stop: flight_time,
                    steps: 2001,
                },
            }
        }
        ModelConfig::Spin { j } => PropagationConfig {
            basis: Some("z".into()),
            centers: [-0.9, -0.55, 0.55, 0.9]
                .iter()
                .map(|f| snap(j, f * j))
                .collect(),
            width_spacings: 4.0,
            delay: 0.0,
            scan: ScanConfig {
                start: -std::f64::consts::PI * hbar,
                stop: std::f64::consts::PI * hbar,
                steps: 2001,
            },
        },
        ModelConfig::Qubit => PropagationConfig {
            basis: Some("z".into()),
            centers: vec![0.5],
            width_spacings: 1.0,
            delay: 0.0,
            scan: ScanConfig {
                start: -std::f64::consts::PI * hbar,
                stop: std::f64::consts::PI * hbar,
                steps: 201,
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spin_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"model": {"kind": "spin", "j": 20}}"#).unwrap();
        let (cfg, applied) = cfg.resolve().unwrap();
        assert!(applied.contains(&"sweep".to_string()));
        assert!(applied.contains(&"output.directory".to_string()));
        assert_eq!(cfg.a.as_ref().unwrap().value, Some(10.0));
        assert_eq!(
            cfg.sweep.as_ref().unwrap().resolutions,
            vec![0.25, 1.0, 4.0, 16.0]
        );
    }

    #[test]
    fn resolve_is_idempotent() {
        let cfg = ExperimentConfig::new(ModelConfig::Spin { j: 7.5 });
        let (once, _) = cfg.resolve().unwrap();
        let text = once.canonical();
        let (twice, applied) = ExperimentConfig::from_json(&text)
            .unwrap()
            .resolve()
            .unwrap();
        assert!(applied.is_empty());
        assert_eq!(once, twice);
    }

    #[test]
    fn errors_carry_field_paths() {
        let mut cfg = ExperimentConfig::new(ModelConfig::Spin { j: 20.0 });
        cfg.sweep = Some(SweepConfig {
            resolutions: vec![1.0, -2.0],
            units: ResolutionUnits::DeltaXM,
        });
        match cfg.resolve() {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "sweep.resolutions[1]"),
            other => panic!("unexpected {other:?}"),
        }
        let mut cfg = ExperimentConfig::new(ModelConfig::Ring {
            sites: 1,
            circumference: 1.0,
            mass: 1.0,
            flight_time: 1.0,
        });
        cfg.a = Some(StateSpec::eigenstate("nowhere", 0.0));
        assert!(matches!(
            cfg.resolve(),
            Err(Error::InvalidParameter { field, .. }) if field.starts_with("model.") || field == "a.basis"
        ));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"model": {"kind": "qubit"}, "sead": 3}"#).is_err());
        assert!(
            ExperimentConfig::from_json(r#"{"model": {"kind": "spin", "j": 2, "k": 1}}"#).is_err()
        );
    }
}
