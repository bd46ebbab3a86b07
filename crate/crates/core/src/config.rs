//! Run configuration: a single JSON document with every field defaulted,
//! plus dotted `key=value` overrides.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::aggregator::{Calibration, Thresholds};
use crate::error::{Error, Result};
use crate::models::{ModelShape, TrainConfig};
use crate::numerics::Bandwidth;
use crate::stream::{
    CovariateTransform, GaussianMixture, ShiftEvent, ShiftSchedule, TransformKind, WindowSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Shiftex,
    FedavgGlobal,
    FedproxGlobal,
}

impl MethodKind {
    pub const ALL: [MethodKind; 3] = [
        MethodKind::Shiftex,
        MethodKind::FedavgGlobal,
        MethodKind::FedproxGlobal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Shiftex => "shiftex",
            MethodKind::FedavgGlobal => "fedavg_global",
            MethodKind::FedproxGlobal => "fedprox_global",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Synthetic class-conditional mixture the party streams draw from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub radius: f64,
    pub std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            radius: 1.5,
            std: 1.0,
        }
    }
}

/// Pool-management knobs; detection cut-offs are calibrated unless fixed here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub p_value: f64,
    pub delta_cov: Option<f64>,
    pub delta_label: Option<f64>,
    /// Defaults to the covariate cut-off.
    pub epsilon_match: Option<f64>,
    pub tau_merge: f64,
    pub gamma_min_cluster: usize,
    pub u_max: Option<usize>,
    pub lambda_open: f64,
    pub mu_balance: f64,
    pub ema_beta: f64,
    pub participant_fraction: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            p_value: 0.05,
            delta_cov: None,
            delta_label: None,
            epsilon_match: None,
            tau_merge: 0.95,
            gamma_min_cluster: 3,
            u_max: None,
            lambda_open: 0.5,
            mu_balance: 0.5,
            ema_beta: 0.9,
            participant_fraction: 0.2,
        }
    }
}

impl ThresholdConfig {
    /// Final thresholds, with fixed values taking precedence over calibration.
    pub fn resolve(&self, cal: &Calibration) -> Thresholds {
        let delta_cov = self.delta_cov.unwrap_or(cal.delta_cov);
        Thresholds {
            delta_cov,
            delta_label: self.delta_label.unwrap_or(cal.delta_label),
            epsilon_match: self.epsilon_match.unwrap_or(delta_cov),
            tau_merge: self.tau_merge,
            gamma_min_cluster: self.gamma_min_cluster,
            u_max: self.u_max,
            lambda_open: self.lambda_open,
            mu_balance: self.mu_balance,
            ema_beta: self.ema_beta,
            participant_fraction: self.participant_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub parties: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub hidden_dim: usize,
    pub data: DataConfig,
    pub window: WindowSpec,
    /// Number of evaluated windows, including the unshifted window 0.
    pub windows: usize,
    pub events: Vec<ShiftEvent>,
    pub methods: Vec<MethodKind>,
    pub thresholds: ThresholdConfig,
    pub train: TrainConfig,
    /// Proximal coefficient used by the FedProx baseline.
    pub fedprox_mu: f64,
    pub rounds_per_window: usize,
    /// Unshifted windows used to train the initial model and collect null
    /// detection statistics.
    pub bootstrap_windows: usize,
    pub bootstrap_rounds: usize,
    pub train_fraction: f64,
    pub m_profile: usize,
    pub m_signature: usize,
    pub bandwidth: Bandwidth,
    /// Detect and match in the bootstrap model's embedding space rather than
    /// each party's current expert.
    pub frozen_encoder: bool,
    pub out_dir: PathBuf,
}

/// Default alternating schedule: covariate regimes at windows 1 and 3,
/// Dirichlet label skew at windows 2 and 4, each touching half the parties.
/// The two covariate regimes rotate the class ring in opposite directions,
/// so they disagree with each other and with the bootstrap model, and move
/// the feature mean in opposite directions so the shift shows up in the
/// embedding.
pub fn default_events(feature_dim: usize) -> Vec<ShiftEvent> {
    let covariate = |window_index, angle: f64, offset: f64| ShiftEvent {
        window_index,
        affected_fraction: 0.5,
        covariate: Some(CovariateTransform {
            steps: vec![
                TransformKind::Rotation { angle },
                TransformKind::Shift {
                    offset: vec![offset; feature_dim],
                },
                TransformKind::GaussianNoise { sigma: 0.5 },
            ],
        }),
        label_dirichlet_alpha: None,
    };
    let label = |window_index| ShiftEvent {
        window_index,
        affected_fraction: 0.5,
        covariate: None,
        label_dirichlet_alpha: Some(0.3),
    };
    vec![
        covariate(1, FRAC_PI_2, 1.5),
        label(2),
        covariate(3, -FRAC_PI_2, -1.5),
        label(4),
    ]
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parties: 40,
            feature_dim: 8,
            classes: 4,
            hidden_dim: 16,
            data: DataConfig::default(),
            window: WindowSpec {
                mode: crate::stream::WindowMode::Tumbling,
                length: 200,
                stride: None,
            },
            windows: 5,
            events: default_events(8),
            methods: MethodKind::ALL.to_vec(),
            thresholds: ThresholdConfig::default(),
            train: TrainConfig::default(),
            fedprox_mu: 0.01,
            rounds_per_window: 15,
            bootstrap_windows: 3,
            bootstrap_rounds: 30,
            train_fraction: 0.8,
            m_profile: 64,
            m_signature: 256,
            bandwidth: Bandwidth::MedianHeuristic,
            frozen_encoder: true,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn shape(&self) -> Result<ModelShape> {
        ModelShape::new(self.feature_dim, self.hidden_dim, self.classes)
    }

    pub fn mixture(&self) -> Result<GaussianMixture> {
        GaussianMixture::ring(
            self.feature_dim,
            self.classes,
            self.data.radius,
            self.data.std,
        )
    }

    pub fn schedule(&self) -> Result<ShiftSchedule> {
        ShiftSchedule::new(self.windows, self.events.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, ok: bool, message: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config {
                    path: path.into(),
                    message: message.into(),
                })
            }
        };
        field("parties", self.parties >= 1, "need at least one party")?;
        field("windows", self.windows >= 1, "need at least one window")?;
        field(
            "methods",
            !self.methods.is_empty(),
            "need at least one method",
        )?;
        field(
            "rounds_per_window",
            self.rounds_per_window >= 1,
            "need at least one round per window",
        )?;
        field(
            "bootstrap_windows",
            self.bootstrap_windows >= 2,
            "need at least two bootstrap windows for null statistics",
        )?;
        field(
            "bootstrap_windows",
            (self.bootstrap_windows - 1) * self.parties >= crate::aggregator::MIN_NULL_REPORTS,
            "too few bootstrap windows x parties to calibrate thresholds",
        )?;
        field(
            "train_fraction",
            self.train_fraction > 0.0 && self.train_fraction < 1.0,
            "must lie in (0, 1)",
        )?;
        field("m_profile", self.m_profile >= 1, "must be at least 1")?;
        field("m_signature", self.m_signature >= 1, "must be at least 1")?;
        field(
            "fedprox_mu",
            self.fedprox_mu > 0.0 && self.fedprox_mu.is_finite(),
            "FedProx needs a positive proximal coefficient",
        )?;
        field(
            "thresholds.p_value",
            self.thresholds.p_value > 0.0 && self.thresholds.p_value < 1.0,
            "must lie in (0, 1)",
        )?;
        field(
            "window.length",
            (self.window.length as f64 * self.train_fraction).round() as usize >= 1
                && self.window.length >= 2,
            "window too short to split into train and test",
        )?;
        let wrap = |path: &'static str| {
            move |e: Error| Error::Config {
                path: path.into(),
                message: e.to_string(),
            }
        };
        self.shape().map_err(wrap("hidden_dim"))?;
        self.mixture().map_err(wrap("data"))?;
        self.window.validate().map_err(wrap("window"))?;
        self.schedule().map_err(wrap("events"))?;
        for (i, event) in self.events.iter().enumerate() {
            let steps = event.covariate.iter().flat_map(|t| &t.steps);
            for step in steps {
                if let TransformKind::Shift { offset } = step {
                    if offset.len() != self.feature_dim {
                        return Err(Error::Config {
                            path: format!("events[{i}].covariate"),
                            message: format!(
                                "shift offset has {} entries, feature_dim is {}",
                                offset.len(),
                                self.feature_dim
                            ),
                        });
                    }
                }
            }
        }
        self.train.validate().map_err(wrap("train"))?;
        let probe = Calibration {
            delta_cov: 0.0,
            delta_label: 0.0,
            p_value: self.thresholds.p_value,
            n_null: 0,
        };
        self.thresholds
            .resolve(&probe)
            .validate()
            .map_err(wrap("thresholds"))?;
        if let Some(cap) = self.thresholds.u_max {
            field(
                "thresholds.u_max",
                cap >= self.parties,
                "must be at least the party count so one expert can serve everyone",
            )?;
        }
        Ok(())
    }

    /// Parses a config document; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: path_or_root(e.path().to_string()),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the config
    /// (array elements by index). Values are parsed as JSON when possible,
    /// otherwise taken as strings; a comma-separated value assigned to a list
    /// field becomes a list.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = serde_json::to_value(self)?;
        for spec in overrides {
            let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config {
                path: spec.clone(),
                message: "override must look like key=value".into(),
            })?;
            let target = lookup(&mut doc, key.trim())?;
            *target = parse_override(raw.trim(), target.is_array());
        }
        serde_path_to_error::deserialize(doc).map_err(|e| Error::Config {
            path: path_or_root(e.path().to_string()),
            message: e.inner().to_string(),
        })
    }
}

fn path_or_root(path: String) -> String {
    if path == "." {
        "<root>".into()
    } else {
        path
    }
}

fn lookup<'a>(doc: &'a mut Value, key: &str) -> Result<&'a mut Value> {
    let unknown = || Error::Config {
        path: key.into(),
        message: "unknown config key".into(),
    };
    let mut cur = doc;
    for part in key.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part).ok_or_else(unknown)?,
            Value::Array(items) => {
                let i: usize = part.parse().map_err(|_| unknown())?;
                items.get_mut(i).ok_or_else(unknown)?
            }
            _ => return Err(unknown()),
        };
    }
    Ok(cur)
}

fn parse_override(raw: &str, list: bool) -> Value {
    let scalar =
        |s: &str| serde_json::from_str::<Value>(s).unwrap_or_else(|_| Value::String(s.to_string()));
    match serde_json::from_str::<Value>(raw) {
        Ok(v) if !list || v.is_array() => v,
        _ if list => Value::Array(
            raw.split(',')
                .map(|s| scalar(s.trim()))
                .filter(|v| v != &Value::String(String::new()))
                .collect(),
        ),
        _ => Value::String(raw.to_string()),
    }
}
