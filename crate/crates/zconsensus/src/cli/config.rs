//! TOML run configuration: parsing, `--set` overrides, and conversion into
//! validated domain types.

use serde::{Deserialize, Serialize};

use crate::control::indirect::IndirectMode;
use crate::integrate::{ControlSpec, IcSpec, SimConfig};
use crate::kernel::{KernelSpec, KernelVariant, ModelConfig};
use crate::{Error, Result};

/// One run as written in a config document. Field names mirror the TOML keys.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ic: Option<IcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<ExpectSection>,
    /// Present instead of the simulation sections for rank-table jobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<RankSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub order: usize,
    pub agents: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// `"smoothed_hk"` or `"cucker_smale"`.
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    #[serde(default)]
    pub skew: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub solve_every_stage: bool,
}

fn default_record_every() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    /// `"none"`, `"direct"`, or `"indirect"`.
    pub law: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Indirect law: `"vel_via_pos"`, `"acc_via_pos"`, or `"acc_via_vel"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IcSection {
    /// One `[lo, hi]` box per block (positions first).
    pub boxes: Vec<[f64; 2]>,
}

/// Optional declared expectation, echoed into the report and checked there.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExpectSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Gamma threshold defining "consensus reached".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Whether consensus should be reached within the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converges: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RankSection {
    pub agents: usize,
    pub dims: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// Validated job: either one simulation or a rank-table scan.
#[derive(Debug, Clone)]
pub enum Job {
    Sim {
        model: ModelConfig,
        kernel: KernelSpec<f64>,
        sim: SimConfig<f64>,
        expect: Option<ExpectSection>,
    },
    RankTable {
        agents: usize,
        dims: Vec<usize>,
        seed: u64,
    },
}

pub fn parse_mode(name: &str) -> Result<IndirectMode> {
    match name {
        "vel_via_pos" => Ok(IndirectMode::VelViaPos),
        "acc_via_pos" => Ok(IndirectMode::AccViaPos),
        "acc_via_vel" => Ok(IndirectMode::AccViaVel),
        other => Err(Error::Config(format!(
            "unknown indirect mode '{other}' (expected vel_via_pos, acc_via_pos, or acc_via_vel)"
        ))),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Apply `key=value` overrides (dotted keys, TOML-typed values) and
    /// re-validate the result.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value =
            toml::Value::try_from(self).map_err(|e| Error::Parse(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
            let parsed = parse_toml_value(raw.trim())?;
            set_path(&mut value, key.trim(), parsed)?;
        }
        value.try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))
    }

    /// Convert to a validated job. All domain invariants are enforced here;
    /// the simulation entry points re-check them.
    pub fn into_job(self) -> Result<Job> {
        if let Some(rank) = self.rank {
            if self.model.is_some() || self.sim.is_some() {
                return Err(Error::Config(
                    "a config holds either [rank] or the simulation sections, not both".into(),
                ));
            }
            if rank.dims.is_empty() {
                return Err(Error::Config("rank.dims must be non-empty".into()));
            }
            return Ok(Job::RankTable {
                agents: rank.agents,
                dims: rank.dims,
                seed: rank.seed,
            });
        }

        let model_s = self.model.ok_or_else(|| Error::Config("missing [model] section".into()))?;
        let kernel_s =
            self.kernel.ok_or_else(|| Error::Config("missing [kernel] section".into()))?;
        let sim_s = self.sim.ok_or_else(|| Error::Config("missing [sim] section".into()))?;
        let ic_s = self.ic.ok_or_else(|| Error::Config("missing [ic] section".into()))?;

        let model = ModelConfig::new(model_s.order, model_s.agents, model_s.dim)?;

        let variant = match kernel_s.family.as_str() {
            "smoothed_hk" => {
                let alpha = kernel_s
                    .alpha
                    .ok_or_else(|| Error::Config("smoothed_hk kernel needs alpha".into()))?;
                if kernel_s.strength.is_some() || kernel_s.decay.is_some() {
                    return Err(Error::Config(
                        "strength/decay apply to the cucker_smale kernel only".into(),
                    ));
                }
                KernelVariant::SmoothedHk { alpha }
            }
            "cucker_smale" => {
                let strength = kernel_s
                    .strength
                    .ok_or_else(|| Error::Config("cucker_smale kernel needs strength".into()))?;
                let decay = kernel_s
                    .decay
                    .ok_or_else(|| Error::Config("cucker_smale kernel needs decay".into()))?;
                if kernel_s.alpha.is_some() {
                    return Err(Error::Config("alpha applies to the smoothed_hk kernel only".into()));
                }
                KernelVariant::CuckerSmale { strength, decay }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown kernel family '{other}' (expected smoothed_hk or cucker_smale)"
                )))
            }
        };
        let kernel = KernelSpec::new(variant, kernel_s.skew)?;

        let control = match self.control {
            None => ControlSpec::None,
            Some(c) => match c.law.as_str() {
                "none" => {
                    if c.lambda.is_some() || c.mode.is_some() {
                        return Err(Error::Config(
                            "control.law = \"none\" takes no lambda or mode".into(),
                        ));
                    }
                    ControlSpec::None
                }
                "direct" => {
                    if c.mode.is_some() {
                        return Err(Error::Config("direct control takes no mode".into()));
                    }
                    let lambda = c
                        .lambda
                        .ok_or_else(|| Error::Config("direct control needs lambda".into()))?;
                    ControlSpec::Direct { lambda }
                }
                "indirect" => {
                    let lambda = c
                        .lambda
                        .ok_or_else(|| Error::Config("indirect control needs lambda".into()))?;
                    let mode = parse_mode(
                        c.mode
                            .as_deref()
                            .ok_or_else(|| Error::Config("indirect control needs mode".into()))?,
                    )?;
                    ControlSpec::Indirect { mode, lambda }
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown control law '{other}' (expected none, direct, or indirect)"
                    )))
                }
            },
        };

        let ic = IcSpec::UniformBoxes {
            bounds: ic_s.boxes.iter().map(|b| (b[0], b[1])).collect(),
        };
        let sim = SimConfig {
            dt: sim_s.dt,
            t_end: sim_s.t_end,
            control,
            record_every: sim_s.record_every,
            seed: sim_s.seed,
            ic,
            solve_every_stage: sim_s.solve_every_stage,
        };
        crate::integrate::validate(&model, &kernel, &sim)?;
        Ok(Job::Sim { model, kernel, sim, expect: self.expect })
    }
}

fn parse_toml_value(raw: &str) -> Result<toml::Value> {
    // reuse the TOML grammar for typing; bare words fall back to strings
    let doc = format!("v = {raw}");
    if let Ok(table) = doc.parse::<toml::Table>() {
        return Ok(table["v"].clone());
    }
    Ok(toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, path: &str, new: toml::Value) -> Result<()> {
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key '{path}'")));
    }
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key '{path}' crosses a non-table")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override key '{path}' crosses a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), new);
    Ok(())
}
