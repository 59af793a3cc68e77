use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use michscan_core::pipeline::DEFAULT_P_THRESHOLD;
use michscan_core::powersim::{
    seeded_input, AttackKind, AttackSpec, DatasetCounts, DeviceModel, SurrogateNet,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Default,
    ThreeLayer,
}

/// A built-in surrogate with its weight seed, or explicit weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkConfig {
    Preset {
        preset: Preset,
        #[serde(default)]
        seed: u64,
    },
    Explicit(SurrogateNet),
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::Preset {
            preset: Preset::Default,
            seed: 1,
        }
    }
}

impl NetworkConfig {
    pub fn build(&self) -> Result<SurrogateNet> {
        Ok(match self {
            NetworkConfig::Preset {
                preset: Preset::Default,
                seed,
            } => SurrogateNet::default_surrogate(*seed),
            NetworkConfig::Preset {
                preset: Preset::ThreeLayer,
                seed,
            } => SurrogateNet::three_layer_surrogate(*seed),
            NetworkConfig::Explicit(net) => {
                net.validate()?;
                net.clone()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TestInput {
    Seeded { seed: u64 },
    Values(Vec<i8>),
}

impl Default for TestInput {
    fn default() -> Self {
        TestInput::Seeded { seed: 1 }
    }
}

impl TestInput {
    pub fn values(&self, width: usize) -> Result<Vec<i8>> {
        match self {
            TestInput::Seeded { seed } => Ok(seeded_input(width, *seed)),
            TestInput::Values(v) if v.len() == width => Ok(v.clone()),
            TestInput::Values(v) => {
                bail!("test input has {} values, network expects {width}", v.len())
            }
        }
    }

    pub fn id(&self) -> String {
        match self {
            TestInput::Seeded { seed } => format!("seeded-{seed}"),
            TestInput::Values(v) => {
                let bytes: Vec<u8> = v.iter().map(|&x| x as u8).collect();
                format!("explicit-{}", &hex::encode(Sha256::digest(&bytes))[..16])
            }
        }
    }
}

fn default_attacks() -> Vec<AttackSpec> {
    vec![
        AttackSpec::new(AttackKind::TrojanRetrain, "fc", 1),
        AttackSpec::new(AttackKind::PoisonFinalLayer, "fc", 1),
        AttackSpec::bit_flip("fc", 4, 1),
    ]
}

fn default_device_id() -> String {
    "sim-device".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub device: DeviceModel,
    pub network: NetworkConfig,
    pub test_input: TestInput,
    pub attacks: Vec<AttackSpec>,
    pub counts: DatasetCounts,
    pub device_id: String,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            device: DeviceModel::default(),
            network: NetworkConfig::default(),
            test_input: TestInput::default(),
            attacks: default_attacks(),
            counts: DatasetCounts {
                predeploy: 500,
                runtime: 5,
            },
            device_id: default_device_id(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub device: DeviceModel,
    pub network: NetworkConfig,
    pub test_input: TestInput,
    pub predeploy_traces: usize,
    /// Each trial draws a fresh instance of every attack.
    pub attacks: Vec<AttackSpec>,
    pub n_ra: Vec<usize>,
    pub trials: usize,
    pub p_threshold: f64,
    /// Report layer; defaults to the network's final layer.
    pub layer: Option<String>,
    pub template_selection_seed: u64,
    pub master_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            device: DeviceModel::default(),
            network: NetworkConfig::default(),
            test_input: TestInput::default(),
            predeploy_traces: 500,
            attacks: default_attacks(),
            n_ra: vec![5, 10],
            trials: 100,
            p_threshold: DEFAULT_P_THRESHOLD,
            layer: None,
            template_selection_seed: 0,
            master_seed: 0,
        }
    }
}

pub fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

/// SHA-256 over the canonical JSON of an effective configuration.
pub fn digest<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
