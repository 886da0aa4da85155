//! Run configuration: one TOML file drives generation, training and evaluation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{run_simulation, MaterialLEM, SimOptions, SimulationRecord};
use crate::mesh::{grid_topology, Face, LoadSpec, MeshTopology};
use crate::nelo::TrainConfig;
use crate::predict::NepConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub node_dims: Vec<usize>,
    pub spacing: f64,
    pub constrained: Face,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            node_dims: vec![9, 9],
            spacing: 0.125,
            constrained: Face::Bottom,
        }
    }
}

/// Load cases: every angle × magnitude on `nodes` evenly spaced free
/// boundary nodes (0 = all of them), or `random` seeded draws from that grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadGrid {
    pub angles: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<usize>,
}

impl Default for LoadGrid {
    fn default() -> Self {
        Self {
            angles: LoadSpec::ANGLES.to_vec(),
            magnitudes: vec![5e5, 1e6, 2e6],
            nodes: 8,
            random: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub kernel: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Full,
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Training fraction of the dataset.
    pub split_ratio: f64,
    /// Simulations used for the timing comparison.
    pub timing_sims: usize,
    pub mesh: MeshConfig,
    pub material: MaterialLEM,
    pub sim: SimOptions,
    pub loads: LoadGrid,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self {
                split_ratio: 0.8,
                timing_sims: 10,
                mesh: MeshConfig::default(),
                material: MaterialLEM::default(),
                sim: SimOptions {
                    steps: 50,
                    ..SimOptions::default()
                },
                loads: LoadGrid::default(),
                model: ModelConfig {
                    hidden: vec![16, 32],
                    kernel: 3,
                },
                train: TrainConfig {
                    k: 10,
                    epochs: 120,
                    batch_size: 8,
                    lr_base: 1e-2,
                    ..TrainConfig::default()
                },
            },
            Profile::Full => Self {
                split_ratio: 0.8,
                timing_sims: 10,
                mesh: MeshConfig::default(),
                material: MaterialLEM::default(),
                sim: SimOptions::default(),
                loads: LoadGrid {
                    nodes: 0,
                    random: Some(450),
                    ..LoadGrid::default()
                },
                model: ModelConfig {
                    hidden: vec![64, 128, 256],
                    kernel: 3,
                },
                train: TrainConfig::default(),
            },
        }
    }

    /// Parses TOML; unknown keys are rejected and missing sections are an error.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split_ratio {} must lie in (0, 1)",
                self.split_ratio
            )));
        }
        if self.sim.steps == 0
            || !(self.sim.duration > 0.0)
            || !(self.sim.safety > 0.0 && self.sim.safety <= 1.0)
        {
            return Err(Error::Config(
                "sim needs steps >= 1, duration > 0 and safety in (0, 1]".into(),
            ));
        }
        if self.loads.angles.is_empty() || self.loads.magnitudes.is_empty() {
            return Err(Error::Config(
                "loads need at least one angle and magnitude".into(),
            ));
        }
        self.material.validate()?;
        self.architecture().validate()?;
        self.train.validate()?;
        self.topology().map(|_| ())
    }

    pub fn topology(&self) -> Result<MeshTopology> {
        grid_topology(
            &self.mesh.node_dims,
            self.mesh.spacing,
            self.mesh.constrained,
        )
    }

    pub fn architecture(&self) -> NepConfig {
        NepConfig {
            node_dims: self.mesh.node_dims.clone(),
            hidden: self.model.hidden.clone(),
            kernel: self.model.kernel,
        }
    }

    /// Load nodes actually used by the grid.
    pub fn load_nodes(&self) -> Result<Vec<usize>> {
        let free = self.topology()?.free_boundary_nodes();
        let want = self.loads.nodes;
        if want == 0 || want >= free.len() {
            return Ok(free);
        }
        Ok((0..want).map(|i| free[i * free.len() / want]).collect())
    }

    /// Every load case, ordered angle-major, then magnitude, then node.
    pub fn load_cases(&self, seed: u64) -> Result<Vec<LoadSpec>> {
        let nodes = self.load_nodes()?;
        let mut grid = Vec::new();
        for &a in &self.loads.angles {
            for &m in &self.loads.magnitudes {
                for &n in &nodes {
                    grid.push(LoadSpec::new(n, a, m));
                }
            }
        }
        let topo = self.topology()?;
        for l in &grid {
            l.validate(&topo)?;
        }
        Ok(match self.loads.random {
            None => grid,
            Some(count) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..count)
                    .map(|_| grid[rng.gen_range(0..grid.len())])
                    .collect()
            }
        })
    }

    /// Runs the oracle for every load case, in parallel.
    pub fn generate(&self, seed: u64) -> Result<Vec<SimulationRecord>> {
        let topo = self.topology()?;
        self.load_cases(seed)?
            .par_iter()
            .map(|load| run_simulation(&topo, &self.material, load, &self.sim))
            .collect()
    }
}
