//! Trained network plus normalization: the fully autoregressive predictor.

use crate::error::{Error, Result};
use crate::fem::{Frame, MaterialLEM, SimulationRecord};
use crate::mesh::{build_input_tensor, LoadSpec, MeshTopology, NormalizationStats};
use crate::predict::NepModel;

#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    pub model: NepModel,
    pub stats: NormalizationStats,
}

impl Surrogate {
    pub fn new(model: NepModel, stats: NormalizationStats) -> Result<Self> {
        if stats.dim() != model.config.dim() {
            return Err(Error::Config(
                "normalization and model dimensions differ".into(),
            ));
        }
        Ok(Self { model, stats })
    }

    fn check_topology(&self, topology: &MeshTopology) -> Result<()> {
        if topology.node_dims() != self.model.config.node_dims.as_slice() {
            return Err(Error::InvalidTopology(format!(
                "model expects node grid {:?}, got {:?}",
                self.model.config.node_dims,
                topology.node_dims()
            )));
        }
        Ok(())
    }

    /// Predicts frames `1..=steps` from the initial coordinates alone; no
    /// later state is ever visible to this function.
    pub fn predict(
        &self,
        topology: &MeshTopology,
        load: &LoadSpec,
        initial_coords: &[f64],
        steps: usize,
        record_dt: f64,
    ) -> Result<Vec<Frame>> {
        self.check_topology(topology)?;
        let n = topology.n_nodes();
        let dim = topology.dim();
        let rest = topology.rest_coordinates();
        let ne = topology.n_elements();
        let mut states = self.model.init_state();
        let mut coords = initial_coords.to_vec();
        let mut frames = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = build_input_tensor(&coords, load, topology, t, steps)?;
            let (yn, ye, next) = self
                .model
                .forward(&self.stats.normalize_input(&x), &states)?;
            states = next;
            coords = self.stats.denormalize_coords(yn.data());
            let elems = self.stats.denormalize_elements(ye.data());
            frames.push(Frame {
                time: (t + 1) as f64 * record_dt,
                displacements: coords.iter().zip(rest).map(|(c, r)| c - r).collect(),
                coords: coords.clone(),
                stress: elems[..ne].to_vec(),
                strain: elems[ne..].to_vec(),
            });
            debug_assert_eq!(coords.len(), dim * n);
        }
        Ok(frames)
    }

    /// Predicted counterpart of `sim`, built from its frame 0 only.
    pub fn predict_record(&self, sim: &SimulationRecord) -> Result<SimulationRecord> {
        let initial = &sim.frames[0];
        let mut frames = vec![initial.clone()];
        frames.extend(self.predict(
            &sim.topology,
            &sim.load,
            &initial.coords,
            sim.steps(),
            sim.record_dt,
        )?);
        Ok(SimulationRecord {
            frames,
            ..sim.without_frames()
        })
    }

    /// Predicted record for an arbitrary load starting from rest.
    pub fn predict_load(
        &self,
        topology: &MeshTopology,
        material: &MaterialLEM,
        load: &LoadSpec,
        steps: usize,
        record_dt: f64,
    ) -> Result<SimulationRecord> {
        let initial = SimulationRecord::frame_from_coords(
            topology,
            material,
            0.0,
            topology.rest_coordinates().to_vec(),
        )?;
        let mut frames = vec![initial];
        frames.extend(self.predict(
            topology,
            load,
            topology.rest_coordinates(),
            steps,
            record_dt,
        )?);
        Ok(SimulationRecord {
            topology: topology.clone(),
            material: *material,
            load: *load,
            record_dt,
            frames,
        })
    }
}
