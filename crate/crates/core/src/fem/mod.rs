//! Ground-truth transient simulations: explicit central-difference dynamics
//! over plane-stress quadrilaterals.

pub mod element;
mod solver;
mod static_solve;

pub use solver::{run_simulation, ExplicitSolver, SolverState};
pub use static_solve::{assemble_stiffness, solve_linear, static_solve};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{LoadSpec, MeshTopology};

/// Out-of-plane thickness used when none is configured, in metres.
pub const DEFAULT_THICKNESS: f64 = 30.0;

/// Linear-elastic material plus the membrane thickness it is used with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialLEM {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    #[serde(default = "default_thickness")]
    pub thickness: f64,
}

fn default_thickness() -> f64 {
    DEFAULT_THICKNESS
}

impl Default for MaterialLEM {
    fn default() -> Self {
        Self {
            young_modulus: 5e6,
            poisson_ratio: 0.495,
            density: 1200.0,
            thickness: DEFAULT_THICKNESS,
        }
    }
}

impl MaterialLEM {
    pub fn validate(&self) -> Result<()> {
        let ok = self.young_modulus > 0.0
            && (0.0..0.5).contains(&self.poisson_ratio)
            && self.density > 0.0
            && self.thickness > 0.0
            && [self.young_modulus, self.density, self.thickness]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid material {self:?}")))
        }
    }

    /// Dilatational wave speed `sqrt(E(1-nu)/((1+nu)(1-2nu)rho))`.
    pub fn wave_speed(&self) -> f64 {
        let (e, nu, rho) = (self.young_modulus, self.poisson_ratio, self.density);
        (e * (1.0 - nu) / ((1.0 + nu) * (1.0 - 2.0 * nu) * rho)).sqrt()
    }
}

/// Run-level integration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    /// Simulated time in seconds.
    pub duration: f64,
    /// Number of recorded steps after the initial frame.
    pub steps: usize,
    /// Fraction of the critical time step actually used.
    pub safety: f64,
    /// Mass-proportional damping coefficient, 1/s.
    pub damping: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            duration: 1.0,
            steps: 200,
            safety: 0.9,
            damping: 5.0,
        }
    }
}

impl SimOptions {
    pub fn record_dt(&self) -> f64 {
        self.duration / self.steps as f64
    }
}

/// Shortest element edge in the reference configuration.
pub fn min_edge(topology: &MeshTopology) -> f64 {
    let x = topology.rest_coordinates();
    let n = topology.n_nodes();
    let mut best = f64::INFINITY;
    for q in topology.quads() {
        for k in 0..4 {
            let (a, b) = (q[k], q[(k + 1) % 4]);
            let d = (x[a] - x[b]).hypot(x[n + a] - x[n + b]);
            best = best.min(d);
        }
    }
    best
}

/// Critical explicit time step scaled by `safety`.
pub fn stable_dt(topology: &MeshTopology, material: &MaterialLEM, safety: f64) -> Result<f64> {
    material.validate()?;
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::Config(format!(
            "safety factor {safety} outside (0, 1]"
        )));
    }
    if topology.dim() != 2 {
        return Err(Error::InvalidTopology(
            "the solver handles 2D meshes only".into(),
        ));
    }
    Ok(safety * min_edge(topology) / material.wave_speed())
}

/// Von Mises equivalent stress.
pub fn effective_stress(sxx: f64, syy: f64, szz: f64, sxy: f64, syz: f64, szx: f64) -> f64 {
    let d = (sxx - syy).powi(2) + (syy - szz).powi(2) + (szz - sxx).powi(2);
    ((d + 6.0 * (sxy * sxy + syz * syz + szx * szx)) / 2.0).sqrt()
}

/// Von Mises equivalent strain (the stress form scaled by 2/3).
pub fn effective_strain(exx: f64, eyy: f64, ezz: f64, exy: f64, eyz: f64, ezx: f64) -> f64 {
    2.0 / 3.0 * effective_stress(exx, eyy, ezz, exy, eyz, ezx)
}

/// One recorded state.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub time: f64,
    /// Current node coordinates, channel-major.
    pub coords: Vec<f64>,
    pub displacements: Vec<f64>,
    /// Effective stress per element, Pa.
    pub stress: Vec<f64>,
    /// Effective strain per element.
    pub strain: Vec<f64>,
}

/// A full simulation: frame 0 is the undeformed state, frames `1..=T` are
/// recorded every `record_dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationRecord {
    pub topology: MeshTopology,
    pub material: MaterialLEM,
    pub load: LoadSpec,
    pub record_dt: f64,
    pub frames: Vec<Frame>,
}

impl SimulationRecord {
    /// Number of prediction steps `T`.
    pub fn steps(&self) -> usize {
        self.frames.len() - 1
    }

    /// Same metadata with no frames.
    pub fn without_frames(&self) -> Self {
        Self {
            topology: self.topology.clone(),
            material: self.material,
            load: self.load,
            record_dt: self.record_dt,
            frames: Vec::new(),
        }
    }

    pub fn frame_from_coords(
        topology: &MeshTopology,
        material: &MaterialLEM,
        time: f64,
        coords: Vec<f64>,
    ) -> Result<Frame> {
        let displacements = coords
            .iter()
            .zip(topology.rest_coordinates())
            .map(|(c, r)| c - r)
            .collect();
        let (stress, strain) = element_fields(topology, material, &coords)
            .map_err(|reason| Error::Simulation { time, reason })?;
        Ok(Frame {
            time,
            coords,
            displacements,
            stress,
            strain,
        })
    }
}

/// Effective stress and strain at every element centroid for the given
/// current coordinates.
pub fn element_fields(
    topology: &MeshTopology,
    material: &MaterialLEM,
    coords: &[f64],
) -> std::result::Result<(Vec<f64>, Vec<f64>), String> {
    let n = topology.n_nodes();
    let rest = topology.rest_coordinates();
    let quads = topology.quads();
    let mut stress = Vec::with_capacity(quads.len());
    let mut strain = Vec::with_capacity(quads.len());
    for (e, q) in quads.iter().enumerate() {
        let xref = q.map(|a| [rest[a], rest[n + a]]);
        let disp = q.map(|a| [coords[a] - rest[a], coords[n + a] - rest[n + a]]);
        let cp =
            element::centroid_point(&xref).ok_or_else(|| format!("element {e} is degenerate"))?;
        let f = element::deformation_gradient(&cp, &disp);
        if element::det2(&f) <= 0.0 {
            return Err(format!("element {e} inverted"));
        }
        let g = element::green_strain(&f);
        let s = element::cauchy_stress(&f, &element::pk2_stress(&g, material));
        stress.push(effective_stress(s[0], s[1], 0.0, s[2], 0.0, 0.0));
        strain.push(effective_strain(g[0], g[1], 0.0, g[2], 0.0, 0.0));
    }
    Ok((stress, strain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{grid_topology, Face};

    #[test]
    fn von_mises_examples() {
        assert!((effective_stress(3.0, 0.0, 0.0, 0.0, 0.0, 0.0) - 3.0).abs() < 1e-15);
        assert!((effective_stress(0.0, 0.0, 0.0, 2.0, 0.0, 0.0) - 2.0 * 3f64.sqrt()).abs() < 1e-14);
        assert_eq!(effective_stress(4.0, 4.0, 4.0, 0.0, 0.0, 0.0), 0.0);
        assert!((effective_strain(0.1, -0.05, -0.05, 0.0, 0.0, 0.0) - 0.1).abs() < 1e-15);
        assert_eq!(effective_strain(0.2, 0.2, 0.2, 0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn stable_dt_scaling() {
        let m = MaterialLEM::default();
        let t1 = grid_topology(&[9, 9], 0.125, Face::Bottom).unwrap();
        let t2 = grid_topology(&[9, 9], 0.25, Face::Bottom).unwrap();
        let d1 = stable_dt(&t1, &m, 0.9).unwrap();
        assert!((stable_dt(&t2, &m, 0.9).unwrap() / d1 - 2.0).abs() < 1e-12);
        let stiff = MaterialLEM {
            young_modulus: 4.0 * m.young_modulus,
            ..m
        };
        assert!((d1 / stable_dt(&t1, &stiff, 0.9).unwrap() - 2.0).abs() < 1e-12);
        assert!(stable_dt(&t1, &m, 0.0).is_err());
    }

    #[test]
    fn material_validation() {
        assert!(MaterialLEM::default().validate().is_ok());
        let bad = MaterialLEM {
            poisson_ratio: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
