use super::element::{self, QuadPoint};
use super::{stable_dt, MaterialLEM, SimOptions, SimulationRecord};
use crate::error::{Error, Result};
use crate::mesh::{LoadSpec, MeshTopology};

/// Dynamic state. Vectors are channel-major (`[x0..xN, y0..yN]`);
/// `velocities` lives at the half step behind `positions` once stepping has
/// begun.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub accelerations: Vec<f64>,
    pub time: f64,
    started: bool,
}

/// Precomputed element data, lumped masses and DOF constraints for one mesh.
#[derive(Clone, Debug)]
pub struct ExplicitSolver {
    material: MaterialLEM,
    n: usize,
    quads: Vec<[usize; 4]>,
    gauss: Vec<[QuadPoint; 4]>,
    mass: Vec<f64>,
    fixed: Vec<bool>,
    rest: Vec<f64>,
    damping: f64,
}

impl ExplicitSolver {
    /// Solver with every DOF of a constrained node fixed.
    pub fn new(topology: &MeshTopology, material: MaterialLEM, damping: f64) -> Result<Self> {
        let fixed: Vec<bool> = topology
            .constrained_mask()
            .iter()
            .chain(topology.constrained_mask())
            .copied()
            .collect();
        Self::with_fixed_dofs(topology, material, damping, fixed)
    }

    /// Solver with an explicit per-DOF constraint mask (channel-major).
    pub fn with_fixed_dofs(
        topology: &MeshTopology,
        material: MaterialLEM,
        damping: f64,
        fixed: Vec<bool>,
    ) -> Result<Self> {
        material.validate()?;
        if topology.dim() != 2 {
            return Err(Error::InvalidTopology(
                "the solver handles 2D meshes only".into(),
            ));
        }
        let n = topology.n_nodes();
        if fixed.len() != 2 * n {
            return Err(Error::InvalidTopology("constraint mask length".into()));
        }
        if !(damping >= 0.0 && damping.is_finite()) {
            return Err(Error::Config(format!("damping {damping} must be >= 0")));
        }
        let rest = topology.rest_coordinates().to_vec();
        let quads = topology.quads();
        let mut gauss = Vec::with_capacity(quads.len());
        let mut mass = vec![0.0; n];
        for (e, q) in quads.iter().enumerate() {
            let xref = q.map(|a| [rest[a], rest[n + a]]);
            let g = element::gauss_points(&xref)
                .ok_or_else(|| Error::InvalidTopology(format!("element {e} is degenerate")))?;
            let area: f64 = g.iter().map(|p| p.area).sum();
            for &a in q {
                mass[a] += material.density * area * material.thickness / 4.0;
            }
            gauss.push(g);
        }
        Ok(Self {
            material,
            n,
            quads,
            gauss,
            mass,
            fixed,
            rest,
            damping,
        })
    }

    pub fn nodal_mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn initial_state(&self) -> SolverState {
        SolverState {
            positions: self.rest.clone(),
            velocities: vec![0.0; 2 * self.n],
            accelerations: vec![0.0; 2 * self.n],
            time: 0.0,
            started: false,
        }
    }

    fn element_disp(&self, q: &[usize; 4], x: &[f64]) -> [[f64; 2]; 4] {
        let (n, r) = (self.n, &self.rest);
        q.map(|a| [x[a] - r[a], x[n + a] - r[n + a]])
    }

    /// Internal force vector; on inversion returns the offending element.
    pub fn internal_forces(&self, positions: &[f64]) -> std::result::Result<Vec<f64>, String> {
        let mut f = vec![0.0; 2 * self.n];
        for (e, (q, g)) in self.quads.iter().zip(&self.gauss).enumerate() {
            let fe = element::internal_force(g, &self.element_disp(q, positions), &self.material)
                .map_err(|inv| format!("element {e} inverted (det F = {:.3e})", inv.det_f))?;
            for (k, &a) in q.iter().enumerate() {
                f[a] += fe[2 * k];
                f[self.n + a] += fe[2 * k + 1];
            }
        }
        Ok(f)
    }

    pub fn strain_energy(&self, positions: &[f64]) -> f64 {
        self.quads
            .iter()
            .zip(&self.gauss)
            .map(|(q, g)| {
                element::strain_energy(g, &self.element_disp(q, positions), &self.material)
            })
            .sum()
    }

    pub fn kinetic_energy(&self, velocities: &[f64]) -> f64 {
        (0..2 * self.n)
            .map(|d| 0.5 * self.mass[d % self.n] * velocities[d] * velocities[d])
            .sum()
    }

    /// Advances one central-difference step of size `dt` under the given
    /// external nodal forces (evaluated at `state.time`).
    pub fn explicit_step(&self, state: &mut SolverState, external: &[f64], dt: f64) -> Result<()> {
        let fail = |reason: String| Error::Simulation {
            time: state.time,
            reason,
        };
        let fint = self.internal_forces(&state.positions).map_err(fail)?;
        let c = 0.5 * self.damping * dt;
        for d in 0..2 * self.n {
            if self.fixed[d] {
                state.accelerations[d] = 0.0;
                state.velocities[d] = 0.0;
                state.positions[d] = self.rest[d];
                continue;
            }
            let a = (external[d] - fint[d]) / self.mass[d % self.n];
            state.accelerations[d] = a;
            state.velocities[d] = if state.started {
                ((1.0 - c) * state.velocities[d] + dt * a) / (1.0 + c)
            } else {
                state.velocities[d] + 0.5 * dt * a
            };
            state.positions[d] += dt * state.velocities[d];
        }
        state.started = true;
        state.time += dt;
        if let Some(d) = state.positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::Simulation {
                time: state.time,
                reason: format!("non-finite position at dof {d}"),
            });
        }
        Ok(())
    }
}

/// Runs the ramped-load transient and records `opts.steps + 1` frames.
pub fn run_simulation(
    topology: &MeshTopology,
    material: &MaterialLEM,
    load: &LoadSpec,
    opts: &SimOptions,
) -> Result<SimulationRecord> {
    load.validate(topology)?;
    if opts.steps == 0 || !(opts.duration > 0.0) {
        return Err(Error::Config(
            "simulation needs steps >= 1 and duration > 0".into(),
        ));
    }
    let solver = ExplicitSolver::new(topology, *material, opts.damping)?;
    let record_dt = opts.record_dt();
    let substeps = (record_dt / stable_dt(topology, material, opts.safety)?).ceil() as usize;
    let dt = record_dt / substeps as f64;
    let n = topology.n_nodes();
    let dir = load.unit_direction()?;

    let mut state = solver.initial_state();
    let mut frames = Vec::with_capacity(opts.steps + 1);
    frames.push(SimulationRecord::frame_from_coords(
        topology,
        material,
        0.0,
        state.positions.clone(),
    )?);
    let mut external = vec![0.0; 2 * n];
    for frame in 1..=opts.steps {
        for s in 0..substeps {
            let t = ((frame - 1) * substeps + s) as f64 * dt;
            let m = if load.ramp {
                load.max_magnitude * t / opts.duration
            } else {
                load.max_magnitude
            };
            external[load.node_index] = m * dir[0];
            external[n + load.node_index] = m * dir[1];
            state.time = t;
            solver.explicit_step(&mut state, &external, dt)?;
        }
        let time = frame as f64 * record_dt;
        frames.push(SimulationRecord::frame_from_coords(
            topology,
            material,
            time,
            state.positions.clone(),
        )?);
    }
    Ok(SimulationRecord {
        topology: topology.clone(),
        material: *material,
        load: *load,
        record_dt,
        frames,
    })
}
