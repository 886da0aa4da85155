use nalgebra::{DMatrix, DVector};

use super::{element, MaterialLEM};
use crate::error::{Error, Result};
use crate::mesh::{LoadSpec, MeshTopology};

/// Global small-strain stiffness, channel-major DOF order.
pub fn assemble_stiffness(topology: &MeshTopology, material: &MaterialLEM) -> Result<DMatrix<f64>> {
    material.validate()?;
    let n = topology.n_nodes();
    let rest = topology.rest_coordinates();
    let mut k = DMatrix::zeros(2 * n, 2 * n);
    for (e, q) in topology.quads().iter().enumerate() {
        let xref = q.map(|a| [rest[a], rest[n + a]]);
        let g = element::gauss_points(&xref)
            .ok_or_else(|| Error::InvalidTopology(format!("element {e} is degenerate")))?;
        let ke = element::linear_stiffness(&g, material);
        let dofs: Vec<usize> = q.iter().flat_map(|&a| [a, n + a]).collect();
        for (r, &gr) in dofs.iter().enumerate() {
            for (c, &gc) in dofs.iter().enumerate() {
                k[(gr, gc)] += ke[r][c];
            }
        }
    }
    Ok(k)
}

/// Solves `K u = f` with zero displacement on every `fixed` DOF.
pub fn solve_linear(
    topology: &MeshTopology,
    material: &MaterialLEM,
    fixed: &[bool],
    force: &[f64],
) -> Result<Vec<f64>> {
    let k = assemble_stiffness(topology, material)?;
    let ndof = k.nrows();
    if fixed.len() != ndof || force.len() != ndof {
        return Err(Error::Solve(format!("expected {ndof} DOF entries")));
    }
    let free: Vec<usize> = (0..ndof).filter(|&d| !fixed[d]).collect();
    let kff = DMatrix::from_fn(free.len(), free.len(), |r, c| k[(free[r], free[c])]);
    let ff = DVector::from_iterator(free.len(), free.iter().map(|&d| force[d]));
    let chol = kff.cholesky().ok_or_else(|| {
        Error::Solve("stiffness is singular; the mesh is under-constrained".into())
    })?;
    let uf = chol.solve(&ff);
    let mut u = vec![0.0; ndof];
    for (i, &d) in free.iter().enumerate() {
        u[d] = uf[i];
    }
    Ok(u)
}

/// Linear displacement under the full load `max_magnitude`.
pub fn static_solve(
    topology: &MeshTopology,
    material: &MaterialLEM,
    load: &LoadSpec,
) -> Result<Vec<f64>> {
    load.validate(topology)?;
    let n = topology.n_nodes();
    let fixed: Vec<bool> = topology
        .constrained_mask()
        .iter()
        .chain(topology.constrained_mask())
        .copied()
        .collect();
    let dir = load.unit_direction()?;
    let mut f = vec![0.0; 2 * n];
    f[load.node_index] = load.max_magnitude * dir[0];
    f[n + load.node_index] = load.max_magnitude * dir[1];
    solve_linear(topology, material, &fixed, &f)
}
