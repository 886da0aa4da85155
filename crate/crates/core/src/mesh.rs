//! Structured meshes and their encoding into network input/output tensors.
//!
//! Nodes are flattened row-major over the node grid: in 2D node `(i, j)`
//! has index `i * W + j`, in 3D node `(i, j, l)` has index
//! `(i * W + j) * L + l`. Row `i` runs along +y, column `j` along +x and
//! layer `l` along +z, so row 0 is the bottom face.
//!
//! Per-node vector quantities (coordinates, displacements, forces) are
//! stored channel-major: all x components, then all y, then all z.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::SimulationRecord;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    #[default]
    Bottom,
    Top,
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshTopology {
    node_dims: Vec<usize>,
    spacing: f64,
    rest_coordinates: Vec<f64>,
    constrained: Vec<bool>,
}

/// Element grid extents: one fewer than the node grid on every axis.
pub fn element_dims(node_dims: &[usize]) -> Result<Vec<usize>> {
    if !(2..=3).contains(&node_dims.len()) || node_dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidTopology(format!(
            "node dims {node_dims:?} must have 2 or 3 axes, each >= 2"
        )));
    }
    Ok(node_dims.iter().map(|d| d - 1).collect())
}

/// Regular grid with `spacing` between neighbouring nodes and every node of
/// `face` constrained.
pub fn grid_topology(node_dims: &[usize], spacing: f64, face: Face) -> Result<MeshTopology> {
    element_dims(node_dims)?;
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidTopology(format!(
            "spacing {spacing} must be positive"
        )));
    }
    let n: usize = node_dims.iter().product();
    let dim = node_dims.len();
    let mut rest = vec![0.0; dim * n];
    let mut constrained = vec![false; n];
    for node in 0..n {
        let idx = grid_index(node_dims, node);
        // axis order of the grid is (y, x[, z])
        rest[node] = idx[1] as f64 * spacing;
        rest[n + node] = idx[0] as f64 * spacing;
        if dim == 3 {
            rest[2 * n + node] = idx[2] as f64 * spacing;
        }
        constrained[node] = match face {
            Face::Bottom => idx[0] == 0,
            Face::Top => idx[0] == node_dims[0] - 1,
            Face::Left => idx[1] == 0,
            Face::Right => idx[1] == node_dims[1] - 1,
        };
    }
    Ok(MeshTopology {
        node_dims: node_dims.to_vec(),
        spacing,
        rest_coordinates: rest,
        constrained,
    })
}

fn grid_index(node_dims: &[usize], node: usize) -> Vec<usize> {
    let mut idx = vec![0; node_dims.len()];
    let mut rem = node;
    for a in (0..node_dims.len()).rev() {
        idx[a] = rem % node_dims[a];
        rem /= node_dims[a];
    }
    idx
}

impl MeshTopology {
    pub fn node_dims(&self) -> &[usize] {
        &self.node_dims
    }

    pub fn element_dims(&self) -> Vec<usize> {
        self.node_dims.iter().map(|d| d - 1).collect()
    }

    pub fn dim(&self) -> usize {
        self.node_dims.len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn n_nodes(&self) -> usize {
        self.node_dims.iter().product()
    }

    pub fn n_elements(&self) -> usize {
        self.element_dims().iter().product()
    }

    pub fn rest_coordinates(&self) -> &[f64] {
        &self.rest_coordinates
    }

    pub fn constrained_mask(&self) -> &[bool] {
        &self.constrained
    }

    pub fn is_constrained(&self, node: usize) -> bool {
        self.constrained[node]
    }

    /// Replaces the rest coordinates (e.g. to distort a patch).
    pub fn with_rest_coordinates(mut self, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != self.rest_coordinates.len() || coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidTopology(format!(
                "expected {} finite coordinates, got {}",
                self.rest_coordinates.len(),
                coords.len()
            )));
        }
        self.rest_coordinates = coords;
        Ok(self)
    }

    pub fn with_constrained(mut self, constrained: Vec<bool>) -> Result<Self> {
        if constrained.len() != self.n_nodes() {
            return Err(Error::InvalidTopology("constraint mask length".into()));
        }
        self.constrained = constrained;
        Ok(self)
    }

    pub fn grid_index(&self, node: usize) -> Vec<usize> {
        grid_index(&self.node_dims, node)
    }

    pub fn node_at(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.node_dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.grid_index(node)
            .iter()
            .zip(&self.node_dims)
            .any(|(&i, &d)| i == 0 || i == d - 1)
    }

    /// Free boundary nodes of a 2D mesh walked around the perimeter:
    /// up the left edge, along the top, down the right edge, then the
    /// bottom edge; constrained nodes are skipped.
    pub fn free_boundary_nodes(&self) -> Vec<usize> {
        let (h, w) = (self.node_dims[0], self.node_dims[1]);
        let mut walk = Vec::new();
        walk.extend((0..h).map(|i| self.node_at(&[i, 0, 0][..self.dim()])));
        walk.extend((1..w).map(|j| self.node_at(&[h - 1, j, 0][..self.dim()])));
        walk.extend(
            (0..h - 1)
                .rev()
                .map(|i| self.node_at(&[i, w - 1, 0][..self.dim()])),
        );
        walk.extend(
            (1..w - 1)
                .rev()
                .map(|j| self.node_at(&[0, j, 0][..self.dim()])),
        );
        walk.into_iter().filter(|&n| !self.constrained[n]).collect()
    }

    /// Node ids of every 2D quad, counter-clockwise from the lower-left
    /// corner. Element `(i, j)` has index `i * (W - 1) + j`.
    pub fn quads(&self) -> Vec<[usize; 4]> {
        assert_eq!(self.dim(), 2, "quads are only defined for 2D meshes");
        let (h, w) = (self.node_dims[0], self.node_dims[1]);
        let mut out = Vec::with_capacity((h - 1) * (w - 1));
        for i in 0..h - 1 {
            for j in 0..w - 1 {
                let n0 = i * w + j;
                out.push([n0, n0 + 1, n0 + w + 1, n0 + w]);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub node_index: usize,
    /// Direction in the x-y plane, degrees from +x.
    pub angle_deg: f64,
    pub max_magnitude: f64,
    pub ramp: bool,
}

impl LoadSpec {
    pub const ANGLES: [f64; 4] = [0.0, 45.0, 90.0, 135.0];

    pub fn new(node_index: usize, angle_deg: f64, max_magnitude: f64) -> Self {
        Self {
            node_index,
            angle_deg,
            max_magnitude,
            ramp: true,
        }
    }

    pub fn validate(&self, topology: &MeshTopology) -> Result<()> {
        if self.node_index >= topology.n_nodes() {
            return Err(Error::InvalidLoad(format!(
                "node {} outside mesh of {} nodes",
                self.node_index,
                topology.n_nodes()
            )));
        }
        if topology.is_constrained(self.node_index) {
            return Err(Error::InvalidLoad(format!(
                "node {} is constrained",
                self.node_index
            )));
        }
        if !topology.is_boundary(self.node_index) {
            return Err(Error::InvalidLoad(format!(
                "node {} is not on the mesh boundary",
                self.node_index
            )));
        }
        self.unit_direction()?;
        if !(self.max_magnitude >= 0.0 && self.max_magnitude.is_finite()) {
            return Err(Error::InvalidLoad(format!(
                "magnitude {} must be finite and non-negative",
                self.max_magnitude
            )));
        }
        Ok(())
    }

    /// Exact unit vector for the supported angles.
    pub fn unit_direction(&self) -> Result<[f64; 2]> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self.angle_deg {
            a if a == 0.0 => Ok([1.0, 0.0]),
            a if a == 45.0 => Ok([h, h]),
            a if a == 90.0 => Ok([0.0, 1.0]),
            a if a == 135.0 => Ok([-h, h]),
            a => Err(Error::InvalidLoad(format!(
                "angle {a} not in {:?}",
                Self::ANGLES
            ))),
        }
    }

    /// Force magnitude carried by input step `t` of a `total`-step rollout.
    pub fn magnitude_at(&self, t: usize, total: usize) -> f64 {
        if self.ramp {
            self.max_magnitude * (t + 1) as f64 / total as f64
        } else {
            self.max_magnitude
        }
    }

    /// Force vector (length = spatial dimension) at input step `t`.
    pub fn force_at(&self, t: usize, total: usize, dim: usize) -> Result<Vec<f64>> {
        let [ux, uy] = self.unit_direction()?;
        let m = self.magnitude_at(t, total);
        let mut f = vec![0.0; dim];
        f[0] = m * ux;
        f[1] = m * uy;
        Ok(f)
    }
}

/// Network input for one step: `M = 2 * dim + 1` feature maps over the node
/// grid, ordered `(Q_x, Q_y[, Q_z], F_x, F_y[, F_z], B)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputTensor {
    pub tensor: Tensor,
    pub timestep: usize,
}

impl InputTensor {
    pub fn channels_for(dim: usize) -> usize {
        2 * dim + 1
    }
}

/// Builds the (un-normalized) input stack for step `t` from the current
/// node coordinates.
pub fn build_input_tensor(
    coords: &[f64],
    load: &LoadSpec,
    topology: &MeshTopology,
    t: usize,
    total: usize,
) -> Result<InputTensor> {
    let n = topology.n_nodes();
    let dim = topology.dim();
    if coords.len() != dim * n {
        return Err(Error::InvalidTopology(format!(
            "expected {} coordinates, got {}",
            dim * n,
            coords.len()
        )));
    }
    if t >= total {
        return Err(Error::InvalidLoad(format!(
            "timestep {t} outside 0..{total}"
        )));
    }
    load.validate(topology)?;
    let m = InputTensor::channels_for(dim);
    let mut data = vec![0.0; m * n];
    data[..dim * n].copy_from_slice(coords);
    for (axis, f) in load.force_at(t, total, dim)?.into_iter().enumerate() {
        data[(dim + axis) * n + load.node_index] = f;
    }
    for (node, &fixed) in topology.constrained_mask().iter().enumerate() {
        data[2 * dim * n + node] = if fixed { 0.0 } else { 1.0 };
    }
    let mut shape = vec![m];
    shape.extend_from_slice(topology.node_dims());
    Ok(InputTensor {
        tensor: Tensor::from_vec(shape, data)?,
        timestep: t,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, v| {
            Some(match acc {
                None => ChannelRange { min: v, max: v },
                Some(r) => ChannelRange {
                    min: r.min.min(v),
                    max: r.max.max(v),
                },
            })
        })
    }

    fn merge(self, other: Self) -> Self {
        ChannelRange {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    /// Affine map of `[min, max]` onto `[-1, 1]`; degenerate ranges map to 0.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            2.0 * (x - self.min) / (self.max - self.min) - 1.0
        }
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            (y + 1.0) * 0.5 * (self.max - self.min) + self.min
        }
    }
}

/// Training-set value ranges. Node outputs are displaced coordinates and
/// share the coordinate ranges; the constraint flag channel is never scaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub coords: Vec<ChannelRange>,
    /// Shared by every force axis so direction survives scaling.
    pub force: ChannelRange,
    /// Effective stress, then effective strain.
    pub element: Vec<ChannelRange>,
}

impl NormalizationStats {
    pub fn fit(records: &[SimulationRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Stats("empty training set".into()))?;
        let dim = first.topology.dim();
        let n = first.topology.n_nodes();
        let mut coords: Vec<Option<ChannelRange>> = vec![None; dim];
        let mut force = ChannelRange { min: 0.0, max: 0.0 };
        let mut element: Vec<Option<ChannelRange>> = vec![None; 2];
        for rec in records {
            if rec.topology.node_dims() != first.topology.node_dims() {
                return Err(Error::Stats("records have different topologies".into()));
            }
            let total = rec.steps();
            for t in 0..total {
                let f = rec.load.force_at(t, total, dim)?;
                force = force.merge(ChannelRange::of(f).unwrap());
            }
            for frame in &rec.frames {
                for (axis, slot) in coords.iter_mut().enumerate() {
                    let r =
                        ChannelRange::of(frame.coords[axis * n..(axis + 1) * n].iter().copied());
                    *slot = merge_opt(*slot, r);
                }
                element[0] = merge_opt(element[0], ChannelRange::of(frame.stress.iter().copied()));
                element[1] = merge_opt(element[1], ChannelRange::of(frame.strain.iter().copied()));
            }
        }
        Ok(Self {
            coords: coords.into_iter().map(Option::unwrap).collect(),
            force,
            element: element.into_iter().map(Option::unwrap).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Normalized copy of an input stack; the `B` channel passes through.
    pub fn normalize_input(&self, input: &InputTensor) -> Tensor {
        let dim = self.dim();
        let mut t = input.tensor.clone();
        let n = t.len() / t.channels();
        for (c, plane) in t.data_mut().chunks_mut(n).enumerate() {
            let range = if c < dim {
                Some(self.coords[c])
            } else if c < 2 * dim {
                Some(self.force)
            } else {
                None
            };
            if let Some(r) = range {
                plane.iter_mut().for_each(|v| *v = r.normalize(*v));
            }
        }
        t
    }

    pub fn normalize_coords(&self, coords: &[f64]) -> Vec<f64> {
        map_planes(coords, &self.coords, ChannelRange::normalize)
    }

    pub fn denormalize_coords(&self, values: &[f64]) -> Vec<f64> {
        map_planes(values, &self.coords, ChannelRange::denormalize)
    }

    /// `[stress..., strain...]` in physical units to normalized space.
    pub fn normalize_elements(&self, values: &[f64]) -> Vec<f64> {
        map_planes(values, &self.element, ChannelRange::normalize)
    }

    pub fn denormalize_elements(&self, values: &[f64]) -> Vec<f64> {
        map_planes(values, &self.element, ChannelRange::denormalize)
    }
}

fn merge_opt(a: Option<ChannelRange>, b: Option<ChannelRange>) -> Option<ChannelRange> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.merge(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn map_planes(
    values: &[f64],
    ranges: &[ChannelRange],
    f: fn(&ChannelRange, f64) -> f64,
) -> Vec<f64> {
    let n = values.len() / ranges.len();
    values
        .chunks(n)
        .zip(ranges)
        .flat_map(|(plane, r)| plane.iter().map(move |&v| f(r, v)))
        .collect()
}
