//! Structured meshes of axis-aligned boxes and nodal Q1 fields living on them.
//!
//! Nodes are numbered lexicographically with the x index running fastest,
//! then y, then z. Elements are numbered the same way over cells. The local
//! vertex ordering of an element is fixed:
//!
//! ```text
//!   2D (counterclockwise from the lower-left corner)
//!
//!     3 ---- 2
//!     |      |
//!     0 ---- 1
//!
//!   3D: the bottom face (z = lo) in the 2D order, then the top face
//!       (z = hi) in the same order, i.e. local vertices 4..8 sit above 0..4.
//! ```
//!
//! This is also the VTK_QUAD / VTK_HEXAHEDRON ordering, so connectivity can
//! be written out unchanged.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Offsets of the local vertices on the unit reference square.
pub const LOCAL_VERTICES_2D: [[usize; 3]; 4] = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]];

/// Offsets of the local vertices on the unit reference cube.
pub const LOCAL_VERTICES_3D: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Reference-cell offsets of the local vertices for a given dimension.
pub fn local_vertices(dim: usize) -> &'static [[usize; 3]] {
    match dim {
        2 => &LOCAL_VERTICES_2D,
        _ => &LOCAL_VERTICES_3D,
    }
}

/// Geometry of one axis-aligned element: lower corner and edge lengths.
///
/// Unused trailing axes (z in 2D) carry `origin = 0`, `size = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub dim: usize,
    pub origin: [f64; 3],
    pub size: [f64; 3],
}

impl ElementGeometry {
    pub fn new(dim: usize, origin: &[f64], size: &[f64]) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Assembly(format!("element dimension {dim} is not 2 or 3")));
        }
        if origin.len() != dim || size.len() != dim {
            return Err(Error::Assembly(format!(
                "element geometry needs {dim} coordinates, got origin {} / size {}",
                origin.len(),
                size.len()
            )));
        }
        let mut g = ElementGeometry {
            dim,
            origin: [0.0; 3],
            size: [1.0; 3],
        };
        for axis in 0..dim {
            if !(size[axis].is_finite() && size[axis] > 0.0) || !origin[axis].is_finite() {
                return Err(Error::Assembly(format!(
                    "degenerate element: edge {axis} has length {}",
                    size[axis]
                )));
            }
            g.origin[axis] = origin[axis];
            g.size[axis] = size[axis];
        }
        Ok(g)
    }

    /// Unit square (2D) or unit cube (3D) at the origin.
    pub fn unit(dim: usize) -> Self {
        ElementGeometry {
            dim,
            origin: [0.0; 3],
            size: [1.0; 3],
        }
    }

    pub fn volume(&self) -> f64 {
        self.size[..self.dim].iter().product()
    }

    pub fn nodes(&self) -> usize {
        1 << self.dim
    }
}

/// Axis-aligned box mesh with uniform cells along every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    dim: usize,
    extents: Vec<[f64; 2]>,
    cells: Vec<usize>,
    coords: Vec<f64>,
    connectivity: Vec<usize>,
}

/// Uniformly refine a box with `base_cells` cells per axis `refinements` times.
///
/// Every refinement halves each cell along every axis, so the final mesh has
/// `base_cells[i] * 2^refinements` cells along axis `i`.
pub fn build_structured_mesh(
    dim: usize,
    extents: &[[f64; 2]],
    base_cells: &[usize],
    refinements: u32,
) -> Result<StructuredMesh> {
    if dim != 2 && dim != 3 {
        return Err(Error::config("dim", format!("must be 2 or 3, got {dim}")));
    }
    if extents.len() != dim {
        return Err(Error::config(
            "domain",
            format!("expected {dim} intervals, got {}", extents.len()),
        ));
    }
    if base_cells.len() != dim {
        return Err(Error::config(
            "base_cells",
            format!("expected {dim} values, got {}", base_cells.len()),
        ));
    }
    for (axis, &[lo, hi]) in extents.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::config(
                "domain",
                format!("interval [{lo}, {hi}] on axis {axis} is empty"),
            ));
        }
    }
    if base_cells.contains(&0) {
        return Err(Error::config("base_cells", "every axis needs at least one cell"));
    }
    let factor = 1usize
        .checked_shl(refinements)
        .filter(|_| refinements < 24)
        .ok_or_else(|| Error::config("refinements", format!("{refinements} is too large")))?;
    let cells: Vec<usize> = base_cells.iter().map(|&n| n * factor).collect();

    let mut nodes_per_axis = [1usize; 3];
    for axis in 0..dim {
        nodes_per_axis[axis] = cells[axis] + 1;
    }
    let node_count: usize = nodes_per_axis.iter().product();

    let mut coords = Vec::with_capacity(node_count * dim);
    for k in 0..nodes_per_axis[2] {
        for j in 0..nodes_per_axis[1] {
            for i in 0..nodes_per_axis[0] {
                let idx = [i, j, k];
                for axis in 0..dim {
                    let [lo, hi] = extents[axis];
                    let s = idx[axis] as f64 / cells[axis] as f64;
                    coords.push(lo + (hi - lo) * s);
                }
            }
        }
    }

    let mut cells_3 = [1usize; 3];
    cells_3[..dim].copy_from_slice(&cells);
    let npe = 1 << dim;
    let element_count: usize = cells.iter().product();
    let mut connectivity = Vec::with_capacity(element_count * npe);
    let node_index = |i: usize, j: usize, k: usize| i + nodes_per_axis[0] * (j + nodes_per_axis[1] * k);
    for ek in 0..cells_3[2] {
        for ej in 0..cells_3[1] {
            for ei in 0..cells_3[0] {
                for off in local_vertices(dim) {
                    connectivity.push(node_index(ei + off[0], ej + off[1], ek + off[2]));
                }
            }
        }
    }

    Ok(StructuredMesh {
        dim,
        extents: extents.to_vec(),
        cells,
        coords,
        connectivity,
    })
}

impl StructuredMesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[[f64; 2]] {
        &self.extents
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells
    }

    pub fn node_count(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn element_count(&self) -> usize {
        self.connectivity.len() / self.nodes_per_element()
    }

    pub fn nodes_per_element(&self) -> usize {
        1 << self.dim
    }

    /// Coordinates of node `i` (length `dim`).
    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Global node indices of element `e` in the local vertex order.
    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.nodes_per_element();
        &self.connectivity[e * npe..(e + 1) * npe]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.connectivity.chunks_exact(self.nodes_per_element())
    }

    /// Edge lengths shared by every cell, padded with 1 beyond `dim`.
    pub fn cell_size(&self) -> [f64; 3] {
        let mut size = [1.0; 3];
        for axis in 0..self.dim {
            let [lo, hi] = self.extents[axis];
            size[axis] = (hi - lo) / self.cells[axis] as f64;
        }
        size
    }

    pub fn element_geometry(&self, e: usize) -> ElementGeometry {
        let first = self.node(self.element(e)[0]);
        let mut origin = [0.0; 3];
        origin[..self.dim].copy_from_slice(first);
        ElementGeometry {
            dim: self.dim,
            origin,
            size: self.cell_size(),
        }
    }

    /// Measure of the whole domain.
    pub fn volume(&self) -> f64 {
        self.extents.iter().map(|[lo, hi]| hi - lo).product()
    }
}

/// Nodal coefficient vector of a Q1 function on a mesh.
#[derive(Debug, Clone)]
pub struct FeField {
    mesh: Arc<StructuredMesh>,
    coeffs: Vec<f64>,
}

impl FeField {
    pub fn new(mesh: Arc<StructuredMesh>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != mesh.node_count() {
            return Err(Error::Input(format!(
                "field has {} coefficients but the mesh has {} nodes",
                coeffs.len(),
                mesh.node_count()
            )));
        }
        Ok(FeField { mesh, coeffs })
    }

    pub fn constant(mesh: Arc<StructuredMesh>, value: f64) -> Self {
        let coeffs = vec![value; mesh.node_count()];
        FeField { mesh, coeffs }
    }

    pub fn mesh(&self) -> &Arc<StructuredMesh> {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn max(&self) -> f64 {
        self.coeffs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.coeffs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    pub fn same_mesh(&self, other: &FeField) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }

    pub(crate) fn check_same_mesh(&self, other: &FeField) -> Result<()> {
        if self.same_mesh(other) {
            Ok(())
        } else {
            Err(Error::Input("fields live on different meshes".into()))
        }
    }
}

/// Lagrange interpolation: evaluate `f` at every node.
pub fn interpolate<F>(f: F, mesh: &Arc<StructuredMesh>) -> Result<FeField>
where
    F: Fn(&[f64]) -> f64,
{
    let mut coeffs = Vec::with_capacity(mesh.node_count());
    for node in 0..mesh.node_count() {
        let value = f(mesh.node(node));
        if !value.is_finite() {
            return Err(Error::Interpolation { node, value });
        }
        coeffs.push(value);
    }
    Ok(FeField {
        mesh: Arc::clone(mesh),
        coeffs,
    })
}
