//! Q1 shape functions, tensor-product Gauss quadrature, element integrals and
//! global assembly.
//!
//! Element matrices use the convention `A[j][i]`: row `j` is the test
//! function, column `i` the trial function. For the symmetric forms this is
//! irrelevant; for the haptotaxis form
//!
//! ```text
//!   B(c)[j][i] = ∫ φ_i ∇c_h · ∇φ_j
//! ```
//!
//! it fixes which index is transposed.
//!
//! Every coefficient-dependent form is linear in the nodal coefficients, so an
//! [`ElementKernel`] precomputes the reference tensors
//!
//! ```text
//!   triple[k][i][j] = ∫ φ_k φ_i φ_j
//!   hapto[k][j][i]  = ∫ φ_i ∇φ_k · ∇φ_j
//! ```
//!
//! once per element shape and contracts them with the local coefficients.
//! The 2-point Gauss rule integrates each of these (per-axis degree ≤ 3)
//! exactly on axis-aligned boxes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linsolve::{CsrMatrix, CsrPattern};
use crate::mesh::{local_vertices, ElementGeometry, StructuredMesh};

/// Tensor-product Gauss–Legendre rule on the unit reference cell `[0,1]^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `points_per_axis` ∈ 1..=3.
    pub fn gauss(dim: usize, points_per_axis: usize) -> Result<Self> {
        let (nodes, weights): (Vec<f64>, Vec<f64>) = match points_per_axis {
            1 => (vec![0.5], vec![1.0]),
            2 => {
                let d = 0.5 / 3f64.sqrt();
                (vec![0.5 - d, 0.5 + d], vec![0.5, 0.5])
            }
            3 => {
                let d = 0.5 * (0.6f64).sqrt();
                (vec![0.5 - d, 0.5, 0.5 + d], vec![5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0])
            }
            n => return Err(Error::Assembly(format!("no Gauss rule with {n} points per axis"))),
        };
        let m = nodes.len();
        let count = m.pow(dim as u32);
        let mut rule = QuadratureRule {
            dim,
            points: Vec::with_capacity(count),
            weights: Vec::with_capacity(count),
        };
        for flat in 0..count {
            let mut p = [0.0; 3];
            let mut w = 1.0;
            let mut rest = flat;
            for coord in p.iter_mut().take(dim) {
                let idx = rest % m;
                rest /= m;
                *coord = nodes[idx];
                w *= weights[idx];
            }
            rule.points.push(p);
            rule.weights.push(w);
        }
        Ok(rule)
    }

    /// The rule used throughout: 2 points per axis.
    pub fn default_for(dim: usize) -> Self {
        Self::gauss(dim, 2).expect("2-point rule exists")
    }
}

/// Values of the Q1 basis at a reference point.
pub fn shape_values(dim: usize, xi: &[f64; 3], out: &mut [f64]) {
    for (a, off) in local_vertices(dim).iter().enumerate() {
        let mut v = 1.0;
        for axis in 0..dim {
            v *= if off[axis] == 1 { xi[axis] } else { 1.0 - xi[axis] };
        }
        out[a] = v;
    }
}

/// Physical gradients of the Q1 basis at a reference point of an element
/// with edge lengths `size`.
pub fn shape_gradients(dim: usize, xi: &[f64; 3], size: &[f64; 3], out: &mut [[f64; 3]]) {
    for (a, off) in local_vertices(dim).iter().enumerate() {
        for d in 0..dim {
            let mut g = if off[d] == 1 { 1.0 } else { -1.0 } / size[d];
            for axis in 0..dim {
                if axis != d {
                    g *= if off[axis] == 1 { xi[axis] } else { 1.0 - xi[axis] };
                }
            }
            out[a][d] = g;
        }
    }
}

/// Dense `n × n` element matrix, row-major, row = test index.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrix {
    n: usize,
    values: Vec<f64>,
}

impl ElementMatrix {
    pub fn zeros(n: usize) -> Self {
        ElementMatrix {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        ElementMatrix {
            n,
            values: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs_diff(&self, other: &ElementMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn scaled(&self, factor: f64) -> ElementMatrix {
        ElementMatrix {
            n: self.n,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Precomputed reference integrals for one element shape.
#[derive(Debug, Clone)]
pub struct ElementKernel {
    dim: usize,
    n: usize,
    mass: Vec<f64>,
    stiffness: Vec<f64>,
    triple: Vec<f64>,
    hapto: Vec<f64>,
}

impl ElementKernel {
    pub fn new(geom: &ElementGeometry) -> Result<Self> {
        // re-validate: the struct fields are public
        ElementGeometry::new(geom.dim, &geom.origin[..geom.dim], &geom.size[..geom.dim])?;
        let dim = geom.dim;
        let n = geom.nodes();
        let rule = QuadratureRule::default_for(dim);
        let jac = geom.volume();

        let mut mass = vec![0.0; n * n];
        let mut stiffness = vec![0.0; n * n];
        let mut triple = vec![0.0; n * n * n];
        let mut hapto = vec![0.0; n * n * n];
        let mut phi = [0.0; 8];
        let mut grad = [[0.0; 3]; 8];
        for (xi, &w) in rule.points.iter().zip(&rule.weights) {
            let wq = w * jac;
            shape_values(dim, xi, &mut phi);
            shape_gradients(dim, xi, &geom.size, &mut grad);
            for i in 0..n {
                for j in 0..n {
                    mass[i * n + j] += wq * phi[i] * phi[j];
                    let gg: f64 = (0..dim).map(|d| grad[i][d] * grad[j][d]).sum();
                    stiffness[i * n + j] += wq * gg;
                }
            }
            for k in 0..n {
                for i in 0..n {
                    for j in i..n {
                        // canonical ordering keeps the tensor bitwise symmetric
                        let mut idx = [k, i, j];
                        idx.sort_unstable();
                        if idx == [k, i, j] {
                            triple[(k * n + i) * n + j] += wq * phi[k] * phi[i] * phi[j];
                        }
                    }
                }
                for j in 0..n {
                    let gkj: f64 = (0..dim).map(|d| grad[k][d] * grad[j][d]).sum();
                    for i in 0..n {
                        hapto[(k * n + j) * n + i] += wq * phi[i] * gkj;
                    }
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut idx = [k, i, j];
                    idx.sort_unstable();
                    triple[(k * n + i) * n + j] = triple[(idx[0] * n + idx[1]) * n + idx[2]];
                }
            }
        }
        Ok(ElementKernel {
            dim,
            n,
            mass,
            stiffness,
            triple,
            hapto,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn stiffness(&self) -> &[f64] {
        &self.stiffness
    }

    /// `out[j][i] = ∫ w_h φ_i φ_j`
    pub fn weighted_mass_into(&self, w: &[f64], out: &mut [f64]) {
        let nn = self.n * self.n;
        out[..nn].iter_mut().for_each(|v| *v = 0.0);
        for (k, &wk) in w.iter().enumerate().take(self.n) {
            if wk != 0.0 {
                let t = &self.triple[k * nn..(k + 1) * nn];
                for (o, tv) in out.iter_mut().zip(t) {
                    *o += wk * tv;
                }
            }
        }
    }

    /// `out[j][i] = ∫ φ_i ∇c_h · ∇φ_j`
    pub fn haptotaxis_into(&self, c: &[f64], out: &mut [f64]) {
        let nn = self.n * self.n;
        out[..nn].iter_mut().for_each(|v| *v = 0.0);
        for (k, &ck) in c.iter().enumerate().take(self.n) {
            if ck != 0.0 {
                let t = &self.hapto[k * nn..(k + 1) * nn];
                for (o, tv) in out.iter_mut().zip(t) {
                    *o += ck * tv;
                }
            }
        }
    }

    /// `out[j] = ∫ a_h b_h φ_j`
    pub fn load_product_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let n = self.n;
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        for k in 0..n {
            for i in 0..n {
                let ab = a[k] * b[i];
                if ab != 0.0 {
                    let t = &self.triple[(k * n + i) * n..(k * n + i + 1) * n];
                    for (o, tv) in out.iter_mut().zip(t) {
                        *o += ab * tv;
                    }
                }
            }
        }
    }
}

fn check_local(name: &str, values: &[f64], n: usize) -> Result<()> {
    if values.len() != n {
        return Err(Error::Assembly(format!(
            "{name}: expected {n} local values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Assembly(format!("{name}: non-finite coefficient")));
    }
    Ok(())
}

/// `∫ φ_i φ_j`
pub fn element_mass(geom: &ElementGeometry) -> Result<ElementMatrix> {
    let k = ElementKernel::new(geom)?;
    Ok(ElementMatrix {
        n: k.n,
        values: k.mass.clone(),
    })
}

/// `∫ ∇φ_i · ∇φ_j`
pub fn element_stiffness(geom: &ElementGeometry) -> Result<ElementMatrix> {
    let k = ElementKernel::new(geom)?;
    Ok(ElementMatrix {
        n: k.n,
        values: k.stiffness.clone(),
    })
}

/// `∫ w_h φ_i φ_j` for the Q1 interpolant `w_h` of the local values `w`.
pub fn element_weighted_mass(geom: &ElementGeometry, w: &[f64]) -> Result<ElementMatrix> {
    let k = ElementKernel::new(geom)?;
    check_local("weighted mass", w, k.n)?;
    let mut m = ElementMatrix::zeros(k.n);
    k.weighted_mass_into(w, &mut m.values);
    Ok(m)
}

/// `B[j][i] = ∫ φ_i ∇c_h · ∇φ_j`
pub fn element_haptotaxis(geom: &ElementGeometry, c: &[f64]) -> Result<ElementMatrix> {
    let k = ElementKernel::new(geom)?;
    check_local("haptotaxis", c, k.n)?;
    let mut m = ElementMatrix::zeros(k.n);
    k.haptotaxis_into(c, &mut m.values);
    Ok(m)
}

/// `∫ a_h b_h φ_j`
pub fn element_load_product(geom: &ElementGeometry, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let k = ElementKernel::new(geom)?;
    check_local("load product", a, k.n)?;
    check_local("load product", b, k.n)?;
    let mut out = vec![0.0; k.n];
    k.load_product_into(a, b, &mut out);
    Ok(out)
}

/// Bilinear forms the scheme assembles.
#[derive(Debug, Clone, Copy)]
pub enum Form<'a> {
    Mass,
    Stiffness,
    /// `∫ w_h φ_i φ_j`
    WeightedMass(&'a [f64]),
    /// `∫ φ_i ∇c_h · ∇φ_j`
    Haptotaxis(&'a [f64]),
}

/// Global assembly on a structured mesh.
///
/// Element contributions are scattered serially in element order into a
/// fixed sparsity pattern, so results are bitwise reproducible.
#[derive(Debug, Clone)]
pub struct Assembler {
    mesh: Arc<StructuredMesh>,
    pattern: Arc<CsrPattern>,
    // CSR slot of local entry (j, i) for every element, row-major
    scatter: Vec<usize>,
    kernel: ElementKernel,
}

impl Assembler {
    pub fn new(mesh: Arc<StructuredMesh>) -> Result<Self> {
        let n = mesh.node_count();
        let npe = mesh.nodes_per_element();
        let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in mesh.elements() {
            for &row in e {
                neighbours[row].extend_from_slice(e);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        offsets.push(0);
        for list in &mut neighbours {
            list.sort_unstable();
            list.dedup();
            cols.extend_from_slice(list);
            offsets.push(cols.len());
        }
        let pattern = Arc::new(CsrPattern::new(n, offsets, cols)?);

        let mut scatter = Vec::with_capacity(mesh.element_count() * npe * npe);
        for e in mesh.elements() {
            for &row in e {
                for &col in e {
                    scatter.push(pattern.find(row, col).expect("pattern covers element couplings"));
                }
            }
        }
        let kernel = ElementKernel::new(&mesh.element_geometry(0))?;
        Ok(Assembler {
            mesh,
            pattern,
            scatter,
            kernel,
        })
    }

    pub fn mesh(&self) -> &Arc<StructuredMesh> {
        &self.mesh
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn kernel(&self) -> &ElementKernel {
        &self.kernel
    }

    fn check_field(&self, name: &str, field: &[f64]) -> Result<()> {
        if field.len() != self.mesh.node_count() {
            return Err(Error::Assembly(format!(
                "{name} field has {} coefficients, mesh has {} nodes",
                field.len(),
                self.mesh.node_count()
            )));
        }
        if field.iter().any(|v| !v.is_finite()) {
            return Err(Error::Assembly(format!("{name} field has non-finite coefficients")));
        }
        Ok(())
    }

    pub fn assemble(&self, form: Form<'_>) -> Result<CsrMatrix> {
        let mut values = vec![0.0; self.pattern.nnz()];
        self.assemble_into(form, &mut values)?;
        CsrMatrix::from_pattern(Arc::clone(&self.pattern), values)
    }

    /// Overwrite `values` (laid out on [`Self::pattern`]) with the form.
    pub fn assemble_into(&self, form: Form<'_>, values: &mut [f64]) -> Result<()> {
        if values.len() != self.pattern.nnz() {
            return Err(Error::Assembly("value buffer does not match the pattern".into()));
        }
        match form {
            Form::WeightedMass(w) => self.check_field("weight", w)?,
            Form::Haptotaxis(c) => self.check_field("haptotaxis", c)?,
            _ => {}
        }
        values.iter_mut().for_each(|v| *v = 0.0);
        let npe = self.kernel.n;
        let nn = npe * npe;
        let mut local = vec![0.0; nn];
        let mut coeffs = [0.0; 8];
        for (e, nodes) in self.mesh.elements().enumerate() {
            let block: &[f64] = match form {
                Form::Mass => &self.kernel.mass,
                Form::Stiffness => &self.kernel.stiffness,
                Form::WeightedMass(w) => {
                    for (c, &g) in coeffs.iter_mut().zip(nodes) {
                        *c = w[g];
                    }
                    self.kernel.weighted_mass_into(&coeffs[..npe], &mut local);
                    &local
                }
                Form::Haptotaxis(c) => {
                    for (v, &g) in coeffs.iter_mut().zip(nodes) {
                        *v = c[g];
                    }
                    self.kernel.haptotaxis_into(&coeffs[..npe], &mut local);
                    &local
                }
            };
            let slots = &self.scatter[e * nn..(e + 1) * nn];
            for (&slot, &v) in slots.iter().zip(block) {
                values[slot] += v;
            }
        }
        Ok(())
    }

    /// Global load vector `∫ a_h b_h φ_j`.
    pub fn assemble_load_product(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        self.check_field("load", a)?;
        self.check_field("load", b)?;
        let npe = self.kernel.n;
        let mut out = vec![0.0; self.mesh.node_count()];
        let mut la = [0.0; 8];
        let mut lb = [0.0; 8];
        let mut local = [0.0; 8];
        for nodes in self.mesh.elements() {
            for (k, &g) in nodes.iter().enumerate() {
                la[k] = a[g];
                lb[k] = b[g];
            }
            self.kernel.load_product_into(&la[..npe], &lb[..npe], &mut local);
            for (k, &g) in nodes.iter().enumerate() {
                out[g] += local[k];
            }
        }
        Ok(out)
    }
}
