//! Assembly of the first-order factor, lumped mass, and load vector, and the
//! mass-normalized system A = G^T G, b.
//!
//! The factor is assembled per triangle from the constant P1 basis gradients
//! weighted by sqrt(area * a(centroid)); the centroid rule is exact when the
//! coefficient is constant on each triangle. Loads use the 3-point mid-edge
//! rule (exact for quadratic integrands). Mass lumping makes M^(-1/2) exact
//! and diagonal, so normalization preserves the sparsity of the factor.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, SparseMatrix, SpdFactor};
use crate::mesh::Mesh;

/// Default ceiling on unknowns for dense decompositions.
pub const DENSE_CEILING_DEFAULT: usize = 4096;

/// Reads the dense-path ceiling, honoring the ELLQ_DENSE_CEILING override.
pub fn dense_ceiling_from_env() -> usize {
    std::env::var("ELLQ_DENSE_CEILING")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DENSE_CEILING_DEFAULT)
}

/// Strictly positive isotropic scalar diffusivity a(x, y).
pub struct CoefficientField {
    eval: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl CoefficientField {
    pub fn constant(a: f64) -> Self {
        CoefficientField {
            eval: Box::new(move |_, _| a),
        }
    }

    pub fn from_fn(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        CoefficientField { eval: Box::new(f) }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.eval)(x, y)
    }
}

/// Gradients of the three P1 basis functions on triangle `t` (constant per
/// triangle), in local vertex order.
fn p1_gradients(mesh: &Mesh, t: usize) -> [(f64, f64); 3] {
    let [a, b, c] = mesh.triangles[t];
    let p = [mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]];
    let two_area = 2.0 * mesh.signed_area(t);
    let mut g = [(0.0, 0.0); 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        g[i] = (
            (p[j].1 - p[k].1) / two_area,
            (p[k].0 - p[j].0) / two_area,
        );
    }
    g
}

/// Raw (un-normalized) first-order factor: two rows per triangle holding
/// sqrt(area * a(centroid)) times the basis gradients, columns restricted to
/// interior DOFs.
pub fn assemble_gradient_factor(mesh: &Mesh, coeff: &CoefficientField) -> Result<SparseMatrix> {
    let mut triplets = Vec::with_capacity(mesh.triangles.len() * 6);
    for t in 0..mesh.triangles.len() {
        let (cx, cy) = mesh.centroid(t);
        let a = coeff.eval(cx, cy);
        if !(a > 0.0) {
            return Err(Error::Assembly(format!(
                "coefficient a({cx}, {cy}) = {a} is not positive on triangle {t}"
            )));
        }
        let w = (mesh.signed_area(t) * a).sqrt();
        let grads = p1_gradients(mesh, t);
        for (local, &node) in mesh.triangles[t].iter().enumerate() {
            if let Some(col) = mesh.interior_index[node] {
                triplets.push((2 * t, col, w * grads[local].0));
                triplets.push((2 * t + 1, col, w * grads[local].1));
            }
        }
    }
    SparseMatrix::from_triplets(2 * mesh.triangles.len(), mesh.n_dof, triplets)
}

/// Lumped P1 mass for every node: sum of incident triangle areas over 3.
pub fn assemble_lumped_mass(mesh: &Mesh) -> Vec<f64> {
    let mut mass = vec![0.0; mesh.nodes.len()];
    for t in 0..mesh.triangles.len() {
        let third = mesh.signed_area(t) / 3.0;
        for &node in &mesh.triangles[t] {
            mass[node] += third;
        }
    }
    mass
}

/// Raw load vector over interior DOFs via the 3-point mid-edge rule.
pub fn assemble_load(mesh: &Mesh, f: &dyn Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_dof];
    for t in 0..mesh.triangles.len() {
        let [i0, i1, i2] = mesh.triangles[t];
        let p = [mesh.nodes[i0], mesh.nodes[i1], mesh.nodes[i2]];
        let weight = mesh.signed_area(t) / 3.0;
        let mids = [
            ((p[0].0 + p[1].0) / 2.0, (p[0].1 + p[1].1) / 2.0),
            ((p[1].0 + p[2].0) / 2.0, (p[1].1 + p[2].1) / 2.0),
            ((p[2].0 + p[0].0) / 2.0, (p[2].1 + p[0].1) / 2.0),
        ];
        let fv = [f(mids[0].0, mids[0].1), f(mids[1].0, mids[1].1), f(mids[2].0, mids[2].1)];
        // basis i is 1/2 on the two edges touching vertex i, 0 opposite
        let phi = [[0.5, 0.0, 0.5], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5]];
        for (local, &node) in mesh.triangles[t].iter().enumerate() {
            if let Some(col) = mesh.interior_index[node] {
                for q in 0..3 {
                    b[col] += weight * fv[q] * phi[local][q];
                }
            }
        }
    }
    b
}

/// Extreme singular values of the factor and the induced eigenvalue window.
#[derive(Debug, Clone, Copy)]
pub struct SpectralSummary {
    pub sigma_min_g: f64,
    pub norm_g: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
}

/// Mass-normalized system: G = G_raw M^(-1/2), b = M^(-1/2) b_raw.
pub struct EllipticSystem {
    pub mesh: Mesh,
    /// Mass-normalized discrete gradient, shape (2 * #triangles) x N_dof.
    pub gradient: SparseMatrix,
    /// Mass-normalized load.
    pub load: Vec<f64>,
    /// Diagonal entries of M^(-1/2) on interior DOFs.
    pub mass_sqrt_inv: Vec<f64>,
    dense_ceiling: usize,
    spectral: OnceLock<SpectralSummary>,
    factor: OnceLock<SpdFactor>,
    norm_g_sq: OnceLock<f64>,
}

/// Applies the mass normalization to the raw factor and load.
pub fn normalize_system(
    mesh: Mesh,
    raw_factor: SparseMatrix,
    raw_load: Vec<f64>,
    nodal_mass: &[f64],
) -> Result<EllipticSystem> {
    if raw_factor.cols() != mesh.n_dof || raw_load.len() != mesh.n_dof {
        return Err(Error::DimensionMismatch(
            "normalize_system: factor/load size vs interior DOFs".into(),
        ));
    }
    if nodal_mass.len() != mesh.nodes.len() {
        return Err(Error::DimensionMismatch(
            "normalize_system: mass vector must cover all nodes".into(),
        ));
    }
    let mut mass_sqrt_inv = vec![0.0; mesh.n_dof];
    for (node, idx) in mesh.interior_index.iter().enumerate() {
        if let Some(d) = *idx {
            let m = nodal_mass[node];
            if !(m > 0.0) {
                return Err(Error::Assembly(format!(
                    "non-positive lumped mass {m} at node {node}"
                )));
            }
            mass_sqrt_inv[d] = 1.0 / m.sqrt();
        }
    }
    let mut gradient = raw_factor;
    gradient.scale_columns(&mass_sqrt_inv)?;
    let load: Vec<f64> = raw_load
        .iter()
        .zip(&mass_sqrt_inv)
        .map(|(b, s)| b * s)
        .collect();
    Ok(EllipticSystem {
        mesh,
        gradient,
        load,
        mass_sqrt_inv,
        dense_ceiling: dense_ceiling_from_env(),
        spectral: OnceLock::new(),
        factor: OnceLock::new(),
        norm_g_sq: OnceLock::new(),
    })
}

/// Assembles the full normalized system for a coefficient and right-hand side.
pub fn assemble_system(
    mesh: Mesh,
    coeff: &CoefficientField,
    f: &dyn Fn(f64, f64) -> f64,
) -> Result<EllipticSystem> {
    let raw = assemble_gradient_factor(&mesh, coeff)?;
    let mass = assemble_lumped_mass(&mesh);
    let b = assemble_load(&mesh, f);
    normalize_system(mesh, raw, b, &mass)
}

impl EllipticSystem {
    pub fn n_dof(&self) -> usize {
        self.mesh.n_dof
    }

    pub fn gradient_rows(&self) -> usize {
        self.gradient.rows()
    }

    pub fn dense_ceiling(&self) -> usize {
        self.dense_ceiling
    }

    /// Overrides the dense-path guard (mainly for tests).
    pub fn with_dense_ceiling(mut self, ceiling: usize) -> Self {
        self.dense_ceiling = ceiling;
        self
    }

    /// A v = G^T (G v), matrix-free.
    pub fn apply_a(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.gradient.spmv_transpose(&self.gradient.spmv(v)?)
    }

    /// Mass-normalized load for an arbitrary right-hand side on this mesh.
    pub fn normalized_load(&self, f: &dyn Fn(f64, f64) -> f64) -> Vec<f64> {
        let raw = assemble_load(&self.mesh, f);
        raw.iter()
            .zip(&self.mass_sqrt_inv)
            .map(|(b, s)| b * s)
            .collect()
    }

    fn check_dense(&self, what: &str, dim: usize) -> Result<()> {
        if dim > self.dense_ceiling {
            return Err(Error::DenseRefusal(format!(
                "{what}: {dim} unknowns exceeds the ceiling {}",
                self.dense_ceiling
            )));
        }
        Ok(())
    }

    pub fn dense_gradient(&self) -> DMatrix<f64> {
        self.gradient.to_dense()
    }

    pub fn dense_a(&self) -> Result<DMatrix<f64>> {
        self.check_dense("dense stiffness", self.n_dof())?;
        let g = self.dense_gradient();
        Ok(g.transpose() * g)
    }

    /// Extreme singular values via a dense SVD of the factor.
    pub fn spectral(&self) -> Result<&SpectralSummary> {
        self.check_dense("spectral summary", self.n_dof())?;
        if let Some(s) = self.spectral.get() {
            return Ok(s);
        }
        let svals = self.dense_gradient().singular_values();
        let mut smin = f64::INFINITY;
        let mut smax = 0.0f64;
        for &s in svals.iter() {
            smin = smin.min(s);
            smax = smax.max(s);
        }
        let summary = SpectralSummary {
            sigma_min_g: smin,
            norm_g: smax,
            lambda_min: smin * smin,
            lambda_max: smax * smax,
            kappa: (smax / smin) * (smax / smin),
        };
        Ok(self.spectral.get_or_init(|| summary))
    }

    /// Reference direct solve of A x = b via a cached Cholesky factorization.
    pub fn direct_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n_dof() {
            return Err(Error::DimensionMismatch(
                "direct_solve: right-hand-side length".into(),
            ));
        }
        self.check_dense("direct solve", self.n_dof())?;
        if self.factor.get().is_none() {
            let f = SpdFactor::new(self.dense_a()?)?;
            let _ = self.factor.set(f);
        }
        Ok(self.factor.get().unwrap().solve(b))
    }

    /// Deterministic estimate of ||G|| used by the step-size policy.
    pub fn norm_g_est(&self) -> f64 {
        self.norm_g_sq
            .get_or_init(|| linalg::gram_norm_sq_estimate(&self.gradient, 300))
            .max(0.0)
            .sqrt()
    }
}
