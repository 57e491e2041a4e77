//! Uniform triangulation of the unit square with interior degree-of-freedom
//! numbering.
//!
//! Every square cell is split along the diagonal from its lower-left to its
//! upper-right corner, so matrices assembled on the mesh are bit-reproducible.
//! Nodes are numbered row-major (y outer, x inner); interior nodes get a
//! second row-major index over the (n-1)^2 interior grid.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Mesh {
    /// Cells per side.
    pub n: usize,
    /// Mesh width, 1/n.
    pub h: f64,
    /// Node coordinates, row-major over the (n+1)^2 grid.
    pub nodes: Vec<(f64, f64)>,
    /// Vertex-index triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    /// Node index -> interior DOF index; boundary nodes map to None.
    pub interior_index: Vec<Option<usize>>,
    /// Number of interior DOFs, (n-1)^2.
    pub n_dof: usize,
}

/// Builds the uniform mesh with 2 n^2 triangles and (n-1)^2 interior DOFs.
pub fn build_uniform_mesh(n: usize) -> Result<Mesh> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "build_uniform_mesh: n = {n} has no interior DOF (need n >= 2)"
        )));
    }
    let h = 1.0 / n as f64;
    let side = n + 1;
    let mut nodes = Vec::with_capacity(side * side);
    for iy in 0..side {
        for ix in 0..side {
            nodes.push((ix as f64 * h, iy as f64 * h));
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for iy in 0..n {
        for ix in 0..n {
            let ll = iy * side + ix;
            let lr = ll + 1;
            let ul = ll + side;
            let ur = ul + 1;
            // lower-left to upper-right diagonal, both triangles CCW
            triangles.push([ll, lr, ur]);
            triangles.push([ll, ur, ul]);
        }
    }
    let mut interior_index = vec![None; side * side];
    let mut dof = 0;
    for iy in 1..n {
        for ix in 1..n {
            interior_index[iy * side + ix] = Some(dof);
            dof += 1;
        }
    }
    Ok(Mesh {
        n,
        h,
        nodes,
        triangles,
        interior_index,
        n_dof: dof,
    })
}

impl Mesh {
    /// Signed area of triangle `t` (positive for CCW orientation).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (xa, ya) = self.nodes[a];
        let (xb, yb) = self.nodes[b];
        let (xc, yc) = self.nodes[c];
        0.5 * ((xb - xa) * (yc - ya) - (xc - xa) * (yb - ya))
    }

    pub fn centroid(&self, t: usize) -> (f64, f64) {
        let [a, b, c] = self.triangles[t];
        let (xa, ya) = self.nodes[a];
        let (xb, yb) = self.nodes[b];
        let (xc, yc) = self.nodes[c];
        ((xa + xb + xc) / 3.0, (ya + yb + yc) / 3.0)
    }

    /// Node indices ordered by interior DOF index.
    pub fn interior_nodes(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.n_dof];
        for (node, idx) in self.interior_index.iter().enumerate() {
            if let Some(d) = *idx {
                out[d] = node;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MeshCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Per-invariant pass/fail report; never aborts.
pub fn validate_mesh(mesh: &Mesh) -> Vec<MeshCheck> {
    let mut checks = Vec::new();
    let n = mesh.n;

    let tri_ok = mesh.triangles.len() == 2 * n * n;
    checks.push(MeshCheck {
        name: "triangle_count",
        passed: tri_ok,
        detail: format!("{} triangles, expected {}", mesh.triangles.len(), 2 * n * n),
    });

    let dof_ok = mesh.n_dof == (n - 1) * (n - 1);
    checks.push(MeshCheck {
        name: "interior_dof_count",
        passed: dof_ok,
        detail: format!("{} DOFs, expected {}", mesh.n_dof, (n - 1) * (n - 1)),
    });

    let target = mesh.h * mesh.h / 2.0;
    let mut area_ok = true;
    let mut worst = 0.0f64;
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        let a = mesh.signed_area(t);
        total += a;
        let dev = (a - target).abs();
        if dev > 1e-14 || a <= 0.0 {
            area_ok = false;
        }
        worst = worst.max(dev);
    }
    checks.push(MeshCheck {
        name: "signed_areas",
        passed: area_ok,
        detail: format!("max |area - h^2/2| = {worst:.3e}"),
    });
    checks.push(MeshCheck {
        name: "total_area",
        passed: (total - 1.0).abs() <= 1e-14,
        detail: format!("sum = {total}"),
    });

    let side = n + 1;
    let mut grid_ok = true;
    for (idx, &(x, y)) in mesh.nodes.iter().enumerate() {
        let ix = idx % side;
        let iy = idx / side;
        if (x - ix as f64 * mesh.h).abs() > 1e-14 || (y - iy as f64 * mesh.h).abs() > 1e-14 {
            grid_ok = false;
        }
    }
    checks.push(MeshCheck {
        name: "nodes_on_grid",
        passed: grid_ok,
        detail: String::new(),
    });

    let mut seen = vec![false; mesh.n_dof.max(1)];
    let mut bij_ok = true;
    for (node, idx) in mesh.interior_index.iter().enumerate() {
        let ix = node % side;
        let iy = node / side;
        let boundary = ix == 0 || iy == 0 || ix == n || iy == n;
        match idx {
            Some(d) => {
                if boundary || *d >= mesh.n_dof || seen[*d] {
                    bij_ok = false;
                } else {
                    seen[*d] = true;
                }
            }
            None => {
                if !boundary {
                    bij_ok = false;
                }
            }
        }
    }
    if mesh.n_dof > 0 && !seen.iter().all(|&s| s) {
        bij_ok = false;
    }
    checks.push(MeshCheck {
        name: "interior_bijection",
        passed: bij_ok,
        detail: String::new(),
    });

    checks
}

pub fn mesh_checks_pass(checks: &[MeshCheck]) -> bool {
    checks.iter().all(|c| c.passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_n16() {
        let m = build_uniform_mesh(16).unwrap();
        assert_eq!(m.triangles.len(), 512);
        assert_eq!(m.n_dof, 225);
    }

    #[test]
    fn counts_small() {
        let m = build_uniform_mesh(2).unwrap();
        assert_eq!(m.triangles.len(), 8);
        assert_eq!(m.n_dof, 1);
        let m = build_uniform_mesh(4).unwrap();
        assert_eq!(m.triangles.len(), 32);
        assert_eq!(m.n_dof, 9);
    }

    #[test]
    fn rejects_n_below_two() {
        assert!(build_uniform_mesh(1).is_err());
        assert!(build_uniform_mesh(0).is_err());
    }

    #[test]
    fn constructor_output_validates() {
        for n in [2, 3, 8] {
            let m = build_uniform_mesh(n).unwrap();
            let checks = validate_mesh(&m);
            assert!(mesh_checks_pass(&checks), "{checks:?}");
        }
    }

    #[test]
    fn areas_partition_unit_square() {
        for n in [2, 5, 16] {
            let m = build_uniform_mesh(n).unwrap();
            let total: f64 = (0..m.triangles.len()).map(|t| m.signed_area(t)).sum();
            assert!((total - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn perturbed_vertex_fails_area_check() {
        let mut m = build_uniform_mesh(8).unwrap();
        m.nodes[10].0 += 1e-3;
        let checks = validate_mesh(&m);
        assert!(!checks.iter().find(|c| c.name == "signed_areas").unwrap().passed);
    }

    #[test]
    fn flipped_triangle_fails_orientation() {
        let mut m = build_uniform_mesh(8).unwrap();
        m.triangles[3].swap(0, 1);
        let checks = validate_mesh(&m);
        assert!(!checks.iter().find(|c| c.name == "signed_areas").unwrap().passed);
    }

    #[test]
    fn interior_bijection_by_construction() {
        let m = build_uniform_mesh(6).unwrap();
        let nodes = m.interior_nodes();
        assert_eq!(nodes.len(), 25);
        for (d, &node) in nodes.iter().enumerate() {
            assert_eq!(m.interior_index[node], Some(d));
        }
    }
}
