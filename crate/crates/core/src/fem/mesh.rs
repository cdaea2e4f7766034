use std::collections::BTreeMap;

use super::element::jacobian_determinants;
use super::FemError;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    /// Coordinates in mm.
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise 4-node connectivity.
    pub elements: Vec<[usize; 4]>,
    pub node_sets: BTreeMap<String, Vec<usize>>,
    pub element_sets: BTreeMap<String, Vec<usize>>,
}

impl Mesh {
    pub fn new(nodes: Vec<[f64; 2]>, elements: Vec<[usize; 4]>) -> Result<Self, FemError> {
        let mesh = Self {
            nodes,
            elements,
            ..Default::default()
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn element_coords(&self, e: usize) -> [[f64; 2]; 4] {
        let c = &self.elements[e];
        [
            self.nodes[c[0]],
            self.nodes[c[1]],
            self.nodes[c[2]],
            self.nodes[c[3]],
        ]
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let c = self.element_coords(e);
        [
            0.25 * (c[0][0] + c[1][0] + c[2][0] + c[3][0]),
            0.25 * (c[0][1] + c[1][1] + c[2][1] + c[3][1]),
        ]
    }

    pub fn validate(&self) -> Result<(), FemError> {
        for (i, p) in self.nodes.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(FemError::InvalidMesh(format!(
                    "node {i} has non-finite coordinates"
                )));
            }
        }
        for (e, conn) in self.elements.iter().enumerate() {
            if let Some(&bad) = conn.iter().find(|&&n| n >= self.nodes.len()) {
                return Err(FemError::InvalidMesh(format!(
                    "element {e} references missing node {bad}"
                )));
            }
            let dets = jacobian_determinants(&self.element_coords(e));
            if dets.iter().any(|&d| !(d > 0.0)) {
                return Err(FemError::InvalidMesh(format!(
                    "element {e} has a non-positive Jacobian"
                )));
            }
        }
        for (name, set) in &self.node_sets {
            if set.iter().any(|&n| n >= self.nodes.len()) {
                return Err(FemError::InvalidMesh(format!(
                    "node set {name} is out of range"
                )));
            }
        }
        for (name, set) in &self.element_sets {
            if set.iter().any(|&e| e >= self.elements.len()) {
                return Err(FemError::InvalidMesh(format!(
                    "element set {name} is out of range"
                )));
            }
        }
        Ok(())
    }

    /// Structured grid of `nx * ny` elements over `[x0, x0+width] x [y0, y0+height]`,
    /// nodes numbered row by row from the bottom-left corner.
    pub fn rectangle(x0: f64, y0: f64, width: f64, height: f64, nx: usize, ny: usize) -> Self {
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([
                    x0 + width * i as f64 / nx as f64,
                    y0 + height * j as f64 / ny as f64,
                ]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut elements = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                elements.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let mut mesh = Self {
            nodes,
            elements,
            ..Default::default()
        };
        let tol = 1e-9 * width.max(height);
        mesh.node_sets.insert(
            "bottom".into(),
            mesh.nodes_where(|p| (p[1] - y0).abs() <= tol),
        );
        mesh.node_sets.insert(
            "top".into(),
            mesh.nodes_where(|p| (p[1] - y0 - height).abs() <= tol),
        );
        mesh.node_sets.insert(
            "left".into(),
            mesh.nodes_where(|p| (p[0] - x0).abs() <= tol),
        );
        mesh.node_sets.insert(
            "right".into(),
            mesh.nodes_where(|p| (p[0] - x0 - width).abs() <= tol),
        );
        mesh
    }

    pub fn nodes_where(&self, pred: impl Fn(&[f64; 2]) -> bool) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| pred(&self.nodes[i]))
            .collect()
    }

    pub fn find_node(&self, p: [f64; 2], tol: f64) -> Option<usize> {
        self.nodes
            .iter()
            .position(|q| (q[0] - p[0]).abs() <= tol && (q[1] - p[1]).abs() <= tol)
    }

    /// Sub-mesh made of the listed elements, with nodes renumbered in the
    /// order of first appearance in the original numbering.
    /// Returns the sub-mesh and the original index of each retained node.
    pub fn extract(&self, elements: &[usize]) -> (Mesh, Vec<usize>) {
        let mut used = vec![false; self.nodes.len()];
        for &e in elements {
            for &n in &self.elements[e] {
                used[n] = true;
            }
        }
        let mut new_id = vec![usize::MAX; self.nodes.len()];
        let mut origin = Vec::new();
        for (n, &u) in used.iter().enumerate() {
            if u {
                new_id[n] = origin.len();
                origin.push(n);
            }
        }
        let nodes = origin.iter().map(|&n| self.nodes[n]).collect();
        let elems = elements
            .iter()
            .map(|&e| {
                let c = self.elements[e];
                [new_id[c[0]], new_id[c[1]], new_id[c[2]], new_id[c[3]]]
            })
            .collect();
        (
            Mesh {
                nodes,
                elements: elems,
                ..Default::default()
            },
            origin,
        )
    }
}

/// Square-with-circular-hole mesh built from four transfinite blocks.
///
/// The outer boundary of `[x0, x0+size]^2` carries `per_side` elements on
/// each side at uniform spacing, so it matches a structured grid refined
/// `per_side / coarse_per_side` times. Nodes are numbered ring by ring from
/// the hole outward, the last ring being the square boundary.
pub fn holed_square(
    x0: f64,
    y0: f64,
    size: f64,
    per_side: usize,
    radius: f64,
    radial_layers: usize,
) -> Result<Mesh, FemError> {
    if !(radius > 0.0 && radius < 0.5 * size) {
        return Err(FemError::InvalidMesh(
            "hole radius must be inside the patch".into(),
        ));
    }
    if per_side == 0 || radial_layers == 0 {
        return Err(FemError::InvalidMesh("empty holed mesh".into()));
    }
    let cx = x0 + 0.5 * size;
    let cy = y0 + 0.5 * size;
    let ring = 4 * per_side;
    // boundary point k (counter-clockwise, starting at bottom-left corner)
    let outer = |k: usize| -> [f64; 2] {
        let side = k / per_side;
        let t = (k % per_side) as f64 / per_side as f64;
        match side {
            0 => [x0 + t * size, y0],
            1 => [x0 + size, y0 + t * size],
            2 => [x0 + size - t * size, y0 + size],
            _ => [x0, y0 + size - t * size],
        }
    };
    let mut nodes = Vec::with_capacity(ring * (radial_layers + 1));
    for layer in 0..=radial_layers {
        let s = layer as f64 / radial_layers as f64;
        for k in 0..ring {
            let o = outer(k);
            let ang = (o[1] - cy).atan2(o[0] - cx);
            let inner = [cx + radius * ang.cos(), cy + radius * ang.sin()];
            if layer == radial_layers {
                nodes.push(o);
            } else {
                nodes.push([
                    inner[0] + s * (o[0] - inner[0]),
                    inner[1] + s * (o[1] - inner[1]),
                ]);
            }
        }
    }
    let id = |layer: usize, k: usize| layer * ring + (k % ring);
    let mut elements = Vec::with_capacity(ring * radial_layers);
    for layer in 0..radial_layers {
        for k in 0..ring {
            elements.push([
                id(layer, k),
                id(layer + 1, k),
                id(layer + 1, k + 1),
                id(layer, k + 1),
            ]);
        }
    }
    let mut mesh = Mesh::new(nodes, elements)?;
    mesh.node_sets.insert("hole".into(), (0..ring).collect());
    mesh.node_sets.insert(
        "boundary".into(),
        (radial_layers * ring..(radial_layers + 1) * ring).collect(),
    );
    Ok(mesh)
}
