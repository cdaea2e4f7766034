//! Case description to coupled problem.
//!
//! The global model is a structured grid. Each patch replaces a block of
//! global elements aligned with global facets; its interface is the block
//! boundary. Coarse boundary nodes are interface entries, refined nodes
//! between two of them are tied linearly to their neighbours.

use std::sync::Arc;

use super::case::{CaseFile, PatchSpec};
use super::HarnessError;
use crate::accel::InterfaceLayout;
use crate::coupling::{CouplingProblem, PatchModel};
use crate::fem::mesh::holed_square;
use crate::fem::{dof, FeModel, InterfaceDofs, InterfaceTie, Material, Mesh};

const FACET_TOL: f64 = 1e-9;

/// A refined boundary node lying between two coarse interface nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct HangingNode {
    pub patch_node: usize,
    /// Global nodes at either end and the weight of each.
    pub masters: [(usize, f64); 2],
}

/// Geometry shared by the coupled problem and the monolithic reference.
#[derive(Debug, Clone)]
pub struct PatchGeometry {
    pub name: String,
    pub mesh: Mesh,
    /// Global material, then the patch material.
    pub materials: [Material; 2],
    /// Index into `materials` for every patch element.
    pub element_material: Vec<usize>,
    /// Global element index range `[i0, i1) x [j0, j1)`.
    pub cells: [usize; 4],
    pub refine: usize,
    pub holed: bool,
    /// Global elements replaced by the patch, row by row.
    pub region_elements: Vec<usize>,
    /// Global interface nodes of this patch, ascending.
    pub interface_nodes: Vec<usize>,
    /// Patch node matching each entry of `interface_nodes`.
    pub interface_patch_nodes: Vec<usize>,
    pub hanging: Vec<HangingNode>,
}

impl PatchGeometry {
    /// Patch elements that refine global cell `(i, j)`; only defined for
    /// patches without a hole.
    pub fn children(&self, i: usize, j: usize) -> Vec<usize> {
        let [i0, i1, j0, _] = self.cells;
        let r = self.refine;
        let row = (i1 - i0) * r;
        let (ii, jj) = (i - i0, j - j0);
        let mut out = Vec::with_capacity(r * r);
        for b in 0..r {
            for a in 0..r {
                out.push((jj * r + b) * row + ii * r + a);
            }
        }
        out
    }

    /// Patch node coinciding with each global node, if any.
    pub fn coincident_global_nodes(&self, global: &Mesh) -> Vec<(usize, usize)> {
        let [i0, i1, j0, j1] = self.cells;
        let nx = global_nx(global);
        let mut out = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                let g = j * (nx + 1) + i;
                let x = global.nodes[g];
                if let Some(p) = find_close(&self.mesh, x) {
                    out.push((g, p));
                }
            }
        }
        out
    }
}

fn global_nx(global: &Mesh) -> usize {
    // structured grid: the bottom set holds nx + 1 nodes
    global.node_sets["bottom"].len() - 1
}

fn find_close(mesh: &Mesh, x: [f64; 2]) -> Option<usize> {
    let scale = 1.0 + x[0].abs().max(x[1].abs());
    mesh.find_node(x, FACET_TOL * scale)
}

/// Global model and patch geometry before the coupled problem is formed.
#[derive(Debug, Clone)]
pub struct CaseGeometry {
    pub global: FeModel,
    pub patches: Vec<PatchGeometry>,
    pub layout: Arc<InterfaceLayout>,
    pub complement: Vec<usize>,
}

/// Checks a case without solving anything.
pub fn validate_case(case: &CaseFile) -> Result<(), HarnessError> {
    let geo = build_geometry(case)?;
    let problem = assemble_problem(case, &geo, false)?;
    drop(problem);
    Ok(())
}

/// Coupled problem of a case; the workaround strategy gets global-resolution
/// copies of every patch region.
pub fn build_case(case: &CaseFile) -> Result<(CouplingProblem, CaseGeometry), HarnessError> {
    let geo = build_geometry(case)?;
    let workaround =
        case.coupling.strategy == crate::coupling::ComplementStrategy::WorkaroundGlobalPatches;
    let problem = assemble_problem(case, &geo, workaround)?;
    Ok((problem, geo))
}

fn bad<T>(msg: impl Into<String>) -> Result<T, HarnessError> {
    Err(HarnessError::Case(msg.into()))
}

/// Index of the grid line at `x`, or a description of the misfit.
fn grid_index(x: f64, origin: f64, h: f64, n: usize) -> Result<usize, String> {
    let t = (x - origin) / h;
    let k = t.round();
    if (t - k).abs() > FACET_TOL * (1.0 + t.abs()) || k < 0.0 || k > n as f64 {
        let lo = (t.floor().clamp(0.0, n as f64)) * h + origin;
        let hi = (t.ceil().clamp(0.0, n as f64)) * h + origin;
        return Err(format!("{x} (nearest facets {lo} and {hi})"));
    }
    Ok(k as usize)
}

pub fn build_geometry(case: &CaseFile) -> Result<CaseGeometry, HarnessError> {
    let g = &case.global;
    let [w, h] = g.size;
    let [nx, ny] = g.elements;
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return bad("global size must be positive");
    }
    if nx == 0 || ny == 0 {
        return bad("global grid needs at least one element per direction");
    }
    if !(case.thickness > 0.0) {
        return bad("thickness must be positive");
    }
    if case.steps.is_empty() {
        return bad("at least one step is required");
    }
    if case.patches.is_empty() {
        return bad("at least one patch is required");
    }
    case.newton.validate()?;
    let mesh = Mesh::rectangle(g.origin[0], g.origin[1], w, h, nx, ny);
    let dx = w / nx as f64;
    let dy = h / ny as f64;

    let mut patches = Vec::with_capacity(case.patches.len());
    for spec in &case.patches {
        patches.push(patch_geometry(case, spec, &mesh, dx, dy)?);
    }
    for a in 0..patches.len() {
        if case.patches[..a].iter().any(|s| s.name == patches[a].name) {
            return bad(format!("duplicate patch name {:?}", patches[a].name));
        }
        for b in a + 1..patches.len() {
            let [ai0, ai1, aj0, aj1] = patches[a].cells;
            let [bi0, bi1, bj0, bj1] = patches[b].cells;
            // node-disjoint: interfaces must not share nodes
            let apart = ai1 < bi0 || bi1 < ai0 || aj1 < bj0 || bj1 < aj0;
            if !apart {
                return bad(format!(
                    "patches {:?} and {:?} overlap or touch",
                    patches[a].name, patches[b].name
                ));
            }
        }
    }

    let mut global = FeModel::homogeneous(mesh, g.material.clone(), case.thickness)?;
    global.set_controls(case.newton);
    for bc in &case.dirichlet {
        let nodes = node_set(global.mesh(), &bc.set)?;
        if bc.ux.is_none() && bc.uy.is_none() {
            return bad(format!("dirichlet on {:?} prescribes nothing", bc.set));
        }
        for n in nodes {
            if let Some(v) = bc.ux {
                global.add_dirichlet(dof(n, 0), v)?;
            }
            if let Some(v) = bc.uy {
                global.add_dirichlet(dof(n, 1), v)?;
            }
        }
    }
    for load in &case.loads {
        let nodes = node_set(global.mesh(), &load.set)?;
        for n in nodes {
            global.add_load(dof(n, 0), load.fx)?;
            global.add_load(dof(n, 1), load.fy)?;
        }
    }

    let mut dofs = Vec::new();
    let mut coords = Vec::new();
    for p in &patches {
        for &n in &p.interface_nodes {
            let x = global.mesh().nodes[n];
            for c in 0..2 {
                dofs.push(dof(n, c));
                coords.push(x);
            }
        }
    }
    let layout = Arc::new(InterfaceLayout::new(dofs, coords)?);

    let mut in_region = vec![false; global.mesh().elements.len()];
    for p in &patches {
        for &e in &p.region_elements {
            in_region[e] = true;
        }
    }
    let complement = (0..in_region.len()).filter(|&e| !in_region[e]).collect();
    Ok(CaseGeometry {
        global,
        patches,
        layout,
        complement,
    })
}

fn node_set(mesh: &Mesh, name: &str) -> Result<Vec<usize>, HarnessError> {
    mesh.node_sets.get(name).cloned().ok_or_else(|| {
        let known: Vec<&str> = mesh.node_sets.keys().map(String::as_str).collect();
        HarnessError::Case(format!(
            "unknown node set {name:?} (known: {})",
            known.join(", ")
        ))
    })
}

fn patch_geometry(
    case: &CaseFile,
    spec: &PatchSpec,
    global: &Mesh,
    dx: f64,
    dy: f64,
) -> Result<PatchGeometry, HarnessError> {
    let g = &case.global;
    let [nx, ny] = g.elements;
    let [x0, y0, x1, y1] = spec.region;
    let mut misfits = Vec::new();
    let mut idx = |x: f64, o: f64, hh: f64, n: usize, what: &str| match grid_index(x, o, hh, n) {
        Ok(k) => k,
        Err(m) => {
            misfits.push(format!("{what} = {m}"));
            0
        }
    };
    let i0 = idx(x0, g.origin[0], dx, nx, "x_min");
    let j0 = idx(y0, g.origin[1], dy, ny, "y_min");
    let i1 = idx(x1, g.origin[0], dx, nx, "x_max");
    let j1 = idx(y1, g.origin[1], dy, ny, "y_max");
    if !misfits.is_empty() {
        return bad(format!(
            "patch {:?} is not aligned with global facets: {}",
            spec.name,
            misfits.join("; ")
        ));
    }
    if !(i0 < i1 && j0 < j1) {
        return bad(format!("patch {:?} has an empty region", spec.name));
    }
    if i0 == 0 || j0 == 0 || i1 == nx || j1 == ny {
        return bad(format!(
            "patch {:?} touches the global boundary; patches must be interior",
            spec.name
        ));
    }
    if spec.refine == 0 {
        return bad(format!("patch {:?}: refine must be at least 1", spec.name));
    }
    let r = spec.refine;
    let (ci, cj) = (i1 - i0, j1 - j0);
    let (w, h) = (ci as f64 * dx, cj as f64 * dy);
    let (px0, py0) = (g.origin[0] + i0 as f64 * dx, g.origin[1] + j0 as f64 * dy);
    let mesh = match &spec.hole {
        None => Mesh::rectangle(px0, py0, w, h, ci * r, cj * r),
        Some(hole) => {
            if ci != cj || (dx - dy).abs() > FACET_TOL * dx.max(dy) {
                return bad(format!(
                    "patch {:?}: a holed patch needs a square region of square cells",
                    spec.name
                ));
            }
            holed_square(px0, py0, w, ci * r, hole.radius, hole.radial_layers)?
        }
    };
    let mut region_elements = Vec::with_capacity(ci * cj);
    for j in j0..j1 {
        for i in i0..i1 {
            region_elements.push(j * nx + i);
        }
    }
    let on_box = |i: usize, j: usize| i == i0 || i == i1 || j == j0 || j == j1;
    let mut interface_nodes = Vec::new();
    for j in j0..=j1 {
        for i in i0..=i1 {
            if on_box(i, j) {
                interface_nodes.push(j * (nx + 1) + i);
            }
        }
    }
    let mut interface_patch_nodes = Vec::with_capacity(interface_nodes.len());
    for &n in &interface_nodes {
        match find_close(&mesh, global.nodes[n]) {
            Some(p) => interface_patch_nodes.push(p),
            None => {
                return bad(format!(
                    "patch {:?} has no node at interface point {:?}",
                    spec.name, global.nodes[n]
                ))
            }
        }
    }
    let boundary: Vec<usize> = match &spec.hole {
        Some(_) => mesh.node_sets["boundary"].clone(),
        None => {
            let mut b: Vec<usize> = ["bottom", "top", "left", "right"]
                .iter()
                .flat_map(|s| mesh.node_sets[*s].iter().copied())
                .collect();
            b.sort_unstable();
            b.dedup();
            b
        }
    };
    let mut hanging = Vec::new();
    let gid = |i: usize, j: usize| j * (nx + 1) + i;
    for &pn in &boundary {
        if interface_patch_nodes.contains(&pn) {
            continue;
        }
        let x = mesh.nodes[pn];
        let ti = (x[0] - g.origin[0]) / dx;
        let tj = (x[1] - g.origin[1]) / dy;
        let vertical = (ti - i0 as f64).abs() < 1e-9 || (ti - i1 as f64).abs() < 1e-9;
        let masters = if vertical {
            let i = ti.round() as usize;
            let j = (tj.floor() as usize).clamp(j0, j1 - 1);
            let t = tj - j as f64;
            [(gid(i, j), 1.0 - t), (gid(i, j + 1), t)]
        } else {
            let j = tj.round() as usize;
            let i = (ti.floor() as usize).clamp(i0, i1 - 1);
            let t = ti - i as f64;
            [(gid(i, j), 1.0 - t), (gid(i + 1, j), t)]
        };
        hanging.push(HangingNode {
            patch_node: pn,
            masters,
        });
    }
    let centre = [px0 + 0.5 * w, py0 + 0.5 * h];
    let element_material = (0..mesh.elements.len())
        .map(|e| match spec.material_radius {
            Some(rad) => {
                let c = mesh.centroid(e);
                usize::from((c[0] - centre[0]).hypot(c[1] - centre[1]) <= rad)
            }
            None => 1,
        })
        .collect();
    Ok(PatchGeometry {
        name: spec.name.clone(),
        mesh,
        materials: [
            g.material.clone(),
            spec.material.clone().unwrap_or_else(|| g.material.clone()),
        ],
        element_material,
        cells: [i0, i1, j0, j1],
        refine: r,
        holed: spec.hole.is_some(),
        region_elements,
        interface_nodes,
        interface_patch_nodes,
        hanging,
    })
}

/// Interface description of a model whose nodes `node_of[k]` carry the
/// `k`-th interface node of the patch.
fn interface_dofs(geo: &PatchGeometry, node_of: &[usize], with_ties: bool) -> InterfaceDofs {
    let mut dofs = Vec::with_capacity(2 * node_of.len());
    for &n in node_of {
        dofs.push(dof(n, 0));
        dofs.push(dof(n, 1));
    }
    let mut ties = Vec::new();
    if with_ties {
        let local = |g: usize| {
            geo.interface_nodes
                .binary_search(&g)
                .expect("master on interface")
        };
        for hn in &geo.hanging {
            for c in 0..2 {
                ties.push(InterfaceTie {
                    dof: dof(hn.patch_node, c),
                    terms: hn
                        .masters
                        .iter()
                        .map(|&(g, w)| (2 * local(g) + c, w))
                        .collect(),
                });
            }
        }
    }
    InterfaceDofs { dofs, ties }
}

fn assemble_problem(
    case: &CaseFile,
    geo: &CaseGeometry,
    workaround: bool,
) -> Result<CouplingProblem, HarnessError> {
    let mut offset = 0;
    let mut patches = Vec::with_capacity(geo.patches.len());
    for pg in &geo.patches {
        let n = 2 * pg.interface_nodes.len();
        let injection: Vec<usize> = (offset..offset + n).collect();
        offset += n;
        let mut model = FeModel::new(
            pg.mesh.clone(),
            pg.materials.to_vec(),
            pg.element_material.clone(),
            case.thickness,
        )?;
        model.set_controls(case.newton);
        model.set_interface(interface_dofs(pg, &pg.interface_patch_nodes, true))?;
        let global_version = if workaround {
            let (sub, origin) = geo.global.mesh().extract(&pg.region_elements);
            let local: Vec<usize> = pg
                .interface_nodes
                .iter()
                .map(|g| origin.binary_search(g).expect("interface node in region"))
                .collect();
            let mut gv = FeModel::homogeneous(sub, case.global.material.clone(), case.thickness)?;
            gv.set_controls(case.newton);
            gv.set_interface(interface_dofs(pg, &local, false))?;
            Some(gv)
        } else {
            None
        };
        patches.push(PatchModel {
            name: pg.name.clone(),
            model,
            injection,
            global_version,
        });
    }
    Ok(CouplingProblem::new(
        geo.global.clone(),
        patches,
        geo.layout.clone(),
        geo.complement.clone(),
        case.coupling.clone(),
        case.incrementation.clone(),
        case.accelerator.clone(),
        case.steps.clone(),
    )?)
}
