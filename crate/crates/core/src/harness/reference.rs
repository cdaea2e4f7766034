//! Monolithic reference: the global mesh with every patch region replaced
//! by the refined patch mesh, hanging nodes tied to the coarse edges.
//! A converged coupled run reproduces this model.

use serde::{Deserialize, Serialize};

use super::build::CaseGeometry;
use super::case::CaseFile;
use super::HarnessError;
use crate::fem::{dof, FeModel, FemError, InterfaceDrive, Mesh, Tie};

#[derive(Debug, Clone)]
pub struct ReferenceModel {
    pub model: FeModel,
    /// Reference node of each global node, when the node is kept.
    pub global_node: Vec<Option<usize>>,
    /// Reference node of each patch node, patch by patch.
    pub patch_node: Vec<Vec<usize>>,
    /// Reference elements that come from each patch.
    pub patch_elements: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub converged: bool,
    pub increments: usize,
    pub newton_iterations: usize,
    pub cutbacks: usize,
    /// Largest committed equivalent plastic strain over the patch elements.
    pub max_patch_eqps: f64,
    /// Displacements at the interface layout entries.
    pub interface_displacements: Vec<f64>,
}

pub fn build_reference(
    case: &CaseFile,
    geo: &CaseGeometry,
) -> Result<ReferenceModel, HarnessError> {
    let gmesh = geo.global.mesh();
    let ng = gmesh.num_nodes();
    let mut keep = vec![false; ng];
    for &e in &geo.complement {
        for &n in &gmesh.elements[e] {
            keep[n] = true;
        }
    }
    let coincident: Vec<Vec<(usize, usize)>> = geo
        .patches
        .iter()
        .map(|p| p.coincident_global_nodes(gmesh))
        .collect();
    for list in &coincident {
        for &(g, _) in list {
            keep[g] = true;
        }
    }
    let mut global_node = vec![None; ng];
    let mut nodes = Vec::new();
    for g in 0..ng {
        if keep[g] {
            global_node[g] = Some(nodes.len());
            nodes.push(gmesh.nodes[g]);
        }
    }
    let mut patch_node = Vec::with_capacity(geo.patches.len());
    for (pg, list) in geo.patches.iter().zip(&coincident) {
        let mut map = vec![usize::MAX; pg.mesh.num_nodes()];
        for &(g, p) in list {
            map[p] = global_node[g].expect("kept");
        }
        for (p, slot) in map.iter_mut().enumerate() {
            if *slot == usize::MAX {
                *slot = nodes.len();
                nodes.push(pg.mesh.nodes[p]);
            }
        }
        patch_node.push(map);
    }

    // region element -> (patch, position in the region)
    let mut owner = vec![None; gmesh.elements.len()];
    for (s, pg) in geo.patches.iter().enumerate() {
        for &e in &pg.region_elements {
            owner[e] = Some(s);
        }
    }
    let mut elements = Vec::new();
    let mut element_material = Vec::new();
    let mut patch_elements = vec![Vec::new(); geo.patches.len()];
    let mut inserted = vec![false; geo.patches.len()];
    let nx = gmesh.node_sets["bottom"].len() - 1;
    let map_conn = |c: [usize; 4], m: &dyn Fn(usize) -> usize| [m(c[0]), m(c[1]), m(c[2]), m(c[3])];
    for (e, conn) in gmesh.elements.iter().enumerate() {
        match owner[e] {
            None => {
                elements.push(map_conn(*conn, &|n| global_node[n].expect("kept")));
                element_material.push(0);
            }
            Some(s) => {
                let pg = &geo.patches[s];
                let children: Vec<usize> = if pg.holed {
                    if inserted[s] {
                        continue;
                    }
                    inserted[s] = true;
                    (0..pg.mesh.elements.len()).collect()
                } else {
                    pg.children(e % nx, e / nx)
                };
                for c in children {
                    patch_elements[s].push(elements.len());
                    elements.push(map_conn(pg.mesh.elements[c], &|n| patch_node[s][n]));
                    element_material.push(if pg.element_material[c] == 0 {
                        0
                    } else {
                        s + 1
                    });
                }
            }
        }
    }
    let mut materials = vec![case.global.material.clone()];
    materials.extend(geo.patches.iter().map(|p| p.materials[1].clone()));
    let mesh = Mesh::new(nodes, elements)?;
    let mut model = FeModel::new(mesh, materials, element_material, case.thickness)?;
    model.set_controls(case.newton);

    for (s, pg) in geo.patches.iter().enumerate() {
        for hn in &pg.hanging {
            for c in 0..2 {
                model.add_constraint(Tie {
                    dof: dof(patch_node[s][hn.patch_node], c),
                    terms: hn
                        .masters
                        .iter()
                        .map(|&(g, w)| (dof(global_node[g].expect("interface node kept"), c), w))
                        .collect(),
                })?;
            }
        }
    }
    for p in geo.global.dirichlet() {
        let n = global_node[p.dof / 2]
            .ok_or_else(|| HarnessError::Case("prescribed node inside a patch".into()))?;
        model.add_dirichlet(dof(n, p.dof % 2), p.value)?;
    }
    for (d, &f) in geo.global.external_loads().iter().enumerate() {
        if f != 0.0 {
            let n = global_node[d / 2]
                .ok_or_else(|| HarnessError::Case("load inside a patch".into()))?;
            model.add_load(dof(n, d % 2), f)?;
        }
    }
    Ok(ReferenceModel {
        model,
        global_node,
        patch_node,
        patch_elements,
    })
}

impl ReferenceModel {
    pub fn max_patch_eqps(&self) -> f64 {
        let state = self.model.committed_state();
        let per = state.len() / self.model.mesh().elements.len();
        self.patch_elements
            .iter()
            .flatten()
            .flat_map(|&e| &state[e * per..(e + 1) * per])
            .map(|g| g.eqps)
            .fold(0.0, f64::max)
    }

    /// Incremental solve with the case's incrementation policy, counting
    /// Newton iterations against the fast threshold.
    pub fn solve(
        &mut self,
        case: &CaseFile,
        geo: &CaseGeometry,
    ) -> Result<ReferenceSolution, HarnessError> {
        let policy = &case.incrementation;
        policy.validate()?;
        let mut load = 0.0;
        let mut increments = 0;
        let mut newton_iterations = 0;
        let mut cutbacks = 0;
        let mut converged = true;
        'steps: for &target in &case.steps {
            let mut inc = policy.start();
            let span = target - load;
            while !inc.done() {
                let (fa, fb) = inc.next_range();
                let la = load + fa * span;
                let lb = if fb >= 1.0 { target } else { load + fb * span };
                match self.model.solve_increment(InterfaceDrive::None, (la, lb)) {
                    Ok(rep) => {
                        self.model.commit_increment()?;
                        newton_iterations += rep.iterations;
                        increments += 1;
                        inc.accept(fb, rep.iterations);
                    }
                    Err(FemError::NotConverged { iterations, .. }) => {
                        newton_iterations += iterations;
                        self.model.discard_trial();
                        cutbacks += 1;
                        if !inc.cut_back() {
                            converged = false;
                            break 'steps;
                        }
                    }
                    Err(e @ (FemError::Singular { .. } | FemError::ReturnMapping(_))) => {
                        log::info!("reference increment failed: {e}");
                        self.model.discard_trial();
                        cutbacks += 1;
                        if !inc.cut_back() {
                            converged = false;
                            break 'steps;
                        }
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            load = target;
        }
        let u = self.model.committed_displacements();
        let interface_displacements = geo
            .layout
            .dofs()
            .iter()
            .map(|&d| u[dof(self.global_node[d / 2].expect("interface node kept"), d % 2)])
            .collect();
        Ok(ReferenceSolution {
            converged,
            increments,
            newton_iterations,
            cutbacks,
            max_patch_eqps: self.max_patch_eqps(),
            interface_displacements,
        })
    }
}

/// Builds and solves the monolithic reference of a case.
pub fn solve_reference(
    case: &CaseFile,
) -> Result<(ReferenceModel, ReferenceSolution), HarnessError> {
    let geo = super::build::build_geometry(case)?;
    let mut reference = build_reference(case, &geo)?;
    let sol = reference.solve(case, &geo)?;
    Ok((reference, sol))
}
