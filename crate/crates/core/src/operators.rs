//! Staggered (MAC) discrete operators on a masked grid.
//!
//! Pressure lives at cell centers, vector components on the faces normal to
//! them. A face is active iff both adjacent cells are fluid; inactive faces
//! carry the homogeneous Dirichlet value 0. The uniform cell volume V is
//! scaled out of every operator, so quadratures multiply by V explicitly.
//!
//! Operator inventory:
//!  - `grad`: cell scalars -> faces, two-point difference
//!  - `div`:  faces -> cell scalars, built as -grad^T so the discrete
//!    divergence theorem holds to the last bit
//!  - `laplace`: -Delta per face component, 7-point stencil closed by the
//!    mask (ghost value 0 at distance h across every inactive neighbor)
//!  - `rot`: curl; exact two-point differences on cell edges, then an
//!    8-point average back to faces (second order)

use crate::error::SolveError;
use crate::geometry::{CellGeometry, ThinDomainGeometry};
use crate::sparse::CsrMatrix;
use ndarray::Array3;
use std::sync::Arc;

/// Uniform view of either geometry used by the assembly routines.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub n: [usize; 3],
    pub h: [f64; 3],
    pub periodic: bool,
    pub origin: [f64; 3],
    pub cell_mask: Array3<bool>,
    pub face_masks: [Array3<bool>; 3],
}

impl Mesh {
    pub fn from_cell(geom: &CellGeometry) -> Self {
        Mesh {
            n: [geom.n; 3],
            h: [geom.spacing; 3],
            periodic: true,
            origin: [-0.5; 3],
            cell_mask: geom.cell_mask.clone(),
            face_masks: geom.face_masks.clone(),
        }
    }

    pub fn from_thin_domain(geom: &ThinDomainGeometry) -> Self {
        Mesh {
            n: geom.n,
            h: geom.spacing,
            periodic: false,
            origin: [0.0; 3],
            cell_mask: geom.cell_mask.clone(),
            face_masks: geom.face_masks.clone(),
        }
    }

    fn face_dims(&self, axis: usize) -> [usize; 3] {
        let mut d = self.n;
        if !self.periodic {
            d[axis] += 1;
        }
        d
    }
}

/// Index maps between (axis, grid index) and the packed unknown vectors.
#[derive(Debug)]
pub struct FieldMaps {
    pub n: [usize; 3],
    pub h: [f64; 3],
    pub periodic: bool,
    pub origin: [f64; 3],
    pub cell_volume: f64,
    /// per axis: face grid -> packed face index, -1 if inactive
    pub face_index: [Array3<isize>; 3],
    /// packed face index -> (axis, grid index)
    pub face_list: Vec<(usize, [usize; 3])>,
    pub n_faces: usize,
    /// cell grid -> packed fluid-cell index, -1 if solid
    pub cell_index: Array3<isize>,
    pub cell_list: Vec<[usize; 3]>,
    pub n_cells: usize,
}

impl FieldMaps {
    pub fn build(mesh: &Mesh) -> Arc<FieldMaps> {
        let mut face_index = [
            Array3::from_elem(as_tuple(mesh.face_dims(0)), -1isize),
            Array3::from_elem(as_tuple(mesh.face_dims(1)), -1isize),
            Array3::from_elem(as_tuple(mesh.face_dims(2)), -1isize),
        ];
        let mut face_list = Vec::new();
        for a in 0..3 {
            for ((i, j, k), &active) in mesh.face_masks[a].indexed_iter() {
                if active {
                    face_index[a][(i, j, k)] = face_list.len() as isize;
                    face_list.push((a, [i, j, k]));
                }
            }
        }
        let mut cell_index = Array3::from_elem(as_tuple(mesh.n), -1isize);
        let mut cell_list = Vec::new();
        for ((i, j, k), &fluid) in mesh.cell_mask.indexed_iter() {
            if fluid {
                cell_index[(i, j, k)] = cell_list.len() as isize;
                cell_list.push([i, j, k]);
            }
        }
        Arc::new(FieldMaps {
            n: mesh.n,
            h: mesh.h,
            periodic: mesh.periodic,
            origin: mesh.origin,
            cell_volume: mesh.h[0] * mesh.h[1] * mesh.h[2],
            n_faces: face_list.len(),
            face_index,
            face_list,
            n_cells: cell_list.len(),
            cell_index,
            cell_list,
        })
    }

    /// Packed index of the axis-`a` face at (possibly out-of-range) grid
    /// index `idx`; None if the face is inactive or outside a Dirichlet box.
    pub fn face_at(&self, axis: usize, idx: [isize; 3]) -> Option<usize> {
        let dims = self.face_index[axis].dim();
        let dims = [dims.0, dims.1, dims.2];
        let mut w = [0usize; 3];
        for d in 0..3 {
            if self.periodic {
                w[d] = idx[d].rem_euclid(self.n[d] as isize) as usize;
            } else {
                if idx[d] < 0 || idx[d] >= dims[d] as isize {
                    return None;
                }
                w[d] = idx[d] as usize;
            }
        }
        let f = self.face_index[axis][(w[0], w[1], w[2])];
        (f >= 0).then(|| f as usize)
    }

    /// Packed fluid-cell index at (possibly out-of-range) grid index.
    pub fn cell_at(&self, idx: [isize; 3]) -> Option<usize> {
        let mut w = [0usize; 3];
        for d in 0..3 {
            if self.periodic {
                w[d] = idx[d].rem_euclid(self.n[d] as isize) as usize;
            } else {
                if idx[d] < 0 || idx[d] >= self.n[d] as isize {
                    return None;
                }
                w[d] = idx[d] as usize;
            }
        }
        let c = self.cell_index[(w[0], w[1], w[2])];
        (c >= 0).then(|| c as usize)
    }

    /// Physical position of the center of an axis-`a` face.
    pub fn face_position(&self, axis: usize, idx: [usize; 3]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for d in 0..3 {
            p[d] = if d == axis {
                self.origin[d] + idx[d] as f64 * self.h[d]
            } else {
                self.origin[d] + (idx[d] as f64 + 0.5) * self.h[d]
            };
        }
        p
    }

    /// Physical position of a cell center.
    pub fn cell_position(&self, idx: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + (idx[0] as f64 + 0.5) * self.h[0],
            self.origin[1] + (idx[1] as f64 + 0.5) * self.h[1],
            self.origin[2] + (idx[2] as f64 + 0.5) * self.h[2],
        ]
    }

    /// Cheap structural compatibility check between two maps.
    pub fn compatible(&self, other: &FieldMaps) -> bool {
        self.n == other.n
            && self.periodic == other.periodic
            && self.n_faces == other.n_faces
            && self.n_cells == other.n_cells
    }
}

fn as_tuple(d: [usize; 3]) -> (usize, usize, usize) {
    (d[0], d[1], d[2])
}

/// Vector field with one value per active face.
#[derive(Debug, Clone)]
pub struct StaggeredField {
    pub maps: Arc<FieldMaps>,
    pub data: Vec<f64>,
}

impl StaggeredField {
    pub fn zeros(maps: &Arc<FieldMaps>) -> Self {
        StaggeredField { maps: maps.clone(), data: vec![0.0; maps.n_faces] }
    }

    /// Sample `f(component, position)` at every active face center.
    pub fn sample(maps: &Arc<FieldMaps>, f: impl Fn(usize, [f64; 3]) -> f64) -> Self {
        let data = maps
            .face_list
            .iter()
            .map(|&(a, idx)| f(a, maps.face_position(a, idx)))
            .collect();
        StaggeredField { maps: maps.clone(), data }
    }

    /// L2 norm with the cell-volume quadrature weight.
    pub fn l2_norm(&self) -> f64 {
        (self.maps.cell_volume * self.data.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Per-cell average of one component: mean of the two bounding faces
    /// (inactive faces contribute their Dirichlet value 0). Solid cells get 0.
    pub fn component_cell_average(&self, comp: usize) -> Array3<f64> {
        let maps = &self.maps;
        let mut out = Array3::zeros(as_tuple(maps.n));
        for ((i, j, k), v) in out.indexed_iter_mut() {
            if maps.cell_index[(i, j, k)] < 0 {
                continue;
            }
            let idx = [i as isize, j as isize, k as isize];
            let mut hi = idx;
            hi[comp] += 1;
            let lo_v = maps.face_at(comp, idx).map_or(0.0, |f| self.data[f]);
            let hi_v = maps.face_at(comp, hi).map_or(0.0, |f| self.data[f]);
            *v = 0.5 * (lo_v + hi_v);
        }
        out
    }
}

/// Scalar field with one value per fluid cell.
#[derive(Debug, Clone)]
pub struct CellField {
    pub maps: Arc<FieldMaps>,
    pub data: Vec<f64>,
}

impl CellField {
    pub fn zeros(maps: &Arc<FieldMaps>) -> Self {
        CellField { maps: maps.clone(), data: vec![0.0; maps.n_cells] }
    }

    pub fn sample(maps: &Arc<FieldMaps>, f: impl Fn([f64; 3]) -> f64) -> Self {
        let data = maps.cell_list.iter().map(|&idx| f(maps.cell_position(idx))).collect();
        CellField { maps: maps.clone(), data }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    pub fn subtract_mean(&mut self) {
        let m = self.mean();
        for v in self.data.iter_mut() {
            *v -= m;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        (self.maps.cell_volume * self.data.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn to_grid(&self) -> Array3<f64> {
        let mut out = Array3::zeros(as_tuple(self.maps.n));
        for (c, &idx) in self.maps.cell_list.iter().enumerate() {
            out[(idx[0], idx[1], idx[2])] = self.data[c];
        }
        out
    }
}

#[derive(Debug)]
pub struct OperatorSet {
    pub maps: Arc<FieldMaps>,
    /// faces x cells
    pub grad: CsrMatrix,
    /// cells x faces; exactly -grad^T
    pub div: CsrMatrix,
    /// faces x faces, -Delta with mask closure; symmetric positive definite
    /// on Dirichlet grids, semidefinite with the mask kernel removed on
    /// periodic obstacle-free grids
    pub laplace: CsrMatrix,
    /// faces x faces, averaged edge curl
    pub rot: CsrMatrix,
}

pub fn build_operators(mesh: &Mesh) -> OperatorSet {
    let maps = FieldMaps::build(mesh);
    let grad = assemble_grad(&maps);
    let div = grad.transpose().scaled(-1.0);
    let laplace = assemble_laplace(&maps);
    let rot = assemble_rot(&maps);
    OperatorSet { maps, grad, div, laplace, rot }
}

fn assemble_grad(maps: &FieldMaps) -> CsrMatrix {
    let mut t = Vec::with_capacity(2 * maps.n_faces);
    for (f, &(a, idx)) in maps.face_list.iter().enumerate() {
        let idx = [idx[0] as isize, idx[1] as isize, idx[2] as isize];
        let mut lo = idx;
        lo[a] -= 1;
        // the face is active, so both neighbors are fluid
        let hi_c = maps.cell_at(idx).expect("active face with solid upper cell");
        let lo_c = maps.cell_at(lo).expect("active face with solid lower cell");
        let inv_h = 1.0 / maps.h[a];
        t.push((f, hi_c, inv_h));
        t.push((f, lo_c, -inv_h));
    }
    CsrMatrix::from_triplets(maps.n_faces, maps.n_cells, &t)
}

fn assemble_laplace(maps: &FieldMaps) -> CsrMatrix {
    let mut t = Vec::with_capacity(7 * maps.n_faces);
    let diag: f64 = (0..3).map(|d| 2.0 / (maps.h[d] * maps.h[d])).sum();
    for (f, &(a, idx)) in maps.face_list.iter().enumerate() {
        let idx = [idx[0] as isize, idx[1] as isize, idx[2] as isize];
        t.push((f, f, diag));
        for d in 0..3 {
            let w = 1.0 / (maps.h[d] * maps.h[d]);
            for s in [-1isize, 1] {
                let mut nb = idx;
                nb[d] += s;
                if let Some(g) = maps.face_at(a, nb) {
                    t.push((f, g, -w));
                }
                // inactive neighbor: ghost value 0, nothing to add
            }
        }
    }
    CsrMatrix::from_triplets(maps.n_faces, maps.n_faces, &t)
}

fn assemble_rot(maps: &FieldMaps) -> CsrMatrix {
    // Edge-based curl: on the axis-a edge at grid index E,
    //   (rot phi)_a(E) = (phi_c(E) - phi_c(E - e_b)) / h_b
    //                  - (phi_b(E) - phi_b(E - e_c)) / h_c
    // with (a,b,c) cyclic; both differences are centered at the edge. The
    // face value is the average over the 8 surrounding edges.
    let mut t = Vec::with_capacity(32 * maps.n_faces);
    for (f, &(a, idx)) in maps.face_list.iter().enumerate() {
        let b = (a + 1) % 3;
        let c = (a + 2) % 3;
        let idx = [idx[0] as isize, idx[1] as isize, idx[2] as isize];
        let wb = 1.0 / (8.0 * maps.h[b]);
        let wc = 1.0 / (8.0 * maps.h[c]);
        for da in [-1isize, 0] {
            for db in [0isize, 1] {
                for dc in [0isize, 1] {
                    let mut e = idx;
                    e[a] += da;
                    e[b] += db;
                    e[c] += dc;
                    let mut e_mb = e;
                    e_mb[b] -= 1;
                    let mut e_mc = e;
                    e_mc[c] -= 1;
                    for (axis, at, w) in [
                        (c, e, wb),
                        (c, e_mb, -wb),
                        (b, e, -wc),
                        (b, e_mc, wc),
                    ] {
                        if let Some(g) = maps.face_at(axis, at) {
                            t.push((f, g, w));
                        }
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(maps.n_faces, maps.n_faces, &t)
}

impl OperatorSet {
    pub fn cell_volume(&self) -> f64 {
        self.maps.cell_volume
    }

    /// <rot a, b> with the face mass quadrature V.
    pub fn rot_energy_pairing(
        &self,
        a: &StaggeredField,
        b: &StaggeredField,
    ) -> Result<f64, SolveError> {
        if !self.maps.compatible(&a.maps) || !self.maps.compatible(&b.maps) {
            return Err(SolveError::GeometryMismatch);
        }
        let mut ra = vec![0.0; self.maps.n_faces];
        self.rot.matvec(&a.data, &mut ra);
        Ok(self.maps.cell_volume * crate::sparse::dot(&ra, &b.data))
    }

    /// Dirichlet energy ||Du||^2 = V u^T laplace u.
    pub fn grad_energy(&self, u: &StaggeredField) -> f64 {
        self.maps.cell_volume * self.laplace.quadratic_form(&u.data, &u.data)
    }

    pub fn apply_rot(&self, u: &StaggeredField) -> StaggeredField {
        let mut out = StaggeredField::zeros(&self.maps);
        self.rot.matvec(&u.data, &mut out.data);
        out
    }

    pub fn apply_div(&self, u: &StaggeredField) -> CellField {
        let mut out = CellField::zeros(&self.maps);
        self.div.matvec(&u.data, &mut out.data);
        out
    }

    pub fn apply_grad(&self, p: &CellField) -> StaggeredField {
        let mut out = StaggeredField::zeros(&self.maps);
        self.grad.matvec(&p.data, &mut out.data);
        out
    }
}
