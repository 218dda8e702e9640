//! Discretized geometry: the periodic reference cell with an interior
//! obstacle, and the resolved thin perforated slab used for validation runs.
//!
//! Obstacle membership is a cell-center test (voxelization). The reference
//! cell is (-1/2,1/2)^3; the thin slab is omega x (0,h) minus an eps-periodic
//! lattice of rescaled obstacle copies.

use crate::error::GeometryError;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleKind {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    Cylinder { axis: usize, radius: f64, half_height: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    #[serde(flatten)]
    pub kind: ObstacleKind,
    pub center: [f64; 3],
}

impl ObstacleSpec {
    pub fn sphere(center: [f64; 3], radius: f64) -> Self {
        ObstacleSpec { kind: ObstacleKind::Sphere { radius }, center }
    }

    pub fn boxed(center: [f64; 3], half_extents: [f64; 3]) -> Self {
        ObstacleSpec { kind: ObstacleKind::Box { half_extents }, center }
    }

    /// Half-extent of the obstacle bounding box along each axis.
    pub fn extents(&self) -> [f64; 3] {
        match self.kind {
            ObstacleKind::Sphere { radius } => [radius; 3],
            ObstacleKind::Box { half_extents } => half_extents,
            ObstacleKind::Cylinder { axis, radius, half_height } => {
                let mut e = [radius; 3];
                e[axis] = half_height;
                e
            }
        }
    }

    /// Membership test for the open obstacle T, in cell coordinates.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        match self.kind {
            ObstacleKind::Sphere { radius } => {
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < radius * radius
            }
            ObstacleKind::Box { half_extents } => {
                (0..3).all(|a| d[a].abs() < half_extents[a])
            }
            ObstacleKind::Cylinder { axis, radius, half_height } => {
                let mut r2 = 0.0;
                for a in 0..3 {
                    if a != axis {
                        r2 += d[a] * d[a];
                    }
                }
                r2 < radius * radius && d[axis].abs() < half_height
            }
        }
    }

    /// Closure of T must stay at least `margin` away from the boundary of Y.
    fn check_inside_unit_cell(&self, margin: f64) -> Result<(), GeometryError> {
        let e = self.extents();
        for a in 0..3 {
            if self.center[a] + e[a] > 0.5 - margin || self.center[a] - e[a] < -0.5 + margin {
                return Err(GeometryError::ObstacleTouchesBoundary);
            }
        }
        Ok(())
    }
}

/// Discretized periodic unit cell Y with fluid part Y_f.
#[derive(Debug, Clone)]
pub struct CellGeometry {
    pub n: usize,
    pub spacing: f64,
    /// true = fluid cell
    pub cell_mask: Array3<bool>,
    /// face_masks[a][(i,j,k)]: lower face of cell (i,j,k) along axis a;
    /// active iff both (periodically wrapped) adjacent cells are fluid.
    pub face_masks: [Array3<bool>; 3],
    pub porosity: f64,
    pub obstacle: Option<ObstacleSpec>,
}

fn periodic_face_masks(cell_mask: &Array3<bool>, n: [usize; 3]) -> [Array3<bool>; 3] {
    let mut masks = [
        Array3::from_elem((n[0], n[1], n[2]), false),
        Array3::from_elem((n[0], n[1], n[2]), false),
        Array3::from_elem((n[0], n[1], n[2]), false),
    ];
    for a in 0..3 {
        for i in 0..n[0] {
            for j in 0..n[1] {
                for k in 0..n[2] {
                    let mut lo = [i, j, k];
                    lo[a] = (lo[a] + n[a] - 1) % n[a];
                    masks[a][(i, j, k)] = cell_mask[(i, j, k)] && cell_mask[(lo[0], lo[1], lo[2])];
                }
            }
        }
    }
    masks
}

/// Cell-center coordinate of cell index i at resolution n, in (-1/2,1/2).
pub fn cell_center(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 - 0.5
}

pub fn build_cell_geometry(shape: &ObstacleSpec, n: usize) -> Result<CellGeometry, GeometryError> {
    if n < 4 {
        return Err(GeometryError::InvalidResolution(format!("n = {n} < 4")));
    }
    let spacing = 1.0 / n as f64;
    shape.check_inside_unit_cell(spacing)?;
    let mut cell_mask = Array3::from_elem((n, n, n), true);
    let mut solid = 0usize;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let p = [cell_center(i, n), cell_center(j, n), cell_center(k, n)];
                if shape.contains(p) {
                    cell_mask[(i, j, k)] = false;
                    solid += 1;
                }
            }
        }
    }
    if solid == 0 {
        return Err(GeometryError::EmptyObstacle);
    }
    if solid == n * n * n {
        return Err(GeometryError::EmptyFluid);
    }
    let fluid = n * n * n - solid;
    let porosity = fluid as f64 * spacing.powi(3);
    let face_masks = periodic_face_masks(&cell_mask, [n, n, n]);
    Ok(CellGeometry {
        n,
        spacing,
        cell_mask,
        face_masks,
        porosity,
        obstacle: Some(shape.clone()),
    })
}

impl CellGeometry {
    /// Obstacle-free periodic cell; used by operator identity tests.
    /// Note porosity is 1, so the micropolar cell problem on it is singular.
    pub fn obstacle_free(n: usize) -> Self {
        let cell_mask = Array3::from_elem((n, n, n), true);
        let face_masks = periodic_face_masks(&cell_mask, [n, n, n]);
        CellGeometry {
            n,
            spacing: 1.0 / n as f64,
            cell_mask,
            face_masks,
            porosity: 1.0,
            obstacle: None,
        }
    }

    pub fn fluid_cell_count(&self) -> usize {
        self.cell_mask.iter().filter(|&&m| m).count()
    }
}

/// Resolved eps-scale perforated slab omega x (0,h) with homogeneous
/// Dirichlet boundary on all of the outer boundary and on obstacle faces.
#[derive(Debug, Clone)]
pub struct ThinDomainGeometry {
    pub eps: f64,
    pub h: f64,
    pub omega_extent: [f64; 2],
    pub cells_per_period: usize,
    /// grid cells per axis
    pub n: [usize; 3],
    /// grid spacing per axis (vertical spacing may differ from in-plane)
    pub spacing: [f64; 3],
    pub cell_mask: Array3<bool>,
    /// face_masks[a] has one extra plane along axis a; boundary planes inactive.
    pub face_masks: [Array3<bool>; 3],
    pub obstacle_count: usize,
    pub obstacle: ObstacleSpec,
    /// cells per eps-block (in-plane, in-plane, vertical) when the grid tiles
    /// exactly into eps x eps x eps blocks in physical coordinates.
    pub cells_per_block: Option<[usize; 3]>,
}

fn is_near_integer(x: f64) -> Option<usize> {
    let r = x.round();
    if (x - r).abs() < 1e-9 && r >= 1.0 {
        Some(r as usize)
    } else {
        None
    }
}

pub fn build_thin_domain(
    omega_extent: [f64; 2],
    eps: f64,
    h: f64,
    shape: &ObstacleSpec,
    m: usize,
) -> Result<ThinDomainGeometry, GeometryError> {
    if eps >= h {
        return Err(GeometryError::EpsNotBelowH { eps, h });
    }
    if m < 4 {
        return Err(GeometryError::InvalidResolution(format!("m = {m} < 4")));
    }
    let inv_eps = 1.0 / eps;
    if is_near_integer(inv_eps).is_none() {
        return Err(GeometryError::IncompatibleTiling { inv_eps });
    }
    // omega must be tiled exactly by eps-cells
    let blocks_x = is_near_integer(omega_extent[0] / eps)
        .ok_or(GeometryError::IncompatibleTiling { inv_eps: omega_extent[0] / eps })?;
    let blocks_y = is_near_integer(omega_extent[1] / eps)
        .ok_or(GeometryError::IncompatibleTiling { inv_eps: omega_extent[1] / eps })?;
    shape.check_inside_unit_cell(0.0)?;

    let dxy = eps / m as f64;
    let nx = blocks_x * m;
    let ny = blocks_y * m;
    // vertical cell count: spacing as close to the in-plane spacing as possible
    let nz = (h / dxy).round().max(1.0) as usize;
    let dz = h / nz as f64;
    if dz < 0.5 * dxy || dz > 1.5 * dxy {
        return Err(GeometryError::InvalidResolution(format!(
            "vertical spacing {dz} outside [0.5,1.5] x in-plane spacing {dxy}"
        )));
    }
    // exact vertical tiling: each eps-block spans an integer number of cells
    let cells_per_block = is_near_integer(eps / dz).map(|c| [m, m, c]);

    let n = [nx, ny, nz];
    let spacing = [dxy, dxy, dz];
    let mut cell_mask = Array3::from_elem((nx, ny, nz), true);
    let mut solid = 0usize;
    let mut obstacle_count = 0usize;

    // obstacle lattice: copies centered at eps*(k + 1/2), so that the
    // eps-cells tile omega x (0,h) from the lower corner
    let kz_max = (h / eps).ceil() as usize;
    let min_clear = dxy.max(dz);
    for k1 in 0..blocks_x {
        for k2 in 0..blocks_y {
            for k3 in 0..kz_max {
                let c = [
                    eps * (k1 as f64 + 0.5) + eps * shape.center[0],
                    eps * (k2 as f64 + 0.5) + eps * shape.center[1],
                    eps * (k3 as f64 + 0.5) + eps * shape.center[2],
                ];
                let e = shape.extents();
                // drop copies that touch (or come within one grid spacing of)
                // the outer boundary of the slab
                let bounds = [(0.0, omega_extent[0]), (0.0, omega_extent[1]), (0.0, h)];
                let inside = (0..3).all(|a| {
                    c[a] - eps * e[a] >= bounds[a].0 + min_clear
                        && c[a] + eps * e[a] <= bounds[a].1 - min_clear
                });
                if !inside {
                    continue;
                }
                obstacle_count += 1;
                // stamp: voxel test against the rescaled copy
                let lo = [
                    (((c[0] - eps * e[0]) / dxy).floor() as isize).max(0) as usize,
                    (((c[1] - eps * e[1]) / dxy).floor() as isize).max(0) as usize,
                    (((c[2] - eps * e[2]) / dz).floor() as isize).max(0) as usize,
                ];
                let hi = [
                    (((c[0] + eps * e[0]) / dxy).ceil() as usize).min(nx),
                    (((c[1] + eps * e[1]) / dxy).ceil() as usize).min(ny),
                    (((c[2] + eps * e[2]) / dz).ceil() as usize).min(nz),
                ];
                for i in lo[0]..hi[0] {
                    for j in lo[1]..hi[1] {
                        for k in lo[2]..hi[2] {
                            let p = [
                                ((i as f64 + 0.5) * dxy - c[0]) / eps,
                                ((j as f64 + 0.5) * dxy - c[1]) / eps,
                                ((k as f64 + 0.5) * dz - c[2]) / eps,
                            ];
                            let q = [
                                p[0] + shape.center[0],
                                p[1] + shape.center[1],
                                p[2] + shape.center[2],
                            ];
                            if shape.contains(q) && cell_mask[(i, j, k)] {
                                cell_mask[(i, j, k)] = false;
                                solid += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    if solid == 0 {
        return Err(GeometryError::ResolutionTooCoarse);
    }

    // Dirichlet face masks: one extra plane along the face's own axis,
    // boundary planes inactive, interior faces active iff both cells fluid.
    let mut face_masks = [
        Array3::from_elem((nx + 1, ny, nz), false),
        Array3::from_elem((nx, ny + 1, nz), false),
        Array3::from_elem((nx, ny, nz + 1), false),
    ];
    for a in 0..3 {
        let dims = face_masks[a].dim();
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                for k in 0..dims.2 {
                    let idx = [i, j, k];
                    if idx[a] == 0 || idx[a] == n[a] {
                        continue; // outer Dirichlet boundary
                    }
                    let mut lo = idx;
                    lo[a] -= 1;
                    if cell_mask[(idx[0], idx[1], idx[2])] && cell_mask[(lo[0], lo[1], lo[2])] {
                        face_masks[a][(i, j, k)] = true;
                    }
                }
            }
        }
    }

    Ok(ThinDomainGeometry {
        eps,
        h,
        omega_extent,
        cells_per_period: m,
        n,
        spacing,
        cell_mask,
        face_masks,
        obstacle_count,
        obstacle: shape.clone(),
        cells_per_block,
    })
}
