//! Discrete unfolding operator on the dilated thin domain.
//!
//! The dilated domain omega x (0,1) is tiled by blocks of physical size
//! eps x eps x (eps/h). Unfolding copies the cell values of each block into
//! its own reference-cell array without interpolation, so it is a
//! measure-preserving reindexing: L2 norms are preserved exactly and
//! blockwise difference quotients pick up the exact scale factors
//! (eps in-plane, eps/h vertically) of the change of variables.
//!
//! Fields are cell-centered arrays over the full resolved grid, extended by
//! zero on solid cells.

use crate::error::GeometryError;
use crate::geometry::ThinDomainGeometry;
use ndarray::Array3;

/// Lattice cell index of a point in *dilated* coordinates
/// (z1, z2 in omega, z3 in (0,1)).
pub fn kappa(z: [f64; 3], eps: f64, h: f64) -> Result<[i64; 3], GeometryError> {
    let t = [z[0] / eps, z[1] / eps, h * z[2] / eps];
    let mut k = [0i64; 3];
    for a in 0..3 {
        if (t[a] - t[a].round()).abs() < 1e-12 {
            return Err(GeometryError::OnCellBoundary);
        }
        k[a] = t[a].floor() as i64;
    }
    Ok(k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedField {
    pub eps: f64,
    pub h: f64,
    /// number of blocks per axis
    pub blocks: [usize; 3],
    pub cells_per_block: [usize; 3],
    /// dilated cell volume, the shared quadrature weight
    pub cell_volume: f64,
    /// one reference-cell array per block, in row-major block order
    pub data: Vec<Array3<f64>>,
}

fn block_layout(geom: &ThinDomainGeometry) -> Result<([usize; 3], [usize; 3]), GeometryError> {
    // the vertical spacing does not divide eps exactly: no block structure
    let cpb = geom.cells_per_block.ok_or(GeometryError::IncompatibleTiling {
        inv_eps: geom.eps / geom.spacing[2],
    })?;
    let blocks = [geom.n[0] / cpb[0], geom.n[1] / cpb[1], geom.n[2] / cpb[2]];
    Ok((blocks, cpb))
}

/// Dilated cell volume dz1*dz2*dz3 with z3 = x3/h.
pub fn dilated_cell_volume(geom: &ThinDomainGeometry) -> f64 {
    geom.spacing[0] * geom.spacing[1] * geom.spacing[2] / geom.h
}

pub fn unfold(
    geom: &ThinDomainGeometry,
    field: &Array3<f64>,
) -> Result<UnfoldedField, GeometryError> {
    let (blocks, cpb) = block_layout(geom)?;
    assert_eq!(field.dim(), (geom.n[0], geom.n[1], geom.n[2]));
    let mut data = Vec::with_capacity(blocks[0] * blocks[1] * blocks[2]);
    for b0 in 0..blocks[0] {
        for b1 in 0..blocks[1] {
            for b2 in 0..blocks[2] {
                let block = Array3::from_shape_fn((cpb[0], cpb[1], cpb[2]), |(i, j, k)| {
                    field[(b0 * cpb[0] + i, b1 * cpb[1] + j, b2 * cpb[2] + k)]
                });
                data.push(block);
            }
        }
    }
    Ok(UnfoldedField {
        eps: geom.eps,
        h: geom.h,
        blocks,
        cells_per_block: cpb,
        cell_volume: dilated_cell_volume(geom),
        data,
    })
}

/// Inverse reindexing; bitwise identical to the unfolded source.
pub fn fold(unfolded: &UnfoldedField) -> Array3<f64> {
    let b = unfolded.blocks;
    let c = unfolded.cells_per_block;
    let mut out = Array3::zeros((b[0] * c[0], b[1] * c[1], b[2] * c[2]));
    for b0 in 0..b[0] {
        for b1 in 0..b[1] {
            for b2 in 0..b[2] {
                let block = &unfolded.data[(b0 * b[1] + b1) * b[2] + b2];
                for ((i, j, k), &v) in block.indexed_iter() {
                    out[(b0 * c[0] + i, b1 * c[1] + j, b2 * c[2] + k)] = v;
                }
            }
        }
    }
    out
}

impl UnfoldedField {
    /// L2 norm over (macro cells) x Y with the shared cellwise quadrature.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.data.iter().map(|b| b.iter().map(|v| v * v).sum::<f64>()).sum();
        (self.cell_volume * s).sqrt()
    }

    /// L2 norm of the blockwise one-sided y-difference quotient along `axis`,
    /// with unit reference-cell spacing 1/cells_per_block.
    pub fn grad_norm(&self, axis: usize) -> f64 {
        let inv_hy = self.cells_per_block[axis] as f64;
        let mut s = 0.0;
        for block in &self.data {
            s += blockwise_diff_sq(block, axis);
        }
        (self.cell_volume * s).sqrt() * inv_hy
    }
}

/// Sum of squared forward differences along `axis`, within one block.
fn blockwise_diff_sq(block: &Array3<f64>, axis: usize) -> f64 {
    let d = block.dim();
    let dims = [d.0, d.1, d.2];
    let mut s = 0.0;
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let idx = [i, j, k];
                if idx[axis] + 1 >= dims[axis] {
                    continue;
                }
                let mut up = idx;
                up[axis] += 1;
                let diff = block[(up[0], up[1], up[2])] - block[(idx[0], idx[1], idx[2])];
                s += diff * diff;
            }
        }
    }
    s
}

/// L2 norm of a cell field over the dilated domain.
pub fn dilated_l2_norm(geom: &ThinDomainGeometry, field: &Array3<f64>) -> f64 {
    let s: f64 = field.iter().map(|v| v * v).sum();
    (dilated_cell_volume(geom) * s).sqrt()
}

/// L2 norm of the one-sided z-difference quotient along `axis` in dilated
/// coordinates, restricted to pairs interior to an eps-block (the same pairs
/// the unfolded gradient uses).
pub fn dilated_blockwise_grad_norm(
    geom: &ThinDomainGeometry,
    field: &Array3<f64>,
    axis: usize,
) -> Result<f64, GeometryError> {
    let (blocks, cpb) = block_layout(geom)?;
    let dz = if axis == 2 { geom.spacing[2] / geom.h } else { geom.spacing[axis] };
    let mut s = 0.0;
    for b0 in 0..blocks[0] {
        for b1 in 0..blocks[1] {
            for b2 in 0..blocks[2] {
                let base = [b0 * cpb[0], b1 * cpb[1], b2 * cpb[2]];
                for i in 0..cpb[0] {
                    for j in 0..cpb[1] {
                        for k in 0..cpb[2] {
                            let idx = [base[0] + i, base[1] + j, base[2] + k];
                            if [i, j, k][axis] + 1 >= cpb[axis] {
                                continue;
                            }
                            let mut up = idx;
                            up[axis] += 1;
                            let diff = field[(up[0], up[1], up[2])]
                                - field[(idx[0], idx[1], idx[2])];
                            s += diff * diff;
                        }
                    }
                }
            }
        }
    }
    Ok((dilated_cell_volume(geom) * s).sqrt() / dz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_thin_domain, ObstacleSpec};
    use rand::Rng;
    use rand::SeedableRng;

    fn example_geom() -> ThinDomainGeometry {
        let shape = ObstacleSpec::sphere([0.0; 3], 0.25);
        build_thin_domain([1.0, 1.0], 0.25, 0.5, &shape, 8).unwrap()
    }

    fn random_field(geom: &ThinDomainGeometry, seed: u64) -> Array3<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut f = Array3::zeros((geom.n[0], geom.n[1], geom.n[2]));
        for ((i, j, k), v) in f.indexed_iter_mut() {
            if geom.cell_mask[(i, j, k)] {
                *v = rng.gen::<f64>() - 0.5;
            }
        }
        f
    }

    #[test]
    fn kappa_floor_semantics() {
        let (eps, h) = (0.25, 0.5);
        // dilated cell center
        let k = kappa([0.1, 0.6, 0.3], eps, h).unwrap();
        assert_eq!(k, [0, 2, 0]);
        // shifting by eps in z1 increments k1
        let k2 = kappa([0.1 + eps, 0.6, 0.3], eps, h).unwrap();
        assert_eq!(k2, [1, 2, 0]);
        // vertical period is eps/h in the dilated domain
        let k3 = kappa([0.1, 0.6, 0.3 + eps / h], eps, h).unwrap();
        assert_eq!(k3, [0, 2, 1]);
        // lattice boundary is rejected
        assert!(matches!(
            kappa([0.5, 0.6, 0.3], eps, h),
            Err(GeometryError::OnCellBoundary)
        ));
        assert!(matches!(
            kappa([0.1, 0.6, 0.5], eps, h),
            Err(GeometryError::OnCellBoundary)
        ));
    }

    #[test]
    fn constant_field_unfolds_to_identical_blocks() {
        let geom = example_geom();
        let field = Array3::from_elem((geom.n[0], geom.n[1], geom.n[2]), 3.5);
        let uf = unfold(&geom, &field).unwrap();
        assert_eq!(uf.blocks, [4, 4, 2]);
        assert_eq!(uf.cells_per_block, [8, 8, 8]);
        for b in &uf.data {
            assert_eq!(b, &uf.data[0]);
            assert!(b.iter().all(|&v| v == 3.5));
        }
    }

    #[test]
    fn norm_identity_is_exact() {
        let geom = example_geom();
        let field = random_field(&geom, 7);
        let uf = unfold(&geom, &field).unwrap();
        let a = uf.l2_norm();
        let b = dilated_l2_norm(&geom, &field);
        assert!((a - b).abs() <= 1e-13 * b, "{a} vs {b}");
    }

    #[test]
    fn gradient_scaling_identities_are_exact() {
        let geom = example_geom();
        let field = random_field(&geom, 19);
        let uf = unfold(&geom, &field).unwrap();
        // in-plane: d_y = eps * d_z; vertical: d_y3 = (eps/h) * d_z3
        for axis in 0..3 {
            let factor = if axis == 2 { geom.eps / geom.h } else { geom.eps };
            let lhs = uf.grad_norm(axis);
            let rhs = factor * dilated_blockwise_grad_norm(&geom, &field, axis).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-13 * rhs.max(1e-300),
                "axis {axis}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn fold_unfold_is_bitwise_identity() {
        let geom = example_geom();
        let field = random_field(&geom, 23);
        let uf = unfold(&geom, &field).unwrap();
        let back = fold(&uf);
        assert_eq!(field, back);
    }

    #[test]
    fn inexact_vertical_tiling_is_rejected() {
        let shape = ObstacleSpec::sphere([0.0; 3], 0.25);
        let geom = build_thin_domain([1.0, 1.0], 0.125, 0.125f64.sqrt(), &shape, 8).unwrap();
        assert!(geom.cells_per_block.is_none());
        let field = Array3::zeros((geom.n[0], geom.n[1], geom.n[2]));
        assert!(matches!(
            unfold(&geom, &field),
            Err(GeometryError::IncompatibleTiling { .. })
        ));
    }
}
