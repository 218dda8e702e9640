//! The homogenized 2D Darcy problem on omega and the two-scale
//! reconstruction built from the cell solutions.
//!
//! Pressure p lives at cell centers of an n1 x n2 grid over the rectangle
//! (0,L1) x (0,L2). The weak form
//!
//!   integral K1 (f' - grad p) . grad q + K2 g' . grad q = 0,  no-flux walls
//!
//! is discretized with a mixed quadrature: the diagonal entries of K1 act
//! through two-point face differences (the classical 5-point flux, which
//! kills the checkerboard mode), while the cross terms act through averaged
//! nodal gradients (symmetric by construction, one-sided at the boundary).
//! Forces are sampled at every quadrature location (cells, faces, nodes), so
//! constant forces are absorbed by a discrete-linear pressure exactly, and
//! shifting a force by a *discrete* gradient changes nothing but p.

use crate::cell::{MicropolarCellSolution, PermeabilitySet, sym_eigenvalues};
use crate::error::SolveError;
use crate::krylov::cg;
use crate::operators::{CellField, StaggeredField};
use crate::sparse::CsrMatrix;
use crate::solver::SolveStats;
use ndarray::Array2;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroGrid {
    pub extent: [f64; 2],
    pub n: [usize; 2],
}

impl MacroGrid {
    pub fn new(extent: [f64; 2], n: [usize; 2]) -> Result<Self, SolveError> {
        if n[0] < 4 || n[1] < 4 {
            return Err(SolveError::InconsistentInputs(format!(
                "macro grid {}x{} needs at least 4 cells per axis",
                n[0], n[1]
            )));
        }
        if !(extent[0] > 0.0 && extent[1] > 0.0) {
            return Err(SolveError::InconsistentInputs(format!(
                "omega extent {extent:?} must be positive"
            )));
        }
        Ok(MacroGrid { extent, n })
    }

    pub fn h(&self) -> [f64; 2] {
        [self.extent[0] / self.n[0] as f64, self.extent[1] / self.n[1] as f64]
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.h();
        [(i as f64 + 0.5) * h[0], (j as f64 + 0.5) * h[1]]
    }

    pub fn cell_count(&self) -> usize {
        self.n[0] * self.n[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcePreset {
    Zero,
    /// (1, 0)
    Constant,
    /// (0, 1)
    ConstantY,
    /// grad of q = cos(pi z1) cos(pi z2)
    GradientCosine,
    /// (sin(pi z2), 0), divergence-free
    SolenoidalSine,
}

impl ForcePreset {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "zero" => ForcePreset::Zero,
            "constant" => ForcePreset::Constant,
            "constant_y" => ForcePreset::ConstantY,
            "gradient_cosine" => ForcePreset::GradientCosine,
            "solenoidal_sine" => ForcePreset::SolenoidalSine,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ForcePreset::Zero => "zero",
            ForcePreset::Constant => "constant",
            ForcePreset::ConstantY => "constant_y",
            ForcePreset::GradientCosine => "gradient_cosine",
            ForcePreset::SolenoidalSine => "solenoidal_sine",
        }
    }

    pub fn eval(&self, z: [f64; 2]) -> [f64; 2] {
        match self {
            ForcePreset::Zero => [0.0, 0.0],
            ForcePreset::Constant => [1.0, 0.0],
            ForcePreset::ConstantY => [0.0, 1.0],
            ForcePreset::GradientCosine => [
                -PI * (PI * z[0]).sin() * (PI * z[1]).cos(),
                -PI * (PI * z[0]).cos() * (PI * z[1]).sin(),
            ],
            ForcePreset::SolenoidalSine => [(PI * z[1]).sin(), 0.0],
        }
    }

    /// Conservative presets are absorbed by the pressure exactly (constant)
    /// or up to discretization error (gradient_cosine).
    pub fn is_conservative(&self) -> bool {
        matches!(
            self,
            ForcePreset::Zero
                | ForcePreset::Constant
                | ForcePreset::ConstantY
                | ForcePreset::GradientCosine
        )
    }
}

/// A force specification: either a named analytic preset or raw samples at
/// cell centers (CSV input).
#[derive(Debug, Clone)]
pub enum ForceField {
    Preset(ForcePreset),
    /// values at cell centers, shape n1 x n2
    Cells { fx: Array2<f64>, fy: Array2<f64> },
}

impl ForceField {
    /// Parse CSV text with header z1,z2,fx,fy, rows in row-major cell order.
    pub fn from_csv_str(text: &str, grid: &MacroGrid) -> Result<Self, SolveError> {
        let mut values = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (ln == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(SolveError::InconsistentInputs(format!(
                    "force CSV line {}: expected 4 columns, got {}",
                    ln + 1,
                    cols.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    SolveError::InconsistentInputs(format!(
                        "force CSV line {}: bad number {s:?}",
                        ln + 1
                    ))
                })
            };
            values.push([parse(cols[0])?, parse(cols[1])?, parse(cols[2])?, parse(cols[3])?]);
        }
        let [n1, n2] = grid.n;
        if values.len() != n1 * n2 {
            return Err(SolveError::InconsistentInputs(format!(
                "force CSV has {} rows, grid needs {}",
                values.len(),
                n1 * n2
            )));
        }
        let mut fx = Array2::zeros((n1, n2));
        let mut fy = Array2::zeros((n1, n2));
        for i in 0..n1 {
            for j in 0..n2 {
                let row = values[i * n2 + j];
                fx[(i, j)] = row[2];
                fy[(i, j)] = row[3];
            }
        }
        Ok(ForceField::Cells { fx, fy })
    }

    pub fn sample(&self, grid: &MacroGrid) -> Result<SampledForce, SolveError> {
        let [n1, n2] = grid.n;
        let h = grid.h();
        let sf = match self {
            ForceField::Preset(p) => {
                let eval = |z: [f64; 2]| p.eval(z);
                SampledForce {
                    fx_cells: Array2::from_shape_fn((n1, n2), |(i, j)| {
                        eval(grid.cell_center(i, j))[0]
                    }),
                    fy_cells: Array2::from_shape_fn((n1, n2), |(i, j)| {
                        eval(grid.cell_center(i, j))[1]
                    }),
                    fx_xfaces: Array2::from_shape_fn((n1 + 1, n2), |(i, j)| {
                        eval([i as f64 * h[0], (j as f64 + 0.5) * h[1]])[0]
                    }),
                    fy_yfaces: Array2::from_shape_fn((n1, n2 + 1), |(i, j)| {
                        eval([(i as f64 + 0.5) * h[0], j as f64 * h[1]])[1]
                    }),
                    fx_nodes: Array2::from_shape_fn((n1 + 1, n2 + 1), |(i, j)| {
                        eval([i as f64 * h[0], j as f64 * h[1]])[0]
                    }),
                    fy_nodes: Array2::from_shape_fn((n1 + 1, n2 + 1), |(i, j)| {
                        eval([i as f64 * h[0], j as f64 * h[1]])[1]
                    }),
                }
            }
            ForceField::Cells { fx, fy } => {
                if fx.dim() != (n1, n2) || fy.dim() != (n1, n2) {
                    return Err(SolveError::InconsistentInputs(format!(
                        "sampled force shape {:?} does not match grid {:?}",
                        fx.dim(),
                        grid.n
                    )));
                }
                let cell_avg = |arr: &Array2<f64>, cells: &[(usize, usize)]| {
                    cells.iter().map(|&(i, j)| arr[(i, j)]).sum::<f64>() / cells.len() as f64
                };
                let xface = |arr: &Array2<f64>| {
                    Array2::from_shape_fn((n1 + 1, n2), |(i, j)| {
                        let mut cells = Vec::new();
                        if i > 0 {
                            cells.push((i - 1, j));
                        }
                        if i < n1 {
                            cells.push((i, j));
                        }
                        cell_avg(arr, &cells)
                    })
                };
                let yface = |arr: &Array2<f64>| {
                    Array2::from_shape_fn((n1, n2 + 1), |(i, j)| {
                        let mut cells = Vec::new();
                        if j > 0 {
                            cells.push((i, j - 1));
                        }
                        if j < n2 {
                            cells.push((i, j));
                        }
                        cell_avg(arr, &cells)
                    })
                };
                let nodes = |arr: &Array2<f64>| {
                    Array2::from_shape_fn((n1 + 1, n2 + 1), |(i, j)| {
                        let mut cells = Vec::new();
                        for ci in [i.wrapping_sub(1), i] {
                            for cj in [j.wrapping_sub(1), j] {
                                if ci < n1 && cj < n2 {
                                    cells.push((ci, cj));
                                }
                            }
                        }
                        cell_avg(arr, &cells)
                    })
                };
                SampledForce {
                    fx_cells: fx.clone(),
                    fy_cells: fy.clone(),
                    fx_xfaces: xface(fx),
                    fy_yfaces: yface(fy),
                    fx_nodes: nodes(fx),
                    fy_nodes: nodes(fy),
                }
            }
        };
        if !sf.all_finite() {
            return Err(SolveError::InconsistentInputs("force contains non-finite values".into()));
        }
        Ok(sf)
    }
}

/// Force values at every quadrature location of the scheme.
#[derive(Debug, Clone)]
pub struct SampledForce {
    pub fx_cells: Array2<f64>,
    pub fy_cells: Array2<f64>,
    /// component 1 at x-faces, (n1+1) x n2
    pub fx_xfaces: Array2<f64>,
    /// component 2 at y-faces, n1 x (n2+1)
    pub fy_yfaces: Array2<f64>,
    pub fx_nodes: Array2<f64>,
    pub fy_nodes: Array2<f64>,
}

impl SampledForce {
    fn all_finite(&self) -> bool {
        [
            &self.fx_cells,
            &self.fy_cells,
            &self.fx_xfaces,
            &self.fy_yfaces,
            &self.fx_nodes,
            &self.fy_nodes,
        ]
        .iter()
        .all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Add the scheme's own discrete gradient of a cell field q at every
    /// quadrature location; solving with the shifted force changes only the
    /// pressure (by q minus its mean), to solver tolerance.
    pub fn add_discrete_gradient(&mut self, q: &Array2<f64>, grid: &MacroGrid) {
        let [n1, n2] = grid.n;
        let h = grid.h();
        assert_eq!(q.dim(), (n1, n2));
        for i in 1..n1 {
            for j in 0..n2 {
                self.fx_xfaces[(i, j)] += (q[(i, j)] - q[(i - 1, j)]) / h[0];
            }
        }
        for i in 0..n1 {
            for j in 1..n2 {
                self.fy_yfaces[(i, j)] += (q[(i, j)] - q[(i, j - 1)]) / h[1];
            }
        }
        for i in 0..=n1 {
            for j in 0..=n2 {
                let (gx, gy) = node_grad_coeffs(grid.n, h, i, j);
                self.fx_nodes[(i, j)] += apply_coeffs(&gx, q, n2);
                self.fy_nodes[(i, j)] += apply_coeffs(&gy, q, n2);
            }
        }
        let (dx, dy) = grad_at_cells(q, grid);
        self.fx_cells += &dx;
        self.fy_cells += &dy;
    }
}

fn apply_coeffs(coeffs: &[(usize, f64)], q: &Array2<f64>, n2: usize) -> f64 {
    coeffs.iter().map(|&(c, v)| v * q[(c / n2, c % n2)]).sum()
}

/// Coefficients of the averaged nodal gradient at node (i, j) as linear
/// combinations of cell values (linear index i*n2 + j). One-sided at the
/// boundary; exact for cellwise-linear fields everywhere.
fn node_grad_coeffs(
    n: [usize; 2],
    h: [f64; 2],
    i: usize,
    j: usize,
) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
    let [n1, n2] = n;
    let lin = |ci: usize, cj: usize| ci * n2 + cj;
    // in-axis stencil at plane index k of a size-m axis: centered two-point
    // across the node inside, second-order three-point at the walls
    // (derivative of the quadratic through the three nearest cell centers)
    let axis_stencil = |k: usize, m: usize, hd: f64| -> Vec<(usize, f64)> {
        if k == 0 {
            vec![(0, -2.0 / hd), (1, 3.0 / hd), (2, -1.0 / hd)]
        } else if k == m {
            vec![(m - 1, 2.0 / hd), (m - 2, -3.0 / hd), (m - 3, 1.0 / hd)]
        } else {
            vec![(k, 1.0 / hd), (k - 1, -1.0 / hd)]
        }
    };
    let rows: Vec<usize> = [j.wrapping_sub(1), j].into_iter().filter(|&r| r < n2).collect();
    let cols: Vec<usize> = [i.wrapping_sub(1), i].into_iter().filter(|&c| c < n1).collect();
    let mut gx = Vec::with_capacity(6);
    for &r in &rows {
        let rw = 1.0 / rows.len() as f64;
        for (ci, w) in axis_stencil(i, n1, h[0]) {
            gx.push((lin(ci, r), rw * w));
        }
    }
    let mut gy = Vec::with_capacity(6);
    for &c in &cols {
        let cw = 1.0 / cols.len() as f64;
        for (cj, w) in axis_stencil(j, n2, h[1]) {
            gy.push((lin(c, cj), cw * w));
        }
    }
    (gx, gy)
}

/// Cell-centered gradient: centered differences inside, one-sided two-point
/// at the boundary (both exact for linear fields).
pub fn grad_at_cells(p: &Array2<f64>, grid: &MacroGrid) -> (Array2<f64>, Array2<f64>) {
    let [n1, n2] = grid.n;
    let h = grid.h();
    let gx = Array2::from_shape_fn((n1, n2), |(i, j)| {
        if i == 0 {
            (-3.0 * p[(0, j)] + 4.0 * p[(1, j)] - p[(2, j)]) / (2.0 * h[0])
        } else if i == n1 - 1 {
            (3.0 * p[(n1 - 1, j)] - 4.0 * p[(n1 - 2, j)] + p[(n1 - 3, j)]) / (2.0 * h[0])
        } else {
            (p[(i + 1, j)] - p[(i - 1, j)]) / (2.0 * h[0])
        }
    });
    let gy = Array2::from_shape_fn((n1, n2), |(i, j)| {
        if j == 0 {
            (-3.0 * p[(i, 0)] + 4.0 * p[(i, 1)] - p[(i, 2)]) / (2.0 * h[1])
        } else if j == n2 - 1 {
            (3.0 * p[(i, n2 - 1)] - 4.0 * p[(i, n2 - 2)] + p[(i, n2 - 3)]) / (2.0 * h[1])
        } else {
            (p[(i, j + 1)] - p[(i, j - 1)]) / (2.0 * h[1])
        }
    });
    (gx, gy)
}

#[derive(Debug)]
pub struct MacroProblem {
    pub grid: MacroGrid,
    pub f: SampledForce,
    pub g: SampledForce,
    pub perm: PermeabilitySet,
}

impl MacroProblem {
    pub fn new(
        grid: MacroGrid,
        f: &ForceField,
        g: &ForceField,
        perm: PermeabilitySet,
    ) -> Result<Self, SolveError> {
        Ok(MacroProblem { grid, f: f.sample(&grid)?, g: g.sample(&grid)?, perm })
    }
}

#[derive(Debug)]
pub struct MacroSolution {
    pub grid: MacroGrid,
    /// mean-zero pressure at cell centers
    pub p: Array2<f64>,
    /// averaged in-plane velocity U' = K1 (f - grad p) + K2 g
    pub u: (Array2<f64>, Array2<f64>),
    /// averaged in-plane microrotation W' = L1 (f - grad p) + L2 g
    pub w: (Array2<f64>, Array2<f64>),
    pub stats: SolveStats,
    /// relative residual of the discrete flux balance
    pub flux_residual: f64,
}

fn assemble_darcy(
    grid: &MacroGrid,
    perm: &PermeabilitySet,
) -> (CsrMatrix, f64, f64, f64) {
    let [n1, n2] = grid.n;
    let h = grid.h();
    let nc = n1 * n2;
    let lin = |i: usize, j: usize| i * n2 + j;
    let a11 = perm.k1[0][0];
    let a22 = perm.k1[1][1];
    let a12 = 0.5 * (perm.k1[0][1] + perm.k1[1][0]);
    let mut t = Vec::with_capacity(12 * nc);
    let alpha_x = a11 * h[1] / h[0];
    for i in 1..n1 {
        for j in 0..n2 {
            let (w, e) = (lin(i - 1, j), lin(i, j));
            t.push((e, e, alpha_x));
            t.push((w, w, alpha_x));
            t.push((e, w, -alpha_x));
            t.push((w, e, -alpha_x));
        }
    }
    let alpha_y = a22 * h[0] / h[1];
    for i in 0..n1 {
        for j in 1..n2 {
            let (s, n) = (lin(i, j - 1), lin(i, j));
            t.push((n, n, alpha_y));
            t.push((s, s, alpha_y));
            t.push((n, s, -alpha_y));
            t.push((s, n, -alpha_y));
        }
    }
    if a12 != 0.0 {
        for i in 0..=n1 {
            for j in 0..=n2 {
                let wx = if i == 0 || i == n1 { 0.5 } else { 1.0 };
                let wy = if j == 0 || j == n2 { 0.5 } else { 1.0 };
                let w = wx * wy * h[0] * h[1] * a12;
                let (gx, gy) = node_grad_coeffs(grid.n, h, i, j);
                for &(cq, vq) in &gx {
                    for &(cp, vp) in &gy {
                        t.push((cq, cp, w * vq * vp));
                        t.push((cp, cq, w * vq * vp));
                    }
                }
            }
        }
    }
    (CsrMatrix::from_triplets(nc, nc, &t), a11, a22, a12)
}

fn assemble_rhs(
    grid: &MacroGrid,
    perm: &PermeabilitySet,
    f: &SampledForce,
    g: &SampledForce,
    a11: f64,
    a22: f64,
    a12: f64,
) -> Vec<f64> {
    let [n1, n2] = grid.n;
    let h = grid.h();
    let lin = |i: usize, j: usize| i * n2 + j;
    let b_mat = perm.k2;
    let mut b = vec![0.0; n1 * n2];
    for i in 1..n1 {
        for j in 0..n2 {
            let c = a11 * f.fx_xfaces[(i, j)] + b_mat[0][0] * g.fx_xfaces[(i, j)];
            b[lin(i, j)] += c * h[1];
            b[lin(i - 1, j)] -= c * h[1];
        }
    }
    for i in 0..n1 {
        for j in 1..n2 {
            let c = a22 * f.fy_yfaces[(i, j)] + b_mat[1][1] * g.fy_yfaces[(i, j)];
            b[lin(i, j)] += c * h[0];
            b[lin(i, j - 1)] -= c * h[0];
        }
    }
    for i in 0..=n1 {
        for j in 0..=n2 {
            let wx = if i == 0 || i == n1 { 0.5 } else { 1.0 };
            let wy = if j == 0 || j == n2 { 0.5 } else { 1.0 };
            let w = wx * wy * h[0] * h[1];
            let cx = a12 * f.fy_nodes[(i, j)] + b_mat[0][1] * g.fy_nodes[(i, j)];
            let cy = a12 * f.fx_nodes[(i, j)] + b_mat[1][0] * g.fx_nodes[(i, j)];
            if cx == 0.0 && cy == 0.0 {
                continue;
            }
            let (gx, gy) = node_grad_coeffs(grid.n, h, i, j);
            for &(c, v) in &gx {
                b[c] += w * cx * v;
            }
            for &(c, v) in &gy {
                b[c] += w * cy * v;
            }
        }
    }
    b
}

pub fn solve_darcy(problem: &MacroProblem, tol: f64) -> Result<MacroSolution, SolveError> {
    let perm = &problem.perm;
    let (eig0, eig1) = sym_eigenvalues(&perm.k1);
    if eig0 <= 0.0 {
        return Err(SolveError::NotPositiveDefinite { eig0, eig1 });
    }
    let grid = problem.grid;
    let [n1, n2] = grid.n;
    let nc = n1 * n2;
    let (mat, a11, a22, a12) = assemble_darcy(&grid, perm);
    let b = assemble_rhs(&grid, perm, &problem.f, &problem.g, a11, a22, a12);

    let project = |v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        for q in v.iter_mut() {
            *q -= mean;
        }
    };
    let diag = mat.diagonal();
    let mut x = vec![0.0; nc];
    let max_iter = 20 * (nc as f64).sqrt().ceil() as usize + 200;
    let res = cg(
        |v: &[f64], y: &mut [f64]| mat.matvec(v, y),
        Some(|r: &[f64], z: &mut [f64]| {
            for i in 0..r.len() {
                z[i] = r[i] / diag[i];
            }
        }),
        Some(&project),
        &b,
        &mut x,
        tol,
        max_iter,
    );
    if !res.converged {
        return Err(SolveError::NoConvergence {
            iterations: res.iterations,
            residual: res.relative_residual,
            tol,
        });
    }
    let p = Array2::from_shape_fn((n1, n2), |(i, j)| x[i * n2 + j]);
    let (u, w) = reconstruct_averages(&grid, perm, &problem.f, &problem.g, &p);
    Ok(MacroSolution {
        grid,
        p,
        u,
        w,
        stats: SolveStats { iterations: res.iterations, residual: res.relative_residual },
        flux_residual: res.relative_residual,
    })
}

type VectorField2 = (Array2<f64>, Array2<f64>);

fn reconstruct_averages(
    grid: &MacroGrid,
    perm: &PermeabilitySet,
    f: &SampledForce,
    g: &SampledForce,
    p: &Array2<f64>,
) -> (VectorField2, VectorField2) {
    let [n1, n2] = grid.n;
    let (px, py) = grad_at_cells(p, grid);
    let mut u = (Array2::zeros((n1, n2)), Array2::zeros((n1, n2)));
    let mut w = (Array2::zeros((n1, n2)), Array2::zeros((n1, n2)));
    for i in 0..n1 {
        for j in 0..n2 {
            let d = [f.fx_cells[(i, j)] - px[(i, j)], f.fy_cells[(i, j)] - py[(i, j)]];
            let gv = [g.fx_cells[(i, j)], g.fy_cells[(i, j)]];
            u.0[(i, j)] = perm.k1[0][0] * d[0] + perm.k1[0][1] * d[1]
                + perm.k2[0][0] * gv[0]
                + perm.k2[0][1] * gv[1];
            u.1[(i, j)] = perm.k1[1][0] * d[0] + perm.k1[1][1] * d[1]
                + perm.k2[1][0] * gv[0]
                + perm.k2[1][1] * gv[1];
            w.0[(i, j)] = perm.l1[0][0] * d[0] + perm.l1[0][1] * d[1]
                + perm.l2[0][0] * gv[0]
                + perm.l2[0][1] * gv[1];
            w.1[(i, j)] = perm.l1[1][0] * d[0] + perm.l1[1][1] * d[1]
                + perm.l2[1][0] * gv[0]
                + perm.l2[1][1] * gv[1];
        }
    }
    (u, w)
}

/// Two-scale reconstruction from the identification formulas:
///   u_hat(z, y) = sum_j (f_j - d_j p)(z) u^{j,1}(y) + g_j(z) u^{j,2}(y)
/// and analogously for w_hat and pi_hat.
pub struct TwoScaleReconstruction<'a> {
    /// [j][k-1] -> solution for force direction j+1, slot k
    sols: [[&'a MicropolarCellSolution; 2]; 2],
    pub grid: MacroGrid,
    /// (f - grad p) at cells
    pub df: VectorField2,
    /// g at cells
    pub gc: VectorField2,
}

pub fn reconstruct_two_scale<'a>(
    cell_solutions: &'a [MicropolarCellSolution],
    macro_sol: &MacroSolution,
    problem: &MacroProblem,
) -> Result<TwoScaleReconstruction<'a>, SolveError> {
    let find = |j: usize, k: usize| {
        cell_solutions.iter().find(|s| s.i == j && s.k == k).ok_or_else(|| {
            SolveError::InconsistentInputs(format!("missing cell solution (i, k) = ({j}, {k})"))
        })
    };
    let sols = [[find(1, 1)?, find(1, 2)?], [find(2, 1)?, find(2, 2)?]];
    for row in &sols {
        for s in row {
            if s.meta.fingerprint != problem.perm.fingerprint {
                return Err(SolveError::InconsistentInputs(
                    "cell solutions do not match the permeability set's geometry".into(),
                ));
            }
        }
    }
    let (px, py) = grad_at_cells(&macro_sol.p, &macro_sol.grid);
    let df = (&problem.f.fx_cells - &px, &problem.f.fy_cells - &py);
    let gc = (problem.g.fx_cells.clone(), problem.g.fy_cells.clone());
    Ok(TwoScaleReconstruction { sols, grid: macro_sol.grid, df, gc })
}

impl<'a> TwoScaleReconstruction<'a> {
    fn coefficients(&self, cell: [usize; 2]) -> [[f64; 2]; 2] {
        let c = (cell[0], cell[1]);
        // [j][k-1]: weight of solution (j+1, k)
        [
            [self.df.0[c], self.gc.0[c]],
            [self.df.1[c], self.gc.1[c]],
        ]
    }

    fn combine(&self, cell: [usize; 2], pick: impl Fn(&MicropolarCellSolution) -> &[f64]) -> Vec<f64> {
        let coef = self.coefficients(cell);
        let len = pick(self.sols[0][0]).len();
        let mut out = vec![0.0; len];
        for j in 0..2 {
            for k in 0..2 {
                let c = coef[j][k];
                if c == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(pick(self.sols[j][k])) {
                    *o += c * v;
                }
            }
        }
        out
    }

    pub fn u_hat(&self, cell: [usize; 2]) -> StaggeredField {
        let maps = self.sols[0][0].u.maps.clone();
        StaggeredField { data: self.combine(cell, |s| &s.u.data), maps }
    }

    pub fn w_hat(&self, cell: [usize; 2]) -> StaggeredField {
        let maps = self.sols[0][0].w.maps.clone();
        StaggeredField { data: self.combine(cell, |s| &s.w.data), maps }
    }

    pub fn pi_hat(&self, cell: [usize; 2]) -> CellField {
        let maps = self.sols[0][0].pi.maps.clone();
        CellField { data: self.combine(cell, |s| &s.pi.data), maps }
    }

    /// Y_f-average of the in-plane reconstructed velocity at a macro cell.
    pub fn y_average_u_prime(&self, cell: [usize; 2]) -> [f64; 2] {
        let u = self.u_hat(cell);
        let v = u.maps.cell_volume;
        [
            v * u.component_cell_average(0).sum(),
            v * u.component_cell_average(1).sum(),
        ]
    }

    /// Y_f-integral of the vertical reconstructed velocity (should vanish).
    pub fn y_integral_u3(&self, cell: [usize; 2]) -> f64 {
        let u = self.u_hat(cell);
        u.maps.cell_volume * u.component_cell_average(2).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::run_cell_stage;
    use crate::geometry::{build_cell_geometry, ObstacleSpec};
    use crate::solver::PhysicalParams;

    const TOL: f64 = 1e-12;

    fn full_perm() -> PermeabilitySet {
        PermeabilitySet::from_matrices(
            [[2.0, 0.5], [0.5, 1.0]],
            [[0.1, -0.2], [0.3, 0.05]],
            [[0.2, 0.1], [0.1, 0.15]],
            [[0.4, 0.05], [0.05, 0.3]],
            PhysicalParams { n2: 0.5, rc: 1.0 },
            TOL,
        )
    }

    fn identity_perm() -> PermeabilitySet {
        PermeabilitySet::from_matrices(
            [[1.0, 0.0], [0.0, 1.0]],
            [[0.0; 2]; 2],
            [[0.0; 2]; 2],
            [[0.0; 2]; 2],
            PhysicalParams { n2: 0.5, rc: 1.0 },
            TOL,
        )
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    #[test]
    fn constant_force_fully_absorbed() {
        for preset in [ForcePreset::Constant, ForcePreset::ConstantY] {
            let grid = MacroGrid::new([1.0, 1.0], [16, 16]).unwrap();
            let problem = MacroProblem::new(
                grid,
                &ForceField::Preset(preset),
                &ForceField::Preset(ForcePreset::Zero),
                full_perm(),
            )
            .unwrap();
            let sol = solve_darcy(&problem, TOL).unwrap();
            let scale = 1.0;
            assert!(max_abs(&sol.u.0) <= 10.0 * TOL * scale, "{}", max_abs(&sol.u.0));
            assert!(max_abs(&sol.u.1) <= 10.0 * TOL * scale);
            // pressure is the linear ramp, up to its mean
            let h = grid.h();
            let dir = preset.eval([0.0, 0.0]);
            let expect = Array2::from_shape_fn((16, 16), |(i, j)| {
                dir[0] * (i as f64 + 0.5) * h[0] + dir[1] * (j as f64 + 0.5) * h[1]
            });
            let mean = expect.mean().unwrap();
            for (a, b) in sol.p.iter().zip(expect.iter()) {
                assert!((a - (b - mean)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn smooth_conservative_force_absorbed_to_discretization_error() {
        let mut errs = Vec::new();
        for n in [16usize, 32] {
            let grid = MacroGrid::new([1.0, 1.0], [n, n]).unwrap();
            let problem = MacroProblem::new(
                grid,
                &ForceField::Preset(ForcePreset::GradientCosine),
                &ForceField::Preset(ForcePreset::Zero),
                full_perm(),
            )
            .unwrap();
            let sol = solve_darcy(&problem, TOL).unwrap();
            errs.push(max_abs(&sol.u.0).max(max_abs(&sol.u.1)));
        }
        let h = 1.0 / 16.0;
        assert!(errs[0] <= 40.0 * h * h, "|U| = {} at n=16", errs[0]);
        assert!(errs[1] <= errs[0] / 2.5, "{errs:?}");
    }

    #[test]
    fn discrete_gauge_shift_changes_only_pressure() {
        let grid = MacroGrid::new([1.0, 1.0], [24, 24]).unwrap();
        let f = ForceField::Preset(ForcePreset::SolenoidalSine);
        let g = ForceField::Preset(ForcePreset::Zero);
        let base = MacroProblem::new(grid, &f, &g, full_perm()).unwrap();
        let sol0 = solve_darcy(&base, TOL).unwrap();

        let q = Array2::from_shape_fn((24, 24), |(i, j)| {
            let z = grid.cell_center(i, j);
            (2.0 * PI * z[0]).sin() * (PI * z[1]).cos()
        });
        let mut shifted = MacroProblem::new(grid, &f, &g, full_perm()).unwrap();
        shifted.f.add_discrete_gradient(&q, &grid);
        let sol1 = solve_darcy(&shifted, TOL).unwrap();

        let scale = max_abs(&sol0.u.0).max(max_abs(&sol0.u.1)).max(1e-30);
        for (a, b) in sol0.u.0.iter().zip(sol1.u.0.iter()) {
            assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
        }
        for (a, b) in sol0.u.1.iter().zip(sol1.u.1.iter()) {
            assert!((a - b).abs() <= 1e-8 * scale);
        }
        // and p shifts by q - mean(q)
        let qm = q.mean().unwrap();
        for ((a, b), qv) in sol0.p.iter().zip(sol1.p.iter()).zip(q.iter()) {
            assert!((b - a - (qv - qm)).abs() <= 1e-8);
        }
    }

    #[test]
    fn rotation_equivariance_in_the_isotropic_case() {
        let n = 16;
        let grid = MacroGrid::new([1.0, 1.0], [n, n]).unwrap();
        let f = ForceField::Preset(ForcePreset::SolenoidalSine);
        let g = ForceField::Preset(ForcePreset::Zero);
        let base = MacroProblem::new(grid, &f, &g, identity_perm()).unwrap();
        let sol = solve_darcy(&base, TOL).unwrap();

        // rotate force samples by -90 degrees: z' = (z2, L - z1), v' = (v2, -v1)
        let sf = &base.f;
        let rot = SampledForce {
            fx_cells: Array2::from_shape_fn((n, n), |(i, j)| sf.fy_cells[(n - 1 - j, i)]),
            fy_cells: Array2::from_shape_fn((n, n), |(i, j)| -sf.fx_cells[(n - 1 - j, i)]),
            fx_xfaces: Array2::from_shape_fn((n + 1, n), |(i, j)| {
                sf.fy_yfaces[(n - 1 - j, i)]
            }),
            fy_yfaces: Array2::from_shape_fn((n, n + 1), |(i, j)| {
                -sf.fx_xfaces[(n - j, i)]
            }),
            fx_nodes: Array2::from_shape_fn((n + 1, n + 1), |(i, j)| sf.fy_nodes[(n - j, i)]),
            fy_nodes: Array2::from_shape_fn((n + 1, n + 1), |(i, j)| -sf.fx_nodes[(n - j, i)]),
        };
        let rot_problem =
            MacroProblem { grid, f: rot, g: base.g.clone(), perm: identity_perm() };
        let rsol = solve_darcy(&rot_problem, TOL).unwrap();
        for i in 0..n {
            for j in 0..n {
                let u_old = [sol.u.0[(n - 1 - j, i)], sol.u.1[(n - 1 - j, i)]];
                assert!((rsol.u.0[(i, j)] - u_old[1]).abs() <= 1e-10);
                assert!((rsol.u.1[(i, j)] + u_old[0]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn rhs_telescopes_to_zero_total_flux() {
        let grid = MacroGrid::new([1.0, 1.0], [12, 12]).unwrap();
        let problem = MacroProblem::new(
            grid,
            &ForceField::Preset(ForcePreset::SolenoidalSine),
            &ForceField::Preset(ForcePreset::ConstantY),
            full_perm(),
        )
        .unwrap();
        let (_, a11, a22, a12) = assemble_darcy(&grid, &problem.perm);
        let b = assemble_rhs(&grid, &problem.perm, &problem.f, &problem.g, a11, a22, a12);
        let total: f64 = b.iter().sum();
        let scale: f64 = b.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        assert!(total.abs() <= 1e-13 * scale, "total flux {total}");
    }

    #[test]
    fn self_convergence_of_the_neumann_solve() {
        // K1 = I, solenoidal forcing; compare against a fine reference by
        // block-averaging the fine pressure
        let solve_at = |n: usize| {
            let grid = MacroGrid::new([1.0, 1.0], [n, n]).unwrap();
            let problem = MacroProblem::new(
                grid,
                &ForceField::Preset(ForcePreset::SolenoidalSine),
                &ForceField::Preset(ForcePreset::Zero),
                identity_perm(),
            )
            .unwrap();
            solve_darcy(&problem, 1e-13).unwrap()
        };
        let reference = solve_at(256);
        let err = |coarse: &MacroSolution, n: usize| {
            let r = 256 / n;
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let mut avg = 0.0;
                    for a in 0..r {
                        for b in 0..r {
                            avg += reference.p[(i * r + a, j * r + b)];
                        }
                    }
                    avg /= (r * r) as f64;
                    acc += (coarse.p[(i, j)] - avg).powi(2);
                }
            }
            (acc / (n * n) as f64).sqrt()
        };
        let e32 = err(&solve_at(32), 32);
        let e64 = err(&solve_at(64), 64);
        let order = (e32 / e64).log2();
        assert!(order >= 1.7, "order {order} (errors {e32}, {e64})");
    }

    #[test]
    fn csv_force_roundtrip_and_guards() {
        let grid = MacroGrid::new([1.0, 1.0], [4, 4]).unwrap();
        let mut text = String::from("z1,z2,fx,fy\n");
        for i in 0..4 {
            for j in 0..4 {
                let z = grid.cell_center(i, j);
                text += &format!("{},{},{},{}\n", z[0], z[1], i as f64, j as f64);
            }
        }
        let ff = ForceField::from_csv_str(&text, &grid).unwrap();
        let sf = ff.sample(&grid).unwrap();
        assert_eq!(sf.fx_cells[(2, 1)], 2.0);
        assert_eq!(sf.fy_cells[(2, 1)], 1.0);
        // interior x-face averages its two neighbor cells
        assert_eq!(sf.fx_xfaces[(2, 1)], 1.5);

        let short = "z1,z2,fx,fy\n0,0,1,2\n";
        assert!(ForceField::from_csv_str(short, &grid).is_err());
    }

    #[test]
    fn not_positive_definite_is_rejected() {
        let perm = PermeabilitySet::from_matrices(
            [[1.0, 0.0], [0.0, -1.0]],
            [[0.0; 2]; 2],
            [[0.0; 2]; 2],
            [[0.0; 2]; 2],
            PhysicalParams { n2: 0.5, rc: 1.0 },
            TOL,
        );
        let grid = MacroGrid::new([1.0, 1.0], [8, 8]).unwrap();
        let problem = MacroProblem::new(
            grid,
            &ForceField::Preset(ForcePreset::Constant),
            &ForceField::Preset(ForcePreset::Zero),
            perm,
        )
        .unwrap();
        assert!(matches!(
            solve_darcy(&problem, TOL),
            Err(SolveError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn two_scale_average_identity() {
        let geom = build_cell_geometry(&ObstacleSpec::sphere([0.0; 3], 0.25), 6).unwrap();
        let params = PhysicalParams { n2: 0.5, rc: 1.0 };
        let (sols, perm) = run_cell_stage(&geom, params, 1e-10).unwrap();
        let grid = MacroGrid::new([1.0, 1.0], [8, 8]).unwrap();
        let problem = MacroProblem::new(
            grid,
            &ForceField::Preset(ForcePreset::SolenoidalSine),
            &ForceField::Preset(ForcePreset::ConstantY),
            perm,
        )
        .unwrap();
        let sol = solve_darcy(&problem, 1e-12).unwrap();
        let rec = reconstruct_two_scale(&sols, &sol, &problem).unwrap();
        let scale = max_abs(&sol.u.0).max(max_abs(&sol.u.1));
        for i in 0..8 {
            for j in 0..8 {
                let avg = rec.y_average_u_prime([i, j]);
                assert!(
                    (avg[0] - sol.u.0[(i, j)]).abs() <= 1e-10 * scale,
                    "cell ({i},{j}): {} vs {}",
                    avg[0],
                    sol.u.0[(i, j)]
                );
                assert!((avg[1] - sol.u.1[(i, j)]).abs() <= 1e-10 * scale);
                // vertical component integrates to zero by obstacle symmetry
                assert!(rec.y_integral_u3([i, j]).abs() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_reconstruction() {
        let geom = build_cell_geometry(&ObstacleSpec::sphere([0.0; 3], 0.25), 6).unwrap();
        let params = PhysicalParams { n2: 0.5, rc: 1.0 };
        let (sols, perm) = run_cell_stage(&geom, params, 1e-10).unwrap();
        let grid = MacroGrid::new([1.0, 1.0], [8, 8]).unwrap();
        let problem = MacroProblem::new(
            grid,
            &ForceField::Preset(ForcePreset::Zero),
            &ForceField::Preset(ForcePreset::Zero),
            perm,
        )
        .unwrap();
        let sol = solve_darcy(&problem, 1e-12).unwrap();
        let rec = reconstruct_two_scale(&sols, &sol, &problem).unwrap();
        let u = rec.u_hat([3, 4]);
        assert!(u.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_permeability_rejected_in_reconstruction() {
        let geom = build_cell_geometry(&ObstacleSpec::sphere([0.0; 3], 0.25), 6).unwrap();
        let params = PhysicalParams { n2: 0.5, rc: 1.0 };
        let (sols, _) = run_cell_stage(&geom, params, 1e-10).unwrap();
        let grid = MacroGrid::new([1.0, 1.0], [8, 8]).unwrap();
        let problem = MacroProblem::new(
            grid,
            &ForceField::Preset(ForcePreset::Constant),
            &ForceField::Preset(ForcePreset::Zero),
            full_perm(),
        )
        .unwrap();
        let sol = solve_darcy(&problem, 1e-12).unwrap();
        assert!(matches!(
            reconstruct_two_scale(&sols, &sol, &problem),
            Err(SolveError::InconsistentInputs(_))
        ));
    }
}
