//! Fully resolved micropolar flow through the perforated thin slab.
//!
//! Solves the coupled velocity/microrotation saddle problem on the resolved
//! eps-scale geometry with microrotation diffusion eps^2 Rc, records the
//! norms that enter the thin-film scaling laws, and compares eps-block
//! averaged velocities against the macroscopic Darcy solution.
//!
//! With slab height h and period eps the expected scalings are
//! ||u|| ~ eps^2 h^(1/2), ||Du|| ~ eps h^(1/2), ||w|| ~ eps h^(1/2),
//! ||Dw|| ~ h^(1/2).

use crate::cell::PermeabilitySet;
use crate::darcy::{ForcePreset, MacroSolution};
use crate::error::SolveError;
use crate::geometry::ThinDomainGeometry;
use crate::operators::{build_operators, Mesh, StaggeredField};
use crate::solver::{MicropolarSystem, PhysicalParams, SolveStats};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// One resolved solve, reduced to the quantities the scaling and Darcy
/// comparisons need.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub eps: f64,
    pub h: f64,
    pub params: PhysicalParams,
    pub f_preset: ForcePreset,
    pub g_preset: ForcePreset,
    pub u_norm: f64,
    pub grad_u_norm: f64,
    pub w_norm: f64,
    pub grad_w_norm: f64,
    pub stats: SolveStats,
    /// in-plane eps-blocks
    pub blocks: [usize; 2],
    /// eps^-2-scaled mean of (u1, u2) over each vertical eps-block column,
    /// the resolved estimate of the Darcy velocity U'
    pub block_u: (Array2<f64>, Array2<f64>),
}

/// Solve the resolved slab problem with in-plane forcing f = (f'(z'), 0)
/// and angular forcing g = eps (g'(z'), 0).
pub fn solve_resolved(
    geom: &ThinDomainGeometry,
    params: PhysicalParams,
    f_preset: ForcePreset,
    g_preset: ForcePreset,
    tol: f64,
) -> Result<ResolvedRun, SolveError> {
    let mesh = Mesh::from_thin_domain(geom);
    let ops = build_operators(&mesh);
    let maps = ops.maps.clone();
    let system = MicropolarSystem::new(ops, params, geom.eps * geom.eps * params.rc)?;

    let f = StaggeredField::sample(&maps, |axis, pos| {
        if axis < 2 {
            f_preset.eval([pos[0], pos[1]])[axis]
        } else {
            0.0
        }
    });
    let g = StaggeredField::sample(&maps, |axis, pos| {
        if axis < 2 {
            geom.eps * g_preset.eval([pos[0], pos[1]])[axis]
        } else {
            0.0
        }
    });
    let sol = system.solve(&f, &g, tol, None)?;

    let u_norm = sol.u.l2_norm();
    let w_norm = sol.w.l2_norm();
    let grad_u_norm = system.ops.grad_energy(&sol.u).sqrt();
    let grad_w_norm = system.ops.grad_energy(&sol.w).sqrt();

    let m = geom.cells_per_period;
    let blocks = [geom.n[0] / m, geom.n[1] / m];
    let nz = geom.n[2];
    let ca = [sol.u.component_cell_average(0), sol.u.component_cell_average(1)];
    let col_cells = (m * m * nz) as f64;
    let mut block_u = (
        Array2::zeros((blocks[0], blocks[1])),
        Array2::zeros((blocks[0], blocks[1])),
    );
    for comp in 0..2 {
        let out = if comp == 0 { &mut block_u.0 } else { &mut block_u.1 };
        for ((bi, bj), v) in out.indexed_iter_mut() {
            let mut s = 0.0;
            for i in bi * m..(bi + 1) * m {
                for j in bj * m..(bj + 1) * m {
                    for k in 0..nz {
                        s += ca[comp][(i, j, k)];
                    }
                }
            }
            // solid cells contribute zero: the column mean is the
            // zero-extended cell average, matching the Y-average convention
            *v = s / col_cells / (geom.eps * geom.eps);
        }
    }

    Ok(ResolvedRun {
        eps: geom.eps,
        h: geom.h,
        params,
        f_preset,
        g_preset,
        u_norm,
        grad_u_norm,
        w_norm,
        grad_w_norm,
        stats: sol.stats,
        blocks,
        block_u,
    })
}

/// One row of the scaling table: raw norms and the ratios that should stay
/// bounded (within a constant) as eps -> 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub eps: f64,
    pub h: f64,
    pub u_norm: f64,
    pub grad_u_norm: f64,
    pub w_norm: f64,
    pub grad_w_norm: f64,
    pub u_ratio: f64,
    pub grad_u_ratio: f64,
    pub w_ratio: f64,
    pub grad_w_ratio: f64,
}

impl ScalingRow {
    pub fn from_run(run: &ResolvedRun) -> Self {
        let sqrt_h = run.h.sqrt();
        ScalingRow {
            eps: run.eps,
            h: run.h,
            u_norm: run.u_norm,
            grad_u_norm: run.grad_u_norm,
            w_norm: run.w_norm,
            grad_w_norm: run.grad_w_norm,
            u_ratio: run.u_norm / (run.eps * run.eps * sqrt_h),
            grad_u_ratio: run.grad_u_norm / (run.eps * sqrt_h),
            w_ratio: run.w_norm / (run.eps * sqrt_h),
            grad_w_ratio: run.grad_w_norm / sqrt_h,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// log-log slopes of (||u||, ||Du||, ||w||, ||Dw||) against eps
    pub slopes: [f64; 4],
}

impl ScalingReport {
    /// max/min spread of each normalized ratio across the runs; a value
    /// close to 1 means the scaling law holds with a stable constant.
    pub fn ratio_spreads(&self) -> [f64; 4] {
        let mut spreads = [0.0; 4];
        for (s, pick) in spreads.iter_mut().zip([
            |r: &ScalingRow| r.u_ratio,
            |r: &ScalingRow| r.grad_u_ratio,
            |r: &ScalingRow| r.w_ratio,
            |r: &ScalingRow| r.grad_w_ratio,
        ]) {
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for row in &self.rows {
                lo = lo.min(pick(row));
                hi = hi.max(pick(row));
            }
            *s = hi / lo;
        }
        spreads
    }
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

pub fn scaling_report(runs: &[ResolvedRun]) -> Result<ScalingReport, SolveError> {
    let mut eps_values: Vec<f64> = runs.iter().map(|r| r.eps).collect();
    eps_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eps_values.dedup();
    if eps_values.len() < 2 {
        return Err(SolveError::InsufficientRuns);
    }
    let rows: Vec<ScalingRow> = runs.iter().map(ScalingRow::from_run).collect();
    let log_eps: Vec<f64> = rows.iter().map(|r| r.eps.ln()).collect();
    let mut slopes = [0.0; 4];
    for (s, pick) in slopes.iter_mut().zip([
        |r: &ScalingRow| r.u_norm,
        |r: &ScalingRow| r.grad_u_norm,
        |r: &ScalingRow| r.w_norm,
        |r: &ScalingRow| r.grad_w_norm,
    ]) {
        let log_norm: Vec<f64> = rows.iter().map(|r| pick(r).ln()).collect();
        *s = fit_slope(&log_eps, &log_norm);
    }
    Ok(ScalingReport { rows, slopes })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DarcyComparison {
    /// discrete L2 norm of U'_resolved - U'_darcy over the macro cells
    pub abs_l2: f64,
    /// abs_l2 relative to the L2 norm of U'_darcy
    pub rel_l2: f64,
}

/// Compare the eps-block averaged resolved velocity against the Darcy
/// velocity on the matching macro grid.
pub fn compare_with_darcy(
    run: &ResolvedRun,
    darcy: &MacroSolution,
    perm: &PermeabilitySet,
) -> Result<DarcyComparison, SolveError> {
    if perm.params != run.params {
        return Err(SolveError::InconsistentInputs(format!(
            "permeability computed at N2 = {}, Rc = {} but the resolved run used N2 = {}, Rc = {}",
            perm.params.n2, perm.params.rc, run.params.n2, run.params.rc
        )));
    }
    if darcy.grid.n != run.blocks {
        return Err(SolveError::InconsistentInputs(format!(
            "macro grid {:?} does not match the {:?} eps-blocks of the resolved run",
            darcy.grid.n, run.blocks
        )));
    }
    let mut diff2 = 0.0;
    let mut ref2 = 0.0;
    for (resolved, macro_u) in
        [(&run.block_u.0, &darcy.u.0), (&run.block_u.1, &darcy.u.1)]
    {
        for (&ru, &du) in resolved.iter().zip(macro_u.iter()) {
            diff2 += (ru - du) * (ru - du);
            ref2 += du * du;
        }
    }
    let area = darcy.grid.h()[0] * darcy.grid.h()[1];
    Ok(DarcyComparison {
        abs_l2: (area * diff2).sqrt(),
        rel_l2: (diff2 / ref2).sqrt(),
    })
}
