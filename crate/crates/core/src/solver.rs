//! The coupled micropolar Stokes saddle-point system and its MINRES solver.
//!
//! Unknown layout: [u | w | p] with u, w on active faces and p on fluid
//! cells. The assembled matrix (cell volume scaled out) is
//!
//!   [  A        -2N^2 R    G ]
//!   [ -2N^2 R^T  rm A+4N^2 0 ]
//!   [  G^T       0         0 ]
//!
//! which is symmetric because the angular coupling uses R^T rather than a
//! second R assembly; the two agree to O(h^2). For 0 < N^2 < 1 the (u,w)
//! block is positive definite (the coupling is dominated by the two
//! Dirichlet energies via the curl inequality), so MINRES with a block
//! Jacobi preconditioner applies. The constant pressure mode is removed by
//! projecting the p slot to mean zero inside every operator application.

use crate::error::SolveError;
use crate::krylov::{cg, minres};
use crate::operators::{CellField, FieldMaps, OperatorSet, StaggeredField};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhysicalParams {
    /// coupling number N^2, strictly between 0 and 1
    pub n2: f64,
    /// microrotation viscosity ratio R_c > 0
    pub rc: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), SolveError> {
        // N^2 = 0 is the decoupled Stokes limit and shares the code path
        if !(self.n2 >= 0.0 && self.n2 < 1.0) {
            return Err(SolveError::InconsistentInputs(format!(
                "coupling number N^2 = {}: 0 <= N2 < 1 required",
                self.n2
            )));
        }
        if !(self.rc > 0.0) {
            return Err(SolveError::InconsistentInputs(format!("Rc = {} must be positive", self.rc)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug)]
pub struct FlowSolution {
    pub u: StaggeredField,
    pub w: StaggeredField,
    pub p: CellField,
    pub stats: SolveStats,
}

pub struct MicropolarSystem {
    pub ops: OperatorSet,
    pub params: PhysicalParams,
    /// microrotation diffusion coefficient in front of A in the w equation
    /// (R_c for the unit-cell problem, eps^2 R_c for resolved slabs)
    pub rm: f64,
    /// inverse block-Jacobi diagonal, pressure slot 1
    precond_inv: Vec<f64>,
}

impl MicropolarSystem {
    pub fn new(ops: OperatorSet, params: PhysicalParams, rm: f64) -> Result<Self, SolveError> {
        params.validate()?;
        if !(rm > 0.0) {
            return Err(SolveError::InconsistentInputs(format!(
                "microrotation diffusion {rm} must be positive"
            )));
        }
        let maps = &ops.maps;
        if maps.periodic && maps.n_cells == maps.n[0] * maps.n[1] * maps.n[2] {
            // fully periodic with no obstacle: constant velocities are in the
            // kernel and there is no Dirichlet surface to remove them
            return Err(SolveError::SingularProblem);
        }
        let nu = maps.n_faces;
        let np = maps.n_cells;
        let a_diag = ops.laplace.diagonal();
        let mut precond_inv = vec![1.0; 2 * nu + np];
        for f in 0..nu {
            precond_inv[f] = 1.0 / a_diag[f];
            precond_inv[nu + f] = 1.0 / (rm * a_diag[f] + 4.0 * params.n2);
        }
        Ok(MicropolarSystem { ops, params, rm, precond_inv })
    }

    pub fn maps(&self) -> &Arc<FieldMaps> {
        &self.ops.maps
    }

    pub fn dim(&self) -> usize {
        2 * self.ops.maps.n_faces + self.ops.maps.n_cells
    }

    pub fn default_max_iter(&self) -> usize {
        20 * (self.dim() as f64).sqrt().ceil() as usize
    }

    /// y = S x for the full saddle matrix.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nu = self.ops.maps.n_faces;
        let np = self.ops.maps.n_cells;
        let two_n2 = 2.0 * self.params.n2;
        let (xu, rest) = x.split_at(nu);
        let (xw, xp) = rest.split_at(nu);
        y.fill(0.0);
        {
            let (yu, yrest) = y.split_at_mut(nu);
            let (yw, yp) = yrest.split_at_mut(nu);
            self.ops.laplace.matvec_add(1.0, xu, yu);
            self.ops.rot.matvec_add(-two_n2, xw, yu);
            self.ops.grad.matvec_add(1.0, xp, yu);
            self.ops.rot.matvec_transpose_add(-two_n2, xu, yw);
            self.ops.laplace.matvec_add(self.rm, xw, yw);
            crate::sparse::axpy(4.0 * self.params.n2, xw, yw);
            self.ops.grad.matvec_transpose_add(1.0, xu, yp);
            debug_assert_eq!(yp.len(), np);
        }
    }

    fn project_pressure_slot(&self, v: &mut [f64]) {
        let nu = self.ops.maps.n_faces;
        let p = &mut v[2 * nu..];
        if p.is_empty() {
            return;
        }
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        for q in p.iter_mut() {
            *q -= mean;
        }
    }

    /// Solve S x = rhs for a packed right-hand side [f | g | 0].
    pub fn solve_raw(
        &self,
        rhs: &[f64],
        tol: f64,
        max_iter: Option<usize>,
    ) -> Result<(Vec<f64>, SolveStats), SolveError> {
        if rhs.len() != self.dim() {
            return Err(SolveError::InconsistentInputs(format!(
                "rhs length {} does not match system dimension {}",
                rhs.len(),
                self.dim()
            )));
        }
        let max_iter = max_iter.unwrap_or_else(|| self.default_max_iter());
        let mut x = vec![0.0; self.dim()];
        let project = |v: &mut [f64]| self.project_pressure_slot(v);
        let res = minres(
            |v: &[f64], y: &mut [f64]| self.apply(v, y),
            Some(|r: &[f64], z: &mut [f64]| {
                for i in 0..r.len() {
                    z[i] = self.precond_inv[i] * r[i];
                }
            }),
            Some(&project),
            rhs,
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
        self.project_pressure_slot(&mut x);
        Ok((x, SolveStats { iterations: res.iterations, residual: res.relative_residual }))
    }

    /// Solve with body force `f` and angular forcing `g` given as fields.
    pub fn solve(
        &self,
        f: &StaggeredField,
        g: &StaggeredField,
        tol: f64,
        max_iter: Option<usize>,
    ) -> Result<FlowSolution, SolveError> {
        let maps = &self.ops.maps;
        if !maps.compatible(&f.maps) || !maps.compatible(&g.maps) {
            return Err(SolveError::GeometryMismatch);
        }
        let nu = maps.n_faces;
        let mut rhs = vec![0.0; self.dim()];
        rhs[..nu].copy_from_slice(&f.data);
        rhs[nu..2 * nu].copy_from_slice(&g.data);
        let (x, stats) = self.solve_raw(&rhs, tol, max_iter)?;
        Ok(self.unpack(&x, stats))
    }

    pub fn unpack(&self, x: &[f64], stats: SolveStats) -> FlowSolution {
        let maps = &self.ops.maps;
        let nu = maps.n_faces;
        FlowSolution {
            u: StaggeredField { maps: maps.clone(), data: x[..nu].to_vec() },
            w: StaggeredField { maps: maps.clone(), data: x[nu..2 * nu].to_vec() },
            p: CellField { maps: maps.clone(), data: x[2 * nu..].to_vec() },
            stats,
        }
    }

    /// Discrete energy balance residual, relative:
    /// | u'Au - 4N^2 u'Rw + w'(rm A + 4N^2)w - u'f - w'g | / |u'f + w'g|.
    pub fn energy_residual(
        &self,
        sol: &FlowSolution,
        f: &StaggeredField,
        g: &StaggeredField,
    ) -> f64 {
        let a_uu = self.ops.laplace.quadratic_form(&sol.u.data, &sol.u.data);
        let a_ww = self.ops.laplace.quadratic_form(&sol.w.data, &sol.w.data);
        let mut rw = vec![0.0; self.ops.maps.n_faces];
        self.ops.rot.matvec(&sol.w.data, &mut rw);
        let u_rw = crate::sparse::dot(&sol.u.data, &rw);
        let w_norm2 = crate::sparse::dot(&sol.w.data, &sol.w.data);
        let lhs = a_uu - 4.0 * self.params.n2 * u_rw
            + self.rm * a_ww
            + 4.0 * self.params.n2 * w_norm2;
        let work = crate::sparse::dot(&sol.u.data, &f.data)
            + crate::sparse::dot(&sol.w.data, &g.data);
        (lhs - work).abs() / work.abs().max(f64::MIN_POSITIVE)
    }
}

/// Remove the discrete divergence of a face field by a pressure Poisson
/// solve: u <- u - G psi with G^T G psi = G^T u.
pub fn project_divergence_free(
    ops: &OperatorSet,
    u: &StaggeredField,
    tol: f64,
) -> Result<(StaggeredField, SolveStats), SolveError> {
    if !ops.maps.compatible(&u.maps) {
        return Err(SolveError::GeometryMismatch);
    }
    let nf = ops.maps.n_faces;
    let np = ops.maps.n_cells;
    let mut b = vec![0.0; np];
    ops.grad.matvec_transpose_add(1.0, &u.data, &mut b);
    let project = |v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        for q in v.iter_mut() {
            *q -= mean;
        }
    };
    let mut gp = vec![0.0; nf];
    let apply = |x: &[f64], y: &mut [f64]| {
        let mut gx = vec![0.0; nf];
        ops.grad.matvec(x, &mut gx);
        y.fill(0.0);
        ops.grad.matvec_transpose_add(1.0, &gx, y);
    };
    let mut psi = vec![0.0; np];
    let max_iter = 40 * (np as f64).sqrt().ceil() as usize + 100;
    let res = cg(
        apply,
        None::<fn(&[f64], &mut [f64])>,
        Some(&project),
        &b,
        &mut psi,
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
    ops.grad.matvec(&psi, &mut gp);
    let mut out = u.clone();
    for i in 0..nf {
        out.data[i] -= gp[i];
    }
    Ok((out, SolveStats { iterations: res.iterations, residual: res.relative_residual }))
}
