//! Krylov solvers: preconditioned conjugate gradients and MINRES.
//!
//! Both accept an optional projection applied after every operator and
//! preconditioner application; it is used to remove the constant pressure
//! null space without pinning a degree of freedom.

use crate::sparse::{axpy, dot, norm};

pub struct KrylovResult {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Preconditioned CG for symmetric positive (semi-)definite operators.
/// `apply` computes y = A x; `precond` computes y = M^-1 x (identity if None);
/// `project` restricts iterates to the orthogonal complement of a known
/// null space (for singular consistent systems).
pub fn cg<FA, FM>(
    apply: FA,
    precond: Option<FM>,
    project: Option<&dyn Fn(&mut [f64])>,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> KrylovResult
where
    FA: Fn(&[f64], &mut [f64]),
    FM: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut b = b.to_vec();
    if let Some(p) = project {
        p(&mut b);
        p(x);
    }
    let bnorm = norm(&b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return KrylovResult { iterations: 0, relative_residual: 0.0, converged: true };
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if let Some(p) = project {
        p(&mut r);
    }
    let mut z = vec![0.0; n];
    let apply_m = |r: &[f64], z: &mut [f64]| match &precond {
        Some(m) => m(r, z),
        None => z.copy_from_slice(r),
    };
    apply_m(&r, &mut z);
    if let Some(p) = project {
        p(&mut z);
    }
    let mut p_dir = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p_dir, &mut ap);
        if let Some(pr) = project {
            pr(&mut ap);
        }
        let pap = dot(&p_dir, &ap);
        if pap <= 0.0 {
            // operator lost definiteness on this subspace; give up
            return KrylovResult {
                iterations: it,
                relative_residual: norm(&r) / bnorm,
                converged: false,
            };
        }
        let alpha = rz / pap;
        axpy(alpha, &p_dir, x);
        axpy(-alpha, &ap, &mut r);
        let rn = norm(&r);
        if rn <= tol * bnorm {
            if let Some(pr) = project {
                pr(x);
            }
            return KrylovResult { iterations: it, relative_residual: rn / bnorm, converged: true };
        }
        apply_m(&r, &mut z);
        if let Some(pr) = project {
            pr(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p_dir[i] = z[i] + beta * p_dir[i];
        }
    }
    KrylovResult {
        iterations: max_iter,
        relative_residual: norm(&r) / bnorm,
        converged: false,
    }
}

/// Preconditioned MINRES for symmetric (indefinite) operators, after
/// Paige & Saunders. The preconditioner must be symmetric positive definite
/// on the working subspace.
pub fn minres<FA, FM>(
    apply: FA,
    precond: Option<FM>,
    project: Option<&dyn Fn(&mut [f64])>,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> KrylovResult
where
    FA: Fn(&[f64], &mut [f64]),
    FM: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut b = b.to_vec();
    if let Some(p) = project {
        p(&mut b);
    }
    let bnorm = norm(&b);
    x.fill(0.0);
    if bnorm == 0.0 {
        return KrylovResult { iterations: 0, relative_residual: 0.0, converged: true };
    }
    let apply_m = |r: &[f64], z: &mut [f64]| match &precond {
        Some(m) => m(r, z),
        None => z.copy_from_slice(r),
    };

    let mut r1 = b.clone();
    let mut y = vec![0.0; n];
    apply_m(&r1, &mut y);
    if let Some(p) = project {
        p(&mut y);
    }
    let beta1_sq = dot(&r1, &y);
    if beta1_sq <= 0.0 {
        return KrylovResult { iterations: 0, relative_residual: 1.0, converged: false };
    }
    let beta1 = beta1_sq.sqrt();

    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs: f64 = -1.0;
    let mut sn: f64 = 0.0;
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut r2 = r1.clone();
    let mut v = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    let true_residual = |x: &[f64], tmp: &mut Vec<f64>, apply: &FA| -> f64 {
        apply(x, tmp);
        if let Some(p) = project {
            p(tmp);
        }
        let mut s = 0.0;
        for i in 0..n {
            let d = b[i] - tmp[i];
            s += d * d;
        }
        s.sqrt() / bnorm
    };

    let mut check_threshold = tol;
    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        apply(&v, &mut tmp);
        if let Some(p) = project {
            p(&mut tmp);
        }
        y.copy_from_slice(&tmp);
        if itn >= 2 {
            let c = beta / oldb;
            for i in 0..n {
                y[i] -= c * r1[i];
            }
        }
        let alfa = dot(&v, &y);
        let c = alfa / beta;
        for i in 0..n {
            y[i] -= c * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        apply_m(&r2, &mut y);
        if let Some(p) = project {
            p(&mut y);
        }
        oldb = beta;
        let beta_sq = dot(&r2, &y);
        if beta_sq < 0.0 {
            // preconditioner lost definiteness
            let rr = true_residual(x, &mut tmp, &apply);
            return KrylovResult { iterations: itn, relative_residual: rr, converged: rr <= tol };
        }
        beta = beta_sq.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        for i in 0..n {
            let w1i = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1i - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }

        // phibar estimates the preconditioned residual norm; confirm with the
        // true residual before declaring convergence
        if phibar <= check_threshold * beta1 || itn == max_iter {
            let rr = true_residual(x, &mut tmp, &apply);
            if rr <= tol {
                return KrylovResult { iterations: itn, relative_residual: rr, converged: true };
            }
            check_threshold *= 0.1;
        }
    }
    let rr = true_residual(x, &mut tmp, &apply);
    KrylovResult { iterations: max_iter, relative_residual: rr, converged: rr <= tol }
}
