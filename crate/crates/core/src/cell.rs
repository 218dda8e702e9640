//! Local micropolar problems on the periodic reference cell and the
//! effective permeability matrices built from their solutions.
//!
//! For force direction i in {1,2,3} and slot k in {1,2} the cell problem is
//! the coupled micropolar system forced by the unit in-plane vector
//! e_i = (d_1i, d_2i, 0), placed in the momentum equation for k=1 and in
//! the angular momentum equation for k=2. The i=3 problems have zero
//! forcing and vanish; they are solved anyway as a cheap invariant check.
//!
//! Effective matrices, for i,j in {1,2}:
//!   (K_k)_ij = integral over Y_f of u^{j,k}_i
//!   (L_k)_ij = integral over Y_f of w^{j,k}_i
//! computed by averaging face values to cell centers and summing with the
//! uniform cell volume.

use crate::error::{ConfigError, SolveError};
use crate::geometry::{CellGeometry, ObstacleKind, ObstacleSpec};
use crate::operators::{build_operators, CellField, Mesh, StaggeredField};
use crate::solver::{MicropolarSystem, PhysicalParams, SolveStats};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Geometry description carried in permeability files and fingerprints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryMeta {
    pub kind: String,
    pub center: [f64; 3],
    /// sphere: [radius]; box: the three half extents;
    /// cylinder: [radius, half_height]
    pub size: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
    pub n: usize,
}

impl GeometryMeta {
    pub fn from_cell(geom: &CellGeometry) -> Result<Self, SolveError> {
        let obstacle = geom.obstacle.as_ref().ok_or(SolveError::SingularProblem)?;
        Ok(Self::from_obstacle(obstacle, geom.n))
    }

    pub fn from_obstacle(obstacle: &ObstacleSpec, n: usize) -> Self {
        let (kind, size, axis) = match &obstacle.kind {
            ObstacleKind::Sphere { radius } => ("sphere".to_string(), vec![*radius], None),
            ObstacleKind::Box { half_extents } => ("box".to_string(), half_extents.to_vec(), None),
            ObstacleKind::Cylinder { axis, radius, half_height } => {
                ("cylinder".to_string(), vec![*radius, *half_height], Some(*axis))
            }
        };
        GeometryMeta { kind, center: obstacle.center, size, axis, n }
    }

    pub fn to_obstacle(&self) -> Result<ObstacleSpec, ConfigError> {
        let kind = match (self.kind.as_str(), self.size.as_slice(), self.axis) {
            ("sphere", [radius], None) => ObstacleKind::Sphere { radius: *radius },
            ("box", [a, b, c], None) => ObstacleKind::Box { half_extents: [*a, *b, *c] },
            ("cylinder", [radius, half_height], Some(axis)) if axis < 3 => {
                ObstacleKind::Cylinder { axis, radius: *radius, half_height: *half_height }
            }
            _ => {
                return Err(ConfigError::Validation(format!(
                    "unrecognized geometry: kind={} size={:?} axis={:?}",
                    self.kind, self.size, self.axis
                )))
            }
        };
        Ok(ObstacleSpec { kind, center: self.center })
    }

    /// Content hash over the exact geometry parameters.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "kind={};center={:?};size={:?};axis={:?};n={}",
            self.kind, self.center, self.size, self.axis, self.n
        ));
        let d = h.finalize();
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Provenance shared by the solutions of one cell stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMeta {
    pub params: PhysicalParams,
    pub geometry: GeometryMeta,
    pub fingerprint: String,
    pub tol: f64,
}

#[derive(Debug)]
pub struct MicropolarCellSolution {
    /// force direction, 1-based as in the local problems
    pub i: usize,
    /// 1 forces the momentum equation, 2 the angular momentum equation
    pub k: usize,
    pub u: StaggeredField,
    pub w: StaggeredField,
    pub pi: CellField,
    pub stats: SolveStats,
    pub meta: CellMeta,
}

/// The fixed order of the six (i, k) cell problems.
pub const CELL_PROBLEMS: [(usize, usize); 6] =
    [(1, 1), (2, 1), (3, 1), (1, 2), (2, 2), (3, 2)];

fn cell_rhs(sys: &MicropolarSystem, i: usize, k: usize) -> Vec<f64> {
    let maps = sys.maps();
    let nu = maps.n_faces;
    let mut rhs = vec![0.0; sys.dim()];
    if i < 3 {
        // e_i has its single nonzero in component i-1; i=3 means zero forcing
        let offset = if k == 1 { 0 } else { nu };
        for (f, &(a, _)) in maps.face_list.iter().enumerate() {
            if a == i - 1 {
                rhs[offset + f] = 1.0;
            }
        }
    }
    rhs
}

fn solve_one(
    sys: &MicropolarSystem,
    meta: &CellMeta,
    i: usize,
    k: usize,
    tol: f64,
) -> Result<MicropolarCellSolution, SolveError> {
    let rhs = cell_rhs(sys, i, k);
    let (x, stats) = sys.solve_raw(&rhs, tol, None)?;
    let sol = sys.unpack(&x, stats);
    Ok(MicropolarCellSolution {
        i,
        k,
        u: sol.u,
        w: sol.w,
        pi: sol.p,
        stats,
        meta: meta.clone(),
    })
}

/// Solve a single local problem, assembling the system from scratch.
pub fn solve_cell_problem(
    geom: &CellGeometry,
    params: PhysicalParams,
    i: usize,
    k: usize,
    tol: f64,
) -> Result<MicropolarCellSolution, SolveError> {
    if !(1..=3).contains(&i) || !(1..=2).contains(&k) {
        return Err(SolveError::InconsistentInputs(format!("(i, k) = ({i}, {k}) out of range")));
    }
    let geometry = GeometryMeta::from_cell(geom)?;
    let fingerprint = geometry.fingerprint();
    let meta = CellMeta { params, geometry, fingerprint, tol };
    let ops = build_operators(&Mesh::from_cell(geom));
    let sys = MicropolarSystem::new(ops, params, params.rc)?;
    solve_one(&sys, &meta, i, k, tol)
}

/// Solve all six (i, k) problems concurrently over one shared system.
pub fn solve_all_cell_problems(
    geom: &CellGeometry,
    params: PhysicalParams,
    tol: f64,
) -> Result<Vec<MicropolarCellSolution>, SolveError> {
    let geometry = GeometryMeta::from_cell(geom)?;
    let fingerprint = geometry.fingerprint();
    let meta = CellMeta { params, geometry, fingerprint, tol };
    let ops = build_operators(&Mesh::from_cell(geom));
    let sys = MicropolarSystem::new(ops, params, params.rc)?;
    let sys = &sys;
    let meta_ref = &meta;
    let results: Vec<Result<MicropolarCellSolution, SolveError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = CELL_PROBLEMS
            .iter()
            .map(|&(i, k)| scope.spawn(move || solve_one(sys, meta_ref, i, k, tol)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("cell solve thread panicked")).collect()
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// relative symmetry defects; the first two are asserted, the cross
    /// relations are reported only
    #[serde(rename = "K1_symmetry")]
    pub k1_symmetry: f64,
    #[serde(rename = "L2_symmetry")]
    pub l2_symmetry: f64,
    #[serde(rename = "K2_symmetry")]
    pub k2_symmetry: f64,
    #[serde(rename = "K2_vs_L1_transpose")]
    pub k2_vs_l1t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermeabilitySet {
    pub k1: [[f64; 2]; 2],
    pub k2: [[f64; 2]; 2],
    pub l1: [[f64; 2]; 2],
    pub l2: [[f64; 2]; 2],
    pub params: PhysicalParams,
    pub geometry: GeometryMeta,
    pub fingerprint: String,
    pub tol: f64,
    pub residuals: ResidualReport,
}

fn frob(m: &[[f64; 2]; 2]) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

fn sym_defect(m: &[[f64; 2]; 2]) -> f64 {
    (m[0][1] - m[1][0]).abs() * std::f64::consts::SQRT_2 / frob(m).max(f64::MIN_POSITIVE)
}

/// Eigenvalues of the symmetrized 2x2 matrix, ascending.
pub fn sym_eigenvalues(m: &[[f64; 2]; 2]) -> (f64, f64) {
    let b = 0.5 * (m[0][1] + m[1][0]);
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - b * b;
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr - disc, 0.5 * tr + disc)
}

pub fn compute_permeabilities(
    solutions: &[MicropolarCellSolution],
) -> Result<PermeabilitySet, SolveError> {
    let first = solutions
        .first()
        .ok_or_else(|| SolveError::InconsistentInputs("no cell solutions given".into()))?;
    for s in solutions {
        if s.meta != first.meta {
            return Err(SolveError::InconsistentInputs(
                "cell solutions come from different geometries or parameters".into(),
            ));
        }
    }
    let find = |i: usize, k: usize| {
        solutions.iter().find(|s| s.i == i && s.k == k).ok_or_else(|| {
            SolveError::InconsistentInputs(format!("missing cell solution (i, k) = ({i}, {k})"))
        })
    };
    let volume = first.u.maps.cell_volume;
    let mut k_mats = [[[0.0f64; 2]; 2]; 2];
    let mut l_mats = [[[0.0f64; 2]; 2]; 2];
    for k in 1..=2 {
        for j in 1..=2 {
            let s = find(j, k)?;
            for i in 0..2 {
                k_mats[k - 1][i][j - 1] = volume * s.u.component_cell_average(i).sum();
                l_mats[k - 1][i][j - 1] = volume * s.w.component_cell_average(i).sum();
            }
        }
    }
    let [k1, k2] = k_mats;
    let [l1, l2] = l_mats;

    let residuals = ResidualReport {
        k1_symmetry: sym_defect(&k1),
        l2_symmetry: sym_defect(&l2),
        k2_symmetry: sym_defect(&k2),
        k2_vs_l1t: {
            let mut d = 0.0f64;
            for i in 0..2 {
                for j in 0..2 {
                    d += (k2[i][j] - l1[j][i]).powi(2);
                }
            }
            d.sqrt() / frob(&k2).max(frob(&l1)).max(f64::MIN_POSITIVE)
        },
    };
    let allowed = 1e-8;
    if residuals.k1_symmetry > allowed {
        return Err(SolveError::InvariantViolation {
            property: "K1 symmetry".into(),
            residual: residuals.k1_symmetry,
            allowed,
        });
    }
    if residuals.l2_symmetry > allowed {
        return Err(SolveError::InvariantViolation {
            property: "L2 symmetry".into(),
            residual: residuals.l2_symmetry,
            allowed,
        });
    }
    let (eig0, eig1) = sym_eigenvalues(&k1);
    if eig0 <= 0.0 {
        return Err(SolveError::NotPositiveDefinite { eig0, eig1 });
    }
    Ok(PermeabilitySet {
        k1,
        k2,
        l1,
        l2,
        params: first.meta.params,
        geometry: first.meta.geometry.clone(),
        fingerprint: first.meta.fingerprint.clone(),
        tol: first.meta.tol,
        residuals,
    })
}

/// Full cell stage: six solves plus assembly of the effective matrices.
pub fn run_cell_stage(
    geom: &CellGeometry,
    params: PhysicalParams,
    tol: f64,
) -> Result<(Vec<MicropolarCellSolution>, PermeabilitySet), SolveError> {
    let solutions = solve_all_cell_problems(geom, params, tol)?;
    let perm = compute_permeabilities(&solutions)?;
    Ok((solutions, perm))
}

/// On-disk representation of a PermeabilitySet (structured text, TOML).
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PermeabilityFile {
    tol: f64,
    fingerprint: String,
    params: ParamsSection,
    geometry: GeometryMeta,
    matrices: MatricesSection,
    residuals: ResidualReport,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsSection {
    #[serde(rename = "N2")]
    n2: f64,
    #[serde(rename = "Rc")]
    rc: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatricesSection {
    #[serde(rename = "K1")]
    k1: [f64; 4],
    #[serde(rename = "K2")]
    k2: [f64; 4],
    #[serde(rename = "L1")]
    l1: [f64; 4],
    #[serde(rename = "L2")]
    l2: [f64; 4],
}

fn flatten(m: &[[f64; 2]; 2]) -> [f64; 4] {
    [m[0][0], m[0][1], m[1][0], m[1][1]]
}

fn unflatten(v: &[f64; 4]) -> [[f64; 2]; 2] {
    [[v[0], v[1]], [v[2], v[3]]]
}

impl PermeabilitySet {
    /// Build a set from given matrices, without a backing cell stage.
    /// Used by tests and by macro-only runs with hand-specified physics.
    pub fn from_matrices(
        k1: [[f64; 2]; 2],
        k2: [[f64; 2]; 2],
        l1: [[f64; 2]; 2],
        l2: [[f64; 2]; 2],
        params: PhysicalParams,
        tol: f64,
    ) -> Self {
        let geometry = GeometryMeta {
            kind: "synthetic".into(),
            center: [0.0; 3],
            size: vec![],
            axis: None,
            n: 0,
        };
        let fingerprint = geometry.fingerprint();
        let residuals = ResidualReport {
            k1_symmetry: sym_defect(&k1),
            l2_symmetry: sym_defect(&l2),
            k2_symmetry: sym_defect(&k2),
            k2_vs_l1t: 0.0,
        };
        PermeabilitySet { k1, k2, l1, l2, params, geometry, fingerprint, tol, residuals }
    }

    pub fn to_toml_string(&self) -> String {
        let file = PermeabilityFile {
            tol: self.tol,
            fingerprint: self.fingerprint.clone(),
            params: ParamsSection { n2: self.params.n2, rc: self.params.rc },
            geometry: self.geometry.clone(),
            matrices: MatricesSection {
                k1: flatten(&self.k1),
                k2: flatten(&self.k2),
                l1: flatten(&self.l1),
                l2: flatten(&self.l2),
            },
            residuals: self.residuals,
        };
        toml::to_string_pretty(&file).expect("permeability serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml_string())
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        let file: PermeabilityFile =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(PermeabilitySet {
            k1: unflatten(&file.matrices.k1),
            k2: unflatten(&file.matrices.k2),
            l1: unflatten(&file.matrices.l1),
            l2: unflatten(&file.matrices.l2),
            params: PhysicalParams { n2: file.params.n2, rc: file.params.rc },
            geometry: file.geometry,
            fingerprint: file.fingerprint,
            tol: file.tol,
            residuals: file.residuals,
        })
    }
}
