//! End-to-end acceptance suite. Each test covers one advertised guarantee
//! and prints a single PASS/FAIL line (visible with --nocapture); the long
//! resolved-sweep check is gated behind --ignored.

use microdarcy::cell::{run_cell_stage, solve_cell_problem, sym_eigenvalues, PermeabilitySet};
use microdarcy::darcy::{
    reconstruct_two_scale, solve_darcy, ForceField, ForcePreset, MacroGrid, MacroProblem,
    MacroSolution,
};
use microdarcy::geometry::{build_cell_geometry, build_thin_domain, CellGeometry, ObstacleSpec};
use microdarcy::operators::{build_operators, CellField, Mesh, OperatorSet, StaggeredField};
use microdarcy::resolved::{compare_with_darcy, scaling_report, solve_resolved};
use microdarcy::solver::{project_divergence_free, PhysicalParams};
use microdarcy::sparse::{dot, norm};
use microdarcy::unfolding;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn verdict(criterion: u32, description: &str, pass: bool) {
    println!(
        "{} criterion {criterion}: {description}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {description}");
}

fn sphere_cell(n: usize) -> CellGeometry {
    build_cell_geometry(&ObstacleSpec::sphere([0.0; 3], 0.25), n).unwrap()
}

fn random_face_field(ops: &OperatorSet, rng: &mut ChaCha8Rng) -> StaggeredField {
    let mut f = StaggeredField::zeros(&ops.maps);
    for v in &mut f.data {
        *v = rng.gen::<f64>() - 0.5;
    }
    f
}

fn random_cell_field(ops: &OperatorSet, rng: &mut ChaCha8Rng) -> CellField {
    let mut q = CellField::zeros(&ops.maps);
    for v in &mut q.data {
        *v = rng.gen::<f64>() - 0.5;
    }
    q
}

fn identity_perm() -> PermeabilitySet {
    PermeabilitySet::from_matrices(
        [[1.0, 0.0], [0.0, 1.0]],
        [[0.0; 2]; 2],
        [[0.0; 2]; 2],
        [[1.0, 0.0], [0.0, 1.0]],
        PhysicalParams { n2: 0.5, rc: 1.0 },
        TOL,
    )
}

fn frob(m: &[[f64; 2]; 2]) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

fn solve_macro(perm: PermeabilitySet, n: usize, f: ForcePreset, tol: f64) -> MacroSolution {
    let grid = MacroGrid::new([1.0, 1.0], [n, n]).unwrap();
    let problem = MacroProblem::new(
        grid,
        &ForceField::Preset(f),
        &ForceField::Preset(ForcePreset::Zero),
        perm,
    )
    .unwrap();
    solve_darcy(&problem, tol).unwrap()
}

#[test]
fn criterion_01_operator_adjointness() {
    let mut worst: f64 = 0.0;
    for n in [8usize, 16] {
        let ops = build_operators(&Mesh::from_cell(&sphere_cell(n)));
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..100 {
            let v = random_face_field(&ops, &mut rng);
            let q = random_cell_field(&ops, &mut rng);
            let div_v = ops.apply_div(&v);
            let grad_q = ops.apply_grad(&q);
            // <Dv, q> + <v, Gq> = 0 since D = -G^T structurally
            let s1 = dot(&div_v.data, &q.data);
            let s2 = dot(&v.data, &grad_q.data);
            let scale1 = norm(&div_v.data) * norm(&q.data) + norm(&v.data) * norm(&grad_q.data);
            worst = worst.max((s1 + s2).abs() / scale1);

            let a = random_face_field(&ops, &mut rng);
            let b = random_face_field(&ops, &mut rng);
            let r1 = ops.rot_energy_pairing(&a, &b).unwrap();
            let r2 = ops.rot_energy_pairing(&b, &a).unwrap();
            let ra = ops.apply_rot(&a);
            let scale2 = ops.maps.cell_volume * norm(&ra.data) * norm(&b.data);
            worst = worst.max((r1 - r2).abs() / scale2);
        }
    }
    verdict(
        1,
        "div/grad adjointness and rot pairing symmetry <= 1e-13 over 200 random fields",
        worst <= 1e-13,
    );
}

#[test]
fn criterion_02_rot_energy_dominated_by_gradient_energy() {
    let ops = build_operators(&Mesh::from_cell(&sphere_cell(16)));
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let raw = random_face_field(&ops, &mut rng);
        let (a, _) = project_divergence_free(&ops, &raw, 1e-12).unwrap();
        let ra = ops.apply_rot(&a);
        let lhs = ops.maps.cell_volume * dot(&ra.data, &ra.data);
        let rhs = ops.grad_energy(&a);
        worst = worst.max(lhs / rhs);
    }
    verdict(
        2,
        "||rot a||^2 <= 1.05 ||Da||^2 for 100 divergence-free random fields",
        worst <= 1.05,
    );
}

#[test]
fn criterion_03_third_direction_cell_problems_vanish() {
    let geom = sphere_cell(16);
    let params = PhysicalParams { n2: 0.5, rc: 1.0 };
    let mut worst: f64 = 0.0;
    for k in [1usize, 2] {
        let s = solve_cell_problem(&geom, params, 3, k, TOL).unwrap();
        worst = worst.max(s.u.l2_norm() + s.w.l2_norm());
    }
    verdict(3, "i = 3 cell solutions have ||u|| + ||w|| <= 10 tol", worst <= 10.0 * TOL);
}

#[test]
fn criterion_04_permeability_structure() {
    let geom = sphere_cell(16);
    let (_, perm) =
        run_cell_stage(&geom, PhysicalParams { n2: 0.5, rc: 1.0 }, TOL).unwrap();
    let (eig0, eig1) = sym_eigenvalues(&perm.k1);
    let symmetric = perm.residuals.k1_symmetry * frob(&perm.k1) <= 1e-8;
    let positive = eig0 > 0.0 && eig1 > 0.0;
    let isotropic = (perm.k1[0][0] - perm.k1[1][1]).abs() <= 1e-6 * perm.k1[0][0].abs();

    let (_, decoupled) =
        run_cell_stage(&geom, PhysicalParams { n2: 0.0, rc: 1.0 }, TOL).unwrap();
    let decoupling = frob(&decoupled.k2) <= 10.0 * TOL && frob(&decoupled.l1) <= 10.0 * TOL;

    verdict(
        4,
        "K1 symmetric positive definite and isotropic; K2, L1 vanish at N2 = 0",
        symmetric && positive && isotropic && decoupling,
    );
}

#[test]
fn criterion_05_conservative_forces_are_absorbed() {
    let mut worst: f64 = 0.0;
    for preset in [ForcePreset::Constant, ForcePreset::ConstantY] {
        for n in [64usize, 128] {
            let sol = solve_macro(identity_perm(), n, preset, TOL);
            let h = sol.grid.h();
            let u2: f64 = sol
                .u
                .0
                .iter()
                .zip(sol.u.1.iter())
                .map(|(&a, &b)| a * a + b * b)
                .sum();
            worst = worst.max((h[0] * h[1] * u2).sqrt());
        }
    }
    verdict(
        5,
        "constant force presets give ||U'|| <= 10 tol on 64^2 and 128^2",
        worst <= 10.0 * TOL,
    );
}

#[test]
fn criterion_06_darcy_self_convergence_order() {
    let reference = solve_macro(identity_perm(), 512, ForcePreset::SolenoidalSine, 1e-13);
    let error_vs_reference = |n: usize| {
        let sol = solve_macro(identity_perm(), n, ForcePreset::SolenoidalSine, 1e-13);
        let r = 512 / n;
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
                acc += (sol.p[(i, j)] - avg).powi(2);
            }
        }
        (acc / (n * n) as f64).sqrt()
    };
    let e64 = error_vs_reference(64);
    let e128 = error_vs_reference(128);
    let order = (e64 / e128).log2();
    verdict(
        6,
        "macro solve converges with order >= 1.8 between 64^2 and 128^2",
        order >= 1.8,
    );
}

#[test]
fn criterion_07_unfolding_identities() {
    let obstacle = ObstacleSpec::sphere([0.0; 3], 0.25);
    let geom = build_thin_domain([1.0, 1.0], 0.25, 0.5, &obstacle, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut field = Array3::zeros((geom.n[0], geom.n[1], geom.n[2]));
    for ((i, j, k), v) in field.indexed_iter_mut() {
        if geom.cell_mask[(i, j, k)] {
            *v = rng.gen::<f64>() - 0.5;
        }
    }
    let unfolded = unfolding::unfold(&geom, &field).unwrap();

    let direct = unfolding::dilated_l2_norm(&geom, &field);
    let mut worst = (unfolded.l2_norm() - direct).abs() / direct;
    for axis in 0..3 {
        let factor = if axis == 2 { geom.eps / geom.h } else { geom.eps };
        let lhs = unfolded.grad_norm(axis);
        let rhs = factor * unfolding::dilated_blockwise_grad_norm(&geom, &field, axis).unwrap();
        worst = worst.max((lhs - rhs).abs() / rhs);
    }
    let bitwise = unfolding::fold(&unfolded) == field;
    verdict(
        7,
        "unfolding norm and gradient-scaling identities <= 1e-13; fold o unfold bitwise",
        worst <= 1e-13 && bitwise,
    );
}

/// Long resolved sweep; run with `cargo test -- --ignored` (about 15 minutes).
#[test]
#[ignore]
fn criterion_08_resolved_scaling_and_darcy_trend() {
    let obstacle = ObstacleSpec::sphere([0.0; 3], 0.25);
    let params = PhysicalParams { n2: 0.5, rc: 1.0 };
    let tol = 1e-8;
    // m = 16 keeps the top obstacle layer at eps = 1/8 (its boundary
    // clearance is below the grid spacing of coarser resolutions)
    let m = 16;
    let mut runs = Vec::new();
    for eps in [0.25, 0.125] {
        let geom = build_thin_domain([1.0, 1.0], eps, eps.sqrt(), &obstacle, m).unwrap();
        runs.push(
            solve_resolved(&geom, params, ForcePreset::SolenoidalSine, ForcePreset::Zero, tol)
                .unwrap(),
        );
    }
    let scaling = scaling_report(&runs).unwrap();
    let spreads = scaling.ratio_spreads();
    let band_ok = spreads[0] <= 2.0 && spreads[2] <= 2.0;

    let (_, perm) = run_cell_stage(&sphere_cell(16), params, TOL).unwrap();
    let mut discrepancies = Vec::new();
    for run in &runs {
        let grid = MacroGrid::new([1.0, 1.0], run.blocks).unwrap();
        let problem = MacroProblem::new(
            grid,
            &ForceField::Preset(ForcePreset::SolenoidalSine),
            &ForceField::Preset(ForcePreset::Zero),
            perm.clone(),
        )
        .unwrap();
        let darcy = solve_darcy(&problem, tol).unwrap();
        discrepancies.push(compare_with_darcy(run, &darcy, &perm).unwrap().rel_l2);
    }
    let trend_ok = discrepancies[1] < discrepancies[0];
    println!(
        "ratio spreads {spreads:?}, darcy discrepancies {discrepancies:?}"
    );
    verdict(
        8,
        "scaling ratios within factor 2 and darcy discrepancy decreasing over the eps sweep",
        band_ok && trend_ok,
    );
}

#[test]
fn criterion_09_two_scale_consistency() {
    let geom = sphere_cell(16);
    let params = PhysicalParams { n2: 0.5, rc: 1.0 };
    let (solutions, perm) = run_cell_stage(&geom, params, TOL).unwrap();
    let grid = MacroGrid::new([1.0, 1.0], [8, 8]).unwrap();
    let problem = MacroProblem::new(
        grid,
        &ForceField::Preset(ForcePreset::SolenoidalSine),
        &ForceField::Preset(ForcePreset::Zero),
        perm,
    )
    .unwrap();
    let macro_sol = solve_darcy(&problem, 1e-12).unwrap();
    let recon = reconstruct_two_scale(&solutions, &macro_sol, &problem).unwrap();

    let mut worst_avg: f64 = 0.0;
    let mut worst_u3: f64 = 0.0;
    let u_scale = macro_sol
        .u
        .0
        .iter()
        .zip(macro_sol.u.1.iter())
        .fold(0.0f64, |m, (&a, &b)| m.max((a * a + b * b).sqrt()));
    for i in 0..8 {
        for j in 0..8 {
            let avg = recon.y_average_u_prime([i, j]);
            let d0 = (avg[0] - macro_sol.u.0[(i, j)]).abs();
            let d1 = (avg[1] - macro_sol.u.1[(i, j)]).abs();
            worst_avg = worst_avg.max(d0.max(d1) / u_scale);
            worst_u3 = worst_u3.max(recon.y_integral_u3([i, j]).abs());
        }
    }
    verdict(
        9,
        "Y_f-average of u_hat' equals U' to 1e-10; vertical flux integral <= 10 tol",
        worst_avg <= 1e-10 && worst_u3 <= 10.0 * TOL,
    );
}

#[test]
fn criterion_10_pipeline_determinism() {
    let bin = env!("CARGO_BIN_EXE_microdarcy");
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    std::fs::write(
        &config_path,
        microdarcy::config::RunConfig::default_toml().replace("n = 16", "n = 8"),
    )
    .unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("out{run}"));
        let status = std::process::Command::new(bin)
            .args(["pipeline", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "pipeline run {run} failed");
        outputs.push(std::fs::read(out.join("permeability.toml")).unwrap());
    }
    verdict(
        10,
        "repeated pipeline runs produce bitwise-identical permeability files",
        outputs[0] == outputs[1],
    );
}
