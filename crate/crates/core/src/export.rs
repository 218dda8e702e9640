//! Result serialization: CSV and legacy-VTK writers for macro solutions,
//! scaling tables, geometry masks, and a small self-contained plot writer.
//!
//! All writers format floats with full precision and fixed layouts so that
//! identical inputs produce byte-identical files.

use crate::darcy::MacroSolution;
use crate::error::ConfigError;
use crate::geometry::CellGeometry;
use crate::resolved::ScalingReport;
use std::fmt::Write as _;
use std::path::Path;

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ConfigError> {
    std::fs::write(path, bytes)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })
}

/// CSV with one row per macro cell, row-major in (z1, z2).
pub fn macro_csv_string(sol: &MacroSolution) -> String {
    let [n1, n2] = sol.grid.n;
    let mut out = String::from("z1,z2,p,U1,U2,W1,W2\n");
    for i in 0..n1 {
        for j in 0..n2 {
            let [z1, z2] = sol.grid.cell_center(i, j);
            writeln!(
                out,
                "{z1:.17e},{z2:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                sol.p[(i, j)],
                sol.u.0[(i, j)],
                sol.u.1[(i, j)],
                sol.w.0[(i, j)],
                sol.w.1[(i, j)],
            )
            .unwrap();
        }
    }
    out
}

pub fn write_macro_csv(sol: &MacroSolution, path: &Path) -> Result<(), ConfigError> {
    write_file(path, macro_csv_string(sol).as_bytes())
}

/// Legacy-VTK STRUCTURED_POINTS file with the cell-center values as points.
pub fn macro_vtk_string(sol: &MacroSolution) -> String {
    let [n1, n2] = sol.grid.n;
    let h = sol.grid.h();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("macroscopic Darcy solution\nASCII\nDATASET STRUCTURED_POINTS\n");
    writeln!(out, "DIMENSIONS {n1} {n2} 1").unwrap();
    writeln!(out, "ORIGIN {:.17e} {:.17e} 0", 0.5 * h[0], 0.5 * h[1]).unwrap();
    writeln!(out, "SPACING {:.17e} {:.17e} 1", h[0], h[1]).unwrap();
    writeln!(out, "POINT_DATA {}", n1 * n2).unwrap();
    out.push_str("SCALARS p double 1\nLOOKUP_TABLE default\n");
    // VTK structured points run x fastest
    for j in 0..n2 {
        for i in 0..n1 {
            writeln!(out, "{:.17e}", sol.p[(i, j)]).unwrap();
        }
    }
    for (name, field) in [("U", &sol.u), ("W", &sol.w)] {
        writeln!(out, "VECTORS {name} double").unwrap();
        for j in 0..n2 {
            for i in 0..n1 {
                writeln!(out, "{:.17e} {:.17e} 0", field.0[(i, j)], field.1[(i, j)]).unwrap();
            }
        }
    }
    out
}

pub fn write_macro_vtk(sol: &MacroSolution, path: &Path) -> Result<(), ConfigError> {
    write_file(path, macro_vtk_string(sol).as_bytes())
}

/// Fluid mask of the reference cell as a STRUCTURED_POINTS scalar field
/// (1 fluid, 0 solid), for visual inspection.
pub fn cell_mask_vtk_string(geom: &CellGeometry) -> String {
    let n = geom.n;
    let h = geom.spacing;
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("reference cell fluid mask\nASCII\nDATASET STRUCTURED_POINTS\n");
    writeln!(out, "DIMENSIONS {n} {n} {n}").unwrap();
    writeln!(out, "ORIGIN {0:.17e} {0:.17e} {0:.17e}", -0.5 + 0.5 * h).unwrap();
    writeln!(out, "SPACING {0:.17e} {0:.17e} {0:.17e}", h).unwrap();
    writeln!(out, "POINT_DATA {}", n * n * n).unwrap();
    out.push_str("SCALARS fluid int 1\nLOOKUP_TABLE default\n");
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                writeln!(out, "{}", geom.cell_mask[(i, j, k)] as u8).unwrap();
            }
        }
    }
    out
}

pub fn write_cell_mask_vtk(geom: &CellGeometry, path: &Path) -> Result<(), ConfigError> {
    write_file(path, cell_mask_vtk_string(geom).as_bytes())
}

/// Scaling table as CSV, one row per resolved run.
pub fn scaling_csv_string(report: &ScalingReport) -> String {
    let mut out = String::from(
        "eps,h,u_norm,grad_u_norm,w_norm,grad_w_norm,\
         u_ratio,grad_u_ratio,w_ratio,grad_w_ratio\n",
    );
    for r in &report.rows {
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.eps,
            r.h,
            r.u_norm,
            r.grad_u_norm,
            r.w_norm,
            r.grad_w_norm,
            r.u_ratio,
            r.grad_u_ratio,
            r.w_ratio,
            r.grad_w_ratio,
        )
        .unwrap();
    }
    out
}

pub fn write_scaling_csv(report: &ScalingReport, path: &Path) -> Result<(), ConfigError> {
    write_file(path, scaling_csv_string(report).as_bytes())
}

/// Pressure-contour image with a velocity quiver on a coarse sub-grid,
/// written as binary PPM (P6).
pub fn write_macro_plot(sol: &MacroSolution, path: &Path) -> Result<(), ConfigError> {
    write_file(path, &macro_plot_ppm(sol, 512))
}

fn diverging_color(t: f64) -> [u8; 3] {
    // blue (-1) over white (0) to red (+1)
    let t = t.clamp(-1.0, 1.0);
    let ramp = |x: f64| (255.0 * x.clamp(0.0, 1.0)).round() as u8;
    if t < 0.0 {
        [ramp(1.0 + t), ramp(1.0 + t), 255]
    } else {
        [255, ramp(1.0 - t), ramp(1.0 - t)]
    }
}

pub fn macro_plot_ppm(sol: &MacroSolution, width: usize) -> Vec<u8> {
    let [n1, n2] = sol.grid.n;
    let height = (width * n2 + n1 / 2) / n1;
    let mut pixels = vec![0u8; 3 * width * height];

    let p_max = sol.p.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for py in 0..height {
        for px in 0..width {
            // image rows run top to bottom, z2 runs bottom to top
            let i = (px * n1) / width;
            let j = n2 - 1 - (py * n2) / height;
            let rgb = diverging_color(sol.p[(i, j)] / p_max);
            pixels[3 * (py * width + px)..3 * (py * width + px) + 3].copy_from_slice(&rgb);
        }
    }

    let arrows = 16usize;
    let step = [n1.div_ceil(arrows).max(1), n2.div_ceil(arrows).max(1)];
    let u_max = sol
        .u
        .0
        .iter()
        .zip(sol.u.1.iter())
        .fold(0.0f64, |m, (&a, &b)| m.max((a * a + b * b).sqrt()))
        .max(f64::MIN_POSITIVE);
    let arrow_len = 0.45 * (width as f64 / arrows as f64);
    for i in (step[0] / 2..n1).step_by(step[0]) {
        for j in (step[1] / 2..n2).step_by(step[1]) {
            let x0 = ((i as f64 + 0.5) / n1 as f64 * width as f64) as i64;
            let y0 = ((1.0 - (j as f64 + 0.5) / n2 as f64) * height as f64) as i64;
            let dx = sol.u.0[(i, j)] / u_max * arrow_len;
            let dy = -sol.u.1[(i, j)] / u_max * arrow_len;
            draw_line(&mut pixels, width, height, x0, y0, x0 + dx as i64, y0 + dy as i64);
        }
    }

    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

fn draw_line(pixels: &mut [u8], width: usize, height: usize, x0: i64, y0: i64, x1: i64, y1: i64) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            let at = 3 * (y as usize * width + x as usize);
            pixels[at..at + 3].copy_from_slice(&[0, 0, 0]);
        }
    }
}
