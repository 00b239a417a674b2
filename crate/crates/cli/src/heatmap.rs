//! Per-cell attention scores painted over the image grid.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use vgs_core::PixelGrid;

use crate::output::{CliError, CliResult};

/// Pixels per grid cell along each axis.
const CELL_PX: usize = 24;
/// Share of each pixel taken by the heat colour; the rest shows cell energy.
const HEAT_WEIGHT: f64 = 0.65;

// Stops of a dark-to-bright ramp close to the inferno colormap.
const RAMP: [[f64; 3]; 5] =
    [[0.0, 0.0, 4.0], [87.0, 16.0, 110.0], [188.0, 55.0, 84.0], [249.0, 142.0, 9.0], [252.0, 255.0, 164.0]];

fn ramp(x: f64) -> [f64; 3] {
    let x = x.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])]
}

/// Rescales to [0, 1]; a constant input maps to zeros.
fn unit_range(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// RGB bytes, row-major, `CELL_PX` pixels per cell.
pub fn render(grid: &PixelGrid, per_cell: &[f64]) -> (u32, u32, Vec<u8>) {
    let (h, w) = (grid.height(), grid.width());
    let heat = unit_range(per_cell);
    let energy: Vec<f64> = grid.cells().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let energy = unit_range(&energy);
    let (width, height) = (w * CELL_PX, h * CELL_PX);
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let p = (y / CELL_PX) * w + x / CELL_PX;
            let colour = ramp(heat[p]);
            let grey = 255.0 * energy[p];
            for c in colour {
                data.push((HEAT_WEIGHT * c + (1.0 - HEAT_WEIGHT) * grey).round() as u8);
            }
        }
    }
    (width as u32, height as u32, data)
}

pub fn write_png(path: &Path, grid: &PixelGrid, per_cell: &[f64]) -> CliResult<()> {
    let (width, height, data) = render(grid, per_cell);
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let fail = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => CliError::io(path, io),
        other => CliError::config(format!("{}: {other}", path.display())),
    };
    let mut writer = encoder.write_header().map_err(fail)?;
    writer.write_image_data(&data).map_err(fail)?;
    writer.finish().map_err(fail)
}
