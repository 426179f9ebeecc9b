use std::path::{Path, PathBuf};

use super::{defend_image_batch, EvalError, EvaluationReport, CLASSES};
use crate::attacks::{apply_attack, AttackSpec};
use crate::data::RngStreams;
use crate::defense::EnsembleState;
use crate::nn::{Network, Tensor};

/// Side length in pixels of one heatmap cell.
pub const HEATMAP_CELL: usize = 16;

/// Pixel byte for a [0, 1] value: `round(255·v)`.
pub fn quantize(v: f32) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Binary graymap ("P5") of a row-major `width × height` image.
pub fn encode_pgm(width: usize, height: usize, pixels: &[f32]) -> Vec<u8> {
    let mut out = format!("P5 {width} {height} 255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| quantize(v)));
    out
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<PathBuf, EvalError> {
    std::fs::write(&path, bytes).map_err(|source| EvalError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// For each attack writes the clean, attacked and defended 28×28 image as
/// `NN_<attack>_{clean,attacked,defended}.pgm`, plus `grid.pgm` with one
/// column per attack and those three rows. `x_clean` is a single image.
pub fn emit_sample_grid(
    ens: &EnsembleState,
    classifier: &Network,
    x_clean: &Tensor,
    label: u8,
    roster: &[AttackSpec],
    dir: impl AsRef<Path>,
    seed: u64,
) -> Result<Vec<PathBuf>, EvalError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let (h, w) = (x_clean.shape()[2], x_clean.shape()[3]);
    let streams = RngStreams::new(seed);
    let cols = roster.len();
    let mut grid = vec![0.0f32; 3 * h * cols * w];
    let mut written = Vec::new();
    for (r, spec) in roster.iter().enumerate() {
        let attacked = apply_attack(spec, classifier, x_clean, &[label], &mut streams.derive("noise/grid", r as u64))?.adversarial;
        let (defended, _) = defend_image_batch(ens, &attacked)?;
        let tiles = [("clean", x_clean), ("attacked", &attacked), ("defended", &defended)];
        for (row, (name, img)) in tiles.iter().enumerate() {
            let px = img.row(0);
            let file = format!("{r:02}_{}_{name}.pgm", spec.kind.as_str().to_ascii_lowercase());
            written.push(write(dir.join(file), &encode_pgm(w, h, px))?);
            for y in 0..h {
                let dst = (row * h + y) * cols * w + r * w;
                grid[dst..dst + w].copy_from_slice(&px[y * w..(y + 1) * w]);
            }
        }
    }
    written.push(write(dir.join("grid.pgm"), &encode_pgm(cols * w, 3 * h, &grid))?);
    Ok(written)
}

/// Upscales a `rows × cols` grid of [0, 1] values into square cells.
fn cells_to_pgm(values: &[f32], rows: usize, cols: usize, cell: usize) -> Vec<u8> {
    let (w, h) = (cols * cell, rows * cell);
    let px: Vec<f32> = (0..h * w).map(|i| values[(i / w / cell) * cols + (i % w) / cell]).collect();
    encode_pgm(w, h, &px)
}

/// Per-generator heatmaps with one row per attack and one column per
/// class: accuracy on the samples the generator won, and its win counts
/// scaled by the largest count over all generators.
pub fn generator_heatmaps(report: &EvaluationReport, j: usize, cell: usize) -> (Vec<u8>, Vec<u8>) {
    let rows = report.attacks.len();
    let max_wins = report
        .attacks
        .iter()
        .flat_map(|a| a.wins.iter().flatten())
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f32;
    let mut acc = Vec::with_capacity(rows * CLASSES);
    let mut wins = Vec::with_capacity(rows * CLASSES);
    for a in &report.attacks {
        for c in 0..CLASSES {
            acc.push(a.generator_accuracy(j, c) as f32);
            wins.push(a.wins[j][c] as f32 / max_wins);
        }
    }
    (cells_to_pgm(&acc, rows, CLASSES, cell), cells_to_pgm(&wins, rows, CLASSES, cell))
}

/// Writes `generator_NN_accuracy.pgm` and `generator_NN_wins.pgm` for
/// every generator.
pub fn write_heatmaps(report: &EvaluationReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, EvalError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for j in 0..report.generators {
        let (acc, wins) = generator_heatmaps(report, j, HEATMAP_CELL);
        written.push(write(dir.join(format!("generator_{j:02}_accuracy.pgm")), &acc)?);
        written.push(write(dir.join(format!("generator_{j:02}_wins.pgm")), &wins)?);
    }
    Ok(written)
}
