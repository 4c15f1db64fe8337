//! Synthetic acquisition and device-side evaluation.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::chain::Strategy;
use crate::archive::{DataObject, Element};
use crate::identity::InstanceId;
use crate::par;
use crate::procedure::{Indication, Procedure};
use crate::semantics::tags;
use crate::time::Timestamp;

/// Synthetic amplitude model, in percent-FSH. Not calibrated to any physics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Noise is uniform in `[0, noise_max)`.
    pub noise_max: f32,
    /// Spot peaks are uniform in `[defect_min, defect_max)`.
    pub defect_min: f32,
    pub defect_max: f32,
    /// Random spot count is uniform in `0..=max_defects`.
    pub max_defects: u32,
    /// Largest random spot edge, in cells.
    pub max_spot: u16,
    /// Amplitude of the non-peak cells of a spot, as a fraction of the peak.
    pub shoulder: f32,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            noise_max: 10.0,
            defect_min: 30.0,
            defect_max: 95.0,
            max_defects: 2,
            max_spot: 3,
            shoulder: 0.75,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.noise_max > 0.0 && self.noise_max <= 100.0) {
            return Err("noise_max must lie in (0, 100]".into());
        }
        if !(self.defect_min >= 0.0 && self.defect_min < self.defect_max && self.defect_max <= 100.0) {
            return Err("need 0 <= defect_min < defect_max <= 100".into());
        }
        if !(self.shoulder > 0.0 && self.shoulder <= 1.0) {
            return Err("shoulder must lie in (0, 1]".into());
        }
        if self.max_spot == 0 {
            return Err("max_spot must be at least 1".into());
        }
        Ok(())
    }
}

/// Rectangular defect with its peak in the top-left cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSpot {
    pub row: u16,
    pub col: u16,
    #[serde(default = "one")]
    pub height: u16,
    #[serde(default = "one")]
    pub width: u16,
    pub peak: f32,
}

fn one() -> u16 {
    1
}

impl DefectSpot {
    pub fn fits(&self, rows: u16, cols: u16) -> bool {
        self.height >= 1
            && self.width >= 1
            && u32::from(self.row) + u32::from(self.height) <= u32::from(rows)
            && u32::from(self.col) + u32::from(self.width) <= u32::from(cols)
            && (0.0..=100.0).contains(&self.peak)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("grid shape mismatch: expected {expected} bytes, found {found}")]
    GridShapeMismatch { expected: usize, found: usize },
}

pub fn random_spots(rows: u16, cols: u16, noise: &NoiseModel, rng: &mut impl Rng) -> Vec<DefectSpot> {
    let k = rng.random_range(0..=noise.max_defects);
    (0..k)
        .map(|_| {
            let height = rng.random_range(1..=noise.max_spot.min(rows));
            let width = rng.random_range(1..=noise.max_spot.min(cols));
            DefectSpot {
                row: rng.random_range(0..=rows - height),
                col: rng.random_range(0..=cols - width),
                height,
                width,
                peak: rng.random_range(noise.defect_min..noise.defect_max),
            }
        })
        .collect()
}

/// Row-major amplitude grid: noise everywhere, spots laid over it.
pub fn synth_grid(rows: u16, cols: u16, noise: &NoiseModel, spots: &[DefectSpot], rng: &mut impl Rng) -> Vec<f32> {
    let (rows, cols) = (usize::from(rows), usize::from(cols));
    let mut grid: Vec<f32> = (0..rows * cols)
        .map(|_| rng.random_range(0.0..noise.noise_max))
        .collect();
    for s in spots {
        for r in 0..usize::from(s.height) {
            for c in 0..usize::from(s.width) {
                let v = if r == 0 && c == 0 {
                    s.peak
                } else {
                    s.peak * noise.shoulder
                };
                let cell = &mut grid[(usize::from(s.row) + r) * cols + usize::from(s.col) + c];
                *cell = cell.max(v);
            }
        }
    }
    grid
}

pub fn grid_bytes(grid: &[f32]) -> Vec<u8> {
    grid.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// What a station knows when it starts an acquisition.
#[derive(Debug, Clone)]
pub struct Setup<'a> {
    pub procedure: &'a Procedure,
    pub device: &'a InstanceId,
    pub calibration_due: Timestamp,
    /// Gateway metadata seed for the order.
    pub seed: &'a [Element],
}

/// One unstored acquisition. `spots` overrides the random defects.
pub fn acquire(
    setup: &Setup<'_>,
    uid: &str,
    at: Timestamp,
    noise: &NoiseModel,
    spots: Option<&[DefectSpot]>,
    rng: &mut impl Rng,
) -> DataObject {
    let p = setup.procedure;
    let spots = match spots {
        Some(s) => s.to_vec(),
        None => random_spots(p.rows, p.cols, noise, rng),
    };
    let grid = synth_grid(p.rows, p.cols, noise, &spots, rng);
    let mut obj = DataObject::new();
    obj.merge(setup.seed);
    obj.set_str(tags::OBJECT_UID, uid);
    obj.set(tags::CREATION, at.to_bytes().to_vec());
    obj.set_str(tags::METHOD_CODE, p.method.as_str());
    obj.set_str(tags::PROCEDURE_ID, &p.procedure_id);
    obj.set_str(tags::DEVICE_ID, &setup.device.canonical());
    obj.set(tags::CALIBRATION_DUE, setup.calibration_due.to_bytes().to_vec());
    obj.set(tags::ROWS, p.rows.to_le_bytes().to_vec());
    obj.set(tags::COLS, p.cols.to_le_bytes().to_vec());
    obj.set(tags::AMPLITUDE_GRID, grid_bytes(&grid));
    obj
}

fn read_u16(obj: &DataObject, tag: crate::semantics::TagCode) -> Option<u16> {
    obj.get(tag)?.try_into().ok().map(u16::from_le_bytes)
}

/// Cells at or above the detection floor, merged into 4-connected
/// components, each reported at its peak cell (first in row-major order on
/// ties). Indications come out in order of their first cell.
pub fn evaluate(obj: &DataObject, procedure: &Procedure) -> Result<Vec<Indication>, EvalError> {
    let raw = obj.get(tags::AMPLITUDE_GRID).unwrap_or_default();
    let (rows, cols) = match (read_u16(obj, tags::ROWS), read_u16(obj, tags::COLS)) {
        (Some(r), Some(c)) => (usize::from(r), usize::from(c)),
        _ => {
            return Err(EvalError::GridShapeMismatch {
                expected: 0,
                found: raw.len(),
            })
        }
    };
    if raw.len() != rows * cols * 4 || rows * cols == 0 {
        return Err(EvalError::GridShapeMismatch {
            expected: rows * cols * 4,
            found: raw.len(),
        });
    }
    let grid: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect();
    let hot = |i: usize| grid[i] >= procedure.detection_floor;

    let mut seen = vec![false; grid.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..grid.len() {
        if seen[start] || !hot(start) {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut peak, mut cells) = (start, 0u32);
        while let Some(i) = queue.pop_front() {
            cells += 1;
            if grid[i] > grid[peak] || (grid[i] == grid[peak] && i < peak) {
                peak = i;
            }
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if !seen[j] && hot(j) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
        out.push(Indication {
            row: (peak / cols) as u16,
            col: (peak % cols) as u16,
            cells,
            amplitude: grid[peak],
        });
    }
    Ok(out)
}

/// [`evaluate`] over many objects, results in input order.
pub fn evaluate_batch(
    objects: &[DataObject],
    procedure: &Procedure,
    strategy: Strategy,
) -> Vec<Result<Vec<Indication>, EvalError>> {
    let f = |o: &DataObject| evaluate(o, procedure);
    match strategy {
        Strategy::Sequential => par::map_seq(objects, f),
        Strategy::Parallel => par::map(objects, f),
    }
}
