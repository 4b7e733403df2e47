//! Plans as JSON Lines: a header object `{"seed":S,"n_cells":N}` followed by
//! one cell object per line in plan order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::protocol::{ExperimentCell, ExperimentPlan};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    seed: u64,
    n_cells: usize,
}

pub fn write_plan_to<W: Write>(mut w: W, plan: &ExperimentPlan) -> Result<(), IoError> {
    serde_json::to_writer(&mut w, &Header { seed: plan.seed, n_cells: plan.cells.len() })?;
    w.write_all(b"\n")?;
    for cell in &plan.cells {
        serde_json::to_writer(&mut w, cell)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_plan(path: impl AsRef<Path>, plan: &ExperimentPlan) -> Result<(), IoError> {
    write_plan_to(BufWriter::new(File::create(path)?), plan)
}

pub fn read_plan_from<R: Read>(r: R) -> Result<ExperimentPlan, IoError> {
    let mut lines = BufReader::new(r).lines();
    let bad = |line: usize, reason: String| IoError::Plan { line, reason };
    let first = lines.next().ok_or_else(|| bad(1, "empty plan file".into()))??;
    let header: Header = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
    let mut cells = Vec::with_capacity(header.n_cells.min(1 << 16));
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cell: ExperimentCell = serde_json::from_str(&line).map_err(|e| bad(line_no, e.to_string()))?;
        cell.validate().map_err(|e| bad(line_no, e.to_string()))?;
        cells.push(cell);
    }
    if cells.len() != header.n_cells {
        return Err(bad(1, format!("header declares {} cells, found {}", header.n_cells, cells.len())));
    }
    Ok(ExperimentPlan { seed: header.seed, cells })
}

pub fn read_plan(path: impl AsRef<Path>) -> Result<ExperimentPlan, IoError> {
    read_plan_from(File::open(path)?)
}
