//! Report and CSV writers. Reports are pretty JSON with a trailing newline
//! and never contain wall-clock data; that goes into `*.meta.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use pseudorbit::partition::{Partition, Partition2d};
use pseudorbit::simulate::OrbitPoint;
use pseudorbit::spectral::{ErgodicComponent, SpectrumReport};
use pseudorbit::Result;
use serde::Serialize;

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    /// `name` relative to the output directory (absolute paths are kept).
    pub fn path(&self, name: &Path) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &Path, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&p, text)?;
        Ok(p)
    }

    /// Writes `report` and a sibling `.meta.json` with the creation time.
    pub fn write_report<T: Serialize>(&self, name: &Path, report: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        let p = self.write_text(name, &text)?;
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = serde_json::json!({
            "report": name,
            "created_unix": secs,
            "version": env!("CARGO_PKG_VERSION"),
        });
        let mut meta_text = serde_json::to_string_pretty(&meta)?;
        meta_text.push('\n');
        self.write_text(&name.with_extension("meta.json"), &meta_text)?;
        Ok(p)
    }
}

/// `index,re,im,modulus,residual`.
pub fn eigenvalues_csv(rep: &SpectrumReport) -> String {
    let mut s = String::from("index,re,im,modulus,residual\n");
    for (i, (z, r)) in rep.eigenvalues.iter().zip(&rep.residuals).enumerate() {
        let _ = writeln!(s, "{i},{},{},{},{r:e}", z[0], z[1], z[0].hypot(z[1]));
    }
    s
}

/// `kind,component,cell,x_lo,x_hi,density` with the Lebesgue density on
/// each supported cell.
pub fn densities_csv(sets: &[(&str, &[ErgodicComponent])], p: &Partition) -> String {
    let mut s = String::from("kind,component,cell,x_lo,x_hi,density\n");
    for (kind, comps) in sets {
        for (k, c) in comps.iter().enumerate() {
            for &cell in &c.support {
                let (lo, hi) = p.cell_bounds(cell);
                let _ = writeln!(s, "{kind},{k},{cell},{lo},{hi},{}", c.density[cell] / p.h());
            }
        }
    }
    s
}

/// `cell,x_lo,x_hi,value` for a real vector on the partition.
pub fn vector_csv(v: &[f64], p: &Partition) -> String {
    let mut s = String::from("cell,x_lo,x_hi,value\n");
    for (i, x) in v.iter().enumerate() {
        let (lo, hi) = p.cell_bounds(i);
        let _ = writeln!(s, "{i},{lo},{hi},{x}");
    }
    s
}

/// `chain,step,x,y`; `y` is empty for one-dimensional chains.
pub fn orbits_csv<'a>(points: impl Iterator<Item = &'a OrbitPoint>) -> String {
    let mut s = String::from("chain,step,x,y\n");
    for p in points {
        let y = p.y.map(|y| y.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{y}", p.chain, p.step, p.x);
    }
    s
}

/// `cell_x,cell_y,count`, skipping empty cells.
pub fn hist2d_csv(grid: &Partition2d, counts: &[u64]) -> String {
    let mut s = String::from("cell_x,cell_y,count\n");
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            let (ix, iy) = grid.split(i);
            let _ = writeln!(s, "{ix},{iy},{c}");
        }
    }
    s
}

/// One-dimensional histogram in the same schema, with `cell_y = 0`.
pub fn hist1d_csv(counts: &[u64]) -> String {
    let mut s = String::from("cell_x,cell_y,count\n");
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            let _ = writeln!(s, "{i},0,{c}");
        }
    }
    s
}
