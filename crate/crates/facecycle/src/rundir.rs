//! Run-directory artifacts: config snapshot, loss CSV, probe CSV, event log
//! and sample grids.
//!
//! Layout: `config.snapshot`, `losses.csv`, `probe.csv`,
//! `checkpoints/iter_<n>.ckpt`, `samples/iter_<n>_grid.png`, `events.log`.

use crate::error::{Error, Result};
use crate::imgproc;
use crate::types::{LossReport, LOSS_COMPONENT_ORDER};
use ndarray::Array4;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct RunDir {
    pub dir: PathBuf,
    losses: BufWriter<File>,
    probe: Option<BufWriter<File>>,
    events: BufWriter<File>,
    columns: Option<Vec<String>>,
}

impl RunDir {
    /// Create (or overwrite) a run directory; the config snapshot lands on
    /// disk before any compute starts.
    pub fn create(dir: &Path, config_snapshot: &str) -> Result<RunDir> {
        fs::create_dir_all(dir)?;
        fs::create_dir_all(dir.join("checkpoints"))?;
        fs::create_dir_all(dir.join("samples"))?;
        fs::write(dir.join("config.snapshot"), config_snapshot)?;
        let losses = BufWriter::new(File::create(dir.join("losses.csv"))?);
        let events = BufWriter::new(File::create(dir.join("events.log"))?);
        Ok(RunDir {
            dir: dir.to_path_buf(),
            losses,
            probe: None,
            events,
            columns: None,
        })
    }

    fn column_order(report: &LossReport) -> Vec<String> {
        let mut cols: Vec<String> = LOSS_COMPONENT_ORDER
            .iter()
            .filter(|c| report.components.contains_key(**c))
            .map(|c| c.to_string())
            .collect();
        for k in report.components.keys() {
            if !cols.contains(k) {
                cols.push(k.clone());
            }
        }
        cols
    }

    pub fn log_losses(&mut self, iter: usize, report: &LossReport) -> Result<()> {
        if self.columns.is_none() {
            let cols = Self::column_order(report);
            write!(self.losses, "iter")?;
            for c in &cols {
                write!(self.losses, ",{c}")?;
            }
            writeln!(self.losses, ",total")?;
            self.columns = Some(cols);
        }
        let cols = self.columns.as_ref().unwrap();
        write!(self.losses, "{iter}")?;
        for c in cols {
            let v = report.components.get(c).copied().unwrap_or(0.0);
            write!(self.losses, ",{v}")?;
        }
        writeln!(self.losses, ",{}", report.total)?;
        self.losses.flush()?;
        Ok(())
    }

    pub fn log_probe(&mut self, epoch: usize, feature_std: f64) -> Result<()> {
        if self.probe.is_none() {
            let mut w = BufWriter::new(File::create(self.dir.join("probe.csv"))?);
            writeln!(w, "epoch,feature_std")?;
            self.probe = Some(w);
        }
        let w = self.probe.as_mut().unwrap();
        writeln!(w, "{epoch},{feature_std}")?;
        w.flush()?;
        Ok(())
    }

    pub fn event(&mut self, msg: &str) -> Result<()> {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        writeln!(self.events, "[{now:.3}] {msg}")?;
        self.events.flush()?;
        log::info!("{msg}");
        Ok(())
    }

    pub fn checkpoint_path(&self, iter: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("iter_{iter}.ckpt"))
    }

    /// Tile rows of [-1, 1] NCHW batches into one grid PNG.
    pub fn save_sample_grid(&self, name: &str, rows: &[Array4<f32>]) -> Result<PathBuf> {
        if rows.is_empty() {
            return Err(Error::Data("empty sample grid".into()));
        }
        let cols = rows[0].shape()[0];
        let (h, w) = (rows[0].shape()[2], rows[0].shape()[3]);
        let pad = 2usize;
        let total_h = rows.len() * h + (rows.len() + 1) * pad;
        let total_w = cols * w + (cols + 1) * pad;
        let mut canvas = ndarray::Array3::<f32>::from_elem((total_h, total_w, 3), 1.0);
        for (r, row) in rows.iter().enumerate() {
            for c in 0..cols.min(row.shape()[0]) {
                let tile = imgproc::chw_pm1_to_hwc01(&row.index_axis(ndarray::Axis(0), c));
                let top = pad + r * (h + pad);
                let left = pad + c * (w + pad);
                canvas
                    .slice_mut(ndarray::s![top..top + h, left..left + w, ..])
                    .assign(&tile);
            }
        }
        let path = self.dir.join("samples").join(name);
        imgproc::save_image_rgb01(&path, &canvas)?;
        Ok(path)
    }
}

/// Parse a CSV of floats with a header row.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read csv {path:?}: {e}")))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Data(format!("empty csv {path:?}")))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Data(format!("bad csv row {} in {path:?}: {e}", i + 2)))?;
        if row.len() != header.len() {
            return Err(Error::Data(format!(
                "csv row {} has {} fields, header has {}",
                i + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Append-style CSV writer used by report emitters.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)?,
    );
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
