//! Per-update CSV log.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;

pub const CSV_HEADER: &str =
    "update,env_steps,mean_return,solve_rate,kl_behavior,ddr,grad_norm_pre,grad_norm_post,param_update_l2,entropy,lr";

pub fn format_row(r: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.update_index,
        r.env_steps,
        r.mean_return,
        r.solve_rate,
        r.mean_kl_behavior,
        r.ddr,
        r.pre_clip_grad_norm,
        r.post_clip_grad_norm,
        r.param_update_l2,
        r.entropy,
        r.lr_effective
    )
}

pub fn parse_row(line: &str) -> Result<MetricsRecord> {
    let f: Vec<&str> = line.trim().split(',').collect();
    if f.len() != 11 {
        return Err(Error::InvalidArgument(format!("expected 11 CSV fields, got {}", f.len())));
    }
    let real = |i: usize| -> Result<f64> {
        f[i].parse()
            .map_err(|_| Error::InvalidArgument(format!("bad CSV number {:?}", f[i])))
    };
    Ok(MetricsRecord {
        update_index: f[0]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad update index {:?}", f[0])))?,
        env_steps: f[1]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad env step count {:?}", f[1])))?,
        mean_return: real(2)?,
        solve_rate: real(3)?,
        mean_kl_behavior: real(4)?,
        ddr: real(5)?,
        pre_clip_grad_norm: real(6)?,
        post_clip_grad_norm: real(7)?,
        param_update_l2: real(8)?,
        entropy: real(9)?,
        lr_effective: real(10)?,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => {
            return Err(Error::InvalidArgument(format!(
                "{} does not start with the metrics header",
                path.display()
            )))
        }
    }
    lines.filter(|l| !l.trim().is_empty()).map(parse_row).collect()
}

/// Appends rows, flushing after each so a crash loses at most the last row.
pub struct CsvWriter {
    file: fs::File,
}

impl CsvWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{CSV_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(CsvWriter { file })
    }

    /// Keeps the header and the first `rows` data rows of an existing log.
    pub fn truncate_to(path: &Path, rows: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let kept: Vec<&str> = text.lines().take(rows + 1).collect();
        if kept.len() != rows + 1 || kept[0] != CSV_HEADER {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("metrics log has fewer than {rows} rows"),
            });
        }
        let mut body = kept.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
        let file = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(CsvWriter { file })
    }

    pub fn append(&mut self, r: &MetricsRecord) -> Result<()> {
        writeln!(self.file, "{}", format_row(r))
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io("metrics.csv", e))
    }
}
