//! Per-epoch metrics as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,lr,saved";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f32,
    pub saved: bool,
}

pub fn metrics_csv(records: &[EpochRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in records {
        // `{:?}` prints the shortest representation that parses back exactly.
        writeln!(out, "{},{:?},{:?},{:?},{}", r.epoch, r.train_loss, r.val_loss, r.lr, r.saved as u8)
            .expect("writing to a String");
    }
    out
}

pub fn parse_metrics(text: &str, path: &Path) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(Error::format(path, format!("line 1: expected header {METRICS_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |what: &str| Error::format(path, format!("line {}: {what}", i + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(err(&format!("expected 5 fields, found {}", f.len())));
        }
        out.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| err("bad epoch"))?,
            train_loss: f[1].parse().map_err(|_| err("bad train_loss"))?,
            val_loss: f[2].parse().map_err(|_| err("bad val_loss"))?,
            lr: f[3].parse().map_err(|_| err("bad lr"))?,
            saved: match f[4] {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(err("bad saved flag")),
            },
        });
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, records: &[EpochRecord]) -> Result<()> {
    fs::write(path, metrics_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            EpochRecord { epoch: 1, train_loss: 1.0 / 3.0, val_loss: 0.7, lr: 0.001, saved: true },
            EpochRecord { epoch: 2, train_loss: 0.25, val_loss: 0.8, lr: 1e-4, saved: false },
        ];
        let text = metrics_csv(&recs);
        assert!(text.starts_with("epoch,train_loss,val_loss,lr,saved\n1,"));
        assert_eq!(parse_metrics(&text, Path::new("m.csv")).unwrap(), recs);
        let err = parse_metrics(&format!("{text}3,x,1,1,0\n"), Path::new("m.csv")).unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }
}
