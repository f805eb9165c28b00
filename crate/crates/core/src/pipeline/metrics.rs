use std::fmt::Write as _;
use std::path::Path;

use super::{MetricsRecord, Stage};
use crate::codec::{read_file, write_file_atomic};
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "stage,epoch,train_loss,val_acc,val_loss,lr,bound_proxy,seconds";

/// CSV text with [`METRICS_HEADER`]; floats use the shortest exact representation.
pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.stage, r.epoch, r.train_loss, r.val_acc, r.val_loss, r.lr, r.bound_proxy, r.seconds
        );
    }
    s
}

pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    write_file_atomic(path.as_ref(), metrics_to_csv(records).as_bytes())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Corrupt {
        context: ctx.clone(),
        detail: "not utf-8".into(),
    })?;
    let corrupt = |line: usize, detail: String| Error::Corrupt {
        context: format!("{ctx}:{line}"),
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(corrupt(1, "unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(corrupt(i + 2, format!("expected 8 fields, got {}", f.len())));
            }
            let num = |j: usize| {
                f[j].parse::<f64>()
                    .map_err(|_| corrupt(i + 2, format!("bad number {:?}", f[j])))
            };
            Ok(MetricsRecord {
                stage: f[0].parse::<Stage>().map_err(|e| corrupt(i + 2, e.to_string()))?,
                epoch: f[1]
                    .parse()
                    .map_err(|_| corrupt(i + 2, format!("bad epoch {:?}", f[1])))?,
                train_loss: num(2)?,
                val_acc: num(3)?,
                val_loss: num(4)?,
                lr: num(5)?,
                bound_proxy: num(6)?,
                seconds: num(7)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let recs = vec![MetricsRecord {
            stage: Stage::Distill,
            epoch: 3,
            train_loss: 0.1 + 0.2,
            val_acc: 0.9125,
            val_loss: 1.0 / 3.0,
            lr: 0.0999,
            bound_proxy: 12345.678,
            seconds: 0.0,
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &recs).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with(METRICS_HEADER));
        assert_eq!(read_metrics_csv(&p).unwrap(), recs);
    }
}
