//! Training reports and CSV emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::train::ActiveRow;

/// Metrics of one training epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: u64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub instance_accuracy: f64,
    pub class_accuracy: f64,
    pub seconds: f64,
}

/// Per-epoch training curve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_instance_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.instance_accuracy)
    }

    /// Test-loss curve smoothed with a centered moving average.
    pub fn smoothed_test_loss(&self, window: usize) -> Vec<f64> {
        let losses: Vec<f64> = self.epochs.iter().map(|e| e.test_loss).collect();
        let half = window / 2;
        (0..losses.len())
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(losses.len());
                losses[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect()
    }
}

/// `epoch,train_loss,test_loss,inst_acc,class_acc,seconds`
pub fn write_report_csv(path: impl AsRef<Path>, report: &TrainReport) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,train_loss,test_loss,inst_acc,class_acc,seconds")?;
    for e in &report.epochs {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.3}",
            e.epoch, e.train_loss, e.test_loss, e.instance_accuracy, e.class_accuracy, e.seconds
        )?;
    }
    w.flush()
}

/// `layer,filter,vertex,x,y,z`
pub fn write_active_points_csv(
    path: impl AsRef<Path>,
    rows: &[ActiveRow],
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "layer,filter,vertex,x,y,z")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{}", r.layer, r.filter, r.vertex, r.x, r.y, r.z)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn stats(epoch: u64, test_loss: f64) -> EpochStats {
        EpochStats {
            epoch,
            train_loss: 1.0,
            test_loss,
            instance_accuracy: 0.5,
            class_accuracy: 0.5,
            seconds: 0.1,
        }
    }

    #[test]
    fn csv_has_one_row_per_epoch() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let report = TrainReport { epochs: vec![stats(0, 1.4), stats(1, 1.2)] };
        write_report_csv(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "epoch,train_loss,test_loss,inst_acc,class_acc,seconds");
        assert!(lines[1].starts_with("0,"));
    }

    #[test]
    fn smoothing_averages_neighbors() {
        let report =
            TrainReport { epochs: vec![stats(0, 3.0), stats(1, 1.0), stats(2, 2.0)] };
        let smooth = report.smoothed_test_loss(3);
        assert!((smooth[0] - 2.0).abs() < 1e-12);
        assert!((smooth[1] - 2.0).abs() < 1e-12);
        assert!((smooth[2] - 1.5).abs() < 1e-12);
    }
}
