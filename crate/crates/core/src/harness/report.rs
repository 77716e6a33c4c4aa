//! CSV reports. UTF-8, LF line endings, `.` decimal separator.

use std::fmt::Write as _;
use std::path::Path;

use super::eval::{AccuracyTable, ConfusionMatrix};
use super::train::EpochStats;
use crate::error::Result;

/// Digits after the decimal point for accuracies and losses.
pub const PRECISION: usize = 15;

/// `method,ratio,accuracy,count`, one row per ratio followed by one `avg`
/// row per method (mean of that method's ratio accuracies).
pub fn accuracy_csv(table: &AccuracyTable) -> String {
    let mut s = String::from("method,ratio,accuracy,count\n");
    for method in table.methods() {
        for r in table.rows_for(method) {
            let _ = writeln!(s, "{},{},{:.*},{}", r.method, r.ratio_label(), PRECISION, r.accuracy(), r.count);
        }
        let count = table.rows_for(method).map(|r| r.count).max().unwrap_or(0);
        let avg = table.average(method).unwrap_or(0.0);
        let _ = writeln!(s, "{method},avg,{avg:.PRECISION$},{count}");
    }
    s
}

pub fn confusion_csv(m: &ConfusionMatrix) -> String {
    let mut s = String::from("true,pred,count\n");
    for (t, row) in m.counts.iter().enumerate() {
        for (p, c) in row.iter().enumerate() {
            let _ = writeln!(s, "{t},{p},{c}");
        }
    }
    s
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,lr,train_acc\n");
    for e in history {
        let _ = writeln!(s, "{},{:.*},{},{:.*}", e.epoch, PRECISION, e.loss, e.lr, PRECISION, e.train_acc);
    }
    s
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}
