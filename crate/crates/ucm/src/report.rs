//! Metric report outputs: JSON document, plain-text table, per-frame CSV.

use std::fmt::Write as _;
use std::path::Path;

use ucm_core::eval::MetricReport;

use crate::formats::{write_bytes, write_json, IoError};

pub fn table(r: &MetricReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "protocol        {}", r.protocol);
    let _ = writeln!(s, "rot_err_deg     {:.6}", r.rot_err_deg);
    let _ = writeln!(s, "trans_err       {:.6}", r.trans_err);
    let _ = writeln!(s, "psnr_db         {:.4}", r.psnr_db);
    let _ = writeln!(s, "ssim            {:.6}", r.ssim);
    let _ = writeln!(s, "history_frames  {}", r.history_frames);
    let _ = writeln!(s, "generated       {}", r.generated_frames);
    let _ = writeln!(s, "note            {}", r.notes);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:>6} {:>8} {:>10} {:>9}", "frame", "vs", "psnr_db", "ssim");
    for f in &r.frames {
        let _ = writeln!(s, "{:>6} {:>8} {:>10.4} {:>9.6}", f.index, f.compared_to, f.psnr_db, f.ssim);
    }
    s
}

pub fn csv(r: &MetricReport) -> String {
    let mut s = String::from("index,compared_to,psnr_db,ssim\n");
    for f in &r.frames {
        let _ = writeln!(s, "{},{},{},{}", f.index, f.compared_to, f.psnr_db, f.ssim);
    }
    s
}

/// Writes `<stem>.json`, `<stem>.txt` and `<stem>_frames.csv` into `dir`.
pub fn write_report(dir: &Path, stem: &str, r: &MetricReport) -> Result<(), IoError> {
    write_json(&dir.join(format!("{stem}.json")), r)?;
    write_bytes(&dir.join(format!("{stem}.txt")), table(r).as_bytes())?;
    write_bytes(&dir.join(format!("{stem}_frames.csv")), csv(r).as_bytes())
}
