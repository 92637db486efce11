use std::io::Write;

use serde::{Deserialize, Serialize};

use super::cv::MetricsReport;
use crate::error::Result;

/// One line of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub task: String,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

impl ReportRow {
    pub fn new(variant: &str, r: &MetricsReport) -> Self {
        Self {
            variant: variant.to_string(),
            task: r.task_name.clone(),
            mae: r.mae,
            rmse: r.rmse,
            r2: r.r2,
        }
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}

pub fn markdown(title: &str, rows: &[ReportRow]) -> String {
    let mut s = format!("# {title}\n\n| variant | task | MAE | RMSE | R² |\n|---|---|---:|---:|---:|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} | {:.4} |\n",
            r.variant, r.task, r.mae, r.rmse, r.r2
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![ReportRow {
            variant: "w/o-PE".into(),
            task: "crime".into(),
            mae: 1.5,
            rmse: 2.0,
            r2: 0.25,
        }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
        assert!(markdown("t", &rows).contains("| w/o-PE | crime |"));
    }
}
