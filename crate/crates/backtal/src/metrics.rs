//! Metric tables as CSV and JSON.

use std::fmt::Write as _;

use backtal_core::eval::MapTable;
use serde::Serialize;

pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

/// Rows are thresholds; columns are the class names followed by the mean.
pub fn table_csv(table: &MapTable, class_names: &[String]) -> String {
    let mut s = String::from("tiou");
    for name in class_names {
        write!(s, ",{name}").unwrap();
    }
    s.push_str(",mean\n");
    for row in &table.rows {
        write!(s, "{}", row.tiou).unwrap();
        for c in &row.per_class {
            write!(s, ",{}", c.ap).unwrap();
        }
        writeln!(s, ",{}", row.map).unwrap();
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a> {
    pub class_names: &'a [String],
    pub num_predictions: usize,
    pub num_ground_truth: usize,
    pub average_map: f64,
    pub table: &'a MapTable,
}

pub fn parse_thresholds(s: &str) -> Result<Vec<f64>, String> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad threshold {t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() || v.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err("thresholds must lie in (0, 1]".into());
    }
    Ok(v)
}
