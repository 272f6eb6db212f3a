use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{DftError, Result};
use crate::metrics::CurvePoint;
use crate::tensor::Tensor;
use crate::train::EpochRecord;

/// Nine significant digits in scientific notation.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> DftError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DftError::io(path, source),
        other => DftError::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// A CSV file with the given header and rows.
pub fn write_table(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| DftError::io(path, e))
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Per-epoch losses. Wall time is deliberately left out so reruns with the
/// same seed produce identical files.
pub fn write_loss_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    write_table(
        path,
        &strings(&["epoch", "l_s", "l_t", "l_critic", "l_gp", "lambda_t", "objective"]),
        history.iter().map(|r| {
            let mut row = vec![r.epoch.to_string()];
            row.extend(
                [r.l_s, r.l_t, r.l_critic, r.l_gp, r.lambda_t, r.objective]
                    .into_iter()
                    .map(fmt_float),
            );
            row
        }),
    )
}

/// One row per node: `node, z0..z{D-1}` and `label` when given.
pub fn write_embeddings(path: &Path, z: &Tensor, labels: Option<&[usize]>) -> Result<()> {
    let mut header = vec!["node".to_string()];
    header.extend((0..z.cols()).map(|j| format!("z{j}")));
    if labels.is_some() {
        header.push("label".into());
    }
    write_table(
        path,
        &header,
        (0..z.rows()).map(|i| {
            let mut row = vec![i.to_string()];
            row.extend(z.row(i).iter().map(|&v| fmt_float(v)));
            if let Some(l) = labels {
                row.push(l[i].to_string());
            }
            row
        }),
    )
}

/// One row per node: `node, pred, p0..p{C-1}`.
pub fn write_predictions(path: &Path, probs: &Tensor) -> Result<()> {
    let mut header = strings(&["node", "pred"]);
    header.extend((0..probs.cols()).map(|j| format!("p{j}")));
    let pred = probs.argmax_rows();
    write_table(
        path,
        &header,
        (0..probs.rows()).map(|i| {
            let mut row = vec![i.to_string(), pred[i].to_string()];
            row.extend(probs.row(i).iter().map(|&v| fmt_float(v)));
            row
        }),
    )
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    write_table(
        path,
        &strings(&["depth", "mean", "stderr"]),
        curve
            .iter()
            .map(|p| vec![p.depth.to_string(), fmt_float(p.mean), fmt_float(p.stderr)]),
    )
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|source| DftError::Json { path: path.to_path_buf(), source })?;
    fs::write(path, text + "\n").map_err(|e| DftError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_float(1.5), "1.50000000e0");
        assert_eq!(fmt_float(-0.000123456789123), "-1.23456789e-4");
    }

    #[test]
    fn embedding_csv_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("z.csv");
        let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        write_embeddings(&path, &z, Some(&[1, 0])).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "node,z0,z1,label\n0,1.00000000e0,2.00000000e0,1\n1,3.00000000e0,4.00000000e0,0\n"
        );
    }

    #[test]
    fn curve_csv_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("c.csv");
        let c = [CurvePoint { depth: 0, mean: 36.0, stderr: 0.5 }];
        write_curve(&path, &c).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "depth,mean,stderr\n0,3.60000000e1,5.00000000e-1\n");
    }
}
