//! Plain CSV export/import of sample matrices: one header row of column
//! names, then one sample per row.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn matrix_to_csv(header: &[String], m: &Tensor) -> Result<String> {
    if header.len() != m.cols() {
        return Err(Error::dim("csv header", &[header.len()], &[m.cols()]));
    }
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn csv_to_matrix(text: &str) -> Result<(Vec<String>, Tensor)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Config("csv: missing header row".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::Config(format!(
                "csv row {}: expected {} fields, found {}",
                lineno + 1,
                header.len(),
                fields.len()
            )));
        }
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::Config(format!("csv row {}: bad number `{f}`", lineno + 1))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = header.len();
    Ok((header, Tensor::matrix(rows, cols, data)?))
}

pub fn column_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn write_matrix_csv(path: &Path, header: &[String], m: &Tensor) -> Result<()> {
    fs::write(path, matrix_to_csv(header, m)?)?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Tensor)> {
    csv_to_matrix(&fs::read_to_string(path)?)
}

/// World samples with their cluster label as the last column.
pub fn world_to_csv(world: &super::World) -> Result<String> {
    let mut header = column_names("z", world.k);
    header.push("label".into());
    let labels = Tensor::matrix(
        world.n_samples(),
        1,
        world.labels.iter().map(|&l| l as f64).collect(),
    )?;
    matrix_to_csv(&header, &world.samples.concat_cols(&labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(rows in 0usize..6, cols in 1usize..5, seed in any::<u64>()) {
            let mut r = crate::numerics::rng(seed);
            let m = crate::numerics::linalg::gaussian_matrix(rows, cols, 1e3, &mut r);
            let header = column_names("x", cols);
            let (h2, back) = csv_to_matrix(&matrix_to_csv(&header, &m).unwrap()).unwrap();
            prop_assert_eq!(h2, header);
            prop_assert_eq!(back.data(), m.data());
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(csv_to_matrix("a,b\n1,2\n3\n").is_err());
    }
}
