use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::judge::DraftModel;
use crate::trajgen::TrajectoryExample;
use crate::{parallel, Error, Result};

/// Writes `id,label,f0,...` with one row of terminal hidden state per
/// example; returns the feature width.
pub fn export_features(model: &DraftModel, examples: &[TrajectoryExample], path: &Path) -> Result<usize> {
    let rows: Vec<Vec<f64>> = parallel::map_collect(examples, |e| model.features(&e.tokens))
        .into_iter()
        .collect::<Result<_>>()?;
    let d = model.reasoner.config.d_model;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header: Vec<String> = (0..d).map(|i| format!("f{i}")).collect();
    writeln!(w, "id,label,{}", header.join(",")).map_err(|e| Error::io(path, e))?;
    for (ex, row) in examples.iter().zip(&rows) {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{},{},{}", ex.id, ex.label, vals.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub features: Vec<Vec<f64>>,
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = FeatureTable {
        ids: Vec::new(),
        labels: Vec::new(),
        features: Vec::new(),
    };
    let mut width = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split(',').collect();
        if i == 0 {
            if fields.len() < 2 || fields[0] != "id" || fields[1] != "label" {
                return Err(parse_err("header must start with id,label".into()));
            }
            width = Some(fields.len() - 2);
            continue;
        }
        if Some(fields.len() - 2) != width {
            return Err(parse_err(format!("expected {} features", width.unwrap_or(0))));
        }
        table.ids.push(fields[0].to_string());
        table
            .labels
            .push(fields[1].parse().map_err(|_| parse_err(format!("bad label {:?}", fields[1])))?);
        table.features.push(
            fields[2..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| parse_err(format!("bad value {f:?}"))))
                .collect::<Result<_>>()?,
        );
    }
    Ok(table)
}

/// Standardized logistic regression fitted by full-batch gradient descent
/// on `(train_x, train_y)`; returns accuracy on `(test_x, test_y)`.
pub fn linear_probe(train_x: &[Vec<f64>], train_y: &[u8], test_x: &[Vec<f64>], test_y: &[u8]) -> Result<f64> {
    if train_x.is_empty() || test_x.is_empty() || train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::Usage("linear probe needs non-empty, aligned feature sets".into()));
    }
    let d = train_x[0].len();
    let n = train_x.len() as f64;
    let mut mean = vec![0.0; d];
    for row in train_x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; d];
    for row in train_x {
        for ((s, v), m) in sd.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd: Vec<f64> = sd.iter().map(|v| v.sqrt().max(1e-8)).collect();
    let z = |row: &[f64]| -> Vec<f64> { row.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s).collect() };
    let xs: Vec<Vec<f64>> = train_x.iter().map(|r| z(r)).collect();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let (lr, l2) = (0.5, 1e-3);
    for _ in 0..500 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(train_y) {
            let logit: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let err = crate::numerics::sigmoid(logit) - f64::from(y);
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi / n;
            }
            gb += err / n;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * (g + l2 * *wi);
        }
        b -= lr * gb;
    }
    let correct = test_x
        .iter()
        .zip(test_y)
        .filter(|(row, &y)| {
            let x = z(row);
            let logit: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            u8::from(logit >= 0.0) == y
        })
        .count();
    Ok(correct as f64 / test_x.len() as f64)
}
