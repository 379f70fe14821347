use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{ClassLabel, FeatureMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    /// Feature means subtracted before decomposition.
    pub means: Vec<f64>,
    /// `k` unit-norm principal axes, each of length `n_features`.
    pub components: Vec<Vec<f64>>,
    /// Share of total variance per retained axis, non-increasing.
    pub explained_variance_ratio: Vec<f64>,
    /// Row scores on the retained axes (`n_rows x k`).
    pub points: Vec<Vec<f64>>,
}

pub fn pca_project(m: &FeatureMatrix, k: usize) -> Result<PcaProjection> {
    let rows: Vec<Vec<f64>> = m
        .values
        .iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    pca_rows(&rows, k)
}

/// Covariance eigendecomposition of centred (unscaled) rows.
pub fn pca_rows(rows: &[Vec<f64>], k: usize) -> Result<PcaProjection> {
    let n = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    if k == 0 || k > p {
        return Err(Error::Dimension(format!(
            "requested {k} components from {p} feature(s)"
        )));
    }
    if n < 2 {
        return Err(Error::Dimension(format!("PCA needs at least 2 rows, got {n}")));
    }
    let mut means = vec![0.0; p];
    for r in rows {
        for (m, v) in means.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, p, |i, j| rows[i][j] - means[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        // fix the sign: largest-magnitude loading positive
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        let lambda = eig.eigenvalues[idx].max(0.0);
        ratios.push(if total > 0.0 { lambda / total } else { 0.0 });
    }

    let points = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| (0..p).map(|j| centered[(i, j)] * c[j]).sum())
                .collect()
        })
        .collect();

    Ok(PcaProjection {
        means,
        components,
        explained_variance_ratio: ratios,
        points,
    })
}

/// Writes `id,pc1,pc2,...,label` rows.
pub fn write_pca_csv<W: Write>(
    out: W,
    ids: &[String],
    projection: &PcaProjection,
    labels: &[ClassLabel],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let k = projection.components.len();
    let mut header = vec!["id".to_string()];
    header.extend((1..=k).map(|i| format!("pc{i}")));
    header.push("label".into());
    w.write_record(&header)?;
    for ((id, pt), label) in ids.iter().zip(&projection.points).zip(labels) {
        let mut rec = vec![id.clone()];
        rec.extend(pt.iter().map(|v| v.to_string()));
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
