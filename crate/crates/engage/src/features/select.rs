//! Feature selection: chi-square scoring for sparse discrete columns and
//! principal-component analysis for the dense topic block.
//!
//! Chi-square treats each column as a binary occurrence indicator (value
//! non-zero) and tests it against the class label; columns are kept in
//! descending score order with ties broken toward the lower column index.
//! PCA mean-centers the block and eigendecomposes its covariance with
//! cyclic Jacobi rotations, so results are deterministic and need no
//! external linear-algebra backend.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::registry::SparseMatrix;

/// Chi-square statistic of every column against the class label.
///
/// Occurrence is binarized (non-zero → present). Cells with zero expected
/// count contribute nothing; constant columns score 0.
pub fn chi_square_scores(x: &SparseMatrix, y: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    if y.len() != x.n_rows() {
        return Err(Error::Dimension(format!(
            "chi-square: {} rows but {} labels",
            x.n_rows(),
            y.len()
        )));
    }
    if n_classes == 0 {
        return Err(Error::Config("chi-square needs at least one class".into()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidInput(format!(
            "class index {bad} out of range for {n_classes} classes"
        )));
    }
    let n = x.n_rows();
    if n == 0 {
        return Err(Error::InvalidInput("chi-square: empty matrix".into()));
    }

    let mut class_count = vec![0usize; n_classes];
    for &c in y {
        class_count[c] += 1;
    }
    // present[j][c] = rows of class c where column j is non-zero.
    let mut present = vec![vec![0usize; n_classes]; x.n_cols];
    for (row, &c) in x.rows.iter().zip(y) {
        for (j, _) in row.iter() {
            present[j][c] += 1;
        }
    }

    let scores = present
        .iter()
        .map(|per_class| {
            let total_present: usize = per_class.iter().sum();
            let mut chi2 = 0.0;
            for (c, &obs_present) in per_class.iter().enumerate() {
                let n_c = class_count[c] as f64;
                for (observed, marginal) in [
                    (obs_present as f64, total_present as f64),
                    ((class_count[c] - obs_present) as f64, (n - total_present) as f64),
                ] {
                    let expected = n_c * marginal / n as f64;
                    if expected > 0.0 {
                        chi2 += (observed - expected).powi(2) / expected;
                    }
                }
            }
            chi2
        })
        .collect();
    Ok(scores)
}

/// Indices (ascending) of the `k` columns with the highest chi-square
/// scores; ties keep the lower column index.
pub fn chi_square_select(
    x: &SparseMatrix,
    y: &[usize],
    n_classes: usize,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("chi-square selection needs k ≥ 1".into()));
    }
    if k > x.n_cols {
        return Err(Error::Config(format!(
            "chi-square selection: k={} exceeds {} columns",
            k, x.n_cols
        )));
    }
    let scores = chi_square_scores(x, y, n_classes)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("chi-square scores are finite")
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order.into_iter().take(k).collect();
    kept.sort_unstable();
    Ok(kept)
}

/// Fitted PCA: mean vector plus the leading eigenvectors of the covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k × d`, one unit-length component per row, in descending-variance
    /// order. Each component's largest-magnitude coordinate is positive.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns), unsorted.
#[allow(clippy::needless_range_loop)] // index loops mirror the rotation math
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = a.len();
    let mut v = vec![vec![0.0; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = a
        .iter()
        .flatten()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let tol = 1e-14 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in (p + 1)..d {
                off = off.max(a[p][q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[p][q].abs() <= tol {
                    continue;
                }
                let tau = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..d {
                    let (aip, aiq) = (a[i][p], a[i][q]);
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for i in 0..d {
                    let (api, aqi) = (a[p][i], a[q][i]);
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for row in v.iter_mut() {
                    let (vip, viq) = (row[p], row[q]);
                    row[p] = c * vip - s * viq;
                    row[q] = s * vip + c * viq;
                }
            }
        }
    }
    let eigenvalues = (0..d).map(|i| a[i][i]).collect();
    (eigenvalues, v)
}

/// Fit a `k`-component PCA on the rows of `x`.
#[allow(clippy::needless_range_loop)] // symmetric covariance fill reads best indexed
pub fn pca_fit(x: &Array2<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::InvalidInput(
            "PCA needs at least two rows".into(),
        ));
    }
    if k == 0 || k > d.min(n) {
        return Err(Error::Config(format!(
            "PCA: k={k} outside 1..=min(rows={n}, cols={d})"
        )));
    }

    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    // Covariance with the n−1 denominator.
    let mut cov = vec![vec![0.0f64; d]; d];
    for row in x.rows() {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in i..d {
                cov[i][j] += ci * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let total_variance: f64 = (0..d).map(|i| cov[i][i]).sum();

    let (eigenvalues, vectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigenvalues[b]
            .partial_cmp(&eigenvalues[a])
            .expect("eigenvalues are finite")
            .then(a.cmp(&b))
    });

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &col in order.iter().take(k) {
        let mut component: Vec<f64> = (0..d).map(|i| vectors[i][col]).collect();
        // Fix the sign: the largest-magnitude coordinate points positive.
        let lead = component
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).expect("finite"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if component[lead] < 0.0 {
            for value in &mut component {
                *value = -*value;
            }
        }
        components.push(component);
        // Rounding can leave tiny negative eigenvalues on rank-deficient data.
        explained_variance.push(eigenvalues[col].max(0.0));
    }
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|&v| if total_variance > 0.0 { v / total_variance } else { 0.0 })
        .collect();

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        explained_variance_ratio,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.mean.len()
    }

    /// Project rows onto the components: `(x − mean) · componentsᵀ`.
    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let (n, d) = x.dim();
        if d != self.mean.len() {
            return Err(Error::Dimension(format!(
                "PCA transform: {} columns, model fitted on {}",
                d,
                self.mean.len()
            )));
        }
        let k = self.components.len();
        let mut out = Array2::zeros((n, k));
        for (i, row) in x.rows().into_iter().enumerate() {
            for (c, component) in self.components.iter().enumerate() {
                out[(i, c)] = row
                    .iter()
                    .zip(component)
                    .zip(&self.mean)
                    .map(|((&xv, &cv), &mv)| (xv - mv) * cv)
                    .sum();
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 1.0/0.0 indicator, since `f64: From<bool>` does not exist.
    fn ind(b: bool) -> f64 {
        if b { 1.0 } else { 0.0 }
    }

    fn sparse_from_dense(rows: &[Vec<f64>]) -> SparseMatrix {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut m = SparseMatrix::new(n_cols);
        for row in rows {
            let mut f = crate::features::registry::SparseFeatures::new();
            for (j, &v) in row.iter().enumerate() {
                f.push(j, v);
            }
            m.push_row(f.finish(n_cols).unwrap()).unwrap();
        }
        m
    }

    /// Independent chi-square oracle via an explicit 2×C contingency table.
    fn chi2_oracle(present: &[bool], y: &[usize], n_classes: usize) -> f64 {
        let n = y.len() as f64;
        let mut table = vec![[0.0f64; 2]; n_classes];
        for (&p, &c) in present.iter().zip(y) {
            table[c][usize::from(p)] += 1.0;
        }
        let row_sums: Vec<f64> = table.iter().map(|r| r[0] + r[1]).collect();
        let col_sums = [
            table.iter().map(|r| r[0]).sum::<f64>(),
            table.iter().map(|r| r[1]).sum::<f64>(),
        ];
        let mut chi2 = 0.0;
        for (c, row) in table.iter().enumerate() {
            for (b, &observed) in row.iter().enumerate() {
                let expected = row_sums[c] * col_sums[b] / n;
                if expected > 0.0 {
                    chi2 += (observed - expected).powi(2) / expected;
                }
            }
        }
        chi2
    }

    #[test]
    fn chi_square_matches_contingency_oracle_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 40;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..6).map(|_| ind(rng.random::<f32>() < 0.3)).collect())
                .collect();
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let x = sparse_from_dense(&rows);
            let scores = chi_square_scores(&x, &y, 4).unwrap();
            for j in 0..6 {
                let present: Vec<bool> = rows.iter().map(|r| r[j] != 0.0).collect();
                let expected = chi2_oracle(&present, &y, 4);
                assert!(
                    (scores[j] - expected).abs() < 1e-9,
                    "column {j}: {} vs oracle {}",
                    scores[j],
                    expected
                );
            }
        }
    }

    #[test]
    fn perfectly_predictive_column_outranks_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<usize> = (0..80).map(|i| i % 4).collect();
        let rows: Vec<Vec<f64>> = y
            .iter()
            .map(|&c| vec![ind(c == 0), ind(rng.random::<f32>() < 0.5)])
            .collect();
        let x = sparse_from_dense(&rows);
        let scores = chi_square_scores(&x, &y, 4).unwrap();
        assert!(scores[0] > scores[1]);
        assert_eq!(chi_square_select(&x, &y, 4, 1).unwrap(), vec![0]);
    }

    #[test]
    fn constant_columns_score_zero() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0, 0.0, (i % 2) as f64]).collect();
        let y: Vec<usize> = (0..8).map(|i| i % 4).collect();
        let scores = chi_square_scores(&sparse_from_dense(&rows), &y, 4).unwrap();
        assert_eq!(scores[0], 0.0); // always present
        assert_eq!(scores[1], 0.0); // never present
    }

    #[test]
    fn selection_ties_keep_the_lower_index() {
        // Two identical columns: equal scores, k=1 must pick column 0.
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![ind(i % 4 == 1), ind(i % 4 == 1)])
            .collect();
        let y: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let x = sparse_from_dense(&rows);
        assert_eq!(chi_square_select(&x, &y, 4, 1).unwrap(), vec![0]);
    }

    #[test]
    fn selection_rejects_bad_k() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![(i % 2) as f64]).collect();
        let y = vec![0, 1, 2, 3];
        let x = sparse_from_dense(&rows);
        assert!(chi_square_select(&x, &y, 4, 0).is_err());
        assert!(chi_square_select(&x, &y, 4, 2).is_err());
    }

    #[test]
    fn pca_recovers_a_one_dimensional_line() {
        let direction = [1.0, 2.0, 3.0];
        let rows: Vec<f64> = (0..10)
            .flat_map(|i| {
                let t = i as f64 - 4.5;
                direction.iter().map(move |&d| 5.0 + t * d)
            })
            .collect();
        let x = Array2::from_shape_vec((10, 3), rows).unwrap();
        let model = pca_fit(&x, 1).unwrap();
        assert!(model.explained_variance_ratio[0] > 0.999);
        let norm = (1.0f64 + 4.0 + 9.0).sqrt();
        for (c, d) in model.components[0].iter().zip(&direction) {
            assert!((c - d / norm).abs() < 1e-9, "component {c} vs {d}");
        }
    }

    #[test]
    fn full_rank_projection_reconstructs_the_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Array2::from_shape_fn((10, 4), |_| rng.random::<f64>() * 3.0);
        let model = pca_fit(&x, 4).unwrap();
        let z = model.transform(&x).unwrap();
        for i in 0..10 {
            for j in 0..4 {
                let rebuilt: f64 = (0..4)
                    .map(|c| z[(i, c)] * model.components[c][j])
                    .sum::<f64>()
                    + model.mean[j];
                assert!((rebuilt - x[(i, j)]).abs() < 1e-8);
            }
        }
        // Projected column variances equal the eigenvalues.
        for c in 0..4 {
            let col = z.column(c);
            let m = col.sum() / 10.0;
            let var: f64 = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 9.0;
            assert!((var - model.explained_variance[c]).abs() < 1e-8);
        }
    }

    #[test]
    fn components_match_a_power_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let x = Array2::from_shape_fn((20, 6), |(_, j)| {
            rng.random::<f64>() * (j as f64 + 1.0)
        });
        let model = pca_fit(&x, 2).unwrap();

        // Oracle: power iteration with deflation on the covariance matrix.
        let n = 20.0;
        let mean: Vec<f64> = (0..6).map(|j| x.column(j).sum() / n).collect();
        let mut cov = vec![vec![0.0f64; 6]; 6];
        for row in x.rows() {
            for i in 0..6 {
                for j in 0..6 {
                    cov[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        let mut oracle = Vec::new();
        for _ in 0..2 {
            let mut v = vec![1.0f64; 6];
            for _ in 0..20_000 {
                let mut next = vec![0.0f64; 6];
                for i in 0..6 {
                    for j in 0..6 {
                        next[i] += cov[i][j] * v[j];
                    }
                }
                let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
                v = next.into_iter().map(|x| x / norm).collect();
            }
            let lambda: f64 = (0..6)
                .map(|i| (0..6).map(|j| cov[i][j] * v[j]).sum::<f64>() * v[i])
                .sum();
            for i in 0..6 {
                for j in 0..6 {
                    cov[i][j] -= lambda * v[i] * v[j];
                }
            }
            oracle.push((lambda, v));
        }

        for (c, (lambda, v)) in oracle.iter().enumerate() {
            assert!((model.explained_variance[c] - lambda).abs() < 1e-6);
            let dot: f64 = model.components[c].iter().zip(v).map(|(a, b)| a * b).sum();
            assert!(dot.abs() > 1.0 - 1e-8, "component {c} misaligned: |cos|={}", dot.abs());
        }
    }

    #[test]
    fn pca_rejects_degenerate_shapes() {
        let x = array![[1.0, 2.0]];
        assert!(pca_fit(&x, 1).is_err()); // one row
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&x, 3).is_err()); // k > columns
    }

    proptest! {
        #[test]
        fn explained_variance_is_sorted_and_ratios_bounded(
            seed in 0u64..500,
            n in 4usize..12,
            d in 2usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((n, d), |_| rng.random::<f64>());
            let k = d.min(n);
            let model = pca_fit(&x, k).unwrap();
            for w in model.explained_variance.windows(2) {
                prop_assert!(w[0] >= w[1] - 1e-12);
            }
            let total: f64 = model.explained_variance_ratio.iter().sum();
            prop_assert!(total <= 1.0 + 1e-9);
            for component in &model.components {
                let norm: f64 = component.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn chi_square_is_invariant_to_feature_scaling(
            seed in 0u64..200,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..20)
                .map(|_| vec![ind(rng.random::<f32>() < 0.4)])
                .collect();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] * 7.5]).collect();
            let y: Vec<usize> = (0..20).map(|_| rng.random_range(0..4)).collect();
            let a = chi_square_scores(&sparse_from_dense(&rows), &y, 4).unwrap();
            let b = chi_square_scores(&sparse_from_dense(&scaled), &y, 4).unwrap();
            prop_assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }
}
