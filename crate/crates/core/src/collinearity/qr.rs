//! Least squares by Householder QR with column pivoting.
//!
//! Only the residual sum of squares is needed for R², so the factorization
//! is applied to the response in place and the solution itself is never
//! formed.

/// Relative tolerance on |R_kk| / |R_00| below which remaining columns are
/// treated as linearly dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeastSquaresFit {
    pub rss: f64,
    pub rank: usize,
}

/// Residual sum of squares of regressing `y` on the span of `columns`.
///
/// Columns are scaled to unit norm before factorization so rank detection
/// does not depend on the units of each feature; scaling leaves the column
/// space, and hence the residual, unchanged. Zero columns are ignored.
pub fn residual_sum_of_squares(columns: &[&[f64]], y: &[f64]) -> LeastSquaresFit {
    let n = y.len();
    let mut a: Vec<Vec<f64>> = columns
        .iter()
        .filter_map(|c| {
            debug_assert_eq!(c.len(), n);
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            (norm > 0.0).then(|| c.iter().map(|x| x / norm).collect())
        })
        .collect();
    let mut b = y.to_vec();
    let p = a.len();

    let mut rank = 0;
    let mut leading = 0.0;
    for k in 0..p.min(n) {
        // Pivot on the largest remaining column norm, recomputed exactly.
        let (pivot, norm_sq) = (k..p)
            .map(|j| (j, a[j][k..].iter().map(|x| x * x).sum::<f64>()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        a.swap(k, pivot);
        let alpha = norm_sq.sqrt();
        if k == 0 {
            leading = alpha;
        }
        if alpha <= RANK_TOLERANCE * leading || alpha == 0.0 {
            break;
        }

        let mut v: Vec<f64> = a[k][k..].to_vec();
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let v_norm_sq: f64 = v.iter().map(|x| x * x).sum();
        for col in a.iter_mut().skip(k + 1) {
            reflect(&v, v_norm_sq, &mut col[k..]);
        }
        reflect(&v, v_norm_sq, &mut b[k..]);
        rank = k + 1;
    }
    LeastSquaresFit {
        rss: b[rank..].iter().map(|x| x * x).sum(),
        rank,
    }
}

/// Upper-triangular factor `R` of `A = QR`, returned column by column
/// (each of length `p`). Needs at least as many rows as columns.
///
/// Because `Q` is orthogonal, regressing one column of `A` on others gives
/// the same residual sum of squares as regressing the matching columns of
/// `R`, so a single factorization serves every per-column regression.
pub fn triangular_factor(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = columns.len();
    let mut a: Vec<Vec<f64>> = columns.to_vec();
    let n = a.first().map_or(0, Vec::len);
    assert!(n >= p, "triangular factor needs n >= p");
    for k in 0..p {
        let alpha = a[k][k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        let mut v: Vec<f64> = a[k][k..].to_vec();
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let v_norm_sq: f64 = v.iter().map(|x| x * x).sum();
        for col in a.iter_mut().skip(k) {
            reflect(&v, v_norm_sq, &mut col[k..]);
        }
    }
    a.into_iter()
        .enumerate()
        .map(|(j, col)| {
            let mut r = vec![0.0; p];
            r[..=j].copy_from_slice(&col[..=j]);
            r
        })
        .collect()
}

/// Applies `I - 2 v vᵀ / (vᵀv)` to `x`.
fn reflect(v: &[f64], v_norm_sq: f64, x: &mut [f64]) {
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let scale = 2.0 * dot / v_norm_sq;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= scale * vi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_has_zero_residual() {
        let ones = [1.0; 4];
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let fit = residual_sum_of_squares(&[&ones, &x], &y);
        assert_eq!(fit.rank, 2);
        assert!(fit.rss < 1e-24);
    }

    #[test]
    fn residual_of_mean_fit() {
        // Regressing on the intercept alone leaves the centred sum of squares.
        let ones = [1.0; 4];
        let y = [1.0, 2.0, 3.0, 6.0];
        let fit = residual_sum_of_squares(&[&ones], &y);
        assert!((fit.rss - 14.0).abs() < 1e-12);
    }

    #[test]
    fn dependent_columns_reduce_rank() {
        let ones = [1.0; 5];
        let x = [1.0, 2.0, 4.0, 8.0, 16.0];
        let twice: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let y = [0.3, -1.0, 2.0, 0.5, 1.5];
        let fit = residual_sum_of_squares(&[&ones, &x, &twice], &y);
        assert_eq!(fit.rank, 2);
        let reference = residual_sum_of_squares(&[&ones, &x], &y);
        assert!((fit.rss - reference.rss).abs() < 1e-12);
    }

    #[test]
    fn factor_preserves_regressions() {
        let ones = vec![1.0; 6];
        let x = vec![0.5, 1.0, -2.0, 3.0, 0.0, 1.5];
        let y = vec![1.0, 0.0, 2.0, -1.0, 4.0, 0.5];
        let full = residual_sum_of_squares(&[&ones, &x], &y);
        let r = triangular_factor(&[ones, x, y]);
        assert_eq!(r[0][1], 0.0);
        let small = residual_sum_of_squares(&[&r[0], &r[1]], &r[2]);
        assert!((full.rss - small.rss).abs() < 1e-12);
        assert_eq!(full.rank, small.rank);
    }

    #[test]
    fn scale_does_not_affect_rank() {
        let ones = [1.0; 4];
        let big = [1e6, 2e6, 0.0, 5e6];
        let small = [1e-6, 0.0, 3e-6, 1e-6];
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(residual_sum_of_squares(&[&ones, &big, &small], &y).rank, 3);
    }
}
