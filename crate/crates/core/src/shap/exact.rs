//! Shapley values by enumerating every feature subset.

use super::{check_inputs, Predictor, Result, ShapError, ShapValues};

/// Largest feature count the subset enumeration accepts.
pub const MAX_EXACT_FEATURES: usize = 15;

/// Interventional Shapley values of `row` by full subset enumeration.
///
/// `v(S)` is the mean model output over `background` rows with the features
/// in `S` replaced by the row's values. Cost is `2^p · |background|` model
/// calls, so `p` is capped at [`MAX_EXACT_FEATURES`].
pub fn exact_shap<P: Predictor + ?Sized>(
    model: &P,
    row: &[f64],
    background: &[Vec<f64>],
) -> Result<ShapValues> {
    let p = model.n_features();
    if p > MAX_EXACT_FEATURES {
        return Err(ShapError::TooManyFeatures {
            features: p,
            limit: MAX_EXACT_FEATURES,
        });
    }
    check_inputs(p, row, background)?;

    let n_masks = 1usize << p;
    let mut value = vec![0.0; n_masks];
    let mut hybrid = vec![0.0; p];
    for (mask, v) in value.iter_mut().enumerate() {
        let mut sum = 0.0;
        for z in background {
            for j in 0..p {
                hybrid[j] = if mask >> j & 1 == 1 { row[j] } else { z[j] };
            }
            sum += model.predict(&hybrid);
        }
        *v = sum / background.len() as f64;
    }

    // weight[s] = s! (p - s - 1)! / p!
    let weight: Vec<f64> = (0..p)
        .map(|s| 1.0 / (p as f64 * binomial(p - 1, s)))
        .collect();
    let mut phi = vec![0.0; p];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in (0..n_masks).filter(|m| m & bit == 0) {
            let s = mask.count_ones() as usize;
            *phi_i += weight[s] * (value[mask | bit] - value[mask]);
        }
    }
    Ok(ShapValues {
        base: value[0],
        phi,
    })
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shap::FnPredictor;

    #[test]
    fn constant_model_has_zero_attribution() {
        let model = FnPredictor::new(3, |_: &[f64]| 0.7);
        let bg = vec![vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0]];
        let s = exact_shap(&model, &[9.0, 9.0, 9.0], &bg).unwrap();
        assert_eq!(s.phi, vec![0.0; 3]);
        assert_eq!(s.base, 0.7);
    }

    #[test]
    fn stump_attribution() {
        // f = a if x0 >= t else b; a quarter of the background is >= t.
        let (a, b) = (0.9, 0.2);
        let model = FnPredictor::new(2, move |r: &[f64]| if r[0] >= 1.0 { a } else { b });
        let bg = vec![vec![2.0, 0.0], vec![0.0, 5.0], vec![0.0, 1.0], vec![0.5, 1.0]];
        let s = exact_shap(&model, &[3.0, 7.0], &bg).unwrap();
        let p = 0.25;
        assert!((s.phi[0] - (a - (p * a + (1.0 - p) * b))).abs() < 1e-15);
        assert_eq!(s.phi[1], 0.0);
    }

    #[test]
    fn refuses_wide_models() {
        let model = FnPredictor::new(16, |_: &[f64]| 0.0);
        assert!(matches!(
            exact_shap(&model, &[0.0; 16], &[vec![0.0; 16]]),
            Err(ShapError::TooManyFeatures { features: 16, .. })
        ));
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 0), 1.0);
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(14, 7), 3432.0);
    }
}
