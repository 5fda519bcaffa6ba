//! Resampling and categorical draws.

use rand::Rng;

use crate::{Error, Result};

fn check(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::DegenerateWeights);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    Ok(total)
}

/// Systematic resampling: one uniform offset `u ~ U[0, 1/n)` swept across
/// the cumulative weights. Weights need not be normalized.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], n_out: usize, rng: &mut R) -> Result<Vec<usize>> {
    let total = check(weights)?;
    let last = weights.iter().rposition(|w| *w > 0.0).expect("positive total");
    let step = 1.0 / n_out as f64;
    let u0 = rng.gen::<f64>() * step;
    let mut out = Vec::with_capacity(n_out);
    let mut j = 0;
    let mut cum = weights[0] / total;
    for k in 0..n_out {
        let u = u0 + k as f64 * step;
        while u >= cum && j < last {
            j += 1;
            cum += weights[j] / total;
        }
        out.push(j);
    }
    Ok(out)
}

/// One draw from a categorical distribution by inversion.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let total = check(weights)?;
    let last = weights.iter().rposition(|w| *w > 0.0).expect("positive total");
    let u = rng.gen::<f64>() * total;
    let mut cum = 0.0;
    for (i, w) in weights.iter().enumerate().take(last) {
        cum += w;
        if u < cum {
            return Ok(i);
        }
    }
    Ok(last)
}

/// Reorders `items` so that slot `k` holds `items[ancestors[k]]`, moving each
/// source at its last use and cloning only duplicates.
pub fn reassign<T: Clone>(items: Vec<T>, ancestors: &[usize]) -> Vec<T> {
    let mut last_use = vec![usize::MAX; items.len()];
    for (k, &a) in ancestors.iter().enumerate() {
        last_use[a] = k;
    }
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    ancestors
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            if last_use[a] == k {
                slots[a].take().expect("moved once")
            } else {
                slots[a].as_ref().expect("not yet moved").clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_and_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(systematic_resample(&[0.25; 4], 4, &mut rng).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(systematic_resample(&[1.0, 0.0, 0.0], 3, &mut rng).unwrap(), vec![0, 0, 0]);
        assert_eq!(systematic_resample(&[0.0, 0.0, 1.0], 3, &mut rng).unwrap(), vec![2, 2, 2]);
        assert!(matches!(systematic_resample(&[0.0, 0.0], 2, &mut rng), Err(Error::DegenerateWeights)));
    }

    #[test]
    fn counts_within_one_of_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = [0.5, 0.3, 0.2];
        let mut freq = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            let idx = systematic_resample(&w, 7, &mut rng).unwrap();
            let mut counts = [0usize; 3];
            for i in idx {
                counts[i] += 1;
                freq[i] += 1;
            }
            for i in 0..3 {
                assert!((counts[i] as f64 - 7.0 * w[i]).abs() < 1.0);
            }
        }
        for i in 0..3 {
            assert!((freq[i] as f64 / (7 * draws) as f64 - w[i]).abs() < 0.02);
        }
    }

    #[test]
    fn categorical_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = [0.1, 0.0, 0.6, 0.3];
        let mut freq = [0usize; 4];
        for _ in 0..50_000 {
            freq[sample_index(&w, &mut rng).unwrap()] += 1;
        }
        assert_eq!(freq[1], 0);
        for i in 0..4 {
            assert!((freq[i] as f64 / 50_000.0 - w[i]).abs() < 0.01);
        }
    }

    #[test]
    fn reassign_moves_and_clones() {
        let items = vec![String::from("a"), String::from("b"), String::from("c")];
        assert_eq!(reassign(items, &[2, 2, 0]), vec!["c", "c", "a"]);
    }
}
