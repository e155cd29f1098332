//! Vocabulary growth, `V(n) = K * n^beta`, fitted by least squares in log-log space.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Reference exponents for annotating reports: English, Hindi, Hinglish.
pub const REFERENCE_BETAS: [(&str, f64); 3] = [("english", 0.58), ("hindi", 0.61), ("hinglish", 0.74)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeapsFit {
    pub k: f64,
    pub beta: f64,
    /// RMS of the fit residuals of `ln v`.
    pub residual: f64,
}

impl HeapsFit {
    pub fn predict(&self, n: f64) -> f64 {
        self.k * n.powf(self.beta)
    }
}

/// Fits `ln v = ln K + beta ln n` by ordinary least squares.
///
/// Requires at least three samples, strictly increasing `n`, nondecreasing
/// `v`, all positive. A fitted exponent outside (0, 1) is rejected.
pub fn fit_heaps(samples: &[(f64, f64)]) -> Result<HeapsFit, CorpusError> {
    if samples.len() < 3 {
        return Err(CorpusError::HeapsSamples(format!("need at least 3 samples, got {}", samples.len())));
    }
    for (i, &(n, v)) in samples.iter().enumerate() {
        if !(n > 0.0 && v > 0.0 && n.is_finite() && v.is_finite()) {
            return Err(CorpusError::HeapsSamples(format!("sample {i} is not positive: ({n}, {v})")));
        }
        if i > 0 {
            let (pn, pv) = samples[i - 1];
            if n <= pn || v < pv {
                return Err(CorpusError::HeapsSamples(format!(
                    "sample {i} breaks ordering: n must increase strictly and v must not decrease"
                )));
            }
        }
    }
    let m = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let beta = sxy / sxx;
    let ln_k = my - beta * mx;
    let residual =
        (xs.iter().zip(&ys).map(|(x, y)| (y - ln_k - beta * x).powi(2)).sum::<f64>() / m).sqrt();
    if !(beta > 0.0 && beta < 1.0) {
        return Err(CorpusError::HeapsExponent(beta));
    }
    Ok(HeapsFit { k: ln_k.exp(), beta, residual })
}

/// Samples `(tokens seen, distinct types seen)` at roughly log-spaced
/// prefix lengths of the token stream, always including the full length.
pub fn vocabulary_growth<'a>(tokens: impl IntoIterator<Item = &'a str>, points: usize) -> Vec<(f64, f64)> {
    let tokens: Vec<&str> = tokens.into_iter().collect();
    let total = tokens.len();
    if total == 0 || points == 0 {
        return Vec::new();
    }
    let mut marks: Vec<usize> = (1..=points)
        .map(|k| {
            let frac = k as f64 / points as f64;
            ((total as f64).powf(frac).round() as usize).clamp(1, total)
        })
        .collect();
    marks.dedup();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(marks.len());
    let mut next = marks.iter().peekable();
    for (i, tok) in tokens.iter().enumerate() {
        seen.insert(*tok);
        if next.next_if_eq(&&(i + 1)).is_some() {
            out.push(((i + 1) as f64, seen.len() as f64));
        }
    }
    out
}

/// `n,v,fit_v` rows with the fit parameters in a leading comment line.
pub fn heaps_csv(samples: &[(f64, f64)], fit: &HeapsFit) -> String {
    let mut out = String::new();
    writeln!(out, "# heaps K={:.6} beta={:.6} residual={:.6e}", fit.k, fit.beta, fit.residual).unwrap();
    out.push_str("n,v,fit_v\n");
    for &(n, v) in samples {
        writeln!(out, "{n},{v},{:.4}", fit.predict(n)).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn power_law(k: f64, beta: f64) -> Vec<(f64, f64)> {
        (1..=40).map(|i| {
            let n = (i * 250) as f64;
            (n, k * n.powf(beta))
        }).collect()
    }

    #[test]
    fn exact_recovery() {
        let fit = fit_heaps(&power_law(10.0, 0.5)).unwrap();
        assert!((fit.k - 10.0).abs() < 1e-9, "{fit:?}");
        assert!((fit.beta - 0.5).abs() < 1e-12);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn noisy_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut samples = power_law(40.0, 0.74);
        for s in &mut samples {
            s.1 *= 1.0 + 0.01 * rng.random_range(-1.0..1.0);
        }
        // keep v nondecreasing
        for i in 1..samples.len() {
            samples[i].1 = samples[i].1.max(samples[i - 1].1);
        }
        let fit = fit_heaps(&samples).unwrap();
        assert!((fit.beta - 0.74).abs() <= 0.02, "{fit:?}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_heaps(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_heaps(&[(1.0, 1.0), (2.0, 0.0), (3.0, 2.0)]).is_err());
        assert!(fit_heaps(&[(1.0, 1.0), (1.0, 2.0), (3.0, 2.0)]).is_err());
        assert!(fit_heaps(&[(1.0, 3.0), (2.0, 2.0), (3.0, 4.0)]).is_err());
    }

    #[test]
    fn growth_samples_are_monotone() {
        let words: Vec<String> = (0..5000).map(|i| format!("w{}", (i * 7919) % 613)).collect();
        let s = vocabulary_growth(words.iter().map(String::as_str), 20);
        assert_eq!(s.last().unwrap().0, 5000.0);
        assert!(s.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 >= w[0].1));
        let fit = fit_heaps(&s).unwrap();
        let csv = heaps_csv(&s, &fit);
        assert!(csv.starts_with("# heaps K="));
        assert!(csv.lines().nth(1) == Some("n,v,fit_v"));
    }
}
