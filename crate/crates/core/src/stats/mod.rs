//! Evaluation metrics and training diagnostics.

mod ttest;

pub use ttest::{
    ln_gamma, paired_t_test, regularized_incomplete_beta, student_t_two_tailed, PairedSample,
    TTestResult,
};

use crate::error::{Error, Result};
use crate::tensor::GradientSet;

/// Fraction of positions where `predictions` and `labels` agree.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Validation("accuracy of an empty set".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean cosine similarity over all unordered pairs of gradients.
pub fn gradient_alignment(gradients: &[GradientSet]) -> Result<f64> {
    if gradients.len() < 2 {
        return Err(Error::Validation(format!(
            "alignment needs ≥ 2 gradients, got {}",
            gradients.len()
        )));
    }
    let flat: Vec<Vec<f64>> = gradients.iter().map(GradientSet::flatten).collect();
    for g in &gradients[1..] {
        gradients[0].check_compatible(g, "gradient_alignment")?;
    }
    let norms: Vec<f64> = flat
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::DegenerateSample(format!(
            "gradient {i} has zero norm"
        )));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            let dot: f64 = flat[i].iter().zip(&flat[j]).map(|(a, b)| a * b).sum();
            total += (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Streaming form of [`gradient_alignment`].
///
/// For unit vectors `u_i`, `Σ_{i<j} u_i·u_j = (‖Σ u_i‖² − n) / 2`, so the mean
/// pairwise cosine needs only the running sum of normalized gradients.
#[derive(Debug, Clone, Default)]
pub struct AlignmentTracker {
    sum: Vec<f64>,
    count: usize,
}

impl AlignmentTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one gradient; zero gradients are skipped.
    pub fn push(&mut self, gradient: &GradientSet) {
        let norm = gradient.l2_norm();
        if norm == 0.0 || !norm.is_finite() {
            return;
        }
        if self.sum.is_empty() {
            self.sum = vec![0.0; gradient.num_scalars()];
        }
        let values = gradient.iter().flat_map(|(_, t)| t.data());
        for (s, v) in self.sum.iter_mut().zip(values) {
            *s += v / norm;
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean pairwise cosine, or `None` with fewer than two gradients.
    pub fn value(&self) -> Option<f64> {
        if self.count < 2 {
            return None;
        }
        let n = self.count as f64;
        let sq: f64 = self.sum.iter().map(|v| v * v).sum();
        Some(((sq - n) / (n * (n - 1.0))).clamp(-1.0, 1.0))
    }
}

/// Ordered `(step, value)` points of a learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    points: Vec<(usize, f64)>,
}

impl Curve {
    pub fn new(points: Vec<(usize, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Validation(
                "curve steps must be strictly increasing".into(),
            ));
        }
        Ok(Curve { points })
    }

    /// Points numbered 1, 2, 3, ...
    pub fn from_values(values: &[f64]) -> Self {
        Curve {
            points: values
                .iter()
                .enumerate()
                .map(|(i, &v)| (i + 1, v))
                .collect(),
        }
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sample variance (n − 1 denominator) of the curve's first differences.
/// Lower is smoother.
pub fn curve_smoothness(curve: &Curve) -> Result<f64> {
    if curve.len() < 3 {
        return Err(Error::Validation(format!(
            "smoothness needs ≥ 3 points, got {}",
            curve.len()
        )));
    }
    let diffs: Vec<f64> = curve.points.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    Ok(diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Formats like C's `%g`: `digits` significant digits, trailing zeros trimmed,
/// scientific notation for very large or small magnitudes.
pub fn format_sig(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than 2 values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
