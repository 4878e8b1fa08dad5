use crate::error::{Error, Result};

use super::format_sig;

/// Per-run scores of two methods, paired by index.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedSample {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Validation(format!(
                "paired sample lengths differ: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        if a.len() < 2 {
            return Err(Error::Validation(format!(
                "a paired t-test needs at least 2 pairs, got {}",
                a.len()
            )));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "paired sample holds a non-finite value".into(),
            ));
        }
        Ok(PairedSample { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub n: usize,
    pub t: f64,
    pub df: usize,
    /// Two-tailed p-value.
    pub p: f64,
    pub mean_diff: f64,
    pub sd_diff: f64,
}

impl TTestResult {
    /// Machine-readable `n,t,df,p` line.
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.n,
            format_sig(self.t, 6),
            self.df,
            format_sig(self.p, 6)
        )
    }

    pub fn to_report(&self, label_a: &str, label_b: &str) -> String {
        format!(
            "paired t-test ({label_a} - {label_b}, two-tailed)\n  \
             n = {}\n  mean diff = {}\n  sd diff = {}\n  t = {}\n  df = {}\n  p = {}\n",
            self.n,
            format_sig(self.mean_diff, 6),
            format_sig(self.sd_diff, 6),
            format_sig(self.t, 6),
            self.df,
            format_sig(self.p, 6),
        )
    }
}

/// Two-tailed paired t-test on `a − b`.
pub fn paired_t_test(sample: &PairedSample) -> Result<TTestResult> {
    let d = sample.differences();
    let n = d.len();
    if n < 2 {
        return Err(Error::Validation(
            "a paired t-test needs at least 2 pairs".into(),
        ));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    // Differences that are all equal up to rounding count as zero variance.
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if sd == 0.0 || sd <= 1e-14 * scale {
        return Err(Error::DegenerateSample(
            "all paired differences are equal; the t statistic is undefined".into(),
        ));
    }
    let t = mean * (n as f64).sqrt() / sd;
    let df = n - 1;
    Ok(TTestResult {
        n,
        t,
        df,
        p: student_t_two_tailed(t, df as f64)?,
        mean_diff: mean,
        sd_diff: sd,
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom,
/// as `I_x(df/2, 1/2)` with `x = df / (df + t²)`.
pub fn student_t_two_tailed(t: f64, df: f64) -> Result<f64> {
    if df.is_nan() || df <= 0.0 || !t.is_finite() {
        return Err(Error::Validation(format!(
            "bad Student-t arguments t={t}, df={df}"
        )));
    }
    let x = df / (df + t * t);
    Ok(regularized_incomplete_beta(x, 0.5 * df, 0.5)?.clamp(0.0, 1.0))
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::Validation(format!(
            "incomplete beta needs a, b > 0 and x in [0, 1]; got x={x}, a={a}, b={b}"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The continued fraction converges fastest for x below the mean a / (a + b).
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_continued_fraction(x, a, b)? / a)
    } else {
        Ok(1.0 - front * beta_continued_fraction(1.0 - x, b, a)? / b)
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> Result<f64> {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::NonFinite(format!(
        "incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})"
    )))
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection: Γ(x) Γ(1 − x) = π / sin(πx).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
