//! Post-processing of sweep tables: transmission plateaus in angle scans and
//! oscillation periods in flux scans.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {need} samples, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("samples are not uniformly spaced (step {first} vs {other})")]
    NonUniform { first: f64, other: f64 },
    #[error("{xs} abscissae but {ys} values")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("series is constant; no oscillation to analyse")]
    Flat,
}

/// Plateau detection rule: a run of at least `min_steps` consecutive samples
/// whose values all lie within `±tolerance` (relative) of the run's mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauRule {
    pub tolerance: f64,
    pub min_steps: usize,
}

impl Default for PlateauRule {
    fn default() -> Self {
        Self { tolerance: 0.25, min_steps: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub mean_t: f64,
    pub steps: usize,
}

impl Plateau {
    pub fn center(&self) -> f64 {
        0.5 * (self.alpha_start + self.alpha_end)
    }
}

fn check_uniform(xs: &[f64], ys: usize, need: usize) -> Result<f64, AnalysisError> {
    if xs.len() != ys {
        return Err(AnalysisError::LengthMismatch { xs: xs.len(), ys });
    }
    if xs.len() < need {
        return Err(AnalysisError::TooFewPoints { need, got: xs.len() });
    }
    let step = xs[1] - xs[0];
    for w in xs.windows(2) {
        let d = w[1] - w[0];
        if !(step > 0.0) || (d - step).abs() > 1e-6 * step.abs() {
            return Err(AnalysisError::NonUniform { first: step, other: d });
        }
    }
    Ok(step)
}

fn within(values: &[f64], tolerance: f64) -> Option<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().all(|&v| (v - mean).abs() <= tolerance * mean.abs()).then_some(mean)
}

/// Greedy left-to-right scan: each plateau is grown as long as the rule
/// holds, then the scan resumes after it.
pub fn detect_plateaus(alphas: &[f64], t: &[f64], rule: PlateauRule) -> Result<Vec<Plateau>, AnalysisError> {
    check_uniform(alphas, t.len(), rule.min_steps.max(2))?;
    let mut out = Vec::new();
    let mut start = 0;
    while start + rule.min_steps <= t.len() {
        let mut end = start + rule.min_steps;
        if within(&t[start..end], rule.tolerance).is_none() {
            start += 1;
            continue;
        }
        while end < t.len() && within(&t[start..=end], rule.tolerance).is_some() {
            end += 1;
        }
        let mean = within(&t[start..end], rule.tolerance).unwrap_or(0.0);
        out.push(Plateau { alpha_start: alphas[start], alpha_end: alphas[end - 1], mean_t: mean, steps: end - start });
        start = end;
    }
    Ok(out)
}

/// Mean distance between consecutive plateau centres.
pub fn plateau_spacing(plateaus: &[Plateau]) -> Option<f64> {
    if plateaus.len() < 2 {
        return None;
    }
    let first = plateaus[0].center();
    let last = plateaus[plateaus.len() - 1].center();
    Some((last - first) / (plateaus.len() - 1) as f64)
}

/// Settings for flux-scan analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxRule {
    /// Secondary spectral peaks are reported down to this fraction of the dominant one.
    pub peak_fraction: f64,
    /// Excursions smaller than this fraction of max |I| are not counted as oscillations.
    pub oscillation_threshold: f64,
}

impl Default for FluxRule {
    fn default() -> Self {
        Self { peak_fraction: 0.1, oscillation_threshold: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    /// Period in units of Φ₀.
    pub period: f64,
    /// Share of the total (non-DC) spectral power.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxSpectrum {
    pub dominant: Tone,
    /// Spectral peaks above the reporting fraction, strongest first.
    pub tones: Vec<Tone>,
    /// Frequency resolution in 1/Φ₀.
    pub bin: f64,
    /// Number of dominant periods inside the scan.
    pub periods_covered: f64,
}

impl FluxSpectrum {
    /// Whether `period` (in Φ₀) lies within one spectral bin of the dominant tone.
    pub fn matches(&self, period: f64) -> bool {
        (1.0 / self.dominant.period - 1.0 / period).abs() <= self.bin
    }
}

fn detrend(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    xs.iter().zip(ys).map(|(x, y)| y - my - slope * (x - mx)).collect()
}

/// Dominant oscillation period of `values` sampled at flux ratios `phis`,
/// from the power spectrum of the linearly detrended series.
pub fn extract_flux_period(phis: &[f64], values: &[f64], rule: FluxRule) -> Result<FluxSpectrum, AnalysisError> {
    let step = check_uniform(phis, values.len(), 8)?;
    let n = values.len();
    let resid = detrend(phis, values);
    let mut buf: Vec<Complex<f64>> = resid.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let power: Vec<f64> = buf[..=n / 2].iter().map(|z| z.norm_sqr()).collect();
    let total: f64 = power[1..].iter().sum();
    let max = power[1..].iter().cloned().fold(0.0, f64::max);
    if !(total > 0.0) || max <= 1e-28 * total.max(1.0) {
        return Err(AnalysisError::Flat);
    }
    let span = step * n as f64;
    let tone = |k: usize| Tone { period: span / k as f64, weight: power[k] / total };
    let mut peaks: Vec<usize> = (1..power.len())
        .filter(|&k| {
            let left = if k > 1 { power[k - 1] } else { 0.0 };
            let right = power.get(k + 1).copied().unwrap_or(0.0);
            power[k] >= left && power[k] >= right && power[k] >= rule.peak_fraction * max
        })
        .collect();
    peaks.sort_by(|&a, &b| power[b].total_cmp(&power[a]).then(a.cmp(&b)));
    let dominant = tone(peaks[0]);
    Ok(FluxSpectrum {
        dominant,
        tones: peaks.into_iter().map(tone).collect(),
        bin: 1.0 / span,
        periods_covered: span / dominant.period,
    })
}

/// Sign changes of the detrended series, counting only swings that reach
/// `threshold · max|values|` on both sides.
pub fn count_oscillations(phis: &[f64], values: &[f64], threshold: f64) -> usize {
    if phis.len() != values.len() || values.len() < 3 {
        return 0;
    }
    let level = threshold * values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut sign = 0i8;
    let mut flips = 0;
    for r in detrend(phis, values) {
        let s = if r > level {
            1
        } else if r < -level {
            -1
        } else {
            continue;
        };
        if sign != 0 && s != sign {
            flips += 1;
        }
        sign = s;
    }
    flips
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, step: f64) -> Vec<f64> {
        (0..n).map(|i| 45.0 + step * i as f64).collect()
    }

    #[test]
    fn constant_series_is_one_plateau() {
        let a = grid(113, 2.4);
        let p = detect_plateaus(&a, &vec![3e-5; 113], PlateauRule::default()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].alpha_start, p[0].alpha_end, p[0].steps), (45.0, a[112], 113));
        assert!(plateau_spacing(&p).is_none());
    }

    #[test]
    fn steps_and_noise() {
        let a = grid(40, 1.0);
        let mut t = vec![1.0; 10];
        t.extend([0.1, 5.0, 0.2, 3.0, 0.05]);
        t.extend(vec![2.0; 8]);
        t.extend((0..17).map(|i| if i % 2 == 0 { 1.0 } else { 10.0 }));
        let p = detect_plateaus(&a, &t, PlateauRule::default()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].alpha_start, p[0].steps), (45.0, 10));
        assert_eq!((p[1].alpha_start, p[1].steps), (60.0, 8));
        assert!((plateau_spacing(&p).unwrap() - (63.5 - 49.5)).abs() < 1e-12);
    }

    #[test]
    fn plateau_input_checks() {
        assert!(matches!(
            detect_plateaus(&[1.0, 2.0, 3.0], &[1.0; 3], PlateauRule::default()),
            Err(AnalysisError::TooFewPoints { .. })
        ));
        let uneven = [0.0, 1.0, 2.0, 3.5, 4.0, 5.0];
        assert!(matches!(detect_plateaus(&uneven, &[1.0; 6], PlateauRule::default()), Err(AnalysisError::NonUniform { .. })));
    }

    #[test]
    fn pure_cosine_period() {
        let phis: Vec<f64> = (0..256).map(|i| i as f64 / 64.0).collect();
        let vals: Vec<f64> = phis.iter().map(|p| 2.0 + (2.0 * std::f64::consts::PI * p / (3.0 / 16.0)).cos()).collect();
        let s = extract_flux_period(&phis, &vals, FluxRule::default()).unwrap();
        assert!(s.matches(3.0 / 16.0), "{:?}", s.dominant);
        assert!(s.periods_covered > 4.0);
        // zero crossings at (k + 1/4)·T for k = 0..41; the 43rd falls on the last sample
        assert_eq!(count_oscillations(&phis, &vals, 0.01), 42);
    }

    #[test]
    fn two_tones_are_reported() {
        let phis: Vec<f64> = (0..512).map(|i| i as f64 / 128.0).collect();
        let w = |p: f64, period: f64| (2.0 * std::f64::consts::PI * p / period).sin();
        let vals: Vec<f64> = phis.iter().map(|&p| w(p, 2.0 / 16.0) + 0.6 * w(p, 3.0 / 16.0)).collect();
        let s = extract_flux_period(&phis, &vals, FluxRule::default()).unwrap();
        assert!(s.matches(2.0 / 16.0));
        let has = |period: f64| s.tones.iter().any(|t| (1.0 / t.period - 1.0 / period).abs() <= s.bin);
        assert!(has(3.0 / 16.0), "{:?}", s.tones);
        assert!(s.tones[0].weight > s.tones[1].weight);
    }

    #[test]
    fn flat_and_monotone_series() {
        let phis: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
        assert_eq!(extract_flux_period(&phis, &[1.0; 32], FluxRule::default()), Err(AnalysisError::Flat));
        // a straight line carries no oscillation after detrending
        let line: Vec<f64> = phis.iter().map(|p| 1.0 + 0.3 * p).collect();
        assert_eq!(count_oscillations(&phis, &line, 0.01), 0);
        // a parabola changes sign twice around its fitted line
        let para: Vec<f64> = phis.iter().map(|p| 1.0 + p * p).collect();
        assert_eq!(count_oscillations(&phis, &para, 0.01), 2);
    }
}
