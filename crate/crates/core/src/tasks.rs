//! Seeded synthetic series and next-step datasets.
//!
//! Every generator is a pure function of its [`TaskSpec`]. Randomness comes
//! from [`SplitMix64`] with a Box–Muller transform, so a series depends only
//! on `(task, length, seed, params)`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest series any generator accepts.
pub const MIN_LENGTH: usize = 16;
pub const DEFAULT_LENGTH: usize = 200;
pub const DEFAULT_SPLIT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Arma,
    ChaoticLogistic,
    DampedOsc,
    NoisyDampedOsc,
    PiecewiseRegime,
    Sawtooth,
    Square,
    Triangle,
    SeasonalTrend,
    Sine,
}

impl TaskName {
    pub const ALL: [TaskName; 10] = [
        TaskName::Arma,
        TaskName::ChaoticLogistic,
        TaskName::DampedOsc,
        TaskName::NoisyDampedOsc,
        TaskName::PiecewiseRegime,
        TaskName::Sawtooth,
        TaskName::Square,
        TaskName::Triangle,
        TaskName::SeasonalTrend,
        TaskName::Sine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::Arma => "arma",
            TaskName::ChaoticLogistic => "chaotic_logistic",
            TaskName::DampedOsc => "damped_osc",
            TaskName::NoisyDampedOsc => "noisy_damped_osc",
            TaskName::PiecewiseRegime => "piecewise_regime",
            TaskName::Sawtooth => "sawtooth",
            TaskName::Square => "square",
            TaskName::Triangle => "triangle",
            TaskName::SeasonalTrend => "seasonal_trend",
            TaskName::Sine => "sine",
        }
    }

    /// Row label used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            TaskName::Arma => "ARMA",
            TaskName::ChaoticLogistic => "Chaotic Logistic",
            TaskName::DampedOsc => "Damped Oscillator",
            TaskName::NoisyDampedOsc => "Noisy Damped Osc",
            TaskName::PiecewiseRegime => "Piecewise Regime",
            TaskName::Sawtooth => "Sawtooth",
            TaskName::Square => "Square Wave",
            TaskName::Triangle => "Triangle Wave",
            TaskName::SeasonalTrend => "Seasonal Trend",
            TaskName::Sine => "Sine Wave",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(|t| t.as_str()).join(", ")
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|&t| t == self).unwrap() as u64
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown task {s:?}; valid tasks: {}",
                    Self::valid_names()
                ))
            })
    }
}

/// SplitMix64: a 64-bit counter advanced by the golden-ratio increment and
/// passed through a fixed avalanche mix.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller; the sine half is discarded.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmaParams {
    pub ar: [f64; 2],
    pub ma: [f64; 2],
    pub sigma: f64,
    /// `x₀, x₁`.
    pub init: [f64; 2],
}

impl Default for ArmaParams {
    fn default() -> Self {
        Self {
            ar: [0.75, -0.25],
            ma: [0.65, 0.35],
            sigma: 1.0,
            init: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub r: f64,
    /// Fixed start; when absent the start is `0.5 + jitter·U(−1, 1)` from the seed.
    pub x0: Option<f64>,
    pub jitter: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            r: 3.9,
            x0: None,
            jitter: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DampedParams {
    pub amplitude: f64,
    pub decay: f64,
    pub omega: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
}

impl Default for DampedParams {
    fn default() -> Self {
        Self {
            amplitude: 10.0,
            decay: 0.02,
            omega: 0.25,
            noise: 0.0,
        }
    }
}

impl DampedParams {
    pub fn noisy() -> Self {
        Self {
            noise: 0.05,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveParams {
    pub period: f64,
    pub amplitude: f64,
}

impl Default for WaveParams {
    fn default() -> Self {
        Self {
            period: 25.0,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeasonalParams {
    pub slope: f64,
    pub period: f64,
    pub amplitude: f64,
}

impl Default for SeasonalParams {
    fn default() -> Self {
        Self {
            slope: 0.05,
            period: 25.0,
            amplitude: 2.0,
        }
    }
}

/// Generator parameters; the variant fixes the task.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskParams {
    Arma(ArmaParams),
    ChaoticLogistic(LogisticParams),
    DampedOsc(DampedParams),
    NoisyDampedOsc(DampedParams),
    /// Three equal segments: `0.1t`, `30 + 5 sin 0.3t`, `60 − 0.2t`.
    PiecewiseRegime,
    Sawtooth(WaveParams),
    Square(WaveParams),
    Triangle(WaveParams),
    SeasonalTrend(SeasonalParams),
    Sine(WaveParams),
}

impl TaskParams {
    pub fn defaults(name: TaskName) -> Self {
        match name {
            TaskName::Arma => Self::Arma(Default::default()),
            TaskName::ChaoticLogistic => Self::ChaoticLogistic(Default::default()),
            TaskName::DampedOsc => Self::DampedOsc(Default::default()),
            TaskName::NoisyDampedOsc => Self::NoisyDampedOsc(DampedParams::noisy()),
            TaskName::PiecewiseRegime => Self::PiecewiseRegime,
            TaskName::Sawtooth => Self::Sawtooth(Default::default()),
            TaskName::Square => Self::Square(Default::default()),
            TaskName::Triangle => Self::Triangle(Default::default()),
            TaskName::SeasonalTrend => Self::SeasonalTrend(Default::default()),
            TaskName::Sine => Self::Sine(Default::default()),
        }
    }

    pub fn name(&self) -> TaskName {
        match self {
            Self::Arma(_) => TaskName::Arma,
            Self::ChaoticLogistic(_) => TaskName::ChaoticLogistic,
            Self::DampedOsc(_) => TaskName::DampedOsc,
            Self::NoisyDampedOsc(_) => TaskName::NoisyDampedOsc,
            Self::PiecewiseRegime => TaskName::PiecewiseRegime,
            Self::Sawtooth(_) => TaskName::Sawtooth,
            Self::Square(_) => TaskName::Square,
            Self::Triangle(_) => TaskName::Triangle,
            Self::SeasonalTrend(_) => TaskName::SeasonalTrend,
            Self::Sine(_) => TaskName::Sine,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub params: TaskParams,
    pub length: usize,
    pub seed: u64,
}

impl TaskSpec {
    /// Default parameters, 200 steps.
    pub fn new(name: TaskName, seed: u64) -> Self {
        Self {
            params: TaskParams::defaults(name),
            length: DEFAULT_LENGTH,
            seed,
        }
    }

    pub fn name(&self) -> TaskName {
        self.params.name()
    }
}

fn phase(t: f64, period: f64) -> f64 {
    (t / period).rem_euclid(1.0)
}

/// Generates the series described by `spec`.
pub fn generate(spec: &TaskSpec) -> Result<Vec<f64>> {
    let n = spec.length;
    if n < MIN_LENGTH {
        return Err(Error::Config(format!(
            "series length {n} is below the minimum of {MIN_LENGTH}"
        )));
    }
    let mut rng = SplitMix64::new(
        spec.seed ^ (spec.name().index() + 1).wrapping_mul(0xD1B5_4A32_D192_ED03),
    );
    let ts = (0..n).map(|t| t as f64);
    let wave_check = |w: &WaveParams| -> Result<()> {
        if !(w.period > 0.0) {
            return Err(Error::Config(format!("period {} must be positive", w.period)));
        }
        Ok(())
    };
    let series = match &spec.params {
        TaskParams::Arma(p) => {
            let eps: Vec<f64> = (0..n).map(|_| p.sigma * rng.next_normal()).collect();
            let mut x = vec![0.0; n];
            x[0] = p.init[0];
            x[1] = p.init[1];
            for t in 2..n {
                x[t] = p.ar[0] * x[t - 1]
                    + p.ar[1] * x[t - 2]
                    + eps[t]
                    + p.ma[0] * eps[t - 1]
                    + p.ma[1] * eps[t - 2];
            }
            x
        }
        TaskParams::ChaoticLogistic(p) => {
            let x0 = match p.x0 {
                Some(x0) => x0,
                None => 0.5 + p.jitter * (2.0 * rng.next_f64() - 1.0),
            };
            if !(x0 > 0.0 && x0 < 1.0) {
                return Err(Error::Config(format!(
                    "logistic start {x0} must lie strictly inside (0, 1)"
                )));
            }
            let mut x = Vec::with_capacity(n);
            x.push(x0);
            for t in 1..n {
                let prev = x[t - 1];
                x.push(p.r * prev * (1.0 - prev));
            }
            x
        }
        TaskParams::DampedOsc(p) | TaskParams::NoisyDampedOsc(p) => ts
            .map(|t| {
                let clean = p.amplitude * (-p.decay * t).exp() * (p.omega * t).sin();
                if p.noise > 0.0 {
                    clean + p.noise * rng.next_normal()
                } else {
                    clean
                }
            })
            .collect(),
        TaskParams::PiecewiseRegime => {
            let seg = n.div_ceil(3);
            (0..n)
                .map(|i| {
                    let t = i as f64;
                    match i / seg {
                        0 => 0.1 * t,
                        1 => 30.0 + 5.0 * (0.3 * t).sin(),
                        _ => 60.0 - 0.2 * t,
                    }
                })
                .collect()
        }
        TaskParams::Sawtooth(w) => {
            wave_check(w)?;
            ts.map(|t| w.amplitude * (2.0 * phase(t, w.period) - 1.0)).collect()
        }
        TaskParams::Square(w) => {
            wave_check(w)?;
            ts.map(|t| {
                if phase(t, w.period) < 0.5 {
                    w.amplitude
                } else {
                    -w.amplitude
                }
            })
            .collect()
        }
        TaskParams::Triangle(w) => {
            wave_check(w)?;
            // 0 at t = 0, peak at a quarter period, like the sine
            ts.map(|t| {
                let ph = phase(t + 0.25 * w.period, w.period);
                w.amplitude * (1.0 - 4.0 * (ph - 0.5).abs())
            })
            .collect()
        }
        TaskParams::SeasonalTrend(p) => {
            if !(p.period > 0.0) {
                return Err(Error::Config(format!("period {} must be positive", p.period)));
            }
            ts.map(|t| p.slope * t + p.amplitude * (2.0 * PI * t / p.period).sin())
                .collect()
        }
        TaskParams::Sine(w) => {
            wave_check(w)?;
            ts.map(|t| w.amplitude * (2.0 * PI * t / w.period).sin()).collect()
        }
    };
    Ok(series)
}

/// z-score transform fitted on the training portion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn fit(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn norm(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denorm(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// A series split into train and test portions with sliding windows over
/// the training part.
#[derive(Debug, Clone)]
pub struct SeriesDataset {
    raw: Vec<f64>,
    train_len: usize,
    window: usize,
    norm: Normalizer,
}

/// Splits `series` at `floor(split_ratio · len)` and prepares stride-1
/// windows of length `window` over the training portion.
pub fn make_dataset(series: Vec<f64>, split_ratio: f64, window: usize) -> Result<SeriesDataset> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(Error::Config(format!(
            "split ratio {split_ratio} must lie in (0, 1)"
        )));
    }
    let train_len = (series.len() as f64 * split_ratio).floor() as usize;
    if train_len == series.len() {
        return Err(Error::Config("split leaves no test values".into()));
    }
    if window == 0 || window >= train_len {
        return Err(Error::Config(format!(
            "window {window} must be positive and shorter than the {train_len}-step training split"
        )));
    }
    let norm = Normalizer::fit(&series[..train_len]);
    Ok(SeriesDataset {
        raw: series,
        train_len,
        window,
        norm,
    })
}

impl SeriesDataset {
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn train(&self) -> &[f64] {
        &self.raw[..self.train_len]
    }

    pub fn test(&self) -> &[f64] {
        &self.raw[self.train_len..]
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn normalizer(&self) -> Normalizer {
        self.norm
    }

    pub fn num_windows(&self) -> usize {
        self.train_len - self.window
    }

    /// Normalized `(inputs, targets)` of window `i`: inputs are
    /// `raw[i..i+T]`, targets `raw[i+1..i+T+1]`, all inside the train split.
    pub fn window_pair(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let t = self.window;
        let n = |x: &f64| self.norm.norm(*x);
        (
            self.raw[i..i + t].iter().map(n).collect(),
            self.raw[i + 1..i + t + 1].iter().map(n).collect(),
        )
    }

    /// Normalized model input for test scoring: every value except the last.
    pub fn eval_inputs(&self) -> Vec<f64> {
        self.raw[..self.raw.len() - 1]
            .iter()
            .map(|x| self.norm.norm(*x))
            .collect()
    }

    /// Positions of [`Self::eval_inputs`] whose predictions target the test split.
    pub fn test_positions(&self) -> std::ops::Range<usize> {
        self.train_len - 1..self.raw.len() - 1
    }
}

/// Writes `t,value` rows with a header.
pub fn write_series_csv(mut w: impl Write, series: &[f64]) -> Result<()> {
    writeln!(w, "t,value")?;
    for (t, v) in series.iter().enumerate() {
        writeln!(w, "{t},{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(name: TaskName, seed: u64) -> Vec<f64> {
        generate(&TaskSpec::new(name, seed)).unwrap()
    }

    /// Largest step relative to the median step of the surrounding period.
    fn has_discontinuity(xs: &[f64], span: usize) -> bool {
        let d: Vec<f64> = xs.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        (0..d.len()).any(|i| {
            let hi = (i.saturating_sub(span / 2) + span).min(d.len());
            let lo = hi.saturating_sub(span);
            let mut local = d[lo..hi].to_vec();
            local.sort_by(f64::total_cmp);
            let med = if local.len() % 2 == 1 {
                local[local.len() / 2]
            } else {
                0.5 * (local[local.len() / 2 - 1] + local[local.len() / 2])
            };
            d[i] > 5.0 * med
        })
    }

    #[test]
    fn logistic_recurrence() {
        let spec = TaskSpec {
            params: TaskParams::ChaoticLogistic(LogisticParams {
                x0: Some(0.5),
                ..Default::default()
            }),
            length: 200,
            seed: 0,
        };
        let x = generate(&spec).unwrap();
        assert_eq!(x[0], 0.5);
        assert!((x[1] - 0.975).abs() < 1e-15);
        assert!((x[2] - 0.0950625).abs() < 1e-15);
    }

    #[test]
    fn logistic_rejects_start_outside_unit_interval() {
        for x0 in [0.0, 1.0, 1.5, -0.1] {
            let spec = TaskSpec {
                params: TaskParams::ChaoticLogistic(LogisticParams {
                    x0: Some(x0),
                    ..Default::default()
                }),
                length: 50,
                seed: 0,
            };
            assert!(matches!(generate(&spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn logistic_stays_in_unit_interval_for_every_seed() {
        for seed in 0..20 {
            let x = series(TaskName::ChaoticLogistic, seed);
            assert!(x.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert_ne!(
            series(TaskName::ChaoticLogistic, 1),
            series(TaskName::ChaoticLogistic, 2)
        );
    }

    #[test]
    fn sine_reference_points() {
        let x = series(TaskName::Sine, 0);
        assert_eq!(x[0], 0.0);
        assert!(x[25].abs() < 1e-12);
        let peak = x[..25].iter().cloned().fold(f64::MIN, f64::max);
        let exact_peak = (2.0 * PI * 6.25 / 25.0).sin();
        assert!(peak <= exact_peak && (peak - 1.0).abs() < 0.01);
        // the continuous maximum over one period is exactly 1
        assert_eq!(exact_peak, 1.0);
    }

    #[test]
    fn arma_without_noise_follows_ar2_closed_form() {
        let spec = TaskSpec {
            params: TaskParams::Arma(ArmaParams {
                sigma: 0.0,
                init: [1.0, 1.0],
                ..Default::default()
            }),
            length: 60,
            seed: 3,
        };
        let x = generate(&spec).unwrap();
        // z² − 0.75z + 0.25 = 0 has roots ρe^{±iω}: ρ = 0.5, cos ω = 0.375/0.5
        let rho: f64 = 0.5;
        let omega = (0.375f64 / rho).acos();
        // x_t = ρᵗ(A cos ωt + B sin ωt) fitted to x₀ = x₁ = 1
        let a = 1.0;
        let b = (1.0 / rho - a * omega.cos()) / omega.sin();
        for (t, &v) in x.iter().enumerate() {
            let t = t as f64;
            let want = rho.powf(t) * (a * (omega * t).cos() + b * (omega * t).sin());
            assert!((v - want).abs() < 1e-12, "t={t}: {v} vs {want}");
        }
    }

    #[test]
    fn unknown_name_lists_valid_tasks() {
        let err = "nosuch".parse::<TaskName>().unwrap_err().to_string();
        for t in TaskName::ALL {
            assert!(err.contains(t.as_str()));
        }
    }

    #[test]
    fn too_short_is_rejected() {
        let spec = TaskSpec {
            length: 8,
            ..TaskSpec::new(TaskName::Sine, 0)
        };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        for name in TaskName::ALL {
            let a = series(name, 42);
            let b = series(name, 42);
            assert_eq!(a.len(), 200);
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn discontinuities_only_where_expected() {
        assert!(has_discontinuity(&series(TaskName::Square, 0), 25));
        assert!(has_discontinuity(&series(TaskName::PiecewiseRegime, 0), 25));
        assert!(!has_discontinuity(&series(TaskName::Sine, 0), 25));
        assert!(!has_discontinuity(&series(TaskName::DampedOsc, 0), 25));
    }

    #[test]
    fn split_and_window_counts() {
        let ds = make_dataset(series(TaskName::Sine, 0), 0.8, 32).unwrap();
        assert_eq!(ds.train().len(), 160);
        assert_eq!(ds.test().len(), 40);
        assert_eq!(ds.num_windows(), 128);
        let (x, y) = ds.window_pair(127);
        assert_eq!(x.len(), 32);
        let n = ds.normalizer();
        assert_eq!(y[31], n.norm(ds.raw()[159]));
        assert_eq!(ds.test_positions().len(), 40);
        assert_eq!(ds.eval_inputs().len(), 199);
    }

    #[test]
    fn window_too_large() {
        let s = series(TaskName::Sine, 0);
        assert!(matches!(make_dataset(s.clone(), 0.8, 160), Err(Error::Config(_))));
        assert!(make_dataset(s, 0.8, 159).is_ok());
    }

    #[test]
    fn normalization_uses_train_only() {
        let mut s = series(TaskName::Sine, 0);
        let a = make_dataset(s.clone(), 0.8, 32).unwrap().normalizer();
        for v in &mut s[160..] {
            *v += 1000.0;
        }
        let b = make_dataset(s, 0.8, 32).unwrap().normalizer();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &[0.5, -1.25]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,value\n0,0.5\n1,-1.25\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalization_round_trip(xs in proptest::collection::vec(-1e3f64..1e3, 2..64)) {
                let n = Normalizer::fit(&xs);
                for &x in &xs {
                    prop_assert!((n.denorm(n.norm(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
                }
            }
        }
    }
}
