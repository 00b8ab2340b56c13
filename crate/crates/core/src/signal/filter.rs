//! Butterworth band-pass design and second-order-section filtering.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::SignalError;

/// One normalised biquad: `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b: [1.0, 0.0, 0.0],
        a: [0.0, 0.0],
    };

    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + self.b[1] * z_inv + self.b[2] * z2;
        let den = 1.0 + self.a[0] * z_inv + self.a[1] * z2;
        num / den
    }

    /// Roots of `z² + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Cascade of biquads evaluated in slice order after multiplying the input
/// by `overall_gain`. Designed cascades are ordered by increasing pole
/// radius so the most resonant sections run last.
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub overall_gain: f64,
}

impl BiquadCascade {
    pub fn new(sections: Vec<Biquad>, overall_gain: f64) -> Result<Self, SignalError> {
        if sections.is_empty() {
            return Err(SignalError::Precondition(
                "cascade needs at least one section".into(),
            ));
        }
        if let Some(i) = sections.iter().position(|s| !s.is_stable()) {
            return Err(SignalError::Precondition(format!(
                "section {i} has a pole on or outside the unit circle"
            )));
        }
        Ok(Self {
            sections,
            overall_gain,
        })
    }

    pub fn identity() -> Self {
        Self {
            sections: vec![Biquad::IDENTITY],
            overall_gain: 1.0,
        }
    }

    /// Number of delay elements across all sections.
    pub fn state_len(&self) -> usize {
        2 * self.sections.len()
    }

    /// Samples of odd-reflection padding used by [`BiquadCascade::apply_zero_phase`].
    pub fn pad_len(&self) -> usize {
        3 * self.state_len()
    }

    /// Transfer function at `freq_hz`, i.e. `H(e^{i 2π f / fs})`.
    pub fn frequency_response(
        &self,
        freq_hz: f64,
        sample_rate_hz: f64,
    ) -> Result<Complex64, SignalError> {
        if !(sample_rate_hz > 0.0) {
            return Err(SignalError::Precondition(format!(
                "sample_rate_hz must be positive, got {sample_rate_hz}"
            )));
        }
        if !(0.0..=sample_rate_hz / 2.0).contains(&freq_hz) {
            return Err(SignalError::Precondition(format!(
                "freq_hz {freq_hz} outside [0, Nyquist {}]",
                sample_rate_hz / 2.0
            )));
        }
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / sample_rate_hz);
        Ok(self
            .sections
            .iter()
            .fold(Complex64::new(self.overall_gain, 0.0), |acc, s| {
                acc * s.response(z_inv)
            }))
    }

    /// Steady-state transposed direct-form II states for a unit constant input.
    fn unit_steady_state(&self) -> Vec<[f64; 2]> {
        let mut level = self.overall_gain;
        self.sections
            .iter()
            .map(|s| {
                let g = s.dc_gain();
                let y = level * g;
                let z2 = s.b[2] * level - s.a[1] * y;
                let z1 = y - s.b[0] * level;
                level = y;
                [z1, z2]
            })
            .collect()
    }

    /// Causal filtering in transposed direct form II. States start at the
    /// steady state for a constant input equal to `x[0]`.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().map(|v| v * self.overall_gain).collect();
        let Some(&x0) = x.first() else {
            return out;
        };
        for (s, zi) in self.sections.iter().zip(self.unit_steady_state()) {
            let (mut z1, mut z2) = (zi[0] * x0, zi[1] * x0);
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            for v in out.iter_mut() {
                let xn = *v;
                let yn = b0 * xn + z1;
                z1 = b1 * xn - a1 * yn + z2;
                z2 = b2 * xn - a2 * yn;
                *v = yn;
            }
        }
        out
    }

    /// Forward-backward filtering with odd-reflection padding of
    /// [`BiquadCascade::pad_len`] samples at each end. Output length equals
    /// input length and the effective magnitude response is `|H|²`.
    pub fn apply_zero_phase(&self, x: &[f64]) -> Result<Vec<f64>, SignalError> {
        let pad = self.pad_len();
        if x.len() <= pad {
            return Err(SignalError::SignalTooShort {
                len: x.len(),
                min: pad + 1,
            });
        }
        let ext = odd_extend(x, pad);
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        Ok(y[pad..pad + x.len()].to_vec())
    }
}

/// Odd extension `2 x[0] - x[pad..1]` on the left, mirrored on the right.
pub fn odd_extend(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    out
}

/// Digital Butterworth band-pass of the given prototype order (the cascade
/// has `order` sections and `2·order` poles).
///
/// The analog low-pass prototype is shifted to the band with the standard
/// low-pass to band-pass substitution at pre-warped edges, then mapped with
/// the bilinear transform. The band edges sit at the half-power points.
pub fn design_butterworth_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    sample_rate_hz: f64,
) -> Result<BiquadCascade, SignalError> {
    if order == 0 {
        return Err(SignalError::InvalidParameter {
            name: "order",
            reason: "must be >= 1".into(),
        });
    }
    if !(sample_rate_hz > 0.0) {
        return Err(SignalError::InvalidParameter {
            name: "sample_rate_hz",
            reason: format!("must be positive, got {sample_rate_hz}"),
        });
    }
    if !(low_hz > 0.0) {
        return Err(SignalError::InvalidParameter {
            name: "low_hz",
            reason: format!("must be positive, got {low_hz}"),
        });
    }
    if !(low_hz < high_hz) {
        return Err(SignalError::InvalidParameter {
            name: "low_hz",
            reason: format!("must be below high_hz ({low_hz} >= {high_hz})"),
        });
    }
    let nyquist = sample_rate_hz / 2.0;
    if !(high_hz < nyquist) {
        return Err(SignalError::InvalidParameter {
            name: "high_hz",
            reason: format!("must be below Nyquist {nyquist}, got {high_hz}"),
        });
    }

    let fs2 = 2.0 * sample_rate_hz;
    let w_low = fs2 * (PI * low_hz / sample_rate_hz).tan();
    let w_high = fs2 * (PI * high_hz / sample_rate_hz).tan();
    let bw = w_high - w_low;
    let w0_sq = w_low * w_high;

    let mut analog_poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2 * k + 1 + order) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * (bw / 2.0);
        let disc = (half * half - w0_sq).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }

    // `order` zeros at s = 0 map to z = 1; the remaining `order` zeros at
    // infinity map to z = -1.
    let mut gain = Complex64::new(bw.powi(order as i32) * fs2.powi(order as i32), 0.0);
    let mut digital_poles = Vec::with_capacity(2 * order);
    for &p in &analog_poles {
        gain /= fs2 - p;
        digital_poles.push((fs2 + p) / (fs2 - p));
    }

    let mut sections = pair_poles(&digital_poles)?
        .into_iter()
        .map(|a| Biquad {
            b: [1.0, 0.0, -1.0],
            a,
        })
        .collect::<Vec<_>>();
    sections.sort_by(|x, y| {
        let rx = x.poles().iter().map(|p| p.norm()).fold(0.0, f64::max);
        let ry = y.poles().iter().map(|p| p.norm()).fold(0.0, f64::max);
        rx.total_cmp(&ry)
    });

    // Normalise every section to unit gain at the geometric band centre and
    // fold the scale into `overall_gain`.
    let mut overall = gain.re;
    let centre_hz = sample_rate_hz / PI * (w0_sq.sqrt() / fs2).atan();
    let z_inv = Complex64::from_polar(1.0, -2.0 * PI * centre_hz / sample_rate_hz);
    for s in &mut sections {
        let mag = s.response(z_inv).norm();
        for b in &mut s.b {
            *b /= mag;
        }
        overall *= mag;
    }
    BiquadCascade::new(sections, overall)
}

/// Groups poles into conjugate pairs (or pairs of real poles) and returns
/// the denominator coefficients `(a1, a2)` of each pair.
fn pair_poles(poles: &[Complex64]) -> Result<Vec<[f64; 2]>, SignalError> {
    let tol = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > tol).collect();
    let mut reals: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= tol)
        .map(|p| p.re)
        .collect();
    let lower = poles.iter().filter(|p| p.im < -tol).count();
    if lower != complex.len() || reals.len() % 2 != 0 {
        return Err(SignalError::Precondition(
            "pole set is not closed under conjugation".into(),
        ));
    }
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    reals.sort_by(f64::total_cmp);
    let mut out: Vec<[f64; 2]> = complex.iter().map(|p| [-2.0 * p.re, p.norm_sqr()]).collect();
    for pair in reals.chunks(2) {
        out.push([-(pair[0] + pair[1]), pair[0] * pair[1]]);
    }
    Ok(out)
}
