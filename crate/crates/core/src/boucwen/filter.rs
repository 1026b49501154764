use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Normalized second-order section `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state for a constant input `x`.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        let z2 = self.b[2] * x - self.a[1] * y;
        let z1 = self.b[1] * x - self.a[0] * y + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut s: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + s[0];
            s[0] = b1 * input - a1 * y + s[1];
            s[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Cascade of second-order sections.
#[derive(Clone, Debug, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Digital Butterworth low-pass of even `order` by the bilinear transform
    /// with the cutoff prewarped.
    pub fn butterworth_lowpass(order: usize, cutoff: f64, fs: f64) -> Result<Self> {
        if order == 0 || !order.is_multiple_of(2) {
            return Err(Error::invalid("Butterworth order must be even and positive"));
        }
        if !(cutoff > 0.0 && cutoff < fs / 2.0) {
            return Err(Error::invalid(format!("cutoff {cutoff} Hz outside (0, fs/2)")));
        }
        let k = (PI * cutoff / fs).tan();
        let k2 = k * k;
        let sections = (0..order / 2)
            .map(|i| {
                let inv_q = 2.0 * (PI * (2 * i + 1) as f64 / (2 * order) as f64).cos();
                let norm = 1.0 / (1.0 + k * inv_q + k2);
                let b0 = k2 * norm;
                Biquad {
                    b: [b0, 2.0 * b0, b0],
                    a: [2.0 * (k2 - 1.0) * norm, (1.0 - k * inv_q + k2) * norm],
                }
            })
            .collect();
        Ok(Self { sections })
    }

    /// Samples of odd extension added at each end by [`Self::filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Causal filtering with state matched to a constant input equal to `x[0]`.
    pub fn filter(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let mut level = first;
        for s in &self.sections {
            s.run(x, s.steady_state(level));
            level *= s.dc_gain();
        }
    }

    /// Zero-phase filtering: forward pass, then a pass over the reversed
    /// signal, with odd-extension padding against edge transients.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.pad_len();
        if x.len() <= pad {
            return Err(Error::SeriesTooShort {
                required: pad + 1,
                actual: x.len(),
            });
        }
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.filter(&mut ext);
        ext.reverse();
        self.filter(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Zero-phase 8th-order Butterworth low-pass at `0.8·fs/(2·factor)`, then
/// every `factor`-th sample starting with the first.
pub fn decimate(x: &[f64], factor: usize, fs: f64) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::invalid("decimation factor must be at least 1"));
    }
    let cutoff = 0.8 * fs / 2.0 / factor as f64;
    let lp = SosFilter::butterworth_lowpass(8, cutoff, fs)?;
    let y = lp.filtfilt(x)?;
    Ok(y.into_iter().step_by(factor).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn tone(n: usize, f: f64, fs: f64, amp: f64) -> Vec<f64> {
        (0..n).map(|t| amp * (TAU * f * t as f64 / fs + 0.3).sin()).collect()
    }

    /// Amplitude of the `f` component by least squares on sin/cos.
    fn amplitude(x: &[f64], f: f64, fs: f64) -> f64 {
        let (mut ss, mut sc, mut cc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let (s, c) = (TAU * f * t as f64 / fs).sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            xs += v * s;
            xc += v * c;
        }
        let det = ss * cc - sc * sc;
        let a = (xs * cc - xc * sc) / det;
        let b = (xc * ss - xs * sc) / det;
        a.hypot(b)
    }

    #[test]
    fn unit_dc_gain_and_steady_state() {
        let lp = SosFilter::butterworth_lowpass(8, 300.0, 15000.0).unwrap();
        assert_eq!(lp.sections.len(), 4);
        let mut x = vec![2.5; 200];
        lp.filter(&mut x);
        assert!(x.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn magnitude_at_cutoff_is_half_power() {
        let fs = 15000.0;
        let lp = SosFilter::butterworth_lowpass(8, 300.0, fs).unwrap();
        let x = tone(30000, 300.0, fs, 1.0);
        let mut y = x.clone();
        lp.filter(&mut y);
        let a = amplitude(&y[15000..], 300.0, fs);
        assert!((a - 0.5f64.sqrt()).abs() < 2e-3, "{a}");
    }

    #[test]
    fn factor_one_passes_low_frequencies() {
        let x = tone(4000, 20.0, 1000.0, 1.0);
        let y = decimate(&x, 1, 1000.0).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let nrm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err <= 1e-3 * nrm);
    }

    #[test]
    fn tone_below_cutoff_survives() {
        let fs = 15000.0;
        let y = decimate(&tone(60000, 100.0, fs, 1.0), 20, fs).unwrap();
        assert_eq!(y.len(), 3000);
        let a = amplitude(&y[200..2800], 100.0, 750.0);
        assert!((a - 1.0).abs() <= 0.01, "{a}");
    }

    #[test]
    fn tone_above_new_nyquist_is_rejected() {
        let fs = 15000.0;
        let y = decimate(&tone(60000, 600.0, fs, 1.0), 20, fs).unwrap();
        let rms = (y[200..2800].iter().map(|v| v * v).sum::<f64>() / 2600.0).sqrt();
        assert!(20.0 * (rms * 2f64.sqrt()).log10() <= -60.0, "{rms}");
    }

    #[test]
    fn short_series_is_an_error() {
        assert!(matches!(decimate(&[1.0; 27], 2, 1000.0), Err(Error::SeriesTooShort { .. })));
        assert!(decimate(&[1.0; 10], 0, 1000.0).is_err());
    }

    #[test]
    fn zero_phase() {
        let fs = 1000.0;
        let x = tone(5000, 30.0, fs, 1.0);
        let lp = SosFilter::butterworth_lowpass(8, 200.0, fs).unwrap();
        let y = lp.filtfilt(&x).unwrap();
        // peak positions do not move
        for t in 1000..4000 {
            if x[t] > x[t - 1] && x[t] > x[t + 1] {
                assert!(y[t] > y[t - 1] && y[t] > y[t + 1]);
            }
        }
    }
}
