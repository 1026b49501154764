use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// DFT bins `k` with `f_min ≤ k·fs/n ≤ f_max`, excluding DC and Nyquist.
pub fn excited_bins(n_samples: usize, fs: f64, f_min: f64, f_max: f64) -> Result<Vec<usize>> {
    if !(f_min >= 0.0 && f_min < f_max && f_max < fs / 2.0) {
        return Err(Error::invalid(format!(
            "band [{f_min}, {f_max}] Hz must satisfy 0 <= f_min < f_max < fs/2 = {}",
            fs / 2.0
        )));
    }
    let df = fs / n_samples as f64;
    let bins: Vec<usize> = (1..n_samples.div_ceil(2))
        .filter(|&k| {
            let f = k as f64 * df;
            f >= f_min && f <= f_max
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::invalid("no frequency line falls inside the band"));
    }
    Ok(bins)
}

/// Equal-amplitude cosines on `bins` with the given phases, scaled to
/// `amplitude_rms`. Periodic with period `n_samples`.
pub fn multisine_from_phases(n_samples: usize, bins: &[usize], phases: &[f64], amplitude_rms: f64) -> Result<Vec<f64>> {
    if bins.len() != phases.len() {
        return Err(Error::DimensionMismatch {
            context: "multisine phases",
            expected: bins.len(),
            actual: phases.len(),
        });
    }
    if bins.iter().any(|&k| k == 0 || 2 * k >= n_samples) {
        return Err(Error::invalid("bins must lie strictly between DC and Nyquist"));
    }
    if n_samples == 0 || bins.is_empty() {
        return Err(Error::invalid("multisine needs samples and at least one line"));
    }
    let nf = n_samples as f64;
    let mut x: Vec<f64> = (0..n_samples)
        .map(|t| {
            bins.iter()
                .zip(phases)
                .map(|(&k, &ph)| (TAU * ((k * t) % n_samples) as f64 / nf + ph).cos())
                .sum()
        })
        .collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / nf).sqrt();
    let scale = if rms > 0.0 { amplitude_rms / rms } else { 0.0 };
    x.iter_mut().for_each(|v| *v *= scale);
    Ok(x)
}

/// Random-phase multisine over `[f_min, f_max]`; phases are uniform on
/// `[0, 2π)` drawn in bin order from `seed`.
pub fn multisine(n_samples: usize, fs: f64, f_min: f64, f_max: f64, amplitude_rms: f64, seed: u64) -> Result<Vec<f64>> {
    let bins = excited_bins(n_samples, fs, f_min, f_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = bins.iter().map(|_| rng.random_range(0.0..TAU)).collect();
    multisine_from_phases(n_samples, &bins, &phases, amplitude_rms)
}

/// Linear chirp `A·sin(2π(f0·t + (f1 − f0)·t²/(2T)))` over `T = n/fs`.
pub fn swept_sine(n_samples: usize, fs: f64, f_start: f64, f_end: f64, amplitude: f64) -> Result<Vec<f64>> {
    let nyq = fs / 2.0;
    if !(f_start > 0.0 && f_end > 0.0 && f_start < nyq && f_end < nyq) {
        return Err(Error::invalid(format!(
            "sweep [{f_start}, {f_end}] Hz must lie in (0, fs/2 = {nyq})"
        )));
    }
    let dur = n_samples as f64 / fs;
    Ok((0..n_samples)
        .map(|n| {
            let t = n as f64 / fs;
            amplitude * (TAU * (f_start * t + (f_end - f_start) * t * t / (2.0 * dur))).sin()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn single_line_is_a_cosine() {
        let x = multisine_from_phases(64, &[4], &[0.0], 2.0).unwrap();
        for (t, v) in x.iter().enumerate() {
            let c = 2.0 * 2f64.sqrt() * (TAU * 4.0 * t as f64 / 64.0).cos();
            assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn rms_is_exact() {
        let x = multisine(4096, 750.0, 5.0, 150.0, 3.7, 9).unwrap();
        assert!((rms(&x) - 3.7).abs() <= 1e-9);
    }

    #[test]
    fn energy_only_on_excited_bins() {
        let n = 1024;
        let bins = excited_bins(n, 1000.0, 50.0, 120.0).unwrap();
        let x = multisine(n, 1000.0, 50.0, 120.0, 1.0, 3).unwrap();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let peak = buf.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
            if bins.contains(&k) {
                assert!(c.norm() > 0.1 * peak);
            } else {
                assert!(c.norm() <= 1e-9 * peak, "bin {k}");
            }
        }
    }

    #[test]
    fn doubling_rate_samples_the_same_signal() {
        let a = multisine(512, 750.0, 10.0, 200.0, 1.0, 5).unwrap();
        let b = multisine(1024, 1500.0, 10.0, 200.0, 1.0, 5).unwrap();
        for (t, v) in a.iter().enumerate() {
            assert!((v - b[2 * t]).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_bands() {
        assert!(multisine(100, 100.0, 30.0, 20.0, 1.0, 0).is_err());
        assert!(multisine(100, 100.0, 10.0, 60.0, 1.0, 0).is_err());
        assert!(swept_sine(100, 100.0, 0.0, 10.0, 1.0).is_err());
        assert!(swept_sine(100, 100.0, 10.0, 50.0, 1.0).is_err());
    }

    #[test]
    fn constant_sweep_is_a_sine_with_flat_envelope() {
        let x = swept_sine(1000, 1000.0, 17.0, 17.0, 2.5).unwrap();
        for (n, v) in x.iter().enumerate() {
            assert!((v - 2.5 * (TAU * 17.0 * n as f64 / 1000.0).sin()).abs() < 1e-12);
        }
        let y = swept_sine(20000, 1000.0, 5.0, 100.0, 2.5).unwrap();
        assert!(y.iter().all(|v| v.abs() <= 2.5));
        assert!(y.iter().map(|v| v.abs()).fold(0.0, f64::max) > 2.49);
    }

    #[test]
    fn sweep_frequency_grows_linearly() {
        let (n, fs, f0, f1) = (20000, 1000.0, 5.0, 100.0);
        let dur = n as f64 / fs;
        let phase = |t: f64| TAU * (f0 * t + (f1 - f0) * t * t / (2.0 * dur));
        let x = swept_sine(n, fs, f0, f1, 1.0).unwrap();
        for (k, v) in x.iter().enumerate().step_by(97) {
            assert!((v - phase(k as f64 / fs).sin()).abs() < 1e-9);
        }
        // instantaneous frequency from phase differences
        let inst: Vec<f64> = (0..n - 1)
            .map(|k| (phase((k + 1) as f64 / fs) - phase(k as f64 / fs)) * fs / TAU)
            .collect();
        let slope = (f1 - f0) / dur / fs;
        for w in inst.windows(2) {
            assert!((w[1] - w[0] - slope).abs() <= 1e-6 * slope);
        }
    }
}
