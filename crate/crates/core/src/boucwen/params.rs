use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub y: f64,
    pub ydot: f64,
    pub z: f64,
}

/// Oscillator `m_L ÿ + c_L ẏ + k_L y + z = u` with hysteretic force
/// `ż = α ẏ − β(γ |ẏ| |z|^(ν−1) z + δ ẏ |z|^ν)`.
///
/// There are no defaults: every value comes from a parameter file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoucWenParams {
    #[serde(rename = "m_L")]
    pub m_l: f64,
    #[serde(rename = "k_L")]
    pub k_l: f64,
    #[serde(rename = "c_L")]
    pub c_l: f64,
    pub alpha: f64,
    pub beta_bw: f64,
    pub gamma: f64,
    pub delta: f64,
    pub nu: f64,
    #[serde(default)]
    pub initial: InitialState,
}

impl BoucWenParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.m_l,
            self.k_l,
            self.c_l,
            self.alpha,
            self.beta_bw,
            self.gamma,
            self.delta,
            self.nu,
            self.initial.y,
            self.initial.ydot,
            self.initial.z,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Bouc-Wen parameters must be finite"));
        }
        if self.m_l <= 0.0 {
            return Err(Error::invalid("m_L must be positive"));
        }
        if self.nu < 1.0 {
            return Err(Error::invalid("nu must be at least 1"));
        }
        Ok(())
    }

    /// `α = β = 0`, so the hysteretic force stays at its initial value.
    pub fn is_linear(&self) -> bool {
        self.alpha == 0.0 && self.beta_bw == 0.0
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// `ż` at velocity `v` and hysteretic force `z`.
    pub(crate) fn zdot(&self, v: f64, z: f64) -> f64 {
        let az = z.abs();
        let p = az.powf(self.nu - 1.0);
        self.alpha * v - self.beta_bw * (self.gamma * v.abs() * p * z + self.delta * v * p * az)
    }

    /// `(∂ż/∂v, ∂ż/∂z)`
    pub(crate) fn zdot_partials(&self, v: f64, z: f64) -> (f64, f64) {
        let az = z.abs();
        let p = az.powf(self.nu - 1.0);
        let dv = self.alpha - self.beta_bw * (self.gamma * v.signum() * p * z + self.delta * p * az);
        let dz = -self.beta_bw * self.nu * p * (self.gamma * v.abs() + self.delta * v * z.signum());
        (dv, dz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESK: &str = include_str!("../../../../configs/desk_boucwen.json");

    #[test]
    fn desk_file_parses() {
        let p = BoucWenParams::from_json(DESK).unwrap();
        assert!(!p.is_linear());
        assert_eq!(p.initial, InitialState::default());
    }

    #[test]
    fn validation() {
        let mut p = BoucWenParams::from_json(DESK).unwrap();
        p.nu = 0.5;
        assert!(p.validate().is_err());
        p.nu = 1.0;
        p.m_l = 0.0;
        assert!(p.validate().is_err());
        assert!(BoucWenParams::from_json(r#"{"m_L": 1.0}"#).is_err());
    }

    #[test]
    fn partials_match_differences() {
        let mut p = BoucWenParams::from_json(DESK).unwrap();
        for nu in [1.0, 1.5, 2.0] {
            p.nu = nu;
            for &(v, z) in &[(0.03, 1.2), (-0.02, 0.7), (0.01, -2.0), (-0.05, -0.4)] {
                let (dv, dz) = p.zdot_partials(v, z);
                let h = 1e-7;
                let fv = (p.zdot(v + h, z) - p.zdot(v - h, z)) / (2.0 * h);
                let fz = (p.zdot(v, z + h) - p.zdot(v, z - h)) / (2.0 * h);
                assert!((dv - fv).abs() <= 1e-6 * dv.abs().max(1.0));
                assert!((dz - fz).abs() <= 1e-6 * dz.abs().max(1.0));
            }
        }
    }
}
