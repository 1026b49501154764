use serde::{Deserialize, Serialize};

use super::params::BoucWenParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorOptions {
    /// Newton stops once both increments fall below this, relative to the
    /// running magnitude of the respective state.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// `|y|` beyond which the run is declared divergent.
    pub blow_up: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton: 50,
            blow_up: 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub y: Vec<f64>,
    pub ydot: Vec<f64>,
    pub z: Vec<f64>,
    pub fs: f64,
}

/// Newmark average-acceleration integration (`γ_N = 1/2`, `β_N = 1/4`) with
/// the hysteretic state advanced by the trapezoidal rule. Each step solves
/// the coupled residuals for `(ÿ, z)` at the new time by Newton's method.
///
/// Sample `n` of the output is the state at `t = n / fs`, driven by `u[n]`.
pub fn simulate(params: &BoucWenParams, u: &[f64], fs: f64, opts: &IntegratorOptions) -> Result<SimOutput> {
    params.validate()?;
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::invalid("sample rate must be positive"));
    }
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("input sample {i} is not finite")));
    }
    let n = u.len();
    let mut out = SimOutput {
        y: Vec::with_capacity(n),
        ydot: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        fs,
    };
    if n == 0 {
        return Ok(out);
    }

    let p = params;
    let h = 1.0 / fs;
    let (mut y, mut v, mut z) = (p.initial.y, p.initial.ydot, p.initial.z);
    let mut a = (u[0] - p.c_l * v - p.k_l * y - z) / p.m_l;
    let mut f = p.zdot(v, z);
    out.y.push(y);
    out.ydot.push(v);
    out.z.push(z);

    let lin = p.m_l + p.c_l * h / 2.0 + p.k_l * h * h / 4.0;
    let mut a_ref = a.abs();
    let mut z_ref = z.abs();

    for (step, &u1) in u.iter().enumerate().skip(1) {
        let mut a1 = a;
        let mut z1 = z;
        let mut converged = false;
        for _ in 0..opts.max_newton {
            let v1 = v + h / 2.0 * (a + a1);
            let y1 = y + h * v + h * h / 4.0 * (a + a1);
            let r1 = p.m_l * a1 + p.c_l * v1 + p.k_l * y1 + z1 - u1;
            let r2 = z1 - z - h / 2.0 * (f + p.zdot(v1, z1));
            let (fv, fz) = p.zdot_partials(v1, z1);
            // [[lin, 1], [j21, j22]]
            let j21 = -h * h / 4.0 * fv;
            let j22 = 1.0 - h / 2.0 * fz;
            let det = lin * j22 - j21;
            if det == 0.0 || !det.is_finite() {
                break;
            }
            let da = (r1 * j22 - r2) / det;
            let dz = (lin * r2 - j21 * r1) / det;
            a1 -= da;
            z1 -= dz;
            if !(a1.is_finite() && z1.is_finite()) {
                break;
            }
            let a_scale = a_ref.max(a1.abs()).max(f64::MIN_POSITIVE);
            let z_scale = z_ref.max(z1.abs()).max(f64::MIN_POSITIVE);
            if da.abs() <= opts.newton_tol * a_scale && dz.abs() <= opts.newton_tol * z_scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NewtonFailed { step });
        }
        let v1 = v + h / 2.0 * (a + a1);
        let y1 = y + h * v + h * h / 4.0 * (a + a1);
        if !(y1.abs() <= opts.blow_up) {
            return Err(Error::BlowUp { step, value: y1 });
        }
        y = y1;
        v = v1;
        a = a1;
        z = z1;
        f = p.zdot(v, z);
        a_ref = a_ref.max(a.abs());
        z_ref = z_ref.max(z.abs());
        out.y.push(y);
        out.ydot.push(v);
        out.z.push(z);
    }
    Ok(out)
}
