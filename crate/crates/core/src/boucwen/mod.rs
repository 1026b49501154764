//! Bouc-Wen hysteretic oscillator and the signals used to excite it.

mod excitation;
mod filter;
mod params;
mod simulate;

pub use excitation::{excited_bins, multisine, multisine_from_phases, swept_sine};
pub use filter::{decimate, Biquad, SosFilter};
pub use params::{BoucWenParams, InitialState};
pub use simulate::{simulate, IntegratorOptions, SimOutput};
