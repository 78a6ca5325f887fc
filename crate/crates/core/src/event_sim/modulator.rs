//! Interferometric electro-optic modulator transfer.

use std::f64::consts::PI;

/// Half-wave voltage of the cryogenic Michelson modulator, in volts.
pub const V_PI_VOLTS: f64 = 3.82;

/// Extinction measured with broadband down-converted light, in dB.
pub const EXTINCTION_DB: f64 = 10.2;

/// Normalized power transmission at drive `voltage`.
///
/// `T(V) = (1 - v cos(πV/V_π + φ)) / (1 + v)`: the raw interferometer output
/// `(1 - v cos(·)) / 2` rescaled so its maximum is 1. The ratio of minimum to
/// maximum transmission is `(1 - v) / (1 + v)`.
pub fn modulator_transmission(voltage: f64, v_pi: f64, visibility: f64, bias_phase: f64) -> f64 {
    let visibility = visibility.clamp(0.0, 1.0);
    (1.0 - visibility * (PI * voltage / v_pi + bias_phase).cos()) / (1.0 + visibility)
}

/// Closed-state leakage `10^(-ER/10)`; an infinite extinction gives 0.
pub fn leakage_from_extinction_db(extinction_db: f64) -> f64 {
    if extinction_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-extinction_db / 10.0)
    }
}

/// Fringe visibility whose min/max ratio equals `10^(-ER/10)`.
pub fn visibility_from_extinction_db(extinction_db: f64) -> f64 {
    let r = leakage_from_extinction_db(extinction_db);
    (1.0 - r) / (1.0 + r)
}

pub fn extinction_db_from_visibility(visibility: f64) -> f64 {
    -10.0 * ((1.0 - visibility) / (1.0 + visibility)).log10()
}
