//! Shared fixtures for the criterion benches.

use cellprompt_core::screen::{DosePoint, DoseResponse};
use cellprompt_core::synth::{synthetic_plate, PlateSpec, SyntheticImage};

/// First image of a small synthetic plate.
pub fn plate_image(size: usize, seed: u64) -> SyntheticImage {
    synthetic_plate(&PlateSpec {
        images: 1,
        width: size,
        height: size,
        seed,
        ..Default::default()
    })
    .expect("synthetic plate")
    .images
    .remove(0)
}

/// Noiseless eight-point curve with a mid-range EC50.
pub fn dose_response() -> DoseResponse {
    let points = (0..8)
        .map(|i| {
            let x = -9.0 + 0.5 * i as f64;
            DosePoint {
                concentration: 10f64.powf(x),
                response: 0.1 + 0.9 / (1.0 + 10f64.powf(1.3 * (-7.0 - x))),
                n_wells: 1,
            }
        })
        .collect();
    DoseResponse {
        compound_id: "bench".into(),
        points,
    }
}
