//! Browser bindings for the interactive demo page.
//!
//! Each export wraps a pure function from [`demo`] and returns a JSON
//! string: `{"error": "..."}` on failure, the demo payload otherwise.
//! Non-finite values serialise as `null`; the page skips those points.
//!
//! Build with:
//!
//! ```text
//! cargo build -p penkf-wasm --release --target wasm32-unknown-unknown
//! wasm-bindgen --target web --out-dir crates/wasm-demo/www/pkg \
//!     target/wasm32-unknown-unknown/release/penkf_wasm.wasm
//! ```

pub mod demo;

use wasm_bindgen::prelude::*;

fn to_json<T: serde::Serialize>(result: penkf::error::Result<T>) -> String {
    match result {
        Ok(value) => serde_json::to_string(&value)
            .unwrap_or_else(|e| format!(r#"{{"error":"serialisation failed: {e}"}}"#)),
        Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
    }
}

/// Weighted 2-D ensemble with its truth, sample, and max-det ellipses.
#[wasm_bindgen]
pub fn gaussian_fit_demo_json(
    seed: u32,
    sample_size: u32,
    correlation: f64,
    scale: f64,
    localise: bool,
) -> String {
    to_json(demo::gaussian_fit_demo(
        seed as u64,
        sample_size as usize,
        correlation,
        scale,
        localise,
    ))
}

/// Single-repeat linear twin experiment: RMSE against the Kalman posterior
/// mean and Mahalanobis calibration curves.
#[wasm_bindgen]
pub fn linear_demo_json(n: u32, m: u32, sample_size: u32, steps: u32, seed: u32) -> String {
    to_json(demo::linear_demo(
        n as usize,
        m as usize,
        sample_size as usize,
        steps as usize,
        seed as u64,
    ))
}

/// Lorenz-96 tracking of one component with a p-EnKF uncertainty band.
#[wasm_bindgen]
pub fn lr96_demo_json(
    n: u32,
    m: u32,
    sample_size: u32,
    steps: u32,
    seed: u32,
    component: u32,
) -> String {
    to_json(demo::lr96_demo(
        n as usize,
        m as usize,
        sample_size as usize,
        steps as usize,
        seed as u64,
        component as usize,
    ))
}
