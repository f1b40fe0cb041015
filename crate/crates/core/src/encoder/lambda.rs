use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameType {
    I,
    P,
    B,
}

/// The encoder's default Lagrangian multiplier for a frame type and QP.
pub fn default_lambda(frame_type: FrameType, qp: i32) -> Result<f64> {
    if !(0..=51).contains(&qp) {
        return Err(Error::QpOutOfRange(qp));
    }
    let q = qp as f64;
    let base = 2f64.powf((q - 12.0) / 3.0);
    Ok(match frame_type {
        FrameType::I => 0.57 * base,
        FrameType::P => 0.85 * base,
        FrameType::B => 0.68 * ((q - 12.0) / 6.0).clamp(2.0, 4.0) * base,
    })
}
