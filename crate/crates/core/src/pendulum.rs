//! Bundled case study: a rotary inverted pendulum balanced over a lossy
//! wireless actuation link.
//!
//! The plant is the linearization of the pendulum around its upright
//! equilibrium, discretized at 12 Hz; the state is (arm angle, pendulum
//! angle, arm velocity, pendulum velocity) and the single input drives the
//! arm motor. The channel model reproduces measured delivery statistics of
//! an IEEE 802.15.4 link under Wi-Fi interference.
//!
//! The gain sets at the bottom are externally published reference values for
//! this exact plant/channel pair, bundled for cross-validation and for the
//! controller comparison tooling.

use nalgebra::{DMatrix, DVector};

use crate::fsmc::FsmcModel;
use crate::lqr::PlantSpec;

/// Dropout compensation factor giving the most stable closed loop in the
/// mean-square sense for this model.
pub const BEST_PHI: f64 = 0.921;

/// Measured long-run successful delivery probability of the bundled channel.
pub const ARRIVAL_PROBABILITY: f64 = 0.908862;

pub fn state_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.224, 0.055, 0.004, //
            0.0, 1.369, -0.028, 0.090, //
            0.0, 4.994, 0.391, 0.167, //
            0.0, 8.618, -0.634, 1.270,
        ],
    )
}

pub fn input_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 1, &[0.227, 0.218, 4.944, 4.820])
}

/// Plant with the given dropout compensation factor on its single input.
pub fn plant_with_phi(phi: f64) -> PlantSpec {
    PlantSpec::new(
        state_matrix(),
        input_matrix(),
        DMatrix::identity(4, 4) * 2.5e-9,
        DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 5.0, 1.0, 1.0])),
        DMatrix::from_row_slice(1, 1, &[10.0]),
        DVector::from_row_slice(&[phi]),
        DVector::from_row_slice(&[0.0, 0.174, 0.0, 0.767]),
    )
    .expect("bundled pendulum plant is valid")
}

/// Plant with the default compensation factor [`BEST_PHI`].
pub fn plant() -> PlantSpec {
    plant_with_phi(BEST_PHI)
}

/// The four-state wireless channel the pendulum is controlled over.
pub fn channel() -> FsmcModel {
    FsmcModel::new(
        DMatrix::from_row_slice(
            4,
            4,
            &[
                0.257, 0.027, 0.032, 0.684, //
                0.182, 0.023, 0.028, 0.767, //
                0.172, 0.022, 0.027, 0.779, //
                0.058, 0.010, 0.012, 0.920,
            ],
        ),
        DVector::from_row_slice(&[0.026, 0.375, 0.634, 0.995]),
    )
    .expect("bundled pendulum channel is valid")
}

/// Reference channel-state-dependent gains for the compensation factor 0.921
/// (also the fixed point of the infinite-horizon synthesis).
pub fn reference_gains_best_phi() -> Vec<DMatrix<f64>> {
    vec![
        DMatrix::from_row_slice(1, 4, &[0.001538, -2.471896, 0.148793, -0.268961]),
        DMatrix::from_row_slice(1, 4, &[0.001567, -2.472563, 0.148842, -0.269040]),
        DMatrix::from_row_slice(1, 4, &[0.001572, -2.472673, 0.148850, -0.269053]),
        DMatrix::from_row_slice(1, 4, &[0.001628, -2.473934, 0.148943, -0.269201]),
    ]
}

/// Reference channel-state-dependent gains for zero-input compensation.
pub fn reference_gains_zero_phi() -> Vec<DMatrix<f64>> {
    vec![
        DMatrix::from_row_slice(1, 4, &[0.011000, -4.528464, 0.275168, -0.494649]),
        DMatrix::from_row_slice(1, 4, &[0.011208, -4.528800, 0.275254, -0.494734]),
        DMatrix::from_row_slice(1, 4, &[0.011242, -4.528856, 0.275268, -0.494748]),
        DMatrix::from_row_slice(1, 4, &[0.011634, -4.529491, 0.275429, -0.494908]),
    ]
}

/// Externally published channel-state-independent gain designed against a
/// Bernoulli loss model with the arrival probability [`ARRIVAL_PROBABILITY`]
/// and zero-input compensation.
pub fn bernoullian_gain() -> DMatrix<f64> {
    DMatrix::from_row_slice(1, 4, &[0.048425, -4.419243, 0.283052, -0.495964])
}

/// Externally published channel-state-dependent gains that account for the
/// immediate transmission outcome only (no burst averaging), zero-input
/// compensation.
pub fn markovian_gains() -> Vec<DMatrix<f64>> {
    vec![
        DMatrix::from_row_slice(1, 4, &[-0.000285, -4.581419, 0.271732, -0.493482]),
        DMatrix::from_row_slice(1, 4, &[-0.000649, -4.446127, 0.266240, -0.483612]),
        DMatrix::from_row_slice(1, 4, &[-0.000597, -4.425511, 0.265311, -0.482016]),
        DMatrix::from_row_slice(1, 4, &[0.000162, -4.229347, 0.255946, -0.466310]),
    ]
}
