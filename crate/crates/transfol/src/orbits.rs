//! Periodic orbits: Lyapunov families near saddle-centers, their numerical
//! refinement, and action integrals.

use serde::{Deserialize, Serialize};

use crate::model::PhaseState;

/// A closed trajectory of the flow, stored by its initial condition and
/// period together with refinement diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    /// Human-readable tag ("lyapunov@saddle-0", "oscillator-circle", ...).
    pub label: String,
    /// Name of the model the orbit lives in.
    pub model_name: String,
    pub initial_state: PhaseState,
    pub period: f64,
    pub energy: f64,
    /// `‖φ_T(z₀) − z₀‖` measured after refinement.
    pub closure_error: f64,
}

impl PeriodicOrbit {
    pub fn new(
        label: impl Into<String>,
        model_name: impl Into<String>,
        initial_state: PhaseState,
        period: f64,
        energy: f64,
        closure_error: f64,
    ) -> Self {
        PeriodicOrbit {
            label: label.into(),
            model_name: model_name.into(),
            initial_state,
            period,
            energy,
            closure_error,
        }
    }
}
