//! A virtual squeezed-light laboratory.
//!
//! * [`opa_model`]: cavity figures of merit and the OPA quadrature-variance model.
//! * [`plant`]: seeded, discrete-time simulator of the pump/SHG/OPA apparatus.
//! * [`autolock`]: auto-relock supervisor and active drift compensation.
//! * [`characterize`]: electronic-noise correction, pump-sweep fitting and
//!   duty-cycle analytics.
//! * [`campaign`]: long-run campaign runner wiring a plant to a supervisor.

pub mod autolock;
pub mod campaign;
pub mod characterize;
pub mod opa_model;
pub mod plant;
