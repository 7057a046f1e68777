//! Causal panel estimation for staggered regional policy adoption.
//!
//! The pipeline reconstructs annual individual histories from retrospective
//! survey records ([`reconstruct`]), codes dated regional policies into
//! annual indicators ([`policy`]), and estimates dynamic treatment effects
//! with two estimators: the doubly robust group-time difference-in-differences
//! estimator ([`did`]) and the interactive fixed effects counterfactual
//! estimator ([`ifect`]). Event-time aggregation lives in [`eventstudy`],
//! shared inference in [`inference`], and synthetic designs with known truth
//! in [`simulate`].

pub mod did;
pub mod error;
pub mod eventstudy;
pub mod ifect;
pub mod inference;
pub mod io;
pub mod panel;
pub mod policy;
pub mod reconstruct;
pub mod regression;
pub mod simulate;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use panel::{
    build_cohort_index, event_time, validate_panel, validate_panel_with, CohortIndex, CohortPanel,
    OutcomeKind, PanelBuilder, PanelObservation, RowInput, UnitIx, Year,
};
