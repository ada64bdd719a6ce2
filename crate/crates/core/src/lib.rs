//! Radner equilibria for exchanges of risk-averse participants, the market
//! cost of CCP default-resolution strategies, and the XVA-based credit cost
//! that completes the funds transfer price.
//!
//! The crate is organised bottom-up:
//!
//! * [`market_model`]: scenario data model and validation.
//! * [`risk_engine`]: entropic and expected-shortfall objectives.
//! * [`equilibrium`]: closed-form and Newton equilibrium solvers.
//! * [`resolution`]: the eight default-resolution strategies, LC, Δρ and MC.
//! * [`xva`]: margins, credit losses, CVA/MVA/KVA/FVA, auction cost and FTP.

pub mod equilibrium;
mod error;
pub mod market_model;
pub mod resolution;
pub mod risk_engine;
pub mod xva;

pub use error::{Error, Result};

pub use equilibrium::{
    solve, solve_entropic, solve_es, verify_equilibrium, AggregateRisk, Equilibrium,
    SolveMethod, Verification,
};
pub use market_model::{
    assemble_joint_moments, validate_scenario, AssetModel, Diagnostic, EllipseKind, Exchange,
    Participant, RiskSpec, Role, Scenario, Severity,
};
pub use resolution::{
    entropic_mc_closed_form, pre_default_equilibria, resolve, resolve_with, CcpHedger,
    ResolutionOutcome, StrategyKind, StrategySpec, Table3Row,
};
pub use risk_engine::{es_standardized, grad_r, hessian_r, objective_r};
pub use xva::{
    compute_margins, run_xva, Collateral, KvaScaling, MarginProfile, StrategyFtp, XvaConfig,
    XvaPlan, XvaReport, XvaStateResult,
};

/// Dense column vector used for positions, prices and covariances.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used for covariance matrices and Jacobians.
pub type Matrix = nalgebra::DMatrix<f64>;
