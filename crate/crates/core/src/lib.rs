pub mod algebra;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod hierarchy;
pub mod lax;
pub mod monodromy;
pub mod poisson;
pub mod suites;

pub use algebra::{BoundaryParams, Mat2, Mat4, Side, C64, POLE_EPS};
pub use error::{Error, Result};
pub use fields::{
    Axis, Boundary, DualGrid, DualPoint, Field, FieldGrid, GridSpec, SpinDataKind, SpinGrid,
    SpinPoint,
};
pub use dynamics::{evolve, ConservationReport, EvolutionConfig, FlowGrid, FlowKind, Monitors};
pub use hierarchy::{charges, ChargeSeries, Region};
pub use lax::{Convention, PairKind, Patch};
pub use monodromy::{Orientation, TransferScan, TransportScheme};
pub use poisson::{BracketKind, BracketTable, Coords};
pub use suites::{
    run_suite, sensitivity, Check, CheckKind, Criterion, Suite, SuiteOptions, SuiteReport,
    SENSITIVITY_EPS, SENSITIVITY_FLOOR,
};
