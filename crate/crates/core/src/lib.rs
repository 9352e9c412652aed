//! Scenario identification in highway object-list logs.
//!
//! The pipeline runs per log segment: [`field_data`] parsing and timeline
//! normalization, per-frame [`roles`], the [`abstraction`] layer of
//! activities, events and conditions, and finally the act-by-act
//! [`matcher`] driven by [`ontology`] definitions. [`synth`] generates
//! synthetic drives with analytic ground truth.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`.

pub mod abstraction;
pub mod field_data;
pub mod interval;
pub mod matcher;
pub mod num;
pub mod ontology;
pub mod pipeline;
pub mod roles;
pub mod synth;

pub use num::Scalar;

pub type DriveLog = field_data::DriveLog<f64>;
pub type Frame = field_data::Frame<f64>;
pub type EgoState = field_data::EgoState<f64>;
pub type ObjectState = field_data::ObjectState<f64>;
pub type Interval = interval::Interval<f64>;
pub type RoleMap = roles::RoleMap<f64>;
pub type RoleConfig = roles::RoleConfig<f64>;
pub type AbstractDrive = abstraction::AbstractDrive<f64>;
pub type AbstractionConfig = abstraction::AbstractionConfig<f64>;
pub type ScenarioDefinition = ontology::ScenarioDefinition<f64>;
pub type ScenarioInstance = ontology::ScenarioInstance<f64>;
pub type ParameterRecord = ontology::ParameterRecord<f64>;
pub type DriveSpec = synth::DriveSpec<f64>;
pub type GroundTruth = synth::GroundTruth<f64>;
