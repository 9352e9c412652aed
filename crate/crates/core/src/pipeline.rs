//! End-to-end identification of one drive log.

use thiserror::Error;

use crate::abstraction::{abstract_drive, AbstractDrive, AbstractionConfig, AbstractionError};
use crate::field_data::{normalize_timeline, DriveLog};
use crate::matcher::{extract_parameters, match_scenarios, sort_instances, ParameterError};
use crate::num::Scalar;
use crate::ontology::{ScenarioDefinition, ScenarioInstance};
use crate::roles::build_role_timeline;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Parameters(#[from] ParameterError),
}

/// A contiguous segment with its abstract layer.
#[derive(Debug, Clone)]
pub struct SegmentResult<T> {
    pub log: DriveLog<T>,
    pub drive: AbstractDrive<T>,
}

/// Splits `log` at gaps and abstracts every segment.
pub fn abstract_segments<T: Scalar>(
    log: &DriveLog<T>,
    gap_tolerance: T,
    cfg: &AbstractionConfig<T>,
) -> Result<Vec<SegmentResult<T>>, PipelineError> {
    normalize_timeline(log, gap_tolerance)
        .into_iter()
        .map(|seg| {
            let roles = build_role_timeline(&seg, &cfg.roles);
            let drive = abstract_drive(&seg, &roles, cfg)?;
            Ok(SegmentResult { log: seg, drive })
        })
        .collect()
}

/// Identifies all scenario instances, with parameters, across all segments.
pub fn identify<T: Scalar>(
    log: &DriveLog<T>,
    defs: &[ScenarioDefinition<T>],
    gap_tolerance: T,
    cfg: &AbstractionConfig<T>,
) -> Result<Vec<ScenarioInstance<T>>, PipelineError> {
    let mut out = Vec::new();
    for seg in abstract_segments(log, gap_tolerance, cfg)? {
        for mut inst in match_scenarios(&seg.drive, defs) {
            inst.parameters = extract_parameters(&inst, &seg.drive, &seg.log)?;
            out.push(inst);
        }
    }
    sort_instances(&mut out);
    Ok(out)
}
