//! Overlap and surface-distance metrics plus the connected-component
//! post-processing applied to every prediction before scoring.

mod overlap;
mod postprocess;
mod report;
mod surface;
mod topology;

pub use overlap::{overlap_metrics, Overlap};
pub use postprocess::{postprocess, postprocess_with};
pub use report::{evaluate, evaluate_cases, AggregateMetrics, CaseMetrics, ClassMetrics, MetricsReport};
pub use surface::{asd, asd_with, boundary};
pub use topology::{count_components, count_holes, fill_holes, label_components, Connectivity};

use crate::data::{LEFT_LUNG, RIGHT_LUNG};
use crate::error::{Error, Result};

/// The scored foreground classes, in report order.
pub const LUNG_CLASSES: [u8; 2] = [RIGHT_LUNG, LEFT_LUNG];

pub fn class_name(class_id: u8) -> &'static str {
    match class_id {
        RIGHT_LUNG => "right_lung",
        LEFT_LUNG => "left_lung",
        _ => "background",
    }
}

fn check_class(class_id: u8) -> Result<()> {
    if LUNG_CLASSES.contains(&class_id) {
        Ok(())
    } else {
        Err(Error::InvalidClassId {
            id: class_id as u32,
            context: "metric class (expected 1 or 2)".into(),
        })
    }
}
