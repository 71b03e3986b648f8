//! Post-hoc calibration of classifier scores.

pub mod isotonic;
pub mod platt;
pub mod venn_abers;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use isotonic::{isotonic_calibrate, pava, IsotonicFit};
pub use platt::{apply_platt, fit_platt, PlattFit};
pub use venn_abers::{
    regularized_point, venn_abers_interval, ProbabilityInterval, VennAbersCalibrator,
};

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibratorKind {
    /// Raw model scores.
    None,
    VennAbers,
    Platt,
    Isotonic,
}

impl CalibratorKind {
    pub const ALL: [CalibratorKind; 4] = [
        CalibratorKind::None,
        CalibratorKind::VennAbers,
        CalibratorKind::Platt,
        CalibratorKind::Isotonic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CalibratorKind::None => "none",
            CalibratorKind::VennAbers => "venn-abers",
            CalibratorKind::Platt => "platt",
            CalibratorKind::Isotonic => "isotonic",
        }
    }
}

impl fmt::Display for CalibratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CalibratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "uncal" => Ok(CalibratorKind::None),
            "venn-abers" | "va" | "vennabers" => Ok(CalibratorKind::VennAbers),
            "platt" => Ok(CalibratorKind::Platt),
            "isotonic" | "isoreg" => Ok(CalibratorKind::Isotonic),
            other => Err(Error::InvalidArgument(format!(
                "unknown calibrator `{other}`"
            ))),
        }
    }
}

/// A fitted calibrator of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Calibrator {
    Identity,
    VennAbers(VennAbersCalibrator),
    Platt(PlattFit),
    Isotonic(IsotonicFit),
}

impl Calibrator {
    pub fn fit(kind: CalibratorKind, scores: &[f64], labels: &[Label]) -> Result<Self> {
        Ok(match kind {
            CalibratorKind::None => Calibrator::Identity,
            CalibratorKind::VennAbers => {
                Calibrator::VennAbers(VennAbersCalibrator::new(scores.to_vec(), labels.to_vec())?)
            }
            CalibratorKind::Platt => Calibrator::Platt(fit_platt(scores, labels)?),
            CalibratorKind::Isotonic => Calibrator::Isotonic(pava(scores, labels)?),
        })
    }

    pub fn kind(&self) -> CalibratorKind {
        match self {
            Calibrator::Identity => CalibratorKind::None,
            Calibrator::VennAbers(_) => CalibratorKind::VennAbers,
            Calibrator::Platt(_) => CalibratorKind::Platt,
            Calibrator::Isotonic(_) => CalibratorKind::Isotonic,
        }
    }

    /// Calibrated output for one score. Point calibrators return a
    /// zero-width interval.
    pub fn calibrate(&self, s: f64) -> Result<ProbabilityInterval> {
        match self {
            Calibrator::Identity => Ok(ProbabilityInterval::point(s)),
            Calibrator::VennAbers(va) => va.interval(s),
            Calibrator::Platt(fit) => Ok(ProbabilityInterval::point(fit.predict(s))),
            Calibrator::Isotonic(fit) => Ok(ProbabilityInterval::point(fit.predict(s))),
        }
    }
}
