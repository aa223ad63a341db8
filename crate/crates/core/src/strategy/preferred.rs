//! The objective a strategy works towards.

use super::plans::Comparator;
use crate::ids::ElementId;
use crate::sim::{Bottleneck, Measure};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Ticks the target must hold in a row before it counts as met.
pub const DEFAULT_CONSECUTIVE_TICKS: u32 = 6;

const MAX_SEVERITY: f64 = 1000.0;

/// Target predicate `measure(element) comparator target`, e.g.
/// `queue(L3) <= 50`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferredSituation {
    pub element: ElementId,
    pub measure: Measure,
    pub comparator: Comparator,
    pub target: f64,
}

impl PreferredSituation {
    /// Back under the threshold that made the bottleneck a problem.
    pub fn from_bottleneck(b: &Bottleneck) -> Self {
        let comparator = if b.measure.higher_is_worse() {
            Comparator::Le
        } else {
            Comparator::Ge
        };
        Self {
            element: b.element.clone(),
            measure: b.measure,
            comparator,
            target: b.threshold,
        }
    }

    pub fn holds(&self, value: f64) -> bool {
        self.comparator.holds(value, self.target)
    }

    /// How far `value` is from the target, as a ratio; at most 1 when the
    /// target holds.
    pub fn severity(&self, value: f64) -> f64 {
        let (num, den) = match self.comparator {
            Comparator::Le | Comparator::Lt => (value, self.target),
            Comparator::Ge | Comparator::Gt => (self.target, value),
        };
        if den > 0.0 {
            (num / den).min(MAX_SEVERITY)
        } else if num > 0.0 {
            MAX_SEVERITY
        } else {
            0.0
        }
    }
}

impl fmt::Display for PreferredSituation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}) {} {}",
            self.measure, self.element, self.comparator, self.target
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Evaluation {
    Met,
    NotMet { severity: f64 },
}

/// Counts consecutive compliant observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferredTracker {
    pub required: u32,
    pub streak: u32,
}

impl Default for PreferredTracker {
    fn default() -> Self {
        Self::new(DEFAULT_CONSECUTIVE_TICKS)
    }
}

impl PreferredTracker {
    pub fn new(required: u32) -> Self {
        Self {
            required,
            streak: 0,
        }
    }

    /// Feed one tick's value. A missing value breaks the streak.
    pub fn observe(&mut self, target: &PreferredSituation, value: Option<f64>) -> Evaluation {
        match value {
            Some(v) if target.holds(v) => {
                self.streak = self.streak.saturating_add(1);
                if self.streak >= self.required {
                    Evaluation::Met
                } else {
                    Evaluation::NotMet {
                        severity: target.severity(v),
                    }
                }
            }
            Some(v) => {
                self.streak = 0;
                Evaluation::NotMet {
                    severity: target.severity(v),
                }
            }
            None => {
                self.streak = 0;
                Evaluation::NotMet {
                    severity: MAX_SEVERITY,
                }
            }
        }
    }
}
