//! Event-level scoring: slot matching, one-to-one set matching and
//! month-averaged precision / recall.

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDate};
use pathfinding::matrix::Matrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{AaodEvent, SlotKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("min_slots must be in 1..=4, got {0}")]
    InvalidRule(usize),
    #[error("invalid calendar: {0}")]
    InvalidCalendar(String),
}

/// A prediction counts as correct against a gold event when at least
/// `min_slots` of the four slots agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRule {
    pub min_slots: usize,
}

impl MatchRule {
    pub fn new(min_slots: usize) -> Result<Self, EvalError> {
        if (1..=4).contains(&min_slots) {
            Ok(MatchRule { min_slots })
        } else {
            Err(EvalError::InvalidRule(min_slots))
        }
    }
}

impl Default for MatchRule {
    fn default() -> Self {
        MatchRule { min_slots: 3 }
    }
}

pub fn slot_match_count(pred: &AaodEvent, gold: &AaodEvent) -> usize {
    SlotKind::ALL
        .iter()
        .filter(|&&k| pred.slot(k) == gold.slot(k))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub pred: usize,
    pub gold: usize,
    pub slots: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetMatch {
    pub matched: usize,
    /// Indices into the input slices, sorted by prediction index.
    pub pairing: Vec<Pair>,
}

/// Maximum-cardinality one-to-one matching over qualifying pairs.
///
/// Among maximum matchings the one with the largest total slot agreement is
/// chosen; remaining ties are resolved by sorting both sides by slot tuple
/// first, so the result does not depend on input order.
pub fn match_sets(preds: &[AaodEvent], golds: &[AaodEvent], rule: MatchRule) -> SetMatch {
    let np = preds.len();
    let ng = golds.len();
    if np == 0 || ng == 0 {
        return SetMatch {
            matched: 0,
            pairing: Vec::new(),
        };
    }
    let mut p_order: Vec<usize> = (0..np).collect();
    p_order.sort_by(|&a, &b| preds[a].tuple().cmp(&preds[b].tuple()).then(a.cmp(&b)));
    let mut g_order: Vec<usize> = (0..ng).collect();
    g_order.sort_by(|&a, &b| golds[a].tuple().cmp(&golds[b].tuple()).then(a.cmp(&b)));

    // Any extra matched pair outweighs every possible slot-count surplus.
    let big = 5 * np.min(ng) as i64 + 1;
    let weight = |pi: usize, gi: usize| -> i64 {
        let s = slot_match_count(&preds[pi], &golds[gi]);
        if s >= rule.min_slots {
            big + s as i64
        } else {
            0
        }
    };
    let transpose = np > ng;
    let (rows, cols) = if transpose { (ng, np) } else { (np, ng) };
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (pi, gi) = if transpose {
                (p_order[c], g_order[r])
            } else {
                (p_order[r], g_order[c])
            };
            values.push(weight(pi, gi));
        }
    }
    let m = Matrix::from_vec(rows, cols, values).expect("matrix dimensions");
    let (_, assignment) = kuhn_munkres(&m);

    let mut pairing = Vec::new();
    for (r, &c) in assignment.iter().enumerate() {
        let (pi, gi) = if transpose {
            (p_order[c], g_order[r])
        } else {
            (p_order[r], g_order[c])
        };
        let slots = slot_match_count(&preds[pi], &golds[gi]);
        if slots >= rule.min_slots {
            pairing.push(Pair {
                pred: pi,
                gold: gi,
                slots,
            });
        }
    }
    pairing.sort_by_key(|p| p.pred);
    SetMatch {
        matched: pairing.len(),
        pairing,
    }
}

/// Maps series time to calendar months: time `t` falls on
/// `origin + floor(t · days_per_unit)` days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calendar {
    /// `YYYY-MM-DD`.
    pub origin: String,
    pub days_per_unit: f64,
}

impl Default for Calendar {
    /// Unix days.
    fn default() -> Self {
        Calendar {
            origin: "1970-01-01".into(),
            days_per_unit: 1.0,
        }
    }
}

impl Calendar {
    pub fn new(origin: &str, days_per_unit: f64) -> Result<Self, EvalError> {
        let c = Calendar {
            origin: origin.to_string(),
            days_per_unit,
        };
        c.origin_date()?;
        if !(days_per_unit.is_finite() && days_per_unit > 0.0) {
            return Err(EvalError::InvalidCalendar(format!(
                "days_per_unit must be positive, got {days_per_unit}"
            )));
        }
        Ok(c)
    }

    fn origin_date(&self) -> Result<NaiveDate, EvalError> {
        NaiveDate::parse_from_str(&self.origin, "%Y-%m-%d")
            .map_err(|e| EvalError::InvalidCalendar(format!("{}: {e}", self.origin)))
    }

    pub fn date(&self, t: f64) -> Result<NaiveDate, EvalError> {
        let days = (t * self.days_per_unit).floor();
        if !days.is_finite() || days.abs() > 1e8 {
            return Err(EvalError::InvalidCalendar(format!("time {t} is out of range")));
        }
        Ok(self.origin_date()? + Duration::days(days as i64))
    }

    /// `YYYY-MM`.
    pub fn month_key(&self, t: f64) -> Result<String, EvalError> {
        let d = self.date(t)?;
        Ok(format!("{:04}-{:02}", d.year(), d.month()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthScore {
    /// `None` when the month has no predictions but does have gold events.
    pub precision: Option<f64>,
    /// `None` when the month has predictions but no gold events.
    pub recall: Option<f64>,
    pub matched: usize,
    pub n_pred: usize,
    pub n_gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overall {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub months_with_precision: usize,
    pub months_with_recall: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyReport {
    pub min_slots: usize,
    pub per_month: BTreeMap<String, MonthScore>,
    pub overall: Overall,
}

/// One scored unit: a month key with that unit's predictions and gold events.
#[derive(Debug, Clone)]
pub struct ScoredSample {
    pub month: String,
    pub preds: Vec<AaodEvent>,
    pub golds: Vec<AaodEvent>,
}

pub fn score_month(preds: &[AaodEvent], golds: &[AaodEvent], rule: MatchRule) -> MonthScore {
    let matched = match_sets(preds, golds, rule).matched;
    let (n_pred, n_gold) = (preds.len(), golds.len());
    let (precision, recall) = match (n_pred, n_gold) {
        (0, 0) => (Some(1.0), Some(1.0)),
        (0, _) => (None, Some(0.0)),
        (_, 0) => (Some(0.0), None),
        _ => (
            Some(matched as f64 / n_pred as f64),
            Some(matched as f64 / n_gold as f64),
        ),
    };
    MonthScore {
        precision,
        recall,
        matched,
        n_pred,
        n_gold,
    }
}

/// Pool every sample of a month, score the pooled sets, then take the
/// unweighted mean over months of each defined quantity.
pub fn monthly_report(samples: &[ScoredSample], rule: MatchRule) -> MonthlyReport {
    let mut pooled: BTreeMap<&str, (Vec<AaodEvent>, Vec<AaodEvent>)> = BTreeMap::new();
    for s in samples {
        let entry = pooled.entry(&s.month).or_default();
        entry.0.extend(s.preds.iter().cloned());
        entry.1.extend(s.golds.iter().cloned());
    }
    let per_month: BTreeMap<String, MonthScore> = pooled
        .into_iter()
        .map(|(m, (p, g))| (m.to_string(), score_month(&p, &g, rule)))
        .collect();
    let mean = |vals: Vec<f64>| {
        let n = vals.len();
        ((n > 0).then(|| vals.iter().sum::<f64>() / n as f64), n)
    };
    let (precision, months_with_precision) =
        mean(per_month.values().filter_map(|s| s.precision).collect());
    let (recall, months_with_recall) = mean(per_month.values().filter_map(|s| s.recall).collect());
    MonthlyReport {
        min_slots: rule.min_slots,
        per_month,
        overall: Overall {
            precision,
            recall,
            months_with_precision,
            months_with_recall,
        },
    }
}
