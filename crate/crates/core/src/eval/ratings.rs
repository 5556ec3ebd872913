use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::signal::IDLE;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowId {
    Number(u64),
    Text(String),
}

impl fmt::Display for WindowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Number(n) => write!(f, "{n}"),
            Self::Text(s) => f.write_str(s),
        }
    }
}

/// One model prediction with each rater's correct/incorrect mark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatedItem {
    pub window_id: WindowId,
    pub predicted: String,
    pub ratings: BTreeMap<String, bool>,
}

impl RatedItem {
    fn counts(&self) -> (usize, usize) {
        let correct = self.ratings.values().filter(|v| **v).count();
        (correct, self.ratings.len() - correct)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingSheet {
    pub participant: String,
    pub items: Vec<RatedItem>,
}

impl RatingSheet {
    pub fn raters(&self) -> BTreeSet<&str> {
        self.items
            .iter()
            .flat_map(|i| i.ratings.keys().map(String::as_str))
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Data(e.to_string()))
    }
}

/// Share of non-idle predictions whose raters mostly marked them correct.
/// A tied vote counts as incorrect.
pub fn majority_precision(sheet: &RatingSheet) -> Result<f64, EvalError> {
    let mut considered = 0usize;
    let mut correct = 0usize;
    for item in sheet.items.iter().filter(|i| i.predicted != IDLE) {
        if item.ratings.is_empty() {
            return Err(EvalError::Data(format!("item {} has no ratings", item.window_id)));
        }
        let (yes, no) = item.counts();
        considered += 1;
        if yes > no {
            correct += 1;
        }
    }
    if considered == 0 {
        return Err(EvalError::Data("no non-idle predictions to rate".into()));
    }
    Ok(correct as f64 / considered as f64)
}

/// Gwet's AC1 for the two categories {correct, incorrect}.
pub fn gwet_ac1(sheet: &RatingSheet) -> Result<f64, EvalError> {
    if sheet.items.is_empty() {
        return Err(EvalError::Data("rating sheet has no items".into()));
    }
    let categories = 2.0;
    let mut pa = 0.0;
    let mut pi_correct = 0.0;
    for item in &sheet.items {
        let r = item.ratings.len();
        if r < 2 {
            return Err(EvalError::Data(format!(
                "item {} has {r} rater(s); agreement needs at least 2",
                item.window_id
            )));
        }
        let (yes, no) = item.counts();
        let rf = r as f64;
        pa += ((yes * yes.saturating_sub(1)) + (no * no.saturating_sub(1))) as f64
            / (rf * (rf - 1.0));
        pi_correct += yes as f64 / rf;
    }
    let n = sheet.items.len() as f64;
    pa /= n;
    let pi = pi_correct / n;
    let pe = (pi * (1.0 - pi) + (1.0 - pi) * pi) / (categories - 1.0);
    if pe >= 1.0 {
        return Err(EvalError::Undefined("chance agreement is 1".into()));
    }
    Ok((pa - pe) / (1.0 - pe))
}
