use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{asd, class_name, overlap_metrics, postprocess, LUNG_CLASSES};
use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub dice: f64,
    pub recall: f64,
    pub precision: f64,
    /// `None` when either mask is empty.
    pub asd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub classes: Vec<ClassMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub class: String,
    pub dice: f64,
    pub recall: f64,
    pub precision: f64,
    /// Mean over cases where ASD is defined; `None` if it never is.
    pub asd: Option<f64>,
    pub asd_undefined: usize,
}

/// Per-case and mean scores for one experimental setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub setting: String,
    pub cases: Vec<CaseMetrics>,
    pub aggregate: Vec<AggregateMetrics>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Case { setting: String, case: CaseMetrics },
    Aggregate { setting: String, classes: Vec<AggregateMetrics> },
    /// Free-form provenance (e.g. the resolved run configuration); skipped
    /// when parsing.
    Config { config: serde_json::Value },
}

impl MetricsReport {
    /// Mean Dice over the two lung classes.
    pub fn mean_dice(&self) -> f64 {
        self.aggregate.iter().map(|a| a.dice).sum::<f64>() / self.aggregate.len() as f64
    }

    /// Mean ASD over the lung classes that have one.
    pub fn mean_asd(&self) -> Option<f64> {
        let v: Vec<f64> = self.aggregate.iter().filter_map(|a| a.asd).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn class(&self, class_id: u8) -> Option<&AggregateMetrics> {
        self.aggregate.iter().find(|a| a.class == class_name(class_id))
    }

    /// One JSON object per line: every case, then the aggregate block.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.cases {
            let r = Record::Case {
                setting: self.setting.clone(),
                case: c.clone(),
            };
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        let r = Record::Aggregate {
            setting: self.setting.clone(),
            classes: self.aggregate.clone(),
        };
        out.push_str(&serde_json::to_string(&r)?);
        out.push('\n');
        Ok(out)
    }

    /// [`Self::to_jsonl`] preceded by a `config` record.
    pub fn to_jsonl_with_config(&self, config: &serde_json::Value) -> Result<String> {
        let head = serde_json::to_string(&Record::Config { config: config.clone() })?;
        Ok(format!("{head}\n{}", self.to_jsonl()?))
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut setting = None;
        let mut cases = Vec::new();
        let mut aggregate = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<Record>(line)? {
                Record::Case { setting: s, case } => {
                    setting.get_or_insert(s);
                    cases.push(case);
                }
                Record::Aggregate { setting: s, classes } => {
                    setting.get_or_insert(s);
                    aggregate = Some(classes);
                }
                Record::Config { .. } => {}
            }
        }
        Ok(MetricsReport {
            setting: setting.ok_or(Error::Empty("metrics report"))?,
            cases,
            aggregate: aggregate.ok_or(Error::Empty("metrics report aggregate block"))?,
        })
    }

    /// Side-by-side table with Dice/Recall/Precision/ASD for both lungs.
    pub fn table(reports: &[MetricsReport]) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "| {:<8} | {:>7} | {:>7} | {:>9} | {:>6} | {:>7} | {:>7} | {:>9} | {:>6} |",
            "Method", "R Dice", "R Rec", "R Prec", "R ASD", "L Dice", "L Rec", "L Prec", "L ASD"
        );
        let _ = writeln!(s, "|{}|", ["----------", "---------", "---------", "-----------", "--------", "---------", "---------", "-----------", "--------"].join("|"));
        for r in reports {
            let _ = write!(s, "| {:<8} ", r.setting);
            for c in LUNG_CLASSES {
                match r.class(c) {
                    Some(a) => {
                        let asd = a.asd.map_or("n/a".to_string(), |v| format!("{v:.2}"));
                        let _ = write!(s, "| {:>7.2} | {:>7.2} | {:>9.2} | {:>6} ", a.dice, a.recall, a.precision, asd);
                    }
                    None => {
                        let _ = write!(s, "| {:>7} | {:>7} | {:>9} | {:>6} ", "-", "-", "-", "-");
                    }
                }
            }
            s.push_str("|\n");
        }
        s
    }
}

/// Post-processes each prediction and scores it against its ground truth.
pub fn evaluate(preds: &[LabelMap], gts: &[LabelMap], spacing_mm: f64, setting: &str) -> Result<MetricsReport> {
    let ids: Vec<String> = (0..preds.len()).map(|i| format!("case-{i:04}")).collect();
    evaluate_cases(&ids, preds, gts, spacing_mm, setting)
}

pub fn evaluate_cases(
    case_ids: &[String],
    preds: &[LabelMap],
    gts: &[LabelMap],
    spacing_mm: f64,
    setting: &str,
) -> Result<MetricsReport> {
    if preds.len() != gts.len() || case_ids.len() != preds.len() {
        return Err(Error::Config(format!(
            "evaluate: {} predictions, {} ground truths, {} case ids",
            preds.len(),
            gts.len(),
            case_ids.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let idx: Vec<usize> = (0..preds.len()).collect();
    let cases = par::map(&idx, |&i| -> Result<CaseMetrics> {
        let pred = postprocess(&preds[i]);
        let gt = &gts[i];
        let classes = LUNG_CLASSES
            .iter()
            .map(|&c| {
                let o = overlap_metrics(&pred, gt, c)?;
                let d = match asd(&pred, gt, c, spacing_mm) {
                    Ok(v) => Some(v),
                    Err(Error::AsdUndefined { .. }) => None,
                    Err(e) => return Err(e),
                };
                Ok(ClassMetrics {
                    class: class_name(c).into(),
                    dice: o.dice,
                    recall: o.recall,
                    precision: o.precision,
                    asd: d,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CaseMetrics {
            case_id: case_ids[i].clone(),
            classes,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let n = cases.len() as f64;
    let aggregate = LUNG_CLASSES
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let mean = |f: fn(&ClassMetrics) -> f64| cases.iter().map(|cm| f(&cm.classes[k])).sum::<f64>() / n;
            let asds: Vec<f64> = cases.iter().filter_map(|cm| cm.classes[k].asd).collect();
            AggregateMetrics {
                class: class_name(c).into(),
                dice: mean(|m| m.dice),
                recall: mean(|m| m.recall),
                precision: mean(|m| m.precision),
                asd: (!asds.is_empty()).then(|| asds.iter().sum::<f64>() / asds.len() as f64),
                asd_undefined: cases.len() - asds.len(),
            }
        })
        .collect();
    Ok(MetricsReport {
        setting: setting.to_string(),
        cases,
        aggregate,
    })
}
