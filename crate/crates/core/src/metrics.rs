//! BraTS evaluation regions and dice scores.
//!
//! The three evaluated regions overlap: whole tumour is every tumour label,
//! tumour core drops oedema, enhancing tumour is label 4 alone.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::SegMask;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch {a:?} vs {b:?}{}", case.as_deref().map(|c| format!(" in case {c}")).unwrap_or_default())]
    ShapeMismatch {
        a: Vec<usize>,
        b: Vec<usize>,
        case: Option<String>,
    },
    #[error(
        "case sets differ: only in predictions {only_pred:?}, only in ground truth {only_gt:?}"
    )]
    CaseSetMismatch {
        only_pred: Vec<String>,
        only_gt: Vec<String>,
    },
    #[error("empty report")]
    EmptyReport,
    #[error("dice value {value} for case {case} is outside [0, 1]")]
    InvalidScore { case: String, value: f64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "WT")]
    WholeTumor,
    #[serde(rename = "TC")]
    TumorCore,
    #[serde(rename = "ET")]
    EnhancingTumor,
}

impl Region {
    pub const ALL: [Region; 3] = [
        Region::WholeTumor,
        Region::TumorCore,
        Region::EnhancingTumor,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Region::WholeTumor => "WT",
            Region::TumorCore => "TC",
            Region::EnhancingTumor => "ET",
        }
    }

    /// Labels that make up the region.
    pub fn labels(self) -> &'static [u8] {
        match self {
            Region::WholeTumor => &[1, 2, 4],
            Region::TumorCore => &[1, 4],
            Region::EnhancingTumor => &[4],
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub region: Region,
    pub mask: Array3<bool>,
}

impl RegionMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regions {
    pub wt: RegionMask,
    pub tc: RegionMask,
    pub et: RegionMask,
}

impl Regions {
    pub fn get(&self, region: Region) -> &RegionMask {
        match region {
            Region::WholeTumor => &self.wt,
            Region::TumorCore => &self.tc,
            Region::EnhancingTumor => &self.et,
        }
    }
}

pub fn regions_from_mask(m: &SegMask) -> Regions {
    let build = |region: Region| RegionMask {
        region,
        mask: m.labels().mapv(|l| region.labels().contains(&l)),
    };
    Regions {
        wt: build(Region::WholeTumor),
        tc: build(Region::TumorCore),
        et: build(Region::EnhancingTumor),
    }
}

/// Dice score together with whether both inputs were empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub dice: f64,
    pub both_empty: bool,
}

pub fn overlap(a: &Array3<bool>, b: &Array3<bool>) -> Result<Overlap> {
    if a.shape() != b.shape() {
        return Err(MetricsError::ShapeMismatch {
            a: a.shape().to_vec(),
            b: b.shape().to_vec(),
            case: None,
        });
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    Zip::from(a).and(b).for_each(|&x, &y| {
        na += usize::from(x);
        nb += usize::from(y);
        inter += usize::from(x && y);
    });
    if na + nb == 0 {
        return Ok(Overlap {
            dice: 1.0,
            both_empty: true,
        });
    }
    Ok(Overlap {
        dice: 2.0 * inter as f64 / (na + nb) as f64,
        both_empty: false,
    })
}

/// `2|a∩b| / (|a|+|b|)`, with 1.0 when both masks are empty.
pub fn dice_score(a: &Array3<bool>, b: &Array3<bool>) -> Result<f64> {
    overlap(a, b).map(|o| o.dice)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionScores {
    #[serde(rename = "WT")]
    pub wt: f64,
    #[serde(rename = "TC")]
    pub tc: f64,
    #[serde(rename = "ET")]
    pub et: f64,
}

impl RegionScores {
    pub fn get(&self, region: Region) -> f64 {
        match region {
            Region::WholeTumor => self.wt,
            Region::TumorCore => self.tc,
            Region::EnhancingTumor => self.et,
        }
    }

    pub fn mean(&self) -> f64 {
        (self.wt + self.tc + self.et) / 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDice {
    pub scores: RegionScores,
    /// Regions where both prediction and ground truth were empty and the
    /// score was set to 1.0 by convention.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub both_empty: Vec<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub per_case: BTreeMap<String, CaseDice>,
    pub per_region_mean: RegionScores,
    pub overall_mean: f64,
}

impl DiceReport {
    /// Builds a report and its means from per-case scores.
    pub fn from_cases(per_case: BTreeMap<String, CaseDice>) -> Result<Self> {
        if per_case.is_empty() {
            return Err(MetricsError::EmptyReport);
        }
        for (case, d) in &per_case {
            for r in Region::ALL {
                let value = d.scores.get(r);
                if !(0.0..=1.0).contains(&value) {
                    return Err(MetricsError::InvalidScore {
                        case: case.clone(),
                        value,
                    });
                }
            }
        }
        let n = per_case.len() as f64;
        let mean_of = |r: Region| per_case.values().map(|d| d.scores.get(r)).sum::<f64>() / n;
        let per_region_mean = RegionScores {
            wt: mean_of(Region::WholeTumor),
            tc: mean_of(Region::TumorCore),
            et: mean_of(Region::EnhancingTumor),
        };
        Ok(Self {
            overall_mean: per_region_mean.mean(),
            per_region_mean,
            per_case,
        })
    }

    pub fn case_ids(&self) -> impl Iterator<Item = &str> {
        self.per_case.keys().map(String::as_str)
    }

    /// Rows `case_id,WT,TC,ET` in case-id order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["case_id", "WT", "TC", "ET"])?;
        for (id, d) in &self.per_case {
            w.write_record([
                id.clone(),
                d.scores.wt.to_string(),
                d.scores.tc.to_string(),
                d.scores.et.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads the CSV written by [`DiceReport::write_csv`]; the both-empty
    /// flags are not part of that format and come back empty.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            case_id: String,
            #[serde(rename = "WT")]
            wt: f64,
            #[serde(rename = "TC")]
            tc: f64,
            #[serde(rename = "ET")]
            et: f64,
        }
        let mut per_case = BTreeMap::new();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: Row = row?;
            per_case.insert(
                row.case_id,
                CaseDice {
                    scores: RegionScores {
                        wt: row.wt,
                        tc: row.tc,
                        et: row.et,
                    },
                    both_empty: Vec::new(),
                },
            );
        }
        Self::from_cases(per_case)
    }

    /// JSON summary: means plus the cases where the both-empty convention fired.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            cases: usize,
            per_region_mean: &'a RegionScores,
            overall_mean: f64,
            both_empty: BTreeMap<&'a str, &'a [Region]>,
        }
        let summary = Summary {
            cases: self.per_case.len(),
            per_region_mean: &self.per_region_mean,
            overall_mean: self.overall_mean,
            both_empty: self
                .per_case
                .iter()
                .filter(|(_, d)| !d.both_empty.is_empty())
                .map(|(id, d)| (id.as_str(), d.both_empty.as_slice()))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&summary)?)
    }
}

/// Scores one prediction against its ground truth on all three regions.
pub fn evaluate_case(pred: &SegMask, gt: &SegMask) -> Result<CaseDice> {
    if pred.shape() != gt.shape() {
        return Err(MetricsError::ShapeMismatch {
            a: pred.shape().to_vec(),
            b: gt.shape().to_vec(),
            case: None,
        });
    }
    let (rp, rg) = (regions_from_mask(pred), regions_from_mask(gt));
    let mut scores = [0.0; 3];
    let mut both_empty = Vec::new();
    for (slot, region) in scores.iter_mut().zip(Region::ALL) {
        let o = overlap(&rp.get(region).mask, &rg.get(region).mask)?;
        *slot = o.dice;
        if o.both_empty {
            both_empty.push(region);
        }
    }
    Ok(CaseDice {
        scores: RegionScores {
            wt: scores[0],
            tc: scores[1],
            et: scores[2],
        },
        both_empty,
    })
}

pub fn check_case_sets<'a, A, B>(pred: A, gt: B) -> Result<()>
where
    A: IntoIterator<Item = &'a String>,
    B: IntoIterator<Item = &'a String>,
{
    let p: std::collections::BTreeSet<&String> = pred.into_iter().collect();
    let g: std::collections::BTreeSet<&String> = gt.into_iter().collect();
    if p != g {
        return Err(MetricsError::CaseSetMismatch {
            only_pred: p.difference(&g).map(|s| s.to_string()).collect(),
            only_gt: g.difference(&p).map(|s| s.to_string()).collect(),
        });
    }
    Ok(())
}

pub fn evaluate(
    pred_masks: &BTreeMap<String, SegMask>,
    gt_masks: &BTreeMap<String, SegMask>,
) -> Result<DiceReport> {
    check_case_sets(pred_masks.keys(), gt_masks.keys())?;
    let mut per_case = BTreeMap::new();
    for (id, pred) in pred_masks {
        let d = evaluate_case(pred, &gt_masks[id]).map_err(|e| match e {
            MetricsError::ShapeMismatch { a, b, .. } => MetricsError::ShapeMismatch {
                a,
                b,
                case: Some(id.clone()),
            },
            other => other,
        })?;
        per_case.insert(id.clone(), d);
    }
    DiceReport::from_cases(per_case)
}
