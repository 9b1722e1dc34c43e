//! Comparison of augmentation conditions measured on the same test cases:
//! one-way repeated-measures ANOVA, paired t-tests and box-plot summaries.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, Axis};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

use crate::metrics::{DiceReport, Region};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error(
        "score matrix has a missing or non-finite cell at subject {subject}, condition {condition}"
    )]
    IncompleteMatrix { subject: usize, condition: usize },
    #[error("need at least {min} {what}, got {got}")]
    TooSmall {
        what: &'static str,
        min: usize,
        got: usize,
    },
    #[error("{0} labels for {1} rows/columns")]
    LabelCount(usize, usize),
    #[error("unknown condition {0:?}")]
    UnknownCondition(String),
    #[error("all paired differences are equal ({0}); t is undefined")]
    ZeroVarianceDifferences(f64),
    #[error("invalid degrees of freedom {0}")]
    InvalidDf(f64),
    #[error("argument {0} is not finite")]
    NonFinite(f64),
    #[error("condition {condition:?} covers a different case set")]
    CaseSetMismatch { condition: String },
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Subjects × conditions table of scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    subjects: Vec<String>,
    conditions: Vec<String>,
    values: Array2<f64>,
}

impl ScoreMatrix {
    pub fn new(
        subjects: Vec<String>,
        conditions: Vec<String>,
        values: Array2<f64>,
    ) -> Result<Self> {
        let (n, k) = values.dim();
        if subjects.len() != n {
            return Err(StatsError::LabelCount(subjects.len(), n));
        }
        if conditions.len() != k {
            return Err(StatsError::LabelCount(conditions.len(), k));
        }
        if let Some(((subject, condition), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite())
        {
            return Err(StatsError::IncompleteMatrix { subject, condition });
        }
        Ok(Self {
            subjects,
            conditions,
            values,
        })
    }

    /// Unlabelled matrix from rows; subjects are `s0, s1, …`, conditions `c0, c1, …`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        let mut values = Array2::from_elem((n, k), f64::NAN);
        for (i, row) in rows.iter().enumerate() {
            for j in 0..k {
                values[[i, j]] = row.get(j).copied().unwrap_or(f64::NAN);
            }
            if row.len() > k {
                return Err(StatsError::IncompleteMatrix {
                    subject: i,
                    condition: k,
                });
            }
        }
        Self::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..k).map(|j| format!("c{j}")).collect(),
            values,
        )
    }

    /// One column per condition report, one row per case, for one region.
    pub fn from_reports(reports: &[(String, DiceReport)], region: Region) -> Result<Self> {
        let first = reports.first().ok_or(StatsError::TooSmall {
            what: "conditions",
            min: 1,
            got: 0,
        })?;
        let subjects: Vec<String> = first.1.case_ids().map(str::to_string).collect();
        for (name, r) in reports {
            if !r.case_ids().eq(subjects.iter().map(String::as_str)) {
                return Err(StatsError::CaseSetMismatch {
                    condition: name.clone(),
                });
            }
        }
        let values = Array2::from_shape_fn((subjects.len(), reports.len()), |(i, j)| {
            reports[j].1.per_case[&subjects[i]].scores.get(region)
        });
        Self::new(
            subjects,
            reports.iter().map(|(n, _)| n.clone()).collect(),
            values,
        )
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn conditions(&self) -> &[String] {
        &self.conditions
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    fn condition_index(&self, name: &str) -> Result<usize> {
        self.conditions
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| StatsError::UnknownCondition(name.to_string()))
    }

    fn require(&self, min_subjects: usize, min_conditions: usize) -> Result<()> {
        let (n, k) = self.values.dim();
        if n < min_subjects {
            return Err(StatsError::TooSmall {
                what: "subjects",
                min: min_subjects,
                got: n,
            });
        }
        if k < min_conditions {
            return Err(StatsError::TooSmall {
                what: "conditions",
                min: min_conditions,
                got: k,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaResult {
    pub ss_conditions: f64,
    pub ss_subjects: f64,
    pub ss_error: f64,
    pub ss_total: f64,
    pub df_conditions: usize,
    pub df_error: usize,
    /// Infinite when the residual vanishes; serialized as `null` then.
    pub f: f64,
    pub p_value: f64,
    /// Residual sum of squares is zero while conditions differ: every subject
    /// shifted by the same amount. `p_value` is 0 and only means "below any
    /// representable level".
    pub degenerate_variance: bool,
    /// Factor applied to both degrees of freedom for `p_value`; 1 when uncorrected.
    pub epsilon: f64,
}

/// Degrees-of-freedom adjustment for violations of sphericity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Sphericity {
    #[default]
    Uncorrected,
    GreenhouseGeisser,
}

/// Greenhouse-Geisser epsilon from the double-centred condition covariance.
pub fn greenhouse_geisser_epsilon(m: &ScoreMatrix) -> f64 {
    let x = &m.values;
    let (n, k) = x.dim();
    let means = x.mean_axis(Axis(0)).expect("non-empty");
    let mut cov = Array2::<f64>::zeros((k, k));
    for row in x.rows() {
        for i in 0..k {
            for j in 0..k {
                cov[[i, j]] += (row[i] - means[i]) * (row[j] - means[j]) / (n as f64 - 1.0);
            }
        }
    }
    let row_means = cov.mean_axis(Axis(1)).expect("non-empty");
    let all = row_means.mean().expect("non-empty");
    let centred = Array2::from_shape_fn((k, k), |(i, j)| {
        cov[[i, j]] - row_means[i] - row_means[j] + all
    });
    let trace: f64 = (0..k).map(|i| centred[[i, i]]).sum();
    let sq: f64 = centred.iter().map(|v| v * v).sum();
    if sq <= 0.0 || trace <= 0.0 {
        return 1.0;
    }
    (trace * trace / ((k - 1) as f64 * sq)).clamp(1.0 / (k - 1) as f64, 1.0)
}

/// One-way repeated-measures ANOVA (conditions within subjects), no
/// sphericity correction.
pub fn rm_anova(m: &ScoreMatrix) -> Result<AnovaResult> {
    rm_anova_with(m, Sphericity::Uncorrected)
}

pub fn rm_anova_with(m: &ScoreMatrix, sphericity: Sphericity) -> Result<AnovaResult> {
    m.require(2, 2)?;
    let x = &m.values;
    let (n, k) = x.dim();
    let grand = x.mean().expect("non-empty");
    let subj_means = x.mean_axis(Axis(1)).expect("non-empty");
    let cond_means = x.mean_axis(Axis(0)).expect("non-empty");

    let ss_total: f64 = x.iter().map(|v| (v - grand).powi(2)).sum();
    let ss_conditions = n as f64 * cond_means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let ss_subjects = k as f64 * subj_means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let ss_error: f64 = x
        .indexed_iter()
        .map(|((i, j), v)| (v - subj_means[i] - cond_means[j] + grand).powi(2))
        .sum();

    let df_conditions = k - 1;
    let df_error = (n - 1) * (k - 1);
    // round-off floor relative to the data scale
    let floor = 1e-12 * (ss_total + grand * grand * (n * k) as f64).max(f64::MIN_POSITIVE);
    let epsilon = match sphericity {
        Sphericity::Uncorrected => 1.0,
        Sphericity::GreenhouseGeisser => greenhouse_geisser_epsilon(m),
    };
    let (f, p_value, degenerate_variance) = if ss_conditions <= floor {
        (0.0, 1.0, false)
    } else if ss_error <= floor {
        (f64::INFINITY, 0.0, true)
    } else {
        let f = (ss_conditions / df_conditions as f64) / (ss_error / df_error as f64);
        let p = f_sf(f, epsilon * df_conditions as f64, epsilon * df_error as f64)?;
        (f, p, false)
    };
    Ok(AnovaResult {
        ss_conditions,
        ss_subjects,
        ss_error,
        ss_total,
        df_conditions,
        df_error,
        f,
        p_value,
        degenerate_variance,
        epsilon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedResult {
    pub condition_a: String,
    pub condition_b: String,
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
    /// Mean of `a - b` over subjects.
    pub mean_diff: f64,
}

/// Two-sided paired t-test on the per-subject differences `a - b`.
pub fn paired_comparison(m: &ScoreMatrix, cond_a: &str, cond_b: &str) -> Result<PairedResult> {
    m.require(2, 1)?;
    let (a, b) = (m.condition_index(cond_a)?, m.condition_index(cond_b)?);
    let diffs: Vec<f64> = m.values.rows().into_iter().map(|r| r[a] - r[b]).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let scale = diffs.iter().fold(0.0f64, |s, d| s.max(d.abs()));
    let df = diffs.len() - 1;
    let result = |t: f64, p_value: f64, mean_diff: f64| PairedResult {
        condition_a: cond_a.to_string(),
        condition_b: cond_b.to_string(),
        t,
        df,
        p_value,
        mean_diff,
    };
    if sd <= 1e-12 * scale || scale == 0.0 {
        if scale == 0.0 {
            return Ok(result(0.0, 1.0, 0.0));
        }
        return Err(StatsError::ZeroVarianceDifferences(mean));
    }
    let t = mean / (sd / n.sqrt());
    let p = 2.0 * t_sf(t.abs(), df as f64)?;
    Ok(result(t, p.min(1.0), mean))
}

fn check_df(df: f64) -> Result<()> {
    if df.is_finite() && df >= 1.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidDf(df))
    }
}

fn check_x(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(StatsError::NonFinite(x))
    }
}

fn fisher(d1: f64, d2: f64) -> Result<FisherSnedecor> {
    check_df(d1)?;
    check_df(d2)?;
    FisherSnedecor::new(d1, d2).map_err(|_| StatsError::InvalidDf(d1.min(d2)))
}

fn students(df: f64) -> Result<StudentsT> {
    check_df(df)?;
    StudentsT::new(0.0, 1.0, df).map_err(|_| StatsError::InvalidDf(df))
}

/// CDF of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_x(x)?;
    if x <= 0.0 {
        return Ok(0.0);
    }
    Ok(fisher(d1, d2)?.cdf(x))
}

/// Upper tail of the F distribution.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_x(x)?;
    if x <= 0.0 {
        return Ok(1.0);
    }
    Ok(fisher(d1, d2)?.sf(x))
}

/// CDF of Student's t distribution.
pub fn t_cdf(x: f64, df: f64) -> Result<f64> {
    check_x(x)?;
    Ok(students(df)?.cdf(x))
}

/// Upper tail of Student's t distribution.
pub fn t_sf(x: f64, df: f64) -> Result<f64> {
    check_x(x)?;
    Ok(students(df)?.sf(x))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxPlotSummary {
    pub condition: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    pub mean: f64,
    /// Sample variance (n - 1 denominator); 0 for a single value.
    pub variance: f64,
}

/// Quantile by linear interpolation between order statistics of `sorted`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(condition: &str, values: &[f64]) -> Option<BoxPlotSummary> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let (q1, median, q3) = (
        quantile_sorted(&s, 0.25),
        quantile_sorted(&s, 0.5),
        quantile_sorted(&s, 0.75),
    );
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let whisker_low = s
        .iter()
        .copied()
        .find(|&v| v >= lo_fence)
        .filter(|&v| v <= q1)
        .unwrap_or(q1);
    let whisker_high = s
        .iter()
        .rev()
        .copied()
        .find(|&v| v <= hi_fence)
        .filter(|&v| v >= q3)
        .unwrap_or(q3);
    let mean = s.iter().sum::<f64>() / n as f64;
    let variance = if n > 1 {
        s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Some(BoxPlotSummary {
        condition: condition.to_string(),
        n,
        min: s[0],
        q1,
        median,
        q3,
        max: s[n - 1],
        whisker_low,
        whisker_high,
        outliers: s
            .iter()
            .copied()
            .filter(|&v| v < lo_fence || v > hi_fence)
            .collect(),
        mean,
        variance,
    })
}

/// One summary per condition column.
pub fn boxplot_summary(m: &ScoreMatrix) -> Vec<BoxPlotSummary> {
    m.values
        .columns()
        .into_iter()
        .zip(&m.conditions)
        .filter_map(|(col, name)| summarize(name, &col.to_vec()))
        .collect()
}

/// Rows of `(group, summary)` as CSV; outliers are `;`-separated.
pub fn write_boxplot_csv<W: Write>(out: W, rows: &[(String, BoxPlotSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| StatsError::Csv(e.to_string());
    w.write_record([
        "region",
        "condition",
        "n",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "whisker_low",
        "whisker_high",
        "mean",
        "variance",
        "outliers",
    ])
    .map_err(err)?;
    for (group, b) in rows {
        let outliers: Vec<String> = b.outliers.iter().map(f64::to_string).collect();
        w.write_record([
            group.clone(),
            b.condition.clone(),
            b.n.to_string(),
            b.min.to_string(),
            b.q1.to_string(),
            b.median.to_string(),
            b.q3.to_string(),
            b.max.to_string(),
            b.whisker_low.to_string(),
            b.whisker_high.to_string(),
            b.mean.to_string(),
            b.variance.to_string(),
            outliers.join(";"),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| StatsError::Csv(e.to_string()))
}

/// Full analysis of one score matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsResult {
    pub subjects: usize,
    pub conditions: Vec<String>,
    pub anova: AnovaResult,
    pub paired: Vec<PairedOutcome>,
    pub boxplots: Vec<BoxPlotSummary>,
}

/// A paired comparison, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum PairedOutcome {
    Computed(PairedResult),
    Undefined {
        condition_a: String,
        condition_b: String,
        reason: String,
        mean_diff: f64,
    },
}

pub fn analyze(m: &ScoreMatrix) -> Result<StatsResult> {
    analyze_with(m, Sphericity::Uncorrected)
}

pub fn analyze_with(m: &ScoreMatrix, sphericity: Sphericity) -> Result<StatsResult> {
    let anova = rm_anova_with(m, sphericity)?;
    let mut paired = Vec::new();
    for (i, a) in m.conditions.iter().enumerate() {
        for b in &m.conditions[i + 1..] {
            paired.push(match paired_comparison(m, a, b) {
                Ok(r) => PairedOutcome::Computed(r),
                Err(StatsError::ZeroVarianceDifferences(d)) => PairedOutcome::Undefined {
                    condition_a: a.clone(),
                    condition_b: b.clone(),
                    reason: "zero-variance differences".into(),
                    mean_diff: d,
                },
                Err(e) => return Err(e),
            });
        }
    }
    Ok(StatsResult {
        subjects: m.subjects.len(),
        conditions: m.conditions.clone(),
        anova,
        paired,
        boxplots: boxplot_summary(m),
    })
}

/// Per-region analysis of several condition reports.
pub fn analyze_reports(reports: &[(String, DiceReport)]) -> Result<BTreeMap<Region, StatsResult>> {
    analyze_reports_with(reports, Sphericity::Uncorrected)
}

pub fn analyze_reports_with(
    reports: &[(String, DiceReport)],
    sphericity: Sphericity,
) -> Result<BTreeMap<Region, StatsResult>> {
    if reports.len() < 2 {
        return Err(StatsError::TooSmall {
            what: "conditions",
            min: 2,
            got: reports.len(),
        });
    }
    Region::ALL
        .iter()
        .map(|&r| {
            Ok((
                r,
                analyze_with(&ScoreMatrix::from_reports(reports, r)?, sphericity)?,
            ))
        })
        .collect()
}
