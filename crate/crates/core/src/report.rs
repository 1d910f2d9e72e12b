//! Audit report: popularity table, Mann-Whitney test tables, inter-rater
//! agreement, boxplot series and bias verdicts.
//!
//! Every number in a rendered report comes from a [`crate::stats`] output
//! stored in the [`AuditReport`]; the renderers only format. A report can
//! also be assembled from pre-computed rows (see [`parse_jsonl`]), which is
//! how published tables are reproduced without the raw samples.
//!
//! # Decision rule
//!
//! A bias is *detected* only when every test it depends on has
//! `p < alpha_level` **and** the positional medians move in the expected
//! direction:
//!
//! * popularity: views and likes, initial vs 5th and initial vs 10th, medians increase;
//! * topic drift: topic relatedness, every evaluated comparison, medians decrease;
//! * emotion shift: happiness increases, or sadness decreases, on every
//!   evaluated comparison of that emotion.
//!
//! A verdict whose tests could not be run is *not evaluated*, never false.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::annotation::{aggregate_mean, Measure, RatingRecord};
use crate::auditor::{AuditRun, HOPS};
use crate::stats::{
    describe, five_number_summary, krippendorff_alpha, landis_koch_band, mann_whitney_u,
    significance_marker, AgreementBand, AlphaMetric, DescriptiveStats, FiveNumberSummary,
    StatsError, TestMode, TestResult,
};

/// Positions compared in the test tables.
pub const POSITIONS: [u8; 3] = [0, 5, 10];
pub const POPULARITY_COMPARISONS: [(u8, u8); 3] = [(0, 5), (0, 10), (5, 10)];
pub const CONTENT_COMPARISONS: [(u8, u8); 2] = [(0, 5), (0, 10)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Views,
    Likes,
    TopicRelatedness,
    Happiness,
    Sadness,
}

impl Variable {
    pub fn label(self) -> &'static str {
        match self {
            Variable::Views => "Views",
            Variable::Likes => "Likes",
            Variable::TopicRelatedness => "Topic relatedness",
            Variable::Happiness => "Happiness",
            Variable::Sadness => "Sadness",
        }
    }

    fn key(self) -> &'static str {
        match self {
            Variable::Views => "views",
            Variable::Likes => "likes",
            Variable::TopicRelatedness => "topic_relatedness",
            Variable::Happiness => "happiness",
            Variable::Sadness => "sadness",
        }
    }

    fn from_measure(m: Measure) -> Self {
        match m {
            Measure::TopicRelatedness => Variable::TopicRelatedness,
            Measure::Happiness => Variable::Happiness,
            Measure::Sadness => Variable::Sadness,
        }
    }
}

/// `Video` for the initial video, `5th Rec.` etc. for hops.
pub fn position_label(step: u8) -> String {
    match step {
        0 => "Video".to_string(),
        1 => "1st Rec.".to_string(),
        2 => "2nd Rec.".to_string(),
        3 => "3rd Rec.".to_string(),
        n => format!("{n}th Rec."),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityCell {
    pub variable: Variable,
    /// Step index, or `None` for all positions pooled.
    pub step: Option<u8>,
    pub stats: DescriptiveStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFamily {
    Popularity,
    Topic,
    Emotion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RowOutcome {
    Evaluated {
        u: f64,
        p: f64,
        median_from: f64,
        median_to: f64,
        /// Full test output when computed here; absent for pre-computed rows.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<TestResult>,
    },
    NotEvaluated {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub family: TestFamily,
    pub variable: Variable,
    pub from_step: u8,
    pub to_step: u8,
    pub outcome: RowOutcome,
}

impl TestRow {
    fn comparison(&self) -> String {
        format!(
            "{} vs {}",
            position_label(self.from_step),
            position_label(self.to_step)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AgreementOutcome {
    Computed {
        alpha: f64,
        band: AgreementBand,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_pairable: Option<usize>,
    },
    Unavailable {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub measure: Measure,
    pub metric: AlphaMetric,
    pub outcome: AgreementOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxplotRow {
    pub variable: Variable,
    pub step: u8,
    pub summary: FiveNumberSummary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Detected,
    NotDetected,
    NotEvaluated,
}

impl VerdictStatus {
    pub fn is_detected(self) -> bool {
        self == VerdictStatus::Detected
    }

    fn label(self) -> &'static str {
        match self {
            VerdictStatus::Detected => "DETECTED",
            VerdictStatus::NotDetected => "not detected",
            VerdictStatus::NotEvaluated => "not evaluated",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
    Unchanged,
    Mixed,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Increasing => "increasing",
            Direction::Decreasing => "decreasing",
            Direction::Unchanged => "unchanged",
            Direction::Mixed => "mixed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub status: VerdictStatus,
    /// Direction of the positional medians; `None` when nothing was evaluated
    /// or, for the combined emotion verdict, see the per-emotion entries.
    pub direction: Option<Direction>,
    pub rationale: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVerdict {
    pub alpha_level: f64,
    pub popularity_bias: VerdictEntry,
    pub topic_drift: VerdictEntry,
    pub emotion_shift: VerdictEntry,
    pub happiness: VerdictEntry,
    pub sadness: VerdictEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub alpha_level: f64,
    /// `audit` for reports computed from walks, `fixture` for pre-computed rows.
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub header: ReportHeader,
    pub popularity_table: Vec<PopularityCell>,
    pub popularity_tests: Vec<TestRow>,
    pub topic_tests: Vec<TestRow>,
    pub emotion_tests: Vec<TestRow>,
    pub agreement: Vec<AgreementRow>,
    pub boxplot_series: Vec<BoxplotRow>,
    pub verdicts: BiasVerdict,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("audit has no walks")]
    EmptyAudit,
    #[error("no observations for {variable} at step {step}")]
    MissingPosition { variable: &'static str, step: u8 },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("report line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("report input has no header record")]
    MissingHeader,
}

fn popularity_values(audit: &AuditRun, variable: Variable, step: Option<u8>) -> Vec<f64> {
    let pick = |s: &crate::auditor::StepRecord| match variable {
        Variable::Views => s.views_snapshot as f64,
        _ => s.likes_snapshot as f64,
    };
    match step {
        Some(i) => audit.steps_at(i).map(pick).collect(),
        None => audit.walks.iter().flat_map(|w| w.steps.iter().map(pick)).collect(),
    }
}

/// Descriptive statistics of views and likes at the initial video, the 5th
/// and 10th recommendation, and all positions pooled.
pub fn popularity_table(audit: &AuditRun) -> Result<Vec<PopularityCell>, ReportError> {
    if audit.walks.is_empty() {
        return Err(ReportError::EmptyAudit);
    }
    let mut cells = Vec::with_capacity(8);
    for variable in [Variable::Views, Variable::Likes] {
        for step in POSITIONS.iter().map(|&s| Some(s)).chain([None]) {
            let values = popularity_values(audit, variable, step);
            if values.is_empty() {
                return Err(ReportError::MissingPosition {
                    variable: variable.key(),
                    step: step.unwrap_or(0),
                });
            }
            cells.push(PopularityCell {
                variable,
                step,
                stats: describe(&values)?,
            });
        }
    }
    Ok(cells)
}

/// Test rows grouped by family.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasTests {
    pub popularity: Vec<TestRow>,
    pub topic: Vec<TestRow>,
    pub emotion: Vec<TestRow>,
}

fn test_row(
    family: TestFamily,
    variable: Variable,
    (from, to): (u8, u8),
    a: &[f64],
    b: &[f64],
    missing: impl Fn(u8) -> String,
) -> Result<TestRow, ReportError> {
    let outcome = if a.is_empty() {
        RowOutcome::NotEvaluated {
            reason: missing(from),
        }
    } else if b.is_empty() {
        RowOutcome::NotEvaluated {
            reason: missing(to),
        }
    } else {
        let t = mann_whitney_u(a, b, TestMode::Auto)?;
        RowOutcome::Evaluated {
            u: t.u_statistic,
            p: t.p_two_tailed,
            median_from: describe(a)?.median,
            median_to: describe(b)?.median,
            detail: Some(t),
        }
    };
    Ok(TestRow {
        family,
        variable,
        from_step: from,
        to_step: to,
        outcome,
    })
}

/// Mean-of-raters values per (measure, step).
fn content_values(ratings: &[RatingRecord]) -> BTreeMap<(Measure, u8), Vec<f64>> {
    let mut out: BTreeMap<(Measure, u8), Vec<f64>> = BTreeMap::new();
    for (key, mean) in aggregate_mean(ratings) {
        out.entry((key.measure, key.step_index)).or_default().push(mean);
    }
    out
}

/// Mann-Whitney tests for views and likes (0v5, 0v10, 5v10) and, from the
/// mean ratings, topic relatedness, happiness and sadness (0v5, 0v10).
pub fn run_bias_tests(
    audit: &AuditRun,
    ratings: Option<&[RatingRecord]>,
) -> Result<BiasTests, ReportError> {
    if audit.walks.is_empty() {
        return Err(ReportError::EmptyAudit);
    }
    let mut popularity = Vec::new();
    for variable in [Variable::Views, Variable::Likes] {
        for cmp in POPULARITY_COMPARISONS {
            let a = popularity_values(audit, variable, Some(cmp.0));
            let b = popularity_values(audit, variable, Some(cmp.1));
            popularity.push(test_row(TestFamily::Popularity, variable, cmp, &a, &b, |s| {
                format!("no walks reach step {s}")
            })?);
        }
    }

    let content = ratings.map(content_values).unwrap_or_default();
    let mut topic = Vec::new();
    let mut emotion = Vec::new();
    for measure in [Measure::TopicRelatedness, Measure::Sadness, Measure::Happiness] {
        let family = if measure == Measure::TopicRelatedness {
            TestFamily::Topic
        } else {
            TestFamily::Emotion
        };
        for cmp in CONTENT_COMPARISONS {
            let empty = Vec::new();
            let a = content.get(&(measure, cmp.0)).unwrap_or(&empty);
            let b = content.get(&(measure, cmp.1)).unwrap_or(&empty);
            let row = test_row(family, Variable::from_measure(measure), cmp, a, b, |s| {
                if ratings.is_none() {
                    "no ratings supplied".to_string()
                } else {
                    format!("no ratings at step {s}")
                }
            })?;
            match family {
                TestFamily::Topic => topic.push(row),
                _ => emotion.push(row),
            }
        }
    }
    Ok(BiasTests {
        popularity,
        topic,
        emotion,
    })
}

/// Five-number summaries of views and likes at every step, and of the mean
/// ratings at every rated step.
pub fn export_boxplot_data(
    audit: &AuditRun,
    ratings: Option<&[RatingRecord]>,
) -> Result<Vec<BoxplotRow>, ReportError> {
    if audit.walks.is_empty() {
        return Err(ReportError::EmptyAudit);
    }
    let mut rows = Vec::new();
    for variable in [Variable::Views, Variable::Likes] {
        for step in 0..=HOPS as u8 {
            let values = popularity_values(audit, variable, Some(step));
            if values.is_empty() {
                continue;
            }
            rows.push(BoxplotRow {
                variable,
                step,
                summary: five_number_summary(&values)?,
            });
        }
    }
    if let Some(ratings) = ratings {
        for ((measure, step), values) in content_values(ratings) {
            rows.push(BoxplotRow {
                variable: Variable::from_measure(measure),
                step,
                summary: five_number_summary(&values)?,
            });
        }
        rows.sort_by_key(|r| (r.variable, r.step));
    }
    Ok(rows)
}

/// Ordinal Krippendorff's alpha and Landis & Koch band per measure.
pub fn agreement_rows(ratings: &[RatingRecord]) -> Vec<AgreementRow> {
    [Measure::TopicRelatedness, Measure::Sadness, Measure::Happiness]
        .into_iter()
        .map(|measure| {
            let outcome = match krippendorff_alpha(ratings, measure, AlphaMetric::Ordinal) {
                Ok(r) => AgreementOutcome::Computed {
                    alpha: r.alpha,
                    band: landis_koch_band(r.alpha),
                    n_pairable: Some(r.n_pairable),
                },
                Err(e) => AgreementOutcome::Unavailable {
                    reason: e.to_string(),
                },
            };
            AgreementRow {
                measure,
                metric: AlphaMetric::Ordinal,
                outcome,
            }
        })
        .collect()
}

fn row_direction(from: f64, to: f64) -> Direction {
    if to > from {
        Direction::Increasing
    } else if to < from {
        Direction::Decreasing
    } else {
        Direction::Unchanged
    }
}

fn combine(dirs: impl IntoIterator<Item = Direction>) -> Option<Direction> {
    let mut it = dirs.into_iter();
    let first = it.next()?;
    Some(if it.all(|d| d == first) {
        first
    } else {
        Direction::Mixed
    })
}

fn rationale_line(row: &TestRow, alpha_level: f64) -> String {
    match &row.outcome {
        RowOutcome::Evaluated {
            u,
            p,
            median_from,
            median_to,
            ..
        } => format!(
            "{} {}: U={} p={} {} {}; Mdn {} -> {}",
            row.variable.key(),
            row.comparison(),
            fmt_u(*u),
            fmt_p(*p),
            if *p < alpha_level { "<" } else { ">=" },
            alpha_level,
            fmt_median(row.variable, *median_from),
            fmt_median(row.variable, *median_to),
        ),
        RowOutcome::NotEvaluated { reason } => {
            format!("{} {}: not evaluated ({reason})", row.variable.key(), row.comparison())
        }
    }
}

/// Detected iff every row in `rows` is evaluated, significant and moves in
/// `want`. With `require_all`, a single unevaluated row makes the verdict
/// not evaluated; otherwise unevaluated rows are skipped.
fn judge(rows: &[&TestRow], want: Direction, alpha_level: f64, require_all: bool) -> VerdictEntry {
    let rationale: Vec<String> = rows.iter().map(|r| rationale_line(r, alpha_level)).collect();
    let evaluated: Vec<(f64, Direction)> = rows
        .iter()
        .filter_map(|r| match r.outcome {
            RowOutcome::Evaluated {
                p,
                median_from,
                median_to,
                ..
            } => Some((p, row_direction(median_from, median_to))),
            RowOutcome::NotEvaluated { .. } => None,
        })
        .collect();
    if evaluated.is_empty() || (require_all && evaluated.len() < rows.len()) {
        return VerdictEntry {
            status: VerdictStatus::NotEvaluated,
            direction: None,
            rationale,
        };
    }
    let detected = evaluated.iter().all(|&(p, d)| p < alpha_level && d == want);
    VerdictEntry {
        status: if detected {
            VerdictStatus::Detected
        } else {
            VerdictStatus::NotDetected
        },
        direction: combine(evaluated.iter().map(|e| e.1)),
        rationale,
    }
}

/// Apply the decision rule to the test rows of a report.
pub fn decide_verdicts(
    popularity_tests: &[TestRow],
    topic_tests: &[TestRow],
    emotion_tests: &[TestRow],
    alpha_level: f64,
) -> BiasVerdict {
    let select = |rows: &'_ [TestRow], vars: &[Variable]| -> Vec<TestRow> {
        rows.iter()
            .filter(|r| vars.contains(&r.variable) && r.from_step == 0 && (r.to_step == 5 || r.to_step == 10))
            .cloned()
            .collect()
    };
    let pop = select(popularity_tests, &[Variable::Views, Variable::Likes]);
    let popularity_bias = if pop.len() == 4 {
        judge(&pop.iter().collect::<Vec<_>>(), Direction::Increasing, alpha_level, true)
    } else {
        VerdictEntry {
            status: VerdictStatus::NotEvaluated,
            direction: None,
            rationale: vec!["popularity tests for initial vs 5th and 10th are missing".into()],
        }
    };

    let missing = |what: &str| VerdictEntry {
        status: VerdictStatus::NotEvaluated,
        direction: None,
        rationale: vec![format!("no {what} tests")],
    };
    let judge_content = |rows: Vec<TestRow>, want, what: &str| {
        if rows.is_empty() {
            missing(what)
        } else {
            judge(&rows.iter().collect::<Vec<_>>(), want, alpha_level, false)
        }
    };
    let topic_drift = judge_content(
        select(topic_tests, &[Variable::TopicRelatedness]),
        Direction::Decreasing,
        "topic relatedness",
    );
    let happiness = judge_content(
        select(emotion_tests, &[Variable::Happiness]),
        Direction::Increasing,
        "happiness",
    );
    let sadness = judge_content(
        select(emotion_tests, &[Variable::Sadness]),
        Direction::Decreasing,
        "sadness",
    );
    let status = if happiness.status.is_detected() || sadness.status.is_detected() {
        VerdictStatus::Detected
    } else if happiness.status == VerdictStatus::NotEvaluated
        && sadness.status == VerdictStatus::NotEvaluated
    {
        VerdictStatus::NotEvaluated
    } else {
        VerdictStatus::NotDetected
    };
    let emotion_shift = VerdictEntry {
        status,
        direction: None,
        rationale: vec![
            format!("happiness {}", happiness.status.label()),
            format!("sadness {}", sadness.status.label()),
        ],
    };
    BiasVerdict {
        alpha_level,
        popularity_bias,
        topic_drift,
        emotion_shift,
        happiness,
        sadness,
    }
}

impl AuditReport {
    /// Assemble a report from its rows; verdicts are derived, never supplied.
    pub fn from_parts(
        header: ReportHeader,
        popularity_table: Vec<PopularityCell>,
        tests: BiasTests,
        agreement: Vec<AgreementRow>,
        boxplot_series: Vec<BoxplotRow>,
    ) -> Self {
        let verdicts = decide_verdicts(&tests.popularity, &tests.topic, &tests.emotion, header.alpha_level);
        Self {
            header,
            popularity_table,
            popularity_tests: tests.popularity,
            topic_tests: tests.topic,
            emotion_tests: tests.emotion,
            agreement,
            boxplot_series,
            verdicts,
        }
    }

    pub fn tests(&self) -> BiasTests {
        BiasTests {
            popularity: self.popularity_tests.clone(),
            topic: self.topic_tests.clone(),
            emotion: self.emotion_tests.clone(),
        }
    }
}

/// Compute the whole report from an audit and (optionally) ratings.
pub fn build_report(
    audit: &AuditRun,
    ratings: Option<&[RatingRecord]>,
    header: ReportHeader,
) -> Result<AuditReport, ReportError> {
    let table = popularity_table(audit)?;
    let tests = run_bias_tests(audit, ratings)?;
    let agreement = ratings.map(agreement_rows).unwrap_or_default();
    let boxplot = export_boxplot_data(audit, ratings)?;
    Ok(AuditReport::from_parts(header, table, tests, agreement, boxplot))
}

/// Round to an integer and group thousands with commas.
pub fn fmt_count(x: f64) -> String {
    let s = format!("{x:.0}");
    let (sign, digits) = match s.strip_prefix('-') {
        Some(d) => ("-", d),
        None => ("", s.as_str()),
    };
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    format!("{sign}{out}")
}

fn fmt_u(u: f64) -> String {
    format!("{u:.1}")
}

fn fmt_p(p: f64) -> String {
    format!("{p:.4}")
}

fn fmt_median(variable: Variable, x: f64) -> String {
    match variable {
        Variable::Views | Variable::Likes => fmt_count(x),
        _ => format!("{x:.2}"),
    }
}

fn fmt_p_marked(p: f64) -> String {
    let marker = significance_marker(p);
    if marker.is_empty() {
        fmt_p(p)
    } else {
        format!("{} {marker}", fmt_p(p))
    }
}

fn column_label(step: Option<u8>) -> String {
    step.map_or_else(|| "Overall".to_string(), position_label)
}

/// Plain-text rendering. Layout is fixed; golden files pin it byte for byte.
pub fn render_text(report: &AuditReport) -> String {
    let mut out = String::new();
    let h = &report.header;
    let _ = writeln!(out, "walkaudit report");
    let _ = writeln!(
        out,
        "tool_version={} config_hash={} seed={} source={} alpha_level={}",
        h.tool_version, h.config_hash, h.seed, h.source, h.alpha_level
    );

    let _ = writeln!(out, "\n== Popularity of initial videos and recommendations ==");
    let mut steps: Vec<Option<u8>> = Vec::new();
    for c in &report.popularity_table {
        if !steps.contains(&c.step) {
            steps.push(c.step);
        }
    }
    let _ = write!(out, "{:<8}{:<6}", "Metric", "Stat");
    for s in &steps {
        let _ = write!(out, "{:>13}", column_label(*s));
    }
    out.push('\n');
    for variable in [Variable::Views, Variable::Likes] {
        let cells: Vec<&PopularityCell> = report
            .popularity_table
            .iter()
            .filter(|c| c.variable == variable)
            .collect();
        if cells.is_empty() {
            continue;
        }
        let stat_rows: [(&str, fn(&DescriptiveStats) -> String); 4] = [
            ("Mdn.", |d| fmt_count(d.median)),
            ("Mean", |d| fmt_count(d.mean)),
            ("SD", |d| fmt_count(d.sd)),
            ("N", |d| fmt_count(d.n as f64)),
        ];
        for (i, (name, f)) in stat_rows.iter().enumerate() {
            let label = if i == 0 { variable.label() } else { "" };
            let _ = write!(out, "{label:<8}{name:<6}");
            for s in &steps {
                let cell = cells.iter().find(|c| c.step == *s);
                let text = cell.map_or_else(|| "-".to_string(), |c| f(&c.stats));
                let _ = write!(out, "{text:>13}");
            }
            out.push('\n');
        }
    }

    let _ = writeln!(out, "\n== Two-tailed Mann-Whitney U tests: popularity ==");
    let _ = writeln!(out, "{:<8}{:<24}{:>10}  {}", "Metric", "Comparison", "U", "p");
    let mut last = None;
    for row in &report.popularity_tests {
        let label = if last == Some(row.variable) { "" } else { row.variable.label() };
        last = Some(row.variable);
        match &row.outcome {
            RowOutcome::Evaluated { u, p, .. } => {
                let _ = writeln!(
                    out,
                    "{label:<8}{:<24}{:>10}  {}",
                    row.comparison(),
                    fmt_u(*u),
                    fmt_p_marked(*p)
                );
            }
            RowOutcome::NotEvaluated { reason } => {
                let _ = writeln!(out, "{label:<8}{:<24}not evaluated ({reason})", row.comparison());
            }
        }
    }

    let _ = writeln!(
        out,
        "\n== Two-tailed Mann-Whitney U tests: content ratings (mean of raters) =="
    );
    let _ = writeln!(
        out,
        "{:<19}{:<24}{:>8}  {:<12}{}",
        "Measure", "Comparison", "U", "p", "Mdn."
    );
    let mut last = None;
    for row in report.topic_tests.iter().chain(&report.emotion_tests) {
        let label = if last == Some(row.variable) { "" } else { row.variable.label() };
        last = Some(row.variable);
        match &row.outcome {
            RowOutcome::Evaluated {
                u,
                p,
                median_from,
                median_to,
                ..
            } => {
                let _ = writeln!(
                    out,
                    "{label:<19}{:<24}{:>8}  {:<12}{} -> {}",
                    row.comparison(),
                    fmt_u(*u),
                    fmt_p_marked(*p),
                    fmt_median(row.variable, *median_from),
                    fmt_median(row.variable, *median_to),
                );
            }
            RowOutcome::NotEvaluated { reason } => {
                let _ = writeln!(out, "{label:<19}{:<24}not evaluated ({reason})", row.comparison());
            }
        }
    }
    let _ = writeln!(out, "Markers: *** p < 0.0001, ** p < 0.01, * p < 0.05");

    let _ = writeln!(out, "\n== Inter-rater agreement (Krippendorff's alpha) ==");
    if report.agreement.is_empty() {
        let _ = writeln!(out, "no ratings");
    }
    for row in &report.agreement {
        let metric = match row.metric {
            AlphaMetric::Nominal => "nominal",
            AlphaMetric::Ordinal => "ordinal",
            AlphaMetric::Interval => "interval",
        };
        match &row.outcome {
            AgreementOutcome::Computed { alpha, band, .. } => {
                let _ = writeln!(
                    out,
                    "{:<19}{:<10}{:>7}  {}",
                    row.measure.label(),
                    metric,
                    format!("{alpha:.3}"),
                    band
                );
            }
            AgreementOutcome::Unavailable { reason } => {
                let _ = writeln!(out, "{:<19}{:<10}undefined ({reason})", row.measure.label(), metric);
            }
        }
    }

    if !report.boxplot_series.is_empty() {
        let _ = writeln!(out, "\n== Boxplot series ==");
        let _ = writeln!(
            out,
            "{:<19}{:>4}{:>15}{:>15}{:>15}{:>15}{:>15}{:>7}",
            "Variable", "Step", "Min", "Q1", "Median", "Q3", "Max", "N"
        );
        for row in &report.boxplot_series {
            let s = &row.summary;
            let _ = writeln!(
                out,
                "{:<19}{:>4}{:>15.2}{:>15.2}{:>15.2}{:>15.2}{:>15.2}{:>7}",
                row.variable.label(),
                row.step,
                s.min,
                s.q1,
                s.median,
                s.q3,
                s.max,
                s.n
            );
        }
    }

    let v = &report.verdicts;
    let _ = writeln!(out, "\n== Bias verdicts (alpha level {}) ==", v.alpha_level);
    let _ = writeln!(
        out,
        "Rule: detected only if every listed test has p < alpha AND the medians move in the stated direction."
    );
    let entries = [
        ("Popularity bias (medians increase)", &v.popularity_bias),
        ("Topic drift (relatedness decreases)", &v.topic_drift),
        ("Emotion shift (happiness up or sadness down)", &v.emotion_shift),
        ("  Happiness increase", &v.happiness),
        ("  Sadness decrease", &v.sadness),
    ];
    for (name, e) in entries {
        let dir = e
            .direction
            .map(|d| format!(" [{d}]"))
            .unwrap_or_default();
        let _ = writeln!(out, "{name}: {}{dir}", e.status.label());
        for line in &e.rationale {
            let _ = writeln!(out, "    {line}");
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportRecord {
    Header(ReportHeader),
    Popularity(PopularityCell),
    Test(TestRow),
    Agreement(AgreementRow),
    Boxplot(BoxplotRow),
    Verdict(NamedVerdict),
}

#[derive(Serialize, Deserialize)]
struct NamedVerdict {
    name: String,
    entry: VerdictEntry,
}

/// Machine-readable rendering: one JSON record per line.
pub fn render_jsonl(report: &AuditReport) -> String {
    let mut records = vec![ReportRecord::Header(report.header.clone())];
    records.extend(report.popularity_table.iter().cloned().map(ReportRecord::Popularity));
    records.extend(
        report
            .popularity_tests
            .iter()
            .chain(&report.topic_tests)
            .chain(&report.emotion_tests)
            .cloned()
            .map(ReportRecord::Test),
    );
    records.extend(report.agreement.iter().cloned().map(ReportRecord::Agreement));
    records.extend(report.boxplot_series.iter().cloned().map(ReportRecord::Boxplot));
    let v = &report.verdicts;
    for (name, e) in [
        ("popularity_bias", &v.popularity_bias),
        ("topic_drift", &v.topic_drift),
        ("emotion_shift", &v.emotion_shift),
        ("happiness", &v.happiness),
        ("sadness", &v.sadness),
    ] {
        records.push(ReportRecord::Verdict(NamedVerdict {
            name: name.to_string(),
            entry: e.clone(),
        }));
    }
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r).expect("report records serialize"));
        out.push('\n');
    }
    out
}

/// Parse a machine-readable report (or a hand-written fixture in the same
/// format). Verdict records are ignored and recomputed from the test rows;
/// agreement bands are recomputed from alpha.
pub fn parse_jsonl(text: &str) -> Result<AuditReport, ReportError> {
    let mut header = None;
    let mut table = Vec::new();
    let mut tests = BiasTests {
        popularity: Vec::new(),
        topic: Vec::new(),
        emotion: Vec::new(),
    };
    let mut agreement = Vec::new();
    let mut boxplot = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ReportRecord = serde_json::from_str(line).map_err(|e| ReportError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        match record {
            ReportRecord::Header(h) => header = Some(h),
            ReportRecord::Popularity(c) => table.push(c),
            ReportRecord::Test(t) => match t.family {
                TestFamily::Popularity => tests.popularity.push(t),
                TestFamily::Topic => tests.topic.push(t),
                TestFamily::Emotion => tests.emotion.push(t),
            },
            ReportRecord::Agreement(mut a) => {
                if let AgreementOutcome::Computed { alpha, band, .. } = &mut a.outcome {
                    *band = landis_koch_band(*alpha);
                }
                agreement.push(a)
            }
            ReportRecord::Boxplot(b) => boxplot.push(b),
            ReportRecord::Verdict(_) => {}
        }
    }
    let header = header.ok_or(ReportError::MissingHeader)?;
    Ok(AuditReport::from_parts(header, table, tests, agreement, boxplot))
}

/// Boxplot rows as tab-separated text for plotting tools.
pub fn render_boxplot_tsv(rows: &[BoxplotRow]) -> String {
    let mut out = String::from("variable\tstep\tmin\tq1\tmedian\tq3\tmax\tn\n");
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.variable.key(),
            r.step,
            s.min,
            s.q1,
            s.median,
            s.q3,
            s.max,
            s.n
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variable: Variable, to: u8, p: f64, from_m: f64, to_m: f64) -> TestRow {
        TestRow {
            family: match variable {
                Variable::Views | Variable::Likes => TestFamily::Popularity,
                Variable::TopicRelatedness => TestFamily::Topic,
                _ => TestFamily::Emotion,
            },
            variable,
            from_step: 0,
            to_step: to,
            outcome: RowOutcome::Evaluated {
                u: 1.0,
                p,
                median_from: from_m,
                median_to: to_m,
                detail: None,
            },
        }
    }

    #[test]
    fn thousands_separators() {
        assert_eq!(fmt_count(9590.0), "9,590");
        assert_eq!(fmt_count(93879.4), "93,879");
        assert_eq!(fmt_count(2005223.0), "2,005,223");
        assert_eq!(fmt_count(170.0), "170");
        assert_eq!(fmt_count(0.0), "0");
        assert_eq!(fmt_count(-1234.0), "-1,234");
    }

    #[test]
    fn position_labels() {
        assert_eq!(position_label(0), "Video");
        assert_eq!(position_label(5), "5th Rec.");
        assert_eq!(position_label(2), "2nd Rec.");
    }

    #[test]
    fn significance_needs_direction() {
        let pop = vec![
            row(Variable::Views, 5, 0.0, 10.0, 5.0),
            row(Variable::Views, 10, 0.0, 10.0, 20.0),
            row(Variable::Likes, 5, 0.0, 1.0, 2.0),
            row(Variable::Likes, 10, 0.0, 1.0, 2.0),
        ];
        let v = decide_verdicts(&pop, &[], &[], 0.05);
        assert_eq!(v.popularity_bias.status, VerdictStatus::NotDetected);
        assert_eq!(v.popularity_bias.direction, Some(Direction::Mixed));
        assert_eq!(v.topic_drift.status, VerdictStatus::NotEvaluated);
        assert_eq!(v.emotion_shift.status, VerdictStatus::NotEvaluated);
    }

    #[test]
    fn emotion_either_direction_suffices() {
        let emo = vec![
            row(Variable::Sadness, 5, 0.01, 1.67, 0.0),
            row(Variable::Sadness, 10, 0.2, 1.67, 0.33),
            row(Variable::Happiness, 5, 0.004, 0.0, 2.0),
        ];
        let v = decide_verdicts(&[], &[], &emo, 0.05);
        assert_eq!(v.happiness.status, VerdictStatus::Detected);
        assert_eq!(v.sadness.status, VerdictStatus::NotDetected);
        assert_eq!(v.emotion_shift.status, VerdictStatus::Detected);
        assert_eq!(v.popularity_bias.status, VerdictStatus::NotEvaluated);
    }

    #[test]
    fn unevaluated_rows_are_skipped_for_content() {
        let mut missing = row(Variable::Happiness, 10, 0.0, 0.0, 0.0);
        missing.outcome = RowOutcome::NotEvaluated {
            reason: "no ratings at step 10".into(),
        };
        let emo = vec![row(Variable::Happiness, 5, 0.001, 0.0, 2.0), missing];
        let v = decide_verdicts(&[], &[], &emo, 0.05);
        assert_eq!(v.happiness.status, VerdictStatus::Detected);
        assert!(v.happiness.rationale[1].contains("not evaluated"));
    }
}
