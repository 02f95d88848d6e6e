use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CaseFailure, DensityCategory, Layout, Manifest, Selection};
use crate::bpe::{MetricKind, MetricsRow};
use crate::error::{Error, Result};
use crate::io::read_mask;
use crate::preprocess::nearest_rank_index;
use crate::stats::{
    bootstrap_compare_spearman, ccc_ci, dice, spearman, wilcoxon_from_differences,
    BootstrapComparison, BootstrapParams, CccInterval, PairedSample, QualitativeBpe,
    SpearmanResult, WilcoxonMethod, WilcoxonResult, RNG_ALGORITHM,
};

/// Radiologist labels of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLabel {
    pub case_id: String,
    pub qualitative_bpe: Option<QualitativeBpe>,
    pub density_category: Option<DensityCategory>,
}

impl CaseLabel {
    pub fn from_manifest(m: &Manifest) -> Vec<CaseLabel> {
        m.cases
            .iter()
            .map(|c| CaseLabel {
                case_id: c.case_id.clone(),
                qualitative_bpe: c.qualitative_bpe,
                density_category: c.density_category,
            })
            .collect()
    }
}

const LABELS_HEADER: [&str; 3] = ["case_id", "qualitative_bpe", "density_category"];

pub fn write_labels_csv<W: Write>(labels: &[CaseLabel], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LABELS_HEADER)?;
    for l in labels {
        w.write_record([
            l.case_id.clone(),
            l.qualitative_bpe.map_or(String::new(), |q| q.value().to_string()),
            l.density_category.map_or("", |d| d.as_str()).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("labels csv", e))?;
    Ok(())
}

/// Reads `case_id`, `qualitative_bpe` and `density_category` columns (the
/// last two may be blank); other columns are ignored.
pub fn read_labels_csv<R: Read>(input: R) -> Result<Vec<CaseLabel>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let id_col = col("case_id").ok_or_else(|| Error::Config("labels CSV has no case_id column".into()))?;
    let (q_col, d_col) = (col("qualitative_bpe"), col("density_category"));
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).map(str::trim).filter(|s| !s.is_empty());
        let qualitative_bpe = field(q_col)
            .map(|s| {
                s.parse::<u8>()
                    .map_err(|_| Error::Config(format!("labels row {}: qualitative_bpe {s:?}", line + 2)))
                    .and_then(QualitativeBpe::try_from)
            })
            .transpose()?;
        let density_category = field(d_col).map(DensityCategory::parse).transpose()?;
        out.push(CaseLabel {
            case_id: rec.get(id_col).unwrap_or("").trim().to_string(),
            qualitative_bpe,
            density_category,
        });
    }
    Ok(out)
}

/// One row of the unblinded reader-study export. `a` and `b` are the two
/// compared methods; `preferred_method` is blank when the scores differ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub case_id: String,
    pub reader_id: String,
    pub version: u32,
    pub method_a: String,
    pub method_b: String,
    pub score_a: u8,
    pub score_b: u8,
    pub unacceptable_a: bool,
    pub unacceptable_b: bool,
    pub preferred_method: String,
    pub submitted_at: String,
}

pub const SCORES_HEADER: [&str; 11] = [
    "case_id",
    "reader_id",
    "version",
    "method_a",
    "method_b",
    "score_a",
    "score_b",
    "unacceptable_a",
    "unacceptable_b",
    "preferred_method",
    "submitted_at",
];

pub fn write_scores_csv<W: Write>(rows: &[ScoreRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SCORES_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("scores csv", e))?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(input: R) -> Result<Vec<ScoreRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != SCORES_HEADER {
        return Err(Error::Config(format!(
            "scores header {header:?} differs from {SCORES_HEADER:?}"
        )));
    }
    let mut out = Vec::new();
    for r in rd.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

/// Either a result or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome<T> {
    Value(T),
    Error { error: String },
}

impl<T> From<Result<T>> for Outcome<T> {
    fn from(r: Result<T>) -> Self {
        match r {
            Ok(v) => Outcome::Value(v),
            Err(e) => Outcome::Error { error: e.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceEntry {
    pub method_1: String,
    pub method_2: String,
    pub n: usize,
    /// Cases whose masks are both empty.
    pub undefined: Vec<String>,
    pub fgt: Outcome<DiceSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementEntry {
    pub metric: MetricKind,
    pub method_1: String,
    pub method_2: String,
    pub n: usize,
    pub ccc: Outcome<CccInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub metric: MetricKind,
    pub method: String,
    pub n: usize,
    pub spearman: Outcome<SpearmanResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub metric: MetricKind,
    pub method_1: String,
    pub method_2: String,
    pub n: usize,
    pub comparison: Outcome<BootstrapComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTest {
    /// `all` or a density category.
    pub group: String,
    pub n: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub wilcoxon: Outcome<WilcoxonResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderScores {
    pub method_a: String,
    pub method_b: String,
    pub n: usize,
    /// Preference counts keyed by method, plus `none`.
    pub preferences: BTreeMap<String, usize>,
    pub tests: Vec<ScoreTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub rng_algorithm: String,
    pub seed: u64,
    pub resamples: usize,
    pub level: f64,
    pub max_redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub bootstrap: BootstrapSettings,
    pub methods: Vec<String>,
    pub cases: Vec<String>,
    /// Cases left out because an earlier stage failed for some method.
    pub excluded_cases: Vec<String>,
    pub qualitative_bpe_counts: BTreeMap<String, usize>,
    pub density_counts: BTreeMap<String, usize>,
    pub dice: Vec<DiceEntry>,
    pub agreement: Vec<AgreementEntry>,
    pub correlation: Vec<CorrelationEntry>,
    pub correlation_comparison: Vec<ComparisonEntry>,
    pub reader_scores: Option<ReaderScores>,
    pub failures: Vec<CaseFailure>,
}

pub struct ReportInputs<'a> {
    pub metrics: Vec<MetricsRow>,
    pub labels: Vec<CaseLabel>,
    pub scores: Option<Vec<ScoreRow>>,
    /// Failures recorded by earlier stages.
    pub failures: Vec<CaseFailure>,
    /// Output directory holding the masks, for Dice; skipped when `None`.
    pub masks: Option<&'a Layout>,
    pub bootstrap: BootstrapParams,
}

fn join_ids<'a>(ids: impl IntoIterator<Item = &'a String>) -> String {
    ids.into_iter().map(String::as_str).collect::<Vec<_>>().join(", ")
}

/// Checks that the inputs describe the same cases and returns the analysed
/// cases (in metrics order) and the excluded ones.
fn reconcile(
    methods: &[String],
    by_method: &HashMap<String, BTreeMap<String, &MetricsRow>>,
    order: &[String],
    labels: &BTreeMap<String, &CaseLabel>,
    failed: &BTreeSet<String>,
) -> Result<(Vec<String>, Vec<String>)> {
    let mut problems = Vec::new();
    let (mut cases, mut excluded) = (Vec::new(), Vec::new());
    for id in order {
        let missing: Vec<&String> = methods.iter().filter(|m| !by_method[*m].contains_key(id)).collect();
        if missing.is_empty() {
            cases.push(id.clone());
        } else if failed.contains(id) {
            excluded.push(id.clone());
        } else {
            problems.push(format!(
                "case {id} has metrics for some methods but not for {}",
                join_ids(missing)
            ));
        }
    }
    let no_label: Vec<&String> = cases.iter().filter(|c| !labels.contains_key(*c)).collect();
    if !no_label.is_empty() {
        problems.push(format!("missing from labels: {}", join_ids(no_label)));
    }
    let known: BTreeSet<&String> = order.iter().collect();
    let extra: Vec<&String> = labels
        .keys()
        .filter(|c| !known.contains(c) && !failed.contains(*c))
        .collect();
    if !extra.is_empty() {
        problems.push(format!("labelled but absent from metrics: {}", join_ids(extra)));
    }
    if problems.is_empty() {
        Ok((cases, excluded))
    } else {
        Err(Error::CaseData(format!("case ids do not match: {}", problems.join("; "))))
    }
}

fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

fn dice_entry(layout: &Layout, m1: &str, m2: &str, cases: &[String]) -> DiceEntry {
    let mut values = Vec::new();
    let mut undefined = Vec::new();
    let mut run = || -> Result<()> {
        let (s1, s2): (Selection, Selection) = (m1.parse()?, m2.parse()?);
        for c in cases {
            let a = read_mask(layout.masks(&s1, c).join("fgt.nii"))?;
            let b = read_mask(layout.masks(&s2, c).join("fgt.nii"))?;
            match dice(&a, &b) {
                Ok(d) => values.push(d),
                Err(Error::UndefinedDice) => undefined.push(c.clone()),
                Err(e) => return Err(e),
            }
        }
        Ok(())
    };
    let fgt = run().and_then(|()| {
        if values.is_empty() {
            return Err(Error::UndefinedDice);
        }
        values.sort_by(f64::total_cmp);
        let q = |p: f64| values[nearest_rank_index(values.len(), p)];
        Ok(DiceSummary {
            median: q(50.0),
            q1: q(25.0),
            q3: q(75.0),
        })
    });
    DiceEntry {
        method_1: m1.to_string(),
        method_2: m2.to_string(),
        n: values.len(),
        undefined,
        fgt: fgt.into(),
    }
}

fn reader_scores(
    scores: &[ScoreRow],
    known: &BTreeSet<&String>,
    labels: &BTreeMap<String, &CaseLabel>,
) -> Result<ReaderScores> {
    let first = scores
        .first()
        .ok_or_else(|| Error::CaseData("scores file has no rows".into()))?;
    let (ma, mb) = (first.method_a.clone(), first.method_b.clone());
    if let Some(r) = scores.iter().find(|r| r.method_a != ma || r.method_b != mb) {
        return Err(Error::CaseData(format!(
            "case {} compares {} with {}, other rows {ma} with {mb}",
            r.case_id, r.method_a, r.method_b
        )));
    }
    let unknown: Vec<&String> = scores.iter().map(|r| &r.case_id).filter(|c| !known.contains(c)).collect();
    if !unknown.is_empty() {
        return Err(Error::CaseData(format!(
            "case ids do not match: scored but absent from metrics: {}",
            join_ids(unknown)
        )));
    }
    let mut preferences = BTreeMap::new();
    for r in scores {
        if r.score_a == r.score_b {
            *preferences.entry(r.preferred_method.clone()).or_insert(0) += 1;
        }
    }
    let test = |group: String, rows: Vec<&ScoreRow>| {
        let n = rows.len();
        let mean = |f: fn(&ScoreRow) -> u8| rows.iter().map(|r| f(r) as f64).sum::<f64>() / n.max(1) as f64;
        let d: Vec<f64> = rows.iter().map(|r| r.score_a as f64 - r.score_b as f64).collect();
        ScoreTest {
            group,
            n,
            mean_a: mean(|r| r.score_a),
            mean_b: mean(|r| r.score_b),
            wilcoxon: wilcoxon_from_differences(&d, WilcoxonMethod::Auto).into(),
        }
    };
    let mut tests = vec![test("all".into(), scores.iter().collect())];
    let mut by_density: BTreeMap<DensityCategory, Vec<&ScoreRow>> = BTreeMap::new();
    for r in scores {
        if let Some(d) = labels.get(&r.case_id).and_then(|l| l.density_category) {
            by_density.entry(d).or_default().push(r);
        }
    }
    for (d, rows) in by_density {
        tests.push(test(d.as_str().to_string(), rows));
    }
    Ok(ReaderScores {
        method_a: ma,
        method_b: mb,
        n: scores.len(),
        preferences,
        tests,
    })
}

/// Builds the agreement report. Statistics that are undefined for the data
/// at hand are reported as errors in place; mismatched case sets between
/// the inputs abort with an error listing the offending ids.
pub fn run_report(inputs: ReportInputs<'_>) -> Result<Report> {
    let ReportInputs {
        metrics,
        labels,
        scores,
        failures,
        masks,
        bootstrap,
    } = inputs;
    if metrics.is_empty() {
        return Err(Error::CaseData("metrics table has no rows".into()));
    }
    let mut methods: Vec<String> = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut by_method: HashMap<String, BTreeMap<String, &MetricsRow>> = HashMap::new();
    for r in &metrics {
        if !by_method.contains_key(&r.method) {
            methods.push(r.method.clone());
        }
        if !order.contains(&r.case_id) {
            order.push(r.case_id.clone());
        }
        if by_method.entry(r.method.clone()).or_default().insert(r.case_id.clone(), r).is_some() {
            return Err(Error::CaseData(format!(
                "case {} appears twice for method {}",
                r.case_id, r.method
            )));
        }
    }
    let mut label_map = BTreeMap::new();
    for l in &labels {
        if label_map.insert(l.case_id.clone(), l).is_some() {
            return Err(Error::CaseData(format!("case {} appears twice in labels", l.case_id)));
        }
    }
    let failed: BTreeSet<String> = failures.iter().map(|f| f.case_id.clone()).collect();
    let (cases, excluded_cases) = reconcile(&methods, &by_method, &order, &label_map, &failed)?;

    let value = |m: &str, c: &str, k: MetricKind| by_method[m][c].metrics.get(k);
    let mut agreement = Vec::new();
    for k in MetricKind::ALL {
        for (i, j) in pairs(methods.len()) {
            let (m1, m2) = (&methods[i], &methods[j]);
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for c in &cases {
                if let (Some(a), Some(b)) = (value(m1, c, k), value(m2, c, k)) {
                    x.push(a);
                    y.push(b);
                }
            }
            let n = x.len();
            let ccc = PairedSample::new(x, y).and_then(|s| ccc_ci(&s, &bootstrap));
            agreement.push(AgreementEntry {
                metric: k,
                method_1: m1.clone(),
                method_2: m2.clone(),
                n,
                ccc: ccc.into(),
            });
        }
    }

    let grade = |c: &String| label_map[c].qualitative_bpe;
    let mut correlation = Vec::new();
    let mut correlation_comparison = Vec::new();
    for k in MetricKind::BPE {
        for m in &methods {
            let (mut q, mut v) = (Vec::new(), Vec::new());
            for c in &cases {
                if let (Some(g), Some(x)) = (grade(c), value(m, c, k)) {
                    q.push(g.value() as f64);
                    v.push(x);
                }
            }
            correlation.push(CorrelationEntry {
                metric: k,
                method: m.clone(),
                n: q.len(),
                spearman: spearman(&q, &v).into(),
            });
        }
        for (i, j) in pairs(methods.len()) {
            let (m1, m2) = (&methods[i], &methods[j]);
            let (mut q, mut v1, mut v2) = (Vec::new(), Vec::new(), Vec::new());
            for c in &cases {
                if let (Some(g), Some(a), Some(b)) = (grade(c), value(m1, c, k), value(m2, c, k)) {
                    q.push(g);
                    v1.push(a);
                    v2.push(b);
                }
            }
            correlation_comparison.push(ComparisonEntry {
                metric: k,
                method_1: m1.clone(),
                method_2: m2.clone(),
                n: q.len(),
                comparison: bootstrap_compare_spearman(&q, &v1, &v2, &bootstrap).into(),
            });
        }
    }

    let dice = match masks {
        Some(layout) => pairs(methods.len())
            .map(|(i, j)| dice_entry(layout, &methods[i], &methods[j], &cases))
            .collect(),
        None => Vec::new(),
    };
    let known: BTreeSet<&String> = order.iter().collect();
    let reader_scores = scores
        .as_deref()
        .map(|s| reader_scores(s, &known, &label_map))
        .transpose()?;

    let mut qualitative_bpe_counts = BTreeMap::new();
    let mut density_counts = BTreeMap::new();
    for c in &cases {
        let l = label_map[c];
        if let Some(q) = l.qualitative_bpe {
            *qualitative_bpe_counts.entry(q.value().to_string()).or_insert(0) += 1;
        }
        if let Some(d) = l.density_category {
            *density_counts.entry(d.as_str().to_string()).or_insert(0) += 1;
        }
    }
    Ok(Report {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        bootstrap: BootstrapSettings {
            rng_algorithm: RNG_ALGORITHM.to_string(),
            seed: bootstrap.seed,
            resamples: bootstrap.resamples,
            level: bootstrap.level,
            max_redraws: bootstrap.max_redraws,
        },
        methods,
        cases,
        excluded_cases,
        qualitative_bpe_counts,
        density_counts,
        dice,
        agreement,
        correlation,
        correlation_comparison,
        reader_scores,
        failures,
    })
}

fn cell<T>(o: &Outcome<T>, f: impl Fn(&T) -> String) -> String {
    match o {
        Outcome::Value(v) => f(v),
        Outcome::Error { error } => format!("n/a ({error})"),
    }
}

/// Plain-text tables of the report.
/// Writes `report/report.json` and `report/report.txt`.
pub fn write_report(layout: &Layout, report: &Report) -> Result<()> {
    let dir = layout.report_dir();
    super::write_json(&dir.join("report.json"), report)?;
    crate::io::write_atomic(&dir.join("report.txt"), render_text(report).as_bytes())
}

pub fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "BPE agreement report");
    let _ = writeln!(s, "methods: {}", r.methods.join(", "));
    let _ = writeln!(s, "cases analysed: {}, excluded: {}", r.cases.len(), r.excluded_cases.len());
    let _ = writeln!(
        s,
        "bootstrap: {} resamples, level {}, seed {} ({})",
        r.bootstrap.resamples, r.bootstrap.level, r.bootstrap.seed, r.bootstrap.rng_algorithm
    );

    if !r.dice.is_empty() {
        let _ = writeln!(s, "\nFGT Dice, median (IQR)");
        for d in &r.dice {
            let v = cell(&d.fgt, |x| format!("{:.3} ({:.3}-{:.3})", x.median, x.q1, x.q3));
            let _ = writeln!(s, "  {:<24} vs {:<24} n={:<4} {v}", d.method_1, d.method_2, d.n);
        }
    }
    let _ = writeln!(s, "\nCCC (CI)");
    for a in &r.agreement {
        let v = cell(&a.ccc, |c| {
            let flag = if c.unreliable { " [small n]" } else { "" };
            format!("{:.3} ({:.3}-{:.3}){flag}", c.estimate, c.lo, c.hi)
        });
        let _ = writeln!(
            s,
            "  {:<26} {:<20} vs {:<20} n={:<4} {v}",
            a.metric.column(),
            a.method_1,
            a.method_2,
            a.n
        );
    }
    let _ = writeln!(s, "\nSpearman vs qualitative BPE");
    for c in &r.correlation {
        let v = cell(&c.spearman, |x| format!("rho {:.3}, p {:.4}", x.rho, x.p_value));
        let _ = writeln!(s, "  {:<26} {:<20} n={:<4} {v}", c.metric.column(), c.method, c.n);
    }
    if !r.correlation_comparison.is_empty() {
        let _ = writeln!(s, "\nSpearman differences (bootstrap)");
        for c in &r.correlation_comparison {
            let v = cell(&c.comparison, |x| format!("delta {:+.3}, p {:.4}", x.delta_rho, x.p_value));
            let _ = writeln!(
                s,
                "  {:<26} {:<20} vs {:<20} n={:<4} {v}",
                c.metric.column(),
                c.method_1,
                c.method_2,
                c.n
            );
        }
    }
    if let Some(rs) = &r.reader_scores {
        let _ = writeln!(s, "\nReader scores: {} vs {}", rs.method_a, rs.method_b);
        for t in &rs.tests {
            let v = cell(&t.wilcoxon, |w| format!("W {}, p {:.4}", w.statistic, w.p_value));
            let _ = writeln!(
                s,
                "  {:<24} n={:<4} mean {:.2} vs {:.2}  {v}",
                t.group, t.n, t.mean_a, t.mean_b
            );
        }
        let prefs: Vec<String> = rs.preferences.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        let _ = writeln!(s, "  preferences on ties: {}", prefs.join(", "));
    }
    if !r.failures.is_empty() {
        let _ = writeln!(s, "\nFailures");
        for f in &r.failures {
            let _ = writeln!(s, "  {} {}: {}", f.stage, f.case_id, f.error);
        }
    }
    s
}
