//! Ground-truth matching and the statistical battery: detection rates,
//! continuity-corrected McNemar, Cohen's d, precision/recall/F1, Cohen's
//! Kappa, and annotation-level summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use statrs::function::erf::erfc;
use thiserror::Error;

use crate::audit::{AuditFinding, Judgment};
use crate::parser::FunctionId;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("ground truth total is zero")]
    ZeroTotal,
    #[error("no discordant pairs: McNemar statistic undefined when b + c = 0")]
    NoDiscordantPairs,
    #[error("vectors have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("pooled standard deviation is zero")]
    ZeroPooledSd,
    #[error("degenerate counts: tp + fp and tp + fn must both be positive")]
    DegenerateCounts,
    #[error("expected agreement is 1: kappa undefined")]
    PerfectExpectedAgreement,
    #[error("chi-squared statistic must be non-negative, got {0}")]
    NegativeStatistic(f64),
    #[error("ground truth line {line}: {msg}")]
    GroundTruthFormat { line: usize, msg: String },
    #[error("ground truth entry for {contract} line range {lines} resolves to no function")]
    UnresolvedGroundTruth { contract: String, lines: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthEntry {
    pub contract: String,
    pub path: String,
    pub function: FunctionId,
    pub category: String,
}

/// Ground-truth file: `contract,path,function-or-linerange,category` per
/// line; `#` comments. Line ranges (`12-30`) are resolved against the
/// parsed unit by the caller via `resolve_lines`.
pub fn parse_ground_truth(
    text: &str,
    resolve_lines: &dyn Fn(&str, usize, usize) -> Option<FunctionId>,
) -> Result<Vec<GroundTruthEntry>, StatsError> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.splitn(4, ',').map(|p| p.trim()).collect();
        if parts.len() != 4 {
            return Err(StatsError::GroundTruthFormat {
                line: lineno + 1,
                msg: "expected contract,path,function-or-linerange,category".into(),
            });
        }
        let (contract, path, locator, category) = (parts[0], parts[1], parts[2], parts[3]);
        let function = if let Some(id) = FunctionId::parse(locator) {
            id
        } else if let Some((a, b)) = locator.split_once('-') {
            let (start, end) = match (a.parse::<usize>(), b.parse::<usize>()) {
                (Ok(s), Ok(e)) => (s, e),
                _ => {
                    return Err(StatsError::GroundTruthFormat {
                        line: lineno + 1,
                        msg: format!("bad line range: {locator}"),
                    })
                }
            };
            resolve_lines(contract, start, end).ok_or_else(|| StatsError::UnresolvedGroundTruth {
                contract: contract.to_string(),
                lines: locator.to_string(),
            })?
        } else {
            return Err(StatsError::GroundTruthFormat {
                line: lineno + 1,
                msg: format!("locator is neither Contract.name/arity nor a line range: {locator}"),
            });
        };
        entries.push(GroundTruthEntry {
            contract: contract.to_string(),
            path: path.to_string(),
            function,
            category: category.to_string(),
        });
    }
    Ok(entries)
}

#[derive(Debug, Clone)]
pub struct PairedOutcome {
    pub entry: GroundTruthEntry,
    pub detected_by_a: bool,
    pub detected_by_b: bool,
}

#[derive(Debug, Clone, Default)]
pub struct MatchSummary {
    /// Category → (correct detections, ground-truth count), taxonomy order.
    pub per_category: BTreeMap<String, (usize, usize)>,
    pub correct: usize,
    pub total: usize,
    /// Per ground-truth entry, whether it was detected.
    pub detected: Vec<(GroundTruthEntry, bool)>,
}

/// A ground-truth entry is detected iff some affirmative finding targets
/// the same function and shares its category.
pub fn match_findings(findings: &[AuditFinding], ground_truth: &[GroundTruthEntry]) -> MatchSummary {
    let mut summary = MatchSummary { total: ground_truth.len(), ..Default::default() };
    for entry in ground_truth {
        let hit = findings.iter().any(|f| {
            f.judgment == Judgment::Yes
                && f.target == entry.function
                && f.vuln_types.iter().any(|c| c == &entry.category)
        });
        let slot = summary.per_category.entry(entry.category.clone()).or_insert((0, 0));
        slot.1 += 1;
        if hit {
            slot.0 += 1;
            summary.correct += 1;
        }
        summary.detected.push((entry.clone(), hit));
    }
    summary
}

/// Pair two runs over the same ground truth into McNemar-ready outcomes.
pub fn pair_outcomes(a: &MatchSummary, b: &MatchSummary) -> Vec<PairedOutcome> {
    a.detected
        .iter()
        .zip(&b.detected)
        .map(|((entry, da), (_, db))| PairedOutcome {
            entry: entry.clone(),
            detected_by_a: *da,
            detected_by_b: *db,
        })
        .collect()
}

/// Percentage to 2 decimals.
pub fn detection_rate(correct: usize, total: usize) -> Result<f64, StatsError> {
    if total == 0 {
        return Err(StatsError::ZeroTotal);
    }
    Ok(round2(100.0 * correct as f64 / total as f64))
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone)]
pub struct McNemarResult {
    pub b: usize,
    pub c: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub critical_value: f64,
    pub significant: bool,
}

pub fn mcnemar_from_counts(b: usize, c: usize) -> Result<McNemarResult, StatsError> {
    if b + c == 0 {
        return Err(StatsError::NoDiscordantPairs);
    }
    // Continuity-corrected: (|b - c| - 1)^2 / (b + c), no clamping.
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let statistic = diff * diff / (b + c) as f64;
    let p_value = chi_sq_sf(statistic, 1)?;
    Ok(McNemarResult {
        b,
        c,
        statistic,
        p_value,
        critical_value: 3.841,
        significant: statistic > 3.841,
    })
}

pub fn mcnemar(outcomes: &[PairedOutcome]) -> Result<McNemarResult, StatsError> {
    let b = outcomes.iter().filter(|o| o.detected_by_a && !o.detected_by_b).count();
    let c = outcomes.iter().filter(|o| !o.detected_by_a && o.detected_by_b).count();
    mcnemar_from_counts(b, c)
}

/// Chi-squared survival function. For 1 dof, P(X > x) = erfc(sqrt(x/2)).
pub fn chi_sq_sf(x: f64, dof: u32) -> Result<f64, StatsError> {
    if x < 0.0 {
        return Err(StatsError::NegativeStatistic(x));
    }
    assert_eq!(dof, 1, "only the paper's 1-dof case is supported");
    Ok(erfc((x / 2.0).sqrt()))
}

#[derive(Debug, Clone)]
pub struct EffectSize {
    pub mean_a: f64,
    pub mean_b: f64,
    pub sd_a: f64,
    pub sd_b: f64,
    pub pooled_sd: f64,
    pub cohens_d: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample (n − 1) standard deviation.
pub fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len() as f64 - 1.0)).sqrt()
}

pub fn cohens_d(vec_a: &[f64], vec_b: &[f64]) -> Result<EffectSize, StatsError> {
    if vec_a.len() != vec_b.len() {
        return Err(StatsError::LengthMismatch(vec_a.len(), vec_b.len()));
    }
    if vec_a.len() < 2 {
        return Err(StatsError::LengthMismatch(vec_a.len(), 2));
    }
    let (mean_a, mean_b) = (mean(vec_a), mean(vec_b));
    let (sd_a, sd_b) = (sample_sd(vec_a), sample_sd(vec_b));
    let pooled_sd = ((sd_a * sd_a + sd_b * sd_b) / 2.0).sqrt();
    if pooled_sd == 0.0 {
        return Err(StatsError::ZeroPooledSd);
    }
    Ok(EffectSize {
        mean_a,
        mean_b,
        sd_a,
        sd_b,
        pooled_sd,
        cohens_d: (mean_a - mean_b) / pooled_sd,
    })
}

/// (precision, recall, f1) as percentages.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> Result<(f64, f64, f64), StatsError> {
    if tp + fp == 0 || tp + fn_ == 0 {
        return Err(StatsError::DegenerateCounts);
    }
    let precision = 100.0 * tp as f64 / (tp + fp) as f64;
    let recall = 100.0 * tp as f64 / (tp + fn_) as f64;
    Ok((round2(precision), round2(recall), round2(harmonic_f1(precision, recall))))
}

/// Harmonic mean of two percentages.
pub fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        return 0.0;
    }
    2.0 * precision * recall / (precision + recall)
}

pub fn cohens_kappa<T: Eq + std::hash::Hash + Clone + Ord>(
    a: &[T],
    b: &[T],
) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::LengthMismatch(0, 1));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut marg_a: BTreeMap<&T, f64> = BTreeMap::new();
    let mut marg_b: BTreeMap<&T, f64> = BTreeMap::new();
    for x in a {
        *marg_a.entry(x).or_default() += 1.0;
    }
    for y in b {
        *marg_b.entry(y).or_default() += 1.0;
    }
    let expected: f64 = marg_a
        .iter()
        .map(|(label, ca)| ca / n * marg_b.get(label).copied().unwrap_or(0.0) / n)
        .sum();
    if (expected - 1.0).abs() < 1e-12 {
        return Err(StatsError::PerfectExpectedAgreement);
    }
    Ok((observed - expected) / (1.0 - expected))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub ccl_id: u32,
    pub annotator: u8,
    /// 1 NOT, 2 Partial, 3 Perfect.
    pub correctness: u8,
    /// 1 NOT, 2 Partial, 3 Total.
    pub relevance: u8,
}

#[derive(Debug, Clone, Default)]
pub struct AnnotationSummary {
    /// Annotator → (correctness=3 %, correctness≥2 %, relevance=3 %, relevance≥2 %).
    pub per_annotator: BTreeMap<u8, (f64, f64, f64, f64)>,
    pub averaged: (f64, f64, f64, f64),
}

pub fn summarize_annotations(records: &[AnnotationRecord]) -> AnnotationSummary {
    let mut by_annotator: BTreeMap<u8, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_annotator.entry(r.annotator).or_default().push(r);
    }
    let mut summary = AnnotationSummary::default();
    let mut sums = (0.0, 0.0, 0.0, 0.0);
    for (annotator, rs) in &by_annotator {
        let n = rs.len() as f64;
        let pct = |count: usize| round2(100.0 * count as f64 / n);
        let shares = (
            pct(rs.iter().filter(|r| r.correctness == 3).count()),
            pct(rs.iter().filter(|r| r.correctness >= 2).count()),
            pct(rs.iter().filter(|r| r.relevance == 3).count()),
            pct(rs.iter().filter(|r| r.relevance >= 2).count()),
        );
        sums.0 += shares.0;
        sums.1 += shares.1;
        sums.2 += shares.2;
        sums.3 += shares.3;
        summary.per_annotator.insert(*annotator, shares);
    }
    let k = by_annotator.len().max(1) as f64;
    summary.averaged =
        (round2(sums.0 / k), round2(sums.1 / k), round2(sums.2 / k), round2(sums.3 / k));
    summary
}

/// Annotation file: `cclId,annotator,correctness,relevance` lines.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>, StatsError> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(|p| p.trim()).collect();
        let bad = |msg: &str| StatsError::GroundTruthFormat { line: lineno + 1, msg: msg.into() };
        if parts.len() != 4 {
            return Err(bad("expected cclId,annotator,correctness,relevance"));
        }
        let record = AnnotationRecord {
            ccl_id: parts[0].parse().map_err(|_| bad("bad cclId"))?,
            annotator: parts[1].parse().map_err(|_| bad("bad annotator"))?,
            correctness: parts[2].parse().map_err(|_| bad("bad correctness"))?,
            relevance: parts[3].parse().map_err(|_| bad("bad relevance"))?,
        };
        if !(1..=3).contains(&record.correctness) || !(1..=3).contains(&record.relevance) {
            return Err(bad("levels must be 1..=3"));
        }
        records.push(record);
    }
    Ok(records)
}

/// Markdown stats report: a per-category detection table plus a
/// statistics block. `comparison` is an optional second run to pair
/// against for McNemar and Cohen's d.
pub fn stats_report_markdown(
    label_a: &str,
    summary_a: &MatchSummary,
    comparison: Option<(&str, &MatchSummary)>,
) -> Result<String, StatsError> {
    let mut out = String::from("# Detection results\n\n");
    let mut header = format!("| category | ground truth | {label_a}");
    let mut rule = String::from("|---|---|---");
    if let Some((label_b, _)) = comparison {
        let _ = write!(header, " | {label_b}");
        rule.push_str("|---");
    }
    let _ = writeln!(out, "{header} |");
    let _ = writeln!(out, "{rule}|");

    let categories: Vec<&String> = summary_a.per_category.keys().collect();
    for cat in &categories {
        let (ca, ta) = summary_a.per_category[*cat];
        let mut row = format!("| {cat} | {ta} | {ca}");
        if let Some((_, summary_b)) = comparison {
            let cb = summary_b.per_category.get(*cat).map(|(c, _)| *c).unwrap_or(0);
            let _ = write!(row, " | {cb}");
        }
        let _ = writeln!(out, "{row} |");
    }
    let mut totals = format!("| total | {} | {}", summary_a.total, summary_a.correct);
    if let Some((_, summary_b)) = comparison {
        let _ = write!(totals, " | {}", summary_b.correct);
    }
    let _ = writeln!(out, "{totals} |");

    out.push_str("\n## Statistics\n\n");
    let rate_a = detection_rate(summary_a.correct, summary_a.total)?;
    let _ = writeln!(out, "- detection rate ({label_a}): {rate_a:.2}%");
    if let Some((label_b, summary_b)) = comparison {
        let rate_b = detection_rate(summary_b.correct, summary_b.total)?;
        let _ = writeln!(out, "- detection rate ({label_b}): {rate_b:.2}%");
        let outcomes = pair_outcomes(summary_a, summary_b);
        match mcnemar(&outcomes) {
            Ok(m) => {
                let _ = writeln!(
                    out,
                    "- McNemar: b={} c={} statistic={:.2} p={:.4} significant={}",
                    m.b, m.c, m.statistic, m.p_value, m.significant
                );
            }
            Err(StatsError::NoDiscordantPairs) => {
                out.push_str("- McNemar: undefined (no discordant pairs)\n");
            }
            Err(e) => return Err(e),
        }
        let vec_a: Vec<f64> =
            summary_a.per_category.values().map(|(c, _)| *c as f64).collect();
        let vec_b: Vec<f64> =
            summary_b.per_category.values().map(|(c, _)| *c as f64).collect();
        match cohens_d(&vec_a, &vec_b) {
            Ok(es) => {
                let _ = writeln!(
                    out,
                    "- Cohen's d: {:.2} (sdA={:.2}, sdB={:.2})",
                    es.cohens_d, es.sd_a, es.sd_b
                );
            }
            Err(StatsError::ZeroPooledSd) | Err(StatsError::LengthMismatch(..)) => {
                out.push_str("- Cohen's d: undefined for these vectors\n");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Machine-readable twin: `key=value` lines mirroring the markdown report.
pub fn stats_report_text(
    label_a: &str,
    summary_a: &MatchSummary,
    comparison: Option<(&str, &MatchSummary)>,
) -> Result<String, StatsError> {
    let mut out = String::new();
    for (cat, (correct, total)) in &summary_a.per_category {
        let key = cat.replace(' ', "_");
        let _ = writeln!(out, "category.{key}.ground_truth={total}");
        let _ = writeln!(out, "category.{key}.{label_a}={correct}");
        if let Some((label_b, summary_b)) = comparison {
            let cb = summary_b.per_category.get(cat).map(|(c, _)| *c).unwrap_or(0);
            let _ = writeln!(out, "category.{key}.{label_b}={cb}");
        }
    }
    let _ = writeln!(out, "total.ground_truth={}", summary_a.total);
    let _ = writeln!(out, "total.{label_a}={}", summary_a.correct);
    let _ = writeln!(out, "rate.{label_a}={:.2}", detection_rate(summary_a.correct, summary_a.total)?);
    if let Some((label_b, summary_b)) = comparison {
        let _ = writeln!(out, "total.{label_b}={}", summary_b.correct);
        let _ = writeln!(out, "rate.{label_b}={:.2}", detection_rate(summary_b.correct, summary_b.total)?);
        let outcomes = pair_outcomes(summary_a, summary_b);
        if let Ok(m) = mcnemar(&outcomes) {
            let _ = writeln!(out, "mcnemar.b={}", m.b);
            let _ = writeln!(out, "mcnemar.c={}", m.c);
            let _ = writeln!(out, "mcnemar.statistic={:.2}", m.statistic);
            let _ = writeln!(out, "mcnemar.p={:.4}", m.p_value);
            let _ = writeln!(out, "mcnemar.significant={}", m.significant);
        }
        let vec_a: Vec<f64> = summary_a.per_category.values().map(|(c, _)| *c as f64).collect();
        let vec_b: Vec<f64> = summary_b.per_category.values().map(|(c, _)| *c as f64).collect();
        if let Ok(es) = cohens_d(&vec_a, &vec_b) {
            let _ = writeln!(out, "cohens_d={:.2}", es.cohens_d);
            let _ = writeln!(out, "sd.{label_a}={:.2}", es.sd_a);
            let _ = writeln!(out, "sd.{label_b}={:.2}", es.sd_b);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub const CAQ_FULL: [f64; 10] = [11.0, 9.0, 3.0, 23.0, 12.0, 3.0, 41.0, 4.0, 1.0, 2.0];
    pub const CAQ_CCL: [f64; 10] = [21.0, 26.0, 6.0, 32.0, 23.0, 6.0, 49.0, 4.0, 1.0, 5.0];
    pub const CWE_FULL: [f64; 10] = [17.0, 10.0, 6.0, 23.0, 18.0, 4.0, 41.0, 3.0, 1.0, 2.0];
    pub const CWE_CCL: [f64; 10] = [21.0, 29.0, 6.0, 32.0, 23.0, 6.0, 50.0, 4.0, 1.0, 5.0];

    #[test]
    fn detection_rates_match_the_published_fixture() {
        assert_abs_diff_eq!(detection_rate(109, 184).unwrap(), 59.24, epsilon = 0.01);
        assert_abs_diff_eq!(detection_rate(173, 184).unwrap(), 94.02, epsilon = 0.01);
        assert_abs_diff_eq!(detection_rate(125, 184).unwrap(), 67.93, epsilon = 0.01);
        assert_abs_diff_eq!(detection_rate(177, 184).unwrap(), 96.20, epsilon = 0.01);
        assert_eq!(detection_rate(184, 184).unwrap(), 100.00);
        assert!(matches!(detection_rate(1, 0), Err(StatsError::ZeroTotal)));
    }

    #[test]
    fn mcnemar_reproduces_the_fixture_statistics() {
        assert_abs_diff_eq!(mcnemar_from_counts(64, 0).unwrap().statistic, 62.015625, epsilon = 1e-9);
        assert_abs_diff_eq!(mcnemar_from_counts(52, 0).unwrap().statistic, 50.019, epsilon = 0.01);
        assert_abs_diff_eq!(mcnemar_from_counts(4, 0).unwrap().statistic, 2.25, epsilon = 1e-12);
        // Symmetric case keeps the correction without clamping.
        assert_abs_diff_eq!(mcnemar_from_counts(5, 5).unwrap().statistic, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn mcnemar_is_symmetric_and_flags_significance() {
        let ab = mcnemar_from_counts(30, 7).unwrap();
        let ba = mcnemar_from_counts(7, 30).unwrap();
        assert_eq!(ab.statistic, ba.statistic);
        assert!(ab.significant);
        assert!(!mcnemar_from_counts(4, 0).unwrap().significant);
        assert!(matches!(mcnemar_from_counts(0, 0), Err(StatsError::NoDiscordantPairs)));
    }

    #[test]
    fn mcnemar_from_outcomes_tallies_discordant_pairs() {
        let entry = GroundTruthEntry {
            contract: "C".into(),
            path: "C.sol".into(),
            function: FunctionId::new("C", "f", 0),
            category: "reentrancy".into(),
        };
        let outcomes: Vec<PairedOutcome> = [(true, false), (true, false), (false, true), (true, true)]
            .iter()
            .map(|&(a, b)| PairedOutcome {
                entry: entry.clone(),
                detected_by_a: a,
                detected_by_b: b,
            })
            .collect();
        let m = mcnemar(&outcomes).unwrap();
        assert_eq!((m.b, m.c), (2, 1));
    }

    /// Numeric-integration oracle for the 1-dof chi-squared density,
    /// integrated by Simpson's rule on [x, x + 400].
    fn chi_sq_sf_oracle(x: f64) -> f64 {
        let density = |t: f64| -> f64 {
            if t <= 0.0 {
                return 0.0;
            }
            (-t / 2.0).exp() / (2.0 * std::f64::consts::PI * t).sqrt()
        };
        let lo = x.max(1e-12);
        let hi = x + 400.0;
        let n = 4_000_000usize; // even
        let h = (hi - lo) / n as f64;
        let mut sum = density(lo) + density(hi);
        for i in 1..n {
            let t = lo + i as f64 * h;
            sum += density(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    }

    #[test]
    fn chi_sq_sf_matches_the_integration_oracle() {
        for x in [0.1, 1.0, 2.25, 3.841, 10.0, 50.0] {
            let got = chi_sq_sf(x, 1).unwrap();
            let want = chi_sq_sf_oracle(x);
            assert_abs_diff_eq!(got, want, epsilon = 1e-8);
        }
        assert_eq!(chi_sq_sf(0.0, 1).unwrap(), 1.0);
        assert_abs_diff_eq!(chi_sq_sf(3.841, 1).unwrap(), 0.05, epsilon = 1e-4);
        assert_abs_diff_eq!(chi_sq_sf(2.25, 1).unwrap(), 0.1336, epsilon = 1e-4);
        assert!(matches!(chi_sq_sf(-1.0, 1), Err(StatsError::NegativeStatistic(_))));
    }

    #[test]
    fn chi_sq_sf_is_monotone_decreasing() {
        let mut prev = 1.0;
        for i in 1..200 {
            let p = chi_sq_sf(i as f64 * 0.25, 1).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn cohens_d_reproduces_the_fixture_effect_sizes() {
        let d1 = cohens_d(&CAQ_FULL, &CAQ_CCL).unwrap();
        assert_abs_diff_eq!(d1.cohens_d, -0.45, epsilon = 0.01);
        let d2 = cohens_d(&CWE_FULL, &CWE_CCL).unwrap();
        assert_abs_diff_eq!(d2.cohens_d, -0.36, epsilon = 0.01);
        let d3 = cohens_d(&CAQ_CCL, &CWE_CCL).unwrap();
        assert_abs_diff_eq!(d3.cohens_d, -0.025, epsilon = 0.01);
        assert_abs_diff_eq!(d3.sd_a, 15.61, epsilon = 0.01);
        assert_abs_diff_eq!(d3.sd_b, 16.04, epsilon = 0.01);
    }

    #[test]
    fn cohens_d_edge_cases() {
        let same = cohens_d(&CAQ_CCL, &CAQ_CCL).unwrap();
        assert_eq!(same.cohens_d, 0.0);
        assert!(matches!(cohens_d(&[1.0], &[1.0, 2.0]), Err(StatsError::LengthMismatch(1, 2))));
        assert!(matches!(
            cohens_d(&[2.0, 2.0], &[2.0, 2.0]),
            Err(StatsError::ZeroPooledSd)
        ));
    }

    #[test]
    fn precision_recall_f1_fixture() {
        // tp=173, fn=11 → recall 94.02; fp sized so precision lands at 97.25.
        let fp = ((173.0 / 0.9725 - 173.0) as f64).round() as usize;
        let (p, r, f1) = precision_recall_f1(173, fp, 11).unwrap();
        assert_abs_diff_eq!(r, 94.02, epsilon = 0.01);
        assert_abs_diff_eq!(p, 97.25, epsilon = 0.35);
        assert_abs_diff_eq!(harmonic_f1(97.25, 94.02), 95.61, epsilon = 0.01);
        let _ = f1;
        assert_eq!(precision_recall_f1(5, 0, 0).unwrap(), (100.0, 100.0, 100.0));
        assert!(matches!(precision_recall_f1(0, 0, 3), Err(StatsError::DegenerateCounts)));
    }

    #[test]
    fn kappa_trivial_and_hand_computed_cases() {
        assert_eq!(cohens_kappa(&[1, 2, 3, 1], &[1, 2, 3, 1]).unwrap(), 1.0);
        assert_abs_diff_eq!(cohens_kappa(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap(), 0.0, epsilon = 1e-12);
        assert!(matches!(
            cohens_kappa(&[1, 1], &[1, 1]),
            Err(StatsError::PerfectExpectedAgreement)
        ));
        assert!(matches!(cohens_kappa(&[1], &[1, 2]), Err(StatsError::LengthMismatch(1, 2))));
    }

    #[test]
    fn a_three_level_fixture_lands_near_kappa_065() {
        // Brute-force small 3x3 agreement structures for kappa ≈ 0.65.
        let mut found = None;
        'outer: for agree3 in 30..70u32 {
            for agree2 in 10..40u32 {
                for cross in 5..30u32 {
                    let mut a = Vec::new();
                    let mut b = Vec::new();
                    for _ in 0..agree3 {
                        a.push(3);
                        b.push(3);
                    }
                    for _ in 0..agree2 {
                        a.push(2);
                        b.push(2);
                    }
                    for _ in 0..cross {
                        a.push(3);
                        b.push(2);
                    }
                    for _ in 0..5 {
                        a.push(1);
                        b.push(1);
                    }
                    if let Ok(k) = cohens_kappa(&a, &b) {
                        if (k - 0.65).abs() < 0.01 {
                            found = Some((a, b, k));
                            break 'outer;
                        }
                    }
                }
            }
        }
        let (a, b, k) = found.expect("a kappa≈0.65 fixture exists in the search space");
        assert_abs_diff_eq!(cohens_kappa(&a, &b).unwrap(), k, epsilon = 1e-12);
        assert!((k - 0.65).abs() < 0.01);
    }

    fn annotation_fixture() -> Vec<AnnotationRecord> {
        // Annotator 1: correctness 56×3, 21×2, 23×1; annotator 2: 56×3,
        // 20×2, 24×1. Relevance for both: 46×3, 29×2, 25×1. Averages:
        // correctness-3 56%, correctness≥2 76.5%, relevance≥2 75%.
        let mut records = Vec::new();
        let mut push = |annotator: u8, correctness: u8, relevance: u8, n: usize| {
            for _ in 0..n {
                records.push(AnnotationRecord {
                    ccl_id: records.len() as u32,
                    annotator,
                    correctness,
                    relevance,
                });
            }
        };
        // Annotator 1 (relevance interleaved to keep counts exact).
        push(1, 3, 3, 46);
        push(1, 3, 2, 10);
        push(1, 2, 2, 19);
        push(1, 2, 1, 2);
        push(1, 1, 1, 23);
        // Annotator 2.
        push(2, 3, 3, 46);
        push(2, 3, 2, 10);
        push(2, 2, 2, 19);
        push(2, 2, 1, 1);
        push(2, 1, 1, 24);
        records
    }

    #[test]
    fn annotation_summary_reproduces_the_reported_shares() {
        let summary = summarize_annotations(&annotation_fixture());
        let (c3, c2, _r3, r2) = summary.averaged;
        assert_abs_diff_eq!(c3, 56.0, epsilon = 0.01);
        assert_abs_diff_eq!(c2, 76.5, epsilon = 0.01);
        assert_abs_diff_eq!(r2, 75.0, epsilon = 0.01);
    }

    #[test]
    fn annotation_summary_edge_cases() {
        let all3: Vec<AnnotationRecord> = (0..10)
            .map(|i| AnnotationRecord { ccl_id: i, annotator: 1, correctness: 3, relevance: 3 })
            .collect();
        let s = summarize_annotations(&all3);
        assert_eq!(s.averaged, (100.0, 100.0, 100.0, 100.0));
        // Single annotator: averaged equals the individual row.
        assert_eq!(s.per_annotator[&1], s.averaged);
    }

    #[test]
    fn annotation_file_round_trips() {
        let records = annotation_fixture();
        let mut text = String::from("# cclId,annotator,correctness,relevance\n");
        for r in &records {
            text.push_str(&format!("{},{},{},{}\n", r.ccl_id, r.annotator, r.correctness, r.relevance));
        }
        let parsed = parse_annotations(&text).unwrap();
        assert_eq!(parsed, records);
        assert!(parse_annotations("1,1,4,1").is_err());
    }

    #[test]
    fn ground_truth_file_parses_ids_and_line_ranges() {
        let resolve = |contract: &str, start: usize, _end: usize| {
            if contract == "Vault" && start >= 10 {
                Some(FunctionId::new("Vault", "withdraw", 1))
            } else {
                None
            }
        };
        let text = "# comment\nVault,contracts/Vault.sol,Vault.withdraw/1,reentrancy\nVault,contracts/Vault.sol,12-20,reentrancy\n";
        let entries = parse_ground_truth(text, &resolve).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].function, entries[1].function);
        let err = parse_ground_truth("Vault,v.sol,1-5,reentrancy", &resolve).unwrap_err();
        assert!(matches!(err, StatsError::UnresolvedGroundTruth { .. }));
    }

    fn finding(target: FunctionId, judgment: Judgment, cats: &[&str]) -> AuditFinding {
        AuditFinding {
            target,
            mode: crate::prompts::PromptMode::Caq,
            cwe: None,
            judgment,
            vuln_types: cats.iter().map(|c| c.to_string()).collect(),
            exploitation: String::new(),
            impact: String::new(),
            solutions: String::new(),
            locations: Vec::new(),
            raw: String::new(),
        }
    }

    fn gt(function: FunctionId, category: &str) -> GroundTruthEntry {
        GroundTruthEntry {
            contract: function.contract.clone(),
            path: format!("{}.sol", function.contract),
            function,
            category: category.to_string(),
        }
    }

    #[test]
    fn matching_requires_same_function_and_category() {
        let withdraw = FunctionId::new("Vault", "withdraw", 1);
        let deposit = FunctionId::new("Vault", "deposit", 0);
        let truth = vec![gt(withdraw.clone(), "reentrancy"), gt(deposit.clone(), "arithmetic")];
        let findings = vec![
            finding(withdraw.clone(), Judgment::Yes, &["reentrancy"]),
            // Right function, wrong category: not a detection.
            finding(deposit.clone(), Judgment::Yes, &["access control"]),
        ];
        let summary = match_findings(&findings, &truth);
        assert_eq!(summary.correct, 1);
        assert_eq!(summary.per_category["reentrancy"], (1, 1));
        assert_eq!(summary.per_category["arithmetic"], (0, 1));
        // Non-affirmative judgments never count.
        let none = match_findings(&[finding(withdraw, Judgment::NotSure, &["reentrancy"])], &truth);
        assert_eq!(none.correct, 0);
        let empty = match_findings(&[], &truth);
        assert_eq!(empty.correct, 0);
    }

    #[test]
    fn stats_report_mentions_every_category_and_the_statistics_block() {
        let withdraw = FunctionId::new("Vault", "withdraw", 1);
        let deposit = FunctionId::new("Vault", "deposit", 0);
        let truth = vec![gt(withdraw.clone(), "reentrancy"), gt(deposit.clone(), "arithmetic")];
        let run_a = match_findings(&[finding(withdraw.clone(), Judgment::Yes, &["reentrancy"])], &truth);
        let run_b = match_findings(
            &[
                finding(withdraw, Judgment::Yes, &["reentrancy"]),
                finding(deposit, Judgment::Yes, &["arithmetic"]),
            ],
            &truth,
        );
        let md = stats_report_markdown("full", &run_a, Some(("ccl", &run_b))).unwrap();
        assert!(md.contains("| reentrancy | 1 | 1 | 1 |"));
        assert!(md.contains("| arithmetic | 1 | 0 | 1 |"));
        assert!(md.contains("| total | 2 | 1 | 2 |"));
        assert!(md.contains("detection rate (full): 50.00%"));
        assert!(md.contains("detection rate (ccl): 100.00%"));
        let txt = stats_report_text("full", &run_a, Some(("ccl", &run_b))).unwrap();
        assert!(txt.contains("total.full=1"));
        assert!(txt.contains("rate.ccl=100.00"));
        assert!(txt.contains("mcnemar.c=1"));
    }
}
