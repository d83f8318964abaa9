//! Effect estimation for two-level full factorials with a Lenth-style
//! significance reference line.
//!
//! For a term T (a non-empty set of factor aliases), the effect is the mean
//! response over trials where the product of T's coded columns is +1 minus the
//! mean where it is -1. Contrast sums use exactly rounded summation, so
//! estimates do not depend on trial order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::design::DesignMatrix;
use crate::stats::{self, exact_sum};

/// A main effect or interaction: a sorted, non-empty set of factor aliases.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Term(Vec<char>);

impl Term {
    /// Builds a term from aliases; duplicates collapse, order is normalized.
    pub fn new<I: IntoIterator<Item = char>>(aliases: I) -> Result<Term, EffectsError> {
        let set: BTreeSet<char> = aliases.into_iter().collect();
        if set.is_empty() {
            return Err(EffectsError::EmptyTerm);
        }
        if let Some(&bad) = set.iter().find(|c| !c.is_ascii_uppercase()) {
            return Err(EffectsError::BadAlias(bad));
        }
        Ok(Term(set.into_iter().collect()))
    }

    pub fn aliases(&self) -> &[char] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, alias: char) -> bool {
        self.0.binary_search(&alias).is_ok()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.0 {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for Term {
    type Err = EffectsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Term::new(s.chars())
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Responses keyed by run order, all in one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    unit: String,
    values: BTreeMap<u32, f64>,
}

impl ResultSet {
    pub fn new(unit: impl Into<String>) -> Self {
        ResultSet {
            unit: unit.into(),
            values: BTreeMap::new(),
        }
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, run_order: u32) -> Option<f64> {
        self.values.get(&run_order).copied()
    }

    /// Iterates entries in ascending run order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.values.iter().map(|(&k, &v)| (k, v))
    }

    /// Records one response. Rejects duplicates and non-finite values.
    pub fn insert(&mut self, run_order: u32, value: f64) -> Result<(), EffectsError> {
        if !value.is_finite() {
            return Err(EffectsError::NonFiniteResponse { run_order });
        }
        if self.values.contains_key(&run_order) {
            return Err(EffectsError::DuplicateRunOrder(run_order));
        }
        self.values.insert(run_order, value);
        Ok(())
    }
}

/// A design paired with a complete set of responses.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedExperiment {
    design: DesignMatrix,
    responses: ResultSet,
}

impl CompletedExperiment {
    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn responses(&self) -> &ResultSet {
        &self.responses
    }
}

/// One estimated effect in response units.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub term: Term,
    pub estimate: f64,
    pub abs_estimate: f64,
}

/// The full analysis behind a Pareto-of-effects report.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub alpha: f64,
    pub grand_mean: f64,
    pub unit: String,
    pub pse: f64,
    pub margin_of_error: f64,
    /// All 2^k - 1 effects, in canonical order (by term size, then alphabet).
    pub effects: Vec<EffectEstimate>,
    /// Terms sorted by |estimate| descending, ties alphabetical.
    pub ranking: Vec<Term>,
    /// Terms whose |estimate| strictly exceeds the margin of error.
    pub significant_terms: BTreeSet<Term>,
}

impl AnalysisReport {
    pub fn effect(&self, term: &Term) -> Option<&EffectEstimate> {
        self.effects.iter().find(|e| &e.term == term)
    }

    /// Effects in ranking order.
    pub fn ranked_effects(&self) -> Vec<&EffectEstimate> {
        self.ranking
            .iter()
            .map(|t| self.effect(t).expect("ranking is a permutation of terms"))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum EffectsError {
    #[error("a term needs at least one alias")]
    EmptyTerm,
    #[error("`{0}` is not an uppercase ASCII alias")]
    BadAlias(char),
    #[error("response for run_order {run_order} is not a finite number")]
    NonFiniteResponse { run_order: u32 },
    #[error("run_order {0} has more than one response")]
    DuplicateRunOrder(u32),
    #[error("missing response(s) for run_order(s) {}", format_list(.0))]
    MissingResponses(Vec<u32>),
    #[error("response(s) for unknown run_order(s) {}", format_list(.0))]
    UnknownRunOrders(Vec<u32>),
    #[error("response unit `{found}` does not match design unit `{expected}`")]
    UnitMismatch { expected: String, found: String },
    #[error("effects require every factor at exactly two levels")]
    NotTwoLevel,
    #[error("no effects to analyze")]
    EmptyEffects,
    #[error("margin of error needs pse >= 0, got {0}")]
    NegativePse(f64),
    #[error("margin of error needs at least one effect")]
    NoEffectCount,
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    AlphaOutOfRange(f64),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error("analysis JSON: {0}")]
    Json(String),
}

fn format_list(values: &[u32]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Pairs each trial with its response by run order, verifying completeness
/// and unit agreement.
pub fn attach_responses(
    design: DesignMatrix,
    results: ResultSet,
) -> Result<CompletedExperiment, EffectsError> {
    let expected_unit = design.selection().response().unit();
    if results.unit() != expected_unit {
        return Err(EffectsError::UnitMismatch {
            expected: expected_unit.to_string(),
            found: results.unit().to_string(),
        });
    }
    let design_runs: BTreeSet<u32> = design.trials().iter().map(|t| t.run_order).collect();
    let result_runs: BTreeSet<u32> = results.iter().map(|(r, _)| r).collect();
    let missing: Vec<u32> = design_runs.difference(&result_runs).copied().collect();
    let unknown: Vec<u32> = result_runs.difference(&design_runs).copied().collect();
    if !unknown.is_empty() {
        return Err(EffectsError::UnknownRunOrders(unknown));
    }
    if !missing.is_empty() {
        return Err(EffectsError::MissingResponses(missing));
    }
    Ok(CompletedExperiment {
        design,
        responses: results,
    })
}

/// All non-empty alias subsets in canonical order: size ascending, then
/// alphabetical.
pub fn enumerate_terms(aliases: &[char]) -> Vec<Term> {
    let k = aliases.len();
    let mut terms: Vec<Term> = (1u32..(1 << k))
        .map(|mask| {
            Term::new(
                aliases
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &c)| c),
            )
            .expect("non-empty mask yields a valid term")
        })
        .collect();
    terms.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    terms
}

/// Estimates the grand mean and every main/interaction effect of a complete
/// two-level experiment.
pub fn estimate_effects(
    exp: &CompletedExperiment,
) -> Result<(f64, Vec<EffectEstimate>), EffectsError> {
    let design = exp.design();
    if !design.is_two_level() {
        return Err(EffectsError::NotTwoLevel);
    }
    let aliases = design.selection().aliases();
    let n = design.trial_count();
    let half = (n / 2) as f64;

    let rows: Vec<(&[i8], f64)> = design
        .trials()
        .iter()
        .map(|t| {
            let coded = t.coded.as_deref().expect("two-level designs carry codings");
            let y = exp
                .responses()
                .get(t.run_order)
                .expect("attach_responses verified completeness");
            (coded, y)
        })
        .collect();

    let grand_mean = exact_sum(rows.iter().map(|&(_, y)| y)) / n as f64;

    let effects = enumerate_terms(&aliases)
        .into_iter()
        .map(|term| {
            let indices: Vec<usize> = term
                .aliases()
                .iter()
                .map(|&a| aliases.iter().position(|&x| x == a).expect("term aliases come from the design"))
                .collect();
            // mean(+) - mean(-) over a balanced column equals the signed sum
            // divided by half the trials; summed exactly for order independence.
            let contrast = exact_sum(rows.iter().map(|&(coded, y)| {
                let sign: i32 = indices.iter().map(|&i| coded[i] as i32).product();
                sign as f64 * y
            }));
            let estimate = contrast / half;
            EffectEstimate {
                term,
                estimate,
                abs_estimate: estimate.abs(),
            }
        })
        .collect();

    Ok((grand_mean, effects))
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Lenth's pseudo-standard error of a set of effects.
///
/// s0 = 1.5 * median(|effects|); PSE = 1.5 * median of the |effects| strictly
/// below 2.5 * s0, or 0 when the trim removes everything.
pub fn lenth_pse(effects: &[EffectEstimate]) -> Result<f64, EffectsError> {
    if effects.is_empty() {
        return Err(EffectsError::EmptyEffects);
    }
    let mut abs: Vec<f64> = effects.iter().map(|e| e.abs_estimate).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).expect("finite effects"));
    let s0 = 1.5 * median_of_sorted(&abs);
    let cutoff = 2.5 * s0;
    let trimmed: Vec<f64> = abs.iter().copied().filter(|&x| x < cutoff).collect();
    if trimmed.is_empty() {
        return Ok(0.0);
    }
    Ok(1.5 * median_of_sorted(&trimmed))
}

/// Lenth's individual margin of error: t(1 - alpha/2, m/3) * PSE with
/// real-valued degrees of freedom m/3.
pub fn lenth_margin(pse: f64, effect_count: usize, alpha: f64) -> Result<f64, EffectsError> {
    if !(pse >= 0.0) {
        return Err(EffectsError::NegativePse(pse));
    }
    if effect_count == 0 {
        return Err(EffectsError::NoEffectCount);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EffectsError::AlphaOutOfRange(alpha));
    }
    let df = effect_count as f64 / 3.0;
    let t = stats::t_quantile(1.0 - alpha / 2.0, df)?;
    Ok(t * pse)
}

/// Runs the whole analysis: effects, PSE, margin of error, significance
/// verdicts, and the descending |effect| ranking behind a Pareto report.
pub fn analyze(exp: &CompletedExperiment, alpha: f64) -> Result<AnalysisReport, EffectsError> {
    let (grand_mean, effects) = estimate_effects(exp)?;
    let pse = lenth_pse(&effects)?;
    let margin_of_error = lenth_margin(pse, effects.len(), alpha)?;

    let significant_terms: BTreeSet<Term> = effects
        .iter()
        .filter(|e| e.abs_estimate > margin_of_error)
        .map(|e| e.term.clone())
        .collect();

    let mut ranking: Vec<Term> = effects.iter().map(|e| e.term.clone()).collect();
    ranking.sort_by(|a, b| {
        let ea = effects.iter().find(|e| &e.term == a).unwrap().abs_estimate;
        let eb = effects.iter().find(|e| &e.term == b).unwrap().abs_estimate;
        eb.partial_cmp(&ea)
            .expect("finite effects")
            .then_with(|| a.cmp(b))
    });

    Ok(AnalysisReport {
        alpha,
        grand_mean,
        unit: exp.design().selection().response().unit().to_string(),
        pse,
        margin_of_error,
        effects,
        ranking,
        significant_terms,
    })
}

/// Formats a float with 17 significant digits; parses back bit-exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a report as the analysis JSON interchange format. Effects are
/// listed in ranking order; numbers carry 17 significant digits so that
/// loading reproduces the report bit for bit.
pub fn report_to_json(report: &AnalysisReport) -> String {
    let mut out = String::from("{\n");
    out.push_str(&format!("  \"alpha\": {},\n", fmt_f64(report.alpha)));
    out.push_str(&format!("  \"grand_mean\": {},\n", fmt_f64(report.grand_mean)));
    out.push_str(&format!(
        "  \"unit\": {},\n",
        serde_json::to_string(&report.unit).expect("string serialization")
    ));
    out.push_str("  \"method\": \"lenth\",\n");
    out.push_str(&format!("  \"pse\": {},\n", fmt_f64(report.pse)));
    out.push_str(&format!(
        "  \"margin_of_error\": {},\n",
        fmt_f64(report.margin_of_error)
    ));
    out.push_str("  \"effects\": [\n");
    let ranked = report.ranked_effects();
    for (i, effect) in ranked.iter().enumerate() {
        out.push_str(&format!(
            "    {{\"term\": \"{}\", \"estimate\": {}, \"abs_estimate\": {}, \"significant\": {}}}{}\n",
            effect.term,
            fmt_f64(effect.estimate),
            fmt_f64(effect.abs_estimate),
            report.significant_terms.contains(&effect.term),
            if i + 1 < ranked.len() { "," } else { "" }
        ));
    }
    out.push_str("  ]\n}\n");
    out
}

/// Parses the analysis JSON format back into a report.
pub fn report_from_json(text: &str) -> Result<AnalysisReport, EffectsError> {
    #[derive(Deserialize)]
    struct EffectRow {
        term: Term,
        estimate: f64,
        abs_estimate: f64,
        significant: bool,
    }
    #[derive(Deserialize)]
    struct Doc {
        alpha: f64,
        grand_mean: f64,
        unit: String,
        method: String,
        pse: f64,
        margin_of_error: f64,
        effects: Vec<EffectRow>,
    }

    let doc: Doc = serde_json::from_str(text).map_err(|e| EffectsError::Json(e.to_string()))?;
    if doc.method != "lenth" {
        return Err(EffectsError::Json(format!(
            "unsupported method `{}`",
            doc.method
        )));
    }
    let ranking: Vec<Term> = doc.effects.iter().map(|e| e.term.clone()).collect();
    let significant_terms: BTreeSet<Term> = doc
        .effects
        .iter()
        .filter(|e| e.significant)
        .map(|e| e.term.clone())
        .collect();
    let mut effects: Vec<EffectEstimate> = doc
        .effects
        .into_iter()
        .map(|e| EffectEstimate {
            term: e.term,
            estimate: e.estimate,
            abs_estimate: e.abs_estimate,
        })
        .collect();
    effects.sort_by(|a, b| {
        a.term
            .len()
            .cmp(&b.term.len())
            .then_with(|| a.term.cmp(&b.term))
    });
    Ok(AnalysisReport {
        alpha: doc.alpha,
        grand_mean: doc.grand_mean,
        unit: doc.unit,
        pse: doc.pse,
        margin_of_error: doc.margin_of_error,
        effects,
        ranking,
        significant_terms,
    })
}
