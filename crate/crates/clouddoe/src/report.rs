//! Deterministic report rendering: fixed-width text, effects CSV, and an SVG
//! Pareto chart of |effects| with the significance reference line.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::effects::{AnalysisReport, Term};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("a Pareto chart needs at least one bar")]
    EmptyChart,
}

/// Data behind the Pareto plot: bars in ranking order plus the reference line.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoChart {
    pub title: String,
    pub unit: String,
    /// (term, |estimate|) pairs, descending.
    pub bars: Vec<(Term, f64)>,
    pub reference_line: f64,
    pub significant: BTreeSet<Term>,
}

impl ParetoChart {
    pub fn from_report(report: &AnalysisReport, title: impl Into<String>) -> ParetoChart {
        ParetoChart {
            title: title.into(),
            unit: report.unit.clone(),
            bars: report
                .ranked_effects()
                .iter()
                .map(|e| (e.term.clone(), e.abs_estimate))
                .collect(),
            reference_line: report.margin_of_error,
            significant: report.significant_terms.clone(),
        }
    }
}

/// Fixed-width table of effects in ranking order, with footer lines for the
/// grand mean, PSE, margin of error, and alpha. Byte-for-byte deterministic.
pub fn render_text(report: &AnalysisReport) -> String {
    let term_width = report
        .effects
        .iter()
        .map(|e| e.term.to_string().len())
        .max()
        .unwrap_or(1)
        .max("term".len());

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<term_width$}  {:>12}  {:>12}  significant",
        "term", "estimate", "|estimate|"
    );
    let _ = writeln!(
        out,
        "{:-<term_width$}  {:->12}  {:->12}  -----------",
        "", "", ""
    );
    for effect in report.ranked_effects() {
        let marker = if report.significant_terms.contains(&effect.term) {
            "*"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "{:<term_width$}  {:>12.4}  {:>12.4}  {}",
            effect.term.to_string(),
            effect.estimate,
            effect.abs_estimate,
            marker
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "grand mean: {:.4} {}", report.grand_mean, report.unit);
    let _ = writeln!(out, "pse: {:.4} {}", report.pse, report.unit);
    let _ = writeln!(
        out,
        "margin of error: {:.4} {} (alpha = {})",
        report.margin_of_error, report.unit, report.alpha
    );
    if report.significant_terms.is_empty() {
        let _ = writeln!(out, "significant terms: none");
    } else {
        let terms: Vec<String> = report
            .ranking
            .iter()
            .filter(|t| report.significant_terms.contains(t))
            .map(|t| t.to_string())
            .collect();
        let _ = writeln!(out, "significant terms: {}", terms.join(", "));
    }
    out
}

/// Effects table as CSV, rows in ranking order.
pub fn render_effects_csv(report: &AnalysisReport) -> String {
    let mut out = String::from("term,estimate,abs_estimate,significant\n");
    for effect in report.ranked_effects() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            effect.term,
            effect.estimate,
            effect.abs_estimate,
            report.significant_terms.contains(&effect.term)
        );
    }
    out
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 56.0;
const BAR_WIDTH: f64 = 44.0;
const BAR_GAP: f64 = 18.0;
const PLOT_HEIGHT: f64 = 280.0;

/// Renders the chart as a standalone SVG document: one bar per term in
/// ranking order, heights proportional to |estimate|, and a horizontal red
/// reference line at the margin of error. Significant bars are red, the rest
/// gray. Output is deterministic for a given chart.
pub fn render_svg_pareto(chart: &ParetoChart) -> Result<String, ReportError> {
    if chart.bars.is_empty() {
        return Err(ReportError::EmptyChart);
    }
    let n = chart.bars.len();
    let width = MARGIN_LEFT + MARGIN_RIGHT + n as f64 * BAR_WIDTH + (n + 1) as f64 * BAR_GAP;
    let height = MARGIN_TOP + PLOT_HEIGHT + MARGIN_BOTTOM;
    let baseline = MARGIN_TOP + PLOT_HEIGHT;

    let max_bar = chart.bars.iter().map(|(_, v)| *v).fold(0.0, f64::max);
    let mut scale_max = max_bar.max(chart.reference_line) * 1.08;
    if scale_max <= 0.0 {
        scale_max = 1.0;
    }
    let y_of = |v: f64| baseline - PLOT_HEIGHT * v / scale_max;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"##
    );
    let _ = writeln!(
        svg,
        r##"  <rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="#ffffff"/>"##
    );
    let _ = writeln!(
        svg,
        r##"  <text x="{:.2}" y="24" font-family="monospace" font-size="15" text-anchor="middle">{}</text>"##,
        width / 2.0,
        xml_escape(&chart.title)
    );

    // Y axis with five ticks.
    let _ = writeln!(
        svg,
        r##"  <line x1="{MARGIN_LEFT:.2}" y1="{MARGIN_TOP:.2}" x2="{MARGIN_LEFT:.2}" y2="{baseline:.2}" stroke="#000000" stroke-width="1"/>"##
    );
    for i in 0..=4 {
        let value = scale_max * i as f64 / 4.0;
        let y = y_of(value);
        let _ = writeln!(
            svg,
            r##"  <line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_LEFT:.2}" y2="{y:.2}" stroke="#000000" stroke-width="1"/>"##,
            MARGIN_LEFT - 4.0
        );
        let _ = writeln!(
            svg,
            r##"  <text x="{:.2}" y="{:.2}" font-family="monospace" font-size="11" text-anchor="end">{value:.2}</text>"##,
            MARGIN_LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r##"  <text x="16" y="{:.2}" font-family="monospace" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">|effect| ({})</text>"##,
        MARGIN_TOP + PLOT_HEIGHT / 2.0,
        MARGIN_TOP + PLOT_HEIGHT / 2.0,
        xml_escape(&chart.unit)
    );

    // Baseline.
    let _ = writeln!(
        svg,
        r##"  <line x1="{MARGIN_LEFT:.2}" y1="{baseline:.2}" x2="{:.2}" y2="{baseline:.2}" stroke="#000000" stroke-width="1"/>"##,
        width - MARGIN_RIGHT
    );

    for (i, (term, value)) in chart.bars.iter().enumerate() {
        let x = MARGIN_LEFT + BAR_GAP + i as f64 * (BAR_WIDTH + BAR_GAP);
        let top = y_of(*value);
        let bar_height = baseline - top;
        let fill = if chart.significant.contains(term) {
            "#d62728"
        } else {
            "#8c8c8c"
        };
        let _ = writeln!(
            svg,
            r##"  <rect x="{x:.2}" y="{top:.2}" width="{BAR_WIDTH:.2}" height="{bar_height:.2}" fill="{fill}"/>"##
        );
        let _ = writeln!(
            svg,
            r##"  <text x="{:.2}" y="{:.2}" font-family="monospace" font-size="12" text-anchor="middle">{}</text>"##,
            x + BAR_WIDTH / 2.0,
            baseline + 16.0,
            xml_escape(&term.to_string())
        );
        let _ = writeln!(
            svg,
            r##"  <text x="{:.2}" y="{:.2}" font-family="monospace" font-size="10" text-anchor="middle">{value:.2}</text>"##,
            x + BAR_WIDTH / 2.0,
            top - 4.0
        );
    }

    // Significance reference line.
    let ref_y = y_of(chart.reference_line);
    let _ = writeln!(
        svg,
        r##"  <line x1="{MARGIN_LEFT:.2}" y1="{ref_y:.2}" x2="{:.2}" y2="{ref_y:.2}" stroke="#d62728" stroke-width="1.5"/>"##,
        width - MARGIN_RIGHT
    );
    let _ = writeln!(
        svg,
        r##"  <text x="{:.2}" y="{:.2}" font-family="monospace" font-size="11" text-anchor="end" fill="#d62728">ME = {:.2}</text>"##,
        width - MARGIN_RIGHT - 4.0,
        ref_y - 6.0,
        chart.reference_line
    );

    svg.push_str("</svg>\n");
    Ok(svg)
}
