//! Property tests for effect estimation, checked against independent oracles:
//! a brute-force group-mean contrast, a normal-equations least-squares fit,
//! and a direct-definition Lenth reimplementation.

use std::collections::BTreeMap;

use proptest::prelude::*;

use clouddoe::catalog::{
    builtin_catalog, validate_selection, FactorSelection, ResponseChoice, ValidatedSelection,
};
use clouddoe::design::{full_factorial, randomize_run_order, DesignMatrix};
use clouddoe::effects::{
    analyze, attach_responses, estimate_effects, lenth_pse, CompletedExperiment, EffectEstimate,
    ResultSet, Term,
};

const CONTROLLED_IDS: [&str; 4] = [
    "workload/activity/direction",
    "workload/object/size-complexity",
    "computing-resource/vm-instance/vm-type",
    "workload/activity/frequency",
];

fn two_level_selection(k: usize, flipped: Option<usize>) -> ValidatedSelection {
    let catalog = builtin_catalog();
    let inputs: Vec<(String, Vec<String>)> = (0..k)
        .map(|i| {
            let mut levels = vec![format!("f{i}-lo"), format!("f{i}-hi")];
            if flipped == Some(i) {
                levels.reverse();
            }
            (CONTROLLED_IDS[i].to_string(), levels)
        })
        .collect();
    let selection = FactorSelection::new(
        inputs,
        ResponseChoice {
            factor_id: "capacity/data-throughput".to_string(),
            metric_name: "throughput".to_string(),
            unit: "MB/s".to_string(),
        },
    );
    validate_selection(&catalog, &selection).unwrap()
}

fn experiment_with(design: DesignMatrix, values: &[f64]) -> CompletedExperiment {
    let mut results = ResultSet::new("MB/s");
    for (t, &v) in design.trials().iter().zip(values) {
        results.insert(t.run_order, v).unwrap();
    }
    attach_responses(design, results).unwrap()
}

/// Brute-force oracle: filter the two sign groups and average them naively.
fn oracle_effects(exp: &CompletedExperiment) -> BTreeMap<Term, f64> {
    let design = exp.design();
    let k = design.selection().inputs().len();
    let aliases = design.selection().aliases();
    let mut out = BTreeMap::new();
    for mask in 1u32..(1 << k) {
        let term = Term::new(
            aliases
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &c)| c),
        )
        .unwrap();
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for t in design.trials() {
            let coded = t.coded.as_ref().unwrap();
            let sign: i32 = (0..k)
                .filter(|&i| mask & (1 << i) != 0)
                .map(|i| coded[i] as i32)
                .product();
            let y = exp.responses().get(t.run_order).unwrap();
            if sign > 0 {
                plus.push(y);
            } else {
                minus.push(y);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        out.insert(term, mean(&plus) - mean(&minus));
    }
    out
}

/// Least-squares oracle: solve the normal equations of the full model by
/// Gaussian elimination, without relying on orthogonality.
fn regression_coefficients(exp: &CompletedExperiment) -> BTreeMap<Term, f64> {
    let design = exp.design();
    let k = design.selection().inputs().len();
    let aliases = design.selection().aliases();
    let n = design.trial_count();
    let p = 1usize << k; // intercept plus every term

    let mut x = vec![vec![0.0f64; p]; n];
    let mut y = vec![0.0f64; n];
    for (row, t) in design.trials().iter().enumerate() {
        let coded = t.coded.as_ref().unwrap();
        for (col, mask) in (0u32..(1 << k)).enumerate() {
            let sign: i32 = (0..k)
                .filter(|&i| mask & (1 << i) != 0)
                .map(|i| coded[i] as i32)
                .product();
            x[row][col] = sign as f64;
        }
        y[row] = exp.responses().get(t.run_order).unwrap();
    }

    // Normal equations: (X^T X) beta = X^T y.
    let mut a = vec![vec![0.0f64; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            a[i][j] = (0..n).map(|r| x[r][i] * x[r][j]).sum();
        }
        a[i][p] = (0..n).map(|r| x[r][i] * y[r]).sum();
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let diag = a[col][col];
        assert!(diag.abs() > 1e-12, "design matrix is singular");
        for row in 0..p {
            if row == col {
                continue;
            }
            let factor = a[row][col] / diag;
            for j in col..=p {
                a[row][j] -= factor * a[col][j];
            }
        }
    }

    let mut out = BTreeMap::new();
    for (col, mask) in (0u32..(1 << k)).enumerate() {
        if mask == 0 {
            continue;
        }
        let term = Term::new(
            aliases
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << *i as u32) != 0)
                .map(|(_, &c)| c),
        )
        .unwrap();
        out.insert(term, a[col][p] / a[col][col]);
    }
    out
}

/// Direct-definition Lenth reimplementation, kept independent of the library.
fn oracle_lenth_pse(magnitudes: &[f64]) -> f64 {
    fn median(values: &[f64]) -> f64 {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        }
    }
    let s0 = 1.5 * median(magnitudes);
    let kept: Vec<f64> = magnitudes.iter().copied().filter(|&m| m < 2.5 * s0).collect();
    if kept.is_empty() {
        0.0
    } else {
        1.5 * median(&kept)
    }
}

fn as_effects(values: &[f64]) -> Vec<EffectEstimate> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| EffectEstimate {
            // Distinct single-letter or multi-letter terms; identity is
            // irrelevant to the PSE, only the magnitudes matter.
            term: Term::new(std::iter::once((b'A' + (i % 26) as u8) as char)
                .chain(std::iter::repeat_n('Z', i / 26)))
            .unwrap(),
            estimate: v,
            abs_estimate: v.abs(),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn effects_match_brute_force_contrast_oracle(
        k in 1usize..=4,
        seed in any::<u64>(),
        raw in prop::collection::vec(-100.0f64..100.0, 48),
    ) {
        let selection = two_level_selection(k, None);
        let design = randomize_run_order(&full_factorial(&selection, 1).unwrap(), seed);
        let exp = experiment_with(design, &raw[..1 << k]);
        let (_, effects) = estimate_effects(&exp).unwrap();
        let oracle = oracle_effects(&exp);
        prop_assert_eq!(effects.len(), (1 << k) - 1);
        for e in &effects {
            let expected = oracle[&e.term];
            prop_assert!((e.estimate - expected).abs() < 1e-9,
                "term {} estimate {} oracle {}", e.term, e.estimate, expected);
        }
    }

    #[test]
    fn effects_equal_twice_the_regression_coefficients(
        k in 1usize..=4,
        raw in prop::collection::vec(-100.0f64..100.0, 48),
    ) {
        let selection = two_level_selection(k, None);
        let design = full_factorial(&selection, 1).unwrap();
        let exp = experiment_with(design, &raw[..1 << k]);
        let (grand_mean, effects) = estimate_effects(&exp).unwrap();
        let coeffs = regression_coefficients(&exp);
        for e in &effects {
            let beta = coeffs[&e.term];
            prop_assert!((e.estimate - 2.0 * beta).abs() < 1e-9,
                "term {} estimate {} regression {}", e.term, e.estimate, 2.0 * beta);
        }
        // The intercept of the orthogonal fit is the grand mean.
        let naive_mean = exp.responses().iter().map(|(_, v)| v).sum::<f64>() / (1 << k) as f64;
        prop_assert!((grand_mean - naive_mean).abs() < 1e-9);
    }

    #[test]
    fn lenth_pse_equals_direct_definition(
        values in prop::collection::vec(-50.0f64..50.0, 1..=31),
    ) {
        let effects = as_effects(&values);
        let magnitudes: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        prop_assert_eq!(lenth_pse(&effects).unwrap(), oracle_lenth_pse(&magnitudes));
    }

    #[test]
    fn level_flip_negates_exactly_the_terms_containing_the_factor(
        k in 1usize..=4,
        flip_raw in any::<usize>(),
        raw in prop::collection::vec(-100.0f64..100.0, 48),
    ) {
        let flip = flip_raw % k;
        let base_sel = two_level_selection(k, None);
        let flip_sel = two_level_selection(k, Some(flip));
        let flipped_alias = flip_sel.aliases()[flip];

        let base_design = full_factorial(&base_sel, 1).unwrap();
        let flip_design = full_factorial(&flip_sel, 1).unwrap();

        // The same physical measurements, keyed by assignment.
        let by_assignment: BTreeMap<Vec<String>, f64> = base_design
            .trials()
            .iter()
            .zip(&raw[..1 << k])
            .map(|(t, &v)| (t.assignment.clone(), v))
            .collect();

        let base_exp = experiment_with(base_design, &raw[..1 << k]);
        let flip_values: Vec<f64> = flip_design
            .trials()
            .iter()
            .map(|t| by_assignment[&t.assignment])
            .collect();
        let flip_exp = experiment_with(flip_design, &flip_values);

        let base_report = analyze(&base_exp, 0.05).unwrap();
        let flip_report = analyze(&flip_exp, 0.05).unwrap();

        // Exact sign covariance, thanks to exactly rounded contrasts.
        for e in &base_report.effects {
            let other = flip_report.effect(&e.term).unwrap();
            if e.term.contains(flipped_alias) {
                prop_assert_eq!(other.estimate, -e.estimate);
            } else {
                prop_assert_eq!(other.estimate, e.estimate);
            }
            prop_assert_eq!(other.abs_estimate, e.abs_estimate);
        }
        prop_assert_eq!(&flip_report.ranking, &base_report.ranking);
        prop_assert_eq!(flip_report.pse, base_report.pse);
        prop_assert_eq!(flip_report.margin_of_error, base_report.margin_of_error);
        prop_assert_eq!(&flip_report.significant_terms, &base_report.significant_terms);
        prop_assert_eq!(flip_report.grand_mean, base_report.grand_mean);
    }

    #[test]
    fn power_of_two_scaling_is_exact(
        k in 1usize..=3,
        exponent in -2i32..=3,
        raw in prop::collection::vec(-100.0f64..100.0, 16),
    ) {
        let c = (2.0f64).powi(exponent);
        let selection = two_level_selection(k, None);
        let design = full_factorial(&selection, 1).unwrap();
        let values = &raw[..1 << k];
        let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();

        let base = analyze(&experiment_with(design.clone(), values), 0.05).unwrap();
        let scaled = analyze(&experiment_with(design, &scaled), 0.05).unwrap();

        prop_assert_eq!(scaled.grand_mean, base.grand_mean * c);
        for e in &base.effects {
            prop_assert_eq!(scaled.effect(&e.term).unwrap().estimate, e.estimate * c);
        }
        prop_assert_eq!(scaled.pse, base.pse * c);
        prop_assert_eq!(scaled.margin_of_error, base.margin_of_error * c);
        prop_assert_eq!(&scaled.significant_terms, &base.significant_terms);
        prop_assert_eq!(&scaled.ranking, &base.ranking);
    }

    #[test]
    fn general_scaling_is_proportional(
        k in 1usize..=3,
        c in 0.1f64..10.0,
        raw in prop::collection::vec(-100.0f64..100.0, 16),
    ) {
        let selection = two_level_selection(k, None);
        let design = full_factorial(&selection, 1).unwrap();
        let values = &raw[..1 << k];
        let scaled_values: Vec<f64> = values.iter().map(|v| v * c).collect();

        let base = analyze(&experiment_with(design.clone(), values), 0.05).unwrap();
        let scaled = analyze(&experiment_with(design, &scaled_values), 0.05).unwrap();

        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        prop_assert!(close(scaled.grand_mean, base.grand_mean * c));
        for e in &base.effects {
            prop_assert!(close(scaled.effect(&e.term).unwrap().estimate, e.estimate * c));
        }
        prop_assert!(close(scaled.pse, base.pse * c));
        prop_assert!(close(scaled.margin_of_error, base.margin_of_error * c));
        // Significance verdicts stay put unless an effect grazes the line.
        let boundary = base.effects.iter().any(|e| {
            base.margin_of_error > 0.0
                && (e.abs_estimate / base.margin_of_error - 1.0).abs() < 1e-9
        });
        if !boundary {
            prop_assert_eq!(&scaled.significant_terms, &base.significant_terms);
        }
    }

    #[test]
    fn duplicating_every_response_leaves_effects_unchanged(
        k in 1usize..=3,
        raw in prop::collection::vec(-100.0f64..100.0, 16),
    ) {
        let selection = two_level_selection(k, None);
        let single = full_factorial(&selection, 1).unwrap();
        let doubled = full_factorial(&selection, 2).unwrap();
        let values = &raw[..1 << k];

        // replicate 2 repeats the same standard order, so responses repeat.
        let mut doubled_values = values.to_vec();
        doubled_values.extend_from_slice(values);

        let base = estimate_effects(&experiment_with(single, values)).unwrap();
        let twice = estimate_effects(&experiment_with(doubled, &doubled_values)).unwrap();

        prop_assert_eq!(base.0, twice.0);
        for (a, b) in base.1.iter().zip(&twice.1) {
            prop_assert_eq!(&a.term, &b.term);
            prop_assert_eq!(a.estimate, b.estimate);
        }
    }
}

#[test]
fn lenth_pse_oracle_agreement_on_edge_vectors() {
    // All-zero and single-element vectors, which exercise the trim edge cases.
    let zero = as_effects(&[0.0, 0.0, 0.0, 0.0]);
    assert_eq!(lenth_pse(&zero).unwrap(), oracle_lenth_pse(&[0.0, 0.0, 0.0, 0.0]));
    assert_eq!(lenth_pse(&zero).unwrap(), 0.0);

    let single = as_effects(&[-3.25]);
    assert_eq!(lenth_pse(&single).unwrap(), oracle_lenth_pse(&[3.25]));
    assert_eq!(lenth_pse(&single).unwrap(), 1.5 * 3.25);
}
