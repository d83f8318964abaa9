//! Full-factorial design generation with ±1 codings and seeded run-order
//! randomization.
//!
//! Standard order is Yates order: the first input factor (alias A) varies
//! fastest. Two-level factors are coded first-listed level = -1, second = +1.
//! Randomization draws a uniform permutation of run orders by Fisher-Yates
//! over a ChaCha8 stream seeded with the given seed; the permutation is
//! stable for a given seed and trial count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::catalog::ValidatedSelection;

/// Designs larger than this many trials (including replicates) are refused.
pub const MAX_TRIALS: u64 = 1 << 20;

/// One experimental trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    /// Position in standard (Yates) order, 1-based within one replicate.
    pub std_order: u32,
    /// Position in the execution sequence, 1-based over the whole design.
    pub run_order: u32,
    /// Which replicate this trial belongs to, 1-based.
    pub replicate: u32,
    /// Level label per input factor, in selection order.
    pub assignment: Vec<String>,
    /// ±1 coding per input factor; present iff every factor has two levels.
    pub coded: Option<Vec<i8>>,
}

/// An ordered set of trials over a validated selection.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    selection: ValidatedSelection,
    trials: Vec<Trial>, // sorted by run_order
    replicates: u32,
    seed: Option<u64>,
}

impl DesignMatrix {
    pub fn selection(&self) -> &ValidatedSelection {
        &self.selection
    }

    /// Trials in ascending run order.
    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn replicates(&self) -> u32 {
        self.replicates
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn trial_count(&self) -> usize {
        self.trials.len()
    }

    /// Level combinations per replicate.
    pub fn combination_count(&self) -> usize {
        self.trials.len() / self.replicates as usize
    }

    pub fn is_two_level(&self) -> bool {
        self.selection.is_two_level()
    }

    /// Sets the recorded randomization seed without altering trials.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("replicates must be at least 1")]
    InvalidReplicates,
    #[error("design would have {0} trials, more than the {MAX_TRIALS} supported")]
    TooLarge(u64),
    #[error("coded values need exactly 2 levels, got {0}")]
    NotTwoLevel(usize),
    #[error("label `{label}` is not a level of this factor")]
    UnknownLabel { label: String },
    #[error("CSV header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("CSV row {line}: {detail}")]
    RowFormat { line: usize, detail: String },
    #[error("CSV has {rows} data rows; expected a positive multiple of {combos} combinations")]
    RowCountMismatch { rows: usize, combos: usize },
    #[error("run_order values are not a permutation of 1..={n}: {detail}")]
    NonPermutation { n: usize, detail: String },
    #[error("CSV row {line}: {detail}")]
    InconsistentRow { line: usize, detail: String },
}

/// ±1 coding for a two-level factor: first-listed level is -1, second is +1.
pub fn coded_value(levels: &[String], label: &str) -> Result<i8, DesignError> {
    if levels.len() != 2 {
        return Err(DesignError::NotTwoLevel(levels.len()));
    }
    if label == levels[0] {
        Ok(-1)
    } else if label == levels[1] {
        Ok(1)
    } else {
        Err(DesignError::UnknownLabel {
            label: label.to_string(),
        })
    }
}

/// Enumerates the full cartesian product of levels, `replicates` times, in
/// standard (Yates) order with run_order initialized to position.
pub fn full_factorial(
    selection: &ValidatedSelection,
    replicates: u32,
) -> Result<DesignMatrix, DesignError> {
    if replicates < 1 {
        return Err(DesignError::InvalidReplicates);
    }
    let combos = selection
        .combination_count()
        .filter(|&c| c <= MAX_TRIALS)
        .ok_or(DesignError::TooLarge(u64::MAX))?;
    let total = combos
        .checked_mul(replicates as u64)
        .filter(|&t| t <= MAX_TRIALS)
        .ok_or_else(|| DesignError::TooLarge(combos.saturating_mul(replicates as u64)))?;

    let two_level = selection.is_two_level();
    let level_counts: Vec<usize> = selection.inputs().iter().map(|i| i.levels().len()).collect();

    let mut trials = Vec::with_capacity(total as usize);
    for replicate in 1..=replicates {
        for std_index in 0..combos {
            // Factor A varies fastest: index = (std / stride) % count.
            let mut stride = 1u64;
            let mut assignment = Vec::with_capacity(level_counts.len());
            let mut coded = two_level.then(|| Vec::with_capacity(level_counts.len()));
            for (input, &count) in selection.inputs().iter().zip(&level_counts) {
                let level_index = ((std_index / stride) % count as u64) as usize;
                assignment.push(input.levels()[level_index].clone());
                if let Some(coded) = coded.as_mut() {
                    coded.push(if level_index == 0 { -1 } else { 1 });
                }
                stride *= count as u64;
            }
            trials.push(Trial {
                std_order: (std_index + 1) as u32,
                run_order: ((replicate as u64 - 1) * combos + std_index + 1) as u32,
                replicate,
                assignment,
                coded,
            });
        }
    }

    Ok(DesignMatrix {
        selection: selection.clone(),
        trials,
        replicates,
        seed: None,
    })
}

/// Returns a copy of the design whose run orders carry a fresh uniformly
/// drawn permutation. Standard order, assignments, and codings are untouched;
/// the same seed on the same design reproduces the same permutation.
pub fn randomize_run_order(design: &DesignMatrix, seed: u64) -> DesignMatrix {
    let n = design.trials.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<u32> = (1..=n as u32).collect();
    // Fisher-Yates from the top.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }

    let mut trials: Vec<Trial> = design
        .trials
        .iter()
        .enumerate()
        .map(|(k, t)| Trial {
            run_order: perm[k],
            ..t.clone()
        })
        .collect();
    trials.sort_by_key(|t| t.run_order);

    DesignMatrix {
        selection: design.selection.clone(),
        trials,
        replicates: design.replicates,
        seed: Some(seed),
    }
}

fn csv_header(selection: &ValidatedSelection) -> String {
    let mut header = String::from("std_order,run_order,replicate");
    for input in selection.inputs() {
        header.push(',');
        header.push(input.alias());
        header.push(':');
        header.push_str(&input.def().name);
    }
    header
}

/// Renders the design as CSV: `std_order,run_order,replicate,<alias:name>...`,
/// rows sorted by run order, level labels verbatim.
pub fn design_to_csv(design: &DesignMatrix) -> String {
    let mut out = csv_header(design.selection());
    out.push('\n');
    for t in design.trials() {
        out.push_str(&format!("{},{},{}", t.std_order, t.run_order, t.replicate));
        for label in &t.assignment {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
    }
    out
}

/// Parses a design CSV against a selection, rebuilding codings and verifying
/// that the rows form complete replicates in a valid run-order permutation.
pub fn design_from_csv(
    text: &str,
    selection: &ValidatedSelection,
) -> Result<DesignMatrix, DesignError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DesignError::HeaderMismatch {
        expected: csv_header(selection),
        found: String::new(),
    })?;
    let expected_header = csv_header(selection);
    if header != expected_header {
        return Err(DesignError::HeaderMismatch {
            expected: expected_header,
            found: header.to_string(),
        });
    }

    let k = selection.inputs().len();
    let combos = selection
        .combination_count()
        .filter(|&c| c <= MAX_TRIALS)
        .ok_or(DesignError::TooLarge(u64::MAX))? as usize;

    let mut trials = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + k {
            return Err(DesignError::RowFormat {
                line: lineno,
                detail: format!("expected {} fields, found {}", 3 + k, fields.len()),
            });
        }
        let parse_u32 = |s: &str, what: &str| {
            s.parse::<u32>().map_err(|_| DesignError::RowFormat {
                line: lineno,
                detail: format!("{what} `{s}` is not a positive integer"),
            })
        };
        let std_order = parse_u32(fields[0], "std_order")?;
        let run_order = parse_u32(fields[1], "run_order")?;
        let replicate = parse_u32(fields[2], "replicate")?;
        let assignment: Vec<String> = fields[3..].iter().map(|s| s.to_string()).collect();

        // std_order pins the Yates position; the labels must agree with it.
        if std_order < 1 || std_order as usize > combos {
            return Err(DesignError::InconsistentRow {
                line: lineno,
                detail: format!("std_order {std_order} outside 1..={combos}"),
            });
        }
        let std_index = (std_order - 1) as u64;
        let mut stride = 1u64;
        let mut coded = selection.is_two_level().then(Vec::new);
        for (j, input) in selection.inputs().iter().enumerate() {
            let count = input.levels().len() as u64;
            let expected_level = &input.levels()[((std_index / stride) % count) as usize];
            if &assignment[j] != expected_level {
                return Err(DesignError::InconsistentRow {
                    line: lineno,
                    detail: format!(
                        "factor {} has label `{}` but std_order {} implies `{}`",
                        input.alias(),
                        assignment[j],
                        std_order,
                        expected_level
                    ),
                });
            }
            if let Some(coded) = coded.as_mut() {
                coded.push(coded_value(input.levels(), &assignment[j])?);
            }
            stride *= count;
        }

        trials.push(Trial {
            std_order,
            run_order,
            replicate,
            assignment,
            coded,
        });
    }

    let n = trials.len();
    if n == 0 || n % combos != 0 {
        return Err(DesignError::RowCountMismatch { rows: n, combos });
    }
    let replicates = (n / combos) as u32;

    let mut seen_run = vec![false; n];
    for t in &trials {
        let idx = t.run_order as usize;
        if idx < 1 || idx > n {
            return Err(DesignError::NonPermutation {
                n,
                detail: format!("run_order {} out of range", t.run_order),
            });
        }
        if seen_run[idx - 1] {
            return Err(DesignError::NonPermutation {
                n,
                detail: format!("run_order {} appears more than once", t.run_order),
            });
        }
        seen_run[idx - 1] = true;
    }

    // Each replicate must hold each standard-order position exactly once.
    let mut std_seen = vec![false; n];
    for t in &trials {
        if t.replicate < 1 || t.replicate > replicates {
            return Err(DesignError::InconsistentRow {
                line: 0,
                detail: format!("replicate {} outside 1..={replicates}", t.replicate),
            });
        }
        let slot = (t.replicate as usize - 1) * combos + (t.std_order as usize - 1);
        if std_seen[slot] {
            return Err(DesignError::InconsistentRow {
                line: 0,
                detail: format!(
                    "std_order {} appears more than once in replicate {}",
                    t.std_order, t.replicate
                ),
            });
        }
        std_seen[slot] = true;
    }

    trials.sort_by_key(|t| t.run_order);
    Ok(DesignMatrix {
        selection: selection.clone(),
        trials,
        replicates,
        seed: None,
    })
}
