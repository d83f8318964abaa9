//! Command-line driver for the clouddoe toolkit.
//!
//! Exit codes: 0 on success, 1 on domain or validation errors, 2 on usage
//! errors. Machine output (`--format json|csv|svg`) goes to stdout;
//! diagnostics go to stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, ColorChoice, Parser, Subcommand, ValueEnum};

use clouddoe::catalog::{
    builtin_catalog, find_factor, list_factors, load_catalog, search_factors, validate_selection,
    Branch, Catalog, FactorDef, FactorFilter, FactorSelection, ResponseChoice, Role,
    SelectedInput, ValidatedSelection,
};
use clouddoe::design::{design_to_csv, full_factorial, randomize_run_order, DesignMatrix};
use clouddoe::effects::{analyze, attach_responses, report_to_json, AnalysisReport, ResultSet};
use clouddoe::report::{render_effects_csv, render_svg_pareto, render_text, ParetoChart};
use clouddoe::runner::{resume_experiment, ExecutorSpec, ResponseModel};
use clouddoe::store::{Status, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
    Svg,
}

impl Format {
    fn name(&self) -> &'static str {
        match self {
            Format::Text => "text",
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Svg => "svg",
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "clouddoe",
    version,
    about = "Design-of-experiments toolkit for cloud service performance evaluation",
    color = ColorChoice::Never
)]
struct Cli {
    /// Experiment workspace directory.
    #[arg(long, global = true, env = "CLOUDDOE_WORKSPACE", value_name = "DIR")]
    workspace: Option<PathBuf>,

    /// Factor catalog file (defaults to the built-in catalog).
    #[arg(long, global = true, value_name = "FILE")]
    catalog: Option<PathBuf>,

    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Inspect the factor catalog.
    Catalog {
        #[command(subcommand)]
        command: CatalogCmd,
    },
    /// Create or inspect an experiment design.
    Design {
        #[command(subcommand)]
        command: DesignCmd,
    },
    /// Execute the design trial by trial through an executor.
    Run(RunArgs),
    /// Ingest a results CSV into the workspace.
    Ingest {
        /// Results CSV file; `-` or omitted reads stdin.
        file: Option<PathBuf>,
    },
    /// Estimate effects and store the analysis.
    Analyze {
        /// Significance level for the reference line.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Render the stored analysis.
    Report,
}

#[derive(Subcommand, Debug)]
enum CatalogCmd {
    /// List factors, optionally filtered.
    List {
        #[arg(long)]
        branch: Option<String>,
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        role: Option<String>,
    },
    /// Show one factor by id or unique name.
    Show { id_or_name: String },
    /// Substring search over ids, names, categories, and notes.
    Search { query: String },
}

#[derive(Subcommand, Debug)]
enum DesignCmd {
    /// Create a workspace with a fresh full-factorial design.
    New(DesignNewArgs),
    /// Print the workspace design.
    Show,
}

#[derive(Args, Debug)]
struct DesignNewArgs {
    /// Experiment name recorded in the manifest.
    #[arg(long)]
    name: String,
    /// Input factor as `<id-or-name>=<level>,<level>[,...]`; repeatable,
    /// aliases A, B, C, ... follow the order given.
    #[arg(long = "factor", value_name = "SPEC", required = true)]
    factors: Vec<String>,
    /// Response factor id or name (must be a capacity factor).
    #[arg(long)]
    response: String,
    /// Response metric name (defaults to the factor name).
    #[arg(long)]
    metric: Option<String>,
    /// Response unit, e.g. MB/s.
    #[arg(long)]
    unit: String,
    /// Full replicates of the design.
    #[arg(long, default_value_t = 1)]
    replicates: u32,
    /// Randomization seed; drawn from OS entropy when omitted.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON file with a synthetic response model.
    #[arg(long, value_name = "FILE", conflicts_with = "command")]
    simulate: Option<PathBuf>,
    /// Command template; `{A}` expands to the trial's level for factor A.
    #[arg(long, value_name = "TEMPLATE")]
    command: Option<String>,
    /// Seconds before an external command is killed.
    #[arg(long, default_value_t = 300.0)]
    timeout: f64,
}

enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    fn domain(e: impl std::fmt::Display) -> CliError {
        CliError::Domain(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

/// Parses argv and runs the command, writing to the given streams.
/// Returns the process exit status.
pub fn cli_dispatch<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{rendered}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{rendered}");
                    2
                }
            };
        }
    };
    match run(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(CliError::Domain(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            2
        }
    }
}

fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult {
    match cli.command {
        Cmd::Catalog { ref command } => {
            let cat = load_selected_catalog(cli.catalog.as_deref())?;
            match command {
                CatalogCmd::List { branch, category, role } => {
                    let filter = FactorFilter {
                        branch: branch
                            .as_deref()
                            .map(|b| b.parse::<Branch>().map_err(CliError::domain))
                            .transpose()?,
                        category: category.clone(),
                        role: role
                            .as_deref()
                            .map(|r| r.parse::<Role>().map_err(CliError::domain))
                            .transpose()?,
                    };
                    let factors = list_factors(&cat, &filter).map_err(CliError::domain)?;
                    emit_factor_list(&factors, cli.format, stdout)
                }
                CatalogCmd::Show { id_or_name } => {
                    let factor = find_factor(&cat, id_or_name).map_err(CliError::domain)?;
                    emit_factor_detail(factor, cli.format, stdout)
                }
                CatalogCmd::Search { query } => {
                    let factors = search_factors(&cat, query);
                    emit_factor_list(&factors, cli.format, stdout)
                }
            }
        }
        Cmd::Design { ref command } => match command {
            DesignCmd::New(args) => {
                let cat = load_selected_catalog(cli.catalog.as_deref())?;
                let dir = require_workspace(&cli)?;
                design_new(&cat, &dir, args, cli.format, stdout, stderr)
            }
            DesignCmd::Show => {
                let ws = open_workspace(&cli)?;
                let design = ws.load_design().map_err(CliError::domain)?;
                emit_design(&design, cli.format, stdout)
            }
        },
        Cmd::Run(ref args) => {
            let mut ws = open_workspace(&cli)?;
            run_trials(&mut ws, args, cli.format, stdout, stderr)
        }
        Cmd::Ingest { ref file } => {
            let mut ws = open_workspace(&cli)?;
            let text = read_input(file.as_deref())?;
            let status = ws.ingest_results(&text).map_err(CliError::domain)?;
            emit_status(status, cli.format, stdout)
        }
        Cmd::Analyze { alpha } => {
            let mut ws = open_workspace(&cli)?;
            let design = ws.load_design().map_err(CliError::domain)?;
            let results = ws
                .load_results()
                .map_err(CliError::domain)?
                .ok_or_else(|| CliError::Domain("no responses ingested yet".to_string()))?;
            let exp = attach_responses(design, results).map_err(CliError::domain)?;
            let report = analyze(&exp, alpha).map_err(CliError::domain)?;
            ws.save_analysis(&report).map_err(CliError::domain)?;
            emit_report(&report, ws.manifest().name.as_str(), cli.format, stdout)
        }
        Cmd::Report => {
            let ws = open_workspace(&cli)?;
            let report = ws
                .load_analysis()
                .map_err(CliError::domain)?
                .ok_or_else(|| {
                    CliError::Domain(
                        "workspace has no analysis; run `clouddoe analyze` first".to_string(),
                    )
                })?;
            emit_report(&report, ws.manifest().name.as_str(), cli.format, stdout)
        }
    }
}

fn load_selected_catalog(path: Option<&Path>) -> Result<Catalog, CliError> {
    match path {
        None => Ok(builtin_catalog()),
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| {
                CliError::Domain(format!("cannot open catalog `{}`: {e}", path.display()))
            })?;
            load_catalog(file).map_err(CliError::domain)
        }
    }
}

fn require_workspace(cli: &Cli) -> Result<PathBuf, CliError> {
    cli.workspace.clone().ok_or_else(|| {
        CliError::Usage(
            "a workspace directory is required; pass --workspace or set CLOUDDOE_WORKSPACE"
                .to_string(),
        )
    })
}

fn open_workspace(cli: &Cli) -> Result<Workspace, CliError> {
    let dir = require_workspace(cli)?;
    Workspace::open(&dir).map_err(CliError::domain)
}

fn read_input(file: Option<&Path>) -> Result<String, CliError> {
    match file {
        Some(path) if path.as_os_str() != "-" => fs::read_to_string(path)
            .map_err(|e| CliError::Domain(format!("cannot read `{}`: {e}", path.display()))),
        _ => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| CliError::Domain(format!("cannot read stdin: {e}")))?;
            Ok(buf)
        }
    }
}

fn parse_factor_spec(catalog: &Catalog, spec: &str) -> Result<(String, Vec<String>), CliError> {
    let (id_or_name, levels) = spec.split_once('=').ok_or_else(|| {
        CliError::Usage(format!(
            "factor spec `{spec}` must look like <id-or-name>=<level>,<level>"
        ))
    })?;
    let def = find_factor(catalog, id_or_name).map_err(CliError::domain)?;
    let levels: Vec<String> = levels.split(',').map(|s| s.to_string()).collect();
    Ok((def.id.clone(), levels))
}

fn build_selection(
    catalog: &Catalog,
    args: &DesignNewArgs,
    stderr: &mut dyn Write,
) -> Result<ValidatedSelection, CliError> {
    let mut inputs = Vec::new();
    for (i, spec) in args.factors.iter().enumerate() {
        let (factor_id, levels) = parse_factor_spec(catalog, spec)?;
        inputs.push(SelectedInput {
            factor_id,
            alias: (b'A' + i as u8) as char,
            levels,
        });
    }
    let response_def = find_factor(catalog, &args.response).map_err(CliError::domain)?;
    let selection = FactorSelection {
        inputs,
        response: Some(ResponseChoice {
            factor_id: response_def.id.clone(),
            metric_name: args
                .metric
                .clone()
                .unwrap_or_else(|| response_def.name.clone()),
            unit: args.unit.clone(),
        }),
    };
    validate_selection(catalog, &selection).map_err(|violations| {
        for v in &violations {
            let _ = writeln!(stderr, "violation: {v}");
        }
        CliError::Domain(format!("selection has {} violation(s)", violations.len()))
    })
}

fn design_new(
    catalog: &Catalog,
    dir: &Path,
    args: &DesignNewArgs,
    format: Format,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CliResult {
    let selection = build_selection(catalog, args, stderr)?;
    let unrandomized = full_factorial(&selection, args.replicates).map_err(CliError::domain)?;
    let seed = args.seed.unwrap_or_else(entropy_seed);
    let design = randomize_run_order(&unrandomized, seed);
    let ws = Workspace::init(dir, &args.name, catalog, &design).map_err(CliError::domain)?;
    let _ = writeln!(
        stderr,
        "workspace initialized at {} ({} trials, seed {seed})",
        ws.dir().display(),
        design.trial_count()
    );
    emit_design(&design, format, stdout)
}

// Seed for unseeded designs; recorded in the manifest for reproducibility.
fn entropy_seed() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    nanos ^ ((std::process::id() as u64) << 32)
}

fn run_trials(
    ws: &mut Workspace,
    args: &RunArgs,
    format: Format,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CliResult {
    let spec = match (&args.simulate, &args.command) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Domain(format!("cannot read model `{}`: {e}", path.display()))
            })?;
            let model: ResponseModel = serde_json::from_str(&text)
                .map_err(|e| CliError::Domain(format!("model `{}`: {e}", path.display())))?;
            ExecutorSpec::Simulated { model }
        }
        (None, Some(template)) => ExecutorSpec::ExternalCommand {
            template: template.clone(),
            timeout_secs: args.timeout,
        },
        _ => {
            return Err(CliError::Usage(
                "exactly one of --simulate or --command is required".to_string(),
            ))
        }
    };

    let design = ws.load_design().map_err(CliError::domain)?;
    let partial = ws
        .load_results()
        .map_err(CliError::domain)?
        .unwrap_or_else(|| ResultSet::new(ws.manifest().response_unit.clone()));
    let already = partial.len();
    let mut executor = spec.build(&design).map_err(CliError::domain)?;

    match resume_experiment(&design, executor.as_mut(), partial) {
        Ok(results) => {
            let executed = results.len() - already;
            let status = ws.store_results(&results).map_err(CliError::domain)?;
            let _ = writeln!(stderr, "executed {executed} trial(s)");
            emit_run_summary(executed, results.len(), status, format, stdout)
        }
        Err(failure) => {
            // Persist whatever completed so a rerun can resume.
            if !failure.partial.is_empty() {
                ws.store_results(&failure.partial).map_err(CliError::domain)?;
            }
            Err(CliError::Domain(failure.to_string()))
        }
    }
}

fn unsupported_format(what: &str, format: Format) -> CliError {
    CliError::Usage(format!(
        "--format {} is not supported for {what}",
        format.name()
    ))
}

fn emit_factor_list(factors: &[&FactorDef], format: Format, stdout: &mut dyn Write) -> CliResult {
    match format {
        Format::Text => {
            let id_width = factors.iter().map(|f| f.id.len()).max().unwrap_or(2).max(2);
            let _ = writeln!(
                stdout,
                "{:<id_width$}  {:<19}  {:<16}  sla",
                "id", "role", "category"
            );
            for f in factors {
                let _ = writeln!(
                    stdout,
                    "{:<id_width$}  {:<19}  {:<16}  {}",
                    f.id,
                    f.role.as_str(),
                    f.category,
                    if f.sla { "yes" } else { "" }
                );
            }
            Ok(())
        }
        Format::Json => {
            let owned: Vec<FactorDef> = factors.iter().map(|f| (*f).clone()).collect();
            let mut text =
                serde_json::to_string_pretty(&owned).expect("factor serialization cannot fail");
            text.push('\n');
            let _ = write!(stdout, "{text}");
            Ok(())
        }
        Format::Csv => {
            let _ = writeln!(stdout, "id,branch,category,name,role,sla");
            for f in factors {
                let _ = writeln!(
                    stdout,
                    "{},{},{},{},{},{}",
                    f.id, f.branch, f.category, f.name, f.role, f.sla
                );
            }
            Ok(())
        }
        Format::Svg => Err(unsupported_format("catalog output", format)),
    }
}

fn emit_factor_detail(factor: &FactorDef, format: Format, stdout: &mut dyn Write) -> CliResult {
    match format {
        Format::Json => {
            let mut text =
                serde_json::to_string_pretty(factor).expect("factor serialization cannot fail");
            text.push('\n');
            let _ = write!(stdout, "{text}");
            Ok(())
        }
        Format::Text => {
            let _ = writeln!(stdout, "id:             {}", factor.id);
            let _ = writeln!(stdout, "branch:         {}", factor.branch);
            let _ = writeln!(stdout, "category:       {}", factor.category);
            let _ = writeln!(stdout, "name:           {}", factor.name);
            let _ = writeln!(stdout, "role:           {}", factor.role);
            let _ = writeln!(stdout, "sla:            {}", factor.sla);
            if let Some(unit) = &factor.unit_hint {
                let _ = writeln!(stdout, "unit hint:      {unit}");
            }
            if !factor.example_levels.is_empty() {
                let _ = writeln!(
                    stdout,
                    "example levels: {}",
                    factor.example_levels.join(", ")
                );
            }
            if !factor.cross_refs.is_empty() {
                let _ = writeln!(stdout, "cross refs:     {}", factor.cross_refs.join(", "));
            }
            if !factor.notes.is_empty() {
                let _ = writeln!(stdout, "notes:          {}", factor.notes);
            }
            Ok(())
        }
        _ => Err(unsupported_format("catalog output", format)),
    }
}

fn emit_design(design: &DesignMatrix, format: Format, stdout: &mut dyn Write) -> CliResult {
    match format {
        Format::Csv => {
            let _ = write!(stdout, "{}", design_to_csv(design));
            Ok(())
        }
        Format::Text => {
            let widths: Vec<usize> = design
                .selection()
                .inputs()
                .iter()
                .map(|i| i.levels().iter().map(|l| l.len()).max().unwrap_or(1))
                .collect();
            let _ = write!(stdout, "{:>9}  {:>9}  {:>9}", "std_order", "run_order", "replicate");
            for (input, w) in design.selection().inputs().iter().zip(&widths) {
                let _ = write!(stdout, "  {:<w$}", input.alias());
            }
            let _ = writeln!(stdout);
            for t in design.trials() {
                let _ = write!(
                    stdout,
                    "{:>9}  {:>9}  {:>9}",
                    t.std_order, t.run_order, t.replicate
                );
                for (label, w) in t.assignment.iter().zip(&widths) {
                    let _ = write!(stdout, "  {:<w$}", label);
                }
                let _ = writeln!(stdout);
            }
            Ok(())
        }
        Format::Json => {
            let trials: Vec<serde_json::Value> = design
                .trials()
                .iter()
                .map(|t| {
                    let assignment: BTreeMap<String, String> = design
                        .selection()
                        .aliases()
                        .iter()
                        .zip(&t.assignment)
                        .map(|(a, l)| (a.to_string(), l.clone()))
                        .collect();
                    serde_json::json!({
                        "std_order": t.std_order,
                        "run_order": t.run_order,
                        "replicate": t.replicate,
                        "assignment": assignment,
                    })
                })
                .collect();
            let doc = serde_json::json!({
                "replicates": design.replicates(),
                "seed": design.seed(),
                "trials": trials,
            });
            let _ = writeln!(
                stdout,
                "{}",
                serde_json::to_string_pretty(&doc).expect("design serialization cannot fail")
            );
            Ok(())
        }
        Format::Svg => Err(unsupported_format("design output", format)),
    }
}

fn emit_status(status: Status, format: Format, stdout: &mut dyn Write) -> CliResult {
    match format {
        Format::Json => {
            let _ = writeln!(stdout, "{{\"status\": \"{status}\"}}");
            Ok(())
        }
        Format::Text => {
            let _ = writeln!(stdout, "status: {status}");
            Ok(())
        }
        _ => Err(unsupported_format("status output", format)),
    }
}

fn emit_run_summary(
    executed: usize,
    total: usize,
    status: Status,
    format: Format,
    stdout: &mut dyn Write,
) -> CliResult {
    match format {
        Format::Json => {
            let _ = writeln!(
                stdout,
                "{{\"executed\": {executed}, \"responses\": {total}, \"status\": \"{status}\"}}"
            );
            Ok(())
        }
        Format::Text => {
            let _ = writeln!(
                stdout,
                "executed {executed} trial(s); {total} response(s) recorded; status: {status}"
            );
            Ok(())
        }
        _ => Err(unsupported_format("run output", format)),
    }
}

fn emit_report(
    report: &AnalysisReport,
    experiment_name: &str,
    format: Format,
    stdout: &mut dyn Write,
) -> CliResult {
    match format {
        Format::Text => {
            let _ = write!(stdout, "{}", render_text(report));
            Ok(())
        }
        Format::Json => {
            let _ = write!(stdout, "{}", report_to_json(report));
            Ok(())
        }
        Format::Csv => {
            let _ = write!(stdout, "{}", render_effects_csv(report));
            Ok(())
        }
        Format::Svg => {
            let chart = ParetoChart::from_report(
                report,
                format!("Pareto plot of effects: {experiment_name}"),
            );
            let svg = render_svg_pareto(&chart).map_err(CliError::domain)?;
            let _ = write!(stdout, "{svg}");
            Ok(())
        }
    }
}
