//! Factor catalog: the tree-structured framework of experimental factors for
//! cloud service performance evaluation, plus validation of factor selections.
//!
//! Factors live on three branches. Workload and computing-resource factors are
//! experiment inputs; capacity factors are measurable outputs and supply the
//! response of a design. The built-in catalog is immutable reference data;
//! custom catalogs load from JSON (see [`load_catalog`]).

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three branches of the factor tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "workload")]
    Workload,
    #[serde(rename = "computing-resource")]
    ComputingResource,
    #[serde(rename = "capacity")]
    Capacity,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Workload => "workload",
            Branch::ComputingResource => "computing-resource",
            Branch::Capacity => "capacity",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Branch {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "workload" => Ok(Branch::Workload),
            "computing-resource" | "computingresource" | "resource" => {
                Ok(Branch::ComputingResource)
            }
            "capacity" => Ok(Branch::Capacity),
            _ => Err(CatalogError::UnknownBranch(s.to_string())),
        }
    }
}

/// How a factor participates in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// An input the evaluator sets to chosen levels.
    #[serde(rename = "controlled-input")]
    ControlledInput,
    /// An input that varies but cannot be set by the evaluator.
    #[serde(rename = "observational-input")]
    ObservationalInput,
    /// A measurable output; candidate response of a design.
    #[serde(rename = "response")]
    Response,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::ControlledInput => "controlled-input",
            Role::ObservationalInput => "observational-input",
            Role::Response => "response",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "controlled-input" | "input" | "controlled" => Ok(Role::ControlledInput),
            "observational-input" | "observational" => Ok(Role::ObservationalInput),
            "response" => Ok(Role::Response),
            _ => Err(CatalogError::UnknownRole(s.to_string())),
        }
    }
}

/// One node of the factor tree.
///
/// Field order here is the canonical key order of the catalog JSON format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorDef {
    /// Path-style identifier, e.g. `workload/activity/direction`.
    pub id: String,
    pub branch: Branch,
    /// Display category, e.g. "Activity" or "VM Instance".
    pub category: String,
    pub name: String,
    pub role: Role,
    /// True when the value is pre-supplied as a service-level agreement.
    pub sla: bool,
    pub unit_hint: Option<String>,
    pub example_levels: Vec<String>,
    /// Ids of factors inherited from another category.
    pub cross_refs: Vec<String>,
    pub notes: String,
}

impl FactorDef {
    fn new(id: &str, branch: Branch, category: &str, name: &str, role: Role) -> Self {
        FactorDef {
            id: id.to_string(),
            branch,
            category: category.to_string(),
            name: name.to_string(),
            role,
            sla: false,
            unit_hint: None,
            example_levels: Vec::new(),
            cross_refs: Vec::new(),
            notes: String::new(),
        }
    }

    fn sla(mut self) -> Self {
        self.sla = true;
        self
    }

    fn unit(mut self, unit: &str) -> Self {
        self.unit_hint = Some(unit.to_string());
        self
    }

    fn levels(mut self, levels: &[&str]) -> Self {
        self.example_levels = levels.iter().map(|s| s.to_string()).collect();
        self
    }

    fn refs(mut self, refs: &[&str]) -> Self {
        self.cross_refs = refs.iter().map(|s| s.to_string()).collect();
        self
    }

    fn note(mut self, notes: &str) -> Self {
        self.notes = notes.to_string();
        self
    }
}

/// An ordered, validated collection of factor definitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub version: String,
    pub factors: Vec<FactorDef>,
}

impl Catalog {
    pub fn get(&self, id: &str) -> Option<&FactorDef> {
        self.factors.iter().find(|f| f.id == id)
    }

    pub fn count_by_branch(&self, branch: Branch) -> usize {
        self.factors.iter().filter(|f| f.branch == branch).count()
    }
}

/// Errors from catalog parsing, validation, and lookup.
#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog parse failure: {0}")]
    Parse(String),
    #[error("duplicate factor id `{0}`")]
    DuplicateId(String),
    #[error("factor `{id}` has dangling cross_ref `{target}`")]
    DanglingCrossRef { id: String, target: String },
    #[error("factor `{0}` violates the capacity/response coupling (branch is capacity iff role is response)")]
    BranchRoleMismatch(String),
    #[error("factor `{id}` has invalid {field}: must be nonempty and free of commas and control characters")]
    InvalidField { id: String, field: &'static str },
    #[error("unknown branch `{0}`")]
    UnknownBranch(String),
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("no factor matches `{0}`")]
    NotFound(String),
    #[error("name `{query}` is ambiguous; candidates: {}", candidates.join(", "))]
    AmbiguousName { query: String, candidates: Vec<String> },
}

const BUILTIN_VERSION: &str = "1.0.0";

/// The built-in factor catalog.
///
/// Counts per branch are fixed: 11 workload factors, 21 computing-resource
/// factors (with two cross_refs under VM Instance), 7 capacity categories.
pub fn builtin_catalog() -> Catalog {
    use Branch::*;
    use Role::*;

    let factors = vec![
        // Workload / Terminal
        FactorDef::new(
            "workload/terminal/geographical-location",
            Workload,
            "Terminal",
            "Geographical Location",
            ControlledInput,
        )
        .note("Where the workload-issuing client or instance is located."),
        FactorDef::new(
            "workload/terminal/number",
            Workload,
            "Terminal",
            "Number",
            ControlledInput,
        )
        .note("How many terminals issue the workload concurrently."),
        FactorDef::new(
            "workload/terminal/terminal-type",
            Workload,
            "Terminal",
            "Terminal Type",
            ControlledInput,
        )
        .levels(&["client", "VM instance"])
        .note(
            "Which kind of endpoint issues the workload. Equal in essence to \
             computing-resource/communication/communication-scope; both nodes are kept.",
        ),
        // Workload / Activity
        FactorDef::new(
            "workload/activity/duration",
            Workload,
            "Activity",
            "Duration",
            ControlledInput,
        )
        .unit("seconds"),
        FactorDef::new(
            "workload/activity/frequency",
            Workload,
            "Activity",
            "Frequency",
            ControlledInput,
        )
        .note("How often activities are issued."),
        FactorDef::new(
            "workload/activity/number",
            Workload,
            "Activity",
            "Number",
            ControlledInput,
        )
        .note("Count of activities issued, e.g. number of I/O requests."),
        FactorDef::new(
            "workload/activity/timing",
            Workload,
            "Activity",
            "Timing",
            ControlledInput,
        )
        .note("When activities are issued, e.g. time of day."),
        FactorDef::new(
            "workload/activity/direction",
            Workload,
            "Activity",
            "Direction",
            ControlledInput,
        )
        .levels(&["input", "output"])
        .note(
            "Direction of the activity relative to the evaluated resource, \
             e.g. write vs. read for disk I/O.",
        ),
        FactorDef::new(
            "workload/activity/sequence",
            Workload,
            "Activity",
            "Sequence",
            ControlledInput,
        )
        .levels(&["sequential", "parallel"]),
        // Workload / Object
        FactorDef::new(
            "workload/object/number",
            Workload,
            "Object",
            "Number",
            ControlledInput,
        )
        .note("Count of activity targets: messages, files, jobs, workflows."),
        FactorDef::new(
            "workload/object/size-complexity",
            Workload,
            "Object",
            "Size/Complexity",
            ControlledInput,
        )
        .note(
            "Size or complexity of the activity target. One experiment may tune \
             several size-like parameters at once, e.g. block size and process grid size.",
        ),
        // Computing Resource / Communication
        FactorDef::new(
            "computing-resource/communication/ethernet-io-index",
            ComputingResource,
            "Communication",
            "Ethernet I/O Index",
            ControlledInput,
        )
        .sla(),
        FactorDef::new(
            "computing-resource/communication/communication-scope",
            ComputingResource,
            "Communication",
            "Communication Scope",
            ControlledInput,
        )
        .levels(&["intra-cloud", "wide-area"]),
        FactorDef::new(
            "computing-resource/communication/communication-level",
            ComputingResource,
            "Communication",
            "Communication Level",
            ControlledInput,
        )
        .levels(&["IP-level", "MPI-message-level"]),
        // Computing Resource / Computation
        FactorDef::new(
            "computing-resource/computation/core-number",
            ComputingResource,
            "Computation",
            "Core Number",
            ControlledInput,
        ),
        FactorDef::new(
            "computing-resource/computation/ecu-number",
            ComputingResource,
            "Computation",
            "ECU Number",
            ControlledInput,
        )
        .note(
            "Elastic Compute Units, Amazon's logical unit of CPU power \
             (the power of a 1.0-1.2 GHz 2007 Opteron or Xeon processor).",
        ),
        FactorDef::new(
            "computing-resource/computation/thread-number",
            ComputingResource,
            "Computation",
            "Thread Number",
            ControlledInput,
        ),
        FactorDef::new(
            "computing-resource/computation/cpu-architecture",
            ComputingResource,
            "Computation",
            "CPU Architecture",
            ControlledInput,
        )
        .levels(&["32 bit", "64 bit"]),
        FactorDef::new(
            "computing-resource/computation/cpu-brand",
            ComputingResource,
            "Computation",
            "CPU Brand",
            ControlledInput,
        )
        .levels(&["AMD Opteron", "Intel Xeon"]),
        FactorDef::new(
            "computing-resource/computation/cpu-model",
            ComputingResource,
            "Computation",
            "CPU Model",
            ControlledInput,
        )
        .levels(&["Intel Xeon E5430", "Intel Xeon X5550"]),
        FactorDef::new(
            "computing-resource/computation/cpu-frequency",
            ComputingResource,
            "Computation",
            "CPU Frequency",
            ControlledInput,
        )
        .sla()
        .unit("GHz"),
        // Computing Resource / Memory (Cache)
        FactorDef::new(
            "computing-resource/memory-cache/memory-size",
            ComputingResource,
            "Memory (Cache)",
            "Memory Size",
            ControlledInput,
        )
        .sla(),
        FactorDef::new(
            "computing-resource/memory-cache/cache-physical-location",
            ComputingResource,
            "Memory (Cache)",
            "Cache Physical Location",
            ObservationalInput,
        )
        .note(
            "Where a cache level physically sits in the memory hierarchy; revealed \
             by measurement rather than set by the evaluator.",
        ),
        FactorDef::new(
            "computing-resource/memory-cache/cache-size",
            ComputingResource,
            "Memory (Cache)",
            "Cache Size",
            ControlledInput,
        )
        .levels(&["L1=64KB", "L2=1MB"]),
        // Computing Resource / Storage
        FactorDef::new(
            "computing-resource/storage/storage-size",
            ComputingResource,
            "Storage",
            "Storage Size",
            ControlledInput,
        )
        .sla(),
        FactorDef::new(
            "computing-resource/storage/geographical-location",
            ComputingResource,
            "Storage",
            "Geographical Location",
            ControlledInput,
        )
        .levels(&["S3", "S3-Europe"])
        .note("Data-center region or storing mechanism, e.g. local disk vs. remote NFS drive."),
        FactorDef::new(
            "computing-resource/storage/storage-type",
            ComputingResource,
            "Storage",
            "Storage Type",
            ControlledInput,
        )
        .levels(&["Blob", "Table", "Queue"])
        .note("Each storage type corresponds to a different set of data-access activities."),
        // Computing Resource / VM Instance
        FactorDef::new(
            "computing-resource/vm-instance/geographical-location",
            ComputingResource,
            "VM Instance",
            "Geographical Location",
            ControlledInput,
        ),
        FactorDef::new(
            "computing-resource/vm-instance/instance-number",
            ComputingResource,
            "VM Instance",
            "Instance Number",
            ControlledInput,
        ),
        FactorDef::new(
            "computing-resource/vm-instance/vm-type",
            ComputingResource,
            "VM Instance",
            "VM Type",
            ControlledInput,
        )
        .levels(&["M1.small", "M1.large"])
        .refs(&[
            "computing-resource/computation/cpu-architecture",
            "computing-resource/computation/core-number",
        ])
        .note(
            "Instance type as named by the provider; determines inherited computation \
             characteristics such as CPU architecture and core count.",
        ),
        FactorDef::new(
            "computing-resource/vm-instance/os-brand",
            ComputingResource,
            "VM Instance",
            "OS Brand",
            ControlledInput,
        )
        .levels(&["Linux", "Windows"]),
        FactorDef::new(
            "computing-resource/vm-instance/physical-location",
            ComputingResource,
            "VM Instance",
            "Physical Location",
            ObservationalInput,
        )
        .note("The instance's un-virtualized host environment; not controllable by evaluators."),
        // Capacity
        FactorDef::new(
            "capacity/data-throughput",
            Capacity,
            "Data Throughput",
            "Data Throughput",
            Response,
        )
        .unit("MB/s"),
        FactorDef::new("capacity/latency", Capacity, "Latency", "Latency", Response)
            .levels(&["Benchmark Transactional Job Delay", "Benchmark Delay"])
            .note(
                "Job-level and global-level delay metrics give different lenses \
                 on the same capacity.",
            ),
        FactorDef::new(
            "capacity/transaction-speed",
            Capacity,
            "Transaction Speed",
            "Transaction Speed",
            Response,
        ),
        FactorDef::new(
            "capacity/availability",
            Capacity,
            "Availability",
            "Availability",
            Response,
        ),
        FactorDef::new(
            "capacity/reliability",
            Capacity,
            "Reliability",
            "Reliability",
            Response,
        ),
        FactorDef::new(
            "capacity/scalability",
            Capacity,
            "Scalability",
            "Scalability",
            Response,
        ),
        FactorDef::new(
            "capacity/variability",
            Capacity,
            "Variability",
            "Variability",
            Response,
        ),
    ];

    let catalog = Catalog {
        version: BUILTIN_VERSION.to_string(),
        factors,
    };
    debug_assert!(validate_catalog(&catalog).is_ok());
    catalog
}

/// Serializes a catalog in canonical form: factors in catalog order, fixed key
/// order, 2-space indent, LF line endings, trailing newline. Canonical output
/// round-trips byte-identically through [`load_catalog`].
pub fn catalog_to_json(catalog: &Catalog) -> String {
    let mut s = serde_json::to_string_pretty(catalog).expect("catalog serialization cannot fail");
    s.push('\n');
    s
}

/// Parses and validates a catalog from the JSON catalog file format.
pub fn load_catalog<R: Read>(source: R) -> Result<Catalog, CatalogError> {
    let catalog: Catalog =
        serde_json::from_reader(source).map_err(|e| CatalogError::Parse(e.to_string()))?;
    validate_catalog(&catalog)?;
    Ok(catalog)
}

/// Checks the structural invariants every catalog must satisfy.
pub fn validate_catalog(catalog: &Catalog) -> Result<(), CatalogError> {
    let mut seen = BTreeSet::new();
    for f in &catalog.factors {
        for (field, value) in [("id", &f.id), ("category", &f.category), ("name", &f.name)] {
            if value.is_empty() || value.chars().any(|c| c == ',' || c.is_control()) {
                return Err(CatalogError::InvalidField { id: f.id.clone(), field });
            }
        }
        if !seen.insert(f.id.as_str()) {
            return Err(CatalogError::DuplicateId(f.id.clone()));
        }
        if (f.branch == Branch::Capacity) != (f.role == Role::Response) {
            return Err(CatalogError::BranchRoleMismatch(f.id.clone()));
        }
    }
    for f in &catalog.factors {
        for target in &f.cross_refs {
            if !seen.contains(target.as_str()) {
                return Err(CatalogError::DanglingCrossRef {
                    id: f.id.clone(),
                    target: target.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Filter for [`list_factors`]. Empty filter matches everything.
#[derive(Debug, Clone, Default)]
pub struct FactorFilter {
    pub branch: Option<Branch>,
    pub category: Option<String>,
    pub role: Option<Role>,
}

/// Lists factors matching all given filter fields, in catalog order.
pub fn list_factors<'a>(
    catalog: &'a Catalog,
    filter: &FactorFilter,
) -> Result<Vec<&'a FactorDef>, CatalogError> {
    if let Some(cat) = &filter.category {
        let known = catalog
            .factors
            .iter()
            .any(|f| f.category.eq_ignore_ascii_case(cat));
        if !known {
            return Err(CatalogError::UnknownCategory(cat.clone()));
        }
    }
    Ok(catalog
        .factors
        .iter()
        .filter(|f| filter.branch.is_none_or(|b| f.branch == b))
        .filter(|f| {
            filter
                .category
                .as_ref()
                .is_none_or(|c| f.category.eq_ignore_ascii_case(c))
        })
        .filter(|f| filter.role.is_none_or(|r| f.role == r))
        .collect())
}

/// Looks a factor up by exact id, or else by unique case-insensitive name.
pub fn find_factor<'a>(catalog: &'a Catalog, id_or_name: &str) -> Result<&'a FactorDef, CatalogError> {
    if let Some(f) = catalog.get(id_or_name) {
        return Ok(f);
    }
    let matches: Vec<&FactorDef> = catalog
        .factors
        .iter()
        .filter(|f| f.name.eq_ignore_ascii_case(id_or_name))
        .collect();
    match matches.len() {
        0 => Err(CatalogError::NotFound(id_or_name.to_string())),
        1 => Ok(matches[0]),
        _ => Err(CatalogError::AmbiguousName {
            query: id_or_name.to_string(),
            candidates: matches.iter().map(|f| f.id.clone()).collect(),
        }),
    }
}

/// Case-insensitive substring search over id, name, category, notes, and
/// example levels. Returns matches in catalog order.
pub fn search_factors<'a>(catalog: &'a Catalog, query: &str) -> Vec<&'a FactorDef> {
    let q = query.to_lowercase();
    catalog
        .factors
        .iter()
        .filter(|f| {
            f.id.to_lowercase().contains(&q)
                || f.name.to_lowercase().contains(&q)
                || f.category.to_lowercase().contains(&q)
                || f.notes.to_lowercase().contains(&q)
                || f.example_levels.iter().any(|l| l.to_lowercase().contains(&q))
        })
        .collect()
}

/// One chosen input factor with its concrete levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedInput {
    pub factor_id: String,
    pub alias: char,
    pub levels: Vec<String>,
}

/// The chosen response: a capacity factor refined by a concrete metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseChoice {
    pub factor_id: String,
    pub metric_name: String,
    pub unit: String,
}

/// An evaluator's raw factor selection, prior to validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSelection {
    pub inputs: Vec<SelectedInput>,
    pub response: Option<ResponseChoice>,
}

impl FactorSelection {
    /// Builds a selection with aliases assigned A, B, C, ... in input order.
    pub fn new<I, S>(inputs: I, response: ResponseChoice) -> FactorSelection
    where
        I: IntoIterator<Item = (S, Vec<String>)>,
        S: Into<String>,
    {
        let inputs = inputs
            .into_iter()
            .enumerate()
            .map(|(i, (id, levels))| SelectedInput {
                factor_id: id.into(),
                alias: (b'A' + i as u8) as char,
                levels,
            })
            .collect();
        FactorSelection {
            inputs,
            response: Some(response),
        }
    }
}

/// Machine-readable codes for selection violations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationCode {
    ResponseMissing,
    ResponseNotCapacity,
    InputIsResponse,
    InputObservational,
    TooFewLevels,
    UnknownFactor,
    DuplicateAlias,
    MalformedAlias,
    NoInputs,
    DuplicateLevel,
    InvalidLevelLabel,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::ResponseMissing => "ResponseMissing",
            ViolationCode::ResponseNotCapacity => "ResponseNotCapacity",
            ViolationCode::InputIsResponse => "InputIsResponse",
            ViolationCode::InputObservational => "InputObservational",
            ViolationCode::TooFewLevels => "TooFewLevels",
            ViolationCode::UnknownFactor => "UnknownFactor",
            ViolationCode::DuplicateAlias => "DuplicateAlias",
            ViolationCode::MalformedAlias => "MalformedAlias",
            ViolationCode::NoInputs => "NoInputs",
            ViolationCode::DuplicateLevel => "DuplicateLevel",
            ViolationCode::InvalidLevelLabel => "InvalidLevelLabel",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One selection violation: a code plus the offending id or alias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub code: ViolationCode,
    pub subject: String,
    pub detail: String,
}

impl Violation {
    fn new(code: ViolationCode, subject: impl Into<String>, detail: impl Into<String>) -> Self {
        Violation {
            code,
            subject: subject.into(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.code, self.subject, self.detail)
    }
}

/// One input factor resolved against a catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedInput {
    def: FactorDef,
    alias: char,
    levels: Vec<String>,
}

impl ValidatedInput {
    pub fn def(&self) -> &FactorDef {
        &self.def
    }

    pub fn alias(&self) -> char {
        self.alias
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }
}

/// The resolved response factor plus metric and unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedResponse {
    def: FactorDef,
    metric_name: String,
    unit: String,
}

impl ValidatedResponse {
    pub fn def(&self) -> &FactorDef {
        &self.def
    }

    pub fn metric_name(&self) -> &str {
        &self.metric_name
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }
}

/// A selection that passed [`validate_selection`]; the only way to obtain one.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSelection {
    inputs: Vec<ValidatedInput>,
    response: ValidatedResponse,
}

impl ValidatedSelection {
    pub fn inputs(&self) -> &[ValidatedInput] {
        &self.inputs
    }

    pub fn response(&self) -> &ValidatedResponse {
        &self.response
    }

    pub fn aliases(&self) -> Vec<char> {
        self.inputs.iter().map(|i| i.alias).collect()
    }

    /// True when every input factor has exactly two levels.
    pub fn is_two_level(&self) -> bool {
        self.inputs.iter().all(|i| i.levels.len() == 2)
    }

    /// Number of level combinations in one full replicate.
    pub fn combination_count(&self) -> Option<u64> {
        self.inputs
            .iter()
            .try_fold(1u64, |acc, i| acc.checked_mul(i.levels.len() as u64))
    }

    /// The raw selection this was validated from.
    pub fn to_selection(&self) -> FactorSelection {
        FactorSelection {
            inputs: self
                .inputs
                .iter()
                .map(|i| SelectedInput {
                    factor_id: i.def.id.clone(),
                    alias: i.alias,
                    levels: i.levels.clone(),
                })
                .collect(),
            response: Some(ResponseChoice {
                factor_id: self.response.def.id.clone(),
                metric_name: self.response.metric_name.clone(),
                unit: self.response.unit.clone(),
            }),
        }
    }
}

fn level_label_ok(label: &str) -> bool {
    !label.is_empty() && !label.chars().any(|c| c == ',' || c.is_control())
}

/// Validates a selection against a catalog.
///
/// Total over its input: every selection yields either a [`ValidatedSelection`]
/// or at least one [`Violation`], never both.
pub fn validate_selection(
    catalog: &Catalog,
    selection: &FactorSelection,
) -> Result<ValidatedSelection, Vec<Violation>> {
    let mut violations = Vec::new();

    if selection.inputs.is_empty() {
        violations.push(Violation::new(
            ViolationCode::NoInputs,
            "selection",
            "at least one input factor is required",
        ));
    }

    // Aliases must be distinct consecutive letters starting at A.
    let mut seen_aliases = BTreeSet::new();
    let mut duplicate = false;
    for input in &selection.inputs {
        if !seen_aliases.insert(input.alias) {
            duplicate = true;
            violations.push(Violation::new(
                ViolationCode::DuplicateAlias,
                input.alias.to_string(),
                format!("alias `{}` is assigned more than once", input.alias),
            ));
        }
    }
    if !duplicate {
        for (i, input) in selection.inputs.iter().enumerate() {
            let expected = (b'A' + i as u8) as char;
            if input.alias != expected {
                violations.push(Violation::new(
                    ViolationCode::MalformedAlias,
                    input.alias.to_string(),
                    format!(
                        "aliases must be consecutive letters from A; position {} expects `{}`",
                        i + 1,
                        expected
                    ),
                ));
            }
        }
    }

    let mut inputs = Vec::new();
    for input in &selection.inputs {
        let def = match catalog.get(&input.factor_id) {
            Some(def) => def,
            None => {
                violations.push(Violation::new(
                    ViolationCode::UnknownFactor,
                    &input.factor_id,
                    "input factor not found in catalog",
                ));
                continue;
            }
        };
        match def.role {
            Role::Response => violations.push(Violation::new(
                ViolationCode::InputIsResponse,
                &def.id,
                "capacity factors are responses and cannot be inputs",
            )),
            Role::ObservationalInput => violations.push(Violation::new(
                ViolationCode::InputObservational,
                &def.id,
                "factor is not controllable by evaluators",
            )),
            Role::ControlledInput => {}
        }
        let distinct: BTreeSet<&String> = input.levels.iter().collect();
        if distinct.len() < input.levels.len() {
            violations.push(Violation::new(
                ViolationCode::DuplicateLevel,
                &input.factor_id,
                "level labels must be pairwise distinct",
            ));
        } else if input.levels.len() < 2 {
            violations.push(Violation::new(
                ViolationCode::TooFewLevels,
                &input.factor_id,
                format!("{} level(s) given; at least 2 required", input.levels.len()),
            ));
        }
        if let Some(bad) = input.levels.iter().find(|l| !level_label_ok(l)) {
            violations.push(Violation::new(
                ViolationCode::InvalidLevelLabel,
                &input.factor_id,
                format!(
                    "level label {:?} must be nonempty and free of commas and control characters",
                    bad
                ),
            ));
        }
        inputs.push(ValidatedInput {
            def: def.clone(),
            alias: input.alias,
            levels: input.levels.clone(),
        });
    }

    let response = match &selection.response {
        None => {
            violations.push(Violation::new(
                ViolationCode::ResponseMissing,
                "selection",
                "exactly one response metric is required",
            ));
            None
        }
        Some(choice) => match catalog.get(&choice.factor_id) {
            None => {
                violations.push(Violation::new(
                    ViolationCode::UnknownFactor,
                    &choice.factor_id,
                    "response factor not found in catalog",
                ));
                None
            }
            Some(def) => {
                if def.branch != Branch::Capacity {
                    violations.push(Violation::new(
                        ViolationCode::ResponseNotCapacity,
                        &def.id,
                        "the response must be a capacity factor",
                    ));
                    None
                } else {
                    Some(ValidatedResponse {
                        def: def.clone(),
                        metric_name: choice.metric_name.clone(),
                        unit: choice.unit.clone(),
                    })
                }
            }
        },
    };

    match (violations.is_empty(), response) {
        (true, Some(response)) => Ok(ValidatedSelection { inputs, response }),
        (true, None) => unreachable!("missing response always records a violation"),
        (false, _) => Err(violations),
    }
}
