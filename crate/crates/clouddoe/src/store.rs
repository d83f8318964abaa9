//! File-based experiment workspace: one directory per experiment, atomic
//! artifact updates, and a manifest with per-artifact checksums.
//!
//! Layout: `manifest.json`, `catalog.json` (snapshot), `design.csv`,
//! `results.csv`, `analysis.json`, and a transient `lock` file guarding
//! writers. The catalog snapshot freezes the experiment's meaning against
//! later catalog edits.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{
    catalog_to_json, load_catalog, validate_selection, Catalog, FactorSelection, Violation,
};
use crate::design::{design_from_csv, design_to_csv, DesignError, DesignMatrix};
use crate::effects::{report_from_json, report_to_json, AnalysisReport, EffectsError, ResultSet};
use crate::runner::{results_from_csv, results_to_csv, RunnerError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CATALOG_FILE: &str = "catalog.json";
pub const DESIGN_FILE: &str = "design.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const ANALYSIS_FILE: &str = "analysis.json";
pub const LOCK_FILE: &str = "lock";

/// Lifecycle of an experiment. Transitions only move forward, except that
/// re-ingesting responses drops an Analyzed workspace back to Complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "designed")]
    Designed,
    #[serde(rename = "partially-run")]
    PartiallyRun,
    #[serde(rename = "complete")]
    Complete,
    #[serde(rename = "analyzed")]
    Analyzed,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Designed => "designed",
            Status::PartiallyRun => "partially-run",
            Status::Complete => "complete",
            Status::Analyzed => "analyzed",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The manifest kept at the root of every workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub name: String,
    pub created: String,
    pub catalog_version: String,
    pub selection: FactorSelection,
    pub seed: Option<u64>,
    pub replicates: u32,
    pub status: Status,
    pub response_unit: String,
    /// SHA-256 per artifact file, keyed by file name.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("directory `{0}` already exists and is not empty")]
    DirNotEmpty(PathBuf),
    #[error("`{0}` is not an experiment workspace (no {MANIFEST_FILE})")]
    NotAWorkspace(PathBuf),
    #[error("workspace is locked by another writer ({0}); remove the file if no run is active")]
    Locked(PathBuf),
    #[error("artifact `{0}` is missing from the workspace")]
    MissingArtifact(String),
    #[error("artifact `{0}` failed its checksum; the file was modified outside the toolkit")]
    ChecksumMismatch(String),
    #[error("operation requires status {required} or later, but the workspace is {actual}")]
    StatusPrecondition { required: Status, actual: Status },
    #[error("status cannot move from {from} to {to}")]
    InvalidTransition { from: Status, to: Status },
    #[error("results must contain at least one response")]
    EmptyResults,
    #[error("response references run_order {0}, which is not in the design")]
    UnknownRunOrder(u32),
    #[error("workspace is internally inconsistent: {0}")]
    Inconsistent(String),
    #[error("manifest selection no longer validates against the catalog snapshot: {}", format_violations(.0))]
    SelectionInvalid(Vec<Violation>),
    #[error(transparent)]
    Catalog(#[from] crate::catalog::CatalogError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Effects(#[from] EffectsError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes via a temp file in the same directory plus an atomic rename, so an
/// interrupted write never leaves a partially written artifact visible.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    let file = fs::File::open(&tmp)?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, dir.join(name))
}

struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(dir: &Path) -> Result<LockGuard, StoreError> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                use io::Write;
                let _ = writeln!(file, "{}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                Err(StoreError::Locked(path))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Handle to an experiment workspace directory.
#[derive(Debug)]
pub struct Workspace {
    dir: PathBuf,
    manifest: ExperimentManifest,
}

fn manifest_to_json(manifest: &ExperimentManifest) -> String {
    let mut s =
        serde_json::to_string_pretty(manifest).expect("manifest serialization cannot fail");
    s.push('\n');
    s
}

impl Workspace {
    /// Creates a workspace in an empty or nonexistent directory, writing the
    /// manifest, a catalog snapshot, and the design CSV. Status starts at
    /// Designed.
    pub fn init(
        dir: &Path,
        name: &str,
        catalog: &Catalog,
        design: &DesignMatrix,
    ) -> Result<Workspace, StoreError> {
        match fs::read_dir(dir) {
            Ok(mut entries) => {
                if entries.next().is_some() {
                    return Err(StoreError::DirNotEmpty(dir.to_path_buf()));
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => fs::create_dir_all(dir)?,
            Err(e) => return Err(e.into()),
        }

        let _lock = LockGuard::acquire(dir)?;

        let catalog_json = catalog_to_json(catalog);
        let design_csv = design_to_csv(design);
        let mut checksums = BTreeMap::new();
        checksums.insert(CATALOG_FILE.to_string(), sha256_hex(catalog_json.as_bytes()));
        checksums.insert(DESIGN_FILE.to_string(), sha256_hex(design_csv.as_bytes()));

        let manifest = ExperimentManifest {
            name: name.to_string(),
            created: chrono::Utc::now().to_rfc3339(),
            catalog_version: catalog.version.clone(),
            selection: design.selection().to_selection(),
            seed: design.seed(),
            replicates: design.replicates(),
            status: Status::Designed,
            response_unit: design.selection().response().unit().to_string(),
            checksums,
        };

        write_atomic(dir, CATALOG_FILE, catalog_json.as_bytes())?;
        write_atomic(dir, DESIGN_FILE, design_csv.as_bytes())?;
        write_atomic(dir, MANIFEST_FILE, manifest_to_json(&manifest).as_bytes())?;

        Ok(Workspace {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Opens an existing workspace by reading its manifest.
    pub fn open(dir: &Path) -> Result<Workspace, StoreError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|_| StoreError::NotAWorkspace(dir.to_path_buf()))?;
        let manifest: ExperimentManifest = serde_json::from_str(&text)
            .map_err(|e| StoreError::Inconsistent(format!("manifest does not parse: {e}")))?;
        Ok(Workspace {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &ExperimentManifest {
        &self.manifest
    }

    fn read_checked(&self, name: &str) -> Result<String, StoreError> {
        let path = self.dir.join(name);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::MissingArtifact(name.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        match self.manifest.checksums.get(name) {
            Some(expected) if *expected == sha256_hex(&bytes) => {}
            Some(_) => return Err(StoreError::ChecksumMismatch(name.to_string())),
            None => {
                return Err(StoreError::Inconsistent(format!(
                    "artifact `{name}` present but not recorded in the manifest"
                )))
            }
        }
        String::from_utf8(bytes)
            .map_err(|_| StoreError::Inconsistent(format!("artifact `{name}` is not UTF-8")))
    }

    /// The catalog snapshot taken at init time.
    pub fn load_catalog_snapshot(&self) -> Result<Catalog, StoreError> {
        let text = self.read_checked(CATALOG_FILE)?;
        Ok(load_catalog(text.as_bytes())?)
    }

    /// Rebuilds the design from the stored CSV, validated against the
    /// catalog snapshot.
    pub fn load_design(&self) -> Result<DesignMatrix, StoreError> {
        let catalog = self.load_catalog_snapshot()?;
        let selection = validate_selection(&catalog, &self.manifest.selection)
            .map_err(StoreError::SelectionInvalid)?;
        let csv = self.read_checked(DESIGN_FILE)?;
        let design = design_from_csv(&csv, &selection)?.with_seed(self.manifest.seed);
        if design.replicates() != self.manifest.replicates {
            return Err(StoreError::Inconsistent(format!(
                "design has {} replicates, manifest says {}",
                design.replicates(),
                self.manifest.replicates
            )));
        }
        Ok(design)
    }

    /// The stored responses, if any have been ingested.
    pub fn load_results(&self) -> Result<Option<ResultSet>, StoreError> {
        if !self.dir.join(RESULTS_FILE).exists() {
            return Ok(None);
        }
        let csv = self.read_checked(RESULTS_FILE)?;
        Ok(Some(results_from_csv(&csv, &self.manifest.response_unit)?))
    }

    /// The stored analysis, if the workspace has been analyzed.
    pub fn load_analysis(&self) -> Result<Option<AnalysisReport>, StoreError> {
        if !self.dir.join(ANALYSIS_FILE).exists() {
            return Ok(None);
        }
        let json = self.read_checked(ANALYSIS_FILE)?;
        Ok(Some(report_from_json(&json)?))
    }

    fn transition(&self, to: Status) -> Result<(), StoreError> {
        let from = self.manifest.status;
        let ok = to >= from || (from == Status::Analyzed && to == Status::Complete);
        if ok {
            Ok(())
        } else {
            Err(StoreError::InvalidTransition { from, to })
        }
    }

    fn write_manifest(&mut self) -> Result<(), StoreError> {
        write_atomic(
            &self.dir,
            MANIFEST_FILE,
            manifest_to_json(&self.manifest).as_bytes(),
        )?;
        Ok(())
    }

    /// Validates and stores a set of responses. All-or-nothing: on any
    /// validation failure the workspace is untouched. Re-ingestion over an
    /// analyzed workspace drops the stale analysis and returns to Complete.
    pub fn ingest_results(&mut self, csv_text: &str) -> Result<Status, StoreError> {
        let results = results_from_csv(csv_text, &self.manifest.response_unit)?;
        self.store_results(&results)
    }

    /// Same as [`Workspace::ingest_results`], from an in-memory result set.
    pub fn store_results(&mut self, results: &ResultSet) -> Result<Status, StoreError> {
        if results.is_empty() {
            return Err(StoreError::EmptyResults);
        }
        let design = self.load_design()?;
        for (run, _) in results.iter() {
            if !design.trials().iter().any(|t| t.run_order == run) {
                return Err(StoreError::UnknownRunOrder(run));
            }
        }
        let new_status = if results.len() == design.trial_count() {
            Status::Complete
        } else {
            Status::PartiallyRun
        };
        self.transition(new_status)?;

        let _lock = LockGuard::acquire(&self.dir)?;
        let csv = results_to_csv(results);
        write_atomic(&self.dir, RESULTS_FILE, csv.as_bytes())?;
        self.manifest
            .checksums
            .insert(RESULTS_FILE.to_string(), sha256_hex(csv.as_bytes()));
        if self.manifest.status == Status::Analyzed {
            let _ = fs::remove_file(self.dir.join(ANALYSIS_FILE));
            self.manifest.checksums.remove(ANALYSIS_FILE);
        }
        self.manifest.status = new_status;
        self.write_manifest()?;
        Ok(new_status)
    }

    /// Stores the analysis JSON. Requires a complete experiment; moves the
    /// workspace to Analyzed.
    pub fn save_analysis(&mut self, report: &AnalysisReport) -> Result<(), StoreError> {
        if self.manifest.status < Status::Complete {
            return Err(StoreError::StatusPrecondition {
                required: Status::Complete,
                actual: self.manifest.status,
            });
        }
        let _lock = LockGuard::acquire(&self.dir)?;
        let json = report_to_json(report);
        write_atomic(&self.dir, ANALYSIS_FILE, json.as_bytes())?;
        self.manifest
            .checksums
            .insert(ANALYSIS_FILE.to_string(), sha256_hex(json.as_bytes()));
        self.manifest.status = Status::Analyzed;
        self.write_manifest()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{builtin_catalog, ResponseChoice};
    use crate::design::{full_factorial, randomize_run_order};
    use tempfile::TempDir;

    fn disk_io_setup() -> (Catalog, DesignMatrix) {
        let catalog = builtin_catalog();
        let selection = FactorSelection::new(
            [
                (
                    "workload/activity/direction",
                    vec!["Write".to_string(), "Read".to_string()],
                ),
                (
                    "workload/object/size-complexity",
                    vec!["Char".to_string(), "Block".to_string()],
                ),
                (
                    "computing-resource/vm-instance/vm-type",
                    vec!["M1.small".to_string(), "M1.large".to_string()],
                ),
            ],
            ResponseChoice {
                factor_id: "capacity/data-throughput".to_string(),
                metric_name: "Disk Data Throughput".to_string(),
                unit: "MB/s".to_string(),
            },
        );
        let selection = validate_selection(&catalog, &selection).unwrap();
        let design = randomize_run_order(&full_factorial(&selection, 1).unwrap(), 42);
        (catalog, design)
    }

    fn full_results_csv(design: &DesignMatrix) -> String {
        let mut out = String::from("run_order,response\n");
        for t in design.trials() {
            out.push_str(&format!("{},{}\n", t.run_order, 10.0 + t.run_order as f64));
        }
        out
    }

    #[test]
    fn init_writes_three_files_and_reloads() {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("exp");
        let (catalog, design) = disk_io_setup();
        let ws = Workspace::init(&dir, "ec2-disk-io", &catalog, &design).unwrap();
        assert_eq!(ws.manifest().status, Status::Designed);

        let files: Vec<String> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
            .collect();
        assert_eq!(files.len(), 3, "files: {files:?}");

        let reopened = Workspace::open(&dir).unwrap();
        assert_eq!(reopened.manifest(), ws.manifest());
        assert_eq!(reopened.load_design().unwrap(), design);
        assert_eq!(reopened.load_catalog_snapshot().unwrap(), catalog);
    }

    #[test]
    fn init_refuses_nonempty_directory() {
        let tmp = TempDir::new().unwrap();
        fs::write(tmp.path().join("stray"), "x").unwrap();
        let (catalog, design) = disk_io_setup();
        assert!(matches!(
            Workspace::init(tmp.path(), "exp", &catalog, &design),
            Err(StoreError::DirNotEmpty(_))
        ));
    }

    #[test]
    fn ingest_moves_status_and_is_atomic() {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("exp");
        let (catalog, design) = disk_io_setup();
        let mut ws = Workspace::init(&dir, "exp", &catalog, &design).unwrap();

        // Partial ingest.
        let full = full_results_csv(&design);
        let partial: String = full.lines().take(6).collect::<Vec<_>>().join("\n") + "\n";
        assert_eq!(ws.ingest_results(&partial).unwrap(), Status::PartiallyRun);

        // Complete ingest.
        assert_eq!(ws.ingest_results(&full).unwrap(), Status::Complete);

        // A duplicate row rejects without touching the stored artifact.
        let before = fs::read_to_string(dir.join(RESULTS_FILE)).unwrap();
        let dup = format!("{full}{}", full.lines().nth(1).unwrap());
        assert!(ws.ingest_results(&dup).is_err());
        assert_eq!(fs::read_to_string(dir.join(RESULTS_FILE)).unwrap(), before);
        assert_eq!(ws.manifest().status, Status::Complete);

        // Unknown run order rejects.
        let unknown = format!("{full}99,1.0\n");
        assert!(matches!(
            ws.ingest_results(&unknown),
            Err(StoreError::UnknownRunOrder(99))
        ));
    }

    #[test]
    fn save_analysis_requires_complete_and_round_trips() {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("exp");
        let (catalog, design) = disk_io_setup();
        let mut ws = Workspace::init(&dir, "exp", &catalog, &design).unwrap();

        let full = full_results_csv(&design);
        let partial: String = full.lines().take(4).collect::<Vec<_>>().join("\n") + "\n";
        ws.ingest_results(&partial).unwrap();

        let loaded_design = ws.load_design().unwrap();
        let results = ws.load_results().unwrap().unwrap();
        assert_eq!(results.len(), 3);

        // Analysis on a partially run workspace must be refused.
        ws.ingest_results(&full).unwrap();
        let exp = crate::effects::attach_responses(
            loaded_design,
            ws.load_results().unwrap().unwrap(),
        )
        .unwrap();
        let report = crate::effects::analyze(&exp, 0.05).unwrap();

        let mut partial_ws = {
            let dir2 = tmp.path().join("exp2");
            let ws2 = Workspace::init(&dir2, "exp2", &catalog, &design).unwrap();
            drop(ws2);
            let mut ws2 = Workspace::open(&dir2).unwrap();
            ws2.ingest_results(&partial).unwrap();
            ws2
        };
        assert!(matches!(
            partial_ws.save_analysis(&report),
            Err(StoreError::StatusPrecondition { .. })
        ));

        ws.save_analysis(&report).unwrap();
        assert_eq!(ws.manifest().status, Status::Analyzed);
        let loaded = ws.load_analysis().unwrap().unwrap();
        assert_eq!(loaded, report);

        // Re-ingestion resets Analyzed to Complete and drops the analysis.
        ws.ingest_results(&full).unwrap();
        assert_eq!(ws.manifest().status, Status::Complete);
        assert!(ws.load_analysis().unwrap().is_none());
    }

    #[test]
    fn tampered_artifacts_fail_checksums() {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("exp");
        let (catalog, design) = disk_io_setup();
        let mut ws = Workspace::init(&dir, "exp", &catalog, &design).unwrap();
        ws.ingest_results(&full_results_csv(&design)).unwrap();

        let path = dir.join(DESIGN_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("9,9,1,Write,Char,M1.small\n");
        fs::write(&path, text).unwrap();

        let ws = Workspace::open(&dir).unwrap();
        assert!(matches!(
            ws.load_design(),
            Err(StoreError::ChecksumMismatch(file)) if file == DESIGN_FILE
        ));
    }

    #[test]
    fn lock_blocks_concurrent_writers() {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("exp");
        let (catalog, design) = disk_io_setup();
        let mut ws = Workspace::init(&dir, "exp", &catalog, &design).unwrap();
        fs::write(dir.join(LOCK_FILE), "held\n").unwrap();
        assert!(matches!(
            ws.ingest_results(&full_results_csv(&design)),
            Err(StoreError::Locked(_))
        ));
        fs::remove_file(dir.join(LOCK_FILE)).unwrap();
        assert!(ws.ingest_results(&full_results_csv(&design)).is_ok());
    }

    #[test]
    fn workspace_is_self_contained() {
        // The stored analysis equals an analysis recomputed from files alone.
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path().join("exp");
        let (catalog, design) = disk_io_setup();
        let mut ws = Workspace::init(&dir, "exp", &catalog, &design).unwrap();
        ws.ingest_results(&full_results_csv(&design)).unwrap();
        let exp = crate::effects::attach_responses(
            ws.load_design().unwrap(),
            ws.load_results().unwrap().unwrap(),
        )
        .unwrap();
        let report = crate::effects::analyze(&exp, 0.05).unwrap();
        ws.save_analysis(&report).unwrap();

        let fresh = Workspace::open(&dir).unwrap();
        let exp2 = crate::effects::attach_responses(
            fresh.load_design().unwrap(),
            fresh.load_results().unwrap().unwrap(),
        )
        .unwrap();
        let recomputed = crate::effects::analyze(&exp2, 0.05).unwrap();
        assert_eq!(recomputed, fresh.load_analysis().unwrap().unwrap());
    }
}
