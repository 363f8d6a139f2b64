//! One JSON file per project, schema-checked on every write and load.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use serde_json::Value;
use uuid::Uuid;

use crate::error::{Result, ServiceError};
use crate::project::Project;

pub const PROJECT_SCHEMA: &str = include_str!("../schemas/project.schema.json");

fn validator() -> &'static jsonschema::Validator {
    static V: OnceLock<jsonschema::Validator> = OnceLock::new();
    V.get_or_init(|| {
        let schema: Value = serde_json::from_str(PROJECT_SCHEMA).expect("schema is JSON");
        jsonschema::validator_for(&schema).expect("schema compiles")
    })
}

/// Checks a project document against the published schema and the
/// cross-field invariants.
pub fn validate_document(doc: &Value) -> Result<Project> {
    let errors: Vec<String> = validator()
        .iter_errors(doc)
        .map(|e| format!("{}: {}", e.instance_path(), e))
        .collect();
    if !errors.is_empty() {
        return Err(ServiceError::Schema(errors.join("; ")));
    }
    let project: Project =
        serde_json::from_value(doc.clone()).map_err(|e| ServiceError::Schema(e.to_string()))?;
    project.check_invariants()?;
    Ok(project)
}

#[derive(Debug)]
pub struct ProjectStore {
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<RwLock<()>>>>,
}

impl ProjectStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| ServiceError::Storage(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock_for(&self, id: &str) -> Arc<RwLock<()>> {
        self.locks
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(id.to_owned())
            .or_default()
            .clone()
    }

    fn path(&self, id: &str) -> Result<PathBuf> {
        // Only canonical UUIDs reach the filesystem.
        let uuid = Uuid::parse_str(id).map_err(|_| ServiceError::NotFound(id.to_owned()))?;
        if uuid.hyphenated().to_string() != id {
            return Err(ServiceError::NotFound(id.to_owned()));
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    fn load_unlocked(&self, id: &str) -> Result<Project> {
        let path = self.path(id)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ServiceError::NotFound(id.to_owned()))
            }
            Err(e) => return Err(ServiceError::Storage(e.to_string())),
        };
        let doc: Value = serde_json::from_str(&text).map_err(|e| ServiceError::Schema(e.to_string()))?;
        validate_document(&doc)
    }

    fn write_unlocked(&self, project: &Project) -> Result<()> {
        let doc = serde_json::to_value(project).map_err(|e| ServiceError::Storage(e.to_string()))?;
        validate_document(&doc)?;
        let path = self.path(&project.id)?;
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(&doc).map_err(|e| ServiceError::Storage(e.to_string()))?;
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| ServiceError::Storage(e.to_string()))
    }

    /// Persists a new project.
    pub fn insert(&self, project: &Project) -> Result<()> {
        let lock = self.lock_for(&project.id);
        let _w = lock.write().unwrap_or_else(|e| e.into_inner());
        if self.path(&project.id)?.exists() {
            return Err(ServiceError::Storage(format!("project {} already exists", project.id)));
        }
        self.write_unlocked(project)
    }

    pub fn load(&self, id: &str) -> Result<Project> {
        let lock = self.lock_for(id);
        let _r = lock.read().unwrap_or_else(|e| e.into_inner());
        self.load_unlocked(id)
    }

    /// Applies `f` to a copy under the project's write lock and persists the
    /// result only if `f` succeeds and the document stays valid.
    pub fn update<T>(
        &self,
        id: &str,
        now: impl FnOnce() -> String,
        f: impl FnOnce(&mut Project) -> Result<T>,
    ) -> Result<T> {
        let lock = self.lock_for(id);
        let _w = lock.write().unwrap_or_else(|e| e.into_inner());
        let mut project = self.load_unlocked(id)?;
        let out = f(&mut project)?;
        project.updated_at = now();
        self.write_unlocked(&project)?;
        Ok(out)
    }

    /// Ids of stored projects.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids: Vec<String> = fs::read_dir(&self.dir)
            .map_err(|e| ServiceError::Storage(e.to_string()))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_owned)
            })
            .filter(|id| Uuid::parse_str(id).is_ok())
            .collect();
        ids.sort();
        Ok(ids)
    }
}
