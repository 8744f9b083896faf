use std::collections::HashMap;
use std::env;
use std::fs;
use std::path::{Path, PathBuf};

/// Colon-separated list of directories searched for imported modules.
pub const SPEC_PATH_ENV: &str = "CAPI_SPEC_PATH";

/// A module located by an [`ImportResolver`].
#[derive(Debug, Clone)]
pub struct ResolvedModule {
    /// Stable identity used for cycle detection and import de-duplication.
    pub id: String,
    pub source: String,
    /// File the module came from, if any; nested imports resolve relative to it.
    pub path: Option<PathBuf>,
}

pub trait ImportResolver {
    fn resolve(&self, module: &str, importer: Option<&Path>) -> Result<ResolvedModule, String>;
}

/// Looks next to the importing file first, then in each search-path directory.
#[derive(Debug, Clone, Default)]
pub struct FsResolver {
    pub search_path: Vec<PathBuf>,
}

impl FsResolver {
    pub fn from_env() -> Self {
        let search_path = env::var_os(SPEC_PATH_ENV)
            .map(|v| env::split_paths(&v).filter(|p| !p.as_os_str().is_empty()).collect())
            .unwrap_or_default();
        FsResolver { search_path }
    }
}

impl ImportResolver for FsResolver {
    fn resolve(&self, module: &str, importer: Option<&Path>) -> Result<ResolvedModule, String> {
        let local = importer.and_then(Path::parent).map(|d| d.join(module));
        let candidates = local
            .into_iter()
            .chain(self.search_path.iter().map(|d| d.join(module)))
            .chain(Path::new(module).is_absolute().then(|| PathBuf::from(module)));
        for candidate in candidates {
            if candidate.is_file() {
                let source = fs::read_to_string(&candidate).map_err(|e| format!("{}: {e}", candidate.display()))?;
                let id = fs::canonicalize(&candidate)
                    .unwrap_or_else(|_| candidate.clone())
                    .display()
                    .to_string();
                return Ok(ResolvedModule {
                    id,
                    source,
                    path: Some(candidate),
                });
            }
        }
        Err(format!("not found next to the importing file or in ${SPEC_PATH_ENV}"))
    }
}

/// In-memory modules keyed by import name.
#[derive(Debug, Clone, Default)]
pub struct MapResolver {
    pub modules: HashMap<String, String>,
}

impl MapResolver {
    pub fn new<K: Into<String>, V: Into<String>>(modules: impl IntoIterator<Item = (K, V)>) -> Self {
        MapResolver {
            modules: modules.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

impl ImportResolver for MapResolver {
    fn resolve(&self, module: &str, _importer: Option<&Path>) -> Result<ResolvedModule, String> {
        self.modules
            .get(module)
            .map(|source| ResolvedModule {
                id: module.to_string(),
                source: source.clone(),
                path: None,
            })
            .ok_or_else(|| "no such module".to_string())
    }
}

/// Rejects every import.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoImports;

impl ImportResolver for NoImports {
    fn resolve(&self, _module: &str, _importer: Option<&Path>) -> Result<ResolvedModule, String> {
        Err("imports are not available here".into())
    }
}
