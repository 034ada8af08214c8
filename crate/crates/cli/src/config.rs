//! Flat key=value config files with `[train]` / `[certify]` / `[eval]`
//! sections, and the flag-beats-file resolution the commands build on.
//!
//! The format is deliberately tiny: `#` comments, blank lines, section
//! headers in brackets, `key = value` pairs. Every failure names the line,
//! section or key involved, because a sweep that dies with a bare parse
//! error wastes a training run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use smoothcert::data::{load_idx, make_blobs, Dataset};
use smoothcert::Error;

/// Command-level failure, split by exit code: validation problems exit 1,
/// I/O problems exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

// ---------------------------------------------------------------------------
// File parsing
// ---------------------------------------------------------------------------

/// Parsed config file: section name -> key -> value, last write wins.
#[derive(Debug, Default)]
pub struct FileConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl FileConfig {
    /// Empty config, used when no `--config` was given.
    pub fn empty() -> Self {
        FileConfig::default()
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        FileConfig::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                let name = name.trim();
                if name.is_empty() {
                    return Err(validation(format!("{origin} line {lineno}: empty section name")));
                }
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(validation(format!(
                    "{origin} line {lineno}: expected key = value, got '{line}'"
                )));
            };
            let Some(section) = &current else {
                return Err(validation(format!(
                    "{origin} line {lineno}: key '{}' appears before any [section]",
                    key.trim()
                )));
            };
            sections
                .get_mut(section)
                .expect("current section exists")
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig { sections })
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    /// Rejects keys nobody reads: a typo in a config file should fail the
    /// run, not silently fall back to a default.
    pub fn check_known_keys(&self, section: &str, known: &[&str]) -> CliResult<()> {
        let Some(keys) = self.sections.get(section) else {
            return Ok(());
        };
        for key in keys.keys() {
            if !known.contains(&key.as_str()) {
                return Err(validation(format!(
                    "unknown key '{key}' in [{section}] (known keys: {})",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Flag/file/default resolution
// ---------------------------------------------------------------------------

/// Resolves one section's settings with precedence flag > file > default,
/// wrapping every parse failure with the section and key it belongs to.
pub struct Resolver<'a> {
    file: &'a FileConfig,
    section: &'static str,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a FileConfig, section: &'static str) -> Self {
        Resolver { file, section }
    }

    /// Flag value if set, else the file value parsed as `T`, else `default`.
    pub fn get<T>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get_opt(flag, key)?.unwrap_or(default))
    }

    /// As [`Resolver::get`] but with no default.
    pub fn get_opt<T>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(self.section, key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                validation(format!("invalid {key} in [{}]: '{raw}' ({e})", self.section))
            }),
        }
    }
}

/// Parses a comma-separated list, naming `what` on failure.
pub fn parse_list<T>(raw: &str, what: &str) -> CliResult<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    if raw.trim().is_empty() {
        return Err(validation(format!("{what} is empty")));
    }
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse::<T>()
                .map_err(|e| validation(format!("invalid {what} entry '{}': {e}", part.trim())))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dataset selection
// ---------------------------------------------------------------------------

/// Dataset flags shared by train, certify, sweep and compare-rs. All have
/// file-key counterparts in the command's section.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct DatasetArgs {
    /// Dataset kind: 'blobs' or 'idx'.
    #[arg(long)]
    pub dataset: Option<String>,
    /// IDX image file (dataset = idx).
    #[arg(long)]
    pub idx_images: Option<String>,
    /// IDX label file (dataset = idx).
    #[arg(long)]
    pub idx_labels: Option<String>,
    /// Keep only the first N examples.
    #[arg(long)]
    pub limit: Option<usize>,
}

pub const DATASET_KEYS: &[&str] = &[
    "dataset",
    "idx_images",
    "idx_labels",
    "limit",
    "blobs_n_per_class",
    "blobs_classes",
    "blobs_dim",
    "blobs_centers_scale",
    "blobs_noise_std",
    "blobs_seed",
];

/// Builds the dataset a section points at. Blobs geometry lives in file
/// keys only; the common switches have flags.
pub fn resolve_dataset(args: &DatasetArgs, resolver: &Resolver) -> CliResult<Dataset> {
    let kind = resolver.get(args.dataset.clone(), "dataset", "blobs".to_string())?;
    match kind.as_str() {
        "blobs" => {
            let n_per_class = resolver.get(None, "blobs_n_per_class", 50usize)?;
            let classes = resolver.get(None, "blobs_classes", 2usize)?;
            let dim = resolver.get(None, "blobs_dim", 2usize)?;
            let centers_scale = resolver.get(None, "blobs_centers_scale", 0.7f64)?;
            let noise_std = resolver.get(None, "blobs_noise_std", 0.08f64)?;
            let seed = resolver.get(None, "blobs_seed", 1u64)?;
            let mut data = make_blobs(n_per_class, classes, dim, centers_scale, noise_std, seed)?;
            if let Some(limit) = resolver.get_opt(args.limit, "limit")? {
                data = truncate(data, limit)?;
            }
            Ok(data)
        }
        "idx" => {
            let images = resolver
                .get_opt(args.idx_images.clone(), "idx_images")?
                .ok_or_else(|| validation("idx_images is required when dataset = idx"))?;
            let labels = resolver
                .get_opt(args.idx_labels.clone(), "idx_labels")?
                .ok_or_else(|| validation("idx_labels is required when dataset = idx"))?;
            let limit = resolver.get_opt(args.limit, "limit")?;
            Ok(load_idx(Path::new(&images), Path::new(&labels), limit)?)
        }
        other => Err(validation(format!(
            "invalid dataset '{other}' (expected blobs or idx)"
        ))),
    }
}

fn truncate(data: Dataset, limit: usize) -> CliResult<Dataset> {
    if limit == 0 || limit >= data.len() {
        if limit == 0 {
            return Err(validation("limit must be positive"));
        }
        return Ok(data);
    }
    let features = (0..limit)
        .flat_map(|i| data.feature_row(i).to_vec())
        .collect();
    let labels = (0..limit).map(|i| data.label(i)).collect();
    Ok(Dataset::new(
        data.name().to_string(),
        features,
        labels,
        data.num_features(),
        data.num_classes(),
    )?)
}
