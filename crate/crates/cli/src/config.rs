//! Configuration files, flag overrides and file plumbing shared by the commands.

use std::fs;
use std::path::{Path, PathBuf};

use flowmapf_core::cliffmap::{load_cliffmap, CliffMap, FitConfig};
use flowmapf_core::lifelong::SimulationConfig;
use flowmapf_core::uasim::{ConflictConfig, UAConfig};
use flowmapf_core::world::parse_map;
use flowmapf_core::{CbsConfig, GridMap};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable naming the directory relative output paths live under.
pub const OUTPUT_ROOT_ENV: &str = "FLOWMAPF_OUTPUT_ROOT";

/// Settings of the single-run commands. Every field can come from a JSON
/// config file; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub map: Option<PathBuf>,
    pub scen: Option<PathBuf>,
    pub agents: Option<usize>,
    pub cliffmap: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    /// UA configuration, inline or as a path to a UAConfig file.
    pub ua: Option<UaSource>,
    /// UA trajectory CSV evaluated by `eval-conflicts`.
    pub uas: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub solution: Option<PathBuf>,
    pub task_seed: Option<u64>,
    pub step_cost: Option<f64>,
    pub fit: FitConfig,
    pub cbs: CbsConfig,
    pub sim: SimulationConfig,
    pub conflict: ConflictConfig,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UaSource {
    Path(PathBuf),
    Inline(Box<UAConfig>),
}

impl UaSource {
    pub fn load(&self) -> CliResult<UAConfig> {
        match self {
            UaSource::Inline(cfg) => Ok((**cfg).clone()),
            UaSource::Path(p) => load_json(p),
        }
    }
}

impl Settings {
    /// Reads a config file; relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut s: Settings = load_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut s.map,
            &mut s.scen,
            &mut s.cliffmap,
            &mut s.trajectories,
            &mut s.uas,
            &mut s.log,
            &mut s.solution,
        ]
        .into_iter()
        .flatten()
        {
            *p = base.join(&*p);
        }
        if let Some(UaSource::Path(p)) = &mut s.ua {
            *p = base.join(&*p);
        }
        Ok(s)
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Settings::default()), Settings::load)
    }

    pub fn step_cost(&self) -> f64 {
        self.step_cost.unwrap_or(1.0)
    }
}

/// Returns `value` or fails naming the missing flag.
pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| {
        CliError::input(format!(
            "missing --{flag} (or `{}` in the config file)",
            flag.replace('-', "_")
        ))
    })
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Parses a map file; the map is named after the file stem.
pub fn load_map(path: &Path) -> CliResult<GridMap> {
    let mut map = parse_map(&read_text(path)?).map_err(|e| CliError::at(path, e))?;
    if let Some(stem) = path.file_stem() {
        map.set_name(stem.to_string_lossy());
    }
    Ok(map)
}

pub fn load_cliff(path: &Path, map: &GridMap) -> CliResult<CliffMap> {
    let cliff = load_cliffmap(&read_text(path)?).map_err(|e| CliError::at(path, e))?;
    if !cliff.fits(map) {
        return Err(CliError::input(format!(
            "{}: motion map is {}x{} but the grid is {}x{}",
            path.display(),
            cliff.width(),
            cliff.height(),
            map.width(),
            map.height()
        )));
    }
    Ok(cliff)
}

/// Fails early when an input file does not exist.
pub fn check_exists(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!(
            "{} does not exist",
            path.display()
        )))
    }
}

/// Directory results are written to.
#[derive(Debug, Clone)]
pub struct OutputDir {
    path: PathBuf,
}

impl OutputDir {
    /// `dir` (default `.`) is joined onto `root` when it is relative.
    pub fn resolve(root: Option<&Path>, dir: Option<&Path>) -> Self {
        let dir = dir.unwrap_or(Path::new("."));
        let path = match root {
            Some(root) if dir.is_relative() => root.join(dir),
            _ => dir.to_path_buf(),
        };
        OutputDir { path }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn create(&self) -> CliResult<()> {
        fs::create_dir_all(&self.path)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", self.path.display())))
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        self.create()?;
        let path = self.file(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("values serialise");
    s.push('\n');
    s
}
