//! A deployment directory: the deployment file, its policy files and keys,
//! bundled scenarios, and `history.jsonl`, the admin steps applied so far.
//!
//! There is no other persistent state. Opening a workspace replays the
//! history through a fresh simulator, which reproduces every certificate,
//! serial and tick exactly.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use cmms_core::session::{AdminStep, Session, SessionError};
use cmms_core::signer::Scheme;
use cmms_core::sim::{SimConfig, TraceEntry};
use cmms_core::ErrorCode;

use crate::deployment::{deployment_path, DeploymentFile, LoadedDeployment};
use crate::error::{Error, Result};
use crate::files;
use crate::scenario::BUNDLED;

pub const HISTORY_FILE: &str = "history.jsonl";
pub const SCENARIO_DIR: &str = "scenarios";

/// Generous, since a long history runs in one simulator.
const SESSION_TICK_LIMIT: u64 = 1_000_000_000;

pub struct Workspace {
    dir: PathBuf,
    loaded: LoadedDeployment,
}

impl Workspace {
    /// Writes a fresh SPIG deployment into `dir`. An existing deployment is
    /// only replaced with `force`, which also clears the history.
    pub fn init(dir: &Path, profile: &str, scheme: Scheme, seed: u64, force: bool) -> Result<Self> {
        if profile != "spig" {
            return Err(Error::new(ErrorCode::Config, format!("unknown profile {profile:?}")));
        }
        if deployment_path(dir).exists() && !force {
            return Err(Error::new(
                ErrorCode::Exists,
                format!("{} already exists; pass --force to replace it", deployment_path(dir).display()),
            ));
        }
        DeploymentFile::write_spig(dir, scheme, seed)?;
        let history = dir.join(HISTORY_FILE);
        if history.exists() {
            std::fs::remove_file(&history).map_err(|e| Error::io(&history, e))?;
        }
        for (name, text) in BUNDLED {
            files::write_text(&dir.join(SCENARIO_DIR).join(name), text)?;
        }
        Self::open(dir)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        if !deployment_path(dir).exists() {
            return Err(Error::new(
                ErrorCode::Io,
                format!("no deployment in {}; run `cmms init` first", dir.display()),
            ));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            loaded: DeploymentFile::load(dir)?,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn loaded(&self) -> &LoadedDeployment {
        &self.loaded
    }

    pub fn history(&self) -> Result<Vec<AdminStep>> {
        let path = self.dir.join(HISTORY_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = files::read_text(&path)?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::schema(&path, format!("line {}: {e}", i + 1)))
            })
            .collect()
    }

    /// A session with the whole history replayed. The network is
    /// bootstrapped on first use.
    pub fn session(&self) -> Result<Session> {
        let cfg = SimConfig {
            seed: self.loaded.file.seed,
            tick_limit: SESSION_TICK_LIMIT,
            ..SimConfig::default()
        };
        let mut session = Session::new(self.loaded.deployment.clone(), &cfg)?;
        let history = self.history()?;
        if history.is_empty() {
            self.apply(&mut session, &AdminStep::Bootstrap)?;
        }
        for step in &history {
            match session.apply(step) {
                Ok(_) | Err(SessionError::Protocol { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(session)
    }

    /// Applies `step` and records it, whether or not it succeeds.
    pub fn apply(&self, session: &mut Session, step: &AdminStep) -> Result<Vec<TraceEntry>> {
        let result = session.apply(step);
        let path = self.dir.join(HISTORY_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.write_all(files::canonical_line(step).as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        Ok(result?)
    }
}
