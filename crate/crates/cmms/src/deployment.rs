//! Deployment files: the roster, VO filter, per-node policy files, signer
//! and timing, stored as canonical JSON next to the files it references.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use cmms_core::deploy::{
    spig_table, Deployment, ServiceNodeSpec, Timing, ADMIN, CA, DISCOVERY, MONITOR, REPOSITORY,
};
use cmms_core::nodes::NodeKind;
use cmms_core::policy::{GridConfig, ServiceId, StateId, StateSet, VoFilterConfig};
use cmms_core::signer::{derive_seed, Scheme, SignerContract};
use cmms_core::sim::NET;
use cmms_core::ErrorCode;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files;

pub const DEPLOYMENT_FILE: &str = "deployment.json";
pub const DEFAULT_SEED: u64 = 2009;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub address: String,
    pub kind: NodeKind,
    /// `host:port` for socket mode; port 0 picks a free one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<String>,
    /// Service nodes only, relative to the deployment file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_file: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub forward_routes: BTreeMap<ServiceId, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentFile {
    pub profile: String,
    pub grid: GridConfig,
    pub signer: Scheme,
    pub seed: u64,
    /// CA key pair file, relative to the deployment file.
    pub ca_key: String,
    pub roster: Vec<RosterEntry>,
    pub vo_filter: VoFilterConfig,
    pub default_states: StateSet,
    pub timing: Timing,
    pub state_names: BTreeMap<StateId, String>,
    pub service_names: BTreeMap<ServiceId, String>,
}

/// A loaded deployment file with every reference resolved.
#[derive(Debug, Clone)]
pub struct LoadedDeployment {
    pub file: DeploymentFile,
    pub deployment: Deployment,
    /// Socket-mode bind address per node.
    pub listen: BTreeMap<String, String>,
}

fn config(detail: impl Into<String>) -> Error {
    Error::new(ErrorCode::Config, detail)
}

fn entry(address: &str, kind: NodeKind) -> RosterEntry {
    RosterEntry {
        address: address.into(),
        kind,
        listen: None,
        policy_file: None,
        forward_routes: BTreeMap::new(),
    }
}

pub fn policy_path(address: &str) -> String {
    format!("policies/{address}.policy")
}

impl DeploymentFile {
    /// The SPIG profile as written by `init`.
    pub fn spig(scheme: Scheme, seed: u64) -> Self {
        let base = Deployment::spig(scheme, seed);
        let mut roster = vec![
            entry(CA, NodeKind::Ca),
            entry(REPOSITORY, NodeKind::Repository),
            entry(MONITOR, NodeKind::Monitor),
            entry(DISCOVERY, NodeKind::Discovery),
        ];
        for spec in &base.service_nodes {
            let mut e = entry(&spec.address, NodeKind::Service);
            e.policy_file = Some(policy_path(&spec.address));
            roster.push(e);
        }
        Self {
            profile: "spig".into(),
            grid: base.grid,
            signer: scheme,
            seed,
            ca_key: "keys/ca.json".into(),
            roster,
            vo_filter: base.vo_filter,
            default_states: base.default_states,
            timing: base.timing,
            state_names: base.state_names,
            service_names: base.service_names,
        }
    }

    /// Writes the deployment file, the SPIG policy files and the CA key.
    pub fn write_spig(dir: &Path, scheme: Scheme, seed: u64) -> Result<Self> {
        let file = Self::spig(scheme, seed);
        for e in &file.roster {
            if let Some(policy) = &e.policy_file {
                let mut text = format!("# {}: SPIG default policy\n", e.address);
                text.push_str(&cmms_core::policy::render_policy_table(&spig_table()));
                files::write_text(&dir.join(policy), &text)?;
            }
        }
        let ca_keys = scheme.generate(derive_seed(seed, CA));
        files::save_key_file(&ca_keys, &dir.join(&file.ca_key))?;
        files::save_json(&file, &dir.join(DEPLOYMENT_FILE))?;
        Ok(file)
    }

    pub fn load(dir: &Path) -> Result<LoadedDeployment> {
        let file: DeploymentFile = files::load_json(&dir.join(DEPLOYMENT_FILE))?;
        file.resolve(dir)
    }

    /// Checks every invariant and loads the referenced files.
    pub fn resolve(self, dir: &Path) -> Result<LoadedDeployment> {
        let grid = self.grid;
        grid.check_states(self.default_states)?;
        grid.check_states(self.vo_filter.considered_states())?;

        let mut seen = BTreeSet::new();
        for e in &self.roster {
            if [ADMIN, NET].contains(&e.address.as_str()) || e.address.is_empty() {
                return Err(config(format!("reserved address {:?}", e.address)));
            }
            if !seen.insert(e.address.as_str()) {
                return Err(config(format!("duplicate address {}", e.address)));
            }
            if e.kind != NodeKind::Service && (e.policy_file.is_some() || !e.forward_routes.is_empty()) {
                return Err(config(format!("{} is not a service node", e.address)));
            }
        }
        for (address, kind) in [
            (CA, NodeKind::Ca),
            (REPOSITORY, NodeKind::Repository),
            (MONITOR, NodeKind::Monitor),
            (DISCOVERY, NodeKind::Discovery),
        ] {
            let count = self.roster.iter().filter(|e| e.kind == kind).count();
            let here = self.roster.iter().any(|e| e.kind == kind && e.address == address);
            if count != 1 || !here {
                return Err(config(format!("roster needs exactly one {kind:?} at {address}")));
            }
        }
        if let Some(user) = self.roster.iter().find(|e| e.kind == NodeKind::User) {
            return Err(config(format!(
                "{} is a user; users join with `register`",
                user.address
            )));
        }

        let services: BTreeSet<&str> = self
            .roster
            .iter()
            .filter(|e| e.kind == NodeKind::Service)
            .map(|e| e.address.as_str())
            .collect();
        let mut service_nodes = Vec::new();
        for e in self.roster.iter().filter(|e| e.kind == NodeKind::Service) {
            let policy = e
                .policy_file
                .as_ref()
                .ok_or_else(|| config(format!("{} has no policy file", e.address)))?;
            if let Some((id, to)) = e
                .forward_routes
                .iter()
                .find(|(_, to)| !services.contains(to.as_str()) || *to == &e.address)
            {
                return Err(config(format!(
                    "{} forwards service {id} to {to}, which is not another service node",
                    e.address
                )));
            }
            service_nodes.push(ServiceNodeSpec {
                address: e.address.clone(),
                table: files::load_policy_file(&dir.join(policy), &grid)?,
                forward_routes: e.forward_routes.clone(),
            });
        }

        let ca_keys = files::load_key_file(&dir.join(&self.ca_key))?;
        if ca_keys.scheme != self.signer {
            return Err(config("CA key scheme differs from the deployment signer"));
        }
        let listen = self
            .roster
            .iter()
            .map(|e| {
                let addr = e.listen.clone().unwrap_or_else(|| "127.0.0.1:0".into());
                (e.address.clone(), addr)
            })
            .collect();
        let deployment = Deployment {
            grid,
            scheme: self.signer,
            seed: self.seed,
            vo_filter: self.vo_filter.clone(),
            default_states: self.default_states,
            timing: self.timing,
            service_nodes,
            users: Vec::new(),
            state_names: self.state_names.clone(),
            service_names: self.service_names.clone(),
            keys: BTreeMap::from([(CA.to_string(), ca_keys)]),
        };
        Ok(LoadedDeployment {
            file: self,
            deployment,
            listen,
        })
    }
}

/// Path of the deployment file inside `dir`.
pub fn deployment_path(dir: &Path) -> PathBuf {
    dir.join(DEPLOYMENT_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spig_file_round_trips_to_the_builtin_profile() {
        let dir = tempfile::tempdir().unwrap();
        DeploymentFile::write_spig(dir.path(), Scheme::Digest, 7).unwrap();
        let loaded = DeploymentFile::load(dir.path()).unwrap();
        let mut builtin = Deployment::spig(Scheme::Digest, 7);
        // The written key equals the derived one, so the override is inert.
        assert_eq!(loaded.deployment.keypair(CA), builtin.keypair(CA));
        builtin.keys = loaded.deployment.keys.clone();
        assert_eq!(loaded.deployment, builtin);
        assert_eq!(loaded.listen["vo-serv-1"], "127.0.0.1:0");
    }

    #[test]
    fn file_is_canonical_json() {
        let dir = tempfile::tempdir().unwrap();
        let file = DeploymentFile::write_spig(dir.path(), Scheme::Ed25519, 1).unwrap();
        let text = files::read_text(&deployment_path(dir.path())).unwrap();
        assert_eq!(text, files::canonical_line(&file));
        assert!(text.contains("\"signer\":\"ed25519\""));
    }

    fn broken(edit: impl FnOnce(&mut DeploymentFile)) -> ErrorCode {
        let dir = tempfile::tempdir().unwrap();
        let mut file = DeploymentFile::write_spig(dir.path(), Scheme::Digest, 1).unwrap();
        edit(&mut file);
        file.resolve(dir.path()).unwrap_err().code
    }

    #[test]
    fn invalid_files_are_rejected() {
        assert_eq!(broken(|f| f.roster.remove(0).address.clear()), ErrorCode::Config);
        assert_eq!(broken(|f| f.roster[4].address = "admin".into()), ErrorCode::Config);
        assert_eq!(
            broken(|f| {
                let dup = f.roster[4].clone();
                f.roster.push(dup)
            }),
            ErrorCode::Config
        );
        assert_eq!(broken(|f| f.roster[4].policy_file = Some("none.policy".into())), ErrorCode::Io);
        assert_eq!(broken(|f| f.roster[4].policy_file = None), ErrorCode::Config);
        assert_eq!(
            broken(|f| {
                f.roster[4]
                    .forward_routes
                    .insert(ServiceId::new(1).unwrap(), "ca".into());
            }),
            ErrorCode::Config
        );
        assert_eq!(broken(|f| f.default_states = StateSet::of(&[9])), ErrorCode::Range);
        assert_eq!(broken(|f| f.signer = Scheme::Ed25519), ErrorCode::Config);
        assert_eq!(broken(|f| f.ca_key = "keys/none.json".into()), ErrorCode::Io);
    }

    #[test]
    fn imposed_outside_considered_fails_to_parse() {
        let dir = tempfile::tempdir().unwrap();
        DeploymentFile::write_spig(dir.path(), Scheme::Digest, 1).unwrap();
        let path = deployment_path(dir.path());
        let text = files::read_text(&path).unwrap().replace(
            "\"imposed_list\":{}",
            "\"imposed_list\":{\"u\":[3]}",
        );
        let text = text.replace("\"considered_states\":[1,2,3,4,5,6,7,8]", "\"considered_states\":[1,2]");
        files::write_text(&path, &text).unwrap();
        assert_eq!(DeploymentFile::load(dir.path()).unwrap_err().code, ErrorCode::Schema);
    }
}
