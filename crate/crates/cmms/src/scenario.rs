//! Scenario files: a simulator configuration plus a script of admin steps
//! and raw envelopes, optionally pinned to an expected trace.

use std::path::{Path, PathBuf};

use cmms_core::deploy::Deployment;
use cmms_core::protocol::Envelope;
use cmms_core::session::{AdminStep, Session, SessionError};
use cmms_core::sim::{diff_traces, SimConfig, SimError, Trace, TraceDiff};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::files;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptItem {
    Step(AdminStep),
    /// Sent as is, apart from `sent_at`.
    Inject(Envelope),
}

impl Serialize for ScriptItem {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ScriptItem::Step(step) => step.serialize(serializer),
            ScriptItem::Inject(env) => {
                let mut map = serde_json::Map::new();
                map.insert("inject".into(), env.to_value());
                map.serialize(serializer)
            }
        }
    }
}

impl<'de> Deserialize<'de> for ScriptItem {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        match value {
            Value::Object(mut map) if map.contains_key("inject") => {
                if map.len() != 1 {
                    return Err(D::Error::custom("an inject item has no other fields"));
                }
                let env = map.remove("inject").expect("checked above");
                Envelope::from_value(env)
                    .map(ScriptItem::Inject)
                    .map_err(D::Error::custom)
            }
            other => AdminStep::deserialize(other)
                .map(ScriptItem::Step)
                .map_err(D::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub config: SimConfig,
    pub script: Vec<ScriptItem>,
    /// Relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_trace: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub trace: Trace,
    /// Steps that ended in a protocol error, by script index.
    pub failures: Vec<(usize, SessionError)>,
    /// Set when the simulator gave up; the script stopped there.
    pub halted: Option<SimError>,
    /// Users that joined during the run.
    pub users: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum Verdict {
    /// No expected trace declared.
    Unchecked,
    Match,
    Mismatch(Vec<TraceDiff>),
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        files::load_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        files::save_json(self, path)
    }

    pub fn expected_path(&self, scenario_path: &Path) -> Option<PathBuf> {
        let base = scenario_path.parent().unwrap_or(Path::new("."));
        self.expected_trace.as_ref().map(|t| base.join(t))
    }

    /// Runs the script against a fresh network built from `deployment`.
    pub fn run(&self, deployment: &Deployment) -> Result<ScenarioRun> {
        let mut session = Session::new(deployment.clone(), &self.config)?;
        let mut failures = Vec::new();
        let mut halted = None;
        for (i, item) in self.script.iter().enumerate() {
            let result = match item {
                ScriptItem::Step(step) => session.apply(step),
                ScriptItem::Inject(env) => session.inject(env.clone()),
            };
            match result {
                Ok(_) => {}
                Err(SessionError::Sim(e)) => {
                    halted = Some(e);
                    break;
                }
                Err(e) => failures.push((i, e)),
            }
        }
        Ok(ScenarioRun {
            trace: session.simulator().trace(),
            failures,
            halted,
            users: session.deployment().users.clone(),
        })
    }

    /// Compares a run against the declared expected trace.
    pub fn check(&self, scenario_path: &Path, run: &ScenarioRun) -> Result<Verdict> {
        let Some(path) = self.expected_path(scenario_path) else {
            return Ok(Verdict::Unchecked);
        };
        let expected = files::load_trace(&path)?;
        let diffs = diff_traces(&expected, &run.trace);
        Ok(if diffs.is_empty() {
            Verdict::Match
        } else {
            Verdict::Mismatch(diffs)
        })
    }
}

/// Scenario files in `dir`, sorted by name.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let read = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in read {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "scn") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Scenarios shipped with the tool, as `(file name, contents)`.
pub const BUNDLED: [(&str, &str); 4] = [
    ("spig_happy.scn", include_str!("../scenarios/spig_happy.scn")),
    ("spig_happy.trace", include_str!("../scenarios/spig_happy.trace")),
    ("suspend_midflight.scn", include_str!("../scenarios/suspend_midflight.scn")),
    ("suspend_midflight.trace", include_str!("../scenarios/suspend_midflight.trace")),
];

#[cfg(test)]
mod tests {
    use super::*;
    use cmms_core::signer::Scheme;

    #[test]
    fn script_items_parse_both_shapes() {
        let text = r#"{"script":[{"step":"bootstrap"},{"step":"register","user":"u","states":[5,6]},
            {"inject":{"version":1,"msg_id":1,"correlation_id":null,"sender":"admin","recipient":"ca",
            "sent_at":0,"msg_type":"ACK","payload":{}}}]}"#;
        let s: Scenario = serde_json::from_str(text).unwrap();
        assert_eq!(s.script.len(), 3);
        assert!(matches!(s.script[2], ScriptItem::Inject(_)));
        assert_eq!(s.config, SimConfig::default());
        let again: Scenario = serde_json::from_str(&files::canonical_line(&s)).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn bad_items_are_rejected() {
        for text in [
            r#"{"script":[{"step":"launch"}]}"#,
            r#"{"script":[{"inject":{"version":1}}]}"#,
            r#"{"script":[{"inject":1,"step":"bootstrap"}]}"#,
            r#"{"script":[],"extra":1}"#,
        ] {
            assert!(serde_json::from_str::<Scenario>(text).is_err(), "{text}");
        }
    }

    #[test]
    fn bundled_scenarios_parse() {
        for (name, text) in BUNDLED {
            if name.ends_with(".scn") {
                let s: Scenario = serde_json::from_str(text).unwrap();
                assert!(s.expected_trace.is_some(), "{name}");
            }
        }
    }

    #[test]
    fn protocol_failures_do_not_stop_the_script() {
        let s: Scenario = serde_json::from_str(
            r#"{"script":[{"step":"bootstrap"},{"step":"set_states","user":"ghost","states":[2]},{"step":"register","user":"u"}]}"#,
        )
        .unwrap();
        let run = s.run(&Deployment::spig(Scheme::Digest, 1)).unwrap();
        assert_eq!(run.failures.len(), 1);
        assert_eq!(run.failures[0].0, 1);
        assert_eq!(run.users, vec!["u".to_string()]);
        assert!(run.halted.is_none());
    }
}
