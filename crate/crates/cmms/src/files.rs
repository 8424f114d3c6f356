//! On-disk formats: policy files, certificate and CRL files, key files and
//! trace files. JSON files are canonical JSON plus one trailing LF.

use std::fs;
use std::path::Path;

use cmms_core::canonical::to_canonical_vec;
use cmms_core::certs::{Certificate, Crl};
use cmms_core::policy::{parse_policy_table, render_policy_table, GridConfig, PolicyTable};
use cmms_core::signer::Keypair;
use cmms_core::sim::{parse_trace, render_trace, Trace};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `text`, creating missing parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn canonical_line<T: Serialize>(value: &T) -> String {
    let bytes = to_canonical_vec(value).expect("file types always serialize");
    let mut text = String::from_utf8(bytes).expect("canonical JSON is UTF-8");
    text.push('\n');
    text
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_text(path, &canonical_line(value))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, e))
}

pub fn load_policy_file(path: &Path, grid: &GridConfig) -> Result<PolicyTable> {
    let text = read_text(path)?;
    parse_policy_table(&text, grid).map_err(|e| Error::from(e).context(path.display()))
}

pub fn save_policy_file(table: &PolicyTable, path: &Path) -> Result<()> {
    write_text(path, &render_policy_table(table))
}

pub fn save_cert_file(cert: &Certificate, path: &Path) -> Result<()> {
    save_json(cert, path)
}

pub fn load_cert_file(path: &Path) -> Result<Certificate> {
    load_json(path)
}

pub fn save_crl_file(crl: &Crl, path: &Path) -> Result<()> {
    save_json(crl, path)
}

pub fn load_crl_file(path: &Path) -> Result<Crl> {
    load_json(path)
}

pub fn save_key_file(keys: &Keypair, path: &Path) -> Result<()> {
    save_json(keys, path)
}

pub fn load_key_file(path: &Path) -> Result<Keypair> {
    load_json(path)
}

pub fn dump_trace(trace: &Trace, path: &Path) -> Result<()> {
    write_text(path, &render_trace(trace))
}

pub fn load_trace(path: &Path) -> Result<Trace> {
    let text = read_text(path)?;
    parse_trace(&text).map_err(|e| Error::from(e).context(path.display()))
}
