//! Line-oriented policy text.
//!
//! ```text
//! # comment
//! 7: 3,4        state 7 grants services 3 and 4
//! 5 = 94        state 5 stores the raw entry 94
//! ```
//!
//! The raw form exists so that entries with bits above the service mask, or
//! with no services at all, survive a save/load cycle unchanged.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};

use super::{
    encode_services, GridConfig, PolicyEntry, PolicyError, PolicyTable, ServiceSet, StateId,
};

fn number(token: &str, what: &str) -> Result<u64, PolicyError> {
    let token = token.trim();
    if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
        return Err(PolicyError::Parse(format!("expected {what}, found {token:?}")));
    }
    // Digits only, so the sole failure left is overflow.
    token
        .parse::<u64>()
        .map_err(|_| PolicyError::Parse(format!("{what} {token} is too large")))
}

/// Parses one `<state> : <service>, <service>, ...` policy.
pub fn parse_policy(text: &str, cfg: &GridConfig) -> Result<(StateId, ServiceSet), PolicyError> {
    let (state, list) = text
        .split_once(':')
        .ok_or_else(|| PolicyError::Parse("missing ':' after state".to_string()))?;
    let state = cfg.state(number(state, "state")?)?;
    if list.trim().is_empty() {
        return Err(PolicyError::Parse(format!(
            "state {state} has an empty service list"
        )));
    }
    let mut services = ServiceSet::empty();
    for token in list.split(',') {
        let service = cfg.service(number(token, "service")?)?;
        if !services.insert(service) {
            return Err(PolicyError::DuplicateService(service.get()));
        }
    }
    Ok((state, services))
}

/// Renders a policy in the form [`parse_policy`] accepts.
pub fn render_policy(state: StateId, services: ServiceSet) -> String {
    let mut out = format!("{state}:");
    for (i, service) in services.iter().enumerate() {
        out.push_str(if i == 0 { " " } else { "," });
        out.push_str(&service.to_string());
    }
    out
}

fn parse_line(line: &str, cfg: &GridConfig) -> Result<(StateId, PolicyEntry), PolicyError> {
    if let Some((state, raw)) = line.split_once('=') {
        let state = cfg.state(number(state, "state")?)?;
        let entry = PolicyEntry::new(number(raw, "policy entry")?, cfg)?;
        return Ok((state, entry));
    }
    let (state, services) = parse_policy(line, cfg)?;
    Ok((state, encode_services(services, cfg)?))
}

/// Parses a whole policy file. Blank lines and lines starting with `#` are
/// skipped; a state may appear on at most one line.
pub fn parse_policy_table(text: &str, cfg: &GridConfig) -> Result<PolicyTable, PolicyError> {
    let mut table = PolicyTable::new(*cfg);
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let at_line = |inner| PolicyError::AtLine {
            line: idx + 1,
            inner: Box::new(inner),
        };
        let (state, entry) = parse_line(trimmed, cfg).map_err(at_line)?;
        if table.get(state).is_some() {
            return Err(at_line(PolicyError::DuplicateState(state.get())));
        }
        table.set(state, entry.raw()).map_err(at_line)?;
    }
    Ok(table)
}

/// Renders a table one line per state, ascending. Entries that are a plain
/// non-empty service mask use the service-list form; everything else uses the
/// raw form.
pub fn render_policy_table(table: &PolicyTable) -> String {
    let mask = table.config().service_mask();
    let mut out = String::new();
    for (state, entry) in table.iter() {
        let raw = entry.raw();
        if raw != 0 && raw & !mask == 0 {
            out.push_str(&render_policy(state, ServiceSet::from_bits(raw)));
        } else {
            out.push_str(&format!("{state} = {raw}"));
        }
        out.push('\n');
    }
    out
}
