//! Config documents and `key=value` overrides.
//!
//! A config file is either JSON or a key-value document with one dotted
//! `key = value` per line (`#` starts a comment). Values that parse as JSON
//! are taken as such, anything else as a string, so `seeds.pc_on=7`,
//! `iterations=["PC_off","PC_on"]` and `initial_policy=uniform` all work.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

#[derive(Debug)]
pub struct OverrideError(pub String);

impl std::fmt::Display for OverrideError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

/// Sets `path` (dot separated) inside `doc`, creating objects as needed.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), OverrideError> {
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').map(str::trim).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(OverrideError(format!("malformed key `{path}`")));
    }
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        node = node
            .as_object_mut()
            .expect("just made an object")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    if !node.is_object() {
        *node = Value::Object(Map::new());
    }
    node.as_object_mut()
        .expect("just made an object")
        .insert(keys[keys.len() - 1].to_owned(), value);
    Ok(())
}

/// Applies `key=value` assignments in order.
pub fn apply(doc: &mut Value, assignments: &[String]) -> Result<(), OverrideError> {
    for a in assignments {
        let (key, value) = a
            .split_once('=')
            .ok_or_else(|| OverrideError(format!("expected key=value, got `{a}`")))?;
        set_path(doc, key.trim(), parse_value(value))?;
    }
    Ok(())
}

fn parse_key_value(text: &str) -> Result<Value, OverrideError> {
    let mut doc = Value::Object(Map::new());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| OverrideError(format!("line {}: expected key = value", n + 1)))?;
        set_path(&mut doc, key.trim(), parse_value(value))
            .map_err(|e| OverrideError(format!("line {}: {e}", n + 1)))?;
    }
    Ok(doc)
}

pub fn parse_document(text: &str) -> Result<Value, OverrideError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        serde_json::from_str(text).map_err(|e| OverrideError(format!("config JSON: {e}")))
    } else {
        parse_key_value(text)
    }
}

/// Loads an optional config file, then applies overrides.
pub fn load(path: Option<&Path>, base: Value, assignments: &[String]) -> Result<Value, OverrideError> {
    let mut doc = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| OverrideError(format!("{}: {e}", p.display())))?;
            parse_document(&text)?
        }
        None => base,
    };
    apply(&mut doc, assignments)?;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nested_set() {
        let mut doc = json!({"a": {"b": 1}});
        apply(&mut doc, &["a.c=2".into(), "d.e.f=x".into(), "a.b=[1,2]".into()]).unwrap();
        assert_eq!(doc, json!({"a": {"b": [1, 2], "c": 2}, "d": {"e": {"f": "x"}}}));
        assert!(apply(&mut doc, &["nokey".into()]).is_err());
        assert!(apply(&mut doc, &["a..b=1".into()]).is_err());
    }

    #[test]
    fn key_value_document() {
        let doc = parse_document("# comment\nspace.kind = synthetic\nspace.n_prompts = 4\niterations = [\"PC_on\"]\n").unwrap();
        assert_eq!(
            doc,
            json!({"space": {"kind": "synthetic", "n_prompts": 4}, "iterations": ["PC_on"]})
        );
        assert!(parse_document("oops").is_err());
    }
}
