//! Tool configuration files; see `docs/schemas/config.schema.json`.

use std::path::{Path, PathBuf};

use crosscheck::backend::EndpointKind;
use crosscheck::ensemble::EnsembleConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// File representation: a schema version plus the full ensemble
/// configuration. Reference model paths are kept as written; they resolve
/// against the config file's directory at run time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolConfig {
    pub schema_version: u32,
    #[serde(flatten)]
    pub ensemble: EnsembleConfig,
}

/// Load, parse and validate a config file. Errors carry either the JSON
/// position (parse errors) or the offending field path.
pub fn load_config(path: &Path) -> Result<(ToolConfig, PathBuf), CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    reject_unknown_fields(&raw).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let config: ToolConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    if config.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(CliError::usage(format!(
            "config {}: schema_version: unsupported version {}, expected {CONFIG_SCHEMA_VERSION}",
            path.display(),
            config.schema_version
        )));
    }
    config
        .ensemble
        .validate()
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    for (i, endpoint) in config.ensemble.endpoints.iter().enumerate() {
        if let EndpointKind::Remote { auth_token_env: Some(var), .. } = &endpoint.kind {
            if std::env::var(var).is_err() {
                return Err(CliError::usage(format!(
                    "config {}: endpoints[{i}].auth_token_env: environment variable {var} is not set",
                    path.display()
                )));
            }
        }
    }
    let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    Ok((config, base_dir))
}

/// A typo'd field silently falling back to its default would be a security
/// hazard in this config, so unknown keys are errors. Done by hand because
/// serde's `deny_unknown_fields` cannot see through the flattened layout.
fn reject_unknown_fields(raw: &serde_json::Value) -> Result<(), String> {
    const TOP: &[&str] = &[
        "schema_version", "endpoints", "context_mode", "generation", "outlier_k", "quorum", "normalization",
    ];
    const GENERATION: &[&str] = &["max_tokens", "temperature", "seed"];
    const ENDPOINT_REFERENCE: &[&str] = &["id", "kind", "model_file", "timeout_ms", "transport_retry"];
    const ENDPOINT_REMOTE: &[&str] =
        &["id", "kind", "base_url", "model_name", "auth_token_env", "timeout_ms", "transport_retry"];

    let check = |object: &serde_json::Value, allowed: &[&str], where_: &str| -> Result<(), String> {
        if let Some(map) = object.as_object() {
            for key in map.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(format!("{where_}: unknown field {key:?}"));
                }
            }
        }
        Ok(())
    };
    check(raw, TOP, "top level")?;
    if let Some(generation) = raw.get("generation") {
        check(generation, GENERATION, "generation")?;
    }
    if let Some(endpoints) = raw.get("endpoints").and_then(|e| e.as_array()) {
        for (i, endpoint) in endpoints.iter().enumerate() {
            let allowed = match endpoint.get("kind").and_then(|k| k.as_str()) {
                Some("remote") => ENDPOINT_REMOTE,
                _ => ENDPOINT_REFERENCE,
            };
            check(endpoint, allowed, &format!("endpoints[{i}]"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(dir: &tempfile::TempDir, body: &str) -> PathBuf {
        let path = dir.path().join("config.json");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn valid_config_loads_with_base_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            &dir,
            r#"{
                "schema_version": 1,
                "endpoints": [
                    {"id": "a", "kind": "reference", "model_file": "a.json"},
                    {"id": "b", "kind": "reference", "model_file": "b.json"}
                ],
                "generation": {"max_tokens": 32, "seed": 5}
            }"#,
        );
        let (config, base_dir) = load_config(&path).unwrap();
        assert_eq!(config.ensemble.endpoints.len(), 2);
        assert_eq!(config.ensemble.generation.max_tokens, 32);
        assert_eq!(config.ensemble.quorum, 1.0);
        assert_eq!(base_dir, dir.path());
    }

    #[test]
    fn parse_errors_carry_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(&dir, "{\n  \"schema_version\": 1,\n  oops\n}");
        let err = match load_config(&path) {
            Err(CliError::Usage(m)) => m,
            other => panic!("expected usage error, got {other:?}"),
        };
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn field_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            &dir,
            r#"{
                "schema_version": 1,
                "endpoints": [
                    {"id": "a", "kind": "reference", "model_file": "a.json"},
                    {"id": "b", "kind": "reference", "model_file": "b.json"}
                ],
                "quorum": 1.5
            }"#,
        );
        let err = match load_config(&path) {
            Err(CliError::Usage(m)) => m,
            other => panic!("expected usage error, got {other:?}"),
        };
        assert!(err.contains("quorum"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            &dir,
            r#"{
                "schema_version": 1,
                "endpoints": [
                    {"id": "a", "kind": "reference", "model_file": "a.json"},
                    {"id": "b", "kind": "reference", "model_file": "b.json"}
                ],
                "quorom": 0.5
            }"#,
        );
        let err = match load_config(&path) {
            Err(CliError::Usage(m)) => m,
            other => panic!("expected usage error, got {other:?}"),
        };
        assert!(err.contains("quorom"), "{err}");

        let path = write_config(
            &dir,
            r#"{
                "schema_version": 1,
                "endpoints": [
                    {"id": "a", "kind": "reference", "model_file": "a.json", "timeout": 5},
                    {"id": "b", "kind": "reference", "model_file": "b.json"}
                ]
            }"#,
        );
        let err = match load_config(&path) {
            Err(CliError::Usage(m)) => m,
            other => panic!("expected usage error, got {other:?}"),
        };
        assert!(err.contains("endpoints[0]") && err.contains("timeout"), "{err}");
    }

    #[test]
    fn missing_secret_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            &dir,
            r#"{
                "schema_version": 1,
                "endpoints": [
                    {"id": "a", "kind": "reference", "model_file": "a.json"},
                    {"id": "r", "kind": "remote", "base_url": "http://localhost:1",
                     "model_name": "m", "auth_token_env": "CROSSCHECK_TEST_UNSET_VAR"}
                ]
            }"#,
        );
        let err = match load_config(&path) {
            Err(CliError::Usage(m)) => m,
            other => panic!("expected usage error, got {other:?}"),
        };
        assert!(err.contains("CROSSCHECK_TEST_UNSET_VAR"), "{err}");
    }
}
