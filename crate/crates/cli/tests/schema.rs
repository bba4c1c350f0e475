//! Keeps the published JSON schema in lockstep with what the parser
//! actually accepts.

use std::collections::BTreeSet;
use std::path::Path;

use mitoslice_cli::{ExperimentConfig, Overrides};

fn schema_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../docs")
        .join(name)
}

/// Collect `prefix.key` paths for every property in a schema object node.
fn schema_keys(node: &serde_json::Value, prefix: &str, out: &mut BTreeSet<String>) {
    if let Some(props) = node.get("properties").and_then(|p| p.as_object()) {
        for (key, child) in props {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            out.insert(path.clone());
            schema_keys(child, &path, out);
        }
    }
}

/// Collect `prefix.key` paths for every field of a serialized config.
fn value_keys(node: &serde_json::Value, prefix: &str, out: &mut BTreeSet<String>) {
    if let Some(map) = node.as_object() {
        for (key, child) in map {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            out.insert(path.clone());
            value_keys(child, &path, out);
        }
    }
}

#[test]
fn schema_and_parser_accept_the_same_keys() {
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(schema_path("config.schema.json")).unwrap())
            .unwrap();
    let config = ExperimentConfig::load(None, &Overrides::default()).unwrap();
    let serialized = serde_json::to_value(&config).unwrap();

    let mut from_schema = BTreeSet::new();
    schema_keys(&schema, "", &mut from_schema);
    let mut from_config = BTreeSet::new();
    value_keys(&serialized, "", &mut from_config);

    // Normalization arrays serialize values, not named keys; drop leaf
    // paths under them before comparing.
    let filt = |set: &BTreeSet<String>| -> BTreeSet<String> {
        set.iter()
            .filter(|k| !k.contains("normalization.mean.") && !k.contains("normalization.std."))
            .cloned()
            .collect()
    };
    assert_eq!(
        filt(&from_schema),
        filt(&from_config),
        "docs/config.schema.json and the serde structs disagree"
    );
}

#[test]
fn example_config_parses_and_matches_defaults() {
    let path = schema_path("config.example.json");
    let example = ExperimentConfig::load(Some(&path), &Overrides::default()).unwrap();
    let defaults = ExperimentConfig::load(None, &Overrides::default()).unwrap();
    assert_eq!(example, defaults, "example config drifted from defaults");
}
