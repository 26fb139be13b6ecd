//! Dotted-path config overrides: `--local.epochs=10` sets
//! `config.local.epochs` before the typed parse, so typos surface as
//! unknown-key errors instead of silently applying defaults.

use serde_json::Value;

/// Applies `--a.b.c=value` overrides onto a JSON document. Values parse as
/// JSON scalars where possible and fall back to strings.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), String> {
    for item in overrides {
        let body = item
            .strip_prefix("--")
            .ok_or_else(|| format!("override `{item}` must start with --"))?;
        let (path, raw) = body
            .split_once('=')
            .ok_or_else(|| format!("override `{item}` must look like --key.path=value"))?;
        if path.is_empty() || raw.is_empty() {
            return Err(format!("override `{item}` has an empty key or value"));
        }
        let value: Value =
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));

        let parts: Vec<&str> = path.split('.').collect();
        let (last, parents) = parts.split_last().expect("non-empty path");
        let mut cursor = &mut *doc;
        for part in parents {
            cursor = cursor
                .as_object_mut()
                .ok_or_else(|| format!("override `{item}`: `{part}` is not an object field"))?
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
        cursor
            .as_object_mut()
            .ok_or_else(|| format!("override `{item}`: `{last}` is not an object field"))?
            .insert(last.to_string(), value);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn applies_nested_paths_and_json_values() {
        let mut doc = json!({"alpha": 1.0, "local": {"epochs": 5}});
        apply_overrides(
            &mut doc,
            &[
                "--alpha=0.01".to_string(),
                "--local.epochs=2".to_string(),
                "--model.preset=mlp-3".to_string(),
                "--seeds=[7]".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(doc["alpha"], json!(0.01));
        assert_eq!(doc["local"]["epochs"], json!(2));
        assert_eq!(doc["model"]["preset"], json!("mlp-3"));
        assert_eq!(doc["seeds"], json!([7]));
    }

    #[test]
    fn rejects_malformed_overrides() {
        let mut doc = json!({});
        assert!(apply_overrides(&mut doc, &["alpha=1".to_string()]).is_err());
        assert!(apply_overrides(&mut doc, &["--alpha".to_string()]).is_err());
        assert!(apply_overrides(&mut doc, &["--=3".to_string()]).is_err());
    }
}
