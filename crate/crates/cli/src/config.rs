use std::path::Path;

use anyhow::{bail, Context};
use gsedit_core::pipeline::EditConfig;

/// Reads an edit config. `.json` files are parsed as JSON, everything else
/// as TOML. Missing fields take their defaults; unknown fields are errors.
pub fn load(path: &Path) -> anyhow::Result<EditConfig> {
    if !path.is_file() {
        bail!("config not found: {}", path.display());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg: EditConfig = if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(name: &str, text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn toml_and_json_agree() {
        let (_a, t) = write(
            "c.toml",
            "task = \"retexture\"\ngamma = 0.25\n[box]\ncenter = [0.0, 1.0, 0.0]\nhalf_extents = [0.5, 0.5, 0.5]\n",
        );
        let (_b, j) = write(
            "c.json",
            r#"{"task": "retexture", "gamma": 0.25, "box": {"center": [0, 1, 0], "half_extents": [0.5, 0.5, 0.5]}}"#,
        );
        let a = load(&t).unwrap();
        assert_eq!(a, load(&j).unwrap());
        assert_eq!(a.gamma, 0.25);
        assert_eq!(a.lambda, 0.1);
        assert_eq!((a.width, a.height), (512, 512));
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = toml::to_string_pretty(&EditConfig::default()).unwrap();
        let (_d, p) = write("c.toml", &text);
        assert_eq!(load(&p).unwrap(), EditConfig::default());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        let (_d, p) = write("c.toml", "gamma = 0.5\nbogus = 1\n");
        assert!(load(&p).is_err());
        let (_d, p) = write("c.toml", "gamma = 1.5\n");
        assert!(load(&p).is_err());
        assert!(load(Path::new("/nonexistent/c.toml")).is_err());
    }
}
