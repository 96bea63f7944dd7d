//! `--config FILE` support: `key = value` lines are turned into flags and
//! appended to argv unless the same flag was given explicitly.

use std::fs;

#[derive(Debug)]
pub struct ConfigError(pub String);

/// Removes `--config FILE` from `argv` and appends the file's settings.
///
/// Keys may be written with or without the leading `--`. A value of `true`
/// adds a bare switch, `false` adds nothing. Lines starting with `#` are
/// comments.
pub fn merge_config(argv: Vec<String>) -> Result<Vec<String>, ConfigError> {
    let mut args = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut iter = argv.into_iter();
    while let Some(a) = iter.next() {
        if a == "--config" {
            let path = iter
                .next()
                .ok_or_else(|| ConfigError("--config needs a file".into()))?;
            config = Some(path);
        } else if let Some(path) = a.strip_prefix("--config=") {
            config = Some(path.to_string());
        } else {
            args.push(a);
        }
    }
    let Some(path) = config else { return Ok(args) };
    let content = fs::read_to_string(&path).map_err(|e| ConfigError(format!("{path}: {e}")))?;
    let explicit: Vec<String> = args
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    for (idx, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("{path}:{}: expected `key = value`", idx + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(ConfigError(format!("{path}:{}: bad key", idx + 1)));
        }
        if explicit.contains(&key) {
            continue;
        }
        match value {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            v => {
                args.push(format!("--{key}"));
                args.push(v.to_string());
            }
        }
    }
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn explicit_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        fs::write(&cfg, "# defaults\nseed = 3\nrepeats=20\nsvg = false\nwith_context = true\n").unwrap();
        let merged = merge_config(argv(&format!("arct reliability --seed 9 --config {}", cfg.display()))).unwrap();
        assert_eq!(merged, argv("arct reliability --seed 9 --repeats 20 --with-context"));
    }

    #[test]
    fn missing_file_and_bad_lines() {
        assert!(merge_config(argv("arct x --config /nonexistent/file")).is_err());
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        fs::write(&cfg, "just words\n").unwrap();
        assert!(merge_config(argv(&format!("arct x --config={}", cfg.display()))).is_err());
        assert_eq!(merge_config(argv("arct x --a 1")).unwrap(), argv("arct x --a 1"));
    }
}
