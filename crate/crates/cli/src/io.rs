use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use neyman::data::DgpSpec;
use neyman::{Error, Result};
use serde::{Deserialize, Serialize};

/// Contents of `<stem>.truth.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub true_ate: f64,
    pub n: usize,
    pub seed: u64,
    pub dgp: DgpSpec,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    csv.with_file_name(format!("{stem}.truth.json"))
}

pub fn read_truth(path: &Path) -> Result<Truth> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("truth sidecar {}: {e}", path.display())))
}

/// A preset name, or a path to a design JSON file.
pub fn resolve_dgp(name: &str, k: usize) -> Result<DgpSpec> {
    let path = Path::new(name);
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path)?;
        let spec: DgpSpec = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("design file {name}: {e}")))?;
        spec.validate()?;
        return Ok(spec);
    }
    DgpSpec::preset(name, k)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

/// Write to `path`, or to stdout when absent.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, format!("{text}\n"))?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}")?;
        }
    }
    Ok(())
}

pub fn write_weights(path: &Path, w: &[f64]) -> Result<()> {
    let mut text = String::from("w\n");
    for v in w {
        text.push_str(&format!("{v}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("w") => {}
        other => {
            return Err(Error::MalformedHeader(format!(
                "weights file needs header `w`, got `{}`",
                other.unwrap_or("")
            )))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(r, l)| {
            l.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumeric { row: r + 1, column: "w".into(), value: l.into() })
        })
        .collect()
}
