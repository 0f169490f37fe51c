use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use srlab::GroupId;

#[derive(Debug, Parser)]
#[command(
    name = "srlab",
    version,
    about = "Numerical checks for the Heisenberg, roto-translation and affine-additive groups"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON file with option values; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the report to this file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Leave timings out of the report.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Group laws, frame algebra and the contact and quasiregular maps.
    Verify(VerifyArgs),
    /// Discrete modulus of the Γₙ⁰ families or of ring domains.
    Modulus(ModulusArgs),
    /// CC distance bracket between two points.
    Ccdist(CcdistArgs),
    /// Monte-Carlo ball volumes and growth exponents.
    Volume(VolumeArgs),
    /// Horizontal lift of a half-plane curve into the affine-additive group.
    Lift(LiftArgs),
    /// A quick pass over every check.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Groups,
    Frames,
    Maps,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gamma0,
    Ring,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scope: Option<Scope>,
    /// Random points per check.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub scope: Scope,
    pub samples: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            scope: Scope::All,
            samples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ModulusArgs {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Values of n for the Γₙ⁰ family.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<u32>>,
    /// Outer ring radii.
    #[arg(long = "R", value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    /// Inner ring radius.
    #[arg(long = "R0")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    /// Lattice spacing for rings.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    /// Cells per axis of the Γₙ⁰ grid, as `a,λ,t`.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModulusConfig {
    pub family: Family,
    pub group: String,
    pub n: Vec<u32>,
    pub radii: Vec<f64>,
    pub r0: f64,
    pub spacing: f64,
    pub window: f64,
    pub grid: Vec<usize>,
    pub q: f64,
    /// Solver tolerance; the family's default when absent.
    pub tol: Option<f64>,
}

impl Default for ModulusConfig {
    fn default() -> Self {
        ModulusConfig {
            family: Family::Gamma0,
            group: "h".into(),
            n: vec![2],
            radii: vec![2.0, 4.0, 8.0],
            r0: 1.0,
            spacing: 0.75,
            window: 2.0,
            grid: vec![32, 64, 32],
            q: 4.0,
            tol: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CcdistArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    /// Number of optimiser restarts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<u64>,
    /// Write the optimal curve as `s,c1,c2,c3` CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcdistConfig {
    pub group: String,
    pub from: Option<Vec<f64>>,
    pub to: Option<Vec<f64>>,
    pub segments: usize,
    pub budget: usize,
    pub restarts: u64,
    pub curve_out: Option<PathBuf>,
}

impl Default for CcdistConfig {
    fn default() -> Self {
        let cc = srlab::ccdist::CcConfig::default();
        CcdistConfig {
            group: "h".into(),
            from: None,
            to: None,
            segments: cc.segments,
            budget: cc.budget,
            restarts: cc.seeds.len() as u64,
            curve_out: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct VolumeArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Write `r,vol_lower,vol_upper,stderr,exponent_running` CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolumeConfig {
    pub group: String,
    pub radii: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub csv: Option<PathBuf>,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        VolumeConfig {
            group: "h".into(),
            radii: vec![1.0, 2.0],
            samples: 100_000,
            seed: 0,
            csv: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct LiftArgs {
    /// Half-plane curve as CSV with header `s,xi,eta`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Initial fibre coordinate.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    /// Write the lifted curve as `s,c1,c2,c3` CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiftConfig {
    pub input: Option<PathBuf>,
    pub a0: f64,
    pub curve_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Random points per randomized check.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            samples: 2000,
            seed: 0,
        }
    }
}

pub fn parse_group(tag: &str) -> Result<GroupId, String> {
    GroupId::from_tag(tag).ok_or_else(|| format!("unknown group `{tag}` (expected h, rt or aa)"))
}

pub fn read_file(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if !value.is_object() {
        return Err(format!("{}: expected a JSON object", path.display()));
    }
    Ok(value)
}

fn overlay(base: &mut Map<String, Value>, top: &Value) {
    if let Value::Object(top) = top {
        for (k, v) in top {
            base.insert(k.clone(), v.clone());
        }
    }
}

/// Defaults, then the config file, then flags. A `seed` key, when present,
/// defaults to `SRLAB_SEED`.
pub fn resolve<T, A>(file: Option<&Value>, flags: &A) -> Result<T, String>
where
    T: Default + Serialize + DeserializeOwned,
    A: Serialize,
{
    let mut map = match serde_json::to_value(T::default()).map_err(|e| e.to_string())? {
        Value::Object(m) => m,
        _ => unreachable!("configs are structs"),
    };
    if map.contains_key("seed") {
        if let Ok(seed) = std::env::var("SRLAB_SEED") {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| format!("SRLAB_SEED must be an unsigned integer, got `{seed}`"))?;
            map.insert("seed".into(), seed.into());
        }
    }
    if let Some(file) = file {
        overlay(&mut map, file);
    }
    overlay(
        &mut map,
        &serde_json::to_value(flags).map_err(|e| e.to_string())?,
    );
    serde_json::from_value(Value::Object(map)).map_err(|e| format!("invalid configuration: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_unknown_keys() {
        let flags = ModulusArgs {
            family: None,
            group: None,
            n: None,
            radii: None,
            r0: None,
            spacing: None,
            grid: None,
            q: Some(3.0),
            tol: None,
        };
        let file = serde_json::json!({"q": 5.0, "spacing": 0.5});
        let cfg: ModulusConfig = resolve(Some(&file), &flags).unwrap();
        assert_eq!(cfg.q, 3.0);
        assert_eq!(cfg.spacing, 0.5);
        assert_eq!(cfg.r0, 1.0);
        let bad = serde_json::json!({"spacingg": 0.5});
        assert!(resolve::<ModulusConfig, _>(Some(&bad), &flags)
            .unwrap_err()
            .contains("unknown field"));
    }
}
