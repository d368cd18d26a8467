//! The JSON run configuration. Every block is optional; command-line flags
//! take precedence over whatever the file sets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spectralab_core::grid::{GridField, TorusGrid};
use spectralab_core::perturbation::{Mode, PotentialBuiltin, PotentialSpec};
use spectralab_core::symbol::{SymbolPoly, SymbolSpec};

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub symbol: Option<SymbolSpec>,
    pub grid: Option<GridConfig>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub tolerance: Option<f64>,
    pub c0: Option<f64>,
    pub potential: Option<PotentialConfig>,
    #[serde(default)]
    pub region: RegionConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub perturb: PerturbConfig,
    #[serde(default)]
    pub weyl: WeylConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: Option<usize>,
    #[serde(rename = "N")]
    pub big_n: Option<usize>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub case: Option<String>,
    pub n: Option<u32>,
    pub m: Option<u32>,
    pub alpha: Option<String>,
    pub p: Option<String>,
    pub p0: Option<String>,
    pub query: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub m: Option<u32>,
    pub p: Option<String>,
    pub q: Option<String>,
    pub alpha: Option<f64>,
    pub decades: Option<f64>,
    pub points: Option<usize>,
    pub moduli: Option<Vec<f64>>,
    pub args: Option<Vec<f64>>,
    pub boundary: Option<bool>,
    pub lambdas: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub window: Option<f64>,
    pub t_list: Option<Vec<f64>>,
    pub p_list: Option<Vec<f64>>,
    pub distances: Option<Vec<f64>>,
    pub radius_factor: Option<f64>,
    pub iters: Option<usize>,
    pub restarts: Option<usize>,
    pub allow_inadmissible: Option<bool>,
    pub mode: Option<Mode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    pub z: Option<[f64; 2]>,
    pub p_gate: Option<f64>,
    pub k_max: Option<usize>,
    pub tol: Option<f64>,
    pub lambda: Option<f64>,
    pub eps: Option<f64>,
    pub mode: Option<Mode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeylConfig {
    pub nu: Option<f64>,
    pub h: Option<f64>,
    pub support: Option<[f64; 2]>,
    pub window: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub filter: Option<String>,
}

/// A potential as written in a config file: the short string form, a builtin
/// object, or `{"file": PATH}` naming a binary field dump.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum PotentialConfig {
    Text(String),
    Builtin(PotentialBuiltin),
    File(PotentialFile),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialFile {
    pub file: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialChoice {
    Zero,
    Builtin(PotentialBuiltin),
    File(PathBuf),
}

impl PotentialChoice {
    /// `ball:c,r`, `gaussian:c,sigma`, `inverse-square:c`, `file:PATH` or `zero`.
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        if s == "zero" || s == "none" {
            return Ok(Self::Zero);
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("potential {s:?}: expected KIND:ARGS")))?;
        if kind == "file" {
            return Ok(Self::File(PathBuf::from(rest)));
        }
        let nums = parse_f64_list(rest).map_err(|e| CliError::Config(format!("potential {s:?}: {e}")))?;
        let want = |k: usize| -> Result<(), CliError> {
            if nums.len() == k {
                Ok(())
            } else {
                Err(CliError::Config(format!("potential {s:?}: {kind} takes {k} numbers")))
            }
        };
        let b = match kind {
            "ball" => {
                want(2)?;
                PotentialBuiltin::BallIndicator { c: nums[0], r: nums[1] }
            }
            "gaussian" => {
                want(2)?;
                PotentialBuiltin::Gaussian { c: nums[0], sigma: nums[1] }
            }
            "inverse-square" => {
                want(1)?;
                PotentialBuiltin::InverseSquare { c: nums[0] }
            }
            _ => return Err(CliError::Config(format!("unknown potential kind {kind:?}"))),
        };
        Ok(Self::Builtin(b))
    }

    pub fn from_config(c: &PotentialConfig) -> Result<Self, CliError> {
        match c {
            PotentialConfig::Text(s) => Self::parse(s),
            PotentialConfig::Builtin(b) => Ok(Self::Builtin(b.clone())),
            PotentialConfig::File(f) => Ok(Self::File(f.file.clone())),
        }
    }

    pub fn build(&self, grid: &TorusGrid, m: u32) -> Result<PotentialSpec, CliError> {
        Ok(match self {
            Self::Zero => PotentialSpec::zero(grid, m)?,
            Self::Builtin(b) => PotentialSpec::builtin(grid, m, b)?,
            Self::File(path) => {
                let bytes = fs::read(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
                let field = GridField::read_dump(&mut bytes.as_slice())?;
                if field.grid != *grid {
                    return Err(CliError::Config(format!(
                        "potential file {} is on a different grid than the run",
                        path.display()
                    )));
                }
                PotentialSpec::from_field(&field, m)?
            }
        })
    }
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("{t:?} is not a number")))
        .collect()
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Resolves the symbol and grid from flags, then the config, then defaults.
    /// A configured symbol must agree with any dimension or order given on the
    /// command line.
    pub fn symbol_and_grid(
        &self,
        n: Option<usize>,
        m: Option<u32>,
        big_n: Option<usize>,
        l: Option<f64>,
        defaults: (usize, u32, usize, f64),
    ) -> Result<(SymbolPoly, TorusGrid), CliError> {
        let g = self.grid.clone().unwrap_or(GridConfig { n: None, big_n: None, l: None });
        let configured = self.symbol.as_ref().map(|s| s.build()).transpose()?;
        let n = n
            .or(g.n)
            .or(configured.as_ref().map(|p| p.n()))
            .unwrap_or(defaults.0);
        let m = m.or(configured.as_ref().map(|p| p.m())).unwrap_or(defaults.1);
        let symbol = match configured {
            Some(p) if p.n() != n || p.m() != m => {
                return Err(CliError::Config(format!(
                    "configured symbol has (n, m) = ({}, {}) but the run asks for ({n}, {m})",
                    p.n(),
                    p.m()
                )))
            }
            Some(p) => p,
            None => SymbolPoly::norm_power(n, m)?,
        };
        let grid = TorusGrid::new(n, big_n.or(g.big_n).unwrap_or(defaults.2), l.or(g.l).unwrap_or(defaults.3))?;
        Ok((symbol, grid))
    }

    pub fn potential(&self, flag: Option<&str>, default: &str) -> Result<PotentialChoice, CliError> {
        match (flag, &self.potential) {
            (Some(s), _) => PotentialChoice::parse(s),
            (None, Some(c)) => PotentialChoice::from_config(c),
            (None, None) => PotentialChoice::parse(default),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"grid": {"n": 2}, "bogus": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"sweep": {"decade": 1}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"grid": {"n": 2, "N": 64, "L": 10.0}, "seed": 3}"#).unwrap();
        assert_eq!(c.grid.unwrap().big_n, Some(64));
    }

    #[test]
    fn potential_forms() {
        let c: RunConfig = serde_json::from_str(r#"{"potential": "ball:0.1,1.0"}"#).unwrap();
        assert!(matches!(
            c.potential(None, "zero").unwrap(),
            PotentialChoice::Builtin(PotentialBuiltin::BallIndicator { .. })
        ));
        let c: RunConfig = serde_json::from_str(r#"{"potential": {"gaussian": {"c": 0.1, "sigma": 2.0}}}"#).unwrap();
        assert!(matches!(c.potential(None, "zero").unwrap(), PotentialChoice::Builtin(PotentialBuiltin::Gaussian { .. })));
        let c: RunConfig = serde_json::from_str(r#"{"potential": {"file": "v.bin"}}"#).unwrap();
        assert!(matches!(c.potential(None, "zero").unwrap(), PotentialChoice::File(_)));
        assert!(serde_json::from_str::<RunConfig>(r#"{"potential": {"file": "v.bin", "x": 1}}"#).is_err());
        assert!(PotentialChoice::parse("ball:0.1").is_err());
        assert!(PotentialChoice::parse("cone:1,2").is_err());
        assert!(matches!(PotentialChoice::parse("inverse-square:0.05").unwrap(), PotentialChoice::Builtin(_)));
    }

    #[test]
    fn symbol_must_match_flags() {
        let c: RunConfig = serde_json::from_str(r#"{"symbol": {"builtin": "norm_power_m", "n": 2, "m": 4}}"#).unwrap();
        let (p, g) = c.symbol_and_grid(None, None, None, None, (3, 2, 16, 1.0)).unwrap();
        assert_eq!((p.n(), p.m(), g.n), (2, 4, 2));
        assert!(c.symbol_and_grid(Some(3), None, None, None, (3, 2, 16, 1.0)).is_err());
    }
}
