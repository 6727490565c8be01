//! Flat key-value experiment configuration: one `key = value` per line,
//! `#` comments, unknown keys rejected with their line numbers. Every key
//! has a documented default (see the repository README).

use dgl_core::dislocations::Convention;
use dgl_core::error::{DglError, Result};
use dgl_core::grid::Domain;
use dgl_core::matrix::{Mat2, Vec2};
use dgl_core::wells::CuMode;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: usize,
    pub out: PathBuf,
    pub convention: Convention,
    pub cu_mode: CuMode,
    pub wells: Vec<Mat2>,
    pub lattice_basis: (Vec2, Vec2),
    pub lattice_truncation: f64,
    pub domain: Domain,
    pub xi: Vec2,
    pub delta_list: Vec<f64>,
    pub well_index: usize,
    pub rotation: f64,
    pub phi_queries: Vec<Vec2>,
    pub probe_kind: String,
    pub probe_norm: String,
    pub n_samples: usize,
    pub eps_list: Vec<f64>,
    pub rho_exponent: f64,
    pub gamma_exponent: f64,
    pub e_region: (Vec2, Vec2),
    pub beta_harmonic_amp: f64,
    pub beta_div_amp: f64,
    pub atoms: Vec<(Vec2, Vec2)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            grid: 192,
            out: PathBuf::from("out"),
            convention: Convention::PsiHalf,
            cu_mode: CuMode::FromDensity,
            wells: vec![Mat2::IDENTITY],
            lattice_basis: (Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)),
            lattice_truncation: 4.0,
            domain: Domain::rectangle(-0.5, -0.5, 1.5, 1.5).unwrap(),
            xi: Vec2::new(1.0, 0.0),
            delta_list: dgl_core::dislocations::HAT_PSI_DELTAS.to_vec(),
            well_index: 0,
            rotation: 0.0,
            phi_queries: vec![Vec2::new(1.0, 0.0), Vec2::new(0.5, 0.5)],
            probe_kind: "weighted-poincare".to_string(),
            probe_norm: "l2".to_string(),
            n_samples: 50,
            eps_list: vec![1e-2, 3e-3, 1e-3],
            rho_exponent: 0.4,
            gamma_exponent: 0.25,
            e_region: (Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)),
            beta_harmonic_amp: 1.0,
            beta_div_amp: 0.4,
            atoms: Vec::new(),
        }
    }
}

fn parse_floats(value: &str, line: usize) -> Result<Vec<f64>> {
    value
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| {
                DglError::Config(format!("line {line}: expected a number, got '{t}'"))
            })
        })
        .collect()
}

fn parse_vec2(value: &str, line: usize) -> Result<Vec2> {
    let f = parse_floats(value, line)?;
    if f.len() != 2 {
        return Err(DglError::Config(format!(
            "line {line}: expected two numbers, got {}",
            f.len()
        )));
    }
    Ok(Vec2::new(f[0], f[1]))
}

fn parse_vec2_list(value: &str, line: usize) -> Result<Vec<Vec2>> {
    value
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_vec2(s, line))
        .collect()
}

fn parse_mat_list(value: &str, line: usize) -> Result<Vec<Mat2>> {
    value
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let f = parse_floats(s, line)?;
            if f.len() != 4 {
                return Err(DglError::Config(format!(
                    "line {line}: a 2x2 matrix needs four row-major entries"
                )));
            }
            Ok(Mat2::new(f[0], f[1], f[2], f[3]))
        })
        .collect()
}

fn parse_domain(value: &str, line: usize) -> Result<Domain> {
    let mut toks = value.split_whitespace();
    let kind = toks
        .next()
        .ok_or_else(|| DglError::Config(format!("line {line}: empty domain")))?;
    let rest: Vec<f64> = toks
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| DglError::Config(format!("line {line}: bad domain number '{t}'")))
        })
        .collect::<Result<_>>()?;
    match kind {
        "rectangle" if rest.len() == 4 => Domain::rectangle(rest[0], rest[1], rest[2], rest[3]),
        "disk" if rest.len() == 3 => Domain::disk(Vec2::new(rest[0], rest[1]), rest[2]),
        "annulus" if rest.len() == 4 => {
            Domain::annulus(Vec2::new(rest[0], rest[1]), rest[2], rest[3])
        }
        "cut-annulus" if rest.len() == 4 => {
            Domain::cut_annulus(Vec2::new(rest[0], rest[1]), rest[2], rest[3])
        }
        "l-shape" if rest.is_empty() => Ok(Domain::l_shape()),
        "polygon" if rest.len() >= 6 && rest.len().is_multiple_of(2) => {
            Domain::polygon(rest.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect())
        }
        _ => Err(DglError::Config(format!(
            "line {line}: unknown domain '{value}' (rectangle x0 y0 x1 y1 | disk cx cy r | annulus cx cy r0 r1 | cut-annulus cx cy r0 r1 | l-shape | polygon x y ...)"
        ))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DglError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        cfg.wells.clear(); // the wells key is mandatory in config files
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                DglError::Config(format!("line {line_no}: expected 'key = value'"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if let Some(first) = seen.insert(key.to_string(), line_no) {
                return Err(DglError::Config(format!(
                    "line {line_no}: key '{key}' already set on line {first}"
                )));
            }
            let int = |v: &str| -> Result<u64> {
                v.parse::<u64>()
                    .map_err(|_| DglError::Config(format!("line {line_no}: bad integer '{v}'")))
            };
            let float = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|_| DglError::Config(format!("line {line_no}: bad number '{v}'")))
            };
            match key {
                "seed" => cfg.seed = int(value)?,
                "grid" => cfg.grid = int(value)? as usize,
                "out" => cfg.out = PathBuf::from(value),
                "convention" => cfg.convention = value.parse()?,
                "cu_mode" => {
                    cfg.cu_mode = match value {
                        "from-density" => CuMode::FromDensity,
                        "identity" => CuMode::Identity,
                        other => {
                            return Err(DglError::Config(format!(
                                "line {line_no}: unknown cu_mode '{other}'"
                            )))
                        }
                    }
                }
                "wells" => cfg.wells = parse_mat_list(value, line_no)?,
                "lattice" => {
                    let f = parse_floats(value, line_no)?;
                    if f.len() != 4 {
                        return Err(DglError::Config(format!(
                            "line {line_no}: lattice needs four numbers b1x b1y b2x b2y"
                        )));
                    }
                    cfg.lattice_basis = (Vec2::new(f[0], f[1]), Vec2::new(f[2], f[3]));
                }
                "lattice_truncation" => cfg.lattice_truncation = float(value)?,
                "domain" => cfg.domain = parse_domain(value, line_no)?,
                "xi" => cfg.xi = parse_vec2(value, line_no)?,
                "delta_list" => cfg.delta_list = parse_floats(value, line_no)?,
                "well_index" => cfg.well_index = int(value)? as usize,
                "rotation" => cfg.rotation = float(value)?,
                "phi_queries" => cfg.phi_queries = parse_vec2_list(value, line_no)?,
                "probe_kind" => cfg.probe_kind = value.to_string(),
                "probe_norm" => cfg.probe_norm = value.to_string(),
                "n_samples" => cfg.n_samples = int(value)? as usize,
                "eps_list" => cfg.eps_list = parse_floats(value, line_no)?,
                "rho_exponent" => cfg.rho_exponent = float(value)?,
                "gamma_exponent" => cfg.gamma_exponent = float(value)?,
                "e_region" => {
                    let f = parse_floats(value, line_no)?;
                    if f.len() != 4 {
                        return Err(DglError::Config(format!(
                            "line {line_no}: e_region needs x0 y0 x1 y1"
                        )));
                    }
                    cfg.e_region = (Vec2::new(f[0], f[1]), Vec2::new(f[2], f[3]));
                }
                "beta_harmonic_amp" => cfg.beta_harmonic_amp = float(value)?,
                "beta_div_amp" => cfg.beta_div_amp = float(value)?,
                "atoms" => {
                    cfg.atoms = value
                        .split(';')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| {
                            let f = parse_floats(s, line_no)?;
                            if f.len() != 4 {
                                return Err(DglError::Config(format!(
                                    "line {line_no}: an atom needs x y bx by"
                                )));
                            }
                            Ok((Vec2::new(f[0], f[1]), Vec2::new(f[2], f[3])))
                        })
                        .collect::<Result<_>>()?;
                }
                other => {
                    return Err(DglError::Config(format!(
                        "line {line_no}: unknown key '{other}'"
                    )))
                }
            }
        }
        if cfg.wells.is_empty() {
            return Err(DglError::Config("missing required key 'wells'".into()));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_overrides() {
        let cfg = ExperimentConfig::parse(
            "# comment\nseed = 7\nwells = 1 0 0 1 ; 1.1 0 0 0.9\nxi = 0 2\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.wells.len(), 2);
        assert_eq!(cfg.xi, Vec2::new(0.0, 2.0));
    }

    #[test]
    fn missing_wells_key_is_a_schema_error() {
        let err = ExperimentConfig::parse("seed = 7\n").unwrap_err().to_string();
        assert!(err.contains("wells"), "{err}");
    }

    #[test]
    fn rejects_unknown_keys_with_line_numbers() {
        let err = ExperimentConfig::parse("seed = 1\nwellz = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("wellz"), "{err}");
    }

    #[test]
    fn rejects_duplicates_and_bad_values() {
        assert!(ExperimentConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(ExperimentConfig::parse("grid = abc\n").is_err());
        assert!(ExperimentConfig::parse("domain = hexagon 1 2\n").is_err());
    }
}
