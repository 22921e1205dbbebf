//! Run configuration from a flat `key = value` file and command-line
//! overrides. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gibbs::GibbsConfig;
use crate::kernels::{JitterPolicy, KernelSpec};
use crate::simstudy::{DgpSpec, StudyConfig};

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "data",
    "out",
    "seed",
    "alpha",
    "length_scale",
    "iterations",
    "burn_in",
    "thin",
    "normalized_column",
    "level",
    "points",
    "points_file",
    "g_indices",
    "group_by",
    "n",
    "theta",
    "alphas",
    "replications",
];

/// Key-value settings with their origin, for error messages.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, String)>,
}

impl Settings {
    /// Parse config text; `source_name` labels errors.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key '{key}'")));
            }
            let origin = format!("{source_name}:{}", i + 1);
            if values
                .insert(key.to_string(), (value.trim().to_string(), origin))
                .is_some()
            {
                return Err(err(format!("key '{key}' given twice")));
            }
        }
        Ok(Settings { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: 0,
            message: format!("cannot read config: {e}"),
        })?;
        Settings::parse(&text, &path.display().to_string())
    }

    /// File settings (if any) overridden by command-line values.
    pub fn layered(file: Option<&Path>, overrides: &[(&str, Option<String>)]) -> Result<Self> {
        let mut s = match file {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        for (key, value) in overrides {
            if let Some(v) = value {
                s.set(key, v.clone(), "command line");
            }
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: String, origin: &str) {
        self.values
            .insert(key.to_string(), (value, origin.to_string()));
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((v, origin)) => v.parse::<T>().map(Some).map_err(|_| {
                Error::Validation(format!("{origin}: '{key}' has invalid value '{v}'"))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((v, origin)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>().map_err(|_| {
                        Error::Validation(format!("{origin}: '{key}' has invalid entry '{s}'"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

fn gibbs_from(s: &Settings, defaults: &GibbsConfig) -> Result<GibbsConfig> {
    let g = GibbsConfig {
        iterations: s.get_or("iterations", defaults.iterations)?,
        burn_in: s.get_or("burn_in", defaults.burn_in)?,
        thin: s.get_or("thin", defaults.thin)?,
        seed: s.get_or("seed", defaults.seed)?,
        jitter: JitterPolicy::default(),
        ..defaults.clone()
    };
    g.validate()?;
    Ok(g)
}

fn level_from(s: &Settings) -> Result<f64> {
    let level = s.get_or("level", 0.95)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Validation(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    Ok(level)
}

/// Where prediction points come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PointsSource {
    Inline(String),
    File(PathBuf),
}

/// Settings of `fit` and `predict`.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    pub gibbs: GibbsConfig,
    pub data_path: PathBuf,
    pub normalized_column: Option<String>,
    pub prediction_points: Option<PointsSource>,
    pub output_dir: PathBuf,
    pub level: f64,
    /// 1-based observation indices whose `g` goes to the draw log.
    pub g_indices: Vec<usize>,
    /// Discrete covariates defining groups.
    pub group_by: Vec<String>,
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let data_path: PathBuf = s
            .get::<String>("data")?
            .ok_or_else(|| Error::Validation("no data file given (use --data or 'data =')".into()))?
            .into();
        if !data_path.is_file() {
            return Err(Error::Validation(format!(
                "data file {} does not exist",
                data_path.display()
            )));
        }
        let kernel = KernelSpec::new(s.get_or("alpha", 1.5)?, s.get_or("length_scale", 1.0)?)
            .map_err(|e| Error::Validation(e.to_string()))?;
        let gibbs = gibbs_from(s, &GibbsConfig::default())?;
        let prediction_points = match (s.get::<String>("points")?, s.get::<String>("points_file")?)
        {
            (Some(_), Some(_)) => {
                return Err(Error::Validation(
                    "give prediction points inline or as a file, not both".into(),
                ))
            }
            (Some(p), None) => Some(PointsSource::Inline(p)),
            (None, Some(f)) => {
                let f = PathBuf::from(f);
                if !f.is_file() {
                    return Err(Error::Validation(format!(
                        "points file {} does not exist",
                        f.display()
                    )));
                }
                Some(PointsSource::File(f))
            }
            (None, None) => None,
        };
        let g_indices: Vec<usize> = s.list("g_indices")?.unwrap_or_default();
        if g_indices.contains(&0) {
            return Err(Error::Validation("g_indices are 1-based".into()));
        }
        Ok(RunConfig {
            kernel,
            gibbs,
            data_path,
            normalized_column: s.get("normalized_column")?,
            prediction_points,
            output_dir: s.get_or("out", ".".to_string())?.into(),
            level: level_from(s)?,
            g_indices,
            group_by: s.list("group_by")?.unwrap_or_default(),
        })
    }
}

/// Settings of `simulate`.
pub fn dgp_from_settings(s: &Settings) -> Result<(DgpSpec, PathBuf)> {
    let spec = DgpSpec::new(
        s.get_or("n", 250)?,
        s.get_or("theta", 1.0)?,
        s.get_or("seed", 0)?,
    )?;
    let out: PathBuf = s
        .get::<String>("out")?
        .ok_or_else(|| Error::Validation("no output file given (use --out)".into()))?
        .into();
    Ok((spec, out))
}

/// Settings of `replicate-study`. With `fast`, unset keys default to the
/// quick tier: n = 100, 50 replications, 4000 iterations, 2000 burn-in,
/// α = 3/2.
pub fn study_from_settings(s: &Settings, fast: bool) -> Result<(StudyConfig, PathBuf)> {
    let (n, reps, iters, burn, alphas) = if fast {
        (100, 50, 4_000, 2_000, vec![1.5])
    } else {
        (250, 100, 10_000, 5_000, vec![0.5, 1.5, 2.5, 3.5])
    };
    let defaults = GibbsConfig {
        iterations: iters,
        burn_in: burn,
        store_g: false,
        ..GibbsConfig::default()
    };
    let config = StudyConfig {
        n: s.get_or("n", n)?,
        alphas: s.list("alphas")?.unwrap_or(alphas),
        replications: s.get_or("replications", reps)?,
        theta_true: s.get_or("theta", 1.0)?,
        length_scale: s.get_or("length_scale", 1.0)?,
        level: level_from(s)?,
        gibbs: gibbs_from(s, &defaults)?,
    };
    config
        .validate()
        .map_err(|e| Error::Validation(e.root().to_string()))?;
    Ok((config, s.get_or("out", "study.csv".to_string())?.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let s = Settings::parse(
            "# comment\nalpha = 2.5\n\niterations=300\nburn_in = 100\n",
            "c.txt",
        )
        .unwrap();
        assert_eq!(s.get::<f64>("alpha").unwrap(), Some(2.5));
        let mut s2 = s.clone();
        s2.set("alpha", "0.5".into(), "command line");
        assert_eq!(s2.get::<f64>("alpha").unwrap(), Some(0.5));
        let (study, _) = study_from_settings(&s, true).unwrap();
        assert_eq!(study.gibbs.iterations, 300);
        assert_eq!(study.n, 100);
    }

    #[test]
    fn reports_line_numbers() {
        let e = Settings::parse("alpha = 1\nbogus = 2\n", "c.txt").unwrap_err();
        assert_eq!(e.to_string(), "c.txt:2: unknown key 'bogus'");
        let e = Settings::parse("alpha 1\n", "c.txt").unwrap_err();
        assert!(e.to_string().starts_with("c.txt:1:"));
        let e = Settings::parse("alpha=1\nalpha=2\n", "c.txt").unwrap_err();
        assert!(e.to_string().contains("twice"));
    }

    #[test]
    fn rejects_out_of_range_values_before_running() {
        let s = Settings::parse("iterations = 10\nburn_in = 10\n", "c").unwrap();
        assert!(study_from_settings(&s, false).is_err());
        let s = Settings::parse("alpha = -1\n", "c").unwrap();
        assert!(study_from_settings(&s, false).is_ok());
        let s = Settings::parse("alphas = -1\n", "c").unwrap();
        assert_eq!(study_from_settings(&s, false).unwrap_err().exit_code(), 2);
        let s = Settings::parse("thin = x\n", "c").unwrap();
        let e = study_from_settings(&s, false).unwrap_err();
        assert!(e.to_string().contains("c:1"), "{e}");
    }
}
