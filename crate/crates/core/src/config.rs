//! Run configuration: a section-free `key = value` document with `#`
//! comments. Missing keys take the calibrated defaults.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{require, ConfigError, ParamError};
use crate::model::ModelParams;
use crate::stochastic::GarchParams;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelParams,
    pub garch: GarchParams,
    pub seed: u64,
    pub n_steps: usize,
    pub burn_in: usize,
    /// Tail fraction for realized shortfall.
    pub q: f64,
    pub out: Option<String>,
    /// Calibration target for mean target leverage.
    pub lambda_hat: f64,
    /// Calibration target for mean relative size.
    pub r_hat: f64,
    pub n_seeds: usize,
    pub b_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            garch: GarchParams::default(),
            seed: 0,
            n_steps: 5000,
            burn_in: 500,
            q: 0.05,
            out: None,
            lambda_hat: 5.8,
            r_hat: 0.27,
            n_seeds: 16,
            b_points: 21,
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Malformed {
        line,
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_real(line: usize, key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse_num(line, key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::Malformed {
            line,
            key: key.to_string(),
            value: value.to_string(),
        })
    }
}

impl RunConfig {
    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let m = &mut self.model;
        let g = &mut self.garch;
        match key {
            "tau" => m.tau = parse_real(line, key, value)?,
            "delta" => m.delta = parse_real(line, key, value)?,
            "t_var" => m.t_var = parse_real(line, key, value)?,
            "sigma0_sq" => m.policy.sigma0_sq = parse_real(line, key, value)?,
            "b" => m.policy.b = parse_real(line, key, value)?,
            "alpha" => m.policy.alpha = parse_real(line, key, value)?,
            "e_bar" => m.e_bar = parse_real(line, key, value)?,
            "w_b" => m.w_b = parse_real(line, key, value)?,
            "theta" => m.theta = parse_real(line, key, value)?,
            "theta_minus" => {
                m.theta_minus = match value {
                    "none" => None,
                    v => Some(parse_real(line, key, v)?),
                }
            }
            "eta" => m.eta = parse_real(line, key, value)?,
            "mu" => m.mu = parse_real(line, key, value)?,
            "rho" => m.rho = parse_real(line, key, value)?,
            "w_f0" => m.w_f0 = parse_real(line, key, value)?,
            "a0" => g.a0 = parse_real(line, key, value)?,
            "a1" => g.a1 = parse_real(line, key, value)?,
            "b1" => g.b1 = parse_real(line, key, value)?,
            "seed" => self.seed = parse_num(line, key, value)?,
            "n_steps" => self.n_steps = parse_num(line, key, value)?,
            "burn_in" => self.burn_in = parse_num(line, key, value)?,
            "q" => self.q = parse_real(line, key, value)?,
            "out" => self.out = Some(value.to_string()),
            "lambda_hat" => self.lambda_hat = parse_real(line, key, value)?,
            "r_hat" => self.r_hat = parse_real(line, key, value)?,
            "n_seeds" => self.n_seeds = parse_num(line, key, value)?,
            "b_points" => self.b_points = parse_num(line, key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.model.validate()?;
        self.garch.validate()?;
        require(self.q > 0.0 && self.q < 1.0, "q", self.q, "0 < q < 1")?;
        require(self.n_steps > 0, "n_steps", self.n_steps as f64, "n_steps > 0")?;
        require(
            self.burn_in < self.n_steps,
            "burn_in",
            self.burn_in as f64,
            "burn_in < n_steps",
        )?;
        require(self.lambda_hat > 1.0, "lambda_hat", self.lambda_hat, "lambda_hat > 1")?;
        require(self.r_hat > 0.0, "r_hat", self.r_hat, "r_hat > 0")?;
        require(self.n_seeds > 0, "n_seeds", self.n_seeds as f64, "n_seeds > 0")?;
        require(self.b_points > 0, "b_points", self.b_points as f64, "b_points > 0")
    }

    /// The per-cell seeds `seed ^ k` for `k < n_seeds`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64)
            .map(|k| crate::stochastic::cell_seed(self.seed, k))
            .collect()
    }

    /// Canonical document that parses back to `self`.
    pub fn serialize(&self) -> String {
        let m = &self.model;
        let g = &self.garch;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("tau", m.tau.to_string());
        put("delta", m.delta.to_string());
        put("t_var", m.t_var.to_string());
        put("sigma0_sq", m.policy.sigma0_sq.to_string());
        put("b", m.policy.b.to_string());
        put("alpha", m.policy.alpha.to_string());
        put("e_bar", m.e_bar.to_string());
        put("w_b", m.w_b.to_string());
        put("theta", m.theta.to_string());
        put(
            "theta_minus",
            m.theta_minus.map_or("none".to_string(), |v| v.to_string()),
        );
        put("eta", m.eta.to_string());
        put("mu", m.mu.to_string());
        put("rho", m.rho.to_string());
        put("w_f0", m.w_f0.to_string());
        put("a0", g.a0.to_string());
        put("a1", g.a1.to_string());
        put("b1", g.b1.to_string());
        put("seed", self.seed.to_string());
        put("n_steps", self.n_steps.to_string());
        put("burn_in", self.burn_in.to_string());
        put("q", self.q.to_string());
        if let Some(out) = &self.out {
            put("out", out.clone());
        }
        put("lambda_hat", self.lambda_hat.to_string());
        put("r_hat", self.r_hat.to_string());
        put("n_seeds", self.n_seeds.to_string());
        put("b_points", self.b_points.to_string());
        s
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        cfg.set(line, key, value)?;
        if seen.insert(key.to_string(), line).is_some() {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_string(),
            });
        }
    }
    cfg.validate().map_err(|source| ConfigError::Invalid {
        line: seen.get(source.name).copied().unwrap_or(0),
        source,
    })?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
        assert_eq!(parse_config("# only a comment\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn negative_alpha_cites_constraint_and_line() {
        let err = parse_config("b = -0.5\nalpha = -1\n").unwrap_err();
        match &err {
            ConfigError::Invalid { line, source } => {
                assert_eq!(*line, 2);
                assert_eq!(source.name, "alpha");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("alpha > 0"), "{err}");
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        assert_eq!(
            parse_config("alpha = 0.1\nbeta = 2\n").unwrap_err(),
            ConfigError::UnknownKey {
                line: 2,
                key: "beta".into()
            }
        );
    }

    #[test]
    fn malformed_and_syntax_errors() {
        assert!(matches!(
            parse_config("alpha = 0,1").unwrap_err(),
            ConfigError::Malformed { line: 1, .. }
        ));
        assert!(matches!(
            parse_config("\nalpha 0.1").unwrap_err(),
            ConfigError::Syntax { line: 2 }
        ));
        assert!(matches!(
            parse_config("alpha = nan").unwrap_err(),
            ConfigError::Malformed { .. }
        ));
        assert!(matches!(
            parse_config("seed = 1\nseed = 2").unwrap_err(),
            ConfigError::Duplicate { line: 2, .. }
        ));
    }

    #[test]
    fn trailing_comments_and_theta_minus() {
        let cfg = parse_config("e_bar = 1e-5  # small bank\ntheta_minus = 3.5\n").unwrap();
        assert_eq!(cfg.model.e_bar, 1e-5);
        assert_eq!(cfg.model.theta_minus, Some(3.5));
        let cfg = parse_config("theta_minus = none").unwrap();
        assert_eq!(cfg.model.theta_minus, None);
    }

    #[test]
    fn serialize_round_trips() {
        let doc = "alpha = 0.0123456789012345\nb = -0.1\ne_bar = 1e-5\na0 = 0\na1 = 0\nb1 = 0\nseed = 18446744073709551615\nout = runs/x.csv\nsigma0_sq = 3.3e-7\n";
        let cfg = parse_config(doc).unwrap();
        let again = parse_config(&cfg.serialize()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.serialize(), cfg.serialize());
    }
}
