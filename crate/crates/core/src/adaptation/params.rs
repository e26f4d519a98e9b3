use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Method;
use crate::error::{Error, Result};

/// Hyperparameters for every method. `None` bandwidths and radii are resolved
/// per call from the median source-target distance.
///
/// Serialized as a flat `key=value` record (`rtlc.lambda=1`, `kmm.B=1000`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub bw_gamma: f64,
    pub rtlc_lambda: f64,
    pub rtlc_fit_intercept: bool,
    pub kmm_b: f64,
    pub kmm_eps: Option<f64>,
    pub kmm_bandwidth: Option<f64>,
    pub kmm_max_iter: usize,
    pub kmm_tol: f64,
    pub tradaboost_rounds: usize,
    pub ulsif_ridge: f64,
    pub ulsif_centers: usize,
    pub ulsif_bandwidth: Option<f64>,
    /// Use source rows as basis centers instead of target rows.
    pub ulsif_source_centers: bool,
    pub rulsif_alpha: f64,
    pub nnw_radius: Option<f64>,
    pub sa_dim: Option<usize>,
    pub iwn_hidden: usize,
    pub iwn_steps: usize,
    pub iwn_learning_rate: f64,
    pub iwn_bandwidth: Option<f64>,
    pub seed: u64,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            bw_gamma: 0.5,
            rtlc_lambda: 1.0,
            rtlc_fit_intercept: true,
            kmm_b: 1000.0,
            kmm_eps: None,
            kmm_bandwidth: None,
            kmm_max_iter: 20_000,
            kmm_tol: 1e-7,
            tradaboost_rounds: 10,
            ulsif_ridge: 0.1,
            ulsif_centers: 100,
            ulsif_bandwidth: None,
            ulsif_source_centers: false,
            rulsif_alpha: 0.1,
            nnw_radius: None,
            sa_dim: None,
            iwn_hidden: 16,
            iwn_steps: 100,
            iwn_learning_rate: 0.01,
            iwn_bandwidth: None,
            seed: 0,
        }
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::invalid(format!("hyperparameter `{key}`: `{v}` is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::invalid(format!("hyperparameter `{key}`: `{v}` is not an integer")))
}

fn parse_opt<T>(key: &str, v: &str, f: fn(&str, &str) -> Result<T>) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        f(key, v).map(Some)
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("hyperparameter `{key}`: `{v}` is not a boolean"))),
    }
}

impl MethodParams {
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("bw.gamma", self.bw_gamma.to_string());
        put("rtlc.lambda", self.rtlc_lambda.to_string());
        put("rtlc.fit_intercept", self.rtlc_fit_intercept.to_string());
        put("kmm.B", self.kmm_b.to_string());
        put("kmm.eps", opt(&self.kmm_eps));
        put("kmm.bandwidth", opt(&self.kmm_bandwidth));
        put("kmm.max_iter", self.kmm_max_iter.to_string());
        put("kmm.tol", self.kmm_tol.to_string());
        put("tradaboost.n_rounds", self.tradaboost_rounds.to_string());
        put("ulsif.ridge", self.ulsif_ridge.to_string());
        put("ulsif.n_centers", self.ulsif_centers.to_string());
        put("ulsif.bandwidth", opt(&self.ulsif_bandwidth));
        put("ulsif.source_centers", self.ulsif_source_centers.to_string());
        put("rulsif.alpha", self.rulsif_alpha.to_string());
        put("nnw.radius", opt(&self.nnw_radius));
        put("sa.subspace_dim", opt(&self.sa_dim));
        put("iwn.hidden_units", self.iwn_hidden.to_string());
        put("iwn.steps", self.iwn_steps.to_string());
        put("iwn.learning_rate", self.iwn_learning_rate.to_string());
        put("iwn.bandwidth", opt(&self.iwn_bandwidth));
        put("seed", self.seed.to_string());
        m
    }

    /// Keys that apply to one method.
    pub fn relevant(&self, method: Method) -> BTreeMap<String, String> {
        let prefix = match method {
            Method::Rulsif => "ulsif.",
            _ => "",
        };
        let own = format!("{}.", method.id());
        self.to_pairs()
            .into_iter()
            .filter(|(k, _)| k.starts_with(&own) || (!prefix.is_empty() && k.starts_with(prefix)))
            .collect()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "bw.gamma" => self.bw_gamma = parse_f64(key, v)?,
            "rtlc.lambda" => self.rtlc_lambda = parse_f64(key, v)?,
            "rtlc.fit_intercept" => self.rtlc_fit_intercept = parse_bool(key, v)?,
            "kmm.B" => self.kmm_b = parse_f64(key, v)?,
            "kmm.eps" => self.kmm_eps = parse_opt(key, v, parse_f64)?,
            "kmm.bandwidth" => self.kmm_bandwidth = parse_opt(key, v, parse_f64)?,
            "kmm.max_iter" => self.kmm_max_iter = parse_usize(key, v)?,
            "kmm.tol" => self.kmm_tol = parse_f64(key, v)?,
            "tradaboost.n_rounds" => self.tradaboost_rounds = parse_usize(key, v)?,
            "ulsif.ridge" => self.ulsif_ridge = parse_f64(key, v)?,
            "ulsif.n_centers" => self.ulsif_centers = parse_usize(key, v)?,
            "ulsif.bandwidth" => self.ulsif_bandwidth = parse_opt(key, v, parse_f64)?,
            "ulsif.source_centers" => self.ulsif_source_centers = parse_bool(key, v)?,
            "rulsif.alpha" => self.rulsif_alpha = parse_f64(key, v)?,
            "nnw.radius" => self.nnw_radius = parse_opt(key, v, parse_f64)?,
            "sa.subspace_dim" => self.sa_dim = parse_opt(key, v, parse_usize)?,
            "iwn.hidden_units" => self.iwn_hidden = parse_usize(key, v)?,
            "iwn.steps" => self.iwn_steps = parse_usize(key, v)?,
            "iwn.learning_rate" => self.iwn_learning_rate = parse_f64(key, v)?,
            "iwn.bandwidth" => self.iwn_bandwidth = parse_opt(key, v, parse_f64)?,
            "seed" => {
                self.seed = v
                    .parse()
                    .map_err(|_| Error::invalid(format!("hyperparameter `seed`: `{v}`")))?
            }
            _ => return Err(Error::invalid(format!("unknown hyperparameter `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` items separated by commas or newlines.
    pub fn parse_record(s: &str) -> Result<Self> {
        let mut p = MethodParams::default();
        for item in s.split([',', '\n']).map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got `{item}`")))?;
            p.set(k.trim(), v.trim())?;
        }
        Ok(p)
    }

    pub fn to_record(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip() {
        let p = MethodParams {
            rtlc_lambda: 2.5,
            kmm_bandwidth: Some(0.75),
            sa_dim: Some(4),
            ..MethodParams::default()
        };
        let back = MethodParams::parse_record(&p.to_record()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(MethodParams::parse_record("nope=1").is_err());
        assert!(MethodParams::parse_record("rtlc.lambda").is_err());
        assert!(MethodParams::parse_record("rtlc.lambda=abc").is_err());
    }

    #[test]
    fn relevant_keys_are_scoped() {
        let r = MethodParams::default().relevant(Method::Rtlc);
        assert!(r.keys().all(|k| k.starts_with("rtlc.")));
        assert!(MethodParams::default().relevant(Method::Rulsif).contains_key("ulsif.ridge"));
    }
}
