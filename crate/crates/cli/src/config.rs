//! Flat key=value configuration.
//!
//! One file configures every stage; unknown keys fail loudly so typos never
//! silently fall back to defaults. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use stratex_core::retrieval::Route;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub neighbor_temperature: f64,
    pub neighbor_k: usize,
    pub embed_batch_max: usize,
    pub routes_enabled: Vec<Route>,
    pub trigger_min: usize,
    pub max_guidance: usize,
    pub min_coverage: usize,
    pub delta: f64,
    pub delta_neg: f64,
    pub prior_alpha: f64,
    pub prior_beta: f64,
    pub l2_lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub tau: f64,
    pub negatives_k: usize,
    pub trials_t: usize,
    pub fit_max_iters: usize,
    pub fit_tol: f64,
    pub fit_lr: f64,
    /// Neighbors used to transfer a graph embedding to an unseen strategy.
    pub strategy_knn_k: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            neighbor_temperature: 0.1,
            neighbor_k: 5,
            embed_batch_max: 32,
            routes_enabled: vec![Route::A, Route::B, Route::C],
            trigger_min: 5,
            max_guidance: 5,
            min_coverage: 3,
            delta: 0.5,
            delta_neg: 0.1,
            prior_alpha: 1.0,
            prior_beta: 1.0,
            l2_lambda: 1e-4,
            epochs: 50,
            lr: 1e-3,
            batch: 32,
            tau: 0.07,
            negatives_k: 10,
            trials_t: 3,
            fit_max_iters: 10_000,
            fit_tol: 1e-6,
            fit_lr: 1.0,
            strategy_knn_k: 5,
        }
    }
}

fn parse_routes(value: &str) -> Result<Vec<Route>> {
    let mut routes = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        routes.push(match part {
            "A" | "a" => Route::A,
            "B" | "b" => Route::B,
            "C" | "c" => Route::C,
            other => bail!("unknown route `{other}` (expected A, B, or C)"),
        });
    }
    Ok(routes)
}

impl Config {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! set {
            ($field:ident, $ty:ty) => {{
                self.$field = value
                    .parse::<$ty>()
                    .with_context(|| format!("invalid value `{value}` for `{key}`"))?;
            }};
        }
        match key {
            "neighbor_temperature" => set!(neighbor_temperature, f64),
            // Both names refer to the same neighborhood size.
            "neighbor_k" | "knn_k" => set!(neighbor_k, usize),
            "embed_batch_max" => set!(embed_batch_max, usize),
            "routes.enabled" => self.routes_enabled = parse_routes(value)?,
            "trigger_min" => set!(trigger_min, usize),
            "max_guidance" => set!(max_guidance, usize),
            "min_coverage" => set!(min_coverage, usize),
            "delta" => set!(delta, f64),
            "delta_neg" => set!(delta_neg, f64),
            "prior_alpha" => set!(prior_alpha, f64),
            "prior_beta" => set!(prior_beta, f64),
            "l2_lambda" => set!(l2_lambda, f64),
            "epochs" => set!(epochs, usize),
            "lr" => set!(lr, f64),
            "batch" => set!(batch, usize),
            "tau" => set!(tau, f64),
            "negatives_k" => set!(negatives_k, usize),
            "trials_t" => set!(trials_t, usize),
            "fit_max_iters" => set!(fit_max_iters, usize),
            "fit_tol" => set!(fit_tol, f64),
            "fit_lr" => set!(fit_lr, f64),
            "strategy_knn_k" => set!(strategy_knn_k, usize),
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Config::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("config line {}: expected key=value", idx + 1))?;
            config
                .apply(key.trim(), value.trim())
                .with_context(|| format!("config line {}", idx + 1))?;
        }
        Ok(config)
    }

    /// Effective settings as a deterministic string map for manifests.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let routes: Vec<&str> = self
            .routes_enabled
            .iter()
            .map(|r| match r {
                Route::A => "A",
                Route::B => "B",
                Route::C => "C",
            })
            .collect();
        map.insert("routes.enabled".into(), routes.join(","));
        for (k, v) in [
            ("neighbor_temperature", format!("{}", self.neighbor_temperature)),
            ("neighbor_k", format!("{}", self.neighbor_k)),
            ("embed_batch_max", format!("{}", self.embed_batch_max)),
            ("trigger_min", format!("{}", self.trigger_min)),
            ("max_guidance", format!("{}", self.max_guidance)),
            ("min_coverage", format!("{}", self.min_coverage)),
            ("delta", format!("{}", self.delta)),
            ("delta_neg", format!("{}", self.delta_neg)),
            ("prior_alpha", format!("{}", self.prior_alpha)),
            ("prior_beta", format!("{}", self.prior_beta)),
            ("l2_lambda", format!("{}", self.l2_lambda)),
            ("epochs", format!("{}", self.epochs)),
            ("lr", format!("{}", self.lr)),
            ("batch", format!("{}", self.batch)),
            ("tau", format!("{}", self.tau)),
            ("negatives_k", format!("{}", self.negatives_k)),
            ("trials_t", format!("{}", self.trials_t)),
            ("fit_max_iters", format!("{}", self.fit_max_iters)),
            ("fit_tol", format!("{}", self.fit_tol)),
            ("fit_lr", format!("{}", self.fit_lr)),
            ("strategy_knn_k", format!("{}", self.strategy_knn_k)),
        ] {
            map.insert(k.into(), v);
        }
        map
    }

    pub fn retrieval(&self) -> stratex_core::retrieval::RetrievalConfig {
        stratex_core::retrieval::RetrievalConfig {
            routes_enabled: self.routes_enabled.iter().copied().collect(),
            neighbor_k: self.neighbor_k,
            neighbor_temperature: self.neighbor_temperature,
            trigger_min: self.trigger_min,
            max_guidance: self.max_guidance,
            delta: self.delta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_match_the_fixed_protocol() {
        let c = Config::default();
        assert_eq!(c.neighbor_k, 5);
        assert_eq!(c.neighbor_temperature, 0.1);
        assert_eq!(c.epochs, 50);
        assert_eq!(c.tau, 0.07);
        assert_eq!(c.negatives_k, 10);
        assert_eq!(c.delta, 0.5);
        assert_eq!(c.delta_neg, 0.1);
        assert_eq!(c.trials_t, 3);
    }

    #[test]
    fn file_overrides_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# comment\nneighbor_k=7\nroutes.enabled=A,C\ndelta=0.6").unwrap();
        let c = Config::load(&path).unwrap();
        assert_eq!(c.neighbor_k, 7);
        assert_eq!(c.routes_enabled, vec![Route::A, Route::C]);
        assert_eq!(c.delta, 0.6);

        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "no_such_key=1").unwrap();
        assert!(Config::load(&path).is_err());
    }

    #[test]
    fn knn_k_aliases_neighbor_k() {
        let mut c = Config::default();
        c.apply("knn_k", "9").unwrap();
        assert_eq!(c.neighbor_k, 9);
    }
}
