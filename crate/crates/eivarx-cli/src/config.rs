//! Run configuration: a flat `key = value` text format (`#` comments), with
//! JSON accepted as an alternative. Keys are dotted paths; see the README
//! for the full table.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use eivarx::acvf::scaled_acvf_basis;
use eivarx::mc::{McConfig, McScenario, Method};
use eivarx::model::{DifferenceEquation, NoiseSpec};
use eivarx::pipeline::PipelineConfig;
use eivarx::signal::{generate_prbs, simulate_system};
use eivarx::stats::variance;
use serde_json::Value;

/// Raw key-value view of a config file.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        if text.trim_start().starts_with('{') {
            Self::from_json(&text)
        } else {
            Self::from_flat(&text)
        }
    }

    fn from_flat(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected 'key = value', got '{line}'", lineno + 1))?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).context("parsing JSON config")?;
        let mut entries = BTreeMap::new();
        flatten_json("", &root, &mut entries)?;
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("config key '{key}': {e} (value '{raw}')")),
        }
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn parse_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) if raw.trim().is_empty() => Ok(Some(Vec::new())),
            Some(raw) => raw
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| anyhow!("config key '{key}': {e} (token '{tok}')"))
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    /// The resolved entries, for run manifests.
    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.entries
    }
}

fn flatten_json(prefix: &str, value: &Value, out: &mut BTreeMap<String, String>) -> Result<()> {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_json(&key, v, out)?;
            }
        }
        Value::Array(items) => {
            let rendered: Result<Vec<String>> = items
                .iter()
                .map(|v| match v {
                    Value::Number(n) => Ok(n.to_string()),
                    Value::String(s) => Ok(s.clone()),
                    other => bail!("config key '{prefix}': unsupported array element {other}"),
                })
                .collect();
            out.insert(prefix.to_string(), rendered?.join(","));
        }
        Value::Number(n) => {
            out.insert(prefix.to_string(), n.to_string());
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        Value::Bool(b) => {
            out.insert(prefix.to_string(), b.to_string());
        }
        Value::Null => {}
    }
    Ok(())
}

/// Model + excitation + noise resolved from a config.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub model: DifferenceEquation,
    pub noise: NoiseSpec,
    pub n: usize,
    pub prbs_bits: u32,
    pub prbs_seed: u64,
    pub prbs_levels: (f64, f64),
}

pub fn model_from(raw: &RawConfig) -> Result<DifferenceEquation> {
    let a = raw.parse_list("model.a")?.unwrap_or_default();
    let b = raw
        .parse_list("model.b")?
        .ok_or_else(|| anyhow!("config key 'model.b' is required"))?;
    let delay: usize = raw.parse_or("model.delay", 0)?;
    DifferenceEquation::new(a, b, delay).map_err(|e| anyhow!("invalid model: {e}"))
}

/// Resolves the simulation setup. Noise variances may be given directly
/// (`noise.sigma2_ey` / `noise.sigma2_eu`) or as SNR targets
/// (`noise.snr_output` / `noise.snr_input`), which are converted using the
/// simulated noise-free signal variances.
pub fn sim_setup_from(raw: &RawConfig) -> Result<SimSetup> {
    let model = model_from(raw)?;
    let n: usize = raw
        .parse("sim.n")?
        .ok_or_else(|| anyhow!("config key 'sim.n' is required"))?;
    let prbs_bits: u32 = raw
        .parse("sim.prbs_bits")?
        .ok_or_else(|| anyhow!("config key 'sim.prbs_bits' is required"))?;
    let prbs_seed: u64 = raw.parse_or("sim.prbs_seed", 1)?;
    let levels = raw.parse_list("sim.prbs_levels")?.unwrap_or(vec![-1.0, 1.0]);
    if levels.len() != 2 {
        bail!("config key 'sim.prbs_levels' must hold two values");
    }
    let prbs_levels = (levels[0], levels[1]);

    let direct_y: Option<f64> = raw.parse("noise.sigma2_ey")?;
    let direct_u: Option<f64> = raw.parse("noise.sigma2_eu")?;
    let snr_y: Option<f64> = raw.parse("noise.snr_output")?;
    let snr_u: Option<f64> = raw.parse("noise.snr_input")?;

    let needs_sim = (direct_y.is_none() && snr_y.is_some())
        || (direct_u.is_none() && snr_u.is_some());
    let (var_y_star, var_u_star) = if needs_sim {
        let u = generate_prbs(prbs_bits, n, prbs_seed, prbs_levels)
            .map_err(|e| anyhow!("{e}"))?;
        let y = simulate_system(&model, &u).map_err(|e| anyhow!("{e}"))?;
        (variance(&y), variance(&u))
    } else {
        (0.0, 0.0)
    };

    let sigma2_ey = match (direct_y, snr_y) {
        (Some(v), _) => v,
        (None, Some(snr)) => {
            // var(v_y) = sigma2_ey * gamma~[0]
            let gamma0 = scaled_acvf_basis(model.a(), model.n_y().max(1))
                .map_err(|e| anyhow!("{e}"))?
                .values()[0];
            var_y_star / (snr * gamma0)
        }
        (None, None) => bail!("set either 'noise.sigma2_ey' or 'noise.snr_output'"),
    };
    let sigma2_eu = match (direct_u, snr_u) {
        (Some(v), _) => v,
        (None, Some(snr)) => var_u_star / snr,
        (None, None) => bail!("set either 'noise.sigma2_eu' or 'noise.snr_input'"),
    };
    let noise = NoiseSpec::new(sigma2_ey, sigma2_eu).map_err(|e| anyhow!("{e}"))?;

    Ok(SimSetup { model, noise, n, prbs_bits, prbs_seed, prbs_levels })
}

pub fn pipeline_from(raw: &RawConfig) -> Result<PipelineConfig> {
    let lag: usize = raw
        .parse("pipeline.lag")?
        .ok_or_else(|| anyhow!("config key 'pipeline.lag' is required"))?;
    let mut config = PipelineConfig::new(lag);
    config.alpha = raw.parse_or("pipeline.alpha", config.alpha)?;
    config.max_outer_iter = raw.parse_or("pipeline.max_outer_iter", config.max_outer_iter)?;
    config.tol_theta = raw.parse_or("pipeline.tol_theta", config.tol_theta)?;
    config.tol_var = raw.parse_or("pipeline.tol_var", config.tol_var)?;
    config.zero_threshold = raw.parse_or("pipeline.zero_threshold", config.zero_threshold)?;
    Ok(config)
}

/// Builds the full Monte Carlo configuration. `seed_override` (from
/// `--seed`) takes precedence over `mc.base_seed`; one of them is required.
pub fn mc_config_from(
    raw: &RawConfig,
    seed_override: Option<u64>,
    methods_override: Option<&str>,
) -> Result<McConfig> {
    let setup = sim_setup_from(raw)?;
    let replications: usize = raw.parse_or("mc.replications", 100)?;
    let base_seed = match (seed_override, raw.parse::<u64>("mc.base_seed")?) {
        (Some(s), _) => s,
        (None, Some(s)) => s,
        (None, None) => bail!("Monte Carlo runs need a seed: set 'mc.base_seed' or pass --seed"),
    };
    let methods_raw = match methods_override {
        Some(m) => m.to_string(),
        None => raw.get("mc.methods").unwrap_or("proposed").to_string(),
    };
    let methods = methods_raw
        .split(',')
        .map(|tok| Method::parse(tok.trim()).map_err(|e| anyhow!("{e}")))
        .collect::<Result<Vec<Method>>>()?;

    let mut pipeline = pipeline_from(raw)?;
    pipeline.seed = base_seed;
    let mut scenario = McScenario::new(setup.model, setup.noise, setup.n, setup.prbs_bits);
    scenario.prbs_seed = setup.prbs_seed;
    scenario.prbs_levels = setup.prbs_levels;

    Ok(McConfig { replications, base_seed, scenario, methods, pipeline })
}
