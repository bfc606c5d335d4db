//! Flat `key = value` configuration with dotted keys. Later sources win:
//! file, then `--set` overrides, then dedicated flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use pairdiff_core::dgp::{GammaShape, WDesign};
use pairdiff_core::{DebiasPlan, DgpConfig, KernelFamily, KernelSpec, PairwiseModel};

use crate::error::CliError;

/// Every recognised key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("model", "plr | pll | plt"),
    ("data.path", "CSV file with header y,x1..xk,w1..wd"),
    ("dgp.n", "sample size of the synthetic design"),
    ("dgp.k", "number of regressors"),
    ("dgp.d", "number of kernel covariates"),
    ("dgp.gamma", "sine | quadratic | zero"),
    ("dgp.theta0", "comma-separated true parameter"),
    ("dgp.noise", "error standard deviation (1 for pll)"),
    ("dgp.w_law", "gaussian | uniform"),
    ("dgp.w_mean", "mean of each w coordinate (gaussian)"),
    ("dgp.w_sd", "standard deviation of each w coordinate (gaussian)"),
    ("dgp.w_lo", "lower end of each w coordinate (uniform)"),
    ("dgp.w_hi", "upper end of each w coordinate (uniform)"),
    ("dgp.x_loading", "rho in x = rho*w1 + nu"),
    ("dgp.intercept", "index shift"),
    ("kernel", "gaussian | epanechnikov | uniform"),
    ("kernel.d", "kernel dimension for kernel-check"),
    ("h", "bandwidth"),
    ("h.rule", "C,kappa for h = C*n^-kappa"),
    ("debias.L", "even debiasing order"),
    ("debias.c", "comma-separated bandwidth multipliers, first 1"),
    ("bootstrap.B", "bootstrap replicates"),
    ("bootstrap.alpha", "1 - confidence level"),
    ("bootstrap.contrast", "comma-separated contrast vector"),
    ("seed", "master seed"),
    ("validate.reps", "Monte Carlo replications"),
    ("validate.grid", "bandwidth grid for bias-order, strictly decreasing"),
    ("validate.h", "bandwidths for variance-match and boot-inflation"),
    ("validate.orders", "debiasing orders compared by bias-order and coverage"),
    ("validate.alphas", "levels checked by coverage"),
    ("validate.coverage_band", "lo,hi acceptance band for coverage (default 3 binomial SEs)"),
    ("validate.ratio_band", "lo,hi band for variance-match ratios"),
    ("validate.inflated_band", "lo,hi band for the unscaled ratio at small bandwidths"),
    ("validate.scaled_band", "lo,hi band for the rescaled ratio"),
    ("validate.consistent_band", "lo,hi band for the unscaled ratio at large bandwidths"),
    ("output.json", "result path (stdout when absent)"),
    ("output.csv", "table path for validate and kernel-check"),
    ("verbose", "true to include full solver records and draws"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut kv = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1)))?;
            kv.set(k.trim(), v.trim()).map_err(|e| CliError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(format!("unknown key `{key}`"));
        }
        self.map.insert(key.to_owned(), value.trim_matches('"').to_owned());
        Ok(())
    }

    /// `key=value` from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| CliError::Config(format!("`--set {pair}`: expected key=value")))?;
        self.set(k.trim(), v.trim()).map_err(CliError::Config)
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.map.keys().any(|k| k.starts_with(prefix))
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).map(|v| v.parse::<T>().map_err(|e| CliError::Config(format!("`{key} = {v}`: {e}")))).transpose()
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key).map(|v| parse_list(v).map_err(|e| CliError::Config(format!("`{key} = {v}`: {e}")))).transpose()
    }

    fn band(&self, key: &str, default: (f64, f64)) -> Result<(f64, f64), CliError> {
        match self.list::<f64>(key)? {
            None => Ok(default),
            Some(v) if v.len() == 2 && v[0] <= v[1] => Ok((v[0], v[1])),
            Some(_) => Err(CliError::Config(format!("`{key}` must be `lo,hi` with lo <= hi"))),
        }
    }
}

pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    text.split(',').map(|s| s.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", s.trim()))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Bandwidth {
    Fixed { h: f64 },
    /// `h = constant * n^{-exponent}`
    Rule { constant: f64, exponent: f64 },
}

impl Bandwidth {
    pub fn resolve(&self, n: usize) -> f64 {
        match *self {
            Bandwidth::Fixed { h } => h,
            Bandwidth::Rule { constant, exponent } => constant * (n as f64).powf(-exponent),
        }
    }

    pub fn parse_rule(text: &str) -> Result<Self, CliError> {
        let v: Vec<f64> = parse_list(text).map_err(|e| CliError::Config(format!("h-rule: {e}")))?;
        match *v.as_slice() {
            [c, kappa] if c > 0.0 && c.is_finite() && kappa > 0.0 && kappa < 1.0 => Ok(Bandwidth::Rule { constant: c, exponent: kappa }),
            [_, _] => Err(CliError::Config(format!("h-rule `{text}`: need C > 0 and kappa in (0, 1)"))),
            _ => Err(CliError::Config(format!("h-rule `{text}`: expected `C,kappa`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    File { path: PathBuf },
    Dgp(DgpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub alpha: f64,
    /// First unit vector when absent.
    pub contrast: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateSettings {
    pub reps: Option<usize>,
    pub grid: Option<Vec<f64>>,
    pub bandwidths: Option<Vec<f64>>,
    pub orders: Option<Vec<usize>>,
    pub alphas: Option<Vec<f64>>,
    pub coverage_band: Option<(f64, f64)>,
    pub ratio_band: (f64, f64),
    pub inflated_band: (f64, f64),
    pub scaled_band: (f64, f64),
    pub consistent_band: (f64, f64),
}

/// Output locations; deliberately left out of serialized results so that
/// the same run written to two places produces identical bytes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputPaths {
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub model: PairwiseModel,
    pub source: DataSource,
    pub kernel: KernelFamily,
    pub kernel_dim: Option<usize>,
    pub bandwidth: Bandwidth,
    pub order: usize,
    pub multipliers: Vec<f64>,
    pub bootstrap: BootstrapSettings,
    pub seed: u64,
    pub validate: ValidateSettings,
    pub verbose: bool,
    #[serde(skip)]
    pub output: OutputPaths,
}

fn dgp_from_keys(kv: &KeyValues, model: PairwiseModel) -> Result<DgpConfig, CliError> {
    let n = kv.parsed("dgp.n")?.unwrap_or(300);
    let k = kv.parsed("dgp.k")?.unwrap_or(2);
    let d = kv.parsed("dgp.d")?.unwrap_or(1);
    let mut dgp = DgpConfig::new(model, n, k, d);
    if let Some(g) = kv.get("dgp.gamma") {
        dgp.gamma = match g {
            "sine" => GammaShape::Sine,
            "quadratic" => GammaShape::Quadratic,
            "zero" => GammaShape::Zero,
            other => return Err(CliError::Config(format!("`dgp.gamma = {other}`: expected sine, quadratic or zero"))),
        };
    }
    if let Some(t) = kv.list("dgp.theta0")? {
        dgp.theta0 = t;
    }
    if let Some(s) = kv.parsed("dgp.noise")? {
        dgp.noise_scale = s;
    }
    dgp.w_design = match kv.get("dgp.w_law").unwrap_or("gaussian") {
        "gaussian" => WDesign::Gaussian { mean: kv.parsed("dgp.w_mean")?.unwrap_or(0.0), sd: kv.parsed("dgp.w_sd")?.unwrap_or(1.0) },
        "uniform" => WDesign::Uniform { lo: kv.parsed("dgp.w_lo")?.unwrap_or(-1.0), hi: kv.parsed("dgp.w_hi")?.unwrap_or(1.0) },
        other => return Err(CliError::Config(format!("`dgp.w_law = {other}`: expected gaussian or uniform"))),
    };
    if let Some(r) = kv.parsed("dgp.x_loading")? {
        dgp.x_loading = r;
    }
    if let Some(a) = kv.parsed("dgp.intercept")? {
        dgp.intercept = a;
    }
    dgp.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(dgp)
}

impl RunConfig {
    /// Resolves and validates. `needs_data` commands must name exactly one
    /// data source; the others default to the synthetic design.
    pub fn resolve(command: &str, kv: &KeyValues, needs_data: bool) -> Result<Self, CliError> {
        let model: PairwiseModel = kv.parsed("model")?.unwrap_or(PairwiseModel::Plr);
        let seed: u64 = kv.parsed("seed")?.unwrap_or(0);
        let file = kv.get("data.path").map(PathBuf::from);
        let source = match (file, kv.has_prefix("dgp.")) {
            (Some(_), true) => return Err(CliError::Config("give either data.path or dgp.* keys, not both".into())),
            (Some(path), false) => {
                if !path.exists() {
                    return Err(CliError::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
                }
                DataSource::File { path }
            }
            (None, has_dgp) => {
                if needs_data && !has_dgp {
                    return Err(CliError::Config("no data: set data.path (--data) or dgp.* keys".into()));
                }
                let mut dgp = dgp_from_keys(kv, model)?;
                dgp.seed = seed;
                DataSource::Dgp(dgp)
            }
        };
        let kernel: KernelFamily = kv.parsed("kernel")?.unwrap_or(KernelFamily::Gaussian);
        let kernel_dim = kv.parsed("kernel.d")?;
        let bandwidth = match (kv.parsed::<f64>("h")?, kv.get("h.rule")) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either h or h.rule, not both".into())),
            (Some(h), None) if h > 0.0 && h.is_finite() => Bandwidth::Fixed { h },
            (Some(h), None) => return Err(CliError::Config(format!("bandwidth must be positive, got {h}"))),
            (None, Some(rule)) => Bandwidth::parse_rule(rule)?,
            (None, None) => Bandwidth::Rule { constant: 1.0, exponent: 1.0 / 3.0 },
        };
        let order: usize = kv.parsed("debias.L")?.unwrap_or(0);
        let multipliers = match kv.list::<f64>("debias.c")? {
            Some(c) => c,
            None => pairdiff_core::jackknife::default_multipliers(order).map_err(|e| CliError::Config(e.to_string()))?,
        };
        DebiasPlan::new(order, multipliers.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        let bootstrap = BootstrapSettings {
            replicates: kv.parsed("bootstrap.B")?.unwrap_or(999),
            alpha: kv.parsed("bootstrap.alpha")?.unwrap_or(0.05),
            contrast: kv.list("bootstrap.contrast")?,
        };
        if !(bootstrap.alpha > 0.0 && bootstrap.alpha < 1.0) {
            return Err(CliError::Config(format!("bootstrap.alpha must lie in (0, 1), got {}", bootstrap.alpha)));
        }
        let coverage_band = match kv.get("validate.coverage_band") {
            Some(_) => Some(kv.band("validate.coverage_band", (0.0, 1.0))?),
            None => None,
        };
        let validate = ValidateSettings {
            reps: kv.parsed("validate.reps")?,
            grid: kv.list("validate.grid")?,
            bandwidths: kv.list("validate.h")?,
            orders: kv.list("validate.orders")?,
            alphas: kv.list("validate.alphas")?,
            coverage_band,
            ratio_band: kv.band("validate.ratio_band", (0.7, 1.4))?,
            inflated_band: kv.band("validate.inflated_band", (2.0, 4.0))?,
            scaled_band: kv.band("validate.scaled_band", (0.7, 1.4))?,
            consistent_band: kv.band("validate.consistent_band", (0.8, 1.3))?,
        };
        let verbose = kv.parsed("verbose")?.unwrap_or(false);
        let output = OutputPaths { json: kv.get("output.json").map(PathBuf::from), csv: kv.get("output.csv").map(PathBuf::from) };
        Ok(Self { command: command.to_owned(), model, source, kernel, kernel_dim, bandwidth, order, multipliers, bootstrap, seed, validate, verbose, output })
    }

    pub fn plan(&self) -> DebiasPlan {
        DebiasPlan::new(self.order, self.multipliers.clone()).expect("validated at resolve time")
    }

    pub fn kernel_spec(&self, d: usize) -> Result<KernelSpec, CliError> {
        KernelSpec::new(self.kernel, d).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn dgp(&self) -> Result<&DgpConfig, CliError> {
        match &self.source {
            DataSource::Dgp(d) => Ok(d),
            DataSource::File { .. } => Err(CliError::Config(format!("`{}` needs a synthetic design (dgp.* keys), not a data file", self.command))),
        }
    }

    pub fn contrast(&self, k: usize) -> Vec<f64> {
        self.bootstrap.contrast.clone().unwrap_or_else(|| (0..k).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect())
    }
}
