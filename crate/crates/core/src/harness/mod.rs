//! Experiment harness: synthetic hospital-style data, plan runs and the
//! protected vs. unprotected benchmark sweep.

mod bench;
mod data;

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

pub use bench::{bench, offline_precompute, run, write_metrics, MetricsRow, RunOutput};
pub use data::{
    gen_data, generate, load_dataset, load_stores, Dataset, Deployment, CONSENT_FRACTION, DOMAIN_SIZE, DS2_FRACTION,
    LATE_BATCHES,
};

use crate::error::{Error, Result};
use crate::mediator::CompositionPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Optimization {
    /// Reuse selectivities and candidate ranges within one execution.
    Cache,
    /// Invoke consenting subjects precisely.
    Consent,
    /// Maintain candidate ranges incrementally on the services.
    Offline,
}

impl Optimization {
    pub const ALL: [Optimization; 3] = [Optimization::Cache, Optimization::Consent, Optimization::Offline];

    pub fn as_str(self) -> &'static str {
        match self {
            Optimization::Cache => "cache",
            Optimization::Consent => "consent",
            Optimization::Offline => "offline",
        }
    }
}

impl FromStr for Optimization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Optimization::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown optimization `{s}`")))
    }
}

/// `none`, or the members joined by `+`.
pub fn optimization_label(set: &BTreeSet<Optimization>) -> String {
    if set.is_empty() {
        return "none".into();
    }
    set.iter().map(|o| o.as_str()).collect::<Vec<_>>().join("+")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TransportKind {
    #[default]
    InProc,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inproc" => Ok(TransportKind::InProc),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(Error::Invalid(format!("unknown transport `{other}`"))),
        }
    }
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportKind::InProc => "inproc",
            TransportKind::Tcp => "tcp",
        })
    }
}

/// Flat `key=value` experiment description. Lists are comma separated and
/// `#` starts a comment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset_sizes: Vec<usize>,
    pub k: usize,
    pub alpha: usize,
    /// `alpha * k` values swept by `bench`; empty means just `alpha * k`.
    pub alpha_ks: Vec<usize>,
    /// Swept by `bench`; `run` uses the first.
    pub bucket_sizes: Vec<usize>,
    pub optimizations: BTreeSet<Optimization>,
    pub repetitions: usize,
    pub seed: u64,
    pub transport: TransportKind,
    pub cities: usize,
    /// Value bound to every open root input, e.g. the queried city.
    pub city: String,
    /// Directory written by `gen_data`; `run` loads `<data_dir>/<size>`.
    pub data_dir: PathBuf,
    /// Also run every optimization on its own, not only the full set.
    pub ablation: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_sizes: vec![5_000, 10_000, 20_000, 40_000],
            k: 5,
            alpha: 5,
            alpha_ks: Vec::new(),
            bucket_sizes: vec![1_000],
            optimizations: Optimization::ALL.into_iter().collect(),
            repetitions: 10,
            seed: 42,
            transport: TransportKind::InProc,
            cities: 10,
            city: "city-0".into(),
            data_dir: PathBuf::from("data"),
            ablation: false,
        }
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Invalid(format!("{key}: bad value `{s}`"))))
        .collect()
}

fn one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Invalid(format!("{key}: bad value `{v}`")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n + 1, format!("expected key=value, got `{line}`")))?;
            let (key, v) = (key.trim(), v.trim());
            let wrap = |e: Error| Error::parse(n + 1, e.to_string());
            match key {
                "sizes" | "dataset_sizes" => c.dataset_sizes = list(key, v).map_err(wrap)?,
                "k" => c.k = one(key, v).map_err(wrap)?,
                "alpha" => c.alpha = one(key, v).map_err(wrap)?,
                "alpha_k" | "alpha_ks" | "beta" => c.alpha_ks = list(key, v).map_err(wrap)?,
                "bucket_size" | "bucket_sizes" => c.bucket_sizes = list(key, v).map_err(wrap)?,
                "optimizations" => {
                    c.optimizations = if v == "none" {
                        BTreeSet::new()
                    } else {
                        list::<String>(key, v)
                            .and_then(|xs| xs.iter().map(|x| x.parse()).collect())
                            .map_err(wrap)?
                    }
                }
                "repetitions" => c.repetitions = one(key, v).map_err(wrap)?,
                "seed" => c.seed = one(key, v).map_err(wrap)?,
                "transport" => c.transport = v.parse().map_err(wrap)?,
                "cities" => c.cities = one(key, v).map_err(wrap)?,
                "city" => c.city = v.to_string(),
                "data_dir" => c.data_dir = PathBuf::from(v),
                "ablation" => c.ablation = one(key, v).map_err(wrap)?,
                other => return Err(Error::parse(n + 1, format!("unknown key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Protection widths `alpha * k` to sweep, ascending.
    pub fn betas(&self) -> Vec<usize> {
        if self.alpha_ks.is_empty() {
            vec![self.alpha * self.k]
        } else {
            let mut b = self.alpha_ks.clone();
            b.sort_unstable();
            b.dedup();
            b
        }
    }

    /// `alpha` realizing protection width `beta`, rounded up.
    pub fn alpha_for_beta(&self, beta: usize) -> usize {
        beta.div_ceil(self.k).max(1)
    }

    /// Optimization sets swept by `bench`: none, the configured set and,
    /// with `ablation`, each configured optimization alone.
    pub fn optimization_sets(&self) -> Vec<BTreeSet<Optimization>> {
        let mut sets = vec![BTreeSet::new()];
        if self.ablation {
            sets.extend(self.optimizations.iter().map(|&o| BTreeSet::from([o])));
        }
        sets.push(self.optimizations.clone());
        sets.dedup();
        sets.sort();
        sets.dedup();
        sets
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.alpha == 0 {
            return Err(Error::Invalid("k and alpha must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Invalid("repetitions must be at least 1".into()));
        }
        if self.dataset_sizes.is_empty() || self.bucket_sizes.is_empty() {
            return Err(Error::Invalid("sizes and bucket_size must not be empty".into()));
        }
        if self.bucket_sizes.contains(&0) || self.cities == 0 {
            return Err(Error::Invalid("bucket_size and cities must be positive".into()));
        }
        let widest = self
            .betas()
            .into_iter()
            .map(|b| self.alpha_for_beta(b) * self.k)
            .max()
            .unwrap_or(0);
        if let Some(&n) = self.dataset_sizes.iter().find(|&&n| n < 2 * widest) {
            return Err(Error::Invalid(format!(
                "dataset size {n} below 2 * alpha * k = {}",
                2 * widest
            )));
        }
        Ok(())
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentConfig::parse(s)
    }
}

/// `DS1 -> DS2 -> DS3`: patients of a city, their second condition, their
/// demographics. Every node demands protection `k`.
pub fn default_plan(k: usize, alpha: usize) -> CompositionPlan {
    CompositionPlan::parse(&format!(
        "node ds1 service=DS1 k={k} input=const:city\n\
         node ds2 service=DS2 k={k} input=parent\n\
         node ds3 service=DS3 k={k} input=parent\n\
         edge ds1 ds2\n\
         edge ds2 ds3\n\
         alpha={alpha}\n"
    ))
    .expect("default plan is well formed")
}
