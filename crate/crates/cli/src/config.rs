//! Layered configuration: defaults, then a `key = value` file, then
//! environment variables, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use memloop::backends::{ApiKey, BackendConfig};
use memloop::context::PrecisionThresholds;

pub const ENV_CONFIG: &str = "MEMLOOP_CONFIG";
pub const ENV_API_KEY: &str = "MEMLOOP_API_KEY";
pub const MIN_BUDGET: usize = 1024;

const BACKEND_FIELDS: &[&str] = &["base_url", "model", "timeout_secs", "max_retries", "backoff_ms", "temperature"];
const PLAIN_KEYS: &[&str] = &[
    "mr_path",
    "budget",
    "max_revisions",
    "parallelism",
    "rounds",
    "success_only",
    "transcript",
    "report_path",
    "thresholds.original",
    "thresholds.concise",
    "mock.llm",
    "mock.embed",
    "backend.api_key",
    "backend.embed.dim",
];

fn known_key(key: &str) -> bool {
    if PLAIN_KEYS.contains(&key) {
        return true;
    }
    ["backend.chat.", "backend.embed.", "backend.helper."]
        .iter()
        .any(|prefix| key.strip_prefix(prefix).is_some_and(|f| BACKEND_FIELDS.contains(&f)))
}

/// Raw settings keyed by their config-file names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", n + 1))?;
            let k = k.trim();
            if !known_key(k) {
                bail!("{origin}:{}: unknown key '{k}'", n + 1);
            }
            map.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(known_key(key), "{key}");
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| anyhow!("invalid {key} '{v}': {e}")),
        }
    }

    fn backend(&self, role: &str, api_key: Option<&ApiKey>) -> Result<BackendConfig> {
        let d = BackendConfig::default();
        let key = |f: &str| format!("backend.{role}.{f}");
        Ok(BackendConfig {
            base_url: self.get(&key("base_url")).map(str::to_string).unwrap_or(d.base_url),
            model: self.get(&key("model")).map(str::to_string).unwrap_or(d.model),
            timeout: Duration::from_secs(self.parsed(&key("timeout_secs"), d.timeout.as_secs())?),
            max_retries: self.parsed(&key("max_retries"), d.max_retries)?,
            backoff: Duration::from_millis(self.parsed(&key("backoff_ms"), d.backoff.as_millis() as u64)?),
            temperature: self.parsed(&key("temperature"), d.temperature)?,
            api_key: api_key.cloned(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub mr_path: PathBuf,
    pub budget: usize,
    pub max_revisions: usize,
    pub parallelism: usize,
    pub rounds: usize,
    pub success_only: bool,
    pub thresholds: PrecisionThresholds,
    pub transcript: Option<PathBuf>,
    pub report_path: PathBuf,
    pub mock_llm: Option<PathBuf>,
    pub mock_embed: bool,
    pub embed_dim: usize,
    pub chat: BackendConfig,
    pub embed: BackendConfig,
    /// Present when `backend.helper.model` is set.
    pub helper: Option<BackendConfig>,
}

impl CliConfig {
    pub fn resolve(s: &Settings) -> Result<Self> {
        let api_key = s.get("backend.api_key").filter(|k| !k.is_empty()).map(ApiKey::new);
        let thresholds = PrecisionThresholds {
            original: s.parsed("thresholds.original", PrecisionThresholds::default().original)?,
            concise: s.parsed("thresholds.concise", PrecisionThresholds::default().concise)?,
        };
        let config = Self {
            mr_path: s.get("mr_path").unwrap_or("memloop.mr.jsonl").into(),
            budget: s.parsed("budget", memloop::context::DEFAULT_BUDGET)?,
            max_revisions: s.parsed("max_revisions", memloop::engine::DEFAULT_MAX_REVISIONS)?,
            parallelism: s.parsed("parallelism", 1)?,
            rounds: s.parsed("rounds", 1)?,
            success_only: s.parsed("success_only", true)?,
            thresholds,
            transcript: s.get("transcript").map(PathBuf::from),
            report_path: s.get("report_path").unwrap_or("memloop-report.jsonl").into(),
            mock_llm: s.get("mock.llm").map(PathBuf::from),
            mock_embed: s.parsed("mock.embed", false)?,
            embed_dim: s.parsed("backend.embed.dim", 768)?,
            chat: s.backend("chat", api_key.as_ref())?,
            embed: s.backend("embed", api_key.as_ref())?,
            helper: match s.get("backend.helper.model") {
                Some(_) => Some(s.backend("helper", api_key.as_ref())?),
                None => None,
            },
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.budget < MIN_BUDGET {
            bail!("budget must be at least {MIN_BUDGET} tokens, got {}", self.budget);
        }
        if self.max_revisions == 0 {
            bail!("max_revisions must be at least 1");
        }
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if self.rounds == 0 {
            bail!("rounds must be at least 1");
        }
        if self.embed_dim == 0 {
            bail!("backend.embed.dim must be positive");
        }
        let t = self.thresholds;
        if !(0.0..=1.0).contains(&t.concise) || !(0.0..=1.0).contains(&t.original) || t.concise > t.original {
            bail!("thresholds must satisfy 0 <= concise <= original <= 1");
        }
        Ok(())
    }
}
