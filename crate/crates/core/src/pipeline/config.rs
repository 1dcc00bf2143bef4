//! `key=value` run configuration with section prefixes.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file plus a prompt is a complete configuration.
//! Unknown keys are errors. The canonical form lists every key in sorted
//! order; its SHA-256 is the configuration digest.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use thiserror::Error;

use crate::agents::AgentEndpoint;
use crate::cadr::CadrConfig;
use crate::criticore::{CommitteeConfig, CommitteeMode, DEFAULT_BUDGET};
use crate::diffusion::{RefineMode, SamplerKind, ScheduleParams, TOY_MIN_HEIGHT, TOY_MIN_WIDTH};
use crate::latents::{digest_bytes, Shape, VaeScale};
use crate::spectral::{Clamp, TaperSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusionBackendKind {
    Toy,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentBackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub prompt: String,
    pub budget: usize,
    pub shape: Shape,
    pub vae_scale: VaeScale,
    pub schedule: ScheduleParams,
    pub sampler: SamplerKind,
    /// CFG scale of the base pass.
    pub guidance: f64,
    pub committee: CommitteeConfig,
    pub cadr: CadrConfig,
    pub taper: TaperSpec,
    pub clamp: Clamp,
    pub diffusion_backend: DiffusionBackendKind,
    /// Program and arguments of the external backbone, split on whitespace.
    pub backend_command: Vec<String>,
    pub agent_backend: AgentBackendKind,
    pub endpoint: AgentEndpoint,
    /// Answer failed remote agent calls with the mock agent.
    pub degrade: bool,
    pub seed: u64,
    pub refine_mode: RefineMode,
    /// Corrective step count held fixed by k-sweeps.
    pub sweep_t_prime: u32,
    pub dump_images: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prompt: String::new(),
            budget: DEFAULT_BUDGET,
            shape: Shape {
                channels: 4,
                height: 64,
                width: 64,
            },
            vae_scale: VaeScale::SD15,
            schedule: ScheduleParams::default(),
            sampler: SamplerKind::Ddim,
            guidance: 7.5,
            committee: CommitteeConfig::default(),
            cadr: CadrConfig::default(),
            taper: TaperSpec::default(),
            clamp: Clamp::Off,
            diffusion_backend: DiffusionBackendKind::Toy,
            backend_command: Vec::new(),
            agent_backend: AgentBackendKind::Mock,
            endpoint: AgentEndpoint::new("https://api.together.xyz/v1", "default"),
            degrade: false,
            seed: 0,
            refine_mode: RefineMode::Img2Img,
            sweep_t_prime: 30,
            dump_images: false,
        }
    }
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_owned(),
        value: value.to_owned(),
        reason: reason.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| bad(key, value, e.to_string()))
}

fn flag(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|v| num::<usize>(key, v.trim()))
        .collect()
}

impl PipelineConfig {
    /// Parses `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: line.to_owned(),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "prompt.text" => self.prompt = v.to_owned(),
            "prompt.budget" => self.budget = num(key, v)?,
            "latent.channels" => self.shape.channels = num(key, v)?,
            "latent.height" => self.shape.height = num(key, v)?,
            "latent.width" => self.shape.width = num(key, v)?,
            "latent.vae_scale" => {
                self.vae_scale = VaeScale::new(num(key, v)?).ok_or_else(|| bad(key, v, "must be > 0"))?
            }
            "schedule.steps" => self.schedule.steps = num(key, v)?,
            "schedule.beta_start" => self.schedule.beta_start = num(key, v)?,
            "schedule.beta_end" => self.schedule.beta_end = num(key, v)?,
            "sampler.kind" => self.sampler = v.parse().map_err(|e: String| bad(key, v, e))?,
            "sampler.guidance" => self.guidance = num(key, v)?,
            "committee.mode" => {
                self.committee.mode = match v {
                    "mad" => CommitteeMode::Mad,
                    "moa" => CommitteeMode::Moa,
                    _ => return Err(bad(key, v, "expected mad or moa")),
                }
            }
            "committee.agents" => self.committee.agents = num(key, v)?,
            "committee.rounds" => self.committee.rounds = num(key, v)?,
            "committee.widths" => self.committee.widths = list(key, v)?,
            "committee.k_edit" => self.committee.k_edit = num(key, v)?,
            "committee.k_hints" => self.committee.k_hints = num(key, v)?,
            "cadr.lambda_min" => self.cadr.lambda.min = num(key, v)?,
            "cadr.lambda_max" => self.cadr.lambda.max = num(key, v)?,
            "cadr.guidance_min" => self.cadr.guidance.min = num(key, v)?,
            "cadr.guidance_max" => self.cadr.guidance.max = num(key, v)?,
            "cadr.t_prime_min" => self.cadr.t_prime.0 = num(key, v)?,
            "cadr.t_prime_max" => self.cadr.t_prime.1 = num(key, v)?,
            "cadr.rho_min" => self.cadr.rho.min = num(key, v)?,
            "cadr.rho_max" => self.cadr.rho.max = num(key, v)?,
            "cadr.skip_threshold" => self.cadr.skip_threshold = num(key, v)?,
            "spectral.taper" => {
                self.taper = TaperSpec::new(num(key, v)?).map_err(|e| bad(key, v, e.to_string()))?
            }
            "spectral.clamp" => self.clamp = if flag(key, v)? { Clamp::On } else { Clamp::Off },
            "backend.diffusion" => {
                self.diffusion_backend = match v {
                    "toy" => DiffusionBackendKind::Toy,
                    "external" => DiffusionBackendKind::External,
                    _ => return Err(bad(key, v, "expected toy or external")),
                }
            }
            "backend.command" => self.backend_command = v.split_whitespace().map(str::to_owned).collect(),
            "agents.backend" => {
                self.agent_backend = match v {
                    "mock" => AgentBackendKind::Mock,
                    "http" => AgentBackendKind::Http,
                    _ => return Err(bad(key, v, "expected mock or http")),
                }
            }
            "agents.base_url" => self.endpoint.base_url = v.to_owned(),
            "agents.model" => self.endpoint.model = v.to_owned(),
            "agents.token_env" => self.endpoint.token_env = v.to_owned(),
            "agents.timeout_ms" => self.endpoint.timeout = Duration::from_millis(num(key, v)?),
            "agents.max_retries" => self.endpoint.max_retries = num(key, v)?,
            "agents.backoff_ms" => self.endpoint.initial_backoff = Duration::from_millis(num(key, v)?),
            "agents.max_concurrency" => self.endpoint.max_concurrency = num(key, v)?,
            "agents.degrade" => {
                self.degrade = match v {
                    "allow" => true,
                    "abort" => false,
                    _ => return Err(bad(key, v, "expected allow or abort")),
                }
            }
            "run.seed" => self.seed = num(key, v)?,
            "run.refine_mode" => self.refine_mode = v.parse().map_err(|e: String| bad(key, v, e))?,
            "sweep.t_prime" => self.sweep_t_prime = num(key, v)?,
            "output.dump_images" => self.dump_images = flag(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    /// Every key with its current value, sorted by key.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_owned(), v);
        };
        put("prompt.text", self.prompt.clone());
        put("prompt.budget", self.budget.to_string());
        put("latent.channels", self.shape.channels.to_string());
        put("latent.height", self.shape.height.to_string());
        put("latent.width", self.shape.width.to_string());
        put("latent.vae_scale", self.vae_scale.gamma().to_string());
        put("schedule.steps", self.schedule.steps.to_string());
        put("schedule.beta_start", self.schedule.beta_start.to_string());
        put("schedule.beta_end", self.schedule.beta_end.to_string());
        put("sampler.kind", self.sampler.to_string());
        put("sampler.guidance", self.guidance.to_string());
        put(
            "committee.mode",
            match self.committee.mode {
                CommitteeMode::Mad => "mad",
                CommitteeMode::Moa => "moa",
            }
            .to_owned(),
        );
        put("committee.agents", self.committee.agents.to_string());
        put("committee.rounds", self.committee.rounds.to_string());
        put(
            "committee.widths",
            self.committee
                .widths
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        put("committee.k_edit", self.committee.k_edit.to_string());
        put("committee.k_hints", self.committee.k_hints.to_string());
        put("cadr.lambda_min", self.cadr.lambda.min.to_string());
        put("cadr.lambda_max", self.cadr.lambda.max.to_string());
        put("cadr.guidance_min", self.cadr.guidance.min.to_string());
        put("cadr.guidance_max", self.cadr.guidance.max.to_string());
        put("cadr.t_prime_min", self.cadr.t_prime.0.to_string());
        put("cadr.t_prime_max", self.cadr.t_prime.1.to_string());
        put("cadr.rho_min", self.cadr.rho.min.to_string());
        put("cadr.rho_max", self.cadr.rho.max.to_string());
        put("cadr.skip_threshold", self.cadr.skip_threshold.to_string());
        put("spectral.taper", self.taper.fraction().to_string());
        put(
            "spectral.clamp",
            (self.clamp == Clamp::On).to_string(),
        );
        put(
            "backend.diffusion",
            match self.diffusion_backend {
                DiffusionBackendKind::Toy => "toy",
                DiffusionBackendKind::External => "external",
            }
            .to_owned(),
        );
        put("backend.command", self.backend_command.join(" "));
        put(
            "agents.backend",
            match self.agent_backend {
                AgentBackendKind::Mock => "mock",
                AgentBackendKind::Http => "http",
            }
            .to_owned(),
        );
        put("agents.base_url", self.endpoint.base_url.clone());
        put("agents.model", self.endpoint.model.clone());
        put("agents.token_env", self.endpoint.token_env.clone());
        put("agents.timeout_ms", self.endpoint.timeout.as_millis().to_string());
        put("agents.max_retries", self.endpoint.max_retries.to_string());
        put("agents.backoff_ms", self.endpoint.initial_backoff.as_millis().to_string());
        put("agents.max_concurrency", self.endpoint.max_concurrency.to_string());
        put("agents.degrade", if self.degrade { "allow" } else { "abort" }.to_owned());
        put("run.seed", self.seed.to_string());
        put("run.refine_mode", self.refine_mode.to_string());
        put("sweep.t_prime", self.sweep_t_prime.to_string());
        put("output.dump_images", self.dump_images.to_string());
        m
    }

    /// Canonical `key=value` text, one line per key.
    pub fn canonical(&self) -> String {
        self.to_kv()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn digest(&self) -> String {
        digest_bytes(self.canonical().as_bytes())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.prompt.trim().is_empty() {
            return invalid("prompt.text is empty".into());
        }
        if self.budget == 0 {
            return invalid("prompt.budget must be at least 1".into());
        }
        Shape::new(self.shape.channels, self.shape.height, self.shape.width)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.schedule
            .build()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.guidance >= 0.0 && self.guidance.is_finite()) {
            return invalid(format!("sampler.guidance {} must be >= 0", self.guidance));
        }
        self.committee
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.committee.width() > crate::lexicon::LEXICON_COUNT {
            return invalid(format!(
                "committee width {} exceeds the {} mock lexicons",
                self.committee.width(),
                crate::lexicon::LEXICON_COUNT
            ));
        }
        self.cadr.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.cadr.rho.min >= 0.0 && self.cadr.rho.max <= 1.0) {
            return invalid("cadr rho range must lie in [0, 1]".into());
        }
        let max_t = self.cadr.t_prime.1.max(self.sweep_t_prime) as usize;
        if max_t > self.schedule.steps {
            return invalid(format!(
                "corrective steps up to {max_t} exceed schedule.steps = {}",
                self.schedule.steps
            ));
        }
        if self.sweep_t_prime == 0 {
            return invalid("sweep.t_prime must be at least 1".into());
        }
        if self.diffusion_backend == DiffusionBackendKind::External && self.backend_command.is_empty() {
            return invalid("backend.diffusion=external needs backend.command".into());
        }
        // The toy critic scores every backend's output.
        if self.shape.height < TOY_MIN_HEIGHT || self.shape.width < TOY_MIN_WIDTH {
            return invalid(format!(
                "latent must be at least {TOY_MIN_HEIGHT}x{TOY_MIN_WIDTH} for the toy critic"
            ));
        }
        if self.agent_backend == AgentBackendKind::Http {
            self.endpoint
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn with_prompt(&self, prompt: &str) -> Self {
        Self {
            prompt: prompt.to_owned(),
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Keys accepted by [`PipelineConfig::set`].
pub fn known_keys() -> Vec<String> {
    PipelineConfig::default().to_kv().into_keys().collect()
}
