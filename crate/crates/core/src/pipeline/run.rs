use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::time::Instant;

use serde_json::{json, Value};

use crate::agents::{AgentBackend, AgentError, AgentRequest, AgentResponse};
use crate::cadr::{cadr_from_alignment, CadrParams};
use crate::criticore::{
    decompose_clauses, merge_topk, score_clauses, split_clauses, vlm_hints, Clause, CritiqueReport,
    PromptBundle, TranscriptEntry,
};
use crate::diffusion::{corrective_seed, strength_to_start, BaseRequest, RefinePlan, RefineRequest};
use crate::latents::{apply_vae_scale, LatentField, ScaleDirection};
use crate::lexicon::{extract, render, tokenize};
use crate::spectral::spec_fuse;

use super::record::{
    FailureMarker, LatentDigests, RunEnd, RunHeader, RunRecord, RunSummary, StageRecord,
};
use super::{Backends, ComponentMask, PipelineConfig, PipelineError, StageError, STAGES};

/// Per-run overrides used by the harnesses.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    pub disable: ComponentMask,
    /// Corrective step count replacing CADR's `T'`, also on the skip path.
    pub t_prime: Option<u32>,
    /// Corrective depth replacing `round(λ T')`.
    pub k: Option<usize>,
}

/// Everything a run produced. Latents and images are present up to the
/// stage that failed.
#[derive(Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub z_base: Option<LatentField>,
    pub z_ref: Option<LatentField>,
    pub z_fused: Option<LatentField>,
    pub base_image: Option<LatentField>,
    pub final_image: Option<LatentField>,
    pub error: Option<PipelineError>,
}

impl RunOutcome {
    pub fn is_success(&self) -> bool {
        self.error.is_none()
    }

    pub fn summary(&self) -> Option<&RunSummary> {
        self.record.summary()
    }
}

/// `run-<seed>-<first 12 hex digits of the config digest>`.
pub fn run_id(config: &PipelineConfig) -> String {
    format!("run-{}-{}", config.seed, &config.digest()[..12])
}

/// Clauses taken straight from the prompt: one per recognised descriptor,
/// or the comma-separated pieces when none is recognised.
pub fn prompt_clauses(prompt: &PromptBundle) -> Result<Vec<Clause>, StageError> {
    let ids = prompt.descriptors();
    let pieces: Vec<Vec<String>> = if ids.is_empty() {
        split_clauses(&prompt.text())
    } else {
        ids.iter().map(|&d| tokenize(&render(&[d]))).collect()
    };
    Ok(pieces
        .into_iter()
        .enumerate()
        .map(|(i, t)| Clause::new(i, t))
        .collect::<Result<_, _>>()?)
}

/// Counts calls and degraded answers passing through to `inner`.
struct Metered<'a> {
    inner: &'a dyn AgentBackend,
    calls: AtomicUsize,
    degraded: AtomicUsize,
    attempts: AtomicU32,
}

impl AgentBackend for Metered<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn respond(&self, agent: u32, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let r = self.inner.respond(agent, request)?;
        self.attempts.fetch_add(r.attempts, Ordering::Relaxed);
        if r.degraded {
            self.degraded.fetch_add(1, Ordering::Relaxed);
        }
        Ok(r)
    }
}

struct Stages {
    done: Vec<StageRecord>,
}

type Failed = (&'static str, StageError);

impl Stages {
    /// Runs stage `index`; `f` returns the value, the record data and
    /// whether the stage was skipped.
    fn run<T>(
        &mut self,
        index: usize,
        f: impl FnOnce() -> Result<(T, Value, bool), StageError>,
    ) -> Result<T, Failed> {
        let name = STAGES[index];
        let started = Instant::now();
        let (value, data, skipped) = f().map_err(|e| (name, e))?;
        self.done.push(StageRecord {
            index,
            stage: name.to_owned(),
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            skipped,
            data,
        });
        Ok(value)
    }
}

#[derive(Default)]
struct Latents {
    z_base: Option<LatentField>,
    z_ref: Option<LatentField>,
    z_fused: Option<LatentField>,
    base_image: Option<LatentField>,
    final_image: Option<LatentField>,
}

fn scores(clauses: &[Clause]) -> Vec<Value> {
    clauses
        .iter()
        .map(|c| json!({"id": c.id, "clause": c.phrase(), "score": c.score}))
        .collect()
}

/// One full refinement run. Configuration problems are returned as `Err`;
/// a failing stage still yields an outcome whose record ends with a
/// failure marker.
pub fn run_critifusion(
    config: &PipelineConfig,
    backends: &Backends,
    options: &RunOptions,
) -> Result<RunOutcome, PipelineError> {
    drive(config, backends, options, None)
}

/// Like [`run_critifusion`] but refines a given base latent; the base
/// stage is recorded as skipped.
pub fn run_from_base(
    config: &PipelineConfig,
    backends: &Backends,
    options: &RunOptions,
    z_base: &LatentField,
) -> Result<RunOutcome, PipelineError> {
    if z_base.shape() != config.shape {
        return Err(PipelineError::Options(format!(
            "base latent is {}, configuration expects {}",
            z_base.shape(),
            config.shape
        )));
    }
    drive(config, backends, options, Some(z_base))
}

fn drive(
    config: &PipelineConfig,
    backends: &Backends,
    options: &RunOptions,
    given: Option<&LatentField>,
) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    if let (Some(k), Some(t)) = (options.k, options.t_prime) {
        if k > t as usize {
            return Err(PipelineError::Options(format!("k = {k} exceeds T' = {t}")));
        }
    }
    let header = RunHeader {
        run_id: run_id(config),
        config_digest: config.digest(),
        config: config.to_kv(),
        base_seed: config.seed,
        corrective_seed: corrective_seed(config.seed),
        diffusion_backend: backends.diffusion.name().to_owned(),
        agent_backend: backends.agents.name().to_owned(),
    };
    let mut stages = Stages { done: Vec::new() };
    let mut lat = Latents::default();
    let result = execute(config, backends, options, given, &mut stages, &mut lat);
    let (end, error) = match result {
        Ok(summary) => (RunEnd::Summary(summary), None),
        Err((stage, source)) => (
            RunEnd::Failure(FailureMarker {
                stage: stage.to_owned(),
                error: source.to_string(),
            }),
            Some(PipelineError::Stage { stage, source }),
        ),
    };
    Ok(RunOutcome {
        record: RunRecord {
            header,
            stages: stages.done,
            end,
        },
        z_base: lat.z_base,
        z_ref: lat.z_ref,
        z_fused: lat.z_fused,
        base_image: lat.base_image,
        final_image: lat.final_image,
        error,
    })
}

fn execute(
    config: &PipelineConfig,
    backends: &Backends,
    options: &RunOptions,
    given: Option<&LatentField>,
    stages: &mut Stages,
    lat: &mut Latents,
) -> Result<RunSummary, Failed> {
    let off = options.disable;
    let critic = backends.critic.as_ref();
    let prompt = PromptBundle::from_text(&config.prompt, config.budget);
    let decode = |z: &LatentField| apply_vae_scale(z, config.vae_scale, ScaleDirection::Decode);

    let z_base = stages.run(0, || {
        if let Some(z) = given {
            let data = json!({"z_base": z.digest(), "source": "given"});
            return Ok((z.clone(), data, true));
        }
        let z = backends.diffusion.base_sample(&BaseRequest {
            prompt: config.prompt.clone(),
            shape: config.shape,
            schedule: config.schedule,
            guidance: config.guidance,
            sampler: config.sampler,
            seed: config.seed,
        })?;
        if z.shape() != config.shape {
            return Err(StageError::Invalid(format!(
                "backend returned {}, expected {}",
                z.shape(),
                config.shape
            )));
        }
        let data = json!({"z_base": z.digest(), "seed": config.seed});
        Ok((z, data, false))
    })?;
    lat.z_base = Some(z_base.clone());

    let x_base = stages.run(1, || {
        let x = decode(&z_base);
        let data = json!({"image": x.digest()});
        Ok((x, data, false))
    })?;
    lat.base_image = Some(x_base.clone());

    let hints: Vec<String> = stages.run(2, || {
        if off.vlm {
            return Ok((Vec::new(), json!({"hints": []}), true));
        }
        let hints = vlm_hints(&x_base, &prompt, critic, config.committee.k_hints, &|_| true)?;
        let data = json!({"hints": hints});
        Ok((hints.into_iter().map(|h| h.text).collect(), data, false))
    })?;

    let metered = Metered {
        inner: backends.agents.as_ref(),
        calls: AtomicUsize::new(0),
        degraded: AtomicUsize::new(0),
        attempts: AtomicU32::new(0),
    };
    let (clauses, transcript): (Vec<Clause>, Vec<TranscriptEntry>) = stages.run(3, || {
        if off.multi_llm {
            let clauses = prompt_clauses(&prompt)?;
            let data = json!({"clauses": clauses, "source": "prompt"});
            return Ok(((clauses, Vec::new()), data, true));
        }
        let (clauses, transcript) = decompose_clauses(&prompt, &hints, &config.committee, &metered)?;
        let data = json!({
            "clauses": clauses,
            "source": "committee",
            "agent_calls": metered.calls.load(Ordering::Relaxed),
            "attempts": metered.attempts.load(Ordering::Relaxed),
            "degraded_calls": metered.degraded.load(Ordering::Relaxed),
            "transcript": transcript,
        });
        Ok(((clauses, transcript), data, false))
    })?;

    // Aggregated prompt c̃₀: the user prompt within the token budget, with
    // the clauses it already grounds.
    let aggregated = stages.run(4, || {
        let grounded: Vec<usize> = clauses
            .iter()
            .filter(|c| {
                let ds = c.descriptors();
                !ds.is_empty() && ds.iter().all(|d| prompt.descriptors().contains(d))
            })
            .map(|c| c.id)
            .collect();
        let data = json!({"tokens": prompt.tokens, "grounded_clauses": grounded});
        Ok((prompt.clone(), data, false))
    })?;

    let report: CritiqueReport = stages.run(5, || {
        let mut report = score_clauses(&clauses, &x_base, critic)?;
        report.hints = hints.clone();
        report.transcript = transcript.clone();
        let data = json!({"scores": scores(&report.clauses), "mean": report.mean_score});
        Ok((report, data, false))
    })?;
    let s = report.mean_score;

    let enhanced = stages.run(6, || {
        if off.multi_llm {
            let data = json!({"tokens": aggregated.tokens, "salience": aggregated.salience});
            return Ok((aggregated.clone(), data, true));
        }
        let merged = merge_topk(&aggregated, &report.clauses, config.committee.k_edit, config.budget);
        let data = json!({
            "tokens": merged.tokens,
            "salience": merged.salience,
            "origins": merged.origins,
        });
        Ok((merged, data, false))
    })?;

    let (cadr, plan): (CadrParams, Option<RefinePlan>) = stages.run(7, || {
        let mut params = cadr_from_alignment(s, &config.cadr)?;
        if let Some(t) = options.t_prime {
            params.t_prime = t;
        }
        let plan = (!params.is_skip()).then(|| {
            let p = RefinePlan::from_params(&params);
            options.k.map_or(p, |k| p.with_k(k))
        });
        let data = json!({"score": s, "params": params, "plan": plan});
        Ok(((params, plan), data, false))
    })?;

    let z_ref = stages.run(8, || {
        let Some(plan) = plan else {
            return Ok((z_base.clone(), json!({"z_ref": z_base.digest()}), true));
        };
        let z = backends.diffusion.img2img(&RefineRequest {
            latent: z_base.clone(),
            prompt: enhanced.text(),
            plan,
            schedule: config.schedule,
            seed: config.seed,
            mode: config.refine_mode,
        })?;
        if z.shape() != config.shape {
            return Err(StageError::Invalid(format!(
                "backend returned {}, expected {}",
                z.shape(),
                config.shape
            )));
        }
        let start = if plan.k > 0 {
            let m = strength_to_start(plan.k, plan.t_prime)?;
            json!({"strength": m.strength, "t0": m.t0})
        } else {
            Value::Null
        };
        let data = json!({
            "z_ref": z.digest(),
            "prompt": enhanced.text(),
            "k": plan.k,
            "t_prime": plan.t_prime,
            "start": start,
            "seed": corrective_seed(config.seed),
        });
        Ok((z, data, false))
    })?;
    lat.z_ref = Some(z_ref.clone());

    let z_fused = stages.run(9, || {
        if plan.is_none() || off.specfusion {
            return Ok((z_ref.clone(), json!({"z_fused": z_ref.digest()}), true));
        }
        let z = spec_fuse(&z_ref, &z_base, cadr.rho, config.taper, config.clamp)?;
        let data = json!({"z_fused": z.digest(), "rho": cadr.rho});
        Ok((z, data, false))
    })?;
    lat.z_fused = Some(z_fused.clone());

    let (x_final, final_clauses) = stages.run(10, || {
        let x = decode(&z_fused);
        let rescored = score_clauses(&clauses, &x, critic)?;
        let data = json!({
            "image": x.digest(),
            "scores": scores(&rescored.clauses),
            "mean": rescored.mean_score,
        });
        Ok(((x, rescored), data, false))
    })?;
    lat.final_image = Some(x_final);

    Ok(RunSummary {
        base_score: s,
        final_score: final_clauses.mean_score,
        cadr,
        plan,
        hints,
        clauses: report.clauses,
        enhanced_prompt: enhanced.tokens,
        digests: LatentDigests {
            z_base: z_base.digest(),
            z_ref: z_ref.digest(),
            z_fused: z_fused.digest(),
        },
        transcript,
    })
}

/// Descriptor coverage of a token sequence.
pub fn coverage(tokens: &[String]) -> usize {
    extract(tokens).len()
}
