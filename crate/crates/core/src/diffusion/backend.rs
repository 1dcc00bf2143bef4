use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde::Serialize;

use crate::latents::{read_latent, write_latent, LatentField, Shape, VaeScale};

use super::{
    base_sample, refine_with_plan, strength_to_start, Conditioning, DiffusionError, RefineMode,
    RefinePlan, SamplerKind, ScheduleParams, ToyDenoiser,
};

/// Inputs of the base pass.
#[derive(Debug, Clone, Serialize)]
pub struct BaseRequest {
    pub prompt: String,
    pub shape: Shape,
    pub schedule: ScheduleParams,
    /// CFG scale `g`.
    pub guidance: f64,
    pub sampler: SamplerKind,
    pub seed: u64,
}

/// Inputs of the corrective pass. `seed` is the base seed.
#[derive(Debug, Clone, Serialize)]
pub struct RefineRequest {
    #[serde(skip)]
    pub latent: LatentField,
    pub prompt: String,
    pub plan: RefinePlan,
    pub schedule: ScheduleParams,
    pub seed: u64,
    pub mode: RefineMode,
}

/// The two operations a diffusion backbone has to provide.
pub trait DiffusionBackend: Send + Sync {
    fn name(&self) -> &str;
    fn base_sample(&self, req: &BaseRequest) -> Result<LatentField, DiffusionError>;
    fn img2img(&self, req: &RefineRequest) -> Result<LatentField, DiffusionError>;
}

/// In-process backend over the analytic toy denoiser.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    denoiser: ToyDenoiser,
}

impl ToyBackend {
    pub fn new(shape: Shape, scale: VaeScale) -> Result<Self, DiffusionError> {
        Ok(Self {
            denoiser: ToyDenoiser::new(shape, scale)?,
        })
    }

    pub fn denoiser(&self) -> &ToyDenoiser {
        &self.denoiser
    }

    fn check_shape(&self, shape: Shape) -> Result<(), DiffusionError> {
        if shape != self.denoiser.bank().shape() {
            return Err(DiffusionError::Backend(format!(
                "toy backend built for {}, request is {shape}",
                self.denoiser.bank().shape()
            )));
        }
        Ok(())
    }
}

impl DiffusionBackend for ToyBackend {
    fn name(&self) -> &str {
        "toy"
    }

    fn base_sample(&self, req: &BaseRequest) -> Result<LatentField, DiffusionError> {
        self.check_shape(req.shape)?;
        let cond = Conditioning::from_prompt(&req.prompt, req.guidance)?;
        let sched = req.schedule.build()?;
        base_sample(&self.denoiser, &cond, &sched, req.sampler, req.shape, req.seed)
    }

    fn img2img(&self, req: &RefineRequest) -> Result<LatentField, DiffusionError> {
        self.check_shape(req.latent.shape())?;
        let cond = Conditioning::from_prompt(&req.prompt, req.plan.guidance)?;
        let sched = req.schedule.build()?;
        refine_with_plan(&self.denoiser, &req.latent, &cond, &req.plan, &sched, req.seed, req.mode)
    }
}

/// Backend implemented by an external program.
///
/// Each call runs `program args...` with a JSON request on stdin. The
/// program finds the input latent (refine only) at `$CRITIFUSION_INPUT`
/// and must write its result to `$CRITIFUSION_OUTPUT`, both `CRTFLAT1`.
/// The request has an `op` field, `"base"` or `"refine"`; refine requests
/// carry the derived `strength` and `t0`.
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    program: PathBuf,
    args: Vec<String>,
}

#[derive(Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Wire<'a> {
    Base(&'a BaseRequest),
    Refine {
        #[serde(flatten)]
        req: &'a RefineRequest,
        strength: f64,
        t0: usize,
    },
}

impl ExternalBackend {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    fn call(&self, wire: &Wire<'_>, input: Option<&LatentField>) -> Result<LatentField, DiffusionError> {
        let dir = tempfile::tempdir()
            .map_err(|e| DiffusionError::Backend(format!("temp dir: {e}")))?;
        let in_path = dir.path().join("input.crtflat");
        let out_path = dir.path().join("output.crtflat");
        if let Some(latent) = input {
            let mut f = std::fs::File::create(&in_path)
                .map_err(|e| DiffusionError::Backend(format!("write input: {e}")))?;
            write_latent(latent, &mut f)
                .map_err(|e| DiffusionError::Backend(format!("write input: {e}")))?;
        }
        let body = serde_json::to_vec(wire)
            .map_err(|e| DiffusionError::Backend(format!("encode request: {e}")))?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .env("CRITIFUSION_INPUT", &in_path)
            .env("CRITIFUSION_OUTPUT", &out_path)
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| DiffusionError::Backend(format!("spawn {}: {e}", self.program.display())))?;
        if let Some(mut stdin) = child.stdin.take() {
            // A program that ignores its request may close stdin early.
            let _ = stdin.write_all(&body);
        }
        let out = child
            .wait_with_output()
            .map_err(|e| DiffusionError::Backend(format!("wait: {e}")))?;
        if !out.status.success() {
            return Err(DiffusionError::Backend(format!(
                "{} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let mut f = std::fs::File::open(&out_path)
            .map_err(|e| DiffusionError::Backend(format!("read output: {e}")))?;
        Ok(read_latent(&mut f)?)
    }
}

impl DiffusionBackend for ExternalBackend {
    fn name(&self) -> &str {
        "external"
    }

    fn base_sample(&self, req: &BaseRequest) -> Result<LatentField, DiffusionError> {
        let z = self.call(&Wire::Base(req), None)?;
        if z.shape() != req.shape {
            return Err(DiffusionError::Backend(format!(
                "external base pass returned {}, expected {}",
                z.shape(),
                req.shape
            )));
        }
        Ok(z)
    }

    fn img2img(&self, req: &RefineRequest) -> Result<LatentField, DiffusionError> {
        if req.plan.t_prime == 0 {
            return Ok(req.latent.clone());
        }
        let map = strength_to_start(req.plan.k, req.plan.t_prime)?;
        let wire = Wire::Refine {
            req,
            strength: map.strength,
            t0: map.t0,
        };
        let z = self.call(&wire, Some(&req.latent))?;
        if z.shape() != req.latent.shape() {
            return Err(DiffusionError::Backend(format!(
                "external refine returned {}, expected {}",
                z.shape(),
                req.latent.shape()
            )));
        }
        Ok(z)
    }
}
