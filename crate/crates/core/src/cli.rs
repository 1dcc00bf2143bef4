//! Command-line front end. Exit codes: 0 success, 1 run failure or digest
//! mismatch, 2 configuration or argument error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::latents::{digest_bytes, read_latent, write_latent, LatentField};
use crate::pipeline::{
    ablate, run_critifusion, run_from_base, sweep_ensemble, sweep_k, write_ppm, Backends,
    ComponentMask, PipelineConfig, PipelineError, RunOptions, RunOutcome, RunRecord, SweepTable,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "critifusion", version, about = "Critique-guided refinement of latent diffusion samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value configuration file; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prompt overriding `prompt.text`.
    #[arg(long, conflicts_with = "prompts")]
    pub prompt: Option<String>,
    /// File with one prompt per line.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Print per-stage timings to stderr (repeat for transcripts).
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Worker threads for sweeps and prompt lists.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Base sample plus critique-guided refinement.
    Generate(Common),
    /// Refine an existing base latent.
    Refine {
        #[command(flatten)]
        common: Common,
        /// CRTFLAT1 base latent.
        #[arg(long)]
        base: PathBuf,
    },
    /// Corrective-depth sweep with T' fixed to `sweep.t_prime`.
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
    },
    /// Full model against single-component removals.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Extra variant, a comma list of vlm, multi_llm, specfusion; repeatable.
        #[arg(long)]
        disable: Vec<String>,
    },
    /// Committee-size sweep.
    SweepEnsemble {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
    },
    /// Print a run record and check co-located latent files.
    Inspect {
        record: PathBuf,
    },
}

/// Error carrying its exit code.
struct Exit(i32, String);

fn usage(msg: impl Into<String>) -> Exit {
    Exit(EXIT_USAGE, msg.into())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(Exit(code, msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            code
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Exit> {
    match cmd {
        Command::Generate(c) => generate(&c, None, out, err),
        Command::Refine { common, base } => {
            let mut f = fs::File::open(&base).map_err(|e| usage(format!("{}: {e}", base.display())))?;
            let z = read_latent(&mut f).map_err(|e| usage(format!("{}: {e}", base.display())))?;
            generate(&common, Some(z), out, err)
        }
        Command::SweepK { common, k } => {
            let (cfg, prompts) = load(&common)?;
            let table = sweep_k(&cfg, &k, &prompts, common.jobs).map_err(harness_error)?;
            emit_table(&common.out, "sweep-k", &table, out)
        }
        Command::Ablate { common, disable } => {
            let (cfg, prompts) = load(&common)?;
            let mut variants = ComponentMask::singles().to_vec();
            for d in &disable {
                variants.push(ComponentMask::parse(d).map_err(usage)?);
            }
            let table = ablate(&cfg, &variants, &prompts, common.jobs).map_err(harness_error)?;
            emit_table(&common.out, "ablate", &table, out)
        }
        Command::SweepEnsemble { common, sizes } => {
            let (cfg, prompts) = load(&common)?;
            let table = sweep_ensemble(&cfg, &sizes, &prompts, common.jobs).map_err(harness_error)?;
            emit_table(&common.out, "sweep-ensemble", &table, out)
        }
        Command::Inspect { record } => inspect(&record, out),
    }
}

fn harness_error(e: PipelineError) -> Exit {
    match e {
        PipelineError::Config(_) | PipelineError::Options(_) | PipelineError::Agent(_) => usage(e.to_string()),
        _ => Exit(EXIT_RUN, e.to_string()),
    }
}

/// Loads the configuration and prompt list, applies overrides, validates
/// every run configuration and creates the output directory.
fn load(c: &Common) -> Result<(PipelineConfig, Vec<String>), Exit> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &c.prompt {
        cfg.prompt = p.clone();
    }
    let prompts = match &c.prompts {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let list: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect();
            if list.is_empty() {
                return Err(usage(format!("{} lists no prompts", path.display())));
            }
            list
        }
        None => vec![cfg.prompt.clone()],
    };
    for p in &prompts {
        cfg.with_prompt(p).validate().map_err(|e| usage(e.to_string()))?;
    }
    if c.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    fs::create_dir_all(&c.out).map_err(|e| usage(format!("{}: {e}", c.out.display())))?;
    Ok((cfg, prompts))
}

fn io_error(path: &Path, e: std::io::Error) -> Exit {
    Exit(EXIT_RUN, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Exit> {
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn save_latent(dir: &Path, run_id: &str, name: &str, z: &Option<LatentField>) -> Result<(), Exit> {
    if let Some(z) = z {
        let path = dir.join(format!("{run_id}.{name}.crtflat"));
        let mut bytes = Vec::new();
        write_latent(z, &mut bytes).map_err(|e| io_error(&path, e))?;
        write_file(&path, &bytes)?;
    }
    Ok(())
}

fn save_outcome(dir: &Path, cfg: &PipelineConfig, o: &RunOutcome) -> Result<(), Exit> {
    let id = &o.record.header.run_id;
    write_file(&dir.join(format!("{id}.record.jsonl")), o.record.to_jsonl().as_bytes())?;
    save_latent(dir, id, "z_base", &o.z_base)?;
    save_latent(dir, id, "z_ref", &o.z_ref)?;
    save_latent(dir, id, "z_fused", &o.z_fused)?;
    if cfg.dump_images {
        for (name, image) in [("base", &o.base_image), ("final", &o.final_image)] {
            if let Some(x) = image {
                let path = dir.join(format!("{id}.{name}.ppm"));
                let mut bytes = Vec::new();
                write_ppm(x, &mut bytes).map_err(|e| io_error(&path, e))?;
                write_file(&path, &bytes)?;
            }
        }
    }
    Ok(())
}

/// One line per run for standard output.
pub fn summary_line(o: &RunOutcome) -> String {
    let id = &o.record.header.run_id;
    match (o.record.summary(), o.record.failure()) {
        (Some(s), _) => {
            let refine = match s.plan {
                Some(p) => format!("T'={} k={}", p.t_prime, p.k),
                None => "skip".to_owned(),
            };
            format!(
                "{id} ok base={:.4} final={:.4} {refine} rho={:.4}",
                s.base_score, s.final_score, s.cadr.rho
            )
        }
        (None, Some(f)) => format!("{id} failed stage={} error={}", f.stage, f.error),
        (None, None) => format!("{id} incomplete"),
    }
}

fn generate(
    c: &Common,
    base: Option<LatentField>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Exit> {
    let (cfg, prompts) = load(c)?;
    let backends = Backends::from_config(&cfg).map_err(|e| usage(e.to_string()))?;
    let options = RunOptions::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(c.jobs)
        .build()
        .map_err(|e| Exit(EXIT_RUN, e.to_string()))?;
    let outcomes: Vec<(PipelineConfig, Result<RunOutcome, PipelineError>)> = pool.install(|| {
        use rayon::prelude::*;
        prompts
            .par_iter()
            .map(|p| {
                let run_cfg = cfg.with_prompt(p);
                let o = match &base {
                    Some(z) => run_from_base(&run_cfg, &backends, &options, z),
                    None => run_critifusion(&run_cfg, &backends, &options),
                };
                (run_cfg, o)
            })
            .collect()
    });
    let mut code = EXIT_OK;
    for (run_cfg, o) in outcomes {
        let o = o.map_err(|e| usage(e.to_string()))?;
        save_outcome(&c.out, &run_cfg, &o)?;
        if c.verbose > 0 {
            for s in &o.record.stages {
                let _ = writeln!(err, "  {:<18} {:>9.3} ms{}", s.stage, s.elapsed_ms, if s.skipped { " (skipped)" } else { "" });
            }
        }
        if c.verbose > 1 {
            if let Some(s) = o.record.summary() {
                for t in &s.transcript {
                    let _ = writeln!(err, "  [{} agent {} step {}] {}", t.stage, t.agent, t.step, t.text);
                }
            }
        }
        let _ = writeln!(out, "{}", summary_line(&o));
        if !o.is_success() {
            code = EXIT_RUN;
        }
    }
    Ok(code)
}

fn emit_table(dir: &Path, name: &str, table: &SweepTable, out: &mut dyn Write) -> Result<i32, Exit> {
    let path = dir.join(format!("{name}.jsonl"));
    write_file(&path, table.to_jsonl().as_bytes())?;
    let _ = write!(out, "{table}");
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(EXIT_OK)
}

/// Stage that produced each stored latent.
const LATENT_STAGES: [(&str, &str); 3] = [
    ("z_base", "base_sample"),
    ("z_ref", "img2img_refine"),
    ("z_fused", "spec_fuse"),
];

fn inspect(path: &Path, out: &mut dyn Write) -> Result<i32, Exit> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let record = RunRecord::parse_jsonl(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let h = &record.header;
    let _ = writeln!(out, "run {} (config {})", h.run_id, h.config_digest);
    let _ = writeln!(out, "prompt: {}", h.config.get("prompt.text").map_or("", String::as_str));
    let _ = writeln!(
        out,
        "seeds: base {} corrective {}; backends: {} / {}",
        h.base_seed, h.corrective_seed, h.diffusion_backend, h.agent_backend
    );
    for s in &record.stages {
        let _ = writeln!(
            out,
            "  {:>2} {:<18} {:>9.3} ms{}",
            s.index,
            s.stage,
            s.elapsed_ms,
            if s.skipped { " skipped" } else { "" }
        );
    }
    if let Some(f) = record.failure() {
        let _ = writeln!(out, "failed at stage {}: {}", f.stage, f.error);
    }
    if let Some(s) = record.summary() {
        let _ = writeln!(out, "alignment: base {:.6} final {:.6}", s.base_score, s.final_score);
        let c = s.cadr;
        let _ = writeln!(
            out,
            "cadr: lambda {} guidance {} T' {} rho {}",
            c.lambda, c.guidance, c.t_prime, c.rho
        );
        for cl in &s.clauses {
            let _ = writeln!(out, "  clause {} {:?}: {:?}", cl.id, cl.phrase(), cl.score);
        }
        let _ = writeln!(out, "enhanced prompt: {}", s.enhanced_prompt.join(" "));
    }

    let dir = path.parent().unwrap_or(Path::new("."));
    let mut mismatches = Vec::new();
    for (name, stage) in LATENT_STAGES {
        let Some(expected) = record
            .stage(stage)
            .and_then(|s| s.data.get(name))
            .and_then(|v| v.as_str())
        else {
            continue;
        };
        let file = dir.join(format!("{}.{name}.crtflat", h.run_id));
        match fs::read(&file) {
            Ok(bytes) if digest_bytes(&bytes) == expected => {
                let _ = writeln!(out, "digest ok: {name} ({stage})");
            }
            Ok(_) => {
                let _ = writeln!(out, "digest MISMATCH: {name} (stage {stage})");
                mismatches.push(stage);
            }
            Err(_) => {
                let _ = writeln!(out, "digest unchecked: {name} (no {})", file.display());
            }
        }
    }
    if mismatches.is_empty() {
        Ok(EXIT_OK)
    } else {
        Err(Exit(EXIT_RUN, format!("digest mismatch in stage(s) {}", mismatches.join(", "))))
    }
}
