//! Command-line front end. Every command writes its artifacts and a run
//! manifest under the output directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::{DenoiserKind, PipelineConfig, SearchModeSetting};
use crate::diffusion::{train_denoiser, Denoiser, DiffusionSchedule, TemplateProjectionDenoiser, TinyDenoiser};
use crate::error::{Error, Result};
use crate::grid::{decode_context, generate_dataset, write_dataset, ContextVector, DatasetSpec};
use crate::meshing::{polycube_to_hex, quality, write_vtk};
use crate::primitives::{read_obj, read_stl, Axis, PrimitiveParams, TemplateLibrary, TriMesh};
use crate::search::{auto_generate_context, mesh_genus, user_guided_infer, GuidedInput, InferenceEngine, PartialConstraints, SearchResult};
use crate::tensor::{assembly_tensor, normalize_mesh, pca_align_mesh, GeometryTensor, FRAME_CELL_EDGE};
use crate::topology::{component_genera, connected_components, euler_characteristic, partition_grid, voxelize};
use crate::verification::verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_GENERIC: i32 = 1;
pub const EXIT_TOPOLOGY: i32 = 2;
pub const EXIT_NO_CANDIDATE: i32 = 3;
pub const EXIT_UNSUPPORTED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "polycube", version, about = "Topology-consistent polycube structures from closed triangle meshes")]
pub struct Cli {
    /// Pipeline configuration JSON; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct SplitArgs {
    /// Axis the `--ratios` apply to.
    #[arg(long, requires = "ratios")]
    pub axis: Option<Axis>,
    /// Comma-separated split fractions summing to 1.
    #[arg(long, value_delimiter = ',', requires = "axis")]
    pub ratios: Option<Vec<f64>>,
    /// Per-axis splits such as `z=0.5,0.5`; repeatable.
    #[arg(long = "split", value_name = "AXIS=R1,R2,..")]
    pub split: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DenoiserArg {
    Projection,
    Tiny,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Closed input mesh (OBJ, or binary STL by extension).
    #[arg(long)]
    pub mesh: PathBuf,
    /// Partial constraints JSON (user-guided mode).
    #[arg(long, conflicts_with_all = ["contexts", "auto"])]
    pub constraints: Option<PathBuf>,
    /// One context or a JSON array of contexts (user-guided mode).
    #[arg(long, conflicts_with = "auto")]
    pub contexts: Option<PathBuf>,
    /// Automated context generation.
    #[arg(long)]
    pub auto: bool,
    /// Skip PCA alignment during preprocessing.
    #[arg(long)]
    pub no_pca: bool,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, value_enum)]
    pub denoiser: Option<DenoiserArg>,
    /// Tiny denoiser metadata JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Where to write the funnel report (default: <out>/funnel.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic training dataset.
    GenDataset {
        #[arg(long)]
        random_count: Option<usize>,
    },
    /// Preprocess a mesh, search for verified contexts and write their tensors.
    Infer(InferArgs),
    /// Run the context search and write the funnel report.
    Search(InferArgs),
    /// Verify a geometry tensor against a context.
    Verify {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        tau_cd: Option<f64>,
        #[arg(long)]
        tau_active: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
    },
    /// Genus of a closed mesh, optionally per voxel subregion.
    Genus {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Structured hex mesh of a cube-only context.
    Mesh {
        #[arg(long)]
        context: PathBuf,
        /// Elements per cell edge.
        #[arg(long, default_value_t = 2)]
        n: usize,
    },
    /// Summarize the artifacts of a previous run.
    Report {
        /// Run directory (default: the output directory).
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Train the tiny denoiser on a dataset prefix.
    Train {
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        eta0: Option<f64>,
    },
}

/// Exit status for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Topology(_) | Error::Disconnected { .. } | Error::RepartitionRequired { .. } => EXIT_TOPOLOGY,
        Error::UnsupportedCell(_) | Error::EmptyAssembly => EXIT_UNSUPPORTED,
        _ => EXIT_GENERIC,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_GENERIC } else { EXIT_OK };
        }
    };
    let mut run = match Run::new(&cli, &argv) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let code = match run.dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    if let Err(e) = run.write_manifest(code) {
        eprintln!("error: {e}");
        return EXIT_GENERIC;
    }
    code
}

struct Run {
    cfg: PipelineConfig,
    out: PathBuf,
    args: Vec<String>,
    command: &'static str,
    outputs: Vec<String>,
}

fn parse_split(spec: &str) -> Result<(Axis, Vec<f64>)> {
    let (axis, ratios) = spec
        .split_once('=')
        .ok_or_else(|| Error::param(format!("split '{spec}' must look like z=0.5,0.5")))?;
    let ratios = ratios
        .split(',')
        .map(|r| r.trim().parse::<f64>().map_err(|e| Error::param(format!("split ratio '{r}': {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((axis.trim().parse()?, ratios))
}

fn apply_splits(cfg: &mut PipelineConfig, s: &SplitArgs) -> Result<()> {
    if let (Some(axis), Some(r)) = (s.axis, &s.ratios) {
        cfg.set_split(axis, r.clone());
    }
    for spec in &s.split {
        let (axis, r) = parse_split(spec)?;
        cfg.set_split(axis, r);
    }
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenDataset { .. } => "gen-dataset",
        Command::Infer(_) => "infer",
        Command::Search(_) => "search",
        Command::Verify { .. } => "verify",
        Command::Genus { .. } => "genus",
        Command::Mesh { .. } => "mesh",
        Command::Report { .. } => "report",
        Command::Train { .. } => "train",
    }
}

pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    let stl = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("stl"));
    if stl {
        read_stl(path)
    } else {
        read_obj(path)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// One context, or a JSON array of contexts.
pub fn read_contexts(path: &Path) -> Result<Vec<ContextVector>> {
    let value: serde_json::Value = serde_json::from_str(&read_text(path)?)?;
    match &value {
        serde_json::Value::Array(items) => items.iter().map(ContextVector::from_json_value).collect(),
        one => Ok(vec![ContextVector::from_json_value(one)?]),
    }
}

impl Run {
    fn new(cli: &Cli, argv: &[OsString]) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        match &cli.command {
            Command::GenDataset { random_count: Some(n) } => cfg.dataset.random_count = *n,
            Command::Infer(a) | Command::Search(a) => {
                if a.no_pca {
                    cfg.search.pca = false;
                }
                if let Some(r) = a.resolution {
                    cfg.search.resolution = r;
                }
                if a.auto {
                    cfg.search.mode = SearchModeSetting::Auto;
                } else if a.constraints.is_some() || a.contexts.is_some() {
                    cfg.search.mode = SearchModeSetting::User;
                }
                match a.denoiser {
                    Some(DenoiserArg::Projection) => cfg.denoiser.kind = DenoiserKind::Projection,
                    Some(DenoiserArg::Tiny) => cfg.denoiser.kind = DenoiserKind::Tiny,
                    None => {}
                }
                if let Some(m) = &a.model {
                    cfg.denoiser.model = Some(m.to_string_lossy().into_owned());
                }
                apply_splits(&mut cfg, &a.split)?;
            }
            Command::Verify { tau_cd, tau_active, p, .. } => {
                if let Some(v) = tau_cd {
                    cfg.verification.tau_cd = *v;
                }
                if let Some(v) = tau_active {
                    cfg.verification.tau_active = *v;
                }
                if let Some(v) = p {
                    cfg.verification.p = *v;
                }
            }
            Command::Genus { resolution, split, .. } => {
                if let Some(r) = resolution {
                    cfg.search.resolution = *r;
                }
                apply_splits(&mut cfg, split)?;
            }
            Command::Train { epochs, hidden, eta0, .. } => {
                if let Some(v) = epochs {
                    cfg.training.epochs = *v;
                }
                if let Some(v) = hidden {
                    cfg.training.hidden = *v;
                }
                if let Some(v) = eta0 {
                    cfg.training.eta0 = *v;
                }
            }
            _ => {}
        }
        cfg.validate()?;
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self {
            cfg,
            out,
            args: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
            command: command_name(&cli.command),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(name);
        self.write_at(&path, contents)?;
        Ok(path)
    }

    fn write_at(&mut self, path: &Path, contents: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, contents).map_err(|e| Error::io(path, e))?;
        self.outputs.push(path.to_string_lossy().into_owned());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, serde_json::to_string_pretty(value)?.as_bytes())
    }

    fn write_manifest(&mut self, exit_code: i32) -> Result<()> {
        let manifest = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "args": self.args,
            "config_sha256": self.cfg.hash()?,
            "seed": self.cfg.seed,
            "library_seed": self.cfg.library_seed,
            "exit_code": exit_code,
            "outputs": self.outputs,
        });
        fs::write(self.out.join("config.json"), self.cfg.to_json()?).map_err(|e| Error::io(&self.out, e))?;
        let path = self.out.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    fn dispatch(&mut self, command: &Command) -> Result<i32> {
        match command {
            Command::GenDataset { .. } => self.gen_dataset(),
            Command::Infer(a) => self.infer(a, true),
            Command::Search(a) => self.infer(a, false),
            Command::Verify { tensor, context, .. } => self.verify(tensor, context),
            Command::Genus { mesh, split, resolution } => {
                let partitioned = resolution.is_some() || split.axis.is_some() || !split.split.is_empty();
                self.genus(mesh, partitioned)
            }
            Command::Mesh { context, n } => self.mesh(context, *n),
            Command::Report { run } => self.report(run.clone()),
            Command::Train { samples, .. } => self.train(*samples),
        }
    }

    fn gen_dataset(&mut self) -> Result<i32> {
        let dir = self.out.join("dataset");
        let manifest = write_dataset(&self.cfg.dataset, &dir)?;
        self.outputs.push(dir.to_string_lossy().into_owned());
        println!(
            "dataset: {} single-cell, {} full-grid, {} random, {} total; sha256 {}",
            manifest.single_cell, manifest.full_grid, manifest.random, manifest.total, manifest.content_sha256
        );
        Ok(EXIT_OK)
    }

    fn denoiser(&self, schedule: &DiffusionSchedule) -> Result<Box<dyn Denoiser>> {
        match self.cfg.denoiser.kind {
            DenoiserKind::Projection => Ok(Box::new(TemplateProjectionDenoiser::with_params(
                schedule,
                &PrimitiveParams::with_edge(FRAME_CELL_EDGE),
                self.cfg.denoiser.capture_radius,
            )?)),
            DenoiserKind::Tiny => {
                let meta = PathBuf::from(self.cfg.denoiser.model.as_deref().unwrap_or_default());
                let model = TinyDenoiser::load(&meta, &meta.with_extension("bin"))?;
                if model.steps() != schedule.steps() {
                    return Err(Error::param(format!(
                        "model was trained for {} steps, schedule has {}",
                        model.steps(),
                        schedule.steps()
                    )));
                }
                Ok(Box::new(model))
            }
        }
    }

    fn library(&self) -> TemplateLibrary {
        TemplateLibrary::with_edge(self.cfg.library_seed, FRAME_CELL_EDGE)
    }

    fn infer(&mut self, a: &InferArgs, write_tensors: bool) -> Result<i32> {
        let raw = read_mesh(&a.mesh)?;
        mesh_genus(&raw)?;
        let (aligned, rotation) = if self.cfg.search.pca {
            pca_align_mesh(&raw)?
        } else {
            (raw, nalgebra::Matrix3::identity())
        };
        let (mesh, transform) = normalize_mesh(&aligned)?;

        let schedule = self.cfg.schedule.build()?;
        let denoiser = self.denoiser(&schedule)?;
        let library = self.library();
        let engine = InferenceEngine {
            schedule: &schedule,
            denoiser: denoiser.as_ref(),
            library: &library,
            params: self.cfg.verification,
            seed: self.cfg.seed,
            deterministic: self.cfg.deterministic,
        };
        let search_cfg = self.cfg.search.search_config();
        let result: SearchResult = match self.cfg.search.mode {
            SearchModeSetting::Auto => auto_generate_context(&mesh, &search_cfg, &engine)?,
            SearchModeSetting::User => {
                let input = if let Some(p) = &a.constraints {
                    GuidedInput::Constraints(PartialConstraints::from_json(&read_text(p)?)?)
                } else if let Some(p) = &a.contexts {
                    GuidedInput::Contexts(read_contexts(p)?)
                } else {
                    return Err(Error::param("user-guided mode needs --contexts or --constraints"));
                };
                user_guided_infer(&input, &mesh, &search_cfg, &engine)?
            }
        };

        let report_path = a.report.clone().unwrap_or_else(|| self.out.join("funnel.json"));
        let funnel = json!({
            "funnel": result.funnel,
            "verified": result.verified_contexts.len(),
            "rejection": result.rejection,
        });
        self.write_at(&report_path, serde_json::to_string_pretty(&funnel)?.as_bytes())?;
        self.write("search.json", result.to_json()?.as_bytes())?;
        if write_tensors {
            self.write_json(
                "preprocess.json",
                &json!({ "pca": self.cfg.search.pca, "rotation": rotation, "normalization": transform }),
            )?;
            let contexts: Vec<serde_json::Value> = result
                .verified_contexts
                .iter()
                .map(|v| json!({ "cells": v.labels }))
                .collect();
            self.write_json("verified_contexts.json", &contexts)?;
            for (k, v) in result.verified_contexts.iter().enumerate() {
                if let Some(t) = &v.output {
                    self.write(&format!("verified_{k:02}.tnsr"), &t.to_bytes())?;
                }
            }
        }

        let f = result.funnel;
        println!(
            "funnel: theoretical {} -> null-fixed {} -> genus {} -> local {} -> GOCC {} -> TCV {}",
            f.theoretical,
            f.after_null_fixing,
            f.after_genus,
            f.after_local_verification,
            f.after_global_gocc,
            f.after_global_tcv
        );
        for v in &result.verified_contexts {
            let cells: Vec<u8> = v.labels.iter().map(|l| l.value()).collect();
            println!("verified: {cells:?} (d_target {:.6})", v.total_d_target);
        }
        if result.verified_contexts.is_empty() {
            println!("no verified context: {}", result.rejection.as_deref().unwrap_or("rejected"));
            return Ok(EXIT_NO_CANDIDATE);
        }
        Ok(EXIT_OK)
    }

    fn verify(&mut self, tensor: &Path, context: &Path) -> Result<i32> {
        let t = GeometryTensor::read(tensor)?;
        let c = ContextVector::from_json(&read_text(context)?)?;
        let report = verify(&t, &c, &self.library(), &self.cfg.verification)?;
        self.write_json("verify.json", &report)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        Ok(if report.overall_pass { EXIT_OK } else { EXIT_NO_CANDIDATE })
    }

    fn genus(&mut self, path: &Path, partitioned: bool) -> Result<i32> {
        let mesh = read_mesh(path)?;
        let genus = mesh_genus(&mesh)?;
        let mut out = json!({
            "genus": genus,
            "euler_characteristic": euler_characteristic(&mesh),
            "components": connected_components(&mesh).len(),
            "component_genera": component_genera(&mesh)?,
        });
        if partitioned {
            let grid = voxelize(&mesh, self.cfg.search.resolution)?;
            let ratios: [Vec<f64>; 3] =
                std::array::from_fn(|a| self.cfg.search.splits[a].clone().unwrap_or_else(|| vec![1.0]));
            let part = partition_grid(&grid, &ratios)?;
            let regions: Vec<serde_json::Value> = part
                .regions
                .iter()
                .map(|r| {
                    let g = match &r.boundary {
                        Some(b) => Some(component_genera(b)?.iter().sum::<i64>()),
                        None => None,
                    };
                    Ok(json!({ "slab": r.slab, "voxels": r.voxels.len(), "genus": g }))
                })
                .collect::<Result<_>>()?;
            out["subregions"] = json!(regions);
        }
        self.write_json("genus.json", &out)?;
        println!("{}", serde_json::to_string_pretty(&out)?);
        Ok(EXIT_OK)
    }

    fn mesh(&mut self, context: &Path, n: usize) -> Result<i32> {
        let contexts = read_contexts(context)?;
        let mut ranking = Vec::new();
        let mut first_err = None;
        for (k, c) in contexts.iter().enumerate() {
            let labels = decode_context(c)?;
            match polycube_to_hex(&labels, n) {
                Ok(hex) => {
                    let q = quality(&hex)?;
                    let stem = if contexts.len() == 1 { "hex".to_string() } else { format!("hex_{k:02}") };
                    let vtk = self.out.join(format!("{stem}.vtk"));
                    write_vtk(&hex, &vtk)?;
                    self.outputs.push(vtk.to_string_lossy().into_owned());
                    self.write_json(&format!("{stem}_quality.json"), &q)?;
                    self.write(&format!("{stem}_histogram.csv"), q.histogram_csv().as_bytes())?;
                    println!(
                        "context {k}: {} vertices, {} elements, globalMin SJ {:.6}",
                        hex.vertices.len(),
                        hex.elements.len(),
                        q.global_min
                    );
                    ranking.push(json!({ "context": k, "globalMin": q.global_min, "elements": q.elements }));
                }
                Err(e) => {
                    eprintln!("context {k}: {e}");
                    first_err.get_or_insert(e);
                }
            }
        }
        if ranking.is_empty() {
            return Err(first_err.unwrap_or(Error::EmptyAssembly));
        }
        ranking.sort_by(|a, b| b["globalMin"].as_f64().unwrap().total_cmp(&a["globalMin"].as_f64().unwrap()));
        self.write_json("mesh_ranking.json", &ranking)?;
        Ok(EXIT_OK)
    }

    fn report(&mut self, run: Option<PathBuf>) -> Result<i32> {
        let dir = run.unwrap_or_else(|| self.out.clone());
        let manifest_path = dir.join("manifest.json");
        let manifest: serde_json::Value = serde_json::from_str(&read_text(&manifest_path)?)?;
        println!(
            "run: {} (exit {}), config {}",
            manifest["command"].as_str().unwrap_or("?"),
            manifest["exit_code"],
            manifest["config_sha256"].as_str().unwrap_or("?")
        );
        let search = dir.join("search.json");
        if search.exists() {
            let s: serde_json::Value = serde_json::from_str(&read_text(&search)?)?;
            println!("mode: {}", s["mode"].as_str().unwrap_or("?"));
            for (name, v) in s["funnel"].as_object().into_iter().flatten() {
                println!("  {name:<24} {v}");
            }
            for r in s["subregions"].as_array().into_iter().flatten() {
                let passed: Vec<&serde_json::Value> = r["local"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .filter(|t| t["pass"] == json!(true))
                    .map(|t| &t["label"])
                    .collect();
                println!("  cell {} genus {} accepted {:?}", r["cell"], r["genus"], passed);
            }
            for v in s["verified_contexts"].as_array().into_iter().flatten() {
                println!("  verified {} d_target {}", v["labels"], v["total_d_target"]);
            }
            if let Some(msg) = s["rejection"].as_str() {
                println!("  rejection: {msg}");
            }
        }
        for name in ["verify.json", "genus.json", "mesh_ranking.json", "training_curve.json"] {
            if dir.join(name).exists() {
                println!("artifact: {name}");
            }
        }
        Ok(EXIT_OK)
    }

    fn train(&mut self, samples: usize) -> Result<i32> {
        let spec = DatasetSpec { ..self.cfg.dataset.clone() };
        let data = generate_dataset(&spec)
            .take(samples)
            .map(|r| r.and_then(|(_, asm, ctx)| Ok((assembly_tensor(&asm)?, ctx))))
            .collect::<Result<Vec<_>>>()?;
        let schedule = self.cfg.schedule.build()?;
        let (model, curve) = train_denoiser(&data, &schedule, &self.cfg.training)?;
        let meta = self.out.join("model.json");
        model.save(&meta, &meta.with_extension("bin"))?;
        self.outputs.push(meta.to_string_lossy().into_owned());
        self.write_json("training_curve.json", &curve)?;
        let ma = curve.moving_average(10);
        println!(
            "trained {} parameters for {} steps; loss {:.4} -> {:.4} (10-step moving average)",
            model.param_count(),
            curve.step_losses.len(),
            ma.first().copied().unwrap_or(f64::NAN),
            ma.last().copied().unwrap_or(f64::NAN)
        );
        Ok(EXIT_OK)
    }
}
