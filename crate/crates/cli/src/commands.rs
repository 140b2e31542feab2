use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use sstrace::cvae::{Architecture, CvaeModel, EpochLog, ModelKind, TrainConfig, TrainOutcome};
use sstrace::dataset::{generate_dataset, AlbedoLaw, Dataset, DatasetConfig, SigmaTLaw};
use sstrace::eval::{evaluate, EvalConfig};
use sstrace::geometry::{audit_conservative, load_mesh, Bvh, SdfGrid, TriangleMesh};
use sstrace::nn::AdamWConfig;
use sstrace::render::{render, Image, Integrator, PathStats, RenderOptions, Scene, SceneFile};
use sstrace::scatter::ScatterModels;
use sstrace::Vec3d;

use crate::error::{CliError, CliResult, Context};
use crate::manifest::{self, Recorder};
use crate::{
    BenchArgs, Cli, Command, EvalArgs, GenDataArgs, IntegratorChoice, MeshArgs, ModelChoice, RenderArgs,
    ReplayArgs, SceneOverrides, SdfArgs, SigmaLawChoice, TrainArgs,
};

pub fn dispatch(cmd: Command, argv: &[String]) -> CliResult<()> {
    match cmd {
        Command::GenData(a) => gen_data(a, argv),
        Command::Train(a) => train(a, argv),
        Command::EvalDist(a) => eval_dist(a, argv),
        Command::Sdf(a) => sdf(a, argv),
        Command::Render(a) => render_cmd(a, argv),
        Command::Bench(a) => bench(a, argv),
        Command::Mesh(a) => mesh(a, argv),
        Command::Replay(a) => replay(a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_range(s: &str, flag: &str) -> CliResult<(f32, f32)> {
    let (a, b) = s.split_once(':').ok_or_else(|| usage(format!("{flag} expects LO:HI, got '{s}'")))?;
    let p = |v: &str| v.trim().parse::<f32>().map_err(|_| usage(format!("{flag}: '{v}' is not a number")));
    let (lo, hi) = (p(a)?, p(b)?);
    if !(lo <= hi) {
        return Err(usage(format!("{flag}: empty range {lo}:{hi}")));
    }
    Ok((lo, hi))
}

fn parse_albedo(s: &str) -> CliResult<AlbedoLaw> {
    let bad = || usage(format!("--albedo expects log:MIN:MAX, uniform:MIN:MAX or const:PHI, got '{s}'"));
    let (law, rest) = s.split_once(':').ok_or_else(bad)?;
    let law = match law {
        "log" => {
            let (a, b) = parse_range(rest, "--albedo")?;
            AlbedoLaw::LogUniform { exp_min: a, exp_max: b }
        }
        "uniform" => {
            let (a, b) = parse_range(rest, "--albedo")?;
            AlbedoLaw::Uniform { min: a, max: b }
        }
        "const" => AlbedoLaw::Constant { phi: rest.trim().parse().map_err(|_| bad())? },
        _ => return Err(bad()),
    };
    Ok(law)
}

fn gen_data(a: GenDataArgs, argv: &[String]) -> CliResult<()> {
    let config = DatasetConfig {
        n_samples: a.count,
        sigma_t_range: parse_range(&a.sigma_t, "--sigma-t")?,
        sigma_t_law: match a.sigma_t_law {
            SigmaLawChoice::Uniform => SigmaTLaw::Uniform,
            SigmaLawChoice::Log1p => SigmaTLaw::Log1p,
        },
        g_range: parse_range(&a.g, "--g")?,
        albedo: parse_albedo(&a.albedo)?,
        seed: a.seed,
    };
    config.validate()?;
    let mut rec = Recorder::new("gen-data", argv, &a.out)?;
    rec.config(&config, Some(a.seed))?;
    let start = std::time::Instant::now();
    let ds = generate_dataset(&config)?;
    info!("simulated {} walks in {:.1}s", ds.len(), start.elapsed().as_secs_f64());
    rec.write("dataset.sswk", &ds.to_bytes(), true)?;
    let summary = ds.summary();
    rec.write_json("summary.json", &summary, true)?;
    if a.csv {
        let mut buf = Vec::new();
        ds.write_csv(&mut buf)?;
        rec.write("dataset.csv", &buf, true)?;
    }
    println!("samples      {}", summary.count);
    println!("mean N       {:.2}", summary.mean_n_events);
    for (q, n) in summary.n_events_quantiles {
        println!("N q{:<5}     {n}", q);
    }
    println!("max N        {}", summary.max_n_events);
    rec.finish()?;
    Ok(())
}

fn loss_csv(history: &[EpochLog]) -> Vec<u8> {
    let mut s = String::from("epoch,train_loss,val_loss,rejected_batches\n");
    for h in history {
        s.push_str(&format!("{},{:.8},{:.8},{}\n", h.epoch, h.train_loss, h.val_loss, h.rejected_batches));
    }
    s.into_bytes()
}

fn train(a: TrainArgs, argv: &[String]) -> CliResult<()> {
    let kinds: Vec<ModelKind> = match a.model {
        ModelChoice::Lengthgen => vec![ModelKind::LengthGen],
        ModelChoice::Pathgen => vec![ModelKind::PathGen],
        ModelChoice::Eventgen => vec![ModelKind::EventGen],
        ModelChoice::All => ModelKind::ALL.to_vec(),
    };
    let configs: Vec<TrainConfig> = kinds
        .iter()
        .map(|&k| {
            let d = k.default_arch();
            let arch = Architecture {
                depth: a.depth.unwrap_or(d.depth),
                width: a.width.unwrap_or(d.width),
                latent: a.latent.unwrap_or(d.latent),
            };
            CvaeModel::<f32>::validate_arch(k, arch)?;
            let base = if a.desk { TrainConfig::desk(k) } else { TrainConfig::new(k) };
            let c = TrainConfig {
                arch,
                optimizer: AdamWConfig {
                    lr: a.lr.unwrap_or(base.optimizer.lr),
                    weight_decay: a.weight_decay,
                    ..base.optimizer
                },
                batch_size: a.batch_size.unwrap_or(base.batch_size),
                epochs: a.epochs.unwrap_or(base.epochs),
                kl_warmup: a.kl_warmup.unwrap_or(base.kl_warmup),
                validation_fraction: a.validation_fraction,
                seed: a.seed,
                dump_path: Some(a.out.join(format!("{}.diverged.ssnn", k.name()))),
                ..base
            };
            c.validate()?;
            sstrace::nn::AdamW::<f64>::new(c.optimizer, 0)?;
            Ok(c)
        })
        .collect::<CliResult<_>>()?;
    let ds = Dataset::load(&a.dataset).map_err(|e| CliError::Data(format!("{}: {e}", a.dataset.display())))?;
    let mut rec = Recorder::new("train", argv, &a.out)?;
    rec.input(&a.dataset)?;
    rec.config(&configs, Some(a.seed))?;
    let outcomes: Vec<TrainOutcome<f64>> = kinds
        .par_iter()
        .zip(&configs)
        .map(|(&k, c)| sstrace::cvae::train_model::<f64>(k, &ds, c))
        .collect::<Result<_, _>>()?;
    for (k, out) in kinds.iter().zip(outcomes) {
        let model = out.model.cast::<f32>();
        let file = k.file_name();
        let p = rec.path(&file);
        model.save(&p).at(&p)?;
        rec.output(&file, true)?;
        rec.write(&format!("{}_loss.csv", k.name()), &loss_csv(&out.history), true)?;
        if a.export_json {
            rec.write_json(&format!("{}.json", k.name()), &model.export(), true)?;
        }
        let (first, last) = (&out.history[0], out.history.last().unwrap());
        println!(
            "{:<10} epochs {:>3}  train {:.4}  val {:.4} (epoch 0: {:.4})",
            k.name(),
            out.history.len(),
            last.train_loss,
            last.val_loss,
            first.val_loss
        );
    }
    rec.finish()?;
    Ok(())
}

fn load_models(dir: &Path, rec: &mut Recorder) -> CliResult<ScatterModels<f32>> {
    let m = ScatterModels::<f32>::load_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    for k in ModelKind::ALL {
        rec.input(&dir.join(k.file_name()))?;
    }
    Ok(m)
}

fn eval_dist(a: EvalArgs, argv: &[String]) -> CliResult<()> {
    let config = EvalConfig { sigma_t: a.sigma_t, g: a.g, samples: a.samples, seed: a.seed, bins: a.bins };
    config.validate()?;
    let mut rec = Recorder::new("eval-dist", argv, &a.out)?;
    rec.config(&config, Some(a.seed))?;
    let models = load_models(&a.models, &mut rec)?;
    let report = evaluate(&models, &config)?;
    let mut csv = Vec::new();
    report.write_metrics_csv(&mut csv)?;
    rec.write("metrics.csv", &csv, true)?;
    rec.write_json("histograms.json", &report, true)?;
    println!("{:>8} {:>6} {:>9} {:>9} {:>9} {:>9}", "sigma_t", "g", "W1 lnN", "KS lnN", "W1 cos", "KS cos");
    for (i, c) in report.cells.iter().enumerate() {
        println!(
            "{:>8} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}{}",
            c.sigma_t,
            c.g,
            c.w1_log_n,
            c.ks_log_n,
            c.w1_cos_theta,
            c.ks_cos_theta,
            if i == report.worst_cell { "  <- worst" } else { "" }
        );
    }
    rec.finish()?;
    Ok(())
}

fn sdf(a: SdfArgs, argv: &[String]) -> CliResult<()> {
    let mut rec = Recorder::new("sdf", argv, &a.out)?;
    rec.input(&a.mesh)?;
    rec.config(&serde_json::json!({ "resolution": a.resolution, "audit_samples": a.audit_samples }), Some(a.seed))?;
    let load = load_mesh(&a.mesh)?;
    if load.dropped_degenerate > 0 {
        warn!("dropped {} degenerate triangles", load.dropped_degenerate);
    }
    if !load.watertight {
        warn!("mesh is not watertight; inside tests fall back to the winding number");
    }
    let bvh = Bvh::build(load.mesh);
    let grid = SdfGrid::build(&bvh, a.resolution)?;
    rec.write("sdf.ssdf", &grid.to_bytes(), true)?;
    let audit = audit_conservative(&bvh, &grid, a.audit_samples, a.seed)?;
    rec.write_json("audit.json", &audit, true)?;
    println!("grid         {:?} voxels of {:.5} m", grid.dims(), grid.voxel_size());
    println!("audit        {} interior points, {} violations", audit.samples, audit.violations);
    println!("min margin   {:.3e} m", audit.min_margin);
    rec.finish()?;
    if audit.violations > 0 {
        return Err(CliError::Internal(format!("{} safe radii reach the surface", audit.violations)));
    }
    Ok(())
}

struct LoadedScene {
    scene: Scene,
    opts: RenderOptions,
    models_dir: Option<PathBuf>,
}

fn load_scene(path: &Path, o: &SceneOverrides, rec: &mut Recorder) -> CliResult<LoadedScene> {
    let text = std::fs::read_to_string(path).at(path)?;
    let file = SceneFile::parse(&text, path).map_err(|e| CliError::Data(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    rec.input(path)?;
    rec.input(&base.join(&file.mesh.path))?;
    let scene = file.build(base).map_err(|e| match e {
        sstrace::Error::Config(m) => CliError::Data(format!("{}: {m}", path.display())),
        e => e.into(),
    })?;
    let s = &scene.options;
    let nee = if o.nee { true } else if o.no_nee { false } else { s.nee };
    let mut opts = RenderOptions::new(o.spp.unwrap_or(s.spp), o.seed.unwrap_or(s.seed), nee);
    opts.r_min = o.r_min.or(s.r_min);
    let models_dir = o.models.clone().or_else(|| s.models.clone());
    Ok(LoadedScene { scene, opts, models_dir })
}

fn need_models(dir: &Option<PathBuf>, rec: &mut Recorder) -> CliResult<ScatterModels<f32>> {
    let dir = dir.as_ref().ok_or_else(|| usage("sphere tracing needs --models or integrator.models in the scene"))?;
    load_models(dir, rec)
}

fn steps_image(stats: &PathStats, w: usize, h: usize) -> Image {
    let mut img = Image::new(w, h);
    for (p, &s) in img.pixels.iter_mut().zip(&stats.pixel_mean_steps) {
        *p = [s; 3];
    }
    img
}

fn check_decoder_count(stats: &PathStats, nee: bool) -> CliResult<()> {
    let expected = stats.expected_decoder_evals(nee);
    if stats.decoder_evals != expected {
        return Err(CliError::Internal(format!(
            "decoder evaluations {} differ from the {expected} implied by sphere outcomes",
            stats.decoder_evals
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct RenderReport<'a> {
    integrator: &'a str,
    options: &'a RenderOptions,
    #[serde(flatten)]
    stats: &'a PathStats,
    mean_steps: f64,
    mean_events: f64,
    mean_variance: f64,
}

fn render_cmd(a: RenderArgs, argv: &[String]) -> CliResult<()> {
    let mut rec = Recorder::new("render", argv, &a.out)?;
    let LoadedScene { scene, opts, models_dir } = load_scene(&a.scene, &a.overrides, &mut rec)?;
    rec.config(&serde_json::json!({ "integrator": format!("{:?}", a.integrator), "options": &opts }), Some(opts.seed))?;
    let models;
    let integrator = match a.integrator {
        IntegratorChoice::Pt => Integrator::PathTracing,
        IntegratorChoice::St => {
            models = need_models(&models_dir, &mut rec)?;
            Integrator::SphereTracing(&models)
        }
    };
    let (img, stats) = render(&scene, integrator, &opts)?;
    let mut pfm = Vec::new();
    img.write_pfm(&mut pfm)?;
    rec.write("image.pfm", &pfm, true)?;
    let png = rec.path("image.png");
    img.save_png(&png)?;
    rec.output("image.png", true)?;
    let mut steps = Vec::new();
    steps_image(&stats, img.width, img.height).write_pfm(&mut steps)?;
    rec.write("steps.pfm", &steps, true)?;
    let report = RenderReport {
        integrator: integrator.name(),
        options: &opts,
        stats: &stats,
        mean_steps: stats.mean_steps(),
        mean_events: stats.mean_events(),
        mean_variance: img.mean_variance(),
    };
    rec.write_json("stats.json", &report, false)?;
    println!("integrator   {}", integrator.name());
    println!("paths        {}", stats.paths);
    println!("mean steps   {:.3}", stats.mean_steps());
    println!("mean events  {:.3}", stats.mean_events());
    println!("decoder evals {}", stats.decoder_evals);
    println!("wall time    {:.2}s", stats.wall_seconds);
    if stats.energy_violations > 0 {
        warn!("{} paths exceeded the incoming-light bound", stats.energy_violations);
    }
    rec.finish()?;
    if matches!(integrator, Integrator::SphereTracing(_)) {
        check_decoder_count(&stats, opts.nee)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    sweep: &'static str,
    step: usize,
    factor: f64,
    sigma_t: [f64; 3],
    absorption: [f64; 3],
    pt_mean_events: f64,
    st_mean_steps: f64,
    step_ratio: f64,
    pt_seconds: f64,
    st_seconds: f64,
    speedup: f64,
    st_decoder_evals: u64,
    rmse: f64,
}

fn bench_row(
    scene: &Scene,
    models: &ScatterModels<f32>,
    opts: &RenderOptions,
    sweep: &'static str,
    step: usize,
    factor: f64,
) -> CliResult<BenchRow> {
    let (pt_img, pt) = render(scene, Integrator::PathTracing, opts)?;
    let (st_img, st) = render(scene, Integrator::SphereTracing(models), opts)?;
    check_decoder_count(&st, opts.nee)?;
    let (rmse, _) = sstrace::render::image_metrics(&pt_img, &st_img)?;
    let row = BenchRow {
        sweep,
        step,
        factor,
        sigma_t: scene.media.map(|m| m.sigma_t),
        absorption: scene.media.map(|m| 1.0 - m.phi),
        pt_mean_events: pt.mean_events(),
        st_mean_steps: st.mean_steps(),
        step_ratio: st.mean_steps() / pt.mean_events().max(f64::MIN_POSITIVE),
        pt_seconds: pt.wall_seconds,
        st_seconds: st.wall_seconds,
        speedup: pt.wall_seconds / st.wall_seconds.max(1e-9),
        st_decoder_evals: st.decoder_evals,
        rmse,
    };
    println!(
        "{:<10} {:>2} x{:<8} events {:>10.2} steps {:>8.2} ratio {:.4} speedup {:>6.2} rmse {:.4}",
        sweep, step, factor, row.pt_mean_events, row.st_mean_steps, row.step_ratio, row.speedup, rmse
    );
    Ok(row)
}

fn bench(a: BenchArgs, argv: &[String]) -> CliResult<()> {
    if a.multipliers.iter().any(|m| !(*m > 0.0)) {
        return Err(usage("density multipliers must be positive"));
    }
    if a.absorption_start.len() != 3 || a.absorption_start.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(usage("--absorption-start needs three values in [0, 1]"));
    }
    let mut rec = Recorder::new("bench", argv, &a.out)?;
    let LoadedScene { mut scene, opts, models_dir } = load_scene(&a.scene, &a.overrides, &mut rec)?;
    rec.config(
        &serde_json::json!({
            "multipliers": &a.multipliers,
            "absorption_steps": a.absorption_steps,
            "absorption_start": &a.absorption_start,
            "options": &opts,
        }),
        Some(opts.seed),
    )?;
    let models = need_models(&models_dir, &mut rec)?;
    let base = scene.media;
    let mut rows = Vec::new();
    for (i, &m) in a.multipliers.iter().enumerate() {
        for c in 0..3 {
            scene.media[c].sigma_t = base[c].sigma_t * m;
        }
        rows.push(bench_row(&scene, &models, &opts, "density", i, m)?);
    }
    scene.media = base;
    for k in 0..a.absorption_steps {
        let f = 2f64.powi(k as i32);
        for c in 0..3 {
            scene.media[c].phi = (1.0 - a.absorption_start[c] * f).max(0.0);
        }
        rows.push(bench_row(&scene, &models, &opts, "absorption", k, f)?);
    }
    // Timings go to a separate file so that bench.csv stays reproducible.
    let mut csv = String::from(
        "sweep,step,factor,sigma_t_r,sigma_t_g,sigma_t_b,absorption_r,absorption_g,absorption_b,\
         pt_mean_events,st_mean_steps,step_ratio,st_decoder_evals,rmse\n",
    );
    let mut timing = String::from("sweep,step,pt_seconds,st_seconds,speedup\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{:.6}\n",
            r.sweep, r.step, r.factor, r.sigma_t[0], r.sigma_t[1], r.sigma_t[2], r.absorption[0], r.absorption[1],
            r.absorption[2], r.pt_mean_events, r.st_mean_steps, r.step_ratio, r.st_decoder_evals, r.rmse
        ));
        timing.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4}\n",
            r.sweep, r.step, r.pt_seconds, r.st_seconds, r.speedup
        ));
    }
    rec.write("bench.csv", csv.as_bytes(), true)?;
    rec.write("timing.csv", timing.as_bytes(), false)?;
    rec.finish()?;
    Ok(())
}

fn mesh(a: MeshArgs, argv: &[String]) -> CliResult<()> {
    if !(a.radius > 0.0) || a.subdivisions > 7 {
        return Err(usage("need radius > 0 and at most 7 subdivisions"));
    }
    let mut rec = Recorder::new("mesh", argv, &a.out)?;
    rec.config(&serde_json::json!({ "subdivisions": a.subdivisions, "radius": a.radius }), None)?;
    let m = TriangleMesh::icosphere(a.subdivisions).transformed(a.radius, Vec3d::zero());
    let mut obj = Vec::new();
    m.write_obj(&mut obj)?;
    rec.write("mesh.obj", &obj, true)?;
    println!("{} triangles, radius {} m", m.len(), a.radius);
    rec.finish()?;
    Ok(())
}

fn replay(a: ReplayArgs) -> CliResult<()> {
    let original = manifest::load(&a.manifest)?;
    let orig_dir = a.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out = std::path::absolute(&a.out)?;
    if std::path::absolute(&orig_dir)? == out {
        return Err(usage("replay output must differ from the original directory"));
    }
    let mut argv = vec!["sstrace".to_string()];
    argv.extend(original.argv.iter().cloned());
    let mut cli: Cli = clap::Parser::try_parse_from(&argv)
        .map_err(|e| CliError::Data(format!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Data("cannot replay a replay".into()));
    }
    *cli.command.out_mut() = out.clone();
    let orig_abs = std::path::absolute(&orig_dir)?;
    let cwd = std::env::current_dir()?;
    std::env::set_current_dir(&original.working_dir).at(&original.working_dir)?;
    let mut new_argv = original.argv.clone();
    if let Some(i) = new_argv.iter().position(|s| s == "--out") {
        if i + 1 < new_argv.len() {
            new_argv[i + 1] = out.display().to_string();
        }
    }
    let result = dispatch(cli.command, &new_argv);
    std::env::set_current_dir(cwd)?;
    result?;
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for o in original.outputs.iter().filter(|o| o.deterministic) {
        checked += 1;
        let now = manifest::file_sha256(&out.join(&o.path))?;
        if now != o.sha256 {
            mismatches.push(o.path.display().to_string());
        }
    }
    println!("replayed {} from {}: {checked} deterministic outputs checked", original.command, orig_abs.display());
    if !mismatches.is_empty() {
        return Err(CliError::Internal(format!("outputs differ from the manifest: {}", mismatches.join(", "))));
    }
    println!("all outputs reproduced byte for byte");
    Ok(())
}
