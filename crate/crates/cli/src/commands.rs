//! The subcommands. Each writes its human-readable output to `out`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sst_core::hsi::{extract_patches, load_cube, pseudo_color, save_cube, synthetic_cube, write_atomic, HsiCube};
use sst_core::metrics::{CubeMetrics, MetricsReport, ReportMetadata};
use sst_core::net::{check, denoise, denoise_tiled, load_checkpoint, save_checkpoint, SstModel};
use sst_core::noise::{synthesize, NoiseRecord};
use sst_core::tensor::gradcheck::{primitive_components, run_components, GradcheckReport};
use sst_core::SeedStream;

use crate::config::RunConfig;
use crate::train::{train, validation_set, EpochLog};
use crate::{CliError, Result};

/// File extension of cube files.
pub const CUBE_EXT: &str = "hsic";
/// Suffix of the noise record written next to each simulated cube.
pub const RECORD_SUFFIX: &str = ".noise.toml";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Cube files under `path` (or `path` itself), sorted by name.
pub fn cube_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_owned()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| io_err(path, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == CUBE_EXT))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_cubes(path: &Path) -> Result<Vec<(String, HsiCube)>> {
    let files = cube_files(path)?;
    files.par_iter().map(|f| Ok((id_of(f), load_cube(f)?))).collect()
}

/// Output location for `source` when mapping an input file or directory onto `output`.
fn output_for(source: &Path, input: &Path, output: &Path) -> PathBuf {
    if input.is_dir() {
        output.join(source.file_name().expect("listed files have names"))
    } else {
        output.to_owned()
    }
}

fn prepare_output(input: &Path, output: &Path) -> Result<()> {
    if input.is_dir() {
        std::fs::create_dir_all(output).map_err(|e| io_err(output, e))?;
    } else if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    Ok(())
}

pub fn record_path(cube_path: &Path) -> PathBuf {
    let name = format!("{}{RECORD_SUFFIX}", id_of(cube_path));
    cube_path.with_file_name(name)
}

/// Writes `count` synthetic cubes named `scene_000.hsic`, … into the output directory.
pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = cfg.require(&cfg.output, "output")?;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let root = SeedStream::new(cfg.seed).split_named("synth");
    for i in 0..cfg.count {
        let cube = synthetic_cube(cfg.height, cfg.width, cfg.bands, root.split(i as u64));
        let path = dir.join(format!("scene_{i:03}.{CUBE_EXT}"));
        save_cube(&cube, &path)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}

/// Corrupts every input cube; writes the noisy cube and its noise record.
/// With a directory input, each file's seed is derived from the base seed and its name.
pub fn cmd_simulate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let input = cfg.require(&cfg.input, "input")?;
    let output = cfg.require(&cfg.output, "output")?;
    let spec = cfg.noise_spec()?;
    let files = cube_files(input)?;
    if files.is_empty() {
        return Err(CliError::Data(format!("no .{CUBE_EXT} files in {}", input.display())));
    }
    prepare_output(input, output)?;
    let root = SeedStream::new(cfg.seed).split_named("simulate");
    let records = files
        .par_iter()
        .map(|f| {
            let clean = load_cube(f)?;
            let spec = if input.is_dir() { spec.clone().with_seed(root.split_named(&id_of(f)).seed()) } else { spec.clone() };
            let (noisy, record) = synthesize(&clean, &spec)?;
            let dst = output_for(f, input, output);
            save_cube(&noisy, &dst)?;
            write_atomic(record_path(&dst), record.to_toml().as_bytes())?;
            Ok((dst, record))
        })
        .collect::<Result<Vec<(PathBuf, NoiseRecord)>>>()?;
    for (dst, record) in records {
        writeln!(out, "== {}", dst.display())?;
        writeln!(out, "{}", record.summary())?;
    }
    Ok(())
}

/// Trains a model on the input cubes and writes a checkpoint after every epoch.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<EpochLog>> {
    let input = cfg.require(&cfg.input, "input")?;
    let checkpoint = cfg.require(&cfg.checkpoint, "checkpoint")?.to_owned();
    let config = cfg.sst_config()?;
    let noise = cfg.noise_spec()?;
    let mut cubes = load_cubes(input)?;
    if cubes.is_empty() {
        return Err(CliError::Data(format!("no training cubes in {}", input.display())));
    }
    let held_out = match &cfg.validation {
        Some(dir) => load_cubes(dir)?,
        None if cubes.len() > 1 => {
            let n = ((cubes.len() as f64 * cfg.val_fraction).ceil() as usize).clamp(1, cubes.len() - 1);
            cubes.split_off(cubes.len() - n)
        }
        None => Vec::new(),
    };
    for (id, c) in cubes.iter().chain(&held_out) {
        if c.bands() != config.bands {
            return Err(CliError::Data(format!("{id} has {} bands, model expects {}", c.bands(), config.bands)));
        }
    }
    let params = cfg.patch_params();
    let patches: Vec<HsiCube> = cubes
        .iter()
        .map(|(id, c)| extract_patches(c, &params, id).map(|s| s.patches))
        .collect::<std::result::Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let validation = validation_set(held_out, &noise, cfg.seed)?;
    writeln!(
        out,
        "training on {} patches from {} cubes, {} validation cubes, {} parameters",
        patches.len(),
        cubes.len(),
        validation.len(),
        sst_core::net::count_params(&config)
    )?;

    let mut model = SstModel::<f32>::init(&config, SeedStream::new(cfg.seed).split_named("init"))?;
    if cfg.zero_init_tail {
        model.zero_where(|n| n == "tail2.weight");
    }
    let mut log_text = String::new();
    let logs = train(&mut model, &patches, &validation, cfg, |log, model| {
        save_checkpoint(model, &checkpoint)?;
        writeln!(out, "{}", log.line())?;
        log_text.push_str(&log.line());
        log_text.push('\n');
        if let Some(report) = &cfg.report {
            write_atomic(report, log_text.as_bytes())?;
        }
        Ok(())
    })?;
    if logs.is_empty() {
        save_checkpoint(&model, &checkpoint)?;
    }
    Ok(logs)
}

fn run_model(cfg: &RunConfig, model: &SstModel<f32>, cube: &HsiCube) -> Result<HsiCube> {
    Ok(if cfg.tiled { denoise_tiled(model, cube, cfg.tile, cfg.overlap)? } else { denoise(model, cube)? })
}

/// Denoises a cube file or every cube in a directory. Inputs are never modified.
pub fn cmd_denoise(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let input = cfg.require(&cfg.input, "input")?;
    let output = cfg.require(&cfg.output, "output")?;
    let model = load_checkpoint(cfg.require(&cfg.checkpoint, "checkpoint")?)?;
    let files = cube_files(input)?;
    if files.is_empty() {
        return Err(CliError::Data(format!("no .{CUBE_EXT} files in {}", input.display())));
    }
    prepare_output(input, output)?;
    for f in &files {
        let cube = load_cube(f)?;
        let clean = run_model(cfg, &model, &cube)?;
        let dst = output_for(f, input, output);
        save_cube(&clean, &dst)?;
        writeln!(out, "{} -> {}", f.display(), dst.display())?;
    }
    Ok(())
}

/// Outcome of matching a clean set against a test set.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    /// Files present in only one of the two sets.
    pub unmatched: Vec<String>,
}

/// Scores every test cube against the clean cube with the same file name.
pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<EvalOutcome> {
    let clean_path = cfg.require(&cfg.input, "input")?;
    let test_path = cfg.require(&cfg.test, "test")?;
    let clean: BTreeMap<String, PathBuf> = cube_files(clean_path)?.into_iter().map(|p| (id_of(&p), p)).collect();
    let test: BTreeMap<String, PathBuf> = cube_files(test_path)?.into_iter().map(|p| (id_of(&p), p)).collect();
    let (pairs, unmatched) = if clean.len() == 1 && test.len() == 1 && clean_path.is_file() {
        let (c, t) = (clean.values().next().unwrap(), test.values().next().unwrap());
        (vec![(id_of(t), c.clone(), t.clone())], Vec::new())
    } else {
        let pairs: Vec<_> = clean
            .iter()
            .filter_map(|(id, c)| test.get(id).map(|t| (id.clone(), c.clone(), t.clone())))
            .collect();
        let unmatched: Vec<String> = clean
            .keys()
            .filter(|k| !test.contains_key(*k))
            .map(|k| format!("{k} (clean only)"))
            .chain(test.keys().filter(|k| !clean.contains_key(*k)).map(|k| format!("{k} (test only)")))
            .collect();
        (pairs, unmatched)
    };
    for u in &unmatched {
        log::warn!("unmatched: {u}");
        writeln!(out, "warning: unmatched {u}")?;
    }
    if pairs.is_empty() {
        return Err(CliError::Data("no cube appears in both the clean and the test set".into()));
    }
    let per_cube = pairs
        .par_iter()
        .map(|(id, c, t)| {
            let (clean, test) = (load_cube(c)?, load_cube(t)?);
            Ok(CubeMetrics::compute(id.clone(), &clean, &test)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = pairs
        .iter()
        .find_map(|(_, _, t)| std::fs::read_to_string(record_path(t)).ok())
        .and_then(|text| NoiseRecord::from_toml(&text).ok())
        .map(|r| format!("{} sigma {:?} seed {}", r.spec.kind, r.spec.sigma.bounds(), r.spec.seed));
    let model = cfg.checkpoint.as_ref().map(|p| p.display().to_string());
    let report = MetricsReport::new(per_cube, ReportMetadata { noise, model, timestamp: None });
    let text = report.to_text();
    write!(out, "{text}")?;
    if !unmatched.is_empty() {
        writeln!(out, "{} unmatched file(s) skipped", unmatched.len())?;
    }
    if let Some(path) = &cfg.report {
        write_atomic(path, text.as_bytes())?;
        write_atomic(path.with_extension("csv"), report.to_csv().as_bytes())?;
    }
    Ok(EvalOutcome { report, unmatched })
}

/// Finite-difference check of every primitive and of the configured network end to end.
/// Fails with a numerical error if any component exceeds the threshold.
pub fn cmd_gradcheck(cfg: &RunConfig, out: &mut dyn Write) -> Result<GradcheckReport> {
    let config = cfg.sst_config()?;
    let seed = SeedStream::new(cfg.seed).split_named("gradcheck");
    let mut components = primitive_components(seed.split_named("primitives"));
    components.extend(check::all_network_components(
        &config,
        (cfg.gradcheck_size, cfg.gradcheck_size),
        seed.split_named("network"),
    ));
    let report = run_components(&components, cfg.gradcheck_eps, cfg.gradcheck_threshold)?;
    writeln!(out, "{report}")?;
    if let Some(path) = &cfg.report {
        write_atomic(path, format!("{report}\n").as_bytes())?;
    }
    if !report.passed() {
        return Err(CliError::Numerical(format!(
            "gradient check failed: worst relative error {:.3e} >= {:.0e}",
            report.worst(),
            report.threshold
        )));
    }
    Ok(report)
}

/// Writes a pseudo-color PPM of three bands (0-based indices).
pub fn cmd_render(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let input = cfg.require(&cfg.input, "input")?;
    let output = cfg.require(&cfg.output, "output")?;
    let cube = load_cube(input)?;
    let [r, g, b] = cfg.rgb;
    let image = pseudo_color(&cube, (r, g, b))?;
    write_atomic(output, &image.to_ppm())?;
    writeln!(out, "{} ({}x{}, bands {r},{g},{b}) -> {}", input.display(), image.width, image.height, output.display())?;
    Ok(())
}
