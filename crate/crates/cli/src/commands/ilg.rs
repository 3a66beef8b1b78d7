use std::path::{Path, PathBuf};

use guiagent_core::ilg::{synthesize, GroundingMeta, IlgConfig, IlgRecord, MetaRecord};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::config::{read_jsonl, to_json, write_text};
use crate::{CliError, CliResult, IlgArgs};

struct Source {
    rel: String,
    meta: GroundingMeta,
}

/// Choices made up front from the master seed so output does not depend on
/// how samples are spread over threads.
struct Plan {
    index: usize,
    target: usize,
    background: usize,
    distractors: Vec<usize>,
    seed: u64,
}

#[derive(Serialize)]
struct Summary {
    samples: usize,
    out: PathBuf,
}

fn load_rgb(path: &Path) -> CliResult<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| CliError::Data(format!("cannot load {}: {e}", path.display())))
}

fn load_sources(dir: &Path) -> CliResult<Vec<Source>> {
    let records: Vec<MetaRecord> = read_jsonl(&dir.join("meta.jsonl"))?;
    records
        .into_iter()
        .map(|r| {
            let image = load_rgb(&dir.join(&r.image))?;
            let meta = GroundingMeta::new(image, (r.point[0], r.point[1]), r.description)
                .map_err(|e| CliError::Data(format!("{}: {e}", r.image)))?;
            Ok(Source { rel: r.image, meta })
        })
        .collect()
}

fn load_backgrounds(dir: &Path) -> CliResult<Vec<(String, RgbImage)>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            Ok((name, load_rgb(&p)?))
        })
        .collect()
}

fn plan(n: usize, k: usize, sources: usize, backgrounds: usize, seed: u64) -> Vec<Plan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|index| {
            let target = rng.gen_range(0..sources);
            let background = rng.gen_range(0..backgrounds);
            let distractors = (0..k)
                .map(|_| {
                    if sources == 1 {
                        return target;
                    }
                    let d = rng.gen_range(0..sources - 1);
                    if d >= target {
                        d + 1
                    } else {
                        d
                    }
                })
                .collect();
            Plan {
                index,
                target,
                background,
                distractors,
                seed: rng.gen(),
            }
        })
        .collect()
}

pub fn execute(args: &IlgArgs, _cfg: &Config) -> CliResult<u8> {
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let sources = load_sources(&args.meta)?;
    let backgrounds = load_backgrounds(&args.backgrounds)?;
    if sources.is_empty() || backgrounds.is_empty() {
        return Err(CliError::Data(
            "need at least one meta sample and one background".into(),
        ));
    }
    let plans = plan(args.n, args.distractors, sources.len(), backgrounds.len(), args.seed);
    let images_dir = args.out.join("images");
    std::fs::create_dir_all(&images_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", images_dir.display())))?;
    let cfg = IlgConfig::default();

    let make = |p: &Plan| -> CliResult<IlgRecord> {
        let src = &sources[p.target];
        let distractors: Vec<RgbImage> = p.distractors.iter().map(|&d| sources[d].meta.image.clone()).collect();
        let sample = synthesize(&src.meta, &backgrounds[p.background].1, &distractors, p.seed, &cfg)
            .map_err(|e| CliError::Data(format!("sample {}: {e}", p.index)))?;
        let name = format!("images/ilg_{:05}.png", p.index);
        sample
            .composite
            .save(args.out.join(&name))
            .map_err(|e| CliError::Runtime(format!("cannot write {name}: {e}")))?;
        Ok(IlgRecord {
            image: name,
            point: [sample.point.0, sample.point.1],
            description: sample.description,
            source_image: src.rel.clone(),
            background_image: backgrounds[p.background].0.clone(),
            distractor_images: p.distractors.iter().map(|&d| sources[d].rel.clone()).collect(),
            provenance: sample.provenance,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let records = pool
        .install(|| plans.par_iter().map(make).collect::<Vec<_>>())
        .into_iter()
        .collect::<CliResult<Vec<_>>>()?;
    let jsonl: String = records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect();
    write_text(&args.out.join("samples.jsonl"), &jsonl)?;
    println!(
        "{}",
        to_json(&Summary {
            samples: records.len(),
            out: args.out.clone(),
        })
    );
    Ok(0)
}
