use std::collections::HashSet;

use guiagent_core::synthesis::{synthesize_record, RecordStatus, SynthesisError, SynthesisInput, SynthesizedRecord};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{read_jsonl, to_json, write_text, Config};
use crate::{CliError, CliResult, SynthArgs};

#[derive(Debug, Default, Serialize)]
struct Counts {
    total: usize,
    accepted: usize,
    rejected: usize,
    duplicates: usize,
}

pub fn execute(args: &SynthArgs, cfg: &Config) -> CliResult<u8> {
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let client = cfg.client(&args.endpoint)?;
    let inputs: Vec<SynthesisInput> = read_jsonl(&args.input)?;
    let mut counts = Counts {
        total: inputs.len(),
        ..Counts::default()
    };
    let mut seen = HashSet::new();
    let unique: Vec<SynthesisInput> = inputs.into_iter().filter(|i| seen.insert(i.digest())).collect();
    counts.duplicates = counts.total - unique.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<Result<SynthesizedRecord, SynthesisError>> = pool.install(|| {
        unique
            .par_iter()
            .map(|i| synthesize_record(args.task, i, &*client, args.retries))
            .collect()
    });

    let mut records = Vec::new();
    let mut failure = None;
    for (n, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e @ SynthesisError::MissingPlaceholder(_)) => {
                failure.get_or_insert(CliError::Data(format!("input {}: {e}", n + 1)));
            }
            Err(e) => {
                failure.get_or_insert(CliError::Runtime(format!("input {}: {e}", n + 1)));
            }
        }
    }
    counts.accepted = records.iter().filter(|r| r.status == RecordStatus::Accepted).count();
    counts.rejected = records.len() - counts.accepted;
    let jsonl: String = records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect();
    write_text(&args.out, &jsonl)?;
    println!("{}", to_json(&counts));
    match failure {
        Some(e) => Err(e),
        None => Ok(0),
    }
}
