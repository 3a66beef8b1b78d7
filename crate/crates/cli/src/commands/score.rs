use guiagent_core::orchestrator::Episode;
use guiagent_core::rewards::{score, RewardBreakdown, TaskTag, TruthPayload};
use guiagent_core::runtime::Role;
use serde::{Deserialize, Serialize};

use crate::config::{read_jsonl, read_text, to_json, write_text, Config};
use crate::{CliError, CliResult, ScoreArgs};

/// One label line. `role` picks whose output in step `t` is scored; by
/// default the last role call of the step.
#[derive(Debug, Clone, Deserialize)]
struct Label {
    t: u32,
    tag: TaskTag,
    truth: TruthPayload,
    #[serde(default)]
    role: Option<Role>,
}

#[derive(Debug, Serialize)]
struct StepScore {
    t: u32,
    tag: TaskTag,
    role: Role,
    breakdown: RewardBreakdown,
}

#[derive(Debug, Default, Serialize)]
struct Totals {
    count: usize,
    r_agent: f64,
    r_penalty: f64,
    total: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    steps: Vec<StepScore>,
    totals: Totals,
}

pub fn execute(args: &ScoreArgs, cfg: &Config) -> CliResult<u8> {
    let text = read_text(&args.traj)?;
    let steps = if text.trim().is_empty() {
        Vec::new()
    } else {
        Episode::from_jsonl(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", args.traj.display())))?
            .steps
    };
    let labels: Vec<Label> = read_jsonl(&args.labels)?;

    let mut report = Report {
        steps: Vec::new(),
        totals: Totals::default(),
    };
    for label in labels {
        let step = steps.iter().find(|s| s.t == label.t).ok_or_else(|| {
            CliError::Data(format!(
                "label for step {} but the trajectory has no such step",
                label.t
            ))
        })?;
        let call = match label.role {
            Some(role) => step.role_calls.iter().rev().find(|c| c.role == role),
            None => step.role_calls.last(),
        }
        .ok_or_else(|| CliError::Data(format!("step {} has no output to score", label.t)))?;
        let screen = (i64::from(step.screen.0), i64::from(step.screen.1));
        let breakdown = score(label.tag, &call.output, &label.truth, screen, &cfg.reward)
            .map_err(|e| CliError::Data(format!("step {}: {e}", label.t)))?;
        report.totals.count += 1;
        report.totals.r_agent += breakdown.r_agent;
        report.totals.r_penalty += breakdown.r_penalty;
        report.totals.total += breakdown.total;
        report.steps.push(StepScore {
            t: label.t,
            tag: label.tag,
            role: call.role,
            breakdown,
        });
    }
    let json = to_json(&report);
    if let Some(out) = &args.out {
        write_text(out, &json)?;
    }
    println!("{json}");
    Ok(0)
}
