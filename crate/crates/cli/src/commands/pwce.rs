use guiagent_core::pwce::{pwce_gradient, pwce_loss, TokenBatch};

use crate::config::{read_text, to_json, Config};
use crate::{CliError, CliResult, PwceArgs};

pub fn execute(args: &PwceArgs, cfg: &Config) -> CliResult<u8> {
    let text = read_text(&args.batch)?;
    let batch: TokenBatch =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", args.batch.display())))?;
    let report = pwce_loss(&batch, &cfg.pwce).map_err(|e| CliError::Data(e.to_string()))?;
    let mut out = serde_json::to_value(&report).expect("report serializes");
    if args.gradient {
        let grad = pwce_gradient(&batch, &cfg.pwce).map_err(|e| CliError::Data(e.to_string()))?;
        out["gradient"] = serde_json::json!(grad);
    }
    println!("{}", to_json(&out));
    Ok(0)
}
