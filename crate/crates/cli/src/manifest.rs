use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

/// Writes `manifest.json` into `out`: the command, its full argument set, the
/// resolved configuration and tool versions, enough to rerun it.
pub fn write_manifest(out: &Path, command: &str, args: &impl Serialize, config: Option<Value>, outputs: &[String]) -> anyhow::Result<()> {
    let manifest = json!({
        "command": command,
        "args": args,
        "config": config,
        "outputs": outputs,
        "versions": {
            "kbuf": env!("CARGO_PKG_VERSION"),
            "kbuffers": kbuffers::VERSION,
        },
        "threads": kbuffers::par::workers(),
    });
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
