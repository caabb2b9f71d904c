//! Terminal review loop: one verdict per parked candidate, read from a line
//! stream.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::Result;

use scenefix_core::orchestrator::{CandidateView, Engine, JobRecord, JobStatus, ReviewVerdict};

/// Parses `a`, `r` or `s PATH` (full words also accepted).
pub fn parse_verdict(line: &str) -> Result<ReviewVerdict, String> {
    let line = line.trim();
    let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    match word {
        "a" | "approve" => Ok(ReviewVerdict::Approve),
        "r" | "reject" | "reject_retry" => Ok(ReviewVerdict::RejectRetry),
        "s" | "substitute" => {
            let path = rest.trim();
            if path.is_empty() {
                return Err("substitute needs a PNG path".into());
            }
            std::fs::read(path)
                .map(ReviewVerdict::Substitute)
                .map_err(|e| format!("cannot read {path}: {e}"))
        }
        other => Err(format!("unknown verdict {other:?}")),
    }
}

fn export(engine: &Engine, dir: &Path, v: &CandidateView) -> Result<(PathBuf, PathBuf)> {
    let d = dir.join("review");
    std::fs::create_dir_all(&d)?;
    let stem = format!("{}-{}", v.subtask_id.replace(':', "_"), v.iteration);
    let before = d.join(format!("{stem}-before.png"));
    let cand = d.join(format!("{stem}-candidate.png"));
    std::fs::write(&before, engine.artifact_of(&v.job_id, &v.before)?)?;
    std::fs::write(&cand, engine.artifact_of(&v.job_id, &v.candidate)?)?;
    Ok((before, cand))
}

/// Asks for verdicts until the job leaves review or the input ends.
pub fn interact(
    engine: &Engine,
    id: &str,
    dir: &Path,
    input: &mut impl BufRead,
    out: &mut impl Write,
) -> Result<JobRecord> {
    let mut rec = engine.record(id)?;
    while rec.status == JobStatus::AwaitingReview {
        let Some(v) = engine.pending(id)?.into_iter().next() else {
            break;
        };
        let (before, cand) = export(engine, dir, &v)?;
        writeln!(
            out,
            "{} iteration {} (verified: {})\n  before:    {}\n  candidate: {}\n  actions: {}",
            v.subtask_id,
            v.iteration,
            v.verified,
            before.display(),
            cand.display(),
            v.allowed_actions.join(", ")
        )?;
        loop {
            write!(out, "verdict [a | r | s PATH]> ")?;
            out.flush()?;
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                writeln!(out)?;
                return Ok(engine.record(id)?);
            }
            let verdict = match parse_verdict(&line) {
                Ok(v) => v,
                Err(e) => {
                    writeln!(out, "  {e}")?;
                    continue;
                }
            };
            match engine.review_action(id, &v.subtask_id, verdict) {
                Ok(r) => {
                    rec = r;
                    break;
                }
                Err(e) => writeln!(out, "  {e}")?,
            }
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_short_and_long_verdicts() {
        assert_eq!(parse_verdict("a\n"), Ok(ReviewVerdict::Approve));
        assert_eq!(parse_verdict(" approve "), Ok(ReviewVerdict::Approve));
        assert_eq!(parse_verdict("r"), Ok(ReviewVerdict::RejectRetry));
        assert!(parse_verdict("s").is_err());
        assert!(parse_verdict("s /definitely/missing.png").is_err());
        assert!(parse_verdict("x").is_err());
    }
}
