//! `id<TAB>tgt ids` hypothesis files; the token field may be empty.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::read_text;
use crate::error::{usage, CliError, CliResult};

pub fn write_hypotheses(path: &Path, hyps: &[(String, Vec<usize>)]) -> CliResult<()> {
    let io_err = |source| CliError::File {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for (id, toks) in hyps {
        let toks: Vec<String> = toks.iter().map(ToString::to_string).collect();
        writeln!(w, "{id}\t{}", toks.join(" ")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_hypotheses(path: &Path) -> CliResult<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| usage(format!("{}: line {}: {msg}", path.display(), i + 1));
        let (id, toks) = line.split_once('\t').ok_or_else(|| bad("expected id<TAB>tokens"))?;
        if id.is_empty() {
            return Err(bad("empty id"));
        }
        let toks = toks
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(&format!("bad token {t:?}"))))
            .collect::<CliResult<_>>()?;
        out.push((id.to_string(), toks));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_empty_hypothesis() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.tsv");
        let hyps = vec![("a".to_string(), vec![1, 2]), ("b".to_string(), vec![])];
        write_hypotheses(&p, &hyps).unwrap();
        assert_eq!(read_hypotheses(&p).unwrap(), hyps);
    }
}
