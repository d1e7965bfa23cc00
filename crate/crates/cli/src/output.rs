use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::params::Resolver;

/// Record of one run, enough to reproduce its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand path, e.g. `hitting min-n`.
    pub command: String,
    /// Every resolved parameter, keyed by flag name.
    pub parameters: BTreeMap<String, Value>,
    pub artifacts: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// Per-run state shared by the subcommands: parameters and output sink.
pub struct Ctx {
    pub params: Resolver,
    pub json: bool,
    out: Option<PathBuf>,
    artifacts: Vec<PathBuf>,
    seed: Option<u64>,
}

impl Ctx {
    pub fn new(mut params: Resolver, json_flag: bool, out: Option<PathBuf>) -> Result<Self> {
        let json = params.switch("json", json_flag)?;
        Ok(Self { params, json, out, artifacts: Vec::new(), seed: None })
    }

    /// True when output goes to stdout in the default text mode.
    pub fn plain_stdout(&self) -> bool {
        self.out.is_none() && !self.json
    }

    /// Resolves the `seed` parameter (default 0) and echoes it on stderr.
    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let seed = self.params.get("seed", flag, 0)?;
        eprintln!("seed: {seed}");
        self.seed = Some(seed);
        Ok(seed)
    }

    fn sink(&mut self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(path) => {
                let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                self.artifacts.push(path.clone());
                Box::new(io::BufWriter::new(file))
            }
            None => Box::new(io::stdout().lock()),
        })
    }

    /// Comma-separated with a header row, even when there are no rows.
    pub fn emit_csv<R: Serialize>(&mut self, header: &[&str], rows: &[R]) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(self.sink()?);
        w.write_record(header)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn emit_json<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let mut sink = self.sink()?;
        serde_json::to_writer_pretty(&mut sink, value)?;
        writeln!(sink)?;
        sink.flush()?;
        Ok(())
    }

    pub fn emit_text(&mut self, text: &str) -> Result<()> {
        let mut sink = self.sink()?;
        writeln!(sink, "{text}")?;
        sink.flush()?;
        Ok(())
    }

    pub fn into_manifest(self, command: &str, wall_clock_seconds: f64) -> RunManifest {
        RunManifest {
            command: command.to_owned(),
            parameters: self.params.into_resolved(),
            artifacts: self.artifacts,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            wall_clock_seconds,
        }
    }
}

/// Numbers separated by commas, whitespace or newlines; `#` starts a comment
/// line and a non-numeric first line is taken as a header.
pub fn read_numbers(source: Option<&str>) -> Result<Vec<f64>> {
    let reader: Box<dyn Read> = match source {
        None | Some("-") => Box::new(io::stdin().lock()),
        Some(path) => Box::new(File::open(path).with_context(|| format!("opening {path}"))?),
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let tokens: Vec<&str> = record.iter().flat_map(str::split_whitespace).collect();
        match tokens.iter().map(|t| t.parse::<f64>()).collect::<Result<Vec<_>, _>>() {
            Ok(v) => values.extend(v),
            Err(_) if i == 0 => {}
            Err(_) => bail!("line {line}: expected numbers, got `{}`", tokens.join(" ")),
        }
    }
    Ok(values)
}
