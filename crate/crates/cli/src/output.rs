use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use envlight::pipeline::{wire::ErrorBody, EstimationFailure};
use serde::Serialize;
use serde_json::json;

use crate::{Format, Global};

/// Where results go and in which shape.
pub struct Output {
    pub dir: PathBuf,
    pub format: Format,
    pub no_timing: bool,
}

impl Output {
    pub fn new(g: &Global) -> anyhow::Result<Self> {
        Ok(Self {
            dir: g.output_dir.clone(),
            format: g.format,
            no_timing: g.no_timing,
        })
    }

    /// Resolves a relative output path against the output directory.
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.dir.join(p)
        }
    }

    pub fn ensure_dir(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
    }

    /// Prints a single result as pretty JSON on stdout.
    pub fn emit(&self, value: &impl Serialize) -> anyhow::Result<()> {
        let mut stdout = std::io::stdout().lock();
        serde_json::to_writer_pretty(&mut stdout, value)?;
        writeln!(stdout)?;
        Ok(())
    }

    /// Prints CSV text when `--format csv` is set, otherwise the JSON value.
    pub fn emit_table(&self, value: &impl Serialize, csv: impl FnOnce() -> String) -> anyhow::Result<()> {
        match self.format {
            Format::Json => self.emit(value),
            Format::Csv => {
                print!("{}", csv());
                Ok(())
            }
        }
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> anyhow::Result<PathBuf> {
        self.ensure_dir(&self.dir)?;
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// One JSON object per line.
    pub fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> anyhow::Result<PathBuf> {
        self.ensure_dir(&self.dir)?;
        let path = self.dir.join(name);
        let mut text = String::new();
        for r in rows {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> anyhow::Result<PathBuf> {
        self.ensure_dir(&self.dir)?;
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Records the exact configuration of a protocol run.
    pub fn write_manifest(
        &self,
        command: &str,
        g: &Global,
        config: &impl Serialize,
    ) -> anyhow::Result<PathBuf> {
        self.write_json(
            "run_manifest.json",
            &json!({
                "command": command,
                "version": env!("CARGO_PKG_VERSION"),
                "seed": g.seed,
                "workers": g.workers,
                "config": config,
            }),
        )
    }

    /// `ms` unless timings are suppressed.
    pub fn timing(&self, ms: f64) -> Option<f64> {
        (!self.no_timing).then_some(ms)
    }
}

fn error_body(e: &anyhow::Error) -> ErrorBody {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<envlight::Error>() {
            return ErrorBody::from_error(err);
        }
        if let Some(f) = cause.downcast_ref::<EstimationFailure>() {
            return ErrorBody::from_error(&f.error);
        }
    }
    let code = if e.chain().any(|c| c.is::<std::io::Error>()) {
        "io"
    } else {
        "cli"
    };
    ErrorBody {
        code: code.into(),
        stage: None,
        message: format!("{e:#}"),
    }
}

/// Writes a one-line JSON error record to stderr.
pub fn report_error(e: &anyhow::Error) {
    let mut body = error_body(e);
    // Library errors already include their sources in their message.
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if parts.last() != Some(&text) {
            parts.push(text);
        }
        if cause.is::<envlight::Error>() || cause.is::<EstimationFailure>() {
            break;
        }
    }
    body.message = parts.join(": ");
    eprintln!("{}", json!({ "error": body }));
}

pub fn report_usage_error(e: &clap::Error) {
    let message = e.render().to_string();
    let message = message
        .lines()
        .next()
        .unwrap_or_default()
        .trim_start_matches("error: ");
    eprintln!(
        "{}",
        json!({ "error": { "code": "usage", "stage": null, "message": message } })
    );
}
