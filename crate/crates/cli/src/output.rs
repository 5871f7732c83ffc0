use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

/// Serialized console output. Everything but errors is dropped in quiet mode.
#[derive(Debug, Clone, Copy)]
pub struct Console {
    quiet: bool,
}

impl Console {
    pub fn new(quiet: bool) -> Self {
        Self { quiet }
    }

    pub fn say(&self, line: &str) {
        if !self.quiet {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{line}");
        }
    }

    pub fn warn(&self, line: &str) {
        if !self.quiet {
            eprintln!("warning: {line}");
        }
    }

    pub fn error(&self, line: &str) {
        eprintln!("error: {line}");
    }
}

pub fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(dir, name, &(text + "\n"))
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Right-aligned table of the pairwise minimum eigenvalues.
pub fn eig_table(rows: &[Vec<f64>]) -> String {
    let mut out = String::from("mode");
    for j in 0..rows.len() {
        out += &format!("{:>12}", j);
    }
    for (i, row) in rows.iter().enumerate() {
        out += &format!("\n{i:>4}");
        for v in row {
            out += &format!("{v:>12.6}");
        }
    }
    out
}
