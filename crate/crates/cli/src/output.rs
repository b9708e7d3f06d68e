use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// CSV text with a commented provenance header. Column order is frozen per
/// subcommand; `wall_time` is always the last column.
pub struct Csv {
    text: String,
    hash: String,
}

impl Csv {
    pub fn new(command: &str, hash: &str, seed: u64, units: &str, columns: &str) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "# scprop {command} version={VERSION}");
        let _ = writeln!(text, "# config_sha256={hash}");
        let _ = writeln!(text, "# seed={seed}");
        let _ = writeln!(text, "# units: {units}");
        let _ = writeln!(text, "{columns},version,config_hash,wall_time");
        Csv { text, hash: hash.to_string() }
    }

    pub fn row(&mut self, fields: &str, wall_time: f64) {
        let _ = writeln!(self.text, "{fields},{VERSION},{},{wall_time:.3}", self.hash);
    }

    pub fn comment(&mut self, line: &str) {
        let _ = writeln!(self.text, "# {line}");
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub fn num(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), num)
}

/// Sibling file `<out>.<suffix>`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
