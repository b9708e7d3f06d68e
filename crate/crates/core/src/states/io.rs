//! Text format for grid wavefunctions.
//!
//! ```text
//! # grid-wavefunction v1
//! d <d>
//! hbar <hbar>
//! axis <origin> <spacing> <count>      (one line per axis)
//! <i_1> ... <i_d> <re> <im>            (one line per sample, row-major)
//! ```
//! Floats are written in shortest round-trip form, so reading back is bit exact.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::states::grid::{Axis, GridWavefunction};

pub const HEADER: &str = "# grid-wavefunction v1";

pub fn write_grid(u: &GridWavefunction) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER}");
    let _ = writeln!(s, "d {}", u.dim());
    let _ = writeln!(s, "hbar {:?}", u.hbar);
    for a in &u.axes {
        let _ = writeln!(s, "axis {:?} {:?} {}", a.origin, a.spacing, a.count);
    }
    for (idx, v) in u.values.iter().enumerate() {
        for i in u.multi_index(idx) {
            let _ = write!(s, "{i} ");
        }
        let _ = writeln!(s, "{:?} {:?}", v.re, v.im);
    }
    s
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Parse(format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad {what}")))
}

pub fn read_grid(text: &str) -> Result<GridWavefunction> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Parse("missing header".into()));
    }
    let mut field = |key: &str| -> Result<String> {
        let l = lines.next().ok_or_else(|| Error::Parse(format!("missing {key}")))?;
        l.strip_prefix(key)
            .map(|r| r.trim().to_string())
            .ok_or_else(|| Error::Parse(format!("expected `{key}`")))
    };
    let d: usize = parse(Some(&field("d")?), "d")?;
    let hbar: f64 = parse(Some(&field("hbar")?), "hbar")?;
    let mut axes = Vec::with_capacity(d);
    for _ in 0..d {
        let rest = field("axis")?;
        let mut t = rest.split_whitespace();
        axes.push(Axis::new(parse(t.next(), "origin")?, parse(t.next(), "spacing")?, parse(t.next(), "count")?));
    }
    let mut u = GridWavefunction::zeros(hbar, axes);
    let strides = u.strides();
    let mut seen = 0usize;
    for l in lines {
        if l.trim().is_empty() {
            continue;
        }
        let mut t = l.split_whitespace();
        let mut idx = 0usize;
        for (i, s) in strides.iter().enumerate() {
            let k: usize = parse(t.next(), "index")?;
            if k >= u.axes[i].count {
                return Err(Error::Parse("index out of range".into()));
            }
            idx += k * s;
        }
        let re: f64 = parse(t.next(), "re")?;
        let im: f64 = parse(t.next(), "im")?;
        u.values[idx] = Complex64::new(re, im);
        seen += 1;
    }
    if seen != u.len() {
        return Err(Error::Parse(format!("expected {} samples, found {seen}", u.len())));
    }
    Ok(u)
}
