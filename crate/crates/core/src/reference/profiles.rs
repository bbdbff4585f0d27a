//! Centerline profiles in a small CSV dialect: optional `# name` line, a
//! `coord,value` header, then rows. Several sections may share one file.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub name: String,
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn load_external_profiles(path: &Path) -> Result<Vec<Profile>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profiles(&text, &path.display().to_string())
}

pub fn write_profiles(path: &Path, profiles: &[Profile]) -> Result<()> {
    let mut s = String::new();
    for p in profiles {
        let _ = writeln!(s, "# {}", p.name);
        s.push_str("coord,value\n");
        for (c, v) in p.coords.iter().zip(&p.values) {
            let _ = writeln!(s, "{c:?},{v:?}");
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_profiles(text: &str, source: &str) -> Result<Vec<Profile>> {
    let mut out: Vec<Profile> = Vec::new();
    let mut pending_name: Option<String> = None;
    let mut open = false;
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('#') {
            pending_name = Some(name.trim().to_string());
            open = false;
            continue;
        }
        if line.eq_ignore_ascii_case("coord,value") {
            let name = pending_name.take().unwrap_or_else(|| format!("profile{}", out.len()));
            out.push(Profile {
                name,
                coords: Vec::new(),
                values: Vec::new(),
            });
            open = true;
            continue;
        }
        if !open {
            return Err(Error::parse(source, line_no, "expected a `coord,value` header"));
        }
        let (c, v) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(source, line_no, "expected two comma-separated values"))?;
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(source, line_no, format!("bad number {:?}", s.trim())))
        };
        let (c, v) = (num(c)?, num(v)?);
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::parse(source, line_no, format!("coordinate {c} outside [0, 1]")));
        }
        let p = out.last_mut().unwrap();
        if let Some(&prev) = p.coords.last() {
            let rising = if p.coords.len() < 2 {
                c > prev
            } else {
                p.coords[1] > p.coords[0]
            };
            if c == prev || (c > prev) != rising {
                return Err(Error::parse(source, line_no, "coordinates must be strictly monotone"));
            }
        }
        p.coords.push(c);
        p.values.push(v);
    }
    if out.is_empty() {
        return Err(Error::parse(source, 0, "no profile sections"));
    }
    if let Some(p) = out.iter().find(|p| p.coords.is_empty()) {
        return Err(Error::parse(source, 0, format!("profile {} has no rows", p.name)));
    }
    Ok(out)
}
