//! Positions-only ASCII point lists: either bare `x y z` lines or an ASCII
//! PLY whose vertex rows start with the position.

use std::path::Path;

use super::FormatError;
use crate::geometry::Vec3;

pub fn parse_points(text: &str) -> Result<Vec<Vec3>, FormatError> {
    let mut lines = text.lines().enumerate().peekable();
    if lines.peek().is_some_and(|(_, l)| l.trim() == "ply") {
        for (_, l) in lines.by_ref() {
            let l = l.trim();
            if l.starts_with("format") && !l.contains("ascii") {
                return Err(FormatError::Invalid("only ASCII PLY is supported".into()));
            }
            if l == "end_header" {
                break;
            }
        }
    }
    let mut points = Vec::new();
    for (i, l) in lines {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| FormatError::Invalid(format!("line {}: {e}", i + 1)))?;
        if v.len() < 3 || v.iter().any(|x| !x.is_finite()) {
            return Err(FormatError::Invalid(format!("line {}: expected three finite numbers", i + 1)));
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(points)
}

pub fn load_points(path: &Path) -> Result<Vec<Vec3>, FormatError> {
    parse_points(&std::fs::read_to_string(path)?)
}
