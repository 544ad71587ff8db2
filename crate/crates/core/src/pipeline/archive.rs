//! Text feature archives.
//!
//! ```text
//! #!kind=spectral
//! #!dim=80
//! #!hash=<sha256 of the producing config>
//! utt001 [
//! 0.125 -3.5e-07 ...
//! ]
//! ```
//!
//! Values carry 9 significant digits, so a write/read/write cycle is
//! byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArchive {
    pub kind: String,
    pub dim: usize,
    pub config_hash: String,
    entries: Vec<(String, Array2<f64>)>,
}

/// `%.9g`: 9 significant digits, fixed notation for exponents in
/// `[-4, 9)`, trailing zeros removed.
pub fn format_g9(x: f64) -> String {
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let fixed = format!("{:.*}", (8 - exp) as usize, x);
        strip_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl FeatureArchive {
    pub fn new(kind: impl Into<String>, dim: usize, config_hash: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            dim,
            config_hash: config_hash.into(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn entries(&self) -> &[(String, Array2<f64>)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&Array2<f64>> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, m)| m)
    }

    /// First row of an entry, for archives of one vector per key.
    pub fn vector(&self, key: &str) -> Option<Vec<f64>> {
        self.get(key).filter(|m| m.nrows() > 0).map(|m| m.row(0).to_vec())
    }

    pub fn push(&mut self, key: impl Into<String>, values: Array2<f64>) -> Result<()> {
        let key = key.into();
        if key.is_empty() || key.chars().any(char::is_whitespace) {
            return Err(Error::Argument(format!(
                "archive key {key:?} is empty or has whitespace"
            )));
        }
        if values.ncols() != self.dim {
            return Err(Error::Argument(format!(
                "entry {key}: rows of length {} in a {}-dimensional archive",
                values.ncols(),
                self.dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("entry {key} has non-finite values")));
        }
        if self.get(&key).is_some() {
            return Err(Error::Argument(format!("duplicate archive key {key}")));
        }
        self.entries.push((key, values));
        Ok(())
    }

    pub fn push_vector(&mut self, key: impl Into<String>, values: &[f64]) -> Result<()> {
        let row = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("one row");
        self.push(key, row)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "#!kind={}", self.kind);
        let _ = writeln!(s, "#!dim={}", self.dim);
        let _ = writeln!(s, "#!hash={}", self.config_hash);
        for (key, m) in &self.entries {
            let _ = writeln!(s, "{key} [");
            for row in m.rows() {
                let line: Vec<String> = row.iter().map(|&v| format_g9(v)).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
            s.push_str("]\n");
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: origin.to_path_buf(),
            reason: format!("line {line}: {reason}"),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
        let mut header = std::collections::BTreeMap::new();
        while let Some((n, line)) = lines.peek().copied() {
            let Some(rest) = line.strip_prefix("#!") else { break };
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| err(n, format!("malformed header {line:?}")))?;
            header.insert(k.to_string(), v.to_string());
            lines.next();
        }
        let field = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| err(1, format!("missing #!{k} header")))
        };
        let dim: usize = field("dim")?.parse().map_err(|e| err(2, format!("bad dim: {e}")))?;
        let mut archive = Self::new(field("kind")?, dim, field("hash")?);

        while let Some((n, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let key = line
                .strip_suffix(" [")
                .ok_or_else(|| err(n, format!("expected `<key> [`, got {line:?}")))?;
            let mut values = Vec::new();
            let mut rows = 0;
            loop {
                let (m, row) = lines
                    .next()
                    .ok_or_else(|| err(n, format!("entry {key} is not closed")))?;
                if row == "]" {
                    break;
                }
                let parsed = row
                    .split_ascii_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| err(m, format!("bad value {t:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                if parsed.len() != dim {
                    return Err(err(m, format!("row of {} values, header says {dim}", parsed.len())));
                }
                values.extend(parsed);
                rows += 1;
            }
            let matrix = Array2::from_shape_vec((rows, dim), values).expect("rows checked");
            archive.push(key, matrix).map_err(|e| err(n, e.to_string()))?;
        }
        Ok(archive)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn g9_matches_printf() {
        let cases = [
            (0.0, "0"),
            (-0.0, "-0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (1.0 / 3.0, "0.333333333"),
            (-2.0 / 3.0, "-0.666666667"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (1e-5, "1e-05"),
            (0.000012345678912, "1.23456789e-05"),
            (0.0001234, "0.0001234"),
            (9.9999999999, "10"),
            (6.02214076e23, "6.02214076e+23"),
            (-1.5e-300, "-1.5e-300"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g9(x), want, "{x}");
        }
    }

    #[test]
    fn write_read_write_is_identical() {
        let mut a = FeatureArchive::new("spectral", 3, "abc");
        a.push("u1", array![[1.0 / 3.0, -2.5e-9, 7.0], [0.0, 1e12, -4.25]])
            .unwrap();
        a.push_vector("u0", &[std::f64::consts::PI, 2.0, -1.0]).unwrap();
        let text = a.to_text();
        let b = FeatureArchive::parse(&text, Path::new("a.ark")).unwrap();
        assert_eq!(b.to_text(), text);
        assert_eq!(b.keys().collect::<Vec<_>>(), vec!["u1", "u0"]);
        assert_eq!(b.get("u1").unwrap().nrows(), 2);
        assert_eq!(b.kind, "spectral");
        assert_eq!(b.config_hash, "abc");
    }

    #[test]
    fn rejects_bad_entries() {
        let mut a = FeatureArchive::new("x", 2, "h");
        assert!(a.push_vector("u", &[1.0]).is_err());
        assert!(a.push_vector("has space", &[1.0, 2.0]).is_err());
        assert!(a.push_vector("u", &[f64::NAN, 2.0]).is_err());
        a.push_vector("u", &[1.0, 2.0]).unwrap();
        assert!(a.push_vector("u", &[1.0, 2.0]).is_err());

        let p = Path::new("bad.ark");
        assert!(FeatureArchive::parse("#!kind=x\n#!dim=2\n#!hash=h\nu [\n1 2 3\n]\n", p).is_err());
        assert!(FeatureArchive::parse("#!kind=x\n#!dim=2\n#!hash=h\nu [\n1 2\n", p).is_err());
        assert!(FeatureArchive::parse("#!kind=x\n#!hash=h\n", p).is_err());
        assert!(FeatureArchive::parse("#!kind=x\n#!dim=1\n#!hash=h\nu [\n1\n]\nu [\n2\n]\n", p).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_of_arbitrary_values(values in prop::collection::vec(-1e30f64..1e30, 1..40)) {
            let mut a = FeatureArchive::new("k", values.len(), "h");
            a.push_vector("u", &values).unwrap();
            let text = a.to_text();
            let b = FeatureArchive::parse(&text, Path::new("p")).unwrap();
            prop_assert_eq!(b.to_text(), text);
            for (x, y) in values.iter().zip(b.vector("u").unwrap()) {
                prop_assert!((x - y).abs() <= 5e-9 * x.abs().max(1e-300));
            }
        }
    }
}
