//! Extended-XYZ datasets.
//!
//! Each frame is an atom-count line, a comment line of `key=value` pairs and
//! one line per atom: symbol, x y z in Å and optionally fx fy fz in eV/Å.
//! The total energy in eV is read from the `energy` key.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::conformation::{Conformation, ConformationId, Vec3};
use crate::elements;
use crate::error::{Error, Result};

/// What a frame must carry to be accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Labels {
    /// Energy and forces on every frame.
    Required,
    /// Labels are read when present.
    Optional,
}

/// First eight bytes of the SHA-256 digest, big-endian.
pub fn content_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn parse_dataset(path: impl AsRef<Path>, labels: Labels) -> Result<Vec<Conformation>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    parse_str(text, &path.display().to_string(), content_hash(&bytes), labels)
}

/// Parses XYZ text. `name` only appears in error messages; `source` becomes
/// the id source of every frame.
pub fn parse_str(text: &str, name: &str, source: u64, labels: Labels) -> Result<Vec<Conformation>> {
    let err = |line: usize, msg: String| Error::Parse { path: name.to_string(), line, msg };
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let frame = out.len();
        let header = i + 1;
        let n: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| err(header, format!("frame {frame}: expected an atom count, found '{}'", lines[i].trim())))?;
        if n == 0 {
            return Err(err(header, format!("frame {frame}: atom count is zero")));
        }
        let comment = lines
            .get(i + 1)
            .ok_or_else(|| err(header + 1, format!("frame {frame}: missing comment line")))?;
        let energy = parse_energy(comment).map_err(|m| err(header + 1, format!("frame {frame}: {m}")))?;

        let mut numbers = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        let mut forces: Vec<Vec3> = Vec::with_capacity(n);
        let mut with_forces = None;
        for a in 0..n {
            let ln = i + 2 + a;
            let line = lines.get(ln).filter(|l| !l.trim().is_empty()).ok_or_else(|| {
                err(ln + 1, format!("frame {frame}: atom count {n} but only {a} atom lines"))
            })?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let has_f = match fields.len() {
                4 => false,
                7 => true,
                k => {
                    return Err(err(ln + 1, format!("frame {frame}: expected 4 or 7 columns, found {k} (atom count {n} may be wrong)")))
                }
            };
            if *with_forces.get_or_insert(has_f) != has_f {
                return Err(err(ln + 1, format!("frame {frame}: forces given for some atoms only")));
            }
            let z = elements::atomic_number(fields[0]).map_err(|_| err(ln + 1, format!("frame {frame}: unknown element symbol '{}'", fields[0])))?;
            let num = |k: usize| -> Result<f64> {
                let x: f64 = fields[k]
                    .parse()
                    .map_err(|_| err(ln + 1, format!("frame {frame}: invalid number '{}'", fields[k])))?;
                if !x.is_finite() {
                    return Err(err(ln + 1, format!("frame {frame}: non-finite value '{}'", fields[k])));
                }
                Ok(x)
            };
            numbers.push(z);
            positions.push([num(1)?, num(2)?, num(3)?]);
            if has_f {
                forces.push([num(4)?, num(5)?, num(6)?]);
            }
        }
        let next = i + 2 + n;
        if let Some(extra) = lines.get(next) {
            let t = extra.trim();
            if !t.is_empty() && t.parse::<usize>().is_err() {
                return Err(err(next + 1, format!("frame {frame}: more atom lines than the atom count {n}")));
            }
        }
        let has_forces = with_forces == Some(true);
        if labels == Labels::Required {
            if energy.is_none() {
                return Err(err(header + 1, format!("frame {frame}: missing energy")));
            }
            if !has_forces {
                return Err(err(header + 2, format!("frame {frame}: missing forces")));
            }
        }
        let mut conf = Conformation::new(numbers, positions);
        conf.id = ConformationId { source, frame: frame as u64 };
        conf.energy = energy;
        conf.forces = has_forces.then_some(forces);
        out.push(conf);
        i = next;
    }
    Ok(out)
}

/// Splits a comment line into `key=value` pairs; values may be double-quoted.
fn key_values(comment: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut chars = comment.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            return Ok(out);
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        if chars.peek() != Some(&'=') {
            // bare word; not a key=value pair
            out.push((key, String::new()));
            continue;
        }
        chars.next();
        let mut value = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(c) => value.push(c),
                    None => return Err(format!("unterminated quote in value of '{key}'")),
                }
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                value.push(c);
                chars.next();
            }
        }
        out.push((key, value));
    }
}

fn parse_energy(comment: &str) -> std::result::Result<Option<f64>, String> {
    for (k, v) in key_values(comment)? {
        if k.eq_ignore_ascii_case("energy") {
            let e: f64 = v.parse().map_err(|_| format!("invalid energy '{v}'"))?;
            if !e.is_finite() {
                return Err(format!("non-finite energy '{v}'"));
            }
            return Ok(Some(e));
        }
    }
    Ok(None)
}

/// Scientific notation with 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serializes frames so that parsing restores every value bit for bit.
pub fn to_xyz_string(confs: &[Conformation]) -> Result<String> {
    let mut s = String::new();
    for c in confs {
        c.validate()?;
        writeln!(s, "{}", c.n_atoms()).unwrap();
        let mut comment = Vec::new();
        if let Some(e) = c.energy {
            comment.push(format!("energy={}", num(e)));
        }
        let props = if c.forces.is_some() { "species:S:1:pos:R:3:forces:R:3" } else { "species:S:1:pos:R:3" };
        comment.push(format!("Properties={props}"));
        writeln!(s, "{}", comment.join(" ")).unwrap();
        for (a, (&z, p)) in c.numbers.iter().zip(&c.positions).enumerate() {
            write!(s, "{:<2} {} {} {}", elements::symbol(z)?, num(p[0]), num(p[1]), num(p[2])).unwrap();
            if let Some(f) = &c.forces {
                write!(s, " {} {} {}", num(f[a][0]), num(f[a][1]), num(f[a][2])).unwrap();
            }
            s.push('\n');
        }
    }
    Ok(s)
}

pub fn write_dataset(path: impl AsRef<Path>, confs: &[Conformation]) -> Result<()> {
    let path = path.as_ref();
    super::write_atomic(path, to_xyz_string(confs)?.as_bytes())
}

/// Drops frames with any force component strictly above `threshold` in
/// magnitude and returns the kept frames with the number removed.
pub fn max_force_filter(confs: Vec<Conformation>, threshold: f64) -> Result<(Vec<Conformation>, usize)> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("force threshold must be positive, got {threshold}")));
    }
    let before = confs.len();
    let kept: Vec<Conformation> = confs
        .into_iter()
        .filter(|c| c.max_abs_force().is_none_or(|m| m <= threshold))
        .collect();
    let removed = before - kept.len();
    Ok((kept, removed))
}
