//! FCIDUMP reader and writer.
//!
//! Header: a namelist opened by `&FCI` (optional here) and closed by `&END`
//! or `/`. Body: records `value i j k l` with 1-based chemists' indices.
//! `i=j=k=l=0` is the core energy, `k=l=0` a one-electron integral, and
//! `j=k=l=0` (orbital energies) is skipped. `ORBSYM`/`ISYM` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::{Eri, IntegralSet, SystemSpec};
use crate::error::{Error, Result};

/// Redundant records may differ by at most this much.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

struct Header {
    norb: usize,
    nelec: usize,
    ms2: i64,
    body_start: usize,
}

fn header_error(token: &str, reason: impl Into<String>) -> Error {
    Error::Header {
        token: token.to_string(),
        reason: reason.into(),
    }
}

fn parse_header(lines: &[&str]) -> Result<Header> {
    let mut text = String::new();
    let mut body_start = None;
    for (i, line) in lines.iter().enumerate() {
        let trimmed = line.trim();
        let upper = trimmed.to_ascii_uppercase();
        if let Some(pos) = upper.find("&END") {
            text.push_str(&trimmed[..pos]);
            body_start = Some(i + 1);
            break;
        }
        if upper == "/" || upper.ends_with('/') {
            text.push_str(trimmed.trim_end_matches('/'));
            body_start = Some(i + 1);
            break;
        }
        text.push_str(trimmed);
        text.push(',');
    }
    let body_start = match body_start {
        Some(b) => b,
        // single-line header without terminator, e.g. "NORB=2,NELEC=2,MS2=0"
        None if !lines.is_empty() && lines[0].contains('=') => {
            text = lines[0].trim().to_string();
            1
        }
        None => return Err(header_error("<eof>", "header terminator `&END` or `/` not found")),
    };

    let mut fields: Vec<(String, Vec<String>)> = Vec::new();
    let cleaned = text.replace("&FCI", " ").replace("&fci", " ");
    for raw in cleaned.split(|c: char| c == ',' || c.is_whitespace()) {
        if raw.is_empty() {
            continue;
        }
        if let Some((key, value)) = raw.split_once('=') {
            if key.is_empty() {
                return Err(header_error(raw, "missing key before `=`"));
            }
            let mut vals = Vec::new();
            if !value.is_empty() {
                vals.push(value.to_string());
            }
            fields.push((key.to_ascii_uppercase(), vals));
        } else {
            match fields.last_mut() {
                Some((_, vals)) => vals.push(raw.to_string()),
                None => return Err(header_error(raw, "value without a key")),
            }
        }
    }

    let scalar = |name: &str| -> Result<Option<i64>> {
        match fields.iter().find(|(k, _)| k == name) {
            None => Ok(None),
            Some((_, vals)) if vals.len() == 1 => vals[0]
                .parse::<i64>()
                .map(Some)
                .map_err(|_| header_error(&vals[0], format!("{name} must be an integer"))),
            Some((_, vals)) => Err(header_error(
                &format!("{name}={}", vals.join(",")),
                format!("{name} takes exactly one value"),
            )),
        }
    };

    let norb = scalar("NORB")?.ok_or_else(|| header_error("NORB", "required key missing"))?;
    let nelec = scalar("NELEC")?.ok_or_else(|| header_error("NELEC", "required key missing"))?;
    let ms2 = scalar("MS2")?.unwrap_or(0);
    if let Some(iuhf) = scalar("IUHF")? {
        if iuhf != 0 {
            return Err(header_error("IUHF", "spin-unrestricted integral files are not supported"));
        }
    }
    if norb < 1 {
        return Err(header_error(&format!("NORB={norb}"), "must be positive"));
    }
    if nelec < 0 {
        return Err(header_error(&format!("NELEC={nelec}"), "must be non-negative"));
    }
    Ok(Header {
        norb: norb as usize,
        nelec: nelec as usize,
        ms2,
        body_start,
    })
}

fn store(slot: &mut f64, seen: &mut bool, value: f64, what: impl FnOnce() -> String) -> Result<()> {
    if *seen {
        if (*slot - value).abs() > DUPLICATE_TOLERANCE {
            return Err(Error::DataConsistency(format!(
                "conflicting duplicate entries for {}: {} vs {}",
                what(),
                slot,
                value
            )));
        }
    } else {
        *slot = value;
        *seen = true;
    }
    Ok(())
}

/// Parses FCIDUMP text into the system description and integrals.
pub fn parse_fcidump(text: &str) -> Result<(SystemSpec, IntegralSet)> {
    let lines: Vec<&str> = text.lines().collect();
    let header = parse_header(&lines)?;
    let n = header.norb;

    let mut h = DMatrix::zeros(n, n);
    let mut h_seen = vec![false; n * n];
    let mut v = Eri::zeros(n);
    let mut v_seen = vec![false; v.data.len()];
    let mut core = 0.0;
    let mut core_seen = false;

    for (offset, line) in lines[header.body_start..].iter().enumerate() {
        let lineno = header.body_start + offset + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("expected `value i j k l`, found {} fields", tokens.len()),
            });
        }
        let value: f64 = tokens[0].replace(['D', 'd'], "e").parse().map_err(|_| Error::Parse {
            line: lineno,
            reason: format!("bad floating-point value `{}`", tokens[0]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                reason: "non-finite value".into(),
            });
        }
        let mut idx = [0usize; 4];
        for (slot, tok) in idx.iter_mut().zip(&tokens[1..]) {
            let i: i64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno,
                reason: format!("bad index `{tok}`"),
            })?;
            if i < 0 || i as usize > n {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!("index {i} outside [0, {n}]"),
                });
            }
            *slot = i as usize;
        }
        match idx {
            [0, 0, 0, 0] => store(&mut core, &mut core_seen, value, || "core energy".into())?,
            [i, 0, 0, 0] if i > 0 => {} // orbital energy record
            [i, j, 0, 0] if i > 0 && j > 0 => {
                let (p, q) = (i.max(j) - 1, i.min(j) - 1);
                store(&mut h[(p, q)], &mut h_seen[p * n + q], value, || format!("h({i},{j})"))?;
                h[(q, p)] = h[(p, q)];
            }
            [i, j, k, l] if i > 0 && j > 0 && k > 0 && l > 0 => {
                let c = Eri::canonical_index(i - 1, j - 1, k - 1, l - 1);
                store(&mut v.data[c], &mut v_seen[c], value, || format!("({i}{j}|{k}{l})"))?;
            }
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!("index pattern {idx:?} is not a valid record"),
                })
            }
        }
    }

    let spec = SystemSpec::from_nelec(n, header.nelec, header.ms2, core)?;
    let ints = IntegralSet::new(h, v, core)?;
    Ok((spec, ints))
}

pub fn read_fcidump(path: impl AsRef<Path>) -> Result<(SystemSpec, IntegralSet)> {
    let text = std::fs::read_to_string(path)?;
    parse_fcidump(&text)
}

/// Serializes integrals back to FCIDUMP text. Values use the shortest
/// round-tripping representation, so reparsing is bit-exact.
pub fn write_fcidump(spec: &SystemSpec, ints: &IntegralSet) -> String {
    let n = ints.n_orbitals();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "&FCI NORB={},NELEC={},MS2={},",
        n,
        spec.n_electrons(),
        spec.ms2
    );
    let orbsym = vec!["1"; n].join(",");
    let _ = writeln!(out, " ORBSYM={orbsym},");
    let _ = writeln!(out, " ISYM=1,");
    let _ = writeln!(out, "&END");
    for ([p, q, r, s], val) in ints.v.unique_entries() {
        if val != 0.0 {
            let _ = writeln!(out, "{:e} {} {} {} {}", val, p + 1, q + 1, r + 1, s + 1);
        }
    }
    for p in 0..n {
        for q in 0..=p {
            let val = ints.h[(p, q)];
            if val != 0.0 {
                let _ = writeln!(out, "{:e} {} {} 0 0", val, p + 1, q + 1);
            }
        }
    }
    let _ = writeln!(out, "{:e} 0 0 0 0", ints.core_energy);
    out
}
