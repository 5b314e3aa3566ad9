//! Deterministic JSON, CSV and binary writers.
//!
//! JSON floats carry 17 significant digits, CSV floats 9. Binary output is
//! little-endian: magic `CBDI`, `u16` version, a length-prefixed provenance
//! JSON block, then one frame per path.

use std::io::{self, Write};

use serde::Serialize;

use crate::simulator::{PathRecord, Status};

pub const BIN_MAGIC: &[u8; 4] = b"CBDI";
pub const BIN_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Canonical TOML of the resolved configuration.
    pub config: String,
}

struct Fixed17;

impl serde_json::ser::Formatter for Fixed17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{}", fmt_sig(v, 17))
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        write!(w, "{}", fmt_sig(v as f64, 17))
    }
}

/// `v` with `digits` significant digits in scientific notation.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0.0".into()
        } else {
            "0.0".into()
        };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    format!("{:.*e}", digits - 1, v)
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17);
    v.serialize(&mut ser).expect("serialisable value");
    let mut s = String::from_utf8(buf).expect("utf-8 JSON");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    provenance: &'a Provenance,
    result: &'a T,
}

pub fn json_document<T: Serialize>(prov: &Provenance, result: &T) -> String {
    to_json(&Wrapped {
        provenance: prov,
        result,
    })
}

/// `#! key=value` header lines; the config is a JSON string literal.
pub fn csv_header(prov: &Provenance) -> String {
    let mut s = String::new();
    s.push_str(&format!("#! tool={}\n", prov.tool));
    s.push_str(&format!("#! version={}\n", prov.version));
    s.push_str(&format!("#! subcommand={}\n", prov.subcommand));
    s.push_str(&format!("#! seed={}\n", prov.seed));
    s.push_str(&format!("#! config_sha256={}\n", prov.config_sha256));
    s.push_str(&format!(
        "#! config={}\n",
        serde_json::to_string(&prov.config).expect("string")
    ));
    s
}

pub fn csv_f(v: f64) -> String {
    fmt_sig(v, 9)
}

pub fn status_name(s: &Status) -> &'static str {
    match s {
        Status::Alive => "alive",
        Status::Extinct { .. } => "extinct",
        Status::Exploded { .. } => "exploded",
    }
}

/// `path_id,t,x,status` rows; the status column is the path's status at
/// that time.
pub fn paths_csv(prov: &Provenance, paths: &[PathRecord]) -> String {
    let mut s = csv_header(prov);
    s.push_str("path_id,t,x,status\n");
    for (id, p) in paths.iter().enumerate() {
        let end = match p.status {
            Status::Extinct { t } | Status::Exploded { t } => Some(t),
            Status::Alive => None,
        };
        for (t, x) in p.times.iter().zip(&p.values) {
            let st = match end {
                Some(te) if *t >= te => status_name(&p.status),
                _ => "alive",
            };
            s.push_str(&format!("{id},{},{},{st}\n", csv_f(*t), csv_f(*x)));
        }
    }
    s
}

pub fn paths_bin(prov: &Provenance, paths: &[PathRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&BIN_VERSION.to_le_bytes());
    let pj = to_json(prov);
    out.extend_from_slice(&(pj.len() as u32).to_le_bytes());
    out.extend_from_slice(pj.as_bytes());
    out.extend_from_slice(&(paths.len() as u32).to_le_bytes());
    for (id, p) in paths.iter().enumerate() {
        let (code, te) = match p.status {
            Status::Alive => (0u8, f64::NAN),
            Status::Extinct { t } => (1, t),
            Status::Exploded { t } => (2, t),
        };
        out.extend_from_slice(&(id as u32).to_le_bytes());
        out.push(code);
        out.extend_from_slice(&te.to_le_bytes());
        out.extend_from_slice(&(p.times.len() as u32).to_le_bytes());
        for t in &p.times {
            out.extend_from_slice(&t.to_le_bytes());
        }
        for x in &p.values {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Decoded binary frame: `(path_id, status code, status time, times, values)`.
pub type Frame = (u32, u8, f64, Vec<f64>, Vec<f64>);

pub fn read_paths_bin(bytes: &[u8]) -> Option<(String, Vec<Frame>)> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Option<&[u8]> {
        let s = bytes.get(pos..pos + n)?;
        pos += n;
        Some(s)
    };
    if take(4)? != BIN_MAGIC {
        return None;
    }
    let version = u16::from_le_bytes(take(2)?.try_into().ok()?);
    if version != BIN_VERSION {
        return None;
    }
    let plen = u32::from_le_bytes(take(4)?.try_into().ok()?) as usize;
    let prov = String::from_utf8(take(plen)?.to_vec()).ok()?;
    let n = u32::from_le_bytes(take(4)?.try_into().ok()?);
    let mut frames = Vec::new();
    for _ in 0..n {
        let id = u32::from_le_bytes(take(4)?.try_into().ok()?);
        let code = take(1)?[0];
        let te = f64::from_le_bytes(take(8)?.try_into().ok()?);
        let len = u32::from_le_bytes(take(4)?.try_into().ok()?) as usize;
        let mut f = |len: usize| -> Option<Vec<f64>> {
            (0..len)
                .map(|_| Some(f64::from_le_bytes(take(8)?.try_into().ok()?)))
                .collect()
        };
        let times = f(len)?;
        let values = f(len)?;
        frames.push((id, code, te, times, values));
    }
    Some((prov, frames))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            tool: "cbdi",
            version: "0.1.0",
            subcommand: "simulate".into(),
            seed: 3,
            config_sha256: "ab".into(),
            config: "[sim]\ndt = 0.1\n".into(),
        }
    }

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(10.0 / 11.0, 9), "9.09090909e-1");
        let j = to_json(&vec![0.1f64, f64::INFINITY]);
        assert_eq!(j, "[1.0000000000000001e-1,null]\n");
        let back: Vec<Option<f64>> = serde_json::from_str(&j).unwrap();
        assert_eq!(back[0], Some(0.1));
    }

    #[test]
    fn binary_round_trip() {
        let p = PathRecord {
            times: vec![0.0, 0.5, 1.0],
            values: vec![2.0, 1.0, 0.0],
            status: Status::Extinct { t: 0.9 },
            jumps: vec![],
            jumps_truncated: false,
        };
        let bytes = paths_bin(&prov(), std::slice::from_ref(&p));
        let (pj, frames) = read_paths_bin(&bytes).unwrap();
        assert!(pj.contains("\"seed\":3"));
        assert_eq!(frames[0].1, 1);
        assert_eq!(frames[0].3, p.times);
        assert_eq!(frames[0].4, p.values);
    }

    #[test]
    fn csv_header_carries_config() {
        let h = csv_header(&prov());
        let line = h.lines().find(|l| l.starts_with("#! config=")).unwrap();
        let cfg: String = serde_json::from_str(&line["#! config=".len()..]).unwrap();
        assert_eq!(cfg, prov().config);
    }
}
