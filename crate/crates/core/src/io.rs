//! Snapshot files, the sectioned `key = value` config grammar, plain CSV
//! input and gnuplot-style `.dat` output.
//!
//! Snapshot layout, all little-endian:
//!
//! ```text
//! 0   "CPE1"
//! 4   u64 version, u64 nx, u64 ny, u64 nz
//! 36  f64 t, f64 gamma, f64 epsilon, f64 p0
//! 68  eta (nx*ny f64), v1 (nx*ny*nz f64), v2 (nx*ny*nz f64)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::domain::{Grid, ScalarField2D, ScalarField3D, VectorField3D};
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"CPE1";
pub const SNAPSHOT_VERSION: u64 = 1;
pub const HEADER_LEN: usize = 68;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotHeader {
    pub version: u64,
    pub nx: u64,
    pub ny: u64,
    pub nz: u64,
    pub t: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub p0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub eta: ScalarField2D,
    pub v: VectorField3D,
}

impl Snapshot {
    pub fn new(t: f64, gamma: f64, epsilon: f64, p0: f64, eta: ScalarField2D, v: VectorField3D) -> Result<Self> {
        let g = *eta.grid();
        if !g.same_shape(v.grid()) {
            return Err(Error::GridMismatch("eta and v live on different grids".into()));
        }
        Ok(Snapshot {
            header: SnapshotHeader {
                version: SNAPSHOT_VERSION,
                nx: g.nx as u64,
                ny: g.ny as u64,
                nz: g.nz as u64,
                t,
                gamma,
                epsilon,
                p0,
            },
            eta,
            v,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let n = self.eta.values().len() + 2 * self.v.x.values().len();
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * n);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        for x in [h.version, h.nx, h.ny, h.nz] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for x in [h.t, h.gamma, h.epsilon, h.p0] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for f in [self.eta.values(), self.v.x.values(), self.v.y.values()] {
            for x in f {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, msg: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            msg,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(bytes.len(), format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
        }
        if &bytes[0..4] != SNAPSHOT_MAGIC {
            return Err(fail(0, format!("bad magic {:?}", &bytes[0..4])));
        }
        let u = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u(4);
        if version != SNAPSHOT_VERSION {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let (nx, ny, nz) = (u(12), u(20), u(28));
        let grid = usize::try_from(nx)
            .ok()
            .zip(usize::try_from(ny).ok())
            .zip(usize::try_from(nz).ok())
            .and_then(|((a, b), c)| Grid::new(a, b, c).ok())
            .ok_or_else(|| fail(12, format!("invalid dimensions {nx} x {ny} x {nz}")))?;
        let header = SnapshotHeader {
            version,
            nx,
            ny,
            nz,
            t: f(36),
            gamma: f(44),
            epsilon: f(52),
            p0: f(60),
        };
        let (n2, n3) = (grid.plane_len(), grid.volume_len());
        let expected = 8 * (n2 + 2 * n3);
        let actual = bytes.len() - HEADER_LEN;
        if actual != expected {
            return Err(fail(
                HEADER_LEN,
                format!("payload should hold {expected} bytes for {nx} x {ny} x {nz}, found {actual}"),
            ));
        }
        let read = |start: usize, n: usize| -> Vec<f64> { (0..n).map(|i| f(start + 8 * i)).collect() };
        let eta = ScalarField2D::from_vec(grid, read(HEADER_LEN, n2))?;
        let v1 = ScalarField3D::from_vec(grid, read(HEADER_LEN + 8 * n2, n3))?;
        let v2 = ScalarField3D::from_vec(grid, read(HEADER_LEN + 8 * (n2 + n3), n3))?;
        Ok(Snapshot {
            header,
            eta,
            v: VectorField3D { x: v1, y: v2 },
        })
    }
}

pub fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<()> {
    fs::write(path, snap.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Snapshot::decode(&bytes, path)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

/// Parsed config document; entries before any header land in section `""`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigDoc {
    pub sections: Vec<Section>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = ConfigDoc {
            sections: vec![Section::default()],
        };
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = match raw.find(['#', ';']) {
                Some(c) => &raw[..c],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {ln}: unterminated section header")))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Config(format!("line {ln}: empty section name")));
                }
                if doc.sections.iter().any(|s| s.name == name) {
                    return Err(Error::Config(format!("line {ln}: section [{name}] repeated")));
                }
                doc.sections.push(Section {
                    name: name.to_string(),
                    line: ln,
                    entries: Vec::new(),
                });
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {ln}: expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {ln}: missing key")));
            }
            let sec = doc.sections.last_mut().expect("root section");
            if sec.entries.iter().any(|e| e.key == k) {
                return Err(Error::Config(format!("line {ln}: key `{k}` repeated")));
            }
            sec.entries.push(Entry {
                key: k.to_string(),
                value: v.to_string(),
                line: ln,
            });
        }
        Ok(doc)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

impl Entry {
    pub fn parse<T: std::str::FromStr>(&self) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.value
            .parse()
            .map_err(|e| Error::Config(format!("line {}: bad value `{}` for `{}`: {e}", self.line, self.value, self.key)))
    }
}

/// `(k, a_k)` pairs from a two-column CSV. A non-numeric first line is
/// taken as a header; `#` starts a comment.
pub fn parse_pairs_csv(text: &str, path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let here = offset;
        offset += raw.len();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: Option<Vec<f64>> = cols.iter().map(|c| c.parse().ok()).collect();
        match nums {
            Some(v) if v.len() == 2 => out.push((v[0], v[1])),
            None if i == 0 && out.is_empty() => continue,
            _ => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: here as u64,
                    msg: format!("line {}: expected two numeric columns, got `{line}`", i + 1),
                })
            }
        }
    }
    Ok(out)
}

/// Whitespace-separated columns with a `#` header line.
pub fn dat_table(columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {}", columns.join(" "));
    for r in rows {
        let cells: Vec<String> = r.iter().map(|x| format!("{x:e}")).collect();
        let _ = writeln!(s, "{}", cells.join(" "));
    }
    s
}

/// `x y value` triples with a blank line after each `x`, as gnuplot's
/// `splot` expects for gridded data.
pub fn dat_field(f: &ScalarField2D) -> String {
    let g = f.grid();
    let mut s = String::from("# x y value\n");
    for i in 0..g.nx {
        for j in 0..g.ny {
            let _ = writeln!(s, "{:e} {:e} {:e}", g.x(i), g.y(j), f.at(i, j));
        }
        s.push('\n');
    }
    s
}
