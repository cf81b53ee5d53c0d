//! GFB1 binary graph format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GFB1"                      4 bytes
//! M, E_directed, d, C         4 x u64
//! row offsets                 (M + 1) x u64
//! column indices              E_directed x u64
//! features                    M * d x f32, row-major
//! labels                      M x u32
//! ```

use std::path::Path;

use super::Graph;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GFB1";
const HEADER_LEN: u64 = 4 + 4 * 8;

pub fn encode_gfb1(g: &Graph) -> Vec<u8> {
    let m = g.num_nodes();
    let e = g.num_directed_edges();
    let d = g.feature_dim();
    let mut out =
        Vec::with_capacity(HEADER_LEN as usize + (m + 1 + e) * 8 + m * d * 4 + m * 4);
    out.extend_from_slice(MAGIC);
    for v in [m, e, d, g.num_classes()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &o in g.row_offsets() {
        out.extend_from_slice(&(o as u64).to_le_bytes());
    }
    for &c in g.column_indices() {
        out.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for &x in g.features() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &l in g.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }
}

/// Decodes a GFB1 buffer. Edges stored in only one direction are symmetrized
/// and self-loops are dropped.
pub fn decode_gfb1(buf: &[u8]) -> Result<Graph> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected GFB1"));
    }
    let m = cur.u64("node count")?;
    let e = cur.u64("edge count")?;
    let d = cur.u64("feature dimension")?;
    let c = cur.u64("class count")?;

    // Reject impossible sizes before allocating anything.
    let body = (m as u128 + 1 + e as u128) * 8 + (m as u128) * (d as u128) * 4 + m as u128 * 4;
    let available = (buf.len() as u128).saturating_sub(HEADER_LEN as u128);
    if body != available {
        return Err(Error::format(
            HEADER_LEN,
            format!("header declares {body} body bytes but {available} are present"),
        ));
    }
    if c > u32::MAX as u64 + 1 {
        return Err(Error::format(28, "class count exceeds u32 label range"));
    }
    let (m, e, d, c) = (m as usize, e as usize, d as usize, c as usize);

    let mut offsets = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let at = cur.offset();
        let o = cur.u64("row offset")? as usize;
        if i == 0 && o != 0 {
            return Err(Error::format(at, "first row offset must be 0"));
        }
        if let Some(&prev) = offsets.last() {
            if o < prev {
                return Err(Error::format(at, "row offsets decrease"));
            }
        }
        if o > e {
            return Err(Error::format(at, format!("row offset {o} exceeds edge count {e}")));
        }
        offsets.push(o);
    }
    if offsets[m] != e {
        return Err(Error::format(
            cur.offset() - 8,
            format!("last row offset {} does not equal edge count {e}", offsets[m]),
        ));
    }

    let mut edges = Vec::with_capacity(e);
    for row in 0..m {
        for _ in offsets[row]..offsets[row + 1] {
            let at = cur.offset();
            let col = cur.u64("column index")?;
            if col >= m as u64 {
                return Err(Error::format(
                    at,
                    format!("column index {col} out of range for {m} nodes"),
                ));
            }
            edges.push((row, col as usize));
        }
    }

    let mut features = Vec::with_capacity(m * d);
    for _ in 0..m * d {
        let at = cur.offset();
        let x = cur.f32("feature")?;
        if !x.is_finite() {
            return Err(Error::format(at, format!("non-finite feature value {x}")));
        }
        features.push(x);
    }

    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let at = cur.offset();
        let l = cur.u32("label")?;
        if l as usize >= c {
            return Err(Error::format(at, format!("label {l} out of range for {c} classes")));
        }
        labels.push(l);
    }

    Graph::from_edges(m, &edges, features, d, labels, c)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let bytes = std::fs::read(path)?;
    decode_gfb1(&bytes)
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_gfb1(g))?;
    Ok(())
}
