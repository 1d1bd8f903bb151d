//! File formats: edge lists, numeric CSV matrices, label lists, ground-truth
//! pairs, and the binary model checkpoint.
//!
//! Every format has a pure `parse_*` function over text/bytes (the fuzzing
//! entry points) and a `load_*` wrapper that reads from a path.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::Mat;
use std::path::Path;

/// Parses an edge list: one `u v` pair of nonnegative integers per line,
/// `#` comment lines and blank lines ignored. Reversed and repeated pairs
/// collapse to a single undirected edge. The node count is
/// `max index + 1`, or `n_hint` if that is larger.
pub fn parse_edge_list(text: &str, n_hint: Option<usize>) -> Result<Graph> {
    let mut edges = Vec::new();
    let mut max_idx = None::<usize>;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::parse(
                    lineno,
                    format!("expected two whitespace-separated integers, got {line:?}"),
                ))
            }
        };
        let u: usize = a
            .parse()
            .map_err(|_| Error::parse(lineno, format!("invalid node index {a:?}")))?;
        let v: usize = b
            .parse()
            .map_err(|_| Error::parse(lineno, format!("invalid node index {b:?}")))?;
        if u == v {
            return Err(Error::parse(lineno, format!("self-loop at node {u}")));
        }
        max_idx = Some(max_idx.map_or(u.max(v), |m: usize| m.max(u).max(v)));
        edges.push((u, v));
    }
    let n = match (max_idx, n_hint) {
        (Some(m), hint) => (m + 1).max(hint.unwrap_or(0)),
        (None, Some(h)) if h > 0 => h,
        _ => return Err(Error::invalid("edge list is empty and no node count hint given")),
    };
    Graph::new(n, edges)
}

pub fn load_edge_list(path: impl AsRef<Path>, n_hint: Option<usize>) -> Result<Graph> {
    let text = std::fs::read_to_string(path)?;
    parse_edge_list(&text, n_hint)
}

/// Parses an all-numeric CSV matrix, one row per line. When `has_header` is
/// set the first non-blank line is skipped. Every row must have the same
/// number of fields and every field must be a finite number.
pub fn parse_numeric_csv(text: &str, has_header: bool) -> Result<Mat> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None::<usize>;
    let mut skipped_header = !has_header;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !skipped_header {
            skipped_header = true;
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let field = field.trim();
            let x: f64 = field
                .parse()
                .map_err(|_| Error::parse(lineno, format!("invalid number {field:?}")))?;
            if !x.is_finite() {
                return Err(Error::parse(lineno, format!("non-finite value {field:?}")));
            }
            row.push(x);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::parse(
                    lineno,
                    format!("row has {} fields, expected {w}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::invalid("CSV contains no data rows"))?;
    let mut m = Mat::zeros((rows.len(), width));
    for (i, row) in rows.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            m[[i, j]] = x;
        }
    }
    Ok(m)
}

pub fn load_numeric_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Mat> {
    let text = std::fs::read_to_string(path)?;
    parse_numeric_csv(&text, has_header)
}

/// Parses one label per line, aligned with embedding rows. Leading and
/// trailing whitespace is stripped; blank lines are only allowed at the end.
pub fn parse_labels(text: &str) -> Result<Vec<String>> {
    let mut labels: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .collect();
    while labels.last().is_some_and(|(_, l)| l.is_empty()) {
        labels.pop();
    }
    if let Some((lineno, _)) = labels.iter().find(|(_, l)| l.is_empty()) {
        return Err(Error::parse(*lineno, "empty label".to_string()));
    }
    if labels.is_empty() {
        return Err(Error::invalid("label file is empty"));
    }
    Ok(labels.into_iter().map(|(_, l)| l).collect())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    parse_labels(&text)
}

/// Parses ground-truth alignment pairs: one `src_id tgt_id` per line, `#`
/// comments ignored. Duplicate source ids are rejected.
pub fn parse_ground_truth(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(Error::parse(lineno, format!("expected two ids, got {line:?}"))),
        };
        let s: usize = a
            .parse()
            .map_err(|_| Error::parse(lineno, format!("invalid id {a:?}")))?;
        let t: usize = b
            .parse()
            .map_err(|_| Error::parse(lineno, format!("invalid id {b:?}")))?;
        if !seen.insert(s) {
            return Err(Error::parse(lineno, format!("duplicate source id {s}")));
        }
        pairs.push((s, t));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("ground-truth file contains no pairs"));
    }
    Ok(pairs)
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    parse_ground_truth(&text)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"GADL";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes named matrices as a flat binary blob with a versioned header.
///
/// Layout: magic `GADL`, version u32, entry count u32, then per entry
/// name length u32 + UTF-8 name + rows u32 + cols u32 + row-major f64 data,
/// all little-endian.
pub fn encode_checkpoint(entries: &[(String, Mat)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, mat) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(mat.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(mat.ncols() as u32).to_le_bytes());
        for &x in mat.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Decodes a checkpoint produced by [`encode_checkpoint`]. Rejects bad
/// magic, unknown versions, truncated input, and oversized declarations
/// before allocating.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Mat)>> {
    struct Reader<'a> {
        bytes: &'a [u8],
        pos: usize,
    }
    impl<'a> Reader<'a> {
        fn take(&mut self, len: usize) -> Result<&'a [u8]> {
            let end = self
                .pos
                .checked_add(len)
                .filter(|&e| e <= self.bytes.len())
                .ok_or_else(|| Error::invalid("checkpoint truncated"))?;
            let s = &self.bytes[self.pos..end];
            self.pos = end;
            Ok(s)
        }
        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
    }

    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::invalid("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        if name_len > 4096 {
            return Err(Error::invalid(format!("entry name of {name_len} bytes")));
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::invalid("entry name is not UTF-8"))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let elems = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::invalid("matrix dimensions overflow"))?;
        let byte_len = elems
            .checked_mul(8)
            .ok_or_else(|| Error::invalid("matrix dimensions overflow"))?;
        let data = r.take(byte_len)?;
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mat = Mat::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::invalid(format!("bad matrix shape: {e}")))?;
        entries.push((name, mat));
    }
    if r.pos != bytes.len() {
        return Err(Error::invalid("trailing bytes after checkpoint entries"));
    }
    Ok(entries)
}

pub fn write_checkpoint(path: impl AsRef<Path>, entries: &[(String, Mat)]) -> Result<()> {
    std::fs::write(path, encode_checkpoint(entries))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Mat)>> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_list_basic() {
        let g = parse_edge_list("0 1\n1 2\n", None).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn edge_list_reversed_duplicate() {
        let g = parse_edge_list("0 1\n1 0\n", None).unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn edge_list_self_loop_line_number() {
        let err = parse_edge_list("3 3\n", None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn edge_list_malformed_line_number() {
        let err = parse_edge_list("0 1\n# fine\nnope\n", None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn edge_list_comments_hint_and_negatives() {
        let g = parse_edge_list("# header\n0 1\n", Some(10)).unwrap();
        assert_eq!(g.n(), 10);
        assert!(parse_edge_list("-1 2\n", None).is_err());
        assert!(parse_edge_list("", None).is_err());
        assert_eq!(parse_edge_list("", Some(4)).unwrap().n(), 4);
    }

    #[test]
    fn csv_parse_and_header() {
        let m = parse_numeric_csv("1.0, 2.0\n3,4\n", false).unwrap();
        assert_eq!(m.dim(), (2, 2));
        assert_eq!(m[[1, 1]], 4.0);
        let m = parse_numeric_csv("a,b\n1,2\n", true).unwrap();
        assert_eq!(m.dim(), (1, 2));
        assert!(parse_numeric_csv("a,b\n1,2\n", false).is_err());
        assert!(parse_numeric_csv("1,2\n3\n", false).is_err());
        assert!(parse_numeric_csv("inf,2\n", false).is_err());
        assert!(parse_numeric_csv("", false).is_err());
    }

    #[test]
    fn labels_parse() {
        assert_eq!(parse_labels("cat\ndog\n").unwrap(), vec!["cat", "dog"]);
        assert!(parse_labels("cat\n\ndog\n").is_err());
        assert!(parse_labels("\n\n").is_err());
    }

    #[test]
    fn ground_truth_parse() {
        let p = parse_ground_truth("# gt\n0 5\n1 3\n").unwrap();
        assert_eq!(p, vec![(0, 5), (1, 3)]);
        assert!(parse_ground_truth("0 1\n0 2\n").is_err());
        assert!(parse_ground_truth("0\n").is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = ndarray::arr2(&[[1.0, -2.5], [0.0, 3.25]]);
        let b = Mat::zeros((1, 3));
        let entries = vec![("enc.w0".to_string(), a), ("c12".to_string(), b)];
        let bytes = encode_checkpoint(&entries);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "enc.w0");
        assert_eq!(back[0].1, entries[0].1);
        assert_eq!(back[1].1.dim(), (1, 3));
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(decode_checkpoint(b"").is_err());
        assert!(decode_checkpoint(b"NOPE").is_err());
        assert!(decode_checkpoint(b"GADL\x02\x00\x00\x00\x00\x00\x00\x00").is_err());
        // Declares a huge matrix with no data behind it.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"GADL");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'x');
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_checkpoint(&bytes).is_err());
    }
}
