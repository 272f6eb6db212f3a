//! The on-disk dataset layout.
//!
//! A dataset directory holds `manifest.json`, `edges.tsv` (`src<TAB>dst`,
//! 0-indexed, one pair per line after a header), optionally `labels.tsv`
//! (`node<TAB>label`) and the features in one of two encodings:
//!
//! * `features.bin`: `n: u32`, `d: u32`, then `n·d` row-major `f32`;
//! * `features.csr`: `n: u32`, `d: u32`, `nnz: u64`, then `indptr`
//!   (`n+1` × `u64`), `indices` (`nnz` × `u32`) and `values` (`nnz` × `f32`).
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DftError, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureEncoding {
    #[default]
    DenseF32,
    CsrF32,
}

impl FeatureEncoding {
    fn file_name(self) -> &'static str {
        match self {
            FeatureEncoding::DenseF32 => "features.bin",
            FeatureEncoding::CsrF32 => "features.csr",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub edges: String,
    pub features: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    /// Nodes.
    pub n: usize,
    /// Lines of the edge file.
    pub m: usize,
    /// Feature width.
    pub d: usize,
    /// Classes.
    pub c: usize,
    pub files: DatasetFiles,
    pub feature_encoding: FeatureEncoding,
}

fn integrity(path: &Path, what: &str, expected: usize, actual: usize) -> DftError {
    DftError::Integrity {
        path: path.to_path_buf(),
        what: what.into(),
        expected: expected as u64,
        actual: actual as u64,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DftError {
    DftError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| DftError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| DftError::Json { path, source })
}

/// Parses a two-column TSV with the given header, returning rows with their
/// 1-based line numbers.
fn read_pairs(path: &Path, header: &str) -> Result<Vec<(usize, usize, usize)>> {
    let file = fs::File::open(path).map_err(|e| DftError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DftError::io(path, e))?;
        let lineno = i + 1;
        if i == 0 {
            if line != header {
                return Err(parse_err(path, lineno, format!("expected header {header:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let mut field = || -> Result<usize> {
            let s = parts
                .next()
                .ok_or_else(|| parse_err(path, lineno, "expected two tab-separated fields"))?;
            s.trim()
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("not a nonnegative integer: {s:?}")))
        };
        let (a, b) = (field()?, field()?);
        if parts.next().is_some() {
            return Err(parse_err(path, lineno, "more than two fields"));
        }
        rows.push((lineno, a, b));
    }
    if rows.is_empty() && fs::metadata(path).map(|m| m.len() == 0).unwrap_or(false) {
        return Err(parse_err(path, 1, format!("expected header {header:?}")));
    }
    Ok(rows)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            integrity(self.path, "byte length", end, self.bytes.len())
        })?;
        self.pos = end;
        Ok(chunk.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(integrity(self.path, "byte length", self.pos, self.bytes.len()));
        }
        Ok(())
    }
}

fn read_features(path: &Path, encoding: FeatureEncoding, n: usize, d: usize) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| DftError::io(path, e))?;
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    if rows != n {
        return Err(integrity(path, "feature rows", n, rows));
    }
    if cols != d {
        return Err(integrity(path, "feature columns", d, cols));
    }
    let mut x = Tensor::zeros(n, d);
    match encoding {
        FeatureEncoding::DenseF32 => {
            let expected = n.saturating_mul(d).saturating_mul(4).saturating_add(8);
            if bytes.len() != expected {
                return Err(integrity(path, "byte length", expected, bytes.len()));
            }
            for v in x.data_mut() {
                *v = cur.f32()? as f64;
            }
        }
        FeatureEncoding::CsrF32 => {
            let nnz = cur.u64()? as usize;
            // Saturates on a corrupt header so the length check fails cleanly.
            let expected = nnz
                .saturating_mul(8)
                .saturating_add(n.saturating_add(1).saturating_mul(8))
                .saturating_add(16);
            if bytes.len() != expected {
                return Err(integrity(path, "byte length", expected, bytes.len()));
            }
            let indptr: Vec<usize> = (0..=n).map(|_| cur.u64().map(|v| v as usize)).collect::<Result<_>>()?;
            let indices: Vec<usize> = (0..nnz).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<_>>()?;
            if indptr[0] != 0 || indptr[n] != nnz || indptr.windows(2).any(|w| w[0] > w[1]) {
                return Err(integrity(path, "csr row pointer end", nnz, indptr[n]));
            }
            for r in 0..n {
                for &col in &indices[indptr[r]..indptr[r + 1]] {
                    if col >= d {
                        return Err(integrity(path, "csr column bound", d, col));
                    }
                    x.set(r, col, cur.f32()? as f64);
                }
            }
        }
    }
    cur.finish()?;
    Ok(x)
}

/// Loads a dataset directory. Edges are symmetrised; labels are attached
/// when the manifest names a label file.
pub fn load_dataset(dir: &Path) -> Result<Graph> {
    let manifest = read_manifest(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest.c < 1 {
        return Err(parse_err(&manifest_path, 1, "c must be positive"));
    }
    let features_path = dir.join(&manifest.files.features);
    let x = read_features(&features_path, manifest.feature_encoding, manifest.n, manifest.d)?;
    let edges_path = dir.join(&manifest.files.edges);
    let pairs = read_pairs(&edges_path, "src\tdst")?;
    if pairs.len() != manifest.m {
        return Err(integrity(&edges_path, "edge lines", manifest.m, pairs.len()));
    }
    for &(line, u, v) in &pairs {
        if u >= manifest.n || v >= manifest.n {
            return Err(parse_err(
                &edges_path,
                line,
                format!("endpoint out of range for {} nodes", manifest.n),
            ));
        }
    }
    let g = Graph::new(manifest.n, pairs.iter().map(|&(_, u, v)| (u, v)), x)?;
    let Some(labels_file) = &manifest.files.labels else {
        return Ok(g);
    };
    let labels_path = dir.join(labels_file);
    let rows = read_pairs(&labels_path, "node\tlabel")?;
    if rows.len() != manifest.n {
        return Err(integrity(&labels_path, "label lines", manifest.n, rows.len()));
    }
    let mut labels = vec![usize::MAX; manifest.n];
    for &(line, node, label) in &rows {
        if node >= manifest.n || labels[node] != usize::MAX {
            return Err(parse_err(&labels_path, line, format!("invalid or repeated node {node}")));
        }
        if label >= manifest.c {
            return Err(parse_err(
                &labels_path,
                line,
                format!("label {label} outside [0, {})", manifest.c),
            ));
        }
        labels[node] = label;
    }
    g.with_labels(labels, manifest.c)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| DftError::io(path, e))?,
    ))
}

fn write_features(path: &Path, x: &Tensor, encoding: FeatureEncoding) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend((x.rows() as u32).to_le_bytes());
    buf.extend((x.cols() as u32).to_le_bytes());
    match encoding {
        FeatureEncoding::DenseF32 => {
            for &v in x.data() {
                buf.extend((v as f32).to_le_bytes());
            }
        }
        FeatureEncoding::CsrF32 => {
            let mut indptr = vec![0u64];
            let mut indices = Vec::new();
            let mut values = Vec::new();
            for r in 0..x.rows() {
                for (c, &v) in x.row(r).iter().enumerate() {
                    if v as f32 != 0.0 {
                        indices.push(c as u32);
                        values.push(v as f32);
                    }
                }
                indptr.push(indices.len() as u64);
            }
            buf.extend((indices.len() as u64).to_le_bytes());
            buf.extend(indptr.iter().flat_map(|v| v.to_le_bytes()));
            buf.extend(indices.iter().flat_map(|v| v.to_le_bytes()));
            buf.extend(values.iter().flat_map(|v| v.to_le_bytes()));
        }
    }
    fs::write(path, buf).map_err(|e| DftError::io(path, e))
}

/// Writes `g` in the canonical layout: edges once each as `u < v` in
/// lexicographic order, labels by node. Features are stored as `f32`.
pub fn save_dataset(g: &Graph, dir: &Path, name: &str, encoding: FeatureEncoding) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| DftError::io(dir, e))?;
    let manifest = DatasetManifest {
        name: name.into(),
        n: g.num_nodes(),
        m: g.num_edges(),
        d: g.feature_dim(),
        c: g.num_classes().unwrap_or(1),
        files: DatasetFiles {
            edges: "edges.tsv".into(),
            features: encoding.file_name().into(),
            labels: g.labels().map(|_| "labels.tsv".into()),
        },
        feature_encoding: encoding,
    };
    let edges_path = dir.join(&manifest.files.edges);
    let mut w = create(&edges_path)?;
    let io = |e| DftError::io(&edges_path, e);
    writeln!(w, "src\tdst").map_err(io)?;
    for (u, v) in g.edges() {
        writeln!(w, "{u}\t{v}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    if let (Some(labels), Some(file)) = (g.labels(), &manifest.files.labels) {
        let path = dir.join(file);
        let mut w = create(&path)?;
        let io = |e| DftError::io(&path, e);
        writeln!(w, "node\tlabel").map_err(io)?;
        for (i, l) in labels.iter().enumerate() {
            writeln!(w, "{i}\t{l}").map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    write_features(&dir.join(&manifest.files.features), g.features(), encoding)?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text + "\n").map_err(|e| DftError::io(&path, e))?;
    Ok(manifest)
}

/// Splits the nodes into two random halves and returns the induced
/// subgraphs (sizes `⌈n/2⌉` and `⌊n/2⌋`).
pub fn random_split<R: Rng + ?Sized>(g: &Graph, rng: &mut R) -> Result<(Graph, Graph)> {
    let mut nodes: Vec<usize> = (0..g.num_nodes()).collect();
    nodes.shuffle(rng);
    let half = nodes.len().div_ceil(2);
    let (mut a, mut b) = (nodes[..half].to_vec(), nodes[half..].to_vec());
    a.sort_unstable();
    b.sort_unstable();
    Ok((g.induced_subgraph(&a)?, g.induced_subgraph(&b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_graph() -> Graph {
        let x = Tensor::from_rows(&[
            vec![0.0, 1.5, 0.0],
            vec![0.25, 0.0, -2.0],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0],
        ])
        .unwrap();
        Graph::new(4, [(1, 0), (2, 3), (0, 3)], x)
            .unwrap()
            .with_labels(vec![0, 1, 1, 2], 3)
            .unwrap()
    }

    fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn round_trip_both_encodings() {
        for enc in [FeatureEncoding::DenseF32, FeatureEncoding::CsrF32] {
            let tmp = tempfile::tempdir().unwrap();
            let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
            let g = sample_graph();
            save_dataset(&g, &a, "toy", enc).unwrap();
            let loaded = load_dataset(&a).unwrap();
            assert_eq!(loaded, g);
            save_dataset(&loaded, &b, "toy", enc).unwrap();
            assert_eq!(files(&a), files(&b));
        }
    }

    #[test]
    fn edgeless_graph_writes_header_only() {
        let tmp = tempfile::tempdir().unwrap();
        let g = Graph::new(2, [], Tensor::zeros(2, 1)).unwrap();
        save_dataset(&g, tmp.path(), "e", FeatureEncoding::DenseF32).unwrap();
        assert_eq!(fs::read_to_string(tmp.path().join("edges.tsv")).unwrap(), "src\tdst\n");
        let back = load_dataset(tmp.path()).unwrap();
        assert_eq!(back.num_edges(), 0);
        assert!(back.labels().is_none());
    }

    #[test]
    fn manifest_node_count_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        let mut m = save_dataset(&sample_graph(), tmp.path(), "toy", FeatureEncoding::DenseF32).unwrap();
        m.n = 3;
        fs::write(tmp.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_dataset(tmp.path()).unwrap_err();
        assert!(matches!(err, DftError::Integrity { .. }), "{err}");
        assert!(err.to_string().contains("features.bin"), "{err}");
    }

    #[test]
    fn malformed_edge_line_reports_line_number() {
        let tmp = tempfile::tempdir().unwrap();
        save_dataset(&sample_graph(), tmp.path(), "toy", FeatureEncoding::DenseF32).unwrap();
        fs::write(tmp.path().join("edges.tsv"), "src\tdst\n0\t1\n2\tx\n0\t3\n").unwrap();
        match load_dataset(tmp.path()).unwrap_err() {
            DftError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn directed_input_is_symmetrised() {
        let tmp = tempfile::tempdir().unwrap();
        let mut m = save_dataset(&sample_graph(), tmp.path(), "toy", FeatureEncoding::DenseF32).unwrap();
        fs::write(tmp.path().join("edges.tsv"), "src\tdst\n1\t0\n0\t1\n3\t2\n3\t0\n").unwrap();
        m.m = 4;
        fs::write(tmp.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(load_dataset(tmp.path()).unwrap(), sample_graph());
    }

    #[test]
    fn split_halves_partition_nodes() {
        let g = sample_graph();
        let (a, b) = random_split(&g, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a.num_nodes() + b.num_nodes(), 4);
        assert_eq!(a.num_nodes(), 2);
    }
}
