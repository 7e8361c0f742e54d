//! Bipartite graph data model, chronological splitting, negative sampling and
//! the normalized adjacency used by the encoder.

use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

/// One timestamped interaction event between `u` (left partition) and `v` (right partition).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
    pub timestamp: i64,
}

/// An aggregated `(u, v)` pair with its modeling weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairEdge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the dense index of `id`, assigning the next one on first sight.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Dense identity map `"0".."n-1"`, used for generated graphs.
    pub fn sequential(n: usize) -> Self {
        let mut m = Self::new();
        for i in 0..n {
            m.intern(&i.to_string());
        }
        m
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMaps {
    pub u: IdMap,
    pub v: IdMap,
}

/// Two node partitions with feature matrices and a timestamped weighted event list.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    n_u: usize,
    n_v: usize,
    x_u: Array2<f64>,
    x_v: Array2<f64>,
    edges: Vec<Edge>,
}

impl BipartiteGraph {
    pub fn new(x_u: Array2<f64>, x_v: Array2<f64>, edges: Vec<Edge>) -> Result<Self> {
        let (n_u, n_v) = (x_u.nrows(), x_v.nrows());
        if x_u.iter().chain(x_v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Validation("feature matrix contains non-finite values".into()));
        }
        for (i, e) in edges.iter().enumerate() {
            if e.u >= n_u || e.v >= n_v {
                return Err(Error::Validation(format!(
                    "edge {i} ({}, {}) outside partitions of sizes ({n_u}, {n_v})",
                    e.u, e.v
                )));
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::Validation(format!(
                    "edge {i} has non-positive weight {}",
                    e.weight
                )));
            }
        }
        Ok(Self {
            n_u,
            n_v,
            x_u,
            x_v,
            edges,
        })
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn x_u(&self) -> &Array2<f64> {
        &self.x_u
    }

    pub fn x_v(&self) -> &Array2<f64> {
        &self.x_v
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Same nodes and features, different event list.
    pub fn with_edges(&self, edges: Vec<Edge>) -> Result<Self> {
        Self::new(self.x_u.clone(), self.x_v.clone(), edges)
    }

    /// Collapses repeated `(u, v)` events into one pair per edge, in first-seen order.
    ///
    /// With `use_weights` the pair weight is the summed event weight (the
    /// interaction frequency when events carry weight 1); otherwise every pair
    /// has weight 1.
    pub fn pairs(&self, use_weights: bool) -> Vec<PairEdge> {
        aggregate_pairs(&self.edges, use_weights)
    }

    /// Sets of nodes touched by at least one edge.
    pub fn seen_nodes(&self) -> (Vec<bool>, Vec<bool>) {
        let mut su = vec![false; self.n_u];
        let mut sv = vec![false; self.n_v];
        for e in &self.edges {
            su[e.u] = true;
            sv[e.v] = true;
        }
        (su, sv)
    }
}

pub fn aggregate_pairs(edges: &[Edge], use_weights: bool) -> Vec<PairEdge> {
    let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
    let mut out: Vec<PairEdge> = Vec::new();
    for e in edges {
        match slot.get(&(e.u, e.v)) {
            Some(&i) => {
                if use_weights {
                    out[i].weight += e.weight;
                }
            }
            None => {
                slot.insert((e.u, e.v), out.len());
                out.push(PairEdge {
                    u: e.u,
                    v: e.v,
                    weight: if use_weights { e.weight } else { 1.0 },
                });
            }
        }
    }
    out
}

/// A loaded graph together with the raw-ID to dense-index maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: BipartiteGraph,
    pub ids: IdMaps,
}

pub fn load_graph(edge_file: &Path, u_feature_file: &Path, v_feature_file: &Path) -> Result<Dataset> {
    let open = |p: &Path| std::fs::File::open(p).map_err(Error::from);
    load_graph_from_readers(
        (edge_file, open(edge_file)?),
        (u_feature_file, open(u_feature_file)?),
        (v_feature_file, open(v_feature_file)?),
    )
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r)
}

fn check_header(path: &Path, rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<usize> {
    let header = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = header.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(parse_err(
            path,
            1,
            format!("expected header starting with {expected:?}, found {got:?}"),
        ));
    }
    Ok(got.len())
}

/// Reads the edge CSV and both feature CSVs. Paths are used only in error messages.
pub fn load_graph_from_readers<E: Read, U: Read, V: Read>(
    edges: (&Path, E),
    u_features: (&Path, U),
    v_features: (&Path, V),
) -> Result<Dataset> {
    let mut ids = IdMaps::default();
    let (edge_path, edge_reader) = edges;
    let mut rdr = csv_reader(edge_reader);
    check_header(edge_path, &mut rdr, &["u_id", "v_id", "weight", "timestamp"])?;
    let mut raw_edges = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(edge_path, line, e.to_string()))?;
        if rec.len() != 4 {
            return Err(parse_err(edge_path, line, format!("expected 4 fields, found {}", rec.len())));
        }
        let weight: f64 = rec[2]
            .parse()
            .map_err(|_| parse_err(edge_path, line, format!("invalid weight `{}`", &rec[2])))?;
        let timestamp: i64 = rec[3]
            .parse()
            .map_err(|_| parse_err(edge_path, line, format!("invalid timestamp `{}`", &rec[3])))?;
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Validation(format!(
                "{}:{line}: weight must be positive, found {weight}",
                edge_path.display()
            )));
        }
        let u = ids.u.intern(&rec[0]);
        let v = ids.v.intern(&rec[1]);
        raw_edges.push(Edge {
            u,
            v,
            weight,
            timestamp,
        });
    }
    if raw_edges.is_empty() {
        return Err(Error::Validation("no edges".into()));
    }

    let x_u = read_features(u_features.0, u_features.1, &mut ids.u)?;
    let x_v = read_features(v_features.0, v_features.1, &mut ids.v)?;
    let graph = BipartiteGraph::new(x_u, x_v, raw_edges)?;
    Ok(Dataset { graph, ids })
}

fn read_features(path: &Path, reader: impl Read, map: &mut IdMap) -> Result<Array2<f64>> {
    let mut rdr = csv_reader(reader);
    let width = check_header(path, &mut rdr, &["id"])?;
    let dim = width - 1;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; map.len()];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != width {
            return Err(parse_err(path, line, format!("expected {width} fields, found {}", rec.len())));
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(path, line, format!("invalid feature value `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let idx = map.intern(&rec[0]);
        if idx >= rows.len() {
            rows.resize(idx + 1, None);
        }
        if rows[idx].is_some() {
            return Err(parse_err(path, line, format!("duplicate feature row for id `{}`", &rec[0])));
        }
        rows[idx] = Some(values);
    }
    let mut x = Array2::zeros((rows.len(), dim));
    for (i, row) in rows.into_iter().enumerate() {
        let row = row.ok_or_else(|| {
            Error::Validation(format!(
                "{}: node `{}` has no feature row",
                path.display(),
                map.id(i).unwrap_or("?")
            ))
        })?;
        for (j, val) in row.into_iter().enumerate() {
            x[[i, j]] = val;
        }
    }
    Ok(x)
}

/// Writes a graph in the edge/feature CSV format read by [`load_graph`].
pub fn write_graph(dataset: &Dataset, edge_file: &Path, u_feature_file: &Path, v_feature_file: &Path) -> Result<()> {
    let g = &dataset.graph;
    let mut w = csv::Writer::from_path(edge_file)?;
    w.write_record(["u_id", "v_id", "weight", "timestamp"])?;
    for e in g.edges() {
        w.write_record([
            dataset.ids.u.id(e.u).unwrap_or_default().to_owned(),
            dataset.ids.v.id(e.v).unwrap_or_default().to_owned(),
            e.weight.to_string(),
            e.timestamp.to_string(),
        ])?;
    }
    w.flush()?;
    write_features(u_feature_file, g.x_u(), &dataset.ids.u)?;
    write_features(v_feature_file, g.x_v(), &dataset.ids.v)?;
    Ok(())
}

fn write_features(path: &Path, x: &Array2<f64>, ids: &IdMap) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_owned()];
    header.extend((1..=x.ncols()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut rec = vec![ids.id(i).unwrap_or_default().to_owned()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Chronological 80/10/10-style partition of the event list.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalSplit {
    /// All nodes with their features; only train-era events.
    pub train: BipartiteGraph,
    pub val_edges: Vec<Edge>,
    pub test_edges: Vec<Edge>,
    pub ids: IdMaps,
    /// Nodes touched by a train-era event. Everything else resolves to UNK.
    pub seen_u: Vec<bool>,
    pub seen_v: Vec<bool>,
    /// A split boundary fell inside a run of equal timestamps.
    pub boundary_ties: bool,
}

/// Dense node reference after UNK resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRef {
    Known(usize),
    Unk,
}

impl TemporalSplit {
    /// Reserved UNK index of the left partition (one past the last node).
    pub fn unk_u(&self) -> usize {
        self.train.n_u()
    }

    pub fn unk_v(&self) -> usize {
        self.train.n_v()
    }

    pub fn resolve_u(&self, raw_id: &str) -> NodeRef {
        match self.ids.u.get(raw_id) {
            Some(i) if self.seen_u[i] => NodeRef::Known(i),
            _ => NodeRef::Unk,
        }
    }

    pub fn resolve_v(&self, raw_id: &str) -> NodeRef {
        match self.ids.v.get(raw_id) {
            Some(i) if self.seen_v[i] => NodeRef::Known(i),
            _ => NodeRef::Unk,
        }
    }

    /// Train-era plus validation-era events over the same node set.
    pub fn train_val_graph(&self) -> Result<BipartiteGraph> {
        let mut edges = self.train.edges().to_vec();
        edges.extend_from_slice(&self.val_edges);
        self.train.with_edges(edges)
    }

    pub fn all_edges(&self) -> impl Iterator<Item = &Edge> {
        self.train
            .edges()
            .iter()
            .chain(self.val_edges.iter())
            .chain(self.test_edges.iter())
    }
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.8, 0.1, 0.1);

pub fn chronological_split(dataset: &Dataset, fractions: (f64, f64, f64)) -> Result<TemporalSplit> {
    let (f_train, f_val, f_test) = fractions;
    if [f_train, f_val, f_test].iter().any(|f| !(*f > 0.0)) || ((f_train + f_val + f_test) - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let g = &dataset.graph;
    let n = g.edges().len();
    if n < 3 {
        return Err(Error::Validation(format!(
            "need at least 3 edges to form train/val/test splits, found {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep input order
    order.sort_by_key(|&i| g.edges()[i].timestamp);
    let sorted: Vec<Edge> = order.iter().map(|&i| g.edges()[i]).collect();

    let n_train = ((f_train * n as f64).round() as usize).clamp(1, n - 2);
    let n_val = ((f_val * n as f64).round() as usize).clamp(1, n - n_train - 1);
    let cut_a = n_train;
    let cut_b = n_train + n_val;

    let boundary_ties = sorted[cut_a - 1].timestamp == sorted[cut_a].timestamp
        || sorted[cut_b - 1].timestamp == sorted[cut_b].timestamp;
    if boundary_ties {
        log::warn!("timestamp ties straddle a split boundary; ties resolved by input order");
    }

    let train = g.with_edges(sorted[..cut_a].to_vec())?;
    let (seen_u, seen_v) = train.seen_nodes();
    Ok(TemporalSplit {
        train,
        val_edges: sorted[cut_a..cut_b].to_vec(),
        test_edges: sorted[cut_b..].to_vec(),
        ids: dataset.ids.clone(),
        seen_u,
        seen_v,
        boundary_ties,
    })
}

/// Which edge eras a negative set was drawn against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exclusion {
    pub train: bool,
    pub val: bool,
    pub test: bool,
}

impl Exclusion {
    pub const ALL: Exclusion = Exclusion {
        train: true,
        val: true,
        test: true,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSet {
    pub pairs: Vec<(usize, usize)>,
    pub provenance: Exclusion,
}

/// Uniform sampler over the bipartite complement of every era's edge set.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    n_u: usize,
    n_v: usize,
    excluded: HashSet<(usize, usize)>,
}

impl NegativeSampler {
    pub fn new(split: &TemporalSplit) -> Self {
        let excluded = split.all_edges().map(|e| (e.u, e.v)).collect();
        Self {
            n_u: split.train.n_u(),
            n_v: split.train.n_v(),
            excluded,
        }
    }

    pub fn available(&self) -> usize {
        self.n_u * self.n_v - self.excluded.len()
    }

    pub fn is_excluded(&self, u: usize, v: usize) -> bool {
        self.excluded.contains(&(u, v))
    }

    pub fn sample(&self, count: usize, rng: &mut Rng) -> Result<NegativeSet> {
        let available = self.available();
        if count > available {
            return Err(Error::ComplementTooSmall {
                requested: count,
                available,
            });
        }
        let total = self.n_u * self.n_v;
        let pairs = if 4 * count >= available {
            // dense regime: enumerate the complement and draw without replacement
            let free: Vec<(usize, usize)> = (0..total)
                .map(|k| (k / self.n_v, k % self.n_v))
                .filter(|p| !self.excluded.contains(p))
                .collect();
            sample_indices(rng, free.len(), count)
                .into_iter()
                .map(|i| free[i])
                .collect()
        } else {
            let mut taken = HashSet::with_capacity(count);
            let mut pairs = Vec::with_capacity(count);
            while pairs.len() < count {
                let p = (rng.random_range(0..self.n_u), rng.random_range(0..self.n_v));
                if !self.excluded.contains(&p) && taken.insert(p) {
                    pairs.push(p);
                }
            }
            pairs
        };
        Ok(NegativeSet {
            pairs,
            provenance: Exclusion::ALL,
        })
    }
}

pub fn sample_negatives(split: &TemporalSplit, count: usize, rng_seed: u64) -> Result<NegativeSet> {
    if count == 0 {
        return Err(Error::Validation("negative count must be positive".into()));
    }
    NegativeSampler::new(split).sample(count, &mut rng_from(rng_seed, &[]))
}

/// Square compressed-sparse-row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from unsorted triplets; duplicate coordinates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(r, c, x) in triplets {
            rows[r].push((c, x));
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, x) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += x;
                } else {
                    indices.push(c);
                    values.push(x);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, x)| x)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n, self.n));
        for r in 0..self.n {
            for (c, x) in self.row(r) {
                d[[r, c]] = x;
            }
        }
        d
    }

    /// `self · h`
    pub fn matmul(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, h.ncols()));
        for r in 0..self.n {
            let mut out_row = out.row_mut(r);
            for (c, x) in self.row(r) {
                out_row.scaled_add(x, &h.row(c));
            }
        }
        out
    }

    /// `selfᵀ · g`
    pub fn matmul_transposed(&self, g: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, g.ncols()));
        for r in 0..self.n {
            let g_row = g.row(r);
            for (c, x) in self.row(r) {
                out.row_mut(c).scaled_add(x, &g_row);
            }
        }
        out
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}` over the stacked `[U; V]` node order, where `A`
/// has blocks `[0, W; Wᵀ, 0]`.
pub fn normalized_adjacency(n_u: usize, n_v: usize, pairs: &[PairEdge]) -> CsrMatrix {
    let n = n_u + n_v;
    let mut degree = vec![1.0; n];
    for p in pairs {
        degree[p.u] += p.weight;
        degree[n_u + p.v] += p.weight;
    }
    let mut triplets = Vec::with_capacity(2 * pairs.len() + n);
    for (i, d) in degree.iter().enumerate() {
        triplets.push((i, i, 1.0 / d));
    }
    for p in pairs {
        let (a, b) = (p.u, n_u + p.v);
        let x = p.weight / (degree[a] * degree[b]).sqrt();
        triplets.push((a, b, x));
        triplets.push((b, a, x));
    }
    CsrMatrix::from_triplets(n, &triplets)
}

pub fn build_weighted_adjacency(g: &BipartiteGraph, use_weights: bool) -> CsrMatrix {
    normalized_adjacency(g.n_u(), g.n_v(), &g.pairs(use_weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn graph(n_u: usize, n_v: usize, edges: &[(usize, usize, f64, i64)]) -> BipartiteGraph {
        BipartiteGraph::new(
            Array2::zeros((n_u, 2)),
            Array2::zeros((n_v, 3)),
            edges
                .iter()
                .map(|&(u, v, weight, timestamp)| Edge {
                    u,
                    v,
                    weight,
                    timestamp,
                })
                .collect(),
        )
        .unwrap()
    }

    fn dataset(g: BipartiteGraph) -> Dataset {
        let ids = IdMaps {
            u: IdMap::sequential(g.n_u()),
            v: IdMap::sequential(g.n_v()),
        };
        Dataset { graph: g, ids }
    }

    fn load(edges: &str, u: &str, v: &str) -> Result<Dataset> {
        load_graph_from_readers(
            (Path::new("edges.csv"), edges.as_bytes()),
            (Path::new("u.csv"), u.as_bytes()),
            (Path::new("v.csv"), v.as_bytes()),
        )
    }

    const U_FEATS: &str = "id,f1\na,0.5\nb,1.5\nz,2.0\n";
    const V_FEATS: &str = "id,f1,f2\nx,1,2\ny,3,4\n";

    #[test]
    fn load_three_rows() {
        let d = load("u_id,v_id,weight,timestamp\na,x,1,10\nb,x,2,11\na,y,1,12\n", U_FEATS, V_FEATS).unwrap();
        assert_eq!(d.graph.edges().len(), 3);
        // `z` only appears in the feature file and is kept as an isolated node
        assert_eq!(d.graph.n_u(), 3);
        assert_eq!(d.graph.n_v(), 2);
        assert_eq!(d.ids.u.get("b"), Some(1));
        assert_eq!(d.ids.u.get("z"), Some(2));
        assert_eq!(d.graph.edges()[1].weight, 2.0);
        assert_eq!(d.graph.x_v()[[1, 1]], 4.0);
    }

    #[test]
    fn load_rejects_empty_and_nonpositive() {
        let err = load("u_id,v_id,weight,timestamp\n", U_FEATS, V_FEATS).unwrap_err();
        assert!(err.to_string().contains("no edges"), "{err}");
        assert!(err.is_validation());
        let err = load("u_id,v_id,weight,timestamp\na,x,0,1\n", U_FEATS, V_FEATS).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn load_reports_line_numbers() {
        let err = load("u_id,v_id,weight,timestamp\na,x,1,1\na,x,abc,2\n", U_FEATS, V_FEATS).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let err = load("u_id,v_id,weight,timestamp\na,x,1,1\n", "id,f1\na,1\nb\n", V_FEATS).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn load_keeps_duplicate_events() {
        let d = load("u_id,v_id,weight,timestamp\na,x,1,5\na,x,1,5\n", U_FEATS, V_FEATS).unwrap();
        assert_eq!(d.graph.edges().len(), 2);
        assert_eq!(d.graph.pairs(true), vec![PairEdge { u: 0, v: 0, weight: 2.0 }]);
        assert_eq!(d.graph.pairs(false)[0].weight, 1.0);
    }

    #[test]
    fn load_missing_features_is_error() {
        let err = load("u_id,v_id,weight,timestamp\nq,x,1,1\n", U_FEATS, V_FEATS).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn split_ten_edges() {
        let edges: Vec<_> = (0..10).map(|t| (t % 3, t % 2, 1.0, (10 - t) as i64)).collect();
        let s = chronological_split(&dataset(graph(3, 2, &edges)), DEFAULT_FRACTIONS).unwrap();
        let ts = |es: &[Edge]| es.iter().map(|e| e.timestamp).collect::<Vec<_>>();
        assert_eq!(ts(s.train.edges()), (1..=8).collect::<Vec<_>>());
        assert_eq!(ts(&s.val_edges), vec![9]);
        assert_eq!(ts(&s.test_edges), vec![10]);
        assert!(!s.boundary_ties);
    }

    #[test]
    fn split_ties_use_input_order() {
        let edges: Vec<_> = (0..10).map(|i| (i % 4, i % 5, 1.0 + i as f64, 7)).collect();
        let s = chronological_split(&dataset(graph(4, 5, &edges)), DEFAULT_FRACTIONS).unwrap();
        assert!(s.boundary_ties);
        let w: Vec<f64> = s.train.edges().iter().map(|e| e.weight).collect();
        assert_eq!(w, (1..=8).map(f64::from).collect::<Vec<_>>());
        assert_eq!(s.test_edges[0].weight, 10.0);
    }

    #[test]
    fn split_too_small() {
        let err = chronological_split(&dataset(graph(2, 2, &[(0, 0, 1.0, 1), (1, 1, 1.0, 2)])), DEFAULT_FRACTIONS)
            .unwrap_err();
        assert!(err.is_validation());
        let s = chronological_split(
            &dataset(graph(2, 2, &[(0, 0, 1.0, 1), (1, 1, 1.0, 2), (0, 1, 1.0, 3)])),
            DEFAULT_FRACTIONS,
        )
        .unwrap();
        assert_eq!((s.train.edges().len(), s.val_edges.len(), s.test_edges.len()), (1, 1, 1));
    }

    #[test]
    fn unseen_nodes_resolve_to_unk() {
        let edges: Vec<_> = (0..10).map(|t| (if t == 9 { 2 } else { 0 }, 0, 1.0, t as i64)).collect();
        let s = chronological_split(&dataset(graph(3, 1, &edges)), DEFAULT_FRACTIONS).unwrap();
        assert_eq!(s.resolve_u("0"), NodeRef::Known(0));
        assert_eq!(s.resolve_u("2"), NodeRef::Unk);
        assert_eq!(s.resolve_u("nope"), NodeRef::Unk);
        assert_eq!(s.unk_u(), 3);
    }

    fn tiny_split(edges: &[(usize, usize, f64, i64)], n_u: usize, n_v: usize) -> TemporalSplit {
        chronological_split(&dataset(graph(n_u, n_v, edges)), DEFAULT_FRACTIONS).unwrap()
    }

    #[test]
    fn negatives_exhausted_complement() {
        let s = tiny_split(&[(0, 0, 1.0, 1), (0, 1, 1.0, 2), (1, 0, 1.0, 3), (1, 1, 1.0, 4)], 2, 2);
        match sample_negatives(&s, 1, 7).unwrap_err() {
            Error::ComplementTooSmall { available, .. } => assert_eq!(available, 0),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn negatives_forced_pair() {
        let s = tiny_split(&[(0, 0, 1.0, 1), (0, 1, 1.0, 2), (1, 0, 1.0, 3)], 2, 2);
        let neg = sample_negatives(&s, 1, 7).unwrap();
        assert_eq!(neg.pairs, vec![(1, 1)]);
        assert_eq!(neg.provenance, Exclusion::ALL);
    }

    #[test]
    fn adjacency_single_edge() {
        let g = graph(1, 1, &[(0, 0, 1.0, 0)]);
        let a = build_weighted_adjacency(&g, true).to_dense();
        assert_eq!(a, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn adjacency_weight_flag() {
        let skewed = graph(2, 2, &[(0, 0, 1.0, 0), (1, 1, 377.0, 1), (0, 1, 1.0, 2)]);
        let flat = graph(2, 2, &[(0, 0, 1.0, 0), (1, 1, 1.0, 1), (0, 1, 1.0, 2)]);
        assert_eq!(build_weighted_adjacency(&skewed, false), build_weighted_adjacency(&flat, true));
        assert_ne!(build_weighted_adjacency(&skewed, true), build_weighted_adjacency(&flat, true));
    }

    #[test]
    fn isolated_node_has_unit_self_loop() {
        let g = graph(2, 1, &[(0, 0, 3.0, 0)]);
        let a = build_weighted_adjacency(&g, true);
        assert_eq!(a.get(1, 1), 1.0);
        assert_eq!(a.row(1).count(), 1);
    }

    #[test]
    fn csr_transposed_product() {
        let m = CsrMatrix::from_triplets(3, &[(0, 1, 2.0), (2, 0, -1.0), (1, 1, 0.5), (0, 1, 1.0)]);
        let h = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(m.matmul(&h), m.to_dense().dot(&h));
        assert_eq!(m.matmul_transposed(&h), m.to_dense().t().dot(&h));
    }
}
