//! Discrete `q`-modulus of curve families on weighted networks.
//!
//! A density is a nonnegative value per node; its integral along a path is
//! `Σ ½(ρ_i + ρ_j)·ℓ_e` over the path's edges and its energy is `Σ μ_i ρ_i^q`.
//! [`solve_modulus`] maximises the Lagrangian dual by cyclic coordinate
//! ascent on the curve multipliers; the reported primal is the KKT density
//! rescaled to be exactly admissible, so `dual_bound ≤ Mod ≤ primal` holds
//! for every returned report.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::hash::Hash;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::ccdist;
use crate::curves::SampledCurve;
use crate::error::{Error, Result};
use crate::frames;
use crate::groups::{self, GroupId, GroupPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub len: f64,
}

/// Nodes with positive measure joined by edges of positive length.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureNetwork {
    mu: Vec<f64>,
    edges: Vec<Edge>,
    coords: Option<Vec<GroupPoint>>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl MeasureNetwork {
    pub fn new(mu: Vec<f64>, edges: Vec<Edge>) -> Result<Self> {
        if let Some((i, m)) = mu
            .iter()
            .enumerate()
            .find(|(_, m)| !(m.is_finite() && **m > 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "node {i} has measure {m}; must be positive"
            )));
        }
        let n = mu.len();
        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            if e.i >= n || e.j >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({}, {}) references a missing node",
                    e.i, e.j
                )));
            }
            if e.i == e.j {
                return Err(Error::InvalidInput(format!("self-loop at node {}", e.i)));
            }
            if !(e.len.is_finite() && e.len > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "edge ({}, {}) has length {}",
                    e.i, e.j, e.len
                )));
            }
            adjacency[e.i].push((e.j, e.len));
            adjacency[e.j].push((e.i, e.len));
        }
        for adj in &mut adjacency {
            adj.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            // parallel edges: keep the shortest
            adj.dedup_by_key(|a| a.0);
        }
        Ok(MeasureNetwork {
            mu,
            edges,
            coords: None,
            adjacency,
        })
    }

    pub fn with_coords(mut self, coords: Vec<GroupPoint>) -> Result<Self> {
        if coords.len() != self.mu.len() {
            return Err(Error::InvalidInput(format!(
                "{} coordinates for {} nodes",
                coords.len(),
                self.mu.len()
            )));
        }
        if let Some(first) = coords.first() {
            for c in &coords {
                groups::ensure_same(first.group(), c.group())?;
            }
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn coords(&self) -> Option<&[GroupPoint]> {
        self.coords.as_deref()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    /// Length of the (shortest) edge joining `i` and `j`.
    pub fn edge_length(&self, i: usize, j: usize) -> Option<f64> {
        let adj = self.adjacency.get(i)?;
        adj.binary_search_by(|a| a.0.cmp(&j)).ok().map(|k| adj[k].1)
    }

    /// Copy with every node measure multiplied by `c`.
    pub fn scaled_measure(&self, c: f64) -> Result<Self> {
        let mut out =
            MeasureNetwork::new(self.mu.iter().map(|m| m * c).collect(), self.edges.clone())?;
        out.coords = self.coords.clone();
        Ok(out)
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let file: NetworkFile = serde_json::from_reader(reader)?;
        file.into_network()
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &NetworkFile::from_network(self))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: u64,
    mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    i: u64,
    j: u64,
    len: f64,
}

/// JSON interchange: `{"group"?, "nodes": [{id, mu, coords?}], "edges": [{i, j, len}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<GroupId>,
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

impl NetworkFile {
    fn into_network(self) -> Result<MeasureNetwork> {
        let mut index = HashMap::with_capacity(self.nodes.len());
        for (k, n) in self.nodes.iter().enumerate() {
            if index.insert(n.id, k).is_some() {
                return Err(Error::InvalidInput(format!("duplicate node id {}", n.id)));
            }
        }
        let lookup = |id: u64| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("edge references unknown node id {id}")))
        };
        let edges = self
            .edges
            .iter()
            .map(|e| {
                Ok(Edge {
                    i: lookup(e.i)?,
                    j: lookup(e.j)?,
                    len: e.len,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = MeasureNetwork::new(self.nodes.iter().map(|n| n.mu).collect(), edges)?;
        let with_coords = self.nodes.iter().filter(|n| n.coords.is_some()).count();
        match (with_coords, self.group) {
            (0, _) => Ok(net),
            (k, Some(g)) if k == self.nodes.len() => {
                let coords = self
                    .nodes
                    .iter()
                    .map(|n| GroupPoint::from_array(g, n.coords.expect("checked")))
                    .collect::<Result<Vec<_>>>()?;
                net.with_coords(coords)
            }
            (_, None) => Err(Error::InvalidInput(
                "node coordinates require a group".into(),
            )),
            _ => Err(Error::InvalidInput(
                "either all or no nodes carry coordinates".into(),
            )),
        }
    }

    fn from_network(net: &MeasureNetwork) -> Self {
        NetworkFile {
            group: net
                .coords
                .as_ref()
                .and_then(|c| c.first())
                .map(|p| p.group()),
            nodes: net
                .mu
                .iter()
                .enumerate()
                .map(|(k, &mu)| NodeRecord {
                    id: k as u64,
                    mu,
                    coords: net.coords.as_ref().map(|c| c[k].coords()),
                })
                .collect(),
            edges: net
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    i: e.i as u64,
                    j: e.j as u64,
                    len: e.len,
                })
                .collect(),
        }
    }
}

/// A path through adjacent nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteCurve {
    pub nodes: Vec<usize>,
}

impl DiscreteCurve {
    pub fn new(nodes: Vec<usize>) -> Self {
        DiscreteCurve { nodes }
    }

    /// Per-node line-integral weights `w_i` (half the length of every incident
    /// path edge), merged by node and sorted by node index.
    pub fn weights(&self, net: &MeasureNetwork) -> Result<Vec<(usize, f64)>> {
        if self.nodes.len() < 2 {
            return Err(Error::CurveNotOnNetwork(
                "a curve needs at least one edge".into(),
            ));
        }
        let mut w: Vec<(usize, f64)> = Vec::with_capacity(2 * self.nodes.len());
        for pair in self.nodes.windows(2) {
            let (i, j) = (pair[0], pair[1]);
            let len = net.edge_length(i, j).ok_or_else(|| {
                Error::CurveNotOnNetwork(format!("no edge between nodes {i} and {j}"))
            })?;
            w.push((i, 0.5 * len));
            w.push((j, 0.5 * len));
        }
        w.sort_by_key(|a| a.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(w.len());
        for (i, x) in w {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += x,
                _ => merged.push((i, x)),
            }
        }
        Ok(merged)
    }

    pub fn length(&self, net: &MeasureNetwork) -> Result<f64> {
        Ok(self.weights(net)?.iter().map(|a| a.1).sum())
    }

    pub fn integral(&self, net: &MeasureNetwork, rho: &Density) -> Result<f64> {
        Ok(self.weights(net)?.iter().map(|&(i, w)| w * rho.0[i]).sum())
    }
}

/// Nonnegative value per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density(pub Vec<f64>);

impl Density {
    pub fn constant(n: usize, value: f64) -> Self {
        Density(vec![value; n])
    }

    pub fn energy(&self, net: &MeasureNetwork, q: f64) -> f64 {
        self.0.iter().zip(&net.mu).map(|(r, m)| m * r.powf(q)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    /// Energy of `density`, an admissible density; an upper bound for the modulus.
    pub primal: f64,
    pub density: Density,
    /// Dual objective at the final multipliers; a lower bound for the modulus.
    pub dual_bound: f64,
    /// `max(0, 1 − min_γ ∫_γ ρ)` for the KKT density before rescaling.
    pub max_violation: f64,
    pub iterations: usize,
    /// Number of curves carrying the constraints (active family for connecting problems).
    pub curves: usize,
}

impl ModulusReport {
    fn empty(n: usize) -> Self {
        ModulusReport {
            primal: 0.0,
            density: Density::constant(n, 0.0),
            dual_bound: 0.0,
            max_violation: 0.0,
            iterations: 0,
            curves: 0,
        }
    }
}

/// Minimum line integral of `rho` over `family`, and whether it reaches `1 − tol`.
pub fn is_admissible(
    net: &MeasureNetwork,
    rho: &Density,
    family: &[DiscreteCurve],
    tol: f64,
) -> Result<(bool, f64)> {
    if family.is_empty() {
        return Err(Error::InvalidInput("family must be nonempty".into()));
    }
    if rho.0.len() != net.len() {
        return Err(Error::InvalidInput(
            "density size does not match the network".into(),
        ));
    }
    let mut min = f64::INFINITY;
    for c in family {
        min = min.min(c.integral(net, rho)?);
    }
    Ok((min >= 1.0 - tol, min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_iterations: 10_000,
        }
    }
}

fn check_q(q: f64) -> Result<()> {
    if !(q.is_finite() && q > 1.0) {
        return Err(Error::InvalidInput(format!("q = {q}; q > 1 is required")));
    }
    Ok(())
}

/// `x^(1/(q-1))`, avoiding `powf` for the common exponents.
fn kkt_root(q: f64) -> fn(f64, f64) -> f64 {
    if q == 2.0 {
        |x, _| x
    } else if q == 3.0 {
        |x, _| x.sqrt()
    } else if q == 4.0 {
        |x, _| x.cbrt()
    } else {
        f64::powf
    }
}

/// Dual coordinate ascent state.
struct Ascent<'a> {
    mu: &'a [f64],
    q: f64,
    expo: f64,
    root: fn(f64, f64) -> f64,
    curves: Vec<Vec<(usize, f64)>>,
    lambda: Vec<f64>,
    /// `s_i = Σ_γ λ_γ w_γi`
    s: Vec<f64>,
}

impl<'a> Ascent<'a> {
    fn new(net: &'a MeasureNetwork, q: f64) -> Self {
        Ascent {
            mu: &net.mu,
            q,
            expo: 1.0 / (q - 1.0),
            root: kkt_root(q),
            curves: Vec::new(),
            lambda: Vec::new(),
            s: vec![0.0; net.len()],
        }
    }

    fn push(&mut self, w: Vec<(usize, f64)>) {
        self.curves.push(w);
        self.lambda.push(0.0);
    }

    /// Drops curves with zero multiplier; they do not contribute to `s`.
    fn prune(&mut self) {
        let keep: Vec<bool> = self.lambda.iter().map(|l| *l > 0.0).collect();
        let mut k = 0;
        self.curves.retain(|_| {
            k += 1;
            keep[k - 1]
        });
        self.lambda.retain(|l| *l > 0.0);
    }

    fn rho(&self, i: usize) -> f64 {
        let s = self.s[i];
        if s <= 0.0 {
            0.0
        } else {
            (self.root)(s / (self.q * self.mu[i]), self.expo)
        }
    }

    fn integral(&self, c: usize) -> f64 {
        self.curves[c].iter().map(|&(i, w)| w * self.rho(i)).sum()
    }

    /// Maximises the dual in `λ_c` with the other multipliers fixed.
    fn update(&mut self, c: usize) {
        let old = self.lambda[c];
        let base: Vec<f64> = self.curves[c]
            .iter()
            .map(|&(i, w)| (self.s[i] - old * w).max(0.0))
            .collect();
        let (q, expo, root) = (self.q, self.expo, self.root);
        let curve = &self.curves[c];
        let mu = self.mu;
        // φ(λ) = ∫_c ρ(λ) − 1, increasing in λ
        let phi = |lam: f64| -> (f64, f64) {
            let mut val = -1.0;
            let mut der = 0.0;
            for (k, &(i, w)) in curve.iter().enumerate() {
                let s = base[k] + lam * w;
                if s > 0.0 {
                    let r = root(s / (q * mu[i]), expo);
                    val += w * r;
                    der += w * w * expo * r / s;
                }
            }
            (val, der)
        };
        let lam = if phi(0.0).0 >= 0.0 {
            0.0
        } else {
            let mut hi = if old > 0.0 { old } else { 1.0 };
            let mut guard = 0;
            while phi(hi).0 < 0.0 && guard < 2000 {
                hi *= 2.0;
                guard += 1;
            }
            let mut lo = 0.0;
            let mut x = if old > 0.0 && old < hi { old } else { 0.5 * hi };
            for _ in 0..200 {
                let (v, d) = phi(x);
                if v.abs() <= 1e-15 {
                    break;
                }
                if v < 0.0 {
                    lo = x;
                } else {
                    hi = x;
                }
                if hi - lo <= 1e-16 * hi {
                    x = 0.5 * (lo + hi);
                    break;
                }
                let newton = if d > 0.0 { x - v / d } else { f64::NAN };
                x = if newton > lo && newton < hi {
                    newton
                } else {
                    0.5 * (lo + hi)
                };
            }
            x
        };
        for (k, &(i, w)) in self.curves[c].iter().enumerate() {
            self.s[i] = base[k] + lam * w;
        }
        self.lambda[c] = lam;
    }

    /// Worst KKT violation over the family.
    fn violation(&self) -> f64 {
        (0..self.curves.len())
            .map(|c| {
                let i = self.integral(c);
                if self.lambda[c] > 0.0 {
                    (i - 1.0).abs()
                } else {
                    (1.0 - i).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Sweeps until the KKT violation is at most `tol`; returns the sweep count and violation.
    fn run(&mut self, tol: f64, max_sweeps: usize) -> (usize, f64) {
        let mut sweeps = 0;
        let mut violation = self.violation();
        while sweeps < max_sweeps && violation > tol {
            sweeps += 1;
            for c in 0..self.curves.len() {
                self.update(c);
            }
            violation = self.violation();
        }
        (sweeps, violation)
    }

    fn density(&self) -> Vec<f64> {
        (0..self.s.len()).map(|i| self.rho(i)).collect()
    }

    fn dual(&self, rho: &[f64]) -> f64 {
        let energy: f64 = rho
            .iter()
            .zip(self.mu)
            .map(|(r, m)| m * r.powf(self.q))
            .sum();
        self.lambda.iter().sum::<f64>() - (self.q - 1.0) * energy
    }
}

fn finish(
    asc: &Ascent,
    net: &MeasureNetwork,
    min_integral: f64,
    iterations: usize,
) -> ModulusReport {
    let rho = asc.density();
    let dual = asc.dual(&rho);
    let scale = 1.0 / min_integral;
    let density = Density(rho.iter().map(|r| r * scale).collect());
    ModulusReport {
        primal: density.energy(net, asc.q),
        density,
        dual_bound: dual,
        max_violation: (1.0 - min_integral).max(0.0),
        iterations,
        curves: asc.curves.len(),
    }
}

/// `Mod_q` of a finite family: `min Σ μ_i ρ_i^q` subject to `∫_γ ρ ≥ 1`.
pub fn solve_modulus(
    net: &MeasureNetwork,
    family: &[DiscreteCurve],
    q: f64,
    cfg: &SolverConfig,
) -> Result<ModulusReport> {
    check_q(q)?;
    if family.is_empty() {
        return Ok(ModulusReport::empty(net.len()));
    }
    let mut asc = Ascent::new(net, q);
    for c in family {
        let w = c.weights(net)?;
        asc.push(w);
    }
    let (iterations, _) = asc.run(cfg.tol, cfg.max_iterations);
    let min = (0..asc.curves.len())
        .map(|c| asc.integral(c))
        .fold(f64::INFINITY, f64::min);
    Ok(finish(&asc, net, min, iterations))
}

#[derive(Clone, Copy, PartialEq)]
struct Key(f64, f64, usize);

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap; ties by geometric length, then node index
        other
            .0
            .total_cmp(&self.0)
            .then(other.1.total_cmp(&self.1))
            .then(other.2.cmp(&self.2))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Multi-source Dijkstra from `sources` under node-averaged edge costs
/// `½(ρ_i + ρ_j)ℓ`, ties broken by geometric length and node index.
/// Returns the cost and predecessor of every node.
fn shortest_paths(net: &MeasureNetwork, rho: &[f64], sources: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let n = net.len();
    let mut cost = vec![f64::INFINITY; n];
    let mut geo = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        cost[s] = 0.0;
        geo[s] = 0.0;
        heap.push(Key(0.0, 0.0, s));
    }
    while let Some(Key(c, g, i)) = heap.pop() {
        if c > cost[i] || (c == cost[i] && g > geo[i]) {
            continue;
        }
        for &(j, len) in net.neighbors(i) {
            let nc = c + 0.5 * (rho[i] + rho[j]) * len;
            let ng = g + len;
            if nc < cost[j] || (nc == cost[j] && ng < geo[j]) {
                cost[j] = nc;
                geo[j] = ng;
                prev[j] = i;
                heap.push(Key(nc, ng, j));
            }
        }
    }
    (cost, prev)
}

fn trace(prev: &[usize], end: usize) -> Vec<usize> {
    let mut path = vec![end];
    let mut k = end;
    while prev[k] != usize::MAX {
        k = prev[k];
        path.push(k);
    }
    path.reverse();
    path
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConnectingConfig {
    pub solver: SolverConfig,
    /// Violated paths added per round (distinct endpoints in `B`, most violated first).
    pub batch: usize,
    /// Ascent sweeps between oracle calls; the multipliers are warm-started.
    pub sweeps_per_round: usize,
    pub max_rounds: usize,
}

impl Default for ConnectingConfig {
    fn default() -> Self {
        ConnectingConfig {
            solver: SolverConfig::default(),
            batch: 1,
            sweeps_per_round: 10_000,
            max_rounds: 10_000,
        }
    }
}

/// `Mod_q` of all network paths joining `a` to `b`, by constraint generation
/// with a shortest-path oracle. The primal density is rescaled so that the
/// cheapest path of the whole connecting family has integral 1.
pub fn solve_connecting_modulus(
    net: &MeasureNetwork,
    a: &[usize],
    b: &[usize],
    q: f64,
    cfg: &ConnectingConfig,
) -> Result<ModulusReport> {
    check_q(q)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyShell("both node sets must be nonempty".into()));
    }
    let n = net.len();
    let mut in_b = vec![false; n];
    for &j in b {
        if j >= n {
            return Err(Error::InvalidInput(format!(
                "node {j} is not in the network"
            )));
        }
        in_b[j] = true;
    }
    for &i in a {
        if i >= n {
            return Err(Error::InvalidInput(format!(
                "node {i} is not in the network"
            )));
        }
        if in_b[i] {
            return Err(Error::InvalidInput(format!("node {i} lies in both sets")));
        }
    }
    let (reach, _) = shortest_paths(net, &vec![0.0; n], a);
    if b.iter().all(|&j| reach[j].is_infinite()) {
        return Ok(ModulusReport::empty(n));
    }
    let mut asc = Ascent::new(net, q);
    let mut iterations = 0;
    let mut rounds = 0;
    let mut violation = 0.0;
    let mut rho = asc.density();
    let min_integral = loop {
        let (cost, prev) = shortest_paths(net, &rho, a);
        let mut ends: Vec<(f64, usize)> = b
            .iter()
            .map(|&j| (cost[j], j))
            .filter(|c| c.0.is_finite())
            .collect();
        ends.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let cheapest = ends[0].0;
        let tol = cfg.solver.tol;
        if (cheapest >= 1.0 - tol && violation <= tol)
            || rounds >= cfg.max_rounds
            || iterations >= cfg.solver.max_iterations
        {
            break cheapest;
        }
        rounds += 1;
        for &(c, j) in ends.iter().take(cfg.batch.max(1)) {
            if c >= 1.0 - tol {
                break;
            }
            let path = DiscreteCurve::new(trace(&prev, j));
            asc.push(path.weights(net)?);
        }
        let budget = cfg
            .sweeps_per_round
            .max(1)
            .min(cfg.solver.max_iterations - iterations);
        let (sweeps, v) = asc.run(tol, budget);
        iterations += sweeps;
        violation = v;
        // the oracle re-adds any pruned path that becomes violated
        asc.prune();
        rho = asc.density();
    };
    if !(min_integral > 0.0) {
        return Err(Error::InvalidInput(
            "constraint generation stalled at a zero-cost path".into(),
        ));
    }
    let mut report = finish(&asc, net, min_integral, iterations);
    report.max_violation = (1.0 - min_integral).max(0.0);
    Ok(report)
}

/// Result of [`gamma0_modulus_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gamma0Bound {
    pub n: u32,
    /// `∫∫∫ ρ/λ ≥ 2·|[−1,1]²|`.
    pub aggregated: Ratio,
    /// `4 ∫₀¹ λ^{−2/3} dλ`.
    pub holder_majorant: Ratio,
    /// `aggregated⁴ / majorant³`, the bound produced by the Hölder step.
    pub holder_bound: Ratio,
    /// The constant `2⁴/3³` quoted for the same chain.
    pub quoted_bound: Ratio,
    /// Exact modulus of the sampled product family in the continuum.
    pub continuum: f64,
    pub discrete: Option<ModulusReport>,
}

/// Exact rational number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: i64,
    pub den: i64,
}

impl Ratio {
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i64;
        let s = if den < 0 { -1 } else { 1 };
        Ratio {
            num: s * num / g,
            den: s * den / g,
        }
    }

    pub fn integer(n: i64) -> Self {
        Ratio::new(n, 1)
    }

    pub fn pow(self, k: u32) -> Ratio {
        Ratio::new(self.num.pow(k), self.den.pow(k))
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::ops::Mul for Ratio {
    type Output = Ratio;

    fn mul(self, o: Ratio) -> Ratio {
        Ratio::new(self.num * o.num, self.den * o.den)
    }
}

impl std::ops::Div for Ratio {
    type Output = Ratio;

    fn div(self, o: Ratio) -> Ratio {
        Ratio::new(self.num * o.den, self.den * o.num)
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Vertex grid over `[−1,1] × [1/n, 1] × [−1,1]` (counts are vertices per axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gamma0Grid {
    pub a_count: usize,
    pub lambda_count: usize,
    pub t_count: usize,
}

impl Default for Gamma0Grid {
    /// 32×64×32 cells.
    fn default() -> Self {
        Gamma0Grid {
            a_count: 33,
            lambda_count: 65,
            t_count: 33,
        }
    }
}

impl Gamma0Grid {
    fn validate(&self) -> Result<()> {
        if self.a_count < 2 || self.lambda_count < 2 || self.t_count < 2 {
            return Err(Error::InvalidInput(
                "grid needs at least two vertices per axis".into(),
            ));
        }
        Ok(())
    }

    fn axis(count: usize) -> Vec<f64> {
        (0..count)
            .map(|i| -1.0 + 2.0 * i as f64 / (count - 1) as f64)
            .collect()
    }

    /// Geometric spacing from 1 down to `1/n`.
    fn lambdas(&self, n: u32) -> Vec<f64> {
        let m = self.lambda_count - 1;
        (0..=m)
            .map(|j| {
                if j == m {
                    1.0 / n as f64
                } else {
                    (n as f64).powf(-(j as f64) / m as f64)
                }
            })
            .collect()
    }
}

/// Horizontal speed of `s ↦ (a, 1 − (1 − 1/n)s, t)`.
pub fn gamma0_speed(n: u32, s: f64) -> f64 {
    let c = 1.0 - 1.0 / n as f64;
    c / (2.0 * (1.0 - c * s))
}

/// The curves `s ↦ (a, 1 − (1 − 1/n)s, t)` for `(a, t)` on the grid, sampled
/// at the grid's `λ` levels.
pub fn gamma0_family(n: u32, grid: &Gamma0Grid) -> Result<Vec<SampledCurve>> {
    if n < 2 {
        return Err(Error::InvalidInput("n must be at least 2".into()));
    }
    grid.validate()?;
    let lambdas = grid.lambdas(n);
    let c = 1.0 - 1.0 / n as f64;
    let params: Vec<f64> = lambdas
        .iter()
        .map(|l| ((1.0 - l) / c).clamp(0.0, 1.0))
        .collect();
    let mut out = Vec::with_capacity(grid.a_count * grid.t_count);
    for &a in &Gamma0Grid::axis(grid.a_count) {
        for &t in &Gamma0Grid::axis(grid.t_count) {
            let pts = lambdas
                .iter()
                .map(|&l| GroupPoint::from_array(GroupId::AffineAdditive, [a, l, t]))
                .collect::<Result<Vec<_>>>()?;
            out.push(SampledCurve::new(
                GroupId::AffineAdditive,
                params.clone(),
                pts,
            )?);
        }
    }
    Ok(out)
}

/// Network on the grid vertices (6-neighbour edges with ball-box lengths,
/// node measure the Haar volume `da dλ dt / λ²` of the dual cell) and the
/// discrete curves of [`gamma0_family`] as vertex columns.
pub fn gamma0_network(n: u32, grid: &Gamma0Grid) -> Result<(MeasureNetwork, Vec<DiscreteCurve>)> {
    if n < 2 {
        return Err(Error::InvalidInput("n must be at least 2".into()));
    }
    grid.validate()?;
    let (na, nl, nt) = (grid.a_count, grid.lambda_count, grid.t_count);
    let av = Gamma0Grid::axis(na);
    let tv = Gamma0Grid::axis(nt);
    let lv = grid.lambdas(n);
    let dual = |v: &[f64], k: usize| {
        let lo = if k == 0 {
            v[0]
        } else {
            0.5 * (v[k - 1] + v[k])
        };
        let hi = if k + 1 == v.len() {
            v[k]
        } else {
            0.5 * (v[k] + v[k + 1])
        };
        (hi - lo).abs()
    };
    // λ decreasing; dual interval [lo, hi] with ∫ λ⁻² = 1/lo − 1/hi
    let lambda_weight = |j: usize| {
        let hi = if j == 0 {
            lv[0]
        } else {
            0.5 * (lv[j - 1] + lv[j])
        };
        let lo = if j + 1 == nl {
            lv[j]
        } else {
            0.5 * (lv[j] + lv[j + 1])
        };
        1.0 / lo - 1.0 / hi
    };
    let id = |i: usize, j: usize, k: usize| (i * nl + j) * nt + k;
    let mut mu = vec![0.0; na * nl * nt];
    let mut coords = Vec::with_capacity(mu.len());
    for i in 0..na {
        for j in 0..nl {
            for k in 0..nt {
                mu[id(i, j, k)] = dual(&av, i) * lambda_weight(j) * dual(&tv, k);
                coords.push(GroupPoint::raw(
                    GroupId::AffineAdditive,
                    [av[i], lv[j], tv[k]],
                ));
            }
        }
    }
    let chord = |p: [f64; 3], q: [f64; 3]| {
        let mid = std::array::from_fn(|k| 0.5 * (p[k] + q[k]));
        frames::ball_box_length(
            GroupId::AffineAdditive,
            mid,
            std::array::from_fn(|k| q[k] - p[k]),
        )
    };
    let mut edges = Vec::with_capacity(3 * mu.len());
    for i in 0..na {
        for j in 0..nl {
            for k in 0..nt {
                let p = coords[id(i, j, k)].coords();
                for (di, dj, dk) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                    let (i2, j2, k2) = (i + di, j + dj, k + dk);
                    if i2 < na && j2 < nl && k2 < nt {
                        let q = coords[id(i2, j2, k2)].coords();
                        edges.push(Edge {
                            i: id(i, j, k),
                            j: id(i2, j2, k2),
                            len: chord(p, q),
                        });
                    }
                }
            }
        }
    }
    let net = MeasureNetwork::new(mu, edges)?.with_coords(coords)?;
    let mut family = Vec::with_capacity(na * nt);
    for i in 0..na {
        for k in 0..nt {
            family.push(DiscreteCurve::new((0..nl).map(|j| id(i, j, k)).collect()));
        }
    }
    Ok((net, family))
}

/// The analytic chain for `Mod₄(Γₙ⁰)` (exact rationals), the continuum value
/// `64 / (27 (1 − n^{−1/3})³)` of the sampled family, and optionally the
/// discrete modulus on `grid`.
pub fn gamma0_modulus_bound(
    n: u32,
    grid: Option<&Gamma0Grid>,
    cfg: &SolverConfig,
) -> Result<Gamma0Bound> {
    if n < 2 {
        return Err(Error::InvalidInput("n must be at least 2".into()));
    }
    // ∫_{1/n}^1 ρ/(2λ) dλ ≥ 1 per curve; integrate over the square of area 4 and double
    let area = Ratio::integer(4);
    let aggregated = Ratio::integer(2) * area;
    // ∫₀¹ λ^{−2/3} dλ = 1/(1 − 2/3)
    let holder_majorant = area * (Ratio::integer(1) / Ratio::new(1, 3));
    // (∫ρ⁴/λ²)^{1/4} · majorant^{3/4} ≥ aggregated
    let holder_bound = aggregated.pow(4) / holder_majorant.pow(3);
    let quoted_bound = Ratio::new(2i64.pow(4), 3i64.pow(3));
    let m = 1.0 - (n as f64).powf(-1.0 / 3.0);
    let continuum = 64.0 / (27.0 * m * m * m);
    let discrete = match grid {
        Some(grid) => {
            let (net, family) = gamma0_network(n, grid)?;
            Some(solve_modulus(&net, &family, 4.0, cfg)?)
        }
        None => None,
    };
    Ok(Gamma0Bound {
        n,
        aggregated,
        holder_majorant,
        holder_bound,
        quoted_bound,
        continuum,
        discrete,
    })
}

/// Lattice and search settings for [`ring_modulus`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingConfig {
    /// Horizontal spacing `h`.
    pub spacing: f64,
    /// Half-width of the `a` and `t` window for the affine-additive grid.
    pub window: f64,
    pub q: f64,
    pub connecting: ConnectingConfig,
    /// Safety cap on the number of nodes.
    pub max_nodes: usize,
}

impl Default for RingConfig {
    fn default() -> Self {
        RingConfig {
            spacing: 0.75,
            window: 2.0,
            q: 4.0,
            connecting: ConnectingConfig {
                solver: SolverConfig {
                    tol: 1e-3,
                    max_iterations: 100_000,
                },
                batch: 1024,
                sweeps_per_round: 5,
                max_rounds: 100_000,
            },
            max_nodes: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingReport {
    pub group: GroupId,
    pub r0: f64,
    pub r: f64,
    pub nodes: usize,
    pub inner: usize,
    pub outer: usize,
    pub report: ModulusReport,
}

/// Grows a graph from `origin` by Dijkstra over implicit neighbours, stopping
/// expansion at distance `stop`. Returns the network, node keys and distances.
fn grow<K, F>(
    origin: K,
    stop: f64,
    max_nodes: usize,
    neighbors: F,
) -> Result<(Vec<K>, Vec<f64>, Vec<Edge>)>
where
    K: Copy + Eq + Hash + Ord,
    F: Fn(K) -> Vec<(K, f64)>,
{
    let mut index: HashMap<K, usize> = HashMap::new();
    let mut keys = vec![origin];
    let mut dist = vec![0.0];
    let mut done = vec![false];
    index.insert(origin, 0);
    let mut heap = BinaryHeap::new();
    heap.push(Key(0.0, 0.0, 0));
    let mut edges = Vec::new();
    while let Some(Key(d, _, i)) = heap.pop() {
        if done[i] || d > dist[i] {
            continue;
        }
        done[i] = true;
        if d >= stop {
            continue;
        }
        for (k, len) in neighbors(keys[i]) {
            let j = match index.get(&k) {
                Some(&j) => j,
                None => {
                    if keys.len() >= max_nodes {
                        return Err(Error::InvalidInput(format!(
                            "ring network exceeds {max_nodes} nodes"
                        )));
                    }
                    keys.push(k);
                    dist.push(f64::INFINITY);
                    done.push(false);
                    index.insert(k, keys.len() - 1);
                    keys.len() - 1
                }
            };
            // every edge is seen once from its first expanded endpoint
            if !done[j] {
                edges.push(Edge { i, j, len });
            }
            if d + len < dist[j] {
                dist[j] = d + len;
                heap.push(Key(d + len, 0.0, j));
            }
        }
    }
    Ok((keys, dist, edges))
}

/// Connecting modulus of the ring `{R₀ < d(center, ·) < R}` on a grid graph
/// whose shortest-path distances approximate the CC distance from `center`.
///
/// * Heisenberg: the lattice `(ih, jh, 2h²k)` with neighbours `p⋆(±h,0,0)`,
///   `p⋆(0,±h,0)` (horizontal, length `h`) and `p⋆(0,0,±2h²)` (length
///   `h√(2π)`, the exact distance); node measure `2h⁴`.
/// * Affine-additive: chart grid in `(a, ln λ, t)` restricted to
///   `|a|, |t| ≤ window`, node measure the Haar volume of the cell.
/// * Roto-translation: chart grid with spacing `h`, node measure `h³`.
///
/// Chart-grid edges use the ball-box length of the chord. The grid is built
/// around the identity and transported by left translation.
pub fn ring_modulus(
    g: GroupId,
    center: &GroupPoint,
    r0: f64,
    r: f64,
    cfg: &RingConfig,
) -> Result<RingReport> {
    groups::ensure_same(g, center.group())?;
    center.validate()?;
    if !(r0 > 0.0 && r > r0 && r.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "ring radii must satisfy 0 < R0 < R, got {r0}, {r}"
        )));
    }
    if !(cfg.spacing > 0.0) {
        return Err(Error::InvalidInput("spacing must be positive".into()));
    }
    check_q(cfg.q)?;
    let h = cfg.spacing;
    let (local, dist, edges, mu): (Vec<[f64; 3]>, Vec<f64>, Vec<Edge>, Vec<f64>) = match g {
        GroupId::Heisenberg => {
            let vertical = h * (2.0 * std::f64::consts::PI).sqrt();
            let (keys, dist, edges) = grow((0i64, 0i64, 0i64), r, cfg.max_nodes, |(i, j, k)| {
                // p⋆(ah,bh,0) shifts k by aj − bi
                let mut out: Vec<_> = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .into_iter()
                    .map(|(a, b): (i64, i64)| {
                        (
                            (i + a, j + b, k + a * j - b * i),
                            h * ((a * a + b * b) as f64).sqrt(),
                        )
                    })
                    .collect();
                out.push(((i, j, k + 1), vertical));
                out.push(((i, j, k - 1), vertical));
                out
            })?;
            let coords = keys
                .iter()
                .map(|&(i, j, k)| [i as f64 * h, j as f64 * h, 2.0 * h * h * k as f64])
                .collect();
            let mu = vec![2.0 * h.powi(4); keys.len()];
            (coords, dist, edges, mu)
        }
        GroupId::AffineAdditive | GroupId::RotoTranslation => {
            let (hu, m) = if g == GroupId::AffineAdditive {
                (h, (cfg.window / h).round() as i64)
            } else {
                (h, i64::MAX)
            };
            let point = |(i, j, k): (i64, i64, i64)| -> [f64; 3] {
                if g == GroupId::AffineAdditive {
                    [i as f64 * h, (j as f64 * hu).exp(), k as f64 * h]
                } else {
                    [i as f64 * h, j as f64 * h, k as f64 * h]
                }
            };
            let length = |p: [f64; 3], q: [f64; 3]| {
                let mid = std::array::from_fn(|k| 0.5 * (p[k] + q[k]));
                frames::ball_box_length(g, mid, std::array::from_fn(|k| q[k] - p[k]))
            };
            let (keys, dist, edges) = grow((0i64, 0i64, 0i64), r, cfg.max_nodes, |(i, j, k)| {
                let p = point((i, j, k));
                [
                    (1, 0, 0),
                    (-1, 0, 0),
                    (0, 1, 0),
                    (0, -1, 0),
                    (0, 0, 1),
                    (0, 0, -1),
                ]
                .into_iter()
                .map(|(di, dj, dk)| (i + di, j + dj, k + dk))
                .filter(|&(i, _, k)| i.abs() <= m && k.abs() <= m)
                .map(|key| (key, length(p, point(key))))
                .collect()
            })?;
            let coords: Vec<[f64; 3]> = keys.iter().map(|&key| point(key)).collect();
            let mu = keys
                .iter()
                .map(|&(_, j, _)| {
                    if g == GroupId::AffineAdditive {
                        let u = j as f64 * hu;
                        h * h * ((-(u - 0.5 * hu)).exp() - (-(u + 0.5 * hu)).exp())
                    } else {
                        h * h * h
                    }
                })
                .collect();
            (coords, dist, edges, mu)
        }
    };
    let coords = local
        .iter()
        .map(|c| groups::multiply_unchecked(center, &GroupPoint::raw(g, *c)))
        .collect();
    let net = MeasureNetwork::new(mu, edges)?.with_coords(coords)?;
    let inner: Vec<usize> = (0..net.len()).filter(|&i| dist[i] <= r0).collect();
    let outer: Vec<usize> = (0..net.len()).filter(|&i| dist[i] >= r).collect();
    if outer.is_empty() {
        return Err(Error::EmptyShell(format!("no grid node at distance ≥ {r}")));
    }
    let report = solve_connecting_modulus(&net, &inner, &outer, cfg.q, &cfg.connecting)?;
    Ok(RingReport {
        group: g,
        r0,
        r,
        nodes: net.len(),
        inner: inner.len(),
        outer: outer.len(),
        report,
    })
}

/// The density `ρ_N = 3/(N d(x₀, ·))` on the ring `D(R₀, 2^N R₀)`, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoN {
    pub center: GroupPoint,
    pub r0: f64,
    pub n: u32,
}

impl RhoN {
    pub fn new(center: GroupPoint, r0: f64, n: u32) -> Result<Self> {
        center.validate()?;
        if n < 6 {
            return Err(Error::InvalidInput("N must be at least 6".into()));
        }
        if !(r0 > 0.0) {
            return Err(Error::InvalidInput("R0 must be positive".into()));
        }
        Ok(RhoN { center, r0, n })
    }

    pub fn outer_radius(&self) -> f64 {
        self.r0 * 2f64.powi(self.n as i32)
    }

    /// Distance from the center: exact for the Heisenberg group, the
    /// optimiser's upper estimate otherwise.
    pub fn distance(&self, p: &GroupPoint) -> Result<f64> {
        match self.center.group() {
            GroupId::Heisenberg => ccdist::heisenberg_distance(&self.center, p),
            g => Ok(ccdist::cc_distance(g, &self.center, p, &ccdist::CcConfig::fast())?.upper),
        }
    }

    pub fn value_at_distance(&self, d: f64) -> f64 {
        if d > self.r0 && d < self.outer_radius() {
            3.0 / (self.n as f64 * d)
        } else {
            0.0
        }
    }

    pub fn value(&self, p: &GroupPoint) -> Result<f64> {
        Ok(self.value_at_distance(self.distance(p)?))
    }

    /// Trapezoidal line integral along a sampled curve (chord lengths).
    pub fn line_integral(&self, curve: &SampledCurve) -> Result<f64> {
        let vals = curve
            .points()
            .iter()
            .map(|p| self.value(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(curve
            .segment_lengths()
            .iter()
            .enumerate()
            .map(|(k, len)| 0.5 * (vals[k] + vals[k + 1]) * len)
            .sum())
    }

    /// Lower bound `3(N − 2)/(2N)` for the integral along any curve crossing the ring.
    pub fn admissibility_bound(&self) -> f64 {
        3.0 * (self.n as f64 - 2.0) / (2.0 * self.n as f64)
    }

    /// `K (6/N)^{Q'} R₀^{Q−Q'} Σ_{k=1}^N 2^{k(Q−Q')}` for `μ(B(x₀, r)) ≤ K r^Q`.
    pub fn energy_bound(&self, k: f64, q: f64, q_prime: f64) -> f64 {
        let n = self.n as f64;
        let sum: f64 = (1..=self.n)
            .map(|j| 2f64.powf(j as f64 * (q - q_prime)))
            .sum();
        k * (6.0 / n).powf(q_prime) * self.r0.powf(q - q_prime) * sum
    }
}

/// Horizontal Heisenberg curve leaving `center` along a logarithmic spiral
/// `z = R₀ 2^u e^{iθ(u)}`, `θ(u) = θ₀ + A sin(ωu + φ)`, for
/// `u ∈ [−3, N + 1]`; returns the line integral of `ρ_N` by the trapezoidal
/// rule in `u` with `per_unit` nodes per unit.
pub fn spiral_line_integral(rho: &RhoN, shape: [f64; 4], per_unit: usize) -> Result<f64> {
    groups::ensure_same(GroupId::Heisenberg, rho.center.group())?;
    let [theta0, amp, omega, phase] = shape;
    let c = 4f64.ln();
    let ln2 = 2f64.ln();
    let (u0, u1) = (-3.0, rho.n as f64 + 1.0);
    let steps = ((u1 - u0) * per_unit as f64).ceil() as usize;
    let du = (u1 - u0) / steps as f64;
    // ṫ = 2(y ẋ − x ẏ) = −2 r² θ'
    let t_of = |u: f64| {
        let prim = |v: f64| {
            let arg = omega * v + phase;
            (c * v).exp() * (c * arg.cos() + omega * arg.sin()) / (c * c + omega * omega)
        };
        -2.0 * rho.r0 * rho.r0 * amp * omega * (prim(u) - prim(u0))
    };
    let integrand = |u: f64| -> Result<f64> {
        let r = rho.r0 * (ln2 * u).exp();
        let theta = theta0 + amp * (omega * u + phase).sin();
        let dtheta = amp * omega * (omega * u + phase).cos();
        let local = GroupPoint::from_array(
            GroupId::Heisenberg,
            [r * theta.cos(), r * theta.sin(), t_of(u)],
        )?;
        let p = groups::multiply(&rho.center, &local)?;
        let speed = r * (ln2 * ln2 + dtheta * dtheta).sqrt();
        Ok(rho.value(&p)? * speed)
    };
    let mut sum = 0.5 * (integrand(u0)? + integrand(u1)?);
    for k in 1..steps {
        sum += integrand(u0 + k as f64 * du)?;
    }
    Ok(sum * du)
}
