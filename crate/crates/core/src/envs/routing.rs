use std::collections::VecDeque;
use std::path::Path;

use super::{Environment, Transition};
use crate::error::{Error, Result};
use crate::types::{ActionSpace, StateSpace};

/// The bundled Sioux Falls topology in the plain edge-list format.
pub const SIOUX_FALLS: &str = include_str!("../../data/sioux_falls.net");

/// A directed graph read from the edge-list format:
///
/// ```text
/// # comment
/// nodes <N>
/// edges <E>
/// <from> <to>     (E lines, 1-based node ids)
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    pub nodes: usize,
    /// Zero-based `(from, to)` pairs.
    pub edges: Vec<(usize, usize)>,
}

impl Network {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let mut header = |key: &str| -> Result<usize> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::Network(format!("missing `{key}` header")))?;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(k), Some(v), None) if k == key => v
                    .parse()
                    .map_err(|_| Error::Network(format!("line {no}: bad `{key}` count"))),
                _ => Err(Error::Network(format!(
                    "line {no}: expected `{key} <count>`"
                ))),
            }
        };
        let nodes = header("nodes")?;
        let n_edges = header("edges")?;
        if nodes == 0 {
            return Err(Error::Network("network has no nodes".into()));
        }

        let mut edges = Vec::with_capacity(n_edges);
        for (no, line) in lines {
            let ids: Vec<&str> = line.split_whitespace().collect();
            if ids.len() != 2 {
                return Err(Error::Network(format!("line {no}: expected `<from> <to>`")));
            }
            let mut pair = [0usize; 2];
            for (slot, raw) in pair.iter_mut().zip(&ids) {
                let id: usize = raw
                    .parse()
                    .map_err(|_| Error::Network(format!("line {no}: bad node id `{raw}`")))?;
                if id == 0 || id > nodes {
                    return Err(Error::Network(format!(
                        "line {no}: node {id} outside 1..={nodes}"
                    )));
                }
                *slot = id - 1;
            }
            edges.push((pair[0], pair[1]));
        }
        if edges.len() != n_edges {
            return Err(Error::Network(format!(
                "header declares {n_edges} edges, found {}",
                edges.len()
            )));
        }
        Ok(Self { nodes, edges })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn reachable(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.nodes];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(u) = queue.pop_front() {
            if u == to {
                return true;
            }
            for &(a, b) in &self.edges {
                if a == u && !seen[b] {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        false
    }
}

/// Routing on a road network. States and actions are edges; the extra
/// restart edge (destination to origin) carries the terminal reward.
#[derive(Debug, Clone)]
pub struct Routing {
    network: Network,
    /// All edges, the restart edge last.
    edges: Vec<(usize, usize)>,
    origin: usize,
    destination: usize,
    states: StateSpace,
    actions: ActionSpace,
    congestion: f64,
    terminal: f64,
    gamma: f64,
}

/// Loads a network file and builds the routing game from node 1 to node 20.
pub fn sioux_falls_env(path: impl AsRef<Path>) -> Result<Routing> {
    Routing::new(Network::load(path)?, 1, 20)
}

impl Routing {
    /// `origin` and `destination` are 1-based node ids.
    pub fn new(network: Network, origin: usize, destination: usize) -> Result<Self> {
        for (name, id) in [("origin", origin), ("destination", destination)] {
            if id == 0 || id > network.nodes {
                return Err(Error::Network(format!(
                    "{name} node {id} outside 1..={}",
                    network.nodes
                )));
            }
        }
        let (origin, destination) = (origin - 1, destination - 1);
        if !network.reachable(origin, destination) {
            return Err(Error::Network(format!(
                "destination {} is not reachable from origin {}",
                destination + 1,
                origin + 1
            )));
        }
        let mut edges = network.edges.clone();
        edges.push((destination, origin));
        let n = edges.len();
        let feasible: Vec<Vec<usize>> = edges
            .iter()
            .map(|&(_, head)| {
                edges
                    .iter()
                    .enumerate()
                    .filter(|(_, &(tail, _))| tail == head)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        if let Some(dead) = feasible.iter().position(Vec::is_empty) {
            let (u, v) = edges[dead];
            return Err(Error::Network(format!(
                "edge {} -> {} ends at a node without outgoing edges",
                u + 1,
                v + 1
            )));
        }
        Ok(Self {
            network,
            states: StateSpace::graph_edges(n)?,
            actions: ActionSpace::masked(n, feasible)?,
            edges,
            origin,
            destination,
            congestion: 1e5,
            terminal: 10.0,
            gamma: 0.5,
        })
    }

    pub fn bundled() -> Result<Self> {
        Self::new(Network::parse(SIOUX_FALLS)?, 1, 20)
    }

    /// State index of the restart edge.
    pub fn restart_edge(&self) -> usize {
        self.edges.len() - 1
    }

    /// 1-based `(from, to)` node ids for every state.
    pub fn edge_mapping(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(u, v)| (u + 1, v + 1)).collect()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn origin(&self) -> usize {
        self.origin + 1
    }

    pub fn destination(&self) -> usize {
        self.destination + 1
    }
}

impl Environment for Routing {
    fn name(&self) -> &str {
        "sioux-falls"
    }

    fn states(&self) -> &StateSpace {
        &self.states
    }

    fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    fn discount(&self) -> f64 {
        self.gamma
    }

    fn reward_bound(&self) -> f64 {
        self.congestion.max(self.terminal)
    }

    fn reward(&self, s: usize, _a: usize, mu: &[f64]) -> f64 {
        if s == self.restart_edge() {
            self.terminal
        } else {
            -self.congestion * mu[s] * mu[s]
        }
    }

    fn kernel(&self, _s: usize, a: usize, _mu: &[f64]) -> Transition {
        vec![(a, 1.0)]
    }

    fn initial_distribution(&self) -> Vec<f64> {
        let n = self.states.size();
        vec![1.0 / n as f64; n]
    }

    fn population_independent(&self) -> bool {
        true
    }

    fn default_inverse_temperature(&self) -> f64 {
        1e3
    }
}
