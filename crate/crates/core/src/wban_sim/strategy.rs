//! Convergecast strategies and their static configuration.

use std::collections::BTreeMap;
use std::fmt;

use crate::handshake::{NodeId, SimTime};

use super::channel::{link_etx, RadioParams};
use super::trace::{LinkTrace, Posture, NODE_COUNT, SINK};
use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Apap,
    Ctp,
    TreeBased,
    FloodToSink,
    MiniAtt,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::Apap, Strategy::Ctp, Strategy::TreeBased, Strategy::FloodToSink, Strategy::MiniAtt];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Apap => "APAP",
            Strategy::Ctp => "CTP",
            Strategy::TreeBased => "TreeBased",
            Strategy::FloodToSink => "FloodToSink",
            Strategy::MiniAtt => "MiniAtt",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy {s}"))
    }
}

/// Parent pointer per node; the sink has none.
pub type ParentTable = [Option<NodeId>; NODE_COUNT];

/// Default APAP parents, at most two per node, acyclic toward the sink.
pub fn default_apap_parents() -> Vec<Vec<NodeId>> {
    vec![vec![1], vec![], vec![1, 3], vec![1, 0], vec![5, 0], vec![0, 3], vec![3, 0]]
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategyConfig {
    pub kind: Strategy,
    pub apap_parents: Vec<Vec<NodeId>>,
    /// TreeBased trees by posture; postures without an entry use the
    /// best-path tree of the run's trace.
    pub trees: BTreeMap<Posture, ParentTable>,
    pub beacon_interval: SimTime,
    pub ttl: u8,
    /// A flooding relay drops its pending rebroadcast after hearing this
    /// many copies of the envelope; 0 rebroadcasts unconditionally.
    pub flood_suppression: u32,
    pub req_retry_timeout: SimTime,
    /// How long a MiniAtt requester collects replies before choosing.
    pub rep_window: SimTime,
    /// TreeBased hop retransmissions, and MiniAtt REQ re-sends.
    pub max_retransmissions: u32,
}

impl StrategyConfig {
    pub fn new(kind: Strategy) -> Self {
        StrategyConfig {
            kind,
            apap_parents: default_apap_parents(),
            trees: BTreeMap::new(),
            beacon_interval: 1_000_000_000,
            ttl: 7,
            flood_suppression: 3,
            req_retry_timeout: 100_000_000,
            rep_window: 20_000_000,
            max_retransmissions: 3,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.apap_parents.len() != NODE_COUNT {
            return Err(SimError::Config("APAP needs a parent list for each of the 7 nodes".into()));
        }
        for (n, ps) in self.apap_parents.iter().enumerate() {
            if ps.len() > 2 || ps.iter().any(|&p| p as usize >= NODE_COUNT || p as usize == n) {
                return Err(SimError::Config(format!("bad APAP parents for node {n}")));
            }
            if n as NodeId != SINK && ps.is_empty() {
                return Err(SimError::Config(format!("node {n} has no APAP parent")));
            }
        }
        if !reaches_sink_acyclically(|n| self.apap_parents[n as usize].clone()) {
            return Err(SimError::Config("APAP parent table has a cycle".into()));
        }
        for (p, tree) in &self.trees {
            if !reaches_sink_acyclically(|n| tree[n as usize].into_iter().collect()) {
                return Err(SimError::Config(format!("{p} tree does not reach the sink")));
            }
        }
        if self.ttl == 0 || self.beacon_interval == 0 || self.req_retry_timeout == 0 {
            return Err(SimError::Config("ttl, beacon interval and REQ timeout must be positive".into()));
        }
        Ok(())
    }
}

/// True when following any parent edges from every node ends at the sink
/// without revisiting a node.
fn reaches_sink_acyclically(parents: impl Fn(NodeId) -> Vec<NodeId>) -> bool {
    fn visit(n: NodeId, depth: usize, parents: &dyn Fn(NodeId) -> Vec<NodeId>) -> bool {
        if n == SINK {
            return true;
        }
        let ps = parents(n);
        depth < NODE_COUNT && !ps.is_empty() && ps.iter().all(|&p| visit(p, depth + 1, parents))
    }
    (0..NODE_COUNT as NodeId).all(|n| visit(n, 0, &parents))
}

/// Shortest-ETX tree toward the sink over the trace's frame-averaged links.
/// Nodes with no usable path get no parent.
pub fn best_path_tree(trace: &LinkTrace, radio: &RadioParams<f64>) -> Result<ParentTable, SimError> {
    let mut cost = [f64::INFINITY; NODE_COUNT];
    let mut parent: ParentTable = [None; NODE_COUNT];
    let mut done = [false; NODE_COUNT];
    cost[SINK as usize] = 0.0;
    for _ in 0..NODE_COUNT {
        let Some(u) = (0..NODE_COUNT)
            .filter(|&i| !done[i] && cost[i].is_finite())
            .min_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(a.cmp(&b)))
        else {
            break;
        };
        done[u] = true;
        for v in 0..NODE_COUNT {
            if done[v] {
                continue;
            }
            let etx = link_etx(radio, trace.average_link(v as NodeId, u as NodeId)?);
            if cost[u] + etx < cost[v] {
                cost[v] = cost[u] + etx;
                parent[v] = Some(u as NodeId);
            }
        }
    }
    Ok(parent)
}
