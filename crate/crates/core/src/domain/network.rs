use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DomainError;

pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// Opaque road-segment code.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(String);

impl SegmentId {
    pub fn new(id: impl Into<String>) -> Result<Self, DomainError> {
        let id = id.into();
        if id.is_empty() {
            return Err(DomainError::EmptySegmentId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SegmentId {
    /// Infallible conversion for literals; empty ids are caught by
    /// [`validate_network`].
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Freeway,
    Arterial,
    Ramp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentDefinition {
    pub id: SegmentId,
    pub role: Role,
    /// Free-flow speed in mph used until an empirical value is available.
    pub reference_speed: f64,
    /// Optional (x, y) layout hint for strip-map rendering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<[f64; 2]>,
}

/// Directed adjacency: `from` lies immediately upstream of `to`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: SegmentId,
    pub to: SegmentId,
}

/// On-disk topology document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkDefinition {
    pub format_version: u32,
    pub segments: Vec<SegmentDefinition>,
    #[serde(default)]
    pub upstream_edges: Vec<Edge>,
    /// Segments whose speeds the predictor outputs, in output row order.
    pub targets: Vec<SegmentId>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptyId { position: usize },
    DuplicateId(SegmentId),
    DanglingUpstream { segment: SegmentId, upstream: SegmentId },
    NonPositiveReferenceSpeed { segment: SegmentId, value: f64 },
    EmptyTargets,
    UnknownTarget(SegmentId),
    DuplicateTarget(SegmentId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId { position } => write!(f, "segment #{position} has an empty id"),
            Violation::DuplicateId(id) => write!(f, "duplicate segment id `{id}`"),
            Violation::DanglingUpstream { segment, upstream } => {
                write!(f, "edge {upstream} -> {segment} references an unknown segment")
            }
            Violation::NonPositiveReferenceSpeed { segment, value } => {
                write!(f, "segment `{segment}` has reference speed {value}")
            }
            Violation::EmptyTargets => write!(f, "target segment list is empty"),
            Violation::UnknownTarget(id) => write!(f, "target `{id}` is not a segment"),
            Violation::DuplicateTarget(id) => write!(f, "target `{id}` listed twice"),
        }
    }
}

/// Checks a topology document; the report is empty iff the document can be
/// turned into a [`NetworkModel`].
pub fn validate_network(def: &NetworkDefinition) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (position, seg) in def.segments.iter().enumerate() {
        if seg.id.as_str().is_empty() {
            out.push(Violation::EmptyId { position });
        } else if !seen.insert(seg.id.clone()) {
            out.push(Violation::DuplicateId(seg.id.clone()));
        }
        if !(seg.reference_speed > 0.0 && seg.reference_speed.is_finite()) {
            out.push(Violation::NonPositiveReferenceSpeed {
                segment: seg.id.clone(),
                value: seg.reference_speed,
            });
        }
    }
    for edge in &def.upstream_edges {
        if !seen.contains(&edge.from) || !seen.contains(&edge.to) {
            out.push(Violation::DanglingUpstream {
                segment: edge.to.clone(),
                upstream: edge.from.clone(),
            });
        }
    }
    if def.targets.is_empty() {
        out.push(Violation::EmptyTargets);
    }
    let mut targets = BTreeSet::new();
    for t in &def.targets {
        if !seen.contains(t) {
            out.push(Violation::UnknownTarget(t.clone()));
        } else if !targets.insert(t.clone()) {
            out.push(Violation::DuplicateTarget(t.clone()));
        }
    }
    out
}

/// Validated, index-based segment graph.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    segments: Vec<SegmentDefinition>,
    ids: Vec<SegmentId>,
    index: HashMap<SegmentId, usize>,
    upstream: Vec<Vec<usize>>,
    neighbors: Vec<Vec<usize>>,
    targets: Vec<usize>,
}

impl NetworkModel {
    pub fn from_definition(def: NetworkDefinition) -> Result<Self, DomainError> {
        if def.format_version != NETWORK_FORMAT_VERSION {
            return Err(DomainError::FormatVersion {
                found: def.format_version,
                expected: NETWORK_FORMAT_VERSION,
            });
        }
        let violations = validate_network(&def);
        if !violations.is_empty() {
            return Err(DomainError::InvalidNetwork(violations));
        }
        let ids: Vec<SegmentId> = def.segments.iter().map(|s| s.id.clone()).collect();
        let index: HashMap<SegmentId, usize> =
            ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
        let mut upstream = vec![Vec::new(); ids.len()];
        for edge in &def.upstream_edges {
            let (from, to) = (index[&edge.from], index[&edge.to]);
            if !upstream[to].contains(&from) {
                upstream[to].push(from);
            }
        }
        let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ids.len()];
        for (to, ups) in upstream.iter().enumerate() {
            for &from in ups {
                if from != to {
                    neighbors[to].insert(from);
                    neighbors[from].insert(to);
                }
            }
        }
        let neighbors = neighbors.into_iter().map(|s| s.into_iter().collect()).collect();
        let targets = def.targets.iter().map(|t| index[t]).collect();
        Ok(Self {
            segments: def.segments,
            ids,
            index,
            upstream,
            neighbors,
            targets,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DomainError> {
        let text = std::fs::read_to_string(path).map_err(|source| DomainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let def: NetworkDefinition =
            serde_json::from_str(&text).map_err(|source| DomainError::Json {
                path: path.display().to_string(),
                source,
            })?;
        Self::from_definition(def)
    }

    pub fn save(&self, path: &Path) -> Result<(), DomainError> {
        let text = serde_json::to_string_pretty(&self.to_definition()).expect("serializable");
        std::fs::write(path, text).map_err(|source| DomainError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_definition(&self) -> NetworkDefinition {
        let mut upstream_edges = Vec::new();
        for (to, ups) in self.upstream.iter().enumerate() {
            for &from in ups {
                upstream_edges.push(Edge {
                    from: self.ids[from].clone(),
                    to: self.ids[to].clone(),
                });
            }
        }
        NetworkDefinition {
            format_version: NETWORK_FORMAT_VERSION,
            segments: self.segments.clone(),
            upstream_edges,
            targets: self.targets.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Canonical segment order.
    pub fn segments(&self) -> &[SegmentId] {
        &self.ids
    }

    pub fn segment(&self, i: usize) -> &SegmentDefinition {
        &self.segments[i]
    }

    pub fn index_of(&self, id: &SegmentId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &SegmentId) -> Result<usize, DomainError> {
        self.index_of(id)
            .ok_or_else(|| DomainError::UnknownSegment(id.to_string()))
    }

    /// Indices of segments immediately upstream of `i`.
    pub fn upstream(&self, i: usize) -> &[usize] {
        &self.upstream[i]
    }

    pub fn role(&self, i: usize) -> Role {
        self.segments[i].role
    }

    pub fn reference_speed(&self, i: usize) -> f64 {
        self.segments[i].reference_speed
    }

    pub fn reference_speeds(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.reference_speed).collect()
    }

    /// Replaces the file-supplied reference speeds, e.g. with empirical
    /// 85th percentiles once enough data has been observed.
    pub fn with_reference_speeds(mut self, speeds: &[f64]) -> Result<Self, DomainError> {
        if speeds.len() != self.len() {
            return Err(DomainError::FrameLength {
                timestamp: 0,
                expected: self.len(),
                actual: speeds.len(),
            });
        }
        for (i, &v) in speeds.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DomainError::BadReferenceSpeed { index: i, value: v });
            }
        }
        for (seg, &v) in self.segments.iter_mut().zip(speeds) {
            seg.reference_speed = v;
        }
        Ok(self)
    }

    /// Target segment indices in prediction row order.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Neighbours ignoring edge direction, sorted and deduplicated.
    pub fn undirected_neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Breadth-first hop counts from `source` over the undirected graph;
    /// unreachable segments get `None`.
    pub fn undirected_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            for &v in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Segments `hops` steps upstream of `i` following upstream edges
    /// (breadth-first, each segment reported at its shortest hop count).
    pub fn upstream_at(&self, i: usize, hops: usize) -> Vec<usize> {
        let mut frontier = vec![i];
        let mut visited: BTreeSet<usize> = BTreeSet::from([i]);
        for _ in 0..hops {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &self.upstream[u] {
                    if visited.insert(v) {
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        frontier
    }

    /// Identity string used to detect model/feed mismatches.
    pub fn fingerprint(&self) -> String {
        self.ids.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: &str, v: f64) -> SegmentDefinition {
        SegmentDefinition {
            id: id.into(),
            role: Role::Freeway,
            reference_speed: v,
            display: None,
        }
    }

    fn edge(from: &str, to: &str) -> Edge {
        Edge {
            from: from.into(),
            to: to.into(),
        }
    }

    fn chain() -> NetworkDefinition {
        NetworkDefinition {
            format_version: 1,
            segments: vec![seg("A", 60.0), seg("B", 60.0), seg("C", 60.0)],
            upstream_edges: vec![edge("A", "B"), edge("B", "C")],
            targets: vec!["C".into(), "A".into()],
        }
    }

    #[test]
    fn well_formed_chain_has_no_violations() {
        assert!(validate_network(&chain()).is_empty());
    }

    #[test]
    fn dangling_upstream_is_one_violation() {
        let mut def = chain();
        def.upstream_edges.push(edge("Z", "A"));
        let report = validate_network(&def);
        assert_eq!(report.len(), 1);
        assert!(matches!(report[0], Violation::DanglingUpstream { .. }));
    }

    #[test]
    fn zero_reference_speed_is_one_violation() {
        let mut def = chain();
        def.segments[1].reference_speed = 0.0;
        let report = validate_network(&def);
        assert_eq!(report.len(), 1);
        assert!(matches!(report[0], Violation::NonPositiveReferenceSpeed { .. }));
    }

    #[test]
    fn empty_targets_and_empty_id_are_reported() {
        let mut def = chain();
        def.targets.clear();
        def.segments.push(seg("", 50.0));
        let report = validate_network(&def);
        assert!(report.contains(&Violation::EmptyTargets));
        assert!(report.contains(&Violation::EmptyId { position: 3 }));
    }

    #[test]
    fn targets_keep_declared_order() {
        let model = NetworkModel::from_definition(chain()).unwrap();
        assert_eq!(model.targets(), &[2, 0]);
        assert_eq!(model.upstream(2), &[1]);
        assert_eq!(model.upstream_at(2, 2), vec![0]);
        assert_eq!(model.undirected_distances(0), vec![Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn definition_round_trips() {
        let model = NetworkModel::from_definition(chain()).unwrap();
        let again = NetworkModel::from_definition(model.to_definition()).unwrap();
        assert_eq!(model, again);
    }
}
