//! Plan definitions and the plan key matrix.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{NetworkModel, PlanId, SegmentId};

use super::AssociatorError;

pub const PLAN_FORMAT_VERSION: u32 = 1;

/// Key value of an incident-triggering segment.
pub const KEY_INCIDENT: u8 = 1;
/// Key value of an affected arterial segment.
pub const KEY_ARTERIAL: u8 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDefinition {
    pub id: PlanId,
    #[serde(default)]
    pub description: String,
    pub incident_segments: Vec<SegmentId>,
    pub arterial_segments: Vec<SegmentId>,
}

/// On-disk plan document. The null plan is implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub format_version: u32,
    pub plans: Vec<PlanDefinition>,
}

impl PlanFile {
    pub fn load(path: &Path) -> Result<Self, AssociatorError> {
        let text = std::fs::read_to_string(path).map_err(|source| AssociatorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: PlanFile = serde_json::from_str(&text).map_err(|source| AssociatorError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if file.format_version != PLAN_FORMAT_VERSION {
            return Err(AssociatorError::FormatVersion {
                path: path.to_path_buf(),
                found: file.format_version,
            });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), AssociatorError> {
        let text = serde_json::to_string_pretty(self).expect("plan file serializes");
        std::fs::write(path, text + "\n").map_err(|source| AssociatorError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Rows are plans in file order followed by the null plan; columns follow
/// the network's segment order.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanKeyMatrix {
    plans: Vec<PlanId>,
    keys: Vec<Vec<u8>>,
}

impl PlanKeyMatrix {
    pub fn build(file: &PlanFile, network: &NetworkModel) -> Result<Self, AssociatorError> {
        let n = network.len();
        let mut plans = Vec::with_capacity(file.plans.len() + 1);
        let mut keys = Vec::with_capacity(file.plans.len() + 1);
        for def in &file.plans {
            let invalid = |reason: &str| AssociatorError::InvalidPlan {
                plan: def.id.to_string(),
                reason: reason.to_owned(),
            };
            if def.id.is_null() || def.id.as_str().is_empty() {
                return Err(invalid("reserved or empty id"));
            }
            if plans.contains(&def.id) {
                return Err(invalid("duplicate id"));
            }
            if def.incident_segments.is_empty() {
                return Err(invalid("no incident segments"));
            }
            if def.arterial_segments.is_empty() {
                return Err(invalid("no arterial segments"));
            }
            let mut row = vec![0u8; n];
            for (list, value) in [
                (&def.incident_segments, KEY_INCIDENT),
                (&def.arterial_segments, KEY_ARTERIAL),
            ] {
                for id in list {
                    let i = network.require(id)?;
                    if row[i] != 0 && row[i] != value {
                        return Err(invalid(&format!("segment `{id}` listed as both incident and arterial")));
                    }
                    row[i] = value;
                }
            }
            plans.push(def.id.clone());
            keys.push(row);
        }
        plans.push(PlanId::null());
        keys.push(vec![0; n]);
        Ok(Self { plans, keys })
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    pub fn plans(&self) -> &[PlanId] {
        &self.plans
    }

    pub fn width(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn key(&self, p: usize) -> &[u8] {
        &self.keys[p]
    }

    pub fn index_of(&self, id: &PlanId) -> Option<usize> {
        self.plans.iter().position(|p| p == id)
    }

    pub fn require(&self, id: &PlanId) -> Result<usize, AssociatorError> {
        self.index_of(id)
            .ok_or_else(|| AssociatorError::UnknownPlan(id.to_string()))
    }

    pub fn null_index(&self) -> usize {
        self.plans.len() - 1
    }

    /// Segment indices carrying key value `value` for plan `p`.
    pub fn segments_with(&self, p: usize, value: u8) -> Vec<usize> {
        self.keys[p]
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == value)
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{NetworkDefinition, Role, SegmentDefinition};

    fn network() -> NetworkModel {
        NetworkModel::from_definition(NetworkDefinition {
            format_version: 1,
            segments: ["F1", "F2", "A1", "A2"]
                .iter()
                .map(|&s| SegmentDefinition {
                    id: s.into(),
                    role: if s.starts_with('F') { Role::Freeway } else { Role::Arterial },
                    reference_speed: 60.0,
                    display: None,
                })
                .collect(),
            upstream_edges: vec![],
            targets: vec!["F1".into()],
        })
        .unwrap()
    }

    fn plan(id: &str, inc: &[&str], art: &[&str]) -> PlanDefinition {
        PlanDefinition {
            id: id.into(),
            description: String::new(),
            incident_segments: inc.iter().map(|&s| s.into()).collect(),
            arterial_segments: art.iter().map(|&s| s.into()).collect(),
        }
    }

    #[test]
    fn null_row_last_and_zero() {
        let file = PlanFile {
            format_version: 1,
            plans: vec![plan("A", &["F1"], &["A1"]), plan("B", &["F2"], &["A2", "A1"])],
        };
        let m = PlanKeyMatrix::build(&file, &network()).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.key(0), &[1, 0, 2, 0]);
        assert_eq!(m.key(1), &[0, 1, 2, 2]);
        assert!(m.plans()[2].is_null());
        assert!(m.key(2).iter().all(|&k| k == 0));
        assert_eq!(m.segments_with(1, KEY_ARTERIAL), vec![2, 3]);
    }

    #[test]
    fn rejects_bad_plans() {
        let net = network();
        for bad in [
            plan("A", &[], &["A1"]),
            plan("A", &["F1"], &[]),
            plan("NULL", &["F1"], &["A1"]),
            plan("A", &["F1"], &["F1"]),
            plan("A", &["X"], &["A1"]),
        ] {
            let file = PlanFile {
                format_version: 1,
                plans: vec![bad],
            };
            assert!(PlanKeyMatrix::build(&file, &net).is_err());
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plans.json");
        let file = PlanFile {
            format_version: 1,
            plans: vec![plan("A", &["F1"], &["A1"])],
        };
        file.save(&path).unwrap();
        assert_eq!(PlanFile::load(&path).unwrap(), file);
        std::fs::write(&path, r#"{"format_version":9,"plans":[]}"#).unwrap();
        assert!(matches!(PlanFile::load(&path), Err(AssociatorError::FormatVersion { .. })));
    }
}
