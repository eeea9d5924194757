use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::types::EntityId;

/// Topology description as read from the JSON configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub racks: Vec<RackSpec>,
    pub services: Vec<ServiceSpec>,
    /// Service that answers name lookups; DNS faults target it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dns_service: Option<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RackSpec {
    pub id: EntityId,
    /// ToR switch id; defaults to `tor_<rack id>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch: Option<EntityId>,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: EntityId,
    #[serde(default = "default_hw_gen")]
    pub hw_gen: String,
}

fn default_hw_gen() -> String {
    "gen1".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub id: EntityId,
    pub pods: Vec<PodSpec>,
    /// Callees of this service.
    #[serde(default)]
    pub depends_on: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodSpec {
    pub id: EntityId,
    pub node: EntityId,
}

impl TopologySpec {
    /// Racks × nodes-per-rack × pods-per-node, with `services` services in a
    /// caller→callee chain. Pods are placed round-robin over services so every
    /// service spans several racks. The last service in the chain serves DNS.
    pub fn chain(
        racks: usize,
        nodes_per_rack: usize,
        pods_per_node: usize,
        services: usize,
    ) -> Self {
        let svc_ids: Vec<String> = (0..services)
            .map(|i| format!("svc_{}", (b'a' + i as u8) as char))
            .collect();
        let mut rack_specs = Vec::new();
        let mut node_ids = Vec::new();
        for r in 0..racks {
            let nodes = (0..nodes_per_rack)
                .map(|n| {
                    let id = format!("n{}", r * nodes_per_rack + n + 1);
                    node_ids.push(id.clone());
                    NodeSpec {
                        id,
                        hw_gen: if r % 2 == 0 { "gen1" } else { "gen2" }.to_string(),
                    }
                })
                .collect();
            rack_specs.push(RackSpec {
                id: format!("r{}", r + 1),
                switch: None,
                nodes,
            });
        }
        let mut pods: Vec<Vec<PodSpec>> = vec![Vec::new(); services];
        let total = node_ids.len() * pods_per_node;
        for i in 0..total {
            let s = i % services;
            let ordinal = pods[s].len() + 1;
            pods[s].push(PodSpec {
                id: format!("pod_{}{}", (b'a' + s as u8) as char, ordinal),
                node: node_ids[i / pods_per_node].clone(),
            });
        }
        let service_specs = svc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| ServiceSpec {
                id: id.clone(),
                pods: std::mem::take(&mut pods[i]),
                depends_on: svc_ids.get(i + 1).cloned().into_iter().collect(),
            })
            .collect();
        TopologySpec {
            racks: rack_specs,
            services: service_specs,
            dns_service: svc_ids.last().cloned(),
        }
    }

    /// The reference cluster: 3 racks × 2 nodes × 2 pods per node, 4 services.
    pub fn reference() -> Self {
        Self::chain(3, 2, 2, 4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Node,
    Rack,
    Switch,
    Pod,
    Service,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub rack: EntityId,
    pub hw_gen: String,
}

/// Validated cluster layout. All maps are ordered so iteration is stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTopology {
    pub nodes: BTreeMap<EntityId, NodeInfo>,
    /// rack → its ToR switch
    pub racks: BTreeMap<EntityId, EntityId>,
    /// switch → rack
    pub switches: BTreeMap<EntityId, EntityId>,
    /// pod → hosting node
    pub pods: BTreeMap<EntityId, EntityId>,
    pub services: BTreeMap<EntityId, BTreeSet<EntityId>>,
    /// caller → callee edges
    pub dependencies: BTreeSet<(EntityId, EntityId)>,
    pub dns_service: Option<EntityId>,
}

/// Validates a [`TopologySpec`] into a [`ClusterTopology`].
pub fn build_topology(spec: &TopologySpec) -> Result<ClusterTopology, SimError> {
    let invalid = |msg: String| Err(SimError::InvalidTopology(msg));
    if spec.racks.is_empty() {
        return invalid("topology declares no racks".into());
    }
    if spec.services.is_empty() {
        return invalid("topology declares no services".into());
    }

    let mut ids = BTreeSet::new();
    let mut claim = |id: &str| -> Result<(), SimError> {
        if ids.insert(id.to_string()) {
            Ok(())
        } else {
            Err(SimError::InvalidTopology(format!(
                "duplicate entity id `{id}`"
            )))
        }
    };

    let mut nodes = BTreeMap::new();
    let mut racks = BTreeMap::new();
    let mut switches = BTreeMap::new();
    for rack in &spec.racks {
        if rack.nodes.is_empty() {
            return invalid(format!("rack `{}` has no nodes", rack.id));
        }
        let switch = rack
            .switch
            .clone()
            .unwrap_or_else(|| format!("tor_{}", rack.id));
        claim(&rack.id)?;
        claim(&switch)?;
        racks.insert(rack.id.clone(), switch.clone());
        switches.insert(switch, rack.id.clone());
        for node in &rack.nodes {
            claim(&node.id)?;
            nodes.insert(
                node.id.clone(),
                NodeInfo {
                    rack: rack.id.clone(),
                    hw_gen: node.hw_gen.clone(),
                },
            );
        }
    }

    let mut pods = BTreeMap::new();
    let mut services = BTreeMap::new();
    for svc in &spec.services {
        if svc.pods.is_empty() {
            return invalid(format!("service `{}` has no pods", svc.id));
        }
        claim(&svc.id)?;
        let mut members = BTreeSet::new();
        for pod in &svc.pods {
            if !nodes.contains_key(&pod.node) {
                return Err(SimError::DanglingPod {
                    pod: pod.id.clone(),
                    node: pod.node.clone(),
                });
            }
            claim(&pod.id)?;
            pods.insert(pod.id.clone(), pod.node.clone());
            members.insert(pod.id.clone());
        }
        services.insert(svc.id.clone(), members);
    }

    let mut dependencies = BTreeSet::new();
    for svc in &spec.services {
        for callee in &svc.depends_on {
            if callee == &svc.id {
                return Err(SimError::SelfDependency(svc.id.clone()));
            }
            if !services.contains_key(callee) {
                return invalid(format!(
                    "service `{}` depends on unknown service `{callee}`",
                    svc.id
                ));
            }
            dependencies.insert((svc.id.clone(), callee.clone()));
        }
    }

    if let Some(dns) = &spec.dns_service {
        if !services.contains_key(dns) {
            return invalid(format!("dns_service `{dns}` is not a declared service"));
        }
    }

    Ok(ClusterTopology {
        nodes,
        racks,
        switches,
        pods,
        services,
        dependencies,
        dns_service: spec.dns_service.clone(),
    })
}

impl ClusterTopology {
    pub fn entity_kind(&self, id: &str) -> Option<EntityKind> {
        if self.nodes.contains_key(id) {
            Some(EntityKind::Node)
        } else if self.pods.contains_key(id) {
            Some(EntityKind::Pod)
        } else if self.services.contains_key(id) {
            Some(EntityKind::Service)
        } else if self.switches.contains_key(id) {
            Some(EntityKind::Switch)
        } else if self.racks.contains_key(id) {
            Some(EntityKind::Rack)
        } else {
            None
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entity_kind(id).is_some()
    }

    pub fn service_of_pod(&self, pod: &str) -> Option<&EntityId> {
        self.services
            .iter()
            .find(|(_, members)| members.contains(pod))
            .map(|(svc, _)| svc)
    }

    pub fn node_of_pod(&self, pod: &str) -> Option<&EntityId> {
        self.pods.get(pod)
    }

    pub fn rack_of_node(&self, node: &str) -> Option<&EntityId> {
        self.nodes.get(node).map(|n| &n.rack)
    }

    pub fn pods_on_node(&self, node: &str) -> BTreeSet<EntityId> {
        self.pods
            .iter()
            .filter(|(_, n)| n.as_str() == node)
            .map(|(p, _)| p.clone())
            .collect()
    }

    pub fn nodes_in_rack(&self, rack: &str) -> BTreeSet<EntityId> {
        self.nodes
            .iter()
            .filter(|(_, info)| info.rack == rack)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn pods_in_rack(&self, rack: &str) -> BTreeSet<EntityId> {
        self.pods
            .iter()
            .filter(|(_, n)| self.rack_of_node(n).map(String::as_str) == Some(rack))
            .map(|(p, _)| p.clone())
            .collect()
    }

    pub fn callees<'a>(&'a self, svc: &'a str) -> impl Iterator<Item = &'a EntityId> + 'a {
        self.dependencies
            .iter()
            .filter(move |(caller, _)| caller == svc)
            .map(|(_, callee)| callee)
    }

    pub fn callers<'a>(&'a self, svc: &'a str) -> impl Iterator<Item = &'a EntityId> + 'a {
        self.dependencies
            .iter()
            .filter(move |(_, callee)| callee == svc)
            .map(|(caller, _)| caller)
    }

    fn closure(&self, start: &str, towards_callers: bool) -> BTreeSet<EntityId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([start.to_string()]);
        while let Some(svc) = queue.pop_front() {
            if !seen.insert(svc.clone()) {
                continue;
            }
            let next: Vec<&EntityId> = if towards_callers {
                self.callers(&svc).collect()
            } else {
                self.callees(&svc).collect()
            };
            for n in next {
                if !seen.contains(n) {
                    queue.push_back(n.clone());
                }
            }
        }
        seen
    }

    /// `svc` plus every service that transitively calls it: the set that
    /// sees failures originating at `svc`.
    pub fn dependents_closure(&self, svc: &str) -> BTreeSet<EntityId> {
        self.closure(svc, true)
    }

    /// Services `svc` transitively depends on, excluding `svc` itself.
    pub fn downstream_set(&self, svc: &str) -> BTreeSet<EntityId> {
        let mut set = self.closure(svc, false);
        set.remove(svc);
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two_chain() -> TopologySpec {
        let mut spec = TopologySpec::chain(2, 2, 1, 3);
        // A→B twice collapses to one edge, plus B→C
        spec.services[0].depends_on = vec!["svc_b".into(), "svc_b".into()];
        spec.services[1].depends_on = vec!["svc_c".into()];
        spec.services[0].depends_on.push("svc_c".into());
        spec
    }

    #[test]
    fn builds_chain_topology() {
        let topo = build_topology(&two_by_two_chain()).unwrap();
        assert_eq!(topo.dependencies.len(), 3);
        assert_eq!(topo.switches.len(), 2);
        assert_eq!(topo.racks.len(), 2);
        for node in topo.pods.values() {
            assert!(topo.nodes.contains_key(node));
        }
    }

    #[test]
    fn reference_scale() {
        let topo = build_topology(&TopologySpec::reference()).unwrap();
        assert_eq!(topo.nodes.len(), 6);
        assert_eq!(topo.pods.len(), 12);
        assert_eq!(topo.services.len(), 4);
        assert_eq!(topo.dependencies.len(), 3);
        assert_eq!(topo.pods_on_node("n3").len(), 2);
        assert_eq!(topo.pods_in_rack("r2").len(), 4);
        assert_eq!(topo.dns_service.as_deref(), Some("svc_d"));
    }

    #[test]
    fn rejects_dangling_pod() {
        let mut spec = TopologySpec::reference();
        spec.services[0].pods[0].node = "n99".into();
        assert!(matches!(
            build_topology(&spec),
            Err(SimError::DanglingPod { .. })
        ));
    }

    #[test]
    fn rejects_self_dependency() {
        let mut spec = TopologySpec::reference();
        spec.services[1].depends_on.push("svc_b".into());
        assert!(matches!(
            build_topology(&spec),
            Err(SimError::SelfDependency(s)) if s == "svc_b"
        ));
    }

    #[test]
    fn rejects_empty_rack_and_duplicates() {
        let mut spec = TopologySpec::reference();
        spec.racks[0].nodes.clear();
        assert!(build_topology(&spec).is_err());

        let mut spec = TopologySpec::reference();
        spec.services[1].pods[0].id = spec.services[0].pods[0].id.clone();
        assert!(build_topology(&spec).is_err());
    }

    #[test]
    fn closures_follow_edge_direction() {
        let topo = build_topology(&TopologySpec::reference()).unwrap();
        let deps = topo.dependents_closure("svc_c");
        assert_eq!(
            deps.into_iter().collect::<Vec<_>>(),
            vec!["svc_a", "svc_b", "svc_c"]
        );
        assert_eq!(topo.downstream_set("svc_a").len(), 3);
        assert!(topo.downstream_set("svc_d").is_empty());
    }
}
