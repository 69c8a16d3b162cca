//! Declarative experiment configuration: group size, engine tuning, link
//! matrix, per-node workloads, adversaries, fault schedule, and the
//! assertions a run is graded against. Serializable (JSON in the CLI crate)
//! and round-trip stable.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::FloodSlotMode;
use crate::clients::MockClientConfig;
use crate::sim::{derive_rng, EventKind, LinkModel};
use crate::types::{EngineConfig, PeerId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub n: u32,
    pub seed: u64,
    pub duration_ms: u64,
    #[serde(default = "default_sample_interval")]
    pub sample_interval_ms: u64,
    pub engine: EngineConfig,
    #[serde(default)]
    pub links: LinkSpec,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub adversaries: Vec<AdversarySpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub assertions: Vec<AssertionSpec>,
}

fn default_sample_interval() -> u64 {
    1000
}

/// Uniform link model with optional per-pair overrides (applied to both
/// directions of each listed pair).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSpec {
    pub uniform: LinkModel,
    pub overrides: Vec<LinkOverride>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub a: u32,
    pub b: u32,
    pub model: LinkModel,
}

impl LinkSpec {
    pub fn model_for(&self, a: PeerId, b: PeerId) -> LinkModel {
        for ov in &self.overrides {
            if (ov.a == a.0 && ov.b == b.0) || (ov.a == b.0 && ov.b == a.0) {
                return ov.model;
            }
        }
        self.uniform
    }

    pub fn max_latency(&self) -> u64 {
        let mut max = self.uniform.one_way_latency_ms;
        for ov in &self.overrides {
            max = max.max(ov.model.one_way_latency_ms);
        }
        max
    }

    /// Slowest serialization of a `bytes`-sized frame across the matrix.
    pub fn max_serialize_ms(&self, bytes: u64) -> u64 {
        let mut max = self.uniform.serialize_ms(bytes);
        for ov in &self.overrides {
            max = max.max(ov.model.serialize_ms(bytes));
        }
        max
    }
}

/// Client configuration per node: a default plus per-node overrides. Nodes
/// listed as adversaries ignore their workload entry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub default: Option<MockClientConfig>,
    pub per_node: Vec<NodeWorkload>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeWorkload {
    pub node: u32,
    pub client: MockClientConfig,
}

impl WorkloadSpec {
    pub fn client_for(&self, node: PeerId) -> MockClientConfig {
        for w in &self.per_node {
            if w.node == node.0 {
                return w.client.clone();
            }
        }
        self.default.clone().unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversarySpec {
    /// Fabricated-advert flood against `victims` (default: everyone else).
    Flooder {
        node: u32,
        updates_per_sec: u32,
        #[serde(default)]
        victims: Option<Vec<u32>>,
        #[serde(default)]
        slot_mode: FloodSlotMode,
        #[serde(default = "default_advert_size")]
        advert_size: u64,
    },
    /// Advertises whatever it hears about, never serves a pull.
    SilentAdvertiser { node: u32 },
    /// Different payload per receiver under the same slot/version.
    Equivocator {
        node: u32,
        message_size: u64,
        rate_per_sec: u32,
    },
    /// An otherwise honest node with a scheduled crash window.
    Crasher {
        node: u32,
        down_at_ms: u64,
        up_at_ms: u64,
    },
}

fn default_advert_size() -> u64 {
    512
}

impl AdversarySpec {
    pub fn node(&self) -> u32 {
        match self {
            AdversarySpec::Flooder { node, .. }
            | AdversarySpec::SilentAdvertiser { node }
            | AdversarySpec::Equivocator { node, .. }
            | AdversarySpec::Crasher { node, .. } => *node,
        }
    }

    /// Crashers run the honest engine; the others replace it.
    pub fn replaces_engine(&self) -> bool {
        !matches!(self, AdversarySpec::Crasher { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultSpec {
    /// Both directions of one link down for a window.
    LinkDown {
        a: u32,
        b: u32,
        at_ms: u64,
        duration_ms: u64,
    },
    /// All links of one node down for a window.
    NodeLinksDown {
        node: u32,
        at_ms: u64,
        duration_ms: u64,
    },
    Crash {
        node: u32,
        at_ms: u64,
        restart_at_ms: u64,
    },
    /// Seeded random connectivity loss: in every `interval_ms` window of
    /// `[from_ms, to_ms)`, each node independently loses all its links with
    /// `probability`, for `outage_ms`.
    IntermittentConnectivity {
        from_ms: u64,
        to_ms: u64,
        interval_ms: u64,
        probability: f64,
        outage_ms: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AssertionSpec {
    /// Every sample at or after `time_ms` shows zero missing messages
    /// (restricted to `nodes` when given).
    MissingZeroFrom {
        time_ms: u64,
        #[serde(default)]
        nodes: Option<Vec<u32>>,
    },
    /// The final sample still shows at least `count` missing messages.
    FinalMissingAtLeast {
        count: u64,
        #[serde(default)]
        nodes: Option<Vec<u32>>,
    },
    /// Peak tracked receive-side entries stay within
    /// `capacity * (n - 1) + allowance` on every engine node.
    TrackedEntriesWithin { allowance: u64 },
    /// Peak tracked entries exceed `factor * capacity * (n - 1)` somewhere
    /// (the unbounded-receiver demonstration).
    TrackedEntriesExceed { factor: u64 },
    /// Every delivery latency is within the bounded-time budget computed
    /// from the engine config and link matrix.
    LatencyWithinDeltaBound,
    /// No payload was ever received twice by the same node.
    NoDuplicatePayloads,
    /// Byte accounting partitions hold exactly.
    Conservation,
    /// Exactly `count` capacity errors surfaced on `node`.
    CapacityErrors { node: u32, count: u64 },
    /// Exactly `count` tick-driven client drives on `node` in
    /// `(from_ms, to_ms]`.
    TickDrives {
        node: u32,
        from_ms: u64,
        to_ms: u64,
        count: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioError(pub String);

impl core::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "invalid scenario: {}", self.0)
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |msg: String| Err(ScenarioError(msg));
        if self.n < 2 {
            return fail(format!("n = {} but at least 2 nodes are required", self.n));
        }
        if self.duration_ms == 0 {
            return fail("duration_ms must be positive".into());
        }
        if self.sample_interval_ms == 0 {
            return fail("sample_interval_ms must be positive".into());
        }
        self.engine
            .validate()
            .map_err(|e| ScenarioError(format!("engine config: {e}")))?;
        if !self.links.uniform.validate() {
            return fail("uniform link model invalid".into());
        }
        for ov in &self.links.overrides {
            if !ov.model.validate() {
                return fail(format!("link override {}-{} invalid", ov.a, ov.b));
            }
            if ov.a >= self.n || ov.b >= self.n || ov.a == ov.b {
                return fail(format!("link override {}-{} out of range", ov.a, ov.b));
            }
        }
        let mut adversary_nodes = BTreeMap::new();
        for adv in &self.adversaries {
            if adv.node() >= self.n {
                return fail(format!("adversary node {} out of range", adv.node()));
            }
            if adversary_nodes.insert(adv.node(), ()).is_some() {
                return fail(format!("node {} has two adversary roles", adv.node()));
            }
        }
        // Context assumption for the protocols above this layer: fewer than
        // a third of the group is adversarial.
        if self.adversaries.len() * 3 >= self.n as usize {
            return fail(format!(
                "{} adversaries in a group of {} (need f < n/3)",
                self.adversaries.len(),
                self.n
            ));
        }
        for w in &self.workload.per_node {
            if w.node >= self.n {
                return fail(format!("workload node {} out of range", w.node));
            }
            self.validate_client(&w.client)?;
        }
        if let Some(c) = &self.workload.default {
            self.validate_client(c)?;
        }
        for f in &self.faults {
            match f {
                FaultSpec::LinkDown { a, b, .. } => {
                    if *a >= self.n || *b >= self.n || a == b {
                        return fail(format!("fault link {a}-{b} out of range"));
                    }
                }
                FaultSpec::NodeLinksDown { node, .. } | FaultSpec::Crash { node, .. } => {
                    if *node >= self.n {
                        return fail(format!("fault node {node} out of range"));
                    }
                }
                FaultSpec::IntermittentConnectivity {
                    probability,
                    interval_ms,
                    ..
                } => {
                    if !(0.0..=1.0).contains(probability) {
                        return fail("intermittent probability outside [0,1]".into());
                    }
                    if *interval_ms == 0 {
                        return fail("intermittent interval_ms must be positive".into());
                    }
                }
            }
        }
        for a in &self.assertions {
            if let AssertionSpec::CapacityErrors { node, .. }
            | AssertionSpec::TickDrives { node, .. } = a
            {
                if *node >= self.n {
                    return fail(format!("assertion node {node} out of range"));
                }
            }
        }
        Ok(())
    }

    fn validate_client(&self, c: &MockClientConfig) -> Result<(), ScenarioError> {
        if c.generates() && c.message_size != 0 && c.message_size < 16 {
            return Err(ScenarioError(
                "generated message_size must be 0 or >= 16 bytes".into(),
            ));
        }
        if c.message_size > self.engine.max_message_size {
            return Err(ScenarioError(format!(
                "message_size {} exceeds max_message_size {}",
                c.message_size, self.engine.max_message_size
            )));
        }
        if c.rate_per_sec < 0.0 {
            return Err(ScenarioError("rate_per_sec must be >= 0".into()));
        }
        Ok(())
    }

    /// Expand the fault schedule into concrete timed events. The seeded
    /// expansion of intermittent faults is part of the scenario identity:
    /// the same (scenario, seed) always yields the same windows.
    pub fn fault_events(&self) -> Vec<(u64, EventKind)> {
        let mut out = Vec::new();
        let mut rng = derive_rng(self.seed, 0x6661756c74, 0);
        for f in &self.faults {
            match f {
                FaultSpec::LinkDown {
                    a,
                    b,
                    at_ms,
                    duration_ms,
                } => {
                    out.push((*at_ms, EventKind::LinkDown {
                        a: PeerId(*a),
                        b: PeerId(*b),
                    }));
                    out.push((at_ms + duration_ms, EventKind::LinkUp {
                        a: PeerId(*a),
                        b: PeerId(*b),
                    }));
                }
                FaultSpec::NodeLinksDown {
                    node,
                    at_ms,
                    duration_ms,
                } => {
                    out.push((*at_ms, EventKind::NodeLinksDown { node: PeerId(*node) }));
                    out.push((at_ms + duration_ms, EventKind::NodeLinksUp {
                        node: PeerId(*node),
                    }));
                }
                FaultSpec::Crash {
                    node,
                    at_ms,
                    restart_at_ms,
                } => {
                    out.push((*at_ms, EventKind::Crash { node: PeerId(*node) }));
                    out.push((*restart_at_ms, EventKind::Restart { node: PeerId(*node) }));
                }
                FaultSpec::IntermittentConnectivity {
                    from_ms,
                    to_ms,
                    interval_ms,
                    probability,
                    outage_ms,
                } => {
                    let mut t = *from_ms;
                    while t < *to_ms {
                        for node in 0..self.n {
                            if rng.gen_bool(*probability) {
                                out.push((t, EventKind::NodeLinksDown { node: PeerId(node) }));
                                out.push((t + outage_ms, EventKind::NodeLinksUp {
                                    node: PeerId(node),
                                }));
                            }
                        }
                        t += interval_ms;
                    }
                }
            }
        }
        for adv in &self.adversaries {
            if let AdversarySpec::Crasher {
                node,
                down_at_ms,
                up_at_ms,
            } = adv
            {
                out.push((*down_at_ms, EventKind::Crash { node: PeerId(*node) }));
                out.push((*up_at_ms, EventKind::Restart { node: PeerId(*node) }));
            }
        }
        out
    }

    /// Worst-case delivery budget on a correctly behaving link: time for the
    /// sender to (re)announce, three one-way trips (advert, pull, payload),
    /// the download timeout burned on a bad first advertiser, and the
    /// serialization of a maximum-size payload.
    pub fn delta_bound_ms(&self) -> u64 {
        self.engine.retransmit_period_ms
            + 3 * self.links.max_latency()
            + self.engine.download_timeout_ms
            + self.links.max_serialize_ms(self.engine.max_message_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scenario {
        Scenario {
            name: "t".into(),
            description: String::new(),
            n: 4,
            seed: 1,
            duration_ms: 10_000,
            sample_interval_ms: 1000,
            engine: EngineConfig::new(4, 1 << 20),
            links: LinkSpec::default(),
            workload: WorkloadSpec::default(),
            adversaries: Vec::new(),
            faults: Vec::new(),
            assertions: Vec::new(),
        }
    }

    #[test]
    fn validation_catches_group_and_role_errors() {
        let mut sc = base();
        sc.n = 1;
        assert!(sc.validate().is_err());

        let mut sc = base();
        sc.adversaries.push(AdversarySpec::SilentAdvertiser { node: 9 });
        assert!(sc.validate().is_err());

        let mut sc = base();
        sc.adversaries.push(AdversarySpec::SilentAdvertiser { node: 1 });
        sc.adversaries.push(AdversarySpec::SilentAdvertiser { node: 2 });
        assert!(sc.validate().is_err(), "2 of 4 adversarial breaks f < n/3");

        assert!(base().validate().is_ok());
    }

    #[test]
    fn intermittent_fault_expansion_is_seed_stable() {
        let mut sc = base();
        sc.faults.push(FaultSpec::IntermittentConnectivity {
            from_ms: 0,
            to_ms: 10_000,
            interval_ms: 1000,
            probability: 0.5,
            outage_ms: 500,
        });
        let a = sc.fault_events();
        let b = sc.fault_events();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.0, y.0);
        }
        assert!(!a.is_empty());
    }

    #[test]
    fn delta_bound_combines_engine_and_link_terms() {
        let mut sc = base();
        sc.links.uniform.one_way_latency_ms = 50;
        // 1000 retransmit + 150 transit + 1000 download timeout + 0 serialize
        assert_eq!(sc.delta_bound_ms(), 2150);
        sc.links.uniform.bandwidth_bytes_per_ms = Some(1 << 10);
        assert_eq!(sc.delta_bound_ms(), 2150 + (1u64 << 20) / (1 << 10));
    }
}
