//! Builds a simulated peer group from a scenario, runs it to completion, and
//! grades the declared assertions. The run is a pure function of
//! `(scenario, seed)`: identical inputs produce byte-identical CSV and event
//! logs.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::adversary::{EquivocatorNode, FlooderNode, SilentAdvertiserNode};
use crate::clients::MockClient;
use crate::engine::EngineNode;
use crate::metrics::{render_csv, NodeCounters, SampleRow};
use crate::scenario::{AdversarySpec, AssertionSpec, Scenario, ScenarioError};
use crate::sim::{EventKind, SimNode, Simulator, StepOutcome, World};
use crate::types::PeerId;

#[derive(Clone, Debug)]
pub struct AssertionOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct NodeOutcome {
    pub counters: NodeCounters,
    pub is_engine: bool,
    pub final_missing: u64,
    pub final_tracked: u64,
    pub final_unvalidated_entries: u64,
    pub final_unvalidated_bytes: u64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub n: u32,
    pub duration_ms: u64,
    pub samples: Vec<SampleRow>,
    pub summary: SampleRow,
    pub csv: String,
    pub event_log: String,
    pub per_node: Vec<NodeOutcome>,
    pub latency_max_ms: Option<u64>,
    pub delivered: u64,
    pub conservation_ok: bool,
    pub conservation_detail: String,
    pub integrity_ok: bool,
    pub delta_bound_ms: u64,
    pub assertions: Vec<AssertionOutcome>,
}

impl RunReport {
    pub fn all_assertions_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    /// One line per assertion plus the run-health checks.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "scenario {} seed {} n {} duration_ms {}\n",
            self.name, self.seed, self.n, self.duration_ms
        ));
        out.push_str(&format!(
            "{} conservation: {}\n",
            if self.conservation_ok { "PASS" } else { "FAIL" },
            self.conservation_detail
        ));
        out.push_str(&format!(
            "{} integrity: pooled digests match ids\n",
            if self.integrity_ok { "PASS" } else { "FAIL" }
        ));
        for a in &self.assertions {
            out.push_str(&format!(
                "{} {}: {}\n",
                if a.pass { "PASS" } else { "FAIL" },
                a.name,
                a.detail
            ));
        }
        out
    }
}

fn build_node(sc: &Scenario, id: PeerId) -> Box<dyn SimNode> {
    for adv in &sc.adversaries {
        if adv.node() != id.0 || !adv.replaces_engine() {
            continue;
        }
        match adv {
            AdversarySpec::Flooder {
                updates_per_sec,
                victims,
                slot_mode,
                advert_size,
                ..
            } => {
                let victims: Vec<PeerId> = match victims {
                    Some(v) => v.iter().map(|x| PeerId(*x)).collect(),
                    None => (0..sc.n)
                        .map(PeerId)
                        .filter(|p| {
                            *p != id && !sc.adversaries.iter().any(|a| a.node() == p.0)
                        })
                        .collect(),
                };
                return Box::new(FlooderNode::new(
                    id,
                    victims,
                    *updates_per_sec,
                    *slot_mode,
                    *advert_size,
                    sc.engine.capacity,
                    sc.seed,
                ));
            }
            AdversarySpec::SilentAdvertiser { .. } => {
                return Box::new(SilentAdvertiserNode::new(id, sc.n, sc.engine.capacity));
            }
            AdversarySpec::Equivocator {
                message_size,
                rate_per_sec,
                ..
            } => {
                return Box::new(EquivocatorNode::new(
                    id,
                    sc.n,
                    sc.engine.capacity,
                    *message_size,
                    *rate_per_sec,
                    sc.seed,
                ));
            }
            AdversarySpec::Crasher { .. } => unreachable!("crashers keep the engine"),
        }
    }
    let client = MockClient::new(id, sc.seed, sc.workload.client_for(id));
    Box::new(EngineNode::new(id, sc.n, sc.engine.clone(), Box::new(client)))
}

fn take_sample(sim: &mut Simulator) -> SampleRow {
    let now = sim.world.now();
    let n = sim.world.n();
    let mut per_node_missing = alloc::vec![0u64; n as usize];
    let mut engine_nodes = 0u32;
    {
        let metrics = &sim.world.metrics;
        for r in 0..n {
            let peer = PeerId(r);
            let node = sim.node(peer);
            if !node.is_engine() {
                continue;
            }
            engine_nodes += 1;
            let mut count = 0u64;
            for (id, stat) in &metrics.messages {
                if !stat.is_active() || stat.origin == peer || stat.held_by(peer) {
                    continue;
                }
                if node.accepts(now, id, stat.size) {
                    count += 1;
                }
            }
            per_node_missing[r as usize] = count;
        }
    }
    let per_node_tracked: Vec<u64> = (0..n)
        .map(|r| sim.node(PeerId(r)).tracked_entries())
        .collect();
    for r in 0..n {
        sim.world
            .metrics
            .note_tracked(PeerId(r), per_node_tracked[r as usize]);
    }
    let metrics = &sim.world.metrics;
    let total_missing: u64 = per_node_missing.iter().sum();
    let counters = metrics.nodes();
    SampleRow {
        time_ms: now,
        total_missing,
        avg_missing: total_missing as f64 / engine_nodes.max(1) as f64,
        delivered: metrics.delivered_count(),
        latency_max_ms: metrics.latency_max_ms().unwrap_or(0),
        totals: metrics.totals(),
        lost_bytes: metrics.lost_bytes,
        protocol_violations: counters.iter().map(|c| c.protocol_violations).sum(),
        rate_limited: counters.iter().map(|c| c.rate_limited).sum(),
        capacity_errors: counters.iter().map(|c| c.capacity_errors).sum(),
        drive_calls: counters.iter().map(|c| c.drive_calls).sum(),
        max_tracked: per_node_tracked.iter().copied().max().unwrap_or(0),
        per_node_missing,
        per_node_tracked,
    }
}

pub fn run_scenario(sc: &Scenario) -> Result<RunReport, ScenarioError> {
    sc.validate()?;
    let links = sc.links.clone();
    let world = World::new(sc.n, sc.engine.reconnect_delay_ms, sc.seed, |a, b| {
        links.model_for(a, b)
    });
    let nodes: Vec<Box<dyn SimNode>> = (0..sc.n).map(|i| build_node(sc, PeerId(i))).collect();
    let mut sim = Simulator::new(world, nodes);

    for (at, kind) in sc.fault_events() {
        if at <= sc.duration_ms {
            sim.world.schedule(at, kind).expect("non-negative time");
        }
    }
    let mut t = sc.sample_interval_ms;
    while t < sc.duration_ms {
        sim.world.schedule(t, EventKind::Sample).expect("future");
        t += sc.sample_interval_ms;
    }
    sim.world
        .schedule(sc.duration_ms, EventKind::Sample)
        .expect("future");
    sim.world
        .schedule(sc.duration_ms, EventKind::End)
        .expect("future");

    sim.start();
    let mut samples: Vec<SampleRow> = Vec::new();
    loop {
        match sim.step() {
            StepOutcome::Processed => {}
            StepOutcome::Sample => samples.push(take_sample(&mut sim)),
            StepOutcome::End => break,
            StepOutcome::Idle => break,
        }
    }

    let summary = take_sample(&mut sim);
    let per_node: Vec<NodeOutcome> = (0..sc.n)
        .map(|r| {
            let peer = PeerId(r);
            let node = sim.node(peer);
            let (entries, bytes) = node.unvalidated_stats();
            NodeOutcome {
                counters: *sim.world.metrics.node(peer),
                is_engine: node.is_engine(),
                final_missing: summary.per_node_missing[r as usize],
                final_tracked: summary.per_node_tracked[r as usize],
                final_unvalidated_entries: entries,
                final_unvalidated_bytes: bytes,
            }
        })
        .collect();
    let integrity_ok = (0..sc.n).all(|r| sim.node(PeerId(r)).pool_digests_valid());
    let (conservation_ok, conservation_detail) = sim.world.metrics.conservation();
    let csv = render_csv(sc.n, &samples, &summary);
    let event_log = sim.world.log.render();

    let mut report = RunReport {
        name: sc.name.clone(),
        seed: sc.seed,
        n: sc.n,
        duration_ms: sc.duration_ms,
        latency_max_ms: sim.world.metrics.latency_max_ms(),
        delivered: sim.world.metrics.delivered_count(),
        samples,
        summary,
        csv,
        event_log,
        per_node,
        conservation_ok,
        conservation_detail,
        integrity_ok,
        delta_bound_ms: sc.delta_bound_ms(),
        assertions: Vec::new(),
    };
    report.assertions = sc
        .assertions
        .iter()
        .map(|a| evaluate_assertion(sc, a, &report, &sim))
        .collect();
    Ok(report)
}

fn evaluate_assertion(
    sc: &Scenario,
    spec: &AssertionSpec,
    report: &RunReport,
    sim: &Simulator,
) -> AssertionOutcome {
    let group_bound = sc.engine.capacity as u64 * (sc.n as u64 - 1);
    match spec {
        AssertionSpec::MissingZeroFrom { time_ms, nodes } => {
            let mut worst: Option<(u64, u64)> = None;
            for row in report.samples.iter().filter(|r| r.time_ms >= *time_ms) {
                let count: u64 = match nodes {
                    Some(ns) => ns
                        .iter()
                        .map(|i| row.per_node_missing[*i as usize])
                        .sum(),
                    None => row.total_missing,
                };
                if count > 0 && worst.is_none() {
                    worst = Some((row.time_ms, count));
                }
            }
            AssertionOutcome {
                name: format!("missing_zero_from_{time_ms}"),
                pass: worst.is_none(),
                detail: match worst {
                    None => format!("missing stayed 0 from {time_ms}ms"),
                    Some((t, c)) => format!("{c} missing at {t}ms"),
                },
            }
        }
        AssertionSpec::FinalMissingAtLeast { count, nodes } => {
            let row = &report.summary;
            let actual: u64 = match nodes {
                Some(ns) => ns.iter().map(|i| row.per_node_missing[*i as usize]).sum(),
                None => row.total_missing,
            };
            AssertionOutcome {
                name: format!("final_missing_at_least_{count}"),
                pass: actual >= *count,
                detail: format!("{actual} missing at end (needed >= {count})"),
            }
        }
        AssertionSpec::TrackedEntriesWithin { allowance } => {
            let bound = group_bound + allowance;
            let worst = report
                .per_node
                .iter()
                .map(|o| o.counters.max_tracked_hwm)
                .max()
                .unwrap_or(0);
            AssertionOutcome {
                name: format!("tracked_entries_within_{bound}"),
                pass: worst <= bound,
                detail: format!("peak tracked {worst}, bound {bound}"),
            }
        }
        AssertionSpec::TrackedEntriesExceed { factor } => {
            let threshold = factor * group_bound;
            let worst = report
                .per_node
                .iter()
                .map(|o| o.counters.max_tracked_hwm)
                .max()
                .unwrap_or(0);
            AssertionOutcome {
                name: format!("tracked_entries_exceed_{threshold}"),
                pass: worst > threshold,
                detail: format!("peak tracked {worst}, threshold {threshold}"),
            }
        }
        AssertionSpec::LatencyWithinDeltaBound => {
            let max = report.latency_max_ms.unwrap_or(0);
            AssertionOutcome {
                name: "latency_within_delta_bound".into(),
                pass: max <= report.delta_bound_ms && report.delivered > 0,
                detail: format!(
                    "max latency {max}ms over {} deliveries, bound {}ms",
                    report.delivered, report.delta_bound_ms
                ),
            }
        }
        AssertionSpec::NoDuplicatePayloads => {
            let dup = report.summary.totals.recv_dup_payload;
            AssertionOutcome {
                name: "no_duplicate_payloads".into(),
                pass: dup == 0,
                detail: format!("{dup} duplicate payload bytes"),
            }
        }
        AssertionSpec::Conservation => AssertionOutcome {
            name: "conservation".into(),
            pass: report.conservation_ok,
            detail: report.conservation_detail.clone(),
        },
        AssertionSpec::CapacityErrors { node, count } => {
            let actual = report.per_node[*node as usize].counters.capacity_errors;
            AssertionOutcome {
                name: format!("capacity_errors_n{node}"),
                pass: actual == *count,
                detail: format!("{actual} capacity errors (expected {count})"),
            }
        }
        AssertionSpec::TickDrives {
            node,
            from_ms,
            to_ms,
            count,
        } => {
            let actual = sim.world.metrics.tick_drive_times[*node as usize]
                .iter()
                .filter(|t| **t > *from_ms && **t <= *to_ms)
                .count() as u64;
            AssertionOutcome {
                name: format!("tick_drives_n{node}"),
                pass: actual == *count,
                detail: format!(
                    "{actual} tick drives in ({from_ms}, {to_ms}] (expected {count})"
                ),
            }
        }
    }
}
