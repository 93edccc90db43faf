//! Scenario documents: which deployment to run, under which contract,
//! partition and consensus settings, on which trace.

use std::path::Path;

use hybrid_core::contract::reference::{reference_contract, with_deadline};
use hybrid_core::contract::{validate_spec, ContractSpec, SimTime, SpecDefect};
use hybrid_core::ledger::{ConfigDefect, ConsensusConfig, Fault, NodeId};
use hybrid_core::router::{validate_partition, HybridMode, OperationPartition, PartitionDefect};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{gen_trace, Profile, Trace, UnknownProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Deployment {
    Centralised,
    Decentralised,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadlineOverride {
    pub phase: String,
    pub kind: String,
    pub duration_s: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecSource {
    /// `"reference"`.
    Named(String),
    /// A named contract with some deadlines changed.
    Tuned {
        base: String,
        deadlines: Vec<DeadlineOverride>,
    },
    Inline(Box<ContractSpec>),
}

impl Default for SpecSource {
    fn default() -> Self {
        SpecSource::Named("reference".into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceSource {
    Profile {
        profile: String,
        #[serde(default)]
        seed: Option<u64>,
    },
    Explicit(Trace),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultInjection {
    pub node: usize,
    pub fault: Fault,
    #[serde(default)]
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub deployment: Deployment,
    #[serde(default)]
    pub spec: SpecSource,
    #[serde(default)]
    pub partition: Option<OperationPartition>,
    #[serde(default)]
    pub mode: Option<HybridMode>,
    #[serde(default)]
    pub consensus: Option<ConsensusConfig>,
    pub trace: TraceSource,
    #[serde(default)]
    pub faults: Vec<FaultInjection>,
    /// Seeds the latency model and, unless the trace names its own seed, the
    /// trace generator.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(String),
    #[error("malformed scenario: {0}")]
    Malformed(String),
    #[error("unknown contract {0:?}")]
    UnknownSpec(String),
    #[error("contract defects: {}", list(.0))]
    Spec(Vec<SpecDefect>),
    #[error("consensus config defects: {}", list(.0))]
    Config(Vec<ConfigDefect>),
    #[error("partition defects: {}", list(.0))]
    Partition(Vec<PartitionDefect>),
    #[error("{0} deployment needs {1}")]
    Missing(&'static str, &'static str),
    #[error(transparent)]
    Profile(#[from] UnknownProfile),
    #[error("trace goes back in time at operation {0}")]
    TraceRegression(usize),
    #[error("operation {0} has kind {1}, which the contract does not declare")]
    UnknownKind(String, String),
    #[error("operation id {0} appears twice in the trace")]
    DuplicateOpId(String),
    #[error("fault injected on node {node}, cluster has {node_count}")]
    UnknownNode { node: usize, node_count: usize },
}

fn list<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A scenario with every reference resolved and every constraint checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedScenario {
    pub name: String,
    pub deployment: Deployment,
    pub spec: ContractSpec,
    pub partition: Option<OperationPartition>,
    pub mode: Option<HybridMode>,
    pub consensus: Option<ConsensusConfig>,
    pub trace: Trace,
    pub faults: Vec<(NodeId, Fault, SimTime)>,
}

fn named_spec(name: &str) -> Result<ContractSpec, ScenarioError> {
    match name {
        "reference" | "data-trading" => Ok(reference_contract()),
        other => Err(ScenarioError::UnknownSpec(other.to_owned())),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Malformed(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn resolve(&self) -> Result<ResolvedScenario, ScenarioError> {
        let spec = match &self.spec {
            SpecSource::Named(name) => named_spec(name)?,
            SpecSource::Tuned { base, deadlines } => {
                deadlines.iter().fold(named_spec(base)?, |s, d| {
                    with_deadline(s, &d.phase, &d.kind, d.duration_s)
                })
            }
            SpecSource::Inline(spec) => (**spec).clone(),
        };
        let defects = validate_spec(&spec);
        if !defects.is_empty() {
            return Err(ScenarioError::Spec(defects));
        }

        let needs_chain = self.deployment != Deployment::Centralised;
        let consensus = if needs_chain {
            let mut config = self.consensus.clone().ok_or(ScenarioError::Missing(
                deployment_name(self.deployment),
                "a consensus config",
            ))?;
            config.rng_seed = self.seed;
            let defects = config.validate();
            if !defects.is_empty() {
                return Err(ScenarioError::Config(defects));
            }
            Some(config)
        } else {
            None
        };

        let (partition, mode) = if self.deployment == Deployment::Hybrid {
            let partition = self
                .partition
                .clone()
                .ok_or(ScenarioError::Missing("hybrid", "a partition"))?;
            let mode = self.mode.unwrap_or(HybridMode::OffChainExecution);
            let defects = validate_partition(&spec, &partition, mode);
            if !defects.is_empty() {
                return Err(ScenarioError::Partition(defects));
            }
            (Some(partition), Some(mode))
        } else {
            (None, None)
        };

        let trace = match &self.trace {
            TraceSource::Profile { profile, seed } => {
                gen_trace(profile.parse::<Profile>()?, seed.unwrap_or(self.seed))
            }
            TraceSource::Explicit(trace) => trace.clone(),
        };
        if let Some(i) = trace.first_regression() {
            return Err(ScenarioError::TraceRegression(i));
        }
        let mut ids = std::collections::HashSet::new();
        if let Some(op) = trace.ops.iter().find(|o| !ids.insert(o.op_id.as_str())) {
            return Err(ScenarioError::DuplicateOpId(op.op_id.clone()));
        }

        if let Some(op) = trace
            .ops
            .iter()
            .find(|o| spec.resolve_kind(&o.kind).is_none())
        {
            return Err(ScenarioError::UnknownKind(
                op.op_id.clone(),
                op.kind.to_string(),
            ));
        }

        let node_count = consensus.as_ref().map_or(0, |c| c.node_count);
        let mut faults: Vec<(NodeId, Fault, SimTime)> = self
            .faults
            .iter()
            .map(|f| {
                if f.node >= node_count {
                    Err(ScenarioError::UnknownNode {
                        node: f.node,
                        node_count,
                    })
                } else {
                    Ok((NodeId(f.node), f.fault, f.at))
                }
            })
            .collect::<Result<_, _>>()?;
        faults.sort_by_key(|f| f.2);

        Ok(ResolvedScenario {
            name: self
                .name
                .clone()
                .unwrap_or_else(|| deployment_name(self.deployment).to_owned()),
            deployment: self.deployment,
            spec,
            partition,
            mode,
            consensus,
            trace,
            faults,
        })
    }
}

fn deployment_name(d: Deployment) -> &'static str {
    match d {
        Deployment::Centralised => "centralised",
        Deployment::Decentralised => "decentralised",
        Deployment::Hybrid => "hybrid",
    }
}
