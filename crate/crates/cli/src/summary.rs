use scenariofuzz::fuzz::CampaignReport;
use scenariofuzz::sim::MisbehaviorKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;

/// Error scenarios of one agent, pooled over its campaigns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: String,
    pub campaigns: usize,
    pub executions: usize,
    pub error_scenarios: usize,
    pub by_kind: BTreeMap<MisbehaviorKind, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub agents: Vec<AgentSummary>,
}

impl Summary {
    pub fn from_reports(reports: &[CampaignReport]) -> Summary {
        let mut agents: BTreeMap<&str, AgentSummary> = BTreeMap::new();
        for r in reports {
            let a = agents.entry(&r.agent).or_insert_with(|| AgentSummary {
                agent: r.agent.clone(),
                campaigns: 0,
                executions: 0,
                error_scenarios: 0,
                by_kind: MisbehaviorKind::ALL.iter().map(|&k| (k, 0)).collect(),
            });
            a.campaigns += 1;
            a.executions += r.executions;
            a.error_scenarios += r.error_scenarios;
            for e in &r.errors_by_kind {
                *a.by_kind.entry(e.kind).or_default() += e.count;
            }
        }
        Summary {
            agents: agents.into_values().collect(),
        }
    }

    pub fn markdown(&self) -> String {
        let mut s = String::from("| agent | campaigns | executions | error scenarios |");
        for k in MisbehaviorKind::ALL {
            write!(s, " {k:?} |").unwrap();
        }
        s.push_str("\n|---|---:|---:|---:|");
        s.push_str(&"---:|".repeat(MisbehaviorKind::ALL.len()));
        s.push('\n');
        for a in &self.agents {
            write!(s, "| {} | {} | {} | {} |", a.agent, a.campaigns, a.executions, a.error_scenarios).unwrap();
            for k in MisbehaviorKind::ALL {
                write!(s, " {} |", a.by_kind.get(&k).copied().unwrap_or(0)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}
