//! Family files, feature derivation and pairwise heterogeneity reports.

use std::path::Path;

use fedtd_core::features::{build_features, FeatureMatrix};
use fedtd_core::markov::{
    is_ergodic, kernel_heterogeneity, perturb_family, random_mrp, reward_heterogeneity, HeterogeneitySpec, Mrp,
    RewardVector, TransitionMatrix,
};
use fedtd_core::rng::seeded;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::spec::FamilyBlock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFile {
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
}

/// On-disk family: `{"n", "gamma", "r_max", "agents": [{"P", "R"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFile {
    pub n: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub agents: Vec<AgentFile>,
}

impl FamilyFile {
    pub fn from_agents(agents: &[Mrp]) -> Self {
        let first = &agents[0];
        Self {
            n: first.n(),
            gamma: first.gamma(),
            r_max: first.r().r_max(),
            agents: agents
                .iter()
                .map(|m| AgentFile {
                    p: m.p().rows(),
                    r: m.r().values().iter().copied().collect(),
                })
                .collect(),
        }
    }

    /// Validates and converts to MRPs. Every agent must be ergodic.
    pub fn to_agents(&self) -> Result<Vec<Mrp>, HarnessError> {
        if self.agents.is_empty() {
            return Err(HarnessError::Spec("family file has no agents".into()));
        }
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if a.p.len() != self.n || a.r.len() != self.n {
                    return Err(HarnessError::Spec(format!("agent {i}: expected {} states", self.n)));
                }
                let p = TransitionMatrix::from_rows(&a.p)?;
                if !is_ergodic(&p) {
                    return Err(HarnessError::Spec(format!("agent {i}: chain is not ergodic")));
                }
                let r = RewardVector::from_slice(&a.r, self.r_max)?;
                Ok(Mrp::new(p, r, self.gamma)?)
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Spec(format!("cannot read family {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Spec(format!("malformed family file: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Family generation: a random base MRP followed by perturbed copies, all
/// drawn from stream 0 of the family seed.
pub fn generate(block: &FamilyBlock) -> Result<Vec<Mrp>, HarnessError> {
    let mut rng = seeded(block.seed);
    let base = random_mrp(block.n, block.gamma, block.r_max, &mut rng)?;
    let het = HeterogeneitySpec::new(block.epsilon, block.epsilon1)?;
    Ok(perturb_family(&base, het, block.n_agents, &mut rng)?)
}

/// Features are not stored in family files; they are rebuilt from
/// `(n, d, seed)` using stream 1 of the family seed.
pub fn features(block: &FamilyBlock) -> Result<FeatureMatrix, HarnessError> {
    let mut rng = seeded(block.seed);
    rng.set_stream(1);
    Ok(build_features(block.n, block.d, &mut rng)?)
}

/// Loads `family_path` if given, else generates from the spec. A loaded
/// family must agree with the spec on `n`, `gamma` and the agent count.
pub fn resolve(block: &FamilyBlock, family_path: Option<&Path>) -> Result<Vec<Mrp>, HarnessError> {
    let Some(path) = family_path else {
        return generate(block);
    };
    let file = FamilyFile::load(path)?;
    if file.n != block.n || file.gamma != block.gamma {
        return Err(HarnessError::Spec(format!(
            "family file (n={}, gamma={}) disagrees with spec (n={}, gamma={})",
            file.n, file.gamma, block.n, block.gamma
        )));
    }
    if file.agents.len() != block.n_agents {
        return Err(HarnessError::Spec(format!(
            "family file has {} agents, spec expects {}",
            file.agents.len(),
            block.n_agents
        )));
    }
    file.to_agents()
}

/// Realized heterogeneity of one unordered pair (kernel level maximized
/// over both orders).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairHeterogeneity {
    pub i: usize,
    pub j: usize,
    pub epsilon: f64,
    pub epsilon1: f64,
}

pub fn pairwise(agents: &[Mrp]) -> Vec<PairHeterogeneity> {
    let mut out = Vec::new();
    for i in 0..agents.len() {
        for j in i + 1..agents.len() {
            out.push(PairHeterogeneity {
                i,
                j,
                epsilon: kernel_heterogeneity(agents[i].p(), agents[j].p())
                    .max(kernel_heterogeneity(agents[j].p(), agents[i].p())),
                epsilon1: reward_heterogeneity(agents[i].r(), agents[j].r()),
            });
        }
    }
    out
}
