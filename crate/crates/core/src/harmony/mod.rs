//! Differential checking of the two engines state by state: reductions
//! against τ transitions, and rate distributions against identified
//! Markovian transitions aggregated per class.

pub mod gen;
pub mod laws;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::congruence::{canonicalize, state_key, CanonicalForm, RestoreError};
use crate::labeled::internal_steps;
use crate::parser::SpecFile;
use crate::reduction::{reduction_classes, stochastic_step};
use crate::statespace::{compare_imcs, explore, ExploreError, Semantics};
use crate::syntax::{DefEnv, NameSupply};

pub use gen::{gen_spec, gen_term, GenParams};

pub const RATE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassSum {
    pub class: String,
    pub sigma: f64,
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Violation,
    PossibleCongruenceIncompleteness,
}

/// Outcome for one reachable state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateRecord {
    pub state: usize,
    pub key: String,
    /// Reduction targets equal τ targets.
    pub reductions: bool,
    /// A rate distribution exists iff a Markovian transition does.
    pub stochastic: bool,
    /// Per-class rate sums agree.
    pub rates: bool,
    pub verdict: Verdict,
    pub reduction_targets: Vec<String>,
    pub tau_targets: Vec<String>,
    pub sums: Vec<ClassSum>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HarmonyReport {
    pub states: Vec<StateRecord>,
    /// Mismatch between the IMCs built by the two engines, if any.
    pub imc_mismatch: Option<String>,
}

impl HarmonyReport {
    pub fn passed(&self) -> bool {
        self.imc_mismatch.is_none() && self.states.iter().all(|s| s.verdict == Verdict::Pass)
    }

    pub fn violations(&self) -> impl Iterator<Item = &StateRecord> {
        self.states.iter().filter(|s| s.verdict != Verdict::Pass)
    }
}

/// A coarser key that also unfolds unguarded constants, used only to tell
/// genuine violations from pairs the canonical keys fail to identify.
fn unfolded_key(c: &CanonicalForm, env: &DefEnv) -> Option<CanonicalForm> {
    let mut names = NameSupply::for_context(env, [c.repr()]);
    canonicalize(&c.repr().unfold_to_guarded(env, &mut names)).ok()
}

fn check_state(state: usize, c: &CanonicalForm, env: &DefEnv) -> Result<StateRecord, RestoreError> {
    let t = c.repr();
    let red = reduction_classes(t, env)?;
    let (tau_terms, markov) = internal_steps(t, env);
    let taus = tau_terms
        .iter()
        .map(|u| state_key(u, env))
        .collect::<Result<BTreeSet<_>, _>>()?;
    let sigma = stochastic_step(t, env)?;

    let mut gamma: BTreeMap<CanonicalForm, f64> = BTreeMap::new();
    for (r, _, u) in &markov {
        *gamma.entry(state_key(u, env)?).or_insert(0.0) += r.value();
    }
    let sigma_sums = sigma.as_ref().map(|s| s.aggregated()).unwrap_or_default();

    let reductions = red == taus;
    let stochastic = sigma.is_some() == !markov.is_empty();
    let classes: BTreeSet<&CanonicalForm> = gamma.keys().chain(sigma_sums.keys()).collect();
    let sums: Vec<ClassSum> = classes
        .iter()
        .map(|k| ClassSum {
            class: k.to_string(),
            sigma: sigma_sums.get(*k).copied().unwrap_or(0.0),
            gamma: gamma.get(*k).copied().unwrap_or(0.0),
        })
        .collect();
    let rates = sums
        .iter()
        .all(|s| (s.sigma - s.gamma).abs() <= RATE_TOLERANCE);

    let verdict = if reductions && stochastic && rates {
        Verdict::Pass
    } else if !stochastic {
        Verdict::Violation
    } else {
        let coarse_sets = |set: &BTreeSet<CanonicalForm>| -> BTreeSet<Option<CanonicalForm>> {
            set.iter().map(|c| unfolded_key(c, env)).collect()
        };
        let coarse_sums =
            |m: &BTreeMap<CanonicalForm, f64>| -> BTreeMap<Option<CanonicalForm>, f64> {
                let mut out = BTreeMap::new();
                for (c, v) in m {
                    *out.entry(unfolded_key(c, env)).or_insert(0.0) += v;
                }
                out
            };
        let red_ok = reductions || coarse_sets(&red) == coarse_sets(&taus);
        let (cs, cg) = (coarse_sums(&sigma_sums), coarse_sums(&gamma));
        let keys: BTreeSet<_> = cs.keys().chain(cg.keys()).collect();
        let rate_ok = rates
            || keys.into_iter().all(|k| {
                let x = cs.get(k).copied().unwrap_or(0.0);
                let y = cg.get(k).copied().unwrap_or(0.0);
                (x - y).abs() <= RATE_TOLERANCE
            });
        if red_ok && rate_ok {
            Verdict::PossibleCongruenceIncompleteness
        } else {
            Verdict::Violation
        }
    };

    Ok(StateRecord {
        state,
        key: c.to_string(),
        reductions,
        stochastic,
        rates,
        verdict,
        reduction_targets: red.iter().map(ToString::to_string).collect(),
        tau_targets: taus.iter().map(ToString::to_string).collect(),
        sums,
    })
}

/// Checks every state reachable under the reduction engine, then compares
/// the IMCs built by both engines.
pub fn check_harmony(spec: &SpecFile, max_states: usize) -> Result<HarmonyReport, ExploreError> {
    let imc = explore(spec, Semantics::Reduction, max_states)?;
    let states = imc
        .states
        .par_iter()
        .enumerate()
        .map(|(i, c)| check_state(i, c, &spec.defs))
        .collect::<Result<Vec<_>, _>>()?;
    let imc_mismatch = match explore(spec, Semantics::Labeled, max_states) {
        Ok(labeled) => compare_imcs(&imc, &labeled, RATE_TOLERANCE).err(),
        Err(ExploreError::StateBoundExceeded { bound, .. }) => {
            Some(format!("labeled exploration exceeds {bound} states"))
        }
        Err(e) => return Err(e),
    };
    Ok(HarmonyReport {
        states,
        imc_mismatch,
    })
}

/// Result of one generated spec in a corpus run.
#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub index: usize,
    pub seed: u64,
    pub spec: SpecFile,
    pub report: Result<HarmonyReport, String>,
}

/// Seed of the `i`-th spec of a corpus.
pub fn corpus_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(i as u64)
}

/// Generates and checks `count` specs in parallel; results are in index order.
pub fn run_corpus(seed: u64, count: usize, params: &GenParams) -> Vec<CorpusEntry> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = corpus_seed(seed, i);
            let spec = gen_spec(s, params);
            let report = check_harmony(&spec, params.max_states).map_err(|e| e.to_string());
            CorpusEntry {
                index: i,
                seed: s,
                spec,
                report,
            }
        })
        .collect()
}
