//! Reachable state spaces as interactive Markov chains, CTMC extraction
//! under maximal progress, steady-state solving and DOT/CSV export.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use thiserror::Error;

use crate::congruence::{state_key, CanonicalForm, RestoreError};
use crate::labeled::{internal_steps, Identifier};
use crate::parser::SpecFile;
use crate::reduction::{reduction_classes, stochastic_step};
use crate::syntax::{DefEnv, Rate, Term};

pub const DEFAULT_MAX_STATES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Semantics {
    Labeled,
    Reduction,
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Semantics::Labeled => "labeled",
            Semantics::Reduction => "reduction",
        })
    }
}

impl FromStr for Semantics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "labeled" => Ok(Semantics::Labeled),
            "reduction" => Ok(Semantics::Reduction),
            other => Err(format!(
                "unknown semantics `{other}` (expected labeled or reduction)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("state bound {bound} exceeded with {} unexplored states", frontier.len())]
    StateBoundExceeded { bound: usize, frontier: Vec<String> },
    #[error(transparent)]
    Restore(#[from] RestoreError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovEdge {
    pub src: usize,
    pub rate: Rate,
    pub dst: usize,
    /// Identifier of the underlying labeled transition, when built by the
    /// labeled engine.
    pub id: Option<Identifier>,
}

/// Interactive Markov chain over congruence classes.
#[derive(Clone, Debug)]
pub struct Imc {
    pub states: Vec<CanonicalForm>,
    pub initial: usize,
    pub tau_edges: BTreeSet<(usize, usize)>,
    /// Multiset of Markovian edges, sorted by source.
    pub markov_edges: Vec<MarkovEdge>,
    pub provenance: Semantics,
}

impl Imc {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, c: &CanonicalForm) -> Option<usize> {
        self.states.iter().position(|s| s == c)
    }

    pub fn tau_successors(&self, s: usize) -> BTreeSet<usize> {
        self.tau_edges
            .range((s, 0)..=(s, usize::MAX))
            .map(|&(_, d)| d)
            .collect()
    }

    pub fn has_tau(&self, s: usize) -> bool {
        self.tau_edges
            .range((s, 0)..=(s, usize::MAX))
            .next()
            .is_some()
    }

    /// Markovian edges leaving `s`; relies on edges being sorted by source.
    pub fn markov_from(&self, s: usize) -> impl Iterator<Item = &MarkovEdge> {
        let lo = self.markov_edges.partition_point(|e| e.src < s);
        let hi = self.markov_edges.partition_point(|e| e.src <= s);
        self.markov_edges[lo..hi].iter()
    }

    /// Aggregated Markovian rate from `s` to each target, self-loops included.
    pub fn rates_from(&self, s: usize) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for e in self.markov_from(s) {
            *out.entry(e.dst).or_insert(0.0) += e.rate.value();
        }
        out
    }
}

struct Successors {
    taus: BTreeSet<CanonicalForm>,
    markov: Vec<(Rate, Option<Identifier>, CanonicalForm)>,
}

fn successors(t: &Term, env: &DefEnv, semantics: Semantics) -> Result<Successors, RestoreError> {
    match semantics {
        Semantics::Reduction => {
            let taus = reduction_classes(t, env)?;
            let markov = stochastic_step(t, env)?
                .map(|sigma| {
                    sigma
                        .entries()
                        .iter()
                        .map(|(r, c)| (r.clone(), None, c.clone()))
                        .collect()
                })
                .unwrap_or_default();
            Ok(Successors { taus, markov })
        }
        Semantics::Labeled => {
            let (tau_targets, markov_targets) = internal_steps(t, env);
            let taus = tau_targets
                .iter()
                .map(|u| state_key(u, env))
                .collect::<Result<_, _>>()?;
            let mut markov = markov_targets
                .into_iter()
                .map(|(r, id, u)| Ok((r, Some(id), state_key(&u, env)?)))
                .collect::<Result<Vec<_>, RestoreError>>()?;
            markov.sort_by(|a, b| (&a.2, &a.0, &a.1).cmp(&(&b.2, &b.0, &b.1)));
            Ok(Successors { taus, markov })
        }
    }
}

/// Breadth-first exploration from the class of `main`. States are numbered
/// in discovery order, the successors of each state in key order.
pub fn explore(
    spec: &SpecFile,
    semantics: Semantics,
    max_states: usize,
) -> Result<Imc, ExploreError> {
    explore_while(spec, semantics, max_states, &|_| true)
        .map(|imc| imc.expect("every state admitted"))
}

/// Like [`explore`], but stops with `None` as soon as a discovered state
/// fails `admit`.
pub(crate) fn explore_while(
    spec: &SpecFile,
    semantics: Semantics,
    max_states: usize,
    admit: &(dyn Fn(&CanonicalForm) -> bool + Sync),
) -> Result<Option<Imc>, ExploreError> {
    let env = &spec.defs;
    let initial = state_key(&spec.main, env)?;
    if max_states == 0 {
        return Err(ExploreError::StateBoundExceeded {
            bound: 0,
            frontier: vec![initial.to_string()],
        });
    }
    if !admit(&initial) {
        return Ok(None);
    }
    let mut states = vec![initial.clone()];
    let mut index: HashMap<CanonicalForm, usize> = HashMap::from([(initial, 0)]);
    let mut tau_edges = BTreeSet::new();
    let mut markov_edges = Vec::new();

    let mut layer: Vec<usize> = vec![0];
    while !layer.is_empty() {
        let expanded: Vec<Result<Successors, RestoreError>> = layer
            .par_iter()
            .map(|&s| successors(states[s].repr(), env, semantics))
            .collect();
        let mut next = Vec::new();
        for (&src, succ) in layer.iter().zip(expanded) {
            let succ = succ?;
            let discovered: BTreeSet<&CanonicalForm> = succ
                .taus
                .iter()
                .chain(succ.markov.iter().map(|(_, _, c)| c))
                .collect();
            for c in discovered {
                if !index.contains_key(c) {
                    if states.len() >= max_states {
                        let mut frontier: Vec<String> = next
                            .iter()
                            .map(|&i: &usize| states[i].to_string())
                            .collect();
                        frontier.push(c.to_string());
                        return Err(ExploreError::StateBoundExceeded {
                            bound: max_states,
                            frontier,
                        });
                    }
                    if !admit(c) {
                        return Ok(None);
                    }
                    index.insert(c.clone(), states.len());
                    next.push(states.len());
                    states.push(c.clone());
                }
            }
            for c in &succ.taus {
                tau_edges.insert((src, index[c]));
            }
            for (rate, id, c) in succ.markov {
                markov_edges.push(MarkovEdge {
                    src,
                    rate,
                    dst: index[&c],
                    id,
                });
            }
        }
        layer = next;
    }
    Ok(Some(Imc {
        states,
        initial: 0,
        tau_edges,
        markov_edges,
        provenance: semantics,
    }))
}

/// Checks that two IMCs over the same keys agree: same states, initial
/// state, τ edges, and aggregated rates within `tol`. Both explorations
/// number states identically when they agree, so the bijection is the
/// identity on keys.
pub fn compare_imcs(a: &Imc, b: &Imc, tol: f64) -> Result<(), String> {
    if a.states != b.states {
        let sa: BTreeSet<_> = a.states.iter().collect();
        let sb: BTreeSet<_> = b.states.iter().collect();
        if let Some(s) = sa.difference(&sb).next() {
            return Err(format!("state {s} only reached under {}", a.provenance));
        }
        if let Some(s) = sb.difference(&sa).next() {
            return Err(format!("state {s} only reached under {}", b.provenance));
        }
        return Err("state numbering differs".into());
    }
    if a.initial != b.initial {
        return Err("initial states differ".into());
    }
    if a.tau_edges != b.tau_edges {
        let (s, d) = a
            .tau_edges
            .symmetric_difference(&b.tau_edges)
            .next()
            .copied()
            .expect("sets differ");
        return Err(format!(
            "tau edge {} -> {} differs",
            a.states[s], a.states[d]
        ));
    }
    for s in 0..a.len() {
        let (ra, rb) = (a.rates_from(s), b.rates_from(s));
        let targets: BTreeSet<usize> = ra.keys().chain(rb.keys()).copied().collect();
        for d in targets {
            let (x, y) = (
                ra.get(&d).copied().unwrap_or(0.0),
                rb.get(&d).copied().unwrap_or(0.0),
            );
            if (x - y).abs() > tol {
                return Err(format!(
                    "rate {} -> {}: {x} under {} vs {y} under {}",
                    a.states[s], a.states[d], a.provenance, b.provenance
                ));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CtmcError {
    #[error("state {state} has {} distinct tau successors", successors.len())]
    NondeterministicTau {
        state: usize,
        successors: Vec<usize>,
    },
    #[error("tau cycle without Markovian exit through states {cycle:?}")]
    TauDivergence { cycle: Vec<usize> },
}

/// Continuous-time Markov chain over the τ-stable states of an IMC.
#[derive(Clone, Debug)]
pub struct Ctmc {
    /// IMC index of each CTMC state.
    pub imc_states: Vec<usize>,
    pub labels: Vec<String>,
    pub initial: usize,
    /// Off-diagonal generator entries per row.
    pub rates: Vec<BTreeMap<usize, f64>>,
}

impl Ctmc {
    pub fn len(&self) -> usize {
        self.imc_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.imc_states.is_empty()
    }

    pub fn exit_rate(&self, s: usize) -> f64 {
        self.rates[s].values().sum()
    }

    /// Dense generator matrix; each diagonal entry is minus the sum of its
    /// row's off-diagonal entries.
    pub fn generator(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut q = DMatrix::zeros(n, n);
        for (i, row) in self.rates.iter().enumerate() {
            for (&j, &r) in row {
                q[(i, j)] = r;
            }
            q[(i, i)] = -self.exit_rate(i);
        }
        q
    }
}

/// Collapses τ chains (maximal progress) and builds the generator of the
/// remaining reachable τ-stable states. Markovian self-loops disappear.
pub fn extract_ctmc(imc: &Imc) -> Result<Ctmc, CtmcError> {
    for s in 0..imc.len() {
        let succ = imc.tau_successors(s);
        if succ.len() > 1 {
            return Err(CtmcError::NondeterministicTau {
                state: s,
                successors: succ.into_iter().collect(),
            });
        }
    }
    let mut endpoint: Vec<Option<usize>> = vec![None; imc.len()];
    for s in 0..imc.len() {
        let mut chain = vec![s];
        let mut cur = s;
        let end = loop {
            if let Some(e) = endpoint[cur] {
                break e;
            }
            match imc.tau_successors(cur).into_iter().next() {
                None => break cur,
                Some(d) => {
                    if let Some(pos) = chain.iter().position(|&c| c == d) {
                        return Err(CtmcError::TauDivergence {
                            cycle: chain[pos..].to_vec(),
                        });
                    }
                    chain.push(d);
                    cur = d;
                }
            }
        };
        for c in chain {
            endpoint[c] = Some(end);
        }
    }
    let endpoint: Vec<usize> = endpoint.into_iter().map(|e| e.expect("resolved")).collect();

    let start = endpoint[imc.initial];
    let mut reached = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(s) = stack.pop() {
        for e in imc.markov_from(s) {
            let d = endpoint[e.dst];
            if reached.insert(d) {
                stack.push(d);
            }
        }
    }
    let imc_states: Vec<usize> = reached.into_iter().collect();
    let pos: HashMap<usize, usize> = imc_states
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i))
        .collect();
    let rates = imc_states
        .iter()
        .map(|&s| {
            let mut row = BTreeMap::new();
            for e in imc.markov_from(s) {
                let d = pos[&endpoint[e.dst]];
                if d != pos[&s] {
                    *row.entry(d).or_insert(0.0) += e.rate.value();
                }
            }
            row
        })
        .collect();
    Ok(Ctmc {
        labels: imc_states
            .iter()
            .map(|&s| imc.states[s].to_string())
            .collect(),
        initial: pos[&start],
        imc_states,
        rates,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SteadyStateError {
    #[error("chain is reducible; strongly connected components {components:?}")]
    Reducible { components: Vec<Vec<usize>> },
    #[error("balance equations are singular")]
    Singular,
}

/// Solves `πQ = 0`, `Σπ = 1` for an irreducible chain.
pub fn steady_state(ctmc: &Ctmc) -> Result<Vec<f64>, SteadyStateError> {
    let n = ctmc.len();
    let mut graph = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (i, row) in ctmc.rates.iter().enumerate() {
        for (&j, &r) in row {
            if r > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    if sccs.len() > 1 {
        let mut components: Vec<Vec<usize>> = sccs
            .into_iter()
            .map(|c| {
                let mut v: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        components.sort();
        return Err(SteadyStateError::Reducible { components });
    }
    let mut a = ctmc.generator().transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(SteadyStateError::Singular)?;
    Ok(pi.iter().copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(ExportFormat::Dot),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(format!("unknown format `{other}` (expected dot or csv)")),
        }
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn export_imc(imc: &Imc, format: ExportFormat) -> String {
    let mut out = String::new();
    match format {
        ExportFormat::Dot => {
            out.push_str("digraph imc {\n");
            for (i, s) in imc.states.iter().enumerate() {
                let shape = if i == imc.initial {
                    ", shape=doublecircle"
                } else {
                    ""
                };
                let _ = writeln!(
                    out,
                    "  {i} [label=\"{}\"{shape}];",
                    dot_escape(&s.to_string())
                );
            }
            for s in 0..imc.len() {
                for d in imc.tau_successors(s) {
                    let _ = writeln!(out, "  {s} -> {d} [label=\"τ\", style=dashed];");
                }
                for e in imc.markov_from(s) {
                    let _ = writeln!(out, "  {} -> {} [label=\"λ={}\"];", e.src, e.dst, e.rate);
                }
            }
            out.push_str("}\n");
        }
        ExportFormat::Csv => {
            for s in 0..imc.len() {
                for d in imc.tau_successors(s) {
                    let _ = writeln!(out, "{s},{d},tau");
                }
                for e in imc.markov_from(s) {
                    let _ = writeln!(out, "{},{},{}", e.src, e.dst, e.rate);
                }
            }
        }
    }
    out
}

pub fn export_ctmc(ctmc: &Ctmc, format: ExportFormat) -> String {
    let mut out = String::new();
    match format {
        ExportFormat::Dot => {
            out.push_str("digraph ctmc {\n");
            for (i, l) in ctmc.labels.iter().enumerate() {
                let shape = if i == ctmc.initial {
                    ", shape=doublecircle"
                } else {
                    ""
                };
                let _ = writeln!(out, "  {i} [label=\"{}\"{shape}];", dot_escape(l));
            }
            for (i, row) in ctmc.rates.iter().enumerate() {
                for (j, r) in row {
                    let _ = writeln!(out, "  {i} -> {j} [label=\"λ={r}\"];");
                }
            }
            out.push_str("}\n");
        }
        ExportFormat::Csv => {
            for (i, row) in ctmc.rates.iter().enumerate() {
                for (j, r) in row {
                    let _ = writeln!(out, "{i},{j},{r}");
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn spec(src: &str) -> SpecFile {
        parse(src).unwrap()
    }

    const TWIN_LOOP: &str = "A() := (5).A()  main := A() | A()";
    const CYCLE: &str = "A() := (2).B()  B() := (3).A()  main := A()";

    #[test]
    fn twin_loop_single_state() {
        for sem in [Semantics::Reduction, Semantics::Labeled] {
            let imc = explore(&spec(TWIN_LOOP), sem, 100).unwrap();
            assert_eq!(imc.len(), 1);
            assert!(imc.tau_edges.is_empty());
            assert_eq!(imc.markov_edges.len(), 2);
            assert!(imc
                .markov_edges
                .iter()
                .all(|e| e.src == 0 && e.dst == 0 && e.rate.as_str() == "5"));
            assert_eq!(imc.rates_from(0)[&0], 10.0);
        }
    }

    #[test]
    fn nil_spec() {
        let imc = explore(&spec("main := 0"), Semantics::Reduction, 10).unwrap();
        assert_eq!(imc.len(), 1);
        assert!(imc.tau_edges.is_empty() && imc.markov_edges.is_empty());
        let dot = export_imc(&imc, ExportFormat::Dot);
        assert_eq!(
            dot,
            "digraph imc {\n  0 [label=\"0\", shape=doublecircle];\n}\n"
        );
        assert_eq!(export_imc(&imc, ExportFormat::Csv), "");
    }

    #[test]
    fn two_state_cycle() {
        let s = spec(CYCLE);
        let a = explore(&s, Semantics::Reduction, 10).unwrap();
        let b = explore(&s, Semantics::Labeled, 10).unwrap();
        assert_eq!(a.len(), 2);
        compare_imcs(&a, &b, 1e-9).unwrap();
        assert_eq!(export_imc(&a, ExportFormat::Csv), "0,1,2\n1,0,3\n");
        let ctmc = extract_ctmc(&a).unwrap();
        let q = ctmc.generator();
        assert_eq!(q, DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 3.0, -3.0]));
        let pi = steady_state(&ctmc).unwrap();
        assert!((pi[0] - 0.6).abs() < 1e-12 && (pi[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn twin_loop_ctmc_is_trivial() {
        let imc = explore(&spec(TWIN_LOOP), Semantics::Reduction, 10).unwrap();
        let ctmc = extract_ctmc(&imc).unwrap();
        assert_eq!(ctmc.generator(), DMatrix::from_element(1, 1, 0.0));
        assert_eq!(steady_state(&ctmc).unwrap(), vec![1.0]);
        let dot = export_imc(&imc, ExportFormat::Dot);
        assert_eq!(dot.matches("0 -> 0 [label=\"λ=5\"]").count(), 2);
    }

    #[test]
    fn nondeterministic_tau() {
        let imc = explore(
            &spec("main := tau.a<b>.0 + tau.0"),
            Semantics::Reduction,
            10,
        )
        .unwrap();
        assert!(matches!(
            extract_ctmc(&imc),
            Err(CtmcError::NondeterministicTau { state: 0, .. })
        ));
    }

    #[test]
    fn tau_divergence() {
        let imc = explore(
            &spec("A() := tau.A()  main := A()"),
            Semantics::Reduction,
            10,
        )
        .unwrap();
        assert_eq!(
            extract_ctmc(&imc).unwrap_err(),
            CtmcError::TauDivergence { cycle: vec![0] }
        );
    }

    #[test]
    fn maximal_progress_collapses_tau() {
        let src = "A() := (1).tau.B()  B() := (4).A() + tau.C()  C() := (2).A()  main := A()";
        let imc = explore(&spec(src), Semantics::Reduction, 10).unwrap();
        let ctmc = extract_ctmc(&imc).unwrap();
        // A --1--> (tau to B, tau to C) = C --2--> A
        assert_eq!(ctmc.len(), 2);
        let pi = steady_state(&ctmc).unwrap();
        assert!((pi[ctmc.initial] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_three_cycle() {
        let src = "A() := (1).B()  B() := (1).C()  C() := (1).A()  main := A()";
        let ctmc = extract_ctmc(&explore(&spec(src), Semantics::Reduction, 10).unwrap()).unwrap();
        for p in steady_state(&ctmc).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reducible_chain() {
        let ctmc =
            extract_ctmc(&explore(&spec("main := (1).0"), Semantics::Reduction, 10).unwrap())
                .unwrap();
        assert!(matches!(
            steady_state(&ctmc),
            Err(SteadyStateError::Reducible { .. })
        ));
    }

    #[test]
    fn bound_exceeded() {
        let src = "A() := tau.(A() | A())  main := A()";
        match explore(&spec(src), Semantics::Reduction, 5) {
            Err(ExploreError::StateBoundExceeded { bound: 5, frontier }) => {
                assert!(!frontier.is_empty())
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exploration_is_deterministic() {
        let src = "A(x) := x(y).(y<x>.0 | A(x)) + (2).tau.A(x)  main := new c in (A(c) | c<d>.0)";
        let a = explore(&spec(src), Semantics::Reduction, 200).unwrap();
        let b = explore(&spec(src), Semantics::Reduction, 200).unwrap();
        assert_eq!(
            export_imc(&a, ExportFormat::Dot),
            export_imc(&b, ExportFormat::Dot)
        );
        let l = explore(&spec(src), Semantics::Labeled, 200).unwrap();
        compare_imcs(&a, &l, 1e-9).unwrap();
    }
}
