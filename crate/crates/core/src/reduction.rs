//! Reduction semantics: unlabeled reductions, symbolically quantified
//! transitions on stochastic names, and stochastic transitions yielding
//! rate distributions over congruence classes.

use std::collections::{BTreeMap, BTreeSet};

use crate::congruence::{fluidize, state_key, wrap_binders, CanonicalForm, RestoreError};
use crate::syntax::{DefEnv, Name, NameSupply, Prefix, Rate, Term};

/// A reduction (`label` is `None`) or a transition quantified by the free
/// stochastic name `label`.
#[derive(Clone, Debug, PartialEq)]
pub struct RedStep {
    pub label: Option<Name>,
    pub target: Term,
}

/// Finite non-empty multiset of (rate, target class) pairs, kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RateDistribution {
    entries: Vec<(Rate, CanonicalForm)>,
}

impl RateDistribution {
    pub fn from_entries(mut entries: Vec<(Rate, CanonicalForm)>) -> Option<Self> {
        if entries.is_empty() {
            return None;
        }
        entries.sort();
        Some(RateDistribution { entries })
    }

    pub fn entries(&self) -> &[(Rate, CanonicalForm)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of occurrences of the pair in the multiset.
    pub fn multiplicity(&self, rate: &Rate, class: &CanonicalForm) -> usize {
        self.entries
            .iter()
            .filter(|(r, c)| r == rate && c == class)
            .count()
    }

    /// Sum of `λ · multiplicity` over the pairs targeting `class`.
    pub fn rate_to(&self, class: &CanonicalForm) -> f64 {
        self.entries
            .iter()
            .filter(|(_, c)| c == class)
            .map(|(r, _)| r.value())
            .sum()
    }

    /// Total rate per target class.
    pub fn aggregated(&self) -> BTreeMap<CanonicalForm, f64> {
        let mut out = BTreeMap::new();
        for (r, c) in &self.entries {
            *out.entry(c.clone()).or_insert(0.0) += r.value();
        }
        out
    }
}

/// A guarded sum standing at an unguarded position.
struct Site<'a> {
    path: Vec<u8>,
    sum: &'a Term,
    /// Restrictions above the sum, outermost first, with their paths.
    binders: Vec<(Name, Vec<u8>)>,
}

fn collect_sites<'a>(
    t: &'a Term,
    path: &mut Vec<u8>,
    binders: &mut Vec<(Name, Vec<u8>)>,
    out: &mut Vec<Site<'a>>,
) {
    match t {
        Term::Nil | Term::Const(..) => {}
        Term::Par(l, r) => {
            path.push(0);
            collect_sites(l, path, binders, out);
            path.pop();
            path.push(1);
            collect_sites(r, path, binders, out);
            path.pop();
        }
        Term::Restrict(n, _, b) => {
            binders.push((n.clone(), path.clone()));
            path.push(0);
            collect_sites(b, path, binders, out);
            path.pop();
            binders.pop();
        }
        Term::Sum(..) | Term::Prefixed(..) => out.push(Site {
            path: path.clone(),
            sum: t,
            binders: binders.clone(),
        }),
    }
}

fn branches<'a>(t: &'a Term, out: &mut Vec<(&'a Prefix, &'a Term)>) {
    match t {
        Term::Prefixed(p, c) => out.push((p, c)),
        Term::Sum(l, r) => {
            branches(l, out);
            branches(r, out);
        }
        _ => {}
    }
}

fn edit_at(t: &Term, path: &[u8], f: &mut dyn FnMut(&Term) -> Term) -> Term {
    let Some((&first, rest)) = path.split_first() else {
        return f(t);
    };
    match t {
        Term::Par(l, r) if first == 0 => Term::par(edit_at(l, rest, f), (**r).clone()),
        Term::Par(l, r) => Term::par((**l).clone(), edit_at(r, rest, f)),
        Term::Restrict(n, a, b) => Term::restrict(n.clone(), a.clone(), edit_at(b, rest, f)),
        _ => unreachable!("paths only run through parallel and restriction nodes"),
    }
}

fn replace_at(t: &Term, path: &[u8], new: &Term) -> Term {
    edit_at(t, path, &mut |_| new.clone())
}

/// Uniquifies binders and unfolds constants until every unguarded position
/// holds a sum.
fn prepare(t: &Term, env: &DefEnv, names: &mut NameSupply) -> Term {
    t.uniquify(names)
        .unfold_to_guarded(env, names)
        .uniquify(names)
}

/// Steps of a prepared term.
fn raw_steps(u: &Term, names: &mut NameSupply) -> Vec<RedStep> {
    let mut sites = Vec::new();
    collect_sites(u, &mut Vec::new(), &mut Vec::new(), &mut sites);
    let site_branches: Vec<Vec<(&Prefix, &Term)>> = sites
        .iter()
        .map(|s| {
            let mut b = Vec::new();
            branches(s.sum, &mut b);
            b
        })
        .collect();

    let mut out = Vec::new();
    for (site, bs) in sites.iter().zip(&site_branches) {
        for (p, cont) in bs {
            match p {
                Prefix::Tau => out.push(RedStep {
                    label: None,
                    target: replace_at(u, &site.path, cont),
                }),
                Prefix::SymbolicDelay(q) if !site.binders.iter().any(|(n, _)| n == q) => {
                    out.push(RedStep {
                        label: Some(q.clone()),
                        target: replace_at(u, &site.path, cont),
                    })
                }
                _ => {}
            }
        }
    }

    for (i, (si, bi)) in sites.iter().zip(&site_branches).enumerate() {
        for (j, (sj, bj)) in sites.iter().zip(&site_branches).enumerate() {
            if i == j {
                continue;
            }
            for (pi, ci) in bi {
                let Prefix::Input {
                    subject: x,
                    bound: z,
                } = pi
                else {
                    continue;
                };
                for (pj, cj) in bj {
                    let Prefix::Output {
                        subject: x2,
                        object: y,
                    } = pj
                    else {
                        continue;
                    };
                    if x != x2 {
                        continue;
                    }
                    let map = [(z.clone(), y.clone())].into_iter().collect();
                    let received = ci.substitute(&map, names);
                    let t = replace_at(u, &si.path, &received);
                    let mut t = replace_at(&t, &sj.path, cj);
                    let lca = common_prefix(&si.path, &sj.path);
                    // Extrude the object's restriction so it covers the receiver.
                    if let Some((_, bpath)) = sj.binders.iter().rev().find(|(n, _)| n == y) {
                        if bpath.len() > lca.len() {
                            let mut anno = None;
                            t = edit_at(&t, bpath, &mut |node| match node {
                                Term::Restrict(_, a, b) => {
                                    anno = a.clone();
                                    (**b).clone()
                                }
                                _ => unreachable!("binder path points at a restriction"),
                            });
                            t = edit_at(&t, lca, &mut |node| {
                                Term::restrict(y.clone(), anno.clone(), node.clone())
                            });
                        }
                    }
                    out.push(RedStep {
                        label: None,
                        target: t,
                    });
                }
            }
        }
    }
    out
}

fn common_prefix<'a>(a: &'a [u8], b: &[u8]) -> &'a [u8] {
    let n = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    &a[..n]
}

/// All reductions and symbolically quantified transitions of `t`, with raw
/// (unrestored) targets. Accepts any extended-syntax term.
pub fn reduce_extended(t: &Term, env: &DefEnv) -> Vec<RedStep> {
    let mut names = NameSupply::for_context(env, [t]);
    let u = prepare(t, env, &mut names);
    raw_steps(&u, &mut names)
}

/// All steps of a restorable term; targets are restored and constants
/// folded back.
pub fn reduce(t: &Term, env: &DefEnv) -> Result<Vec<RedStep>, RestoreError> {
    crate::congruence::restore(t)?;
    reduce_extended(t, env)
        .into_iter()
        .map(|s| {
            let target =
                crate::congruence::fold_constants(&crate::congruence::restore(&s.target)?, env);
            Ok(RedStep {
                label: s.label,
                target,
            })
        })
        .collect()
}

/// Target classes of the reductions of the process denoted by `t`.
pub fn reduction_classes(t: &Term, env: &DefEnv) -> Result<BTreeSet<CanonicalForm>, RestoreError> {
    reduce_extended(&crate::congruence::restore(t)?, env)
        .into_iter()
        .filter(|s| s.label.is_none())
        .map(|s| state_key(&s.target, env))
        .collect()
}

/// The stochastic transition of `t` with raw targets: one `(λ, target)` per
/// unguarded delay, targets keeping every stochastic binder.
pub fn stochastic_raw(t: &Term, env: &DefEnv) -> Option<Vec<(Rate, Term)>> {
    let mut names = NameSupply::for_context(env, [t]);
    let fluid = fluidize(t, env, &mut names);
    if fluid.binders.is_empty() {
        return None;
    }
    let mut sites = Vec::new();
    collect_sites(&fluid.body, &mut Vec::new(), &mut Vec::new(), &mut sites);
    let mut by_name: BTreeMap<&Name, Term> = BTreeMap::new();
    for site in &sites {
        let mut bs = Vec::new();
        branches(site.sum, &mut bs);
        for (p, cont) in bs {
            if let Prefix::SymbolicDelay(q) = p {
                by_name.insert(q, replace_at(&fluid.body, &site.path, cont));
            }
        }
    }
    Some(
        fluid
            .binders
            .iter()
            .map(|(q, rate)| {
                let target = by_name.get(q).expect("every binder has one occurrence");
                (rate.clone(), fluid.wrap(target.clone()))
            })
            .collect(),
    )
}

/// The rate distribution of the process denoted by `t`, or `None` when it
/// has no unguarded delay.
pub fn stochastic_step(t: &Term, env: &DefEnv) -> Result<Option<RateDistribution>, RestoreError> {
    let Some(raw) = stochastic_raw(&crate::congruence::restore(t)?, env) else {
        return Ok(None);
    };
    let entries = raw
        .into_iter()
        .map(|(r, u)| Ok((r, state_key(&u, env)?)))
        .collect::<Result<Vec<_>, RestoreError>>()?;
    Ok(RateDistribution::from_entries(entries))
}

/// Builds the rate distribution by nesting the stochastic binders in the
/// given order (`order[0]` outermost, indices into the left-to-right delay
/// positions) and deriving it rule by rule: every binder above the
/// innermost adds its own delay to the distribution of its body, the
/// innermost one starts it.
///
/// # Panics
/// If `order` is not a permutation of `0..n` for the `n` unguarded delays.
pub fn sigma_via_order(
    t: &Term,
    env: &DefEnv,
    order: &[usize],
) -> Result<Option<RateDistribution>, RestoreError> {
    let t = &crate::congruence::restore(t)?;
    let mut names = NameSupply::for_context(env, [t]);
    let fluid = fluidize(t, env, &mut names);
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    assert!(
        sorted.iter().copied().eq(0..fluid.binders.len()),
        "order must permute the {} delay positions",
        fluid.binders.len()
    );
    if fluid.binders.is_empty() {
        return Ok(None);
    }
    let binders: Vec<(Name, Rate)> = order.iter().map(|&i| fluid.binders[i].clone()).collect();
    let nested = wrap_binders(&binders, fluid.body.clone());
    let Some(raw) = derive_sigma(&nested) else {
        return Ok(None);
    };
    let entries = raw
        .into_iter()
        .map(|(r, u)| Ok((r, state_key(&u, env)?)))
        .collect::<Result<Vec<_>, RestoreError>>()?;
    Ok(RateDistribution::from_entries(entries))
}

fn derive_sigma(t: &Term) -> Option<Vec<(Rate, Term)>> {
    let Term::Restrict(q, Some(rate), body) = t else {
        return None;
    };
    let moved = symbolic_step(body, q)?;
    let wrap = |u: Term| Term::restrict(q.clone(), Some(rate.clone()), u);
    let mut out: Vec<(Rate, Term)> = derive_sigma(body)
        .unwrap_or_default()
        .into_iter()
        .map(|(r, u)| (r, wrap(u)))
        .collect();
    out.push((rate.clone(), wrap(moved)));
    Some(out)
}

/// The `q`-step of `t`, if `q` is free at one of its unguarded delays.
fn symbolic_step(t: &Term, q: &Name) -> Option<Term> {
    let mut sites = Vec::new();
    collect_sites(t, &mut Vec::new(), &mut Vec::new(), &mut sites);
    for site in &sites {
        if site.binders.iter().any(|(n, _)| n == q) {
            continue;
        }
        let mut bs = Vec::new();
        branches(site.sum, &mut bs);
        for (p, cont) in bs {
            if matches!(p, Prefix::SymbolicDelay(n) if n == q) {
                return Some(replace_at(t, &site.path, cont));
            }
        }
    }
    None
}
