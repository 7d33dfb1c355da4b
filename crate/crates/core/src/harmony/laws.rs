//! Single-step rewriting with the structural congruence laws, used as an
//! independent oracle for canonical keys.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::syntax::{Name, NameKind, NameSupply, Prefix, Rate, Term};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Law {
    SumComm,
    SumAssoc,
    SumUnit,
    ParComm,
    ParAssoc,
    ParUnit,
    Extrusion,
    BinderSwap,
    BinderNil,
    DelayBinder,
    Alpha,
}

impl Law {
    pub const ALL: [Law; 11] = [
        Law::SumComm,
        Law::SumAssoc,
        Law::SumUnit,
        Law::ParComm,
        Law::ParAssoc,
        Law::ParUnit,
        Law::Extrusion,
        Law::BinderSwap,
        Law::BinderNil,
        Law::DelayBinder,
        Law::Alpha,
    ];

    /// Laws whose rewrites never create names or grow the term.
    pub const SHUFFLES: [Law; 5] = [
        Law::SumComm,
        Law::SumAssoc,
        Law::ParComm,
        Law::ParAssoc,
        Law::BinderSwap,
    ];
}

impl fmt::Display for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Process,
    Summand,
}

/// Every term obtained from `t` by one application of one of `laws`, in
/// either direction, at any position.
pub fn rewrites(t: &Term, laws: &[Law], names: &mut NameSupply) -> Vec<(Law, Term)> {
    names.reserve_term(t);
    let mut out = Vec::new();
    at(t, Slot::Process, laws, names, &mut out);
    out
}

fn at(t: &Term, slot: Slot, laws: &[Law], names: &mut NameSupply, out: &mut Vec<(Law, Term)>) {
    local(t, slot, laws, names, out);
    match t {
        Term::Nil | Term::Const(..) => {}
        Term::Prefixed(p, c) => {
            let mut inner = Vec::new();
            at(c, Slot::Process, laws, names, &mut inner);
            out.extend(
                inner
                    .into_iter()
                    .map(|(l, c2)| (l, Term::prefixed(p.clone(), c2))),
            );
        }
        Term::Sum(l, r) => {
            let mut inner = Vec::new();
            at(l, Slot::Summand, laws, names, &mut inner);
            out.extend(
                inner
                    .drain(..)
                    .map(|(law, l2)| (law, Term::sum(l2, (**r).clone()))),
            );
            at(r, Slot::Summand, laws, names, &mut inner);
            out.extend(
                inner
                    .into_iter()
                    .map(|(law, r2)| (law, Term::sum((**l).clone(), r2))),
            );
        }
        Term::Par(l, r) => {
            let mut inner = Vec::new();
            at(l, Slot::Process, laws, names, &mut inner);
            out.extend(
                inner
                    .drain(..)
                    .map(|(law, l2)| (law, Term::par(l2, (**r).clone()))),
            );
            at(r, Slot::Process, laws, names, &mut inner);
            out.extend(
                inner
                    .into_iter()
                    .map(|(law, r2)| (law, Term::par((**l).clone(), r2))),
            );
        }
        Term::Restrict(n, a, b) => {
            let mut inner = Vec::new();
            at(b, Slot::Process, laws, names, &mut inner);
            out.extend(
                inner
                    .into_iter()
                    .map(|(law, b2)| (law, Term::restrict(n.clone(), a.clone(), b2))),
            );
        }
    }
    // Alpha renaming of an input binder rewrites the prefix itself.
    if laws.contains(&Law::Alpha) {
        if let Term::Prefixed(Prefix::Input { subject, bound }, c) = t {
            let fresh = names.fresh(bound);
            let cont = rename_free(c, bound, &fresh);
            out.push((Law::Alpha, Term::input(subject.clone(), fresh, cont)));
        }
    }
}

fn local(t: &Term, slot: Slot, laws: &[Law], names: &mut NameSupply, out: &mut Vec<(Law, Term)>) {
    let has = |l: Law| laws.contains(&l);
    let is_sum = t.is_guarded_sum();
    if has(Law::SumComm) {
        if let Term::Sum(l, r) = t {
            out.push((Law::SumComm, Term::sum((**r).clone(), (**l).clone())));
        }
    }
    if has(Law::SumAssoc) {
        if let Term::Sum(l, r) = t {
            if let Term::Sum(a, b) = &**l {
                out.push((
                    Law::SumAssoc,
                    Term::sum((**a).clone(), Term::sum((**b).clone(), (**r).clone())),
                ));
            }
            if let Term::Sum(b, c) = &**r {
                out.push((
                    Law::SumAssoc,
                    Term::sum(Term::sum((**l).clone(), (**b).clone()), (**c).clone()),
                ));
            }
        }
    }
    if has(Law::SumUnit) && is_sum {
        out.push((Law::SumUnit, Term::sum(t.clone(), Term::Nil)));
        if let Term::Sum(l, r) = t {
            if **r == Term::Nil {
                out.push((Law::SumUnit, (**l).clone()));
            }
        }
    }
    if slot == Slot::Summand {
        return;
    }
    if has(Law::ParComm) {
        if let Term::Par(l, r) = t {
            out.push((Law::ParComm, Term::par((**r).clone(), (**l).clone())));
        }
    }
    if has(Law::ParAssoc) {
        if let Term::Par(l, r) = t {
            if let Term::Par(a, b) = &**l {
                out.push((
                    Law::ParAssoc,
                    Term::par((**a).clone(), Term::par((**b).clone(), (**r).clone())),
                ));
            }
            if let Term::Par(b, c) = &**r {
                out.push((
                    Law::ParAssoc,
                    Term::par(Term::par((**l).clone(), (**b).clone()), (**c).clone()),
                ));
            }
        }
    }
    if has(Law::ParUnit) {
        out.push((Law::ParUnit, Term::par(t.clone(), Term::Nil)));
        if let Term::Par(l, r) = t {
            if **r == Term::Nil {
                out.push((Law::ParUnit, (**l).clone()));
            }
        }
    }
    if has(Law::Extrusion) {
        if let Term::Par(l, r) = t {
            if let Term::Restrict(x, a, p) = &**l {
                let (x2, p2) = if r.is_free(x) {
                    let y = names.fresh(x);
                    let p2 = rename_free(p, x, &y);
                    (y, p2)
                } else {
                    (x.clone(), (**p).clone())
                };
                out.push((
                    Law::Extrusion,
                    Term::restrict(x2, a.clone(), Term::par(p2, (**r).clone())),
                ));
            }
        }
        if let Term::Restrict(x, a, body) = t {
            if let Term::Par(p, q) = &**body {
                if !q.is_free(x) {
                    out.push((
                        Law::Extrusion,
                        Term::par(
                            Term::restrict(x.clone(), a.clone(), (**p).clone()),
                            (**q).clone(),
                        ),
                    ));
                }
                if !p.is_free(x) {
                    out.push((
                        Law::Extrusion,
                        Term::par(
                            (**p).clone(),
                            Term::restrict(x.clone(), a.clone(), (**q).clone()),
                        ),
                    ));
                }
            }
        }
    }
    if has(Law::BinderSwap) {
        if let Term::Restrict(x, a, body) = t {
            if let Term::Restrict(y, b, p) = &**body {
                if x != y {
                    out.push((
                        Law::BinderSwap,
                        Term::restrict(
                            y.clone(),
                            b.clone(),
                            Term::restrict(x.clone(), a.clone(), (**p).clone()),
                        ),
                    ));
                }
            }
        }
    }
    if has(Law::BinderNil) {
        match t {
            Term::Restrict(_, _, b) if **b == Term::Nil => out.push((Law::BinderNil, Term::Nil)),
            Term::Nil => {
                let x = names.fresh(&Name::channel("z"));
                out.push((Law::BinderNil, Term::new_channel(x, Term::Nil)));
                let q = names.fresh(&Name::stochastic("q"));
                let rate = Rate::parse("7").expect("valid");
                out.push((Law::BinderNil, Term::restrict(q, Some(rate), Term::Nil)));
            }
            _ => {}
        }
    }
    if has(Law::DelayBinder) {
        if is_sum && !matches!(t, Term::Nil) {
            let mut branches = Vec::new();
            collect_branches(t, &mut Vec::new(), &mut branches);
            for (path, rate) in branches {
                let q = names.fresh(&Name::stochastic("q"));
                let body = edit_branch(t, &path, &mut |p| match p {
                    Term::Prefixed(_, c) => {
                        Term::prefixed(Prefix::SymbolicDelay(q.clone()), (**c).clone())
                    }
                    _ => unreachable!(),
                });
                out.push((Law::DelayBinder, Term::restrict(q, Some(rate), body)));
            }
        }
        if let Term::Restrict(q, Some(rate), body) = t {
            if q.kind() == NameKind::Stochastic
                && body.is_guarded_sum()
                && occurrences(body, q) == 1
            {
                let mut top = Vec::new();
                symbolic_branches(body, q, &mut Vec::new(), &mut top);
                if let Some(path) = top.first() {
                    let inlined = edit_branch(body, path, &mut |p| match p {
                        Term::Prefixed(_, c) => Term::delay(rate.clone(), (**c).clone()),
                        _ => unreachable!(),
                    });
                    out.push((Law::DelayBinder, inlined));
                }
            }
        }
    }
    if has(Law::Alpha) {
        if let Term::Restrict(x, a, b) = t {
            let y = names.fresh(x);
            out.push((
                Law::Alpha,
                Term::restrict(y.clone(), a.clone(), rename_free(b, x, &y)),
            ));
        }
    }
}

fn collect_branches(t: &Term, path: &mut Vec<u8>, out: &mut Vec<(Vec<u8>, Rate)>) {
    match t {
        Term::Prefixed(Prefix::Delay(r), _) => out.push((path.clone(), r.clone())),
        Term::Sum(l, r) => {
            path.push(0);
            collect_branches(l, path, out);
            path.pop();
            path.push(1);
            collect_branches(r, path, out);
            path.pop();
        }
        _ => {}
    }
}

fn symbolic_branches(t: &Term, q: &Name, path: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    match t {
        Term::Prefixed(Prefix::SymbolicDelay(n), _) if n == q => out.push(path.clone()),
        Term::Sum(l, r) => {
            path.push(0);
            symbolic_branches(l, q, path, out);
            path.pop();
            path.push(1);
            symbolic_branches(r, q, path, out);
            path.pop();
        }
        _ => {}
    }
}

fn edit_branch(t: &Term, path: &[u8], f: &mut dyn FnMut(&Term) -> Term) -> Term {
    match (path.split_first(), t) {
        (None, _) => f(t),
        (Some((0, rest)), Term::Sum(l, r)) => Term::sum(edit_branch(l, rest, f), (**r).clone()),
        (Some((_, rest)), Term::Sum(l, r)) => Term::sum((**l).clone(), edit_branch(r, rest, f)),
        _ => unreachable!("branch paths run through sums"),
    }
}

fn occurrences(t: &Term, q: &Name) -> usize {
    match t {
        Term::Nil => 0,
        Term::Const(_, args) => args.iter().filter(|a| *a == q).count(),
        Term::Prefixed(p, c) => {
            let here = match p {
                Prefix::SymbolicDelay(n) => usize::from(n == q),
                Prefix::Output { subject, object } => {
                    usize::from(subject == q) + usize::from(object == q)
                }
                Prefix::Input { subject, bound } if bound == q => return usize::from(subject == q),
                Prefix::Input { subject, .. } => usize::from(subject == q),
                Prefix::Tau | Prefix::Delay(_) => 0,
            };
            here + occurrences(c, q)
        }
        Term::Sum(l, r) | Term::Par(l, r) => occurrences(l, q) + occurrences(r, q),
        Term::Restrict(n, _, _) if n == q => 0,
        Term::Restrict(_, _, b) => occurrences(b, q),
    }
}

/// Renames free occurrences of `from` to the fresh name `to`.
fn rename_free(t: &Term, from: &Name, to: &Name) -> Term {
    let r = |n: &Name| if n == from { to.clone() } else { n.clone() };
    match t {
        Term::Nil => Term::Nil,
        Term::Const(a, args) => Term::Const(a.clone(), args.iter().map(r).collect()),
        Term::Prefixed(p, c) => {
            let (p2, shadow) = match p {
                Prefix::Output { subject, object } => (
                    Prefix::Output {
                        subject: r(subject),
                        object: r(object),
                    },
                    false,
                ),
                Prefix::Input { subject, bound } => (
                    Prefix::Input {
                        subject: r(subject),
                        bound: bound.clone(),
                    },
                    bound == from,
                ),
                Prefix::SymbolicDelay(n) => (Prefix::SymbolicDelay(r(n)), false),
                other => (other.clone(), false),
            };
            let c2 = if shadow {
                (**c).clone()
            } else {
                rename_free(c, from, to)
            };
            Term::prefixed(p2, c2)
        }
        Term::Sum(l, rr) => Term::sum(rename_free(l, from, to), rename_free(rr, from, to)),
        Term::Par(l, rr) => Term::par(rename_free(l, from, to), rename_free(rr, from, to)),
        Term::Restrict(n, a, b) if n == from => Term::restrict(n.clone(), a.clone(), (**b).clone()),
        Term::Restrict(n, a, b) => Term::restrict(n.clone(), a.clone(), rename_free(b, from, to)),
    }
}

/// Applies `steps` randomly chosen single-law rewrites.
pub fn random_rewrites(
    t: &Term,
    steps: usize,
    rng: &mut impl Rng,
    names: &mut NameSupply,
) -> (Term, Vec<Law>) {
    let mut cur = t.clone();
    let mut applied = Vec::new();
    for _ in 0..steps {
        let law = *Law::ALL.choose(rng).expect("non-empty");
        let mut options = rewrites(&cur, &[law], names);
        if options.is_empty() {
            options = rewrites(&cur, &Law::ALL, names);
        }
        let Some((law, next)) = options.choose(rng).cloned() else {
            break;
        };
        applied.push(law);
        cur = next;
    }
    (cur, applied)
}
