//! Structural congruence: canonical keys for congruence classes, the
//! binder-extrusion step that exposes every unguarded delay under a
//! top-level stochastic binder, and the inverse restore step.
//!
//! Canonical keys identify terms up to associativity, commutativity and unit
//! laws for `+` and `|`, scope extrusion and reordering of binders, garbage
//! collection of unused binders, the delay-to-binder law and alpha renaming.
//! Constants are never unfolded by [`canonicalize`]; [`fold_constants`] is
//! applied separately when building state keys.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

use crate::syntax::{DefEnv, Name, NameKind, NameSupply, Prefix, Rate, Term};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RestoreError {
    #[error("stochastic binder `{0}` binds more than one delay")]
    SharedBinder(String),
    #[error("stochastic name `{0}` is not bound")]
    FreeStochasticName(String),
}

/// Rewrites a reachable extended term into the restricted syntax: stochastic
/// binders binding nothing are dropped, and a binder binding exactly one
/// `(q)` is turned back into the numeric delay at that occurrence.
pub fn restore(t: &Term) -> Result<Term, RestoreError> {
    let out = restore_rec(t)?;
    if let Some(q) = out.free_names().into_iter().find(|n| !n.is_channel()) {
        return Err(RestoreError::FreeStochasticName(q.to_string()));
    }
    Ok(out)
}

fn restore_rec(t: &Term) -> Result<Term, RestoreError> {
    Ok(match t {
        Term::Nil | Term::Const(..) => t.clone(),
        Term::Prefixed(p, c) => Term::prefixed(p.clone(), restore_rec(c)?),
        Term::Sum(l, r) => Term::sum(restore_rec(l)?, restore_rec(r)?),
        Term::Par(l, r) => Term::par(restore_rec(l)?, restore_rec(r)?),
        Term::Restrict(n, anno, body) => {
            let body = restore_rec(body)?;
            match (n.kind(), anno) {
                (NameKind::Stochastic, Some(rate)) => match count_symbolic(&body, n) {
                    0 => body,
                    1 => inline_delay(&body, n, rate),
                    _ => return Err(RestoreError::SharedBinder(n.to_string())),
                },
                _ => Term::restrict(n.clone(), anno.clone(), body),
            }
        }
    })
}

fn count_symbolic(t: &Term, q: &Name) -> usize {
    match t {
        Term::Nil | Term::Const(..) => 0,
        Term::Prefixed(p, c) => {
            let here = usize::from(matches!(p, Prefix::SymbolicDelay(n) if n == q));
            here + count_symbolic(c, q)
        }
        Term::Sum(l, r) | Term::Par(l, r) => count_symbolic(l, q) + count_symbolic(r, q),
        Term::Restrict(n, _, b) if n == q => 0,
        Term::Restrict(_, _, b) => count_symbolic(b, q),
    }
}

fn inline_delay(t: &Term, q: &Name, rate: &Rate) -> Term {
    match t {
        Term::Nil | Term::Const(..) => t.clone(),
        Term::Prefixed(Prefix::SymbolicDelay(n), c) if n == q => {
            Term::delay(rate.clone(), (**c).clone())
        }
        Term::Prefixed(p, c) => Term::prefixed(p.clone(), inline_delay(c, q, rate)),
        Term::Sum(l, r) => Term::sum(inline_delay(l, q, rate), inline_delay(r, q, rate)),
        Term::Par(l, r) => Term::par(inline_delay(l, q, rate), inline_delay(r, q, rate)),
        Term::Restrict(n, _, _) if n == q => t.clone(),
        Term::Restrict(n, a, b) => Term::restrict(n.clone(), a.clone(), inline_delay(b, q, rate)),
    }
}

/// A name inside a canonical key. Bound names are numbered by binding depth.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyName {
    Bound(u32),
    Free(Name),
    /// Placeholder used while ranking binders; never part of a final key.
    Marker(u8),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyPrefix {
    Tau,
    Delay(Rate),
    Output(KeyName, KeyName),
    /// Binds the next depth in the continuation.
    Input(KeyName),
    Symbolic(KeyName),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BinderKey {
    pub kind: NameKind,
    pub anno: Option<Rate>,
}

/// Normal form of a process: binders extruded to the top (numbered by
/// position) over a sorted multiset of parallel components.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcKey {
    pub binders: Vec<BinderKey>,
    pub parts: Vec<PartKey>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PartKey {
    /// A non-empty guarded sum; branches sorted.
    Sum(Vec<(KeyPrefix, ProcKey)>),
    Const(Arc<str>, Vec<KeyName>),
}

impl ProcKey {
    pub fn is_nil(&self) -> bool {
        self.parts.is_empty()
    }
}

/// Representative of a structural congruence class. Equality, ordering and
/// hashing look at the key only.
#[derive(Clone, Debug)]
pub struct CanonicalForm {
    key: Arc<ProcKey>,
    repr: Term,
}

impl CanonicalForm {
    pub fn key(&self) -> &ProcKey {
        &self.key
    }

    /// A restricted-syntax term in the class.
    pub fn repr(&self) -> &Term {
        &self.repr
    }
}

impl PartialEq for CanonicalForm {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.key, &other.key) || self.key == other.key
    }
}

impl Eq for CanonicalForm {}

impl Hash for CanonicalForm {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key.hash(state)
    }
}

impl PartialOrd for CanonicalForm {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CanonicalForm {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

impl fmt::Display for CanonicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.repr)
    }
}

/// Upper bound on binder orderings tried per level before falling back to
/// the ranked order alone.
const MAX_BINDER_ORDERINGS: usize = 5040;

/// Restores `t` and computes its canonical key. Constants are left folded.
pub fn canonicalize(t: &Term) -> Result<CanonicalForm, RestoreError> {
    let restored = restore(t)?;
    let mut names = NameSupply::new();
    names.reserve_term(&restored);
    let unique = restored.uniquify(&mut names);
    let key = proc_key(&unique, &mut Vec::new(), 0);
    let repr = key_to_term(&key);
    Ok(CanonicalForm {
        key: Arc::new(key),
        repr,
    })
}

/// Key of the state reached as `t`. Unguarded constants are unfolded and
/// the result canonicalized, so the key depends only on that class; the
/// canonical representative then has definition instances folded back for
/// readability and canonicalized once more.
pub fn state_key(t: &Term, env: &DefEnv) -> Result<CanonicalForm, RestoreError> {
    let restored = restore(t)?;
    let mut names = NameSupply::for_context(env, [&restored]);
    let unfolded = canonicalize(&restored.unfold_to_guarded(env, &mut names))?;
    canonicalize(&fold_constants(unfolded.repr(), env))
}

/// Key equality of the two canonical forms.
pub fn cong_equal(a: &Term, b: &Term) -> Result<bool, RestoreError> {
    Ok(canonicalize(a)? == canonicalize(b)?)
}

type Scope = Vec<(Name, KeyName)>;

fn key_name(scope: &Scope, n: &Name) -> KeyName {
    scope
        .iter()
        .rev()
        .find(|(m, _)| m == n)
        .map(|(_, k)| k.clone())
        .unwrap_or_else(|| KeyName::Free(n.clone()))
}

/// Collects the binders and parallel components of one level. Binder names
/// are unique after `uniquify`, so lifting them is capture free.
fn flatten<'a>(t: &'a Term, binders: &mut Vec<(Name, Option<Rate>)>, parts: &mut Vec<&'a Term>) {
    match t {
        Term::Nil => {}
        Term::Par(l, r) => {
            flatten(l, binders, parts);
            flatten(r, binders, parts);
        }
        Term::Restrict(n, anno, b) => {
            binders.push((n.clone(), anno.clone()));
            flatten(b, binders, parts);
        }
        Term::Sum(..) | Term::Prefixed(..) => {
            if sum_has_branch(t) {
                parts.push(t);
            }
        }
        Term::Const(..) => parts.push(t),
    }
}

fn sum_has_branch(t: &Term) -> bool {
    match t {
        Term::Prefixed(..) => true,
        Term::Sum(l, r) => sum_has_branch(l) || sum_has_branch(r),
        _ => false,
    }
}

fn sum_branches<'a>(t: &'a Term, out: &mut Vec<(&'a Prefix, &'a Term)>) {
    match t {
        Term::Prefixed(p, c) => out.push((p, c)),
        Term::Sum(l, r) => {
            sum_branches(l, out);
            sum_branches(r, out);
        }
        _ => {}
    }
}

fn proc_key(t: &Term, scope: &mut Scope, depth: u32) -> ProcKey {
    let mut binders = Vec::new();
    let mut parts = Vec::new();
    flatten(t, &mut binders, &mut parts);

    let part_fns: Vec<BTreeSet<Name>> = parts.iter().map(|p| p.free_names()).collect();
    binders.retain(|(n, _)| part_fns.iter().any(|f| f.contains(n)));

    if binders.is_empty() {
        let mut keys: Vec<PartKey> = parts.iter().map(|p| part_key(p, scope, depth)).collect();
        keys.sort();
        return ProcKey {
            binders: Vec::new(),
            parts: keys,
        };
    }

    let local: BTreeSet<&Name> = binders.iter().map(|(n, _)| n).collect();
    let (closed, open): (Vec<usize>, Vec<usize>) =
        (0..parts.len()).partition(|&i| part_fns[i].iter().all(|n| !local.contains(n)));
    let inner_depth = depth + binders.len() as u32;
    let closed_keys: Vec<PartKey> = closed
        .iter()
        .map(|&i| part_key(parts[i], scope, inner_depth))
        .collect();

    // Rank binders by an ordering-independent signature; only binders with
    // equal signatures need to be permuted.
    let mut ranked: Vec<((NameKind, Option<Rate>, Vec<PartKey>), Name)> = binders
        .iter()
        .map(|(n, anno)| {
            let base = scope.len();
            for (m, _) in &binders {
                let marker = if m == n { 0 } else { 1 };
                scope.push((m.clone(), KeyName::Marker(marker)));
            }
            let mut sig: Vec<PartKey> = open
                .iter()
                .filter(|&&i| part_fns[i].contains(n))
                .map(|&i| part_key(parts[i], scope, inner_depth))
                .collect();
            scope.truncate(base);
            sig.sort();
            ((n.kind(), anno.clone(), sig), n.clone())
        })
        .collect();
    ranked.sort_by(|a, b| a.0.cmp(&b.0));

    let mut groups: Vec<Vec<Name>> = Vec::new();
    for (i, (sig, n)) in ranked.iter().enumerate() {
        if i > 0 && ranked[i - 1].0 == *sig {
            groups.last_mut().expect("non-empty").push(n.clone());
        } else {
            groups.push(vec![n.clone()]);
        }
    }
    let binder_keys: Vec<BinderKey> = ranked
        .iter()
        .map(|((kind, anno, _), _)| BinderKey {
            kind: *kind,
            anno: anno.clone(),
        })
        .collect();

    let orderings: usize = groups
        .iter()
        .flat_map(|g| 1..=g.len())
        .try_fold(1usize, |acc, n| acc.checked_mul(n))
        .unwrap_or(usize::MAX);

    let evaluate = |order: &[Name], scope: &mut Scope| -> ProcKey {
        let base = scope.len();
        for (i, n) in order.iter().enumerate() {
            scope.push((n.clone(), KeyName::Bound(depth + i as u32)));
        }
        let mut keys = closed_keys.clone();
        keys.extend(open.iter().map(|&i| part_key(parts[i], scope, inner_depth)));
        scope.truncate(base);
        keys.sort();
        ProcKey {
            binders: binder_keys.clone(),
            parts: keys,
        }
    };

    let ranked_order: Vec<Name> = groups.iter().flatten().cloned().collect();
    if orderings <= 1 || orderings > MAX_BINDER_ORDERINGS {
        return evaluate(&ranked_order, scope);
    }

    let mut best: Option<ProcKey> = None;
    let mut perms: Vec<Vec<Name>> = groups.clone();
    loop {
        let order: Vec<Name> = perms.iter().flatten().cloned().collect();
        let candidate = evaluate(&order, scope);
        if best.as_ref().is_none_or(|b| candidate < *b) {
            best = Some(candidate);
        }
        // Advance the odometer of per-group permutations.
        let mut advanced = false;
        for g in perms.iter_mut() {
            if next_permutation(g) {
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    best.expect("at least one ordering")
}

/// Lexicographic next permutation by name order; resets to sorted and
/// returns false after the last one.
fn next_permutation(v: &mut [Name]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        v.sort();
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn part_key(t: &Term, scope: &mut Scope, depth: u32) -> PartKey {
    match t {
        Term::Const(a, args) => {
            PartKey::Const(a.clone(), args.iter().map(|n| key_name(scope, n)).collect())
        }
        _ => {
            let mut branches = Vec::new();
            sum_branches(t, &mut branches);
            let mut keys: Vec<(KeyPrefix, ProcKey)> = branches
                .into_iter()
                .map(|(p, c)| match p {
                    Prefix::Input { subject, bound } => {
                        let subj = key_name(scope, subject);
                        scope.push((bound.clone(), KeyName::Bound(depth)));
                        let k = proc_key(c, scope, depth + 1);
                        scope.pop();
                        (KeyPrefix::Input(subj), k)
                    }
                    Prefix::Output { subject, object } => (
                        KeyPrefix::Output(key_name(scope, subject), key_name(scope, object)),
                        proc_key(c, scope, depth),
                    ),
                    Prefix::Tau => (KeyPrefix::Tau, proc_key(c, scope, depth)),
                    Prefix::Delay(r) => (KeyPrefix::Delay(r.clone()), proc_key(c, scope, depth)),
                    Prefix::SymbolicDelay(q) => (
                        KeyPrefix::Symbolic(key_name(scope, q)),
                        proc_key(c, scope, depth),
                    ),
                })
                .collect();
            keys.sort();
            PartKey::Sum(keys)
        }
    }
}

fn key_free_names(k: &ProcKey, out: &mut BTreeSet<String>) {
    fn add(n: &KeyName, out: &mut BTreeSet<String>) {
        if let KeyName::Free(n) = n {
            out.insert(n.id().to_string());
        }
    }
    for p in &k.parts {
        match p {
            PartKey::Const(_, args) => args.iter().for_each(|a| add(a, out)),
            PartKey::Sum(bs) => {
                for (pre, cont) in bs {
                    match pre {
                        KeyPrefix::Output(a, b) => {
                            add(a, out);
                            add(b, out);
                        }
                        KeyPrefix::Input(a) | KeyPrefix::Symbolic(a) => add(a, out),
                        KeyPrefix::Tau | KeyPrefix::Delay(_) => {}
                    }
                    key_free_names(cont, out);
                }
            }
        }
    }
}

/// Rebuilds a term from a key; bound depth `d` becomes `v{d}` (primed with
/// `_` until it clashes with no free name).
fn key_to_term(k: &ProcKey) -> Term {
    let mut free = BTreeSet::new();
    key_free_names(k, &mut free);
    let mut namer = |d: u32, kind: NameKind| -> Name {
        let base = match kind {
            NameKind::Channel => "v",
            NameKind::Stochastic => "q",
        };
        let mut id = format!("{base}{d}");
        while free.contains(&id) {
            id.push('_');
        }
        Name::new(kind, &id)
    };
    build_proc(k, 0, &mut Vec::new(), &mut namer)
}

fn build_proc(
    k: &ProcKey,
    depth: u32,
    names: &mut Vec<Name>,
    namer: &mut impl FnMut(u32, NameKind) -> Name,
) -> Term {
    let base = names.len();
    let mut binders = Vec::new();
    for (i, b) in k.binders.iter().enumerate() {
        let n = namer(depth + i as u32, b.kind);
        names.push(n.clone());
        binders.push((n, b.anno.clone()));
    }
    let inner = depth + k.binders.len() as u32;
    let mut body: Option<Term> = None;
    for p in &k.parts {
        let t = build_part(p, inner, names, namer);
        body = Some(match body {
            None => t,
            Some(acc) => Term::par(acc, t),
        });
    }
    let mut t = body.unwrap_or(Term::Nil);
    for (n, anno) in binders.into_iter().rev() {
        t = Term::restrict(n, anno, t);
    }
    names.truncate(base);
    t
}

fn build_part(
    p: &PartKey,
    depth: u32,
    names: &mut Vec<Name>,
    namer: &mut impl FnMut(u32, NameKind) -> Name,
) -> Term {
    let resolve = |n: &KeyName, names: &Vec<Name>| -> Name {
        match n {
            KeyName::Bound(d) => names[*d as usize].clone(),
            KeyName::Free(n) => n.clone(),
            KeyName::Marker(_) => unreachable!("markers never escape ranking"),
        }
    };
    match p {
        PartKey::Const(a, args) => {
            Term::Const(a.clone(), args.iter().map(|n| resolve(n, names)).collect())
        }
        PartKey::Sum(branches) => {
            let mut acc: Option<Term> = None;
            for (pre, cont) in branches {
                let t = match pre {
                    KeyPrefix::Input(s) => {
                        let subject = resolve(s, names);
                        let bound = namer(depth, NameKind::Channel);
                        names.push(bound.clone());
                        let c = build_proc(cont, depth + 1, names, namer);
                        names.pop();
                        Term::input(subject, bound, c)
                    }
                    KeyPrefix::Output(s, o) => Term::output(
                        resolve(s, names),
                        resolve(o, names),
                        build_proc(cont, depth, names, namer),
                    ),
                    KeyPrefix::Tau => Term::tau(build_proc(cont, depth, names, namer)),
                    KeyPrefix::Delay(r) => {
                        Term::delay(r.clone(), build_proc(cont, depth, names, namer))
                    }
                    KeyPrefix::Symbolic(q) => Term::prefixed(
                        Prefix::SymbolicDelay(resolve(q, names)),
                        build_proc(cont, depth, names, namer),
                    ),
                };
                acc = Some(match acc {
                    None => t,
                    Some(a) => Term::sum(a, t),
                });
            }
            acc.unwrap_or(Term::Nil)
        }
    }
}

/// Replaces subterms that are instances `P{ỹ/x̃}` of a definition body (up
/// to alpha renaming) by the constant `A(ỹ)`, innermost first, until no
/// more folds apply. Bodies equivalent to `0` and definitions with unused
/// parameters are never folded back.
pub fn fold_constants(t: &Term, env: &DefEnv) -> Term {
    let defs: Vec<_> = env
        .iter()
        .filter(|d| sum_or_const_somewhere(&d.body))
        .filter(|d| {
            let fv = d.body.free_names();
            d.params.iter().all(|p| fv.contains(p))
        })
        .collect();
    if defs.is_empty() {
        return t.clone();
    }
    let mut current = t.clone();
    // Each pass either shrinks the term or renames a constant along an
    // acyclic unguarded chain, so this bound is never reached in practice.
    for _ in 0..256 {
        let (next, changed) = fold_pass(&current, &defs, true);
        if !changed {
            return next;
        }
        current = next;
    }
    current
}

fn sum_or_const_somewhere(t: &Term) -> bool {
    match t {
        Term::Nil => false,
        Term::Prefixed(..) | Term::Const(..) => true,
        Term::Sum(l, r) | Term::Par(l, r) => sum_or_const_somewhere(l) || sum_or_const_somewhere(r),
        Term::Restrict(_, _, b) => sum_or_const_somewhere(b),
    }
}

fn fold_pass(t: &Term, defs: &[&crate::syntax::Definition], at_process: bool) -> (Term, bool) {
    let (rebuilt, changed) = match t {
        Term::Nil | Term::Const(..) => (t.clone(), false),
        Term::Prefixed(p, c) => {
            let (c2, ch) = fold_pass(c, defs, true);
            (Term::prefixed(p.clone(), c2), ch)
        }
        Term::Sum(l, r) => {
            let (l2, a) = fold_pass(l, defs, false);
            let (r2, b) = fold_pass(r, defs, false);
            (Term::sum(l2, r2), a || b)
        }
        Term::Par(l, r) => {
            let (l2, a) = fold_pass(l, defs, true);
            let (r2, b) = fold_pass(r, defs, true);
            (Term::par(l2, r2), a || b)
        }
        Term::Restrict(n, anno, b) => {
            let (b2, ch) = fold_pass(b, defs, true);
            (Term::restrict(n.clone(), anno.clone(), b2), ch)
        }
    };
    if changed || !at_process || matches!(rebuilt, Term::Nil) {
        return (rebuilt, changed);
    }
    for d in defs {
        if let Some(args) = match_instance(&rebuilt, &d.body, &d.params) {
            let folded = Term::Const(d.name.clone(), args);
            if folded != rebuilt {
                return (folded, true);
            }
        }
    }
    (rebuilt, false)
}

/// Finds `ỹ` with `subject` alpha-equal to `body{ỹ/params}`.
fn match_instance(subject: &Term, body: &Term, params: &[Name]) -> Option<Vec<Name>> {
    struct Matcher<'a> {
        params: &'a [Name],
        assign: BTreeMap<Name, Name>,
        sb: Vec<Name>,
        pb: Vec<Name>,
    }
    impl Matcher<'_> {
        fn name(&mut self, s: &Name, p: &Name) -> bool {
            let si = self.sb.iter().rposition(|m| m == s);
            let pi = self.pb.iter().rposition(|m| m == p);
            match (si, pi) {
                (Some(i), Some(j)) => i == j,
                (None, None) => {
                    if self.params.contains(p) {
                        match self.assign.get(p) {
                            Some(prev) => prev == s,
                            None => {
                                self.assign.insert(p.clone(), s.clone());
                                true
                            }
                        }
                    } else {
                        s == p
                    }
                }
                _ => false,
            }
        }

        fn scoped(&mut self, s: &Name, p: &Name, f: impl FnOnce(&mut Self) -> bool) -> bool {
            self.sb.push(s.clone());
            self.pb.push(p.clone());
            let r = f(self);
            self.sb.pop();
            self.pb.pop();
            r
        }

        fn term(&mut self, s: &Term, p: &Term) -> bool {
            match (s, p) {
                (Term::Nil, Term::Nil) => true,
                (Term::Prefixed(ps, cs), Term::Prefixed(pp, cp)) => match (ps, pp) {
                    (
                        Prefix::Output {
                            subject: a,
                            object: b,
                        },
                        Prefix::Output {
                            subject: c,
                            object: d,
                        },
                    ) => self.name(a, c) && self.name(b, d) && self.term(cs, cp),
                    (
                        Prefix::Input {
                            subject: a,
                            bound: b,
                        },
                        Prefix::Input {
                            subject: c,
                            bound: d,
                        },
                    ) => self.name(a, c) && self.scoped(b, d, |m| m.term(cs, cp)),
                    (Prefix::Tau, Prefix::Tau) => self.term(cs, cp),
                    (Prefix::Delay(r1), Prefix::Delay(r2)) => r1 == r2 && self.term(cs, cp),
                    (Prefix::SymbolicDelay(a), Prefix::SymbolicDelay(b)) => {
                        self.name(a, b) && self.term(cs, cp)
                    }
                    _ => false,
                },
                (Term::Sum(a, b), Term::Sum(c, d)) | (Term::Par(a, b), Term::Par(c, d)) => {
                    self.term(a, c) && self.term(b, d)
                }
                (Term::Restrict(n1, a1, b1), Term::Restrict(n2, a2, b2)) => {
                    n1.kind() == n2.kind() && a1 == a2 && self.scoped(n1, n2, |m| m.term(b1, b2))
                }
                (Term::Const(c1, x1), Term::Const(c2, x2)) => {
                    c1 == c2
                        && x1.len() == x2.len()
                        && x1.iter().zip(x2).all(|(a, b)| self.name(a, b))
                }
                _ => false,
            }
        }
    }

    let mut m = Matcher {
        params,
        assign: BTreeMap::new(),
        sb: Vec::new(),
        pb: Vec::new(),
    };
    if !m.term(subject, body) {
        return None;
    }
    params.iter().map(|p| m.assign.get(p).cloned()).collect()
}

/// A term with all unguarded delays turned into distinct stochastic names,
/// whose binders sit at the top level: `(νq1→λ1)…(νqn→λn) body`.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidForm {
    pub binders: Vec<(Name, Rate)>,
    pub body: Term,
}

impl FluidForm {
    /// The binders wrapped around `inner`, first binder outermost.
    pub fn wrap(&self, inner: Term) -> Term {
        wrap_binders(&self.binders, inner)
    }

    pub fn to_term(&self) -> Term {
        self.wrap(self.body.clone())
    }
}

pub(crate) fn wrap_binders(binders: &[(Name, Rate)], inner: Term) -> Term {
    binders.iter().rev().fold(inner, |acc, (q, r)| {
        Term::restrict(q.clone(), Some(r.clone()), acc)
    })
}

/// Unfolds constants to guarded form and replaces each unguarded `(λ)` by a
/// fresh `(q)`, left to right, recording `(q, λ)` binders.
pub fn fluidize(t: &Term, env: &DefEnv, names: &mut NameSupply) -> FluidForm {
    names.reserve_term(t);
    let unfolded = t.unfold_to_guarded(env, names).uniquify(names);
    let mut binders = Vec::new();
    let body = replace_delays(&unfolded, names, &mut binders);
    FluidForm { binders, body }
}

fn replace_delays(t: &Term, names: &mut NameSupply, binders: &mut Vec<(Name, Rate)>) -> Term {
    match t {
        Term::Nil | Term::Const(..) => t.clone(),
        Term::Prefixed(Prefix::Delay(rate), c) => {
            let q = names.fresh(&Name::stochastic("q"));
            binders.push((q.clone(), rate.clone()));
            Term::prefixed(Prefix::SymbolicDelay(q), (**c).clone())
        }
        Term::Prefixed(..) => t.clone(),
        Term::Sum(l, r) => {
            let l = replace_delays(l, names, binders);
            Term::sum(l, replace_delays(r, names, binders))
        }
        Term::Par(l, r) => {
            let l = replace_delays(l, names, binders);
            Term::par(l, replace_delays(r, names, binders))
        }
        Term::Restrict(n, a, b) => {
            Term::restrict(n.clone(), a.clone(), replace_delays(b, names, binders))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse, parse_extended_term};
    use crate::syntax::alpha_equal;

    fn t(s: &str) -> Term {
        parse_extended_term(s).unwrap()
    }

    fn key(s: &str) -> ProcKey {
        canonicalize(&t(s)).unwrap().key().clone()
    }

    #[test]
    fn restore_examples() {
        assert!(alpha_equal(
            &restore(&t("new q->5 in (q).A()")).unwrap(),
            &t("(5).A()")
        ));
        assert!(alpha_equal(
            &restore(&t("new q->5 in (A() | 0)")).unwrap(),
            &t("A() | 0")
        ));
        assert!(alpha_equal(
            &restore(&t("new q->5 in new r->5 in (A() | (r).A())")).unwrap(),
            &t("A() | (5).A()")
        ));
    }

    #[test]
    fn restore_rejects_unreachable_shapes() {
        assert_eq!(
            restore(&t("new q->5 in ((q).0 | (q).0)")),
            Err(RestoreError::SharedBinder("q".into()))
        );
        assert_eq!(
            restore(&t("(q).0")),
            Err(RestoreError::FreeStochasticName("q".into()))
        );
    }

    #[test]
    fn restore_respects_shadowing() {
        let r = restore(&t("new q->5 in (q).new q->3 in (q).0")).unwrap();
        assert!(alpha_equal(&r, &t("(5).(3).0")));
    }

    #[test]
    fn restore_is_idempotent() {
        let r = restore(&t("new q->2 in (tau.0 + (q).0) | new x in x<a>.0")).unwrap();
        assert!(r.is_restricted());
        assert_eq!(restore(&r).unwrap(), r);
    }

    #[test]
    fn unit_and_commutativity() {
        assert_eq!(key("0 | A()"), key("A()"));
        assert_eq!(key("(5).0 + 0"), key("(5).0"));
        assert_eq!(key("tau.0 + (2).0"), key("(2).0 + tau.0"));
        assert_eq!(
            key("(a<b>.0 | tau.0) | c(x).0"),
            key("c(y).0 | (tau.0 | a<b>.0)")
        );
        assert_ne!(key("tau.0 | tau.0"), key("tau.0"));
        assert_ne!(key("tau.0 + tau.0"), key("tau.0 | tau.0"));
    }

    #[test]
    fn restriction_laws() {
        assert_eq!(
            key("new x in new y in (x<a>.0 | y<a>.0)"),
            key("new y in new x in (y<a>.0 | x<a>.0)")
        );
        assert_eq!(key("new x in 0"), key("0"));
        assert_eq!(key("new x in tau.0"), key("tau.0"));
        assert_eq!(
            key("(new x in x<a>.0) | b<c>.0"),
            key("new y in (y<a>.0 | b<c>.0)")
        );
        assert_ne!(key("new x in x<a>.0"), key("x<a>.0"));
        assert_ne!(key("tau.new x in x<a>.0"), key("new x in tau.x<a>.0"));
    }

    #[test]
    fn delay_law() {
        assert_eq!(key("new q->5 in ((q).A() + tau.0)"), key("(5).A() + tau.0"));
    }

    #[test]
    fn symmetric_binders_need_permutation_search() {
        // Both binders have the same signature; only a search over orderings
        // finds the common minimum.
        let a = key("new x in new y in (x<y>.0 | y<x>.0 | x<x>.0)");
        let b = key("new y in new x in (x<y>.0 | y<x>.0 | y<y>.0)");
        assert_eq!(a, b);
        let c = key("new x in new y in (x<y>.0 | y<x>.0 | a<y>.0 | x(z).0)");
        let d = key("new y in new x in (x(z).0 | y<x>.0 | a<x>.0 | x<y>.0)");
        let e = key("new y in new x in (y(z).0 | y<x>.0 | a<x>.0 | x<y>.0)");
        assert_ne!(c, d);
        assert_eq!(c, e);
    }

    #[test]
    fn input_binders_are_canonical() {
        assert_eq!(key("a(x).x<x>.0"), key("a(y).y<y>.0"));
        assert_ne!(key("a(x).x<b>.0"), key("a(x).b<x>.0"));
        // free name equal to the canonical bound name
        let k = canonicalize(&t("a(x).v0<x>.0")).unwrap();
        assert_eq!(canonicalize(k.repr()).unwrap(), k);
    }

    #[test]
    fn canonicalize_is_idempotent() {
        for s in [
            "new x in (a(y).x<y>.0 | x(z).(z<a>.0 + tau.0)) | A(b)",
            "(2).0 + (3).tau.0 | new x in new y in x<y>.y<x>.0",
            "0",
        ] {
            let c = canonicalize(&t(s)).unwrap();
            let again = canonicalize(c.repr()).unwrap();
            assert_eq!(again, c, "{s}");
            assert!(c.repr().is_restricted());
        }
    }

    #[test]
    fn fold_examples() {
        let s = parse("A() := (5).A() main := (5).A()").unwrap();
        assert_eq!(fold_constants(&s.main, &s.defs), t("A()"));

        let s = parse("main := tau.0").unwrap();
        assert_eq!(fold_constants(&s.main, &s.defs), t("tau.0"));

        let s = parse("A() := (5).A() B() := (3).B() main := (3).B() | (5).A()").unwrap();
        assert_eq!(fold_constants(&s.main, &s.defs), t("B() | A()"));
    }

    #[test]
    fn fold_instantiates_parameters() {
        let s = parse("F(x) := x(y).F(x) main := new a in (a(z).F(a) | b(w).F(b))").unwrap();
        assert_eq!(
            fold_constants(&s.main, &s.defs),
            t("new a in (F(a) | F(b))")
        );
        // the bound name of the pattern must not be matched by a free one
        let s = parse("F(x) := new y in x<y>.0 main := new y in (a<y>.0 | y<y>.0)").unwrap();
        assert!(alpha_equal(&fold_constants(&s.main, &s.defs), &s.main));
    }

    #[test]
    fn fold_then_canonicalize_harmonizes_unfolding() {
        let s = parse("A() := (5).A() main := A()").unwrap();
        assert!(!cong_equal(&t("A()"), &t("(5).A()")).unwrap());
        let unfolded = fold_constants(&t("(5).A()"), &s.defs);
        assert!(cong_equal(&t("A()"), &unfolded).unwrap());
    }

    #[test]
    fn fluidize_twin_loop() {
        let s = parse("A() := (5).A() main := (5).A() | (5).A()").unwrap();
        let mut names = NameSupply::for_context(&s.defs, [&s.main]);
        let f = fluidize(&s.main, &s.defs, &mut names);
        assert_eq!(f.binders.len(), 2);
        assert_ne!(f.binders[0].0, f.binders[1].0);
        assert!(f.binders.iter().all(|(_, r)| r.as_str() == "5"));
        let expect = Term::par(
            Term::prefixed(Prefix::SymbolicDelay(f.binders[0].0.clone()), t("A()")),
            Term::prefixed(Prefix::SymbolicDelay(f.binders[1].0.clone()), t("A()")),
        );
        assert_eq!(f.body, expect);
        assert!(cong_equal(&f.to_term(), &s.main).unwrap());
    }

    #[test]
    fn fluidize_counts_and_orders() {
        let env = DefEnv::new();
        let mut names = NameSupply::new();
        let f = fluidize(&t("tau.(5).0"), &env, &mut names);
        assert!(f.binders.is_empty());
        assert_eq!(f.body, t("tau.(5).0"));

        let f = fluidize(&t("((2).0 + (3).0) | (5).0"), &env, &mut names);
        let rates: Vec<&str> = f.binders.iter().map(|(_, r)| r.as_str()).collect();
        assert_eq!(rates, ["2", "3", "5"]);
        assert!(cong_equal(&f.to_term(), &t("((2).0 + (3).0) | (5).0")).unwrap());
    }
}
