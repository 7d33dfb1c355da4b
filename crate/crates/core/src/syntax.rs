//! Abstract syntax of Markovian pi-calculus processes.
//!
//! One [`Term`] type covers both the user-facing language (channel
//! restriction, numeric delays) and the extended language used internally by
//! the reduction engine, which adds stochastic names `(q)` and stochastic
//! binders `new q->rate in P`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Which name space a [`Name`] lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NameKind {
    Channel,
    Stochastic,
}

/// An interned channel or stochastic name. The kind is part of identity.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Name {
    kind: NameKind,
    id: Arc<str>,
}

impl Name {
    pub fn new(kind: NameKind, id: &str) -> Self {
        Name {
            kind,
            id: Arc::from(id),
        }
    }

    pub fn channel(id: &str) -> Self {
        Self::new(NameKind::Channel, id)
    }

    pub fn stochastic(id: &str) -> Self {
        Self::new(NameKind::Stochastic, id)
    }

    pub fn kind(&self) -> NameKind {
        self.kind
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn is_channel(&self) -> bool {
        self.kind == NameKind::Channel
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RateError {
    #[error("malformed rate literal `{0}`")]
    Malformed(String),
    #[error("rate `{0}` is not strictly positive")]
    NonPositive(String),
}

/// A strictly positive rate, kept as a normalized decimal string so that
/// equality is exact; [`Rate::value`] gives the floating point reading.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Rate {
    text: Arc<str>,
    value: u64,
}

impl Rate {
    /// Parses a decimal literal (`5`, `2.50`, `.5`); no exponents, no signs.
    pub fn parse(s: &str) -> Result<Self, RateError> {
        let (int, frac) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        let digits_ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
        if !digits_ok(int) || !digits_ok(frac) || (int.is_empty() && frac.is_empty()) {
            return Err(RateError::Malformed(s.to_string()));
        }
        if s.contains('.') && frac.is_empty() {
            return Err(RateError::Malformed(s.to_string()));
        }
        let int = int.trim_start_matches('0');
        let frac = frac.trim_end_matches('0');
        if int.is_empty() && frac.is_empty() {
            return Err(RateError::NonPositive(s.to_string()));
        }
        let int = if int.is_empty() { "0" } else { int };
        let text = if frac.is_empty() {
            int.to_string()
        } else {
            format!("{int}.{frac}")
        };
        let value: f64 = text
            .parse()
            .map_err(|_| RateError::Malformed(s.to_string()))?;
        if !(value.is_finite() && value > 0.0) {
            return Err(RateError::NonPositive(s.to_string()));
        }
        Ok(Rate {
            text: Arc::from(text.as_str()),
            value: value.to_bits(),
        })
    }

    pub fn value(&self) -> f64 {
        f64::from_bits(self.value)
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl PartialOrd for Rate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.value()
            .total_cmp(&other.value())
            .then_with(|| self.text.cmp(&other.text))
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Action prefixes, including the symbolic delay `(q)` of the extended syntax.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Prefix {
    Output { subject: Name, object: Name },
    Input { subject: Name, bound: Name },
    Tau,
    Delay(Rate),
    SymbolicDelay(Name),
}

/// Process terms.
///
/// `Sum` operands are always guarded sums (`Nil`, `Prefixed` or `Sum`).
/// A `Restrict` over a stochastic name carries `Some(rate)`; over a channel
/// name it carries `None`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Nil,
    Prefixed(Prefix, Box<Term>),
    Sum(Box<Term>, Box<Term>),
    Par(Box<Term>, Box<Term>),
    Restrict(Name, Option<Rate>, Box<Term>),
    Const(Arc<str>, Vec<Name>),
}

impl Term {
    pub fn prefixed(prefix: Prefix, cont: Term) -> Term {
        Term::Prefixed(prefix, Box::new(cont))
    }

    pub fn tau(cont: Term) -> Term {
        Term::prefixed(Prefix::Tau, cont)
    }

    pub fn delay(rate: Rate, cont: Term) -> Term {
        Term::prefixed(Prefix::Delay(rate), cont)
    }

    pub fn output(subject: Name, object: Name, cont: Term) -> Term {
        Term::prefixed(Prefix::Output { subject, object }, cont)
    }

    pub fn input(subject: Name, bound: Name, cont: Term) -> Term {
        Term::prefixed(Prefix::Input { subject, bound }, cont)
    }

    pub fn sum(left: Term, right: Term) -> Term {
        debug_assert!(left.is_guarded_sum() && right.is_guarded_sum());
        Term::Sum(Box::new(left), Box::new(right))
    }

    pub fn par(left: Term, right: Term) -> Term {
        Term::Par(Box::new(left), Box::new(right))
    }

    pub fn restrict(name: Name, anno: Option<Rate>, body: Term) -> Term {
        Term::Restrict(name, anno, Box::new(body))
    }

    pub fn new_channel(name: Name, body: Term) -> Term {
        Term::restrict(name, None, body)
    }

    pub fn constant(name: &str, args: Vec<Name>) -> Term {
        Term::Const(Arc::from(name), args)
    }

    /// Right-nested parallel composition of `parts`; `Nil` when empty.
    pub fn par_all(parts: impl IntoIterator<Item = Term>) -> Term {
        let mut parts: Vec<Term> = parts.into_iter().collect();
        let Some(mut acc) = parts.pop() else {
            return Term::Nil;
        };
        while let Some(p) = parts.pop() {
            acc = Term::par(p, acc);
        }
        acc
    }

    /// True for the `M` category: `0`, `α.P` and sums of those.
    pub fn is_guarded_sum(&self) -> bool {
        matches!(self, Term::Nil | Term::Prefixed(..) | Term::Sum(..))
    }

    /// No symbolic delays and no stochastic binders.
    pub fn is_restricted(&self) -> bool {
        match self {
            Term::Nil | Term::Const(..) => true,
            Term::Prefixed(p, c) => !matches!(p, Prefix::SymbolicDelay(_)) && c.is_restricted(),
            Term::Sum(l, r) | Term::Par(l, r) => l.is_restricted() && r.is_restricted(),
            Term::Restrict(n, _, b) => n.is_channel() && b.is_restricted(),
        }
    }

    pub fn free_names(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    pub fn is_free(&self, name: &Name) -> bool {
        self.free_names().contains(name)
    }

    fn collect_free(&self, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
        let mut add = |n: &Name, bound: &Vec<Name>| {
            if !bound.contains(n) {
                out.insert(n.clone());
            }
        };
        match self {
            Term::Nil => {}
            Term::Prefixed(p, c) => match p {
                Prefix::Output { subject, object } => {
                    add(subject, bound);
                    add(object, bound);
                    c.collect_free(bound, out);
                }
                Prefix::Input { subject, bound: b } => {
                    add(subject, bound);
                    bound.push(b.clone());
                    c.collect_free(bound, out);
                    bound.pop();
                }
                Prefix::SymbolicDelay(q) => {
                    add(q, bound);
                    c.collect_free(bound, out);
                }
                Prefix::Tau | Prefix::Delay(_) => c.collect_free(bound, out),
            },
            Term::Sum(l, r) | Term::Par(l, r) => {
                l.collect_free(bound, out);
                r.collect_free(bound, out);
            }
            Term::Restrict(n, _, b) => {
                bound.push(n.clone());
                b.collect_free(bound, out);
                bound.pop();
            }
            Term::Const(_, args) => {
                for a in args {
                    add(a, bound);
                }
            }
        }
    }

    /// Every name occurring in the term, free or bound.
    pub fn all_names(&self, out: &mut BTreeSet<Name>) {
        match self {
            Term::Nil => {}
            Term::Prefixed(p, c) => {
                match p {
                    Prefix::Output { subject, object } => {
                        out.insert(subject.clone());
                        out.insert(object.clone());
                    }
                    Prefix::Input { subject, bound } => {
                        out.insert(subject.clone());
                        out.insert(bound.clone());
                    }
                    Prefix::SymbolicDelay(q) => {
                        out.insert(q.clone());
                    }
                    Prefix::Tau | Prefix::Delay(_) => {}
                }
                c.all_names(out);
            }
            Term::Sum(l, r) | Term::Par(l, r) => {
                l.all_names(out);
                r.all_names(out);
            }
            Term::Restrict(n, _, b) => {
                out.insert(n.clone());
                b.all_names(out);
            }
            Term::Const(_, args) => out.extend(args.iter().cloned()),
        }
    }

    /// Capture-avoiding simultaneous substitution. Binders that would capture
    /// a name in the range of `map` are renamed using `names`.
    pub fn substitute(&self, map: &BTreeMap<Name, Name>, names: &mut NameSupply) -> Term {
        if map.is_empty() {
            return self.clone();
        }
        let apply = |n: &Name| map.get(n).cloned().unwrap_or_else(|| n.clone());
        match self {
            Term::Nil => Term::Nil,
            Term::Prefixed(p, c) => match p {
                Prefix::Output { subject, object } => {
                    Term::output(apply(subject), apply(object), c.substitute(map, names))
                }
                Prefix::Input { subject, bound } => {
                    let (b, inner) = Self::enter_binder(bound, map, names);
                    Term::input(apply(subject), b, c.substitute(&inner, names))
                }
                Prefix::SymbolicDelay(q) => {
                    Term::prefixed(Prefix::SymbolicDelay(apply(q)), c.substitute(map, names))
                }
                Prefix::Tau | Prefix::Delay(_) => {
                    Term::prefixed(p.clone(), c.substitute(map, names))
                }
            },
            Term::Sum(l, r) => Term::sum(l.substitute(map, names), r.substitute(map, names)),
            Term::Par(l, r) => Term::par(l.substitute(map, names), r.substitute(map, names)),
            Term::Restrict(n, anno, b) => {
                let (n2, inner) = Self::enter_binder(n, map, names);
                Term::restrict(n2, anno.clone(), b.substitute(&inner, names))
            }
            Term::Const(a, args) => Term::Const(a.clone(), args.iter().map(apply).collect()),
        }
    }

    fn enter_binder(
        binder: &Name,
        map: &BTreeMap<Name, Name>,
        names: &mut NameSupply,
    ) -> (Name, BTreeMap<Name, Name>) {
        let mut inner = map.clone();
        inner.remove(binder);
        if inner.values().any(|v| v == binder) {
            let fresh = names.fresh(binder);
            inner.insert(binder.clone(), fresh.clone());
            (fresh, inner)
        } else {
            (binder.clone(), inner)
        }
    }

    /// Renames every bound name (restriction and input binders) to a fresh
    /// name, so that no name is bound twice and no bound name is also free.
    pub fn uniquify(&self, names: &mut NameSupply) -> Term {
        self.uniquify_with(&BTreeMap::new(), names)
    }

    fn uniquify_with(&self, map: &BTreeMap<Name, Name>, names: &mut NameSupply) -> Term {
        let apply = |n: &Name| map.get(n).cloned().unwrap_or_else(|| n.clone());
        match self {
            Term::Nil => Term::Nil,
            Term::Prefixed(p, c) => match p {
                Prefix::Output { subject, object } => {
                    Term::output(apply(subject), apply(object), c.uniquify_with(map, names))
                }
                Prefix::Input { subject, bound } => {
                    let fresh = names.fresh(bound);
                    let mut inner = map.clone();
                    inner.insert(bound.clone(), fresh.clone());
                    Term::input(apply(subject), fresh, c.uniquify_with(&inner, names))
                }
                Prefix::SymbolicDelay(q) => {
                    Term::prefixed(Prefix::SymbolicDelay(apply(q)), c.uniquify_with(map, names))
                }
                Prefix::Tau | Prefix::Delay(_) => {
                    Term::prefixed(p.clone(), c.uniquify_with(map, names))
                }
            },
            Term::Sum(l, r) => Term::sum(l.uniquify_with(map, names), r.uniquify_with(map, names)),
            Term::Par(l, r) => Term::par(l.uniquify_with(map, names), r.uniquify_with(map, names)),
            Term::Restrict(n, anno, b) => {
                let fresh = names.fresh(n);
                let mut inner = map.clone();
                inner.insert(n.clone(), fresh.clone());
                Term::restrict(fresh, anno.clone(), b.uniquify_with(&inner, names))
            }
            Term::Const(a, args) => Term::Const(a.clone(), args.iter().map(apply).collect()),
        }
    }

    /// Number of syntax nodes.
    pub fn size(&self) -> usize {
        match self {
            Term::Nil | Term::Const(..) => 1,
            Term::Prefixed(_, c) | Term::Restrict(_, _, c) => 1 + c.size(),
            Term::Sum(l, r) | Term::Par(l, r) => 1 + l.size() + r.size(),
        }
    }

    /// Checks the structural invariants that constructors do not enforce.
    pub fn check_well_formed(&self) -> Result<(), SyntaxError> {
        match self {
            Term::Nil | Term::Const(..) => Ok(()),
            Term::Prefixed(p, c) => {
                match p {
                    Prefix::Input { bound, .. } if !bound.is_channel() => {
                        return Err(SyntaxError::BadBinder(bound.to_string()))
                    }
                    Prefix::SymbolicDelay(q) if q.is_channel() => {
                        return Err(SyntaxError::BadBinder(q.to_string()))
                    }
                    Prefix::Output { subject, object }
                        if !subject.is_channel() || !object.is_channel() =>
                    {
                        return Err(SyntaxError::BadBinder(subject.to_string()))
                    }
                    _ => {}
                }
                c.check_well_formed()
            }
            Term::Sum(l, r) => {
                if !l.is_guarded_sum() || !r.is_guarded_sum() {
                    return Err(SyntaxError::UnguardedSumOperand);
                }
                l.check_well_formed()?;
                r.check_well_formed()
            }
            Term::Par(l, r) => {
                l.check_well_formed()?;
                r.check_well_formed()
            }
            Term::Restrict(n, anno, b) => {
                if n.is_channel() != anno.is_none() {
                    return Err(SyntaxError::BadBinder(n.to_string()));
                }
                b.check_well_formed()
            }
        }
    }

    /// Constants occurring outside the scope of any prefix.
    pub fn unguarded_constants(&self) -> Vec<(Arc<str>, usize)> {
        let mut out = Vec::new();
        self.collect_unguarded_constants(&mut out);
        out
    }

    fn collect_unguarded_constants(&self, out: &mut Vec<(Arc<str>, usize)>) {
        match self {
            Term::Nil | Term::Prefixed(..) => {}
            Term::Sum(l, r) | Term::Par(l, r) => {
                l.collect_unguarded_constants(out);
                r.collect_unguarded_constants(out);
            }
            Term::Restrict(_, _, b) => b.collect_unguarded_constants(out),
            Term::Const(a, args) => out.push((a.clone(), args.len())),
        }
    }

    /// Every constant occurrence, guarded or not.
    pub fn constants(&self, out: &mut Vec<(Arc<str>, usize)>) {
        match self {
            Term::Nil => {}
            Term::Prefixed(_, c) | Term::Restrict(_, _, c) => c.constants(out),
            Term::Sum(l, r) | Term::Par(l, r) => {
                l.constants(out);
                r.constants(out);
            }
            Term::Const(a, args) => out.push((a.clone(), args.len())),
        }
    }

    /// Replaces every unguarded constant by its definition body, repeating
    /// until all remaining constants sit under a prefix. Requires a guarded
    /// environment, otherwise this does not terminate.
    pub fn unfold_to_guarded(&self, env: &DefEnv, names: &mut NameSupply) -> Term {
        match self {
            Term::Nil | Term::Prefixed(..) | Term::Sum(..) => self.clone(),
            Term::Par(l, r) => Term::par(
                l.unfold_to_guarded(env, names),
                r.unfold_to_guarded(env, names),
            ),
            Term::Restrict(n, anno, b) => {
                Term::restrict(n.clone(), anno.clone(), b.unfold_to_guarded(env, names))
            }
            Term::Const(a, args) => match env.instantiate(a, args, names) {
                Some(body) => body.unfold_to_guarded(env, names),
                None => self.clone(),
            },
        }
    }

    /// Number of delay prefixes `(λ)` that are not under any prefix, after
    /// unfolding constants to guarded form.
    pub fn count_unguarded_delays(&self, env: &DefEnv, names: &mut NameSupply) -> usize {
        fn count(t: &Term) -> usize {
            match t {
                Term::Nil | Term::Const(..) => 0,
                Term::Prefixed(Prefix::Delay(_), _) => 1,
                Term::Prefixed(..) => 0,
                Term::Sum(l, r) | Term::Par(l, r) => count(l) + count(r),
                Term::Restrict(_, _, b) => count(b),
            }
        }
        count(&self.unfold_to_guarded(env, names))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error("sum operand is not a guarded sum")]
    UnguardedSumOperand,
    #[error("name `{0}` used with the wrong kind")]
    BadBinder(String),
}

/// Equality up to consistent renaming of bound names.
pub fn alpha_equal(a: &Term, b: &Term) -> bool {
    fn lookup(stack: &[Name], n: &Name) -> Option<usize> {
        stack.iter().rposition(|m| m == n)
    }
    fn same(sa: &[Name], sb: &[Name], x: &Name, y: &Name) -> bool {
        match (lookup(sa, x), lookup(sb, y)) {
            (Some(i), Some(j)) => i == j,
            (None, None) => x == y,
            _ => false,
        }
    }
    fn go(a: &Term, b: &Term, sa: &mut Vec<Name>, sb: &mut Vec<Name>) -> bool {
        match (a, b) {
            (Term::Nil, Term::Nil) => true,
            (Term::Prefixed(pa, ca), Term::Prefixed(pb, cb)) => match (pa, pb) {
                (
                    Prefix::Output {
                        subject: s1,
                        object: o1,
                    },
                    Prefix::Output {
                        subject: s2,
                        object: o2,
                    },
                ) => same(sa, sb, s1, s2) && same(sa, sb, o1, o2) && go(ca, cb, sa, sb),
                (
                    Prefix::Input {
                        subject: s1,
                        bound: b1,
                    },
                    Prefix::Input {
                        subject: s2,
                        bound: b2,
                    },
                ) => {
                    if !same(sa, sb, s1, s2) {
                        return false;
                    }
                    sa.push(b1.clone());
                    sb.push(b2.clone());
                    let r = go(ca, cb, sa, sb);
                    sa.pop();
                    sb.pop();
                    r
                }
                (Prefix::Tau, Prefix::Tau) => go(ca, cb, sa, sb),
                (Prefix::Delay(r1), Prefix::Delay(r2)) => r1 == r2 && go(ca, cb, sa, sb),
                (Prefix::SymbolicDelay(q1), Prefix::SymbolicDelay(q2)) => {
                    same(sa, sb, q1, q2) && go(ca, cb, sa, sb)
                }
                _ => false,
            },
            (Term::Sum(l1, r1), Term::Sum(l2, r2)) | (Term::Par(l1, r1), Term::Par(l2, r2)) => {
                go(l1, l2, sa, sb) && go(r1, r2, sa, sb)
            }
            (Term::Restrict(n1, a1, b1), Term::Restrict(n2, a2, b2)) => {
                if n1.kind() != n2.kind() || a1 != a2 {
                    return false;
                }
                sa.push(n1.clone());
                sb.push(n2.clone());
                let r = go(b1, b2, sa, sb);
                sa.pop();
                sb.pop();
                r
            }
            (Term::Const(c1, x1), Term::Const(c2, x2)) => {
                c1 == c2
                    && x1.len() == x2.len()
                    && x1.iter().zip(x2).all(|(x, y)| same(sa, sb, x, y))
            }
            _ => false,
        }
    }
    go(a, b, &mut Vec::new(), &mut Vec::new())
}

/// Session-local source of fresh names. A fresh name is never one that was
/// reserved (names of the terms and definitions in play) or handed out before.
#[derive(Debug, Clone, Default)]
pub struct NameSupply {
    used: HashSet<Arc<str>>,
    counter: u64,
}

impl NameSupply {
    pub fn new() -> Self {
        Self::default()
    }

    /// A supply that avoids every name of `env` and of `terms`.
    pub fn for_context<'a>(env: &DefEnv, terms: impl IntoIterator<Item = &'a Term>) -> Self {
        let mut s = Self::new();
        s.reserve_env(env);
        for t in terms {
            s.reserve_term(t);
        }
        s
    }

    pub fn reserve(&mut self, n: &Name) {
        if !self.used.contains(n.id()) {
            self.used.insert(n.id.clone());
        }
    }

    pub fn reserve_term(&mut self, t: &Term) {
        let mut names = BTreeSet::new();
        t.all_names(&mut names);
        for n in &names {
            self.reserve(n);
        }
    }

    pub fn reserve_env(&mut self, env: &DefEnv) {
        for d in env.iter() {
            for p in &d.params {
                self.reserve(p);
            }
            self.reserve_term(&d.body);
        }
    }

    /// A name of the same kind as `like`, named after it.
    pub fn fresh(&mut self, like: &Name) -> Name {
        let base = strip_counter(like.id());
        loop {
            self.counter += 1;
            let candidate = format!("{base}_{}", self.counter);
            if !self.used.contains(candidate.as_str()) {
                let id: Arc<str> = Arc::from(candidate.as_str());
                self.used.insert(id.clone());
                return Name {
                    kind: like.kind(),
                    id,
                };
            }
        }
    }
}

fn strip_counter(id: &str) -> &str {
    match id.rfind('_') {
        Some(i) if i > 0 && id[i + 1..].bytes().all(|b| b.is_ascii_digit()) && i + 1 < id.len() => {
            &id[..i]
        }
        _ => id,
    }
}

/// A constant definition `A(x1, ..., xn) := P`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Definition {
    pub name: Arc<str>,
    pub params: Vec<Name>,
    pub body: Term,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DefError {
    #[error("constant `{0}` is not defined")]
    Undefined(String),
    #[error("constant `{name}` expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("constant `{0}` is defined twice")]
    Duplicate(String),
    #[error(transparent)]
    Guardedness(#[from] GuardednessError),
}

/// An unguarded dependency cycle: each constant occurs unguarded in the body
/// of the previous one, and the first in the body of the last.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unguarded recursion through {}", self.render())]
pub struct GuardednessError {
    pub cycle: Vec<String>,
}

impl GuardednessError {
    fn render(&self) -> String {
        let mut parts = self.cycle.clone();
        if let Some(first) = self.cycle.first() {
            parts.push(first.clone());
        }
        parts.join(" -> ")
    }
}

/// The set of constant definitions in scope.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DefEnv {
    defs: BTreeMap<Arc<str>, Definition>,
}

impl DefEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, def: Definition) -> Result<(), DefError> {
        if self.defs.contains_key(&def.name) {
            return Err(DefError::Duplicate(def.name.to_string()));
        }
        self.defs.insert(def.name.clone(), def);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Definition> {
        self.defs.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Definition> {
        self.defs.values()
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    /// `P{ỹ/x̃}` for `A(x̃) := P`, or `None` if `A` is unknown or the arity
    /// is off.
    pub fn instantiate(&self, name: &str, args: &[Name], names: &mut NameSupply) -> Option<Term> {
        let def = self.defs.get(name)?;
        if def.params.len() != args.len() {
            return None;
        }
        let map: BTreeMap<Name, Name> = def
            .params
            .iter()
            .cloned()
            .zip(args.iter().cloned())
            .filter(|(p, a)| p != a)
            .collect();
        Some(def.body.substitute(&map, names))
    }

    /// Every constant used in `t` is defined with matching arity.
    pub fn check_term(&self, t: &Term) -> Result<(), DefError> {
        let mut uses = Vec::new();
        t.constants(&mut uses);
        for (a, arity) in uses {
            match self.defs.get(&a) {
                None => return Err(DefError::Undefined(a.to_string())),
                Some(d) if d.params.len() != arity => {
                    return Err(DefError::Arity {
                        name: a.to_string(),
                        expected: d.params.len(),
                        found: arity,
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Closedness of the environment plus weak guardedness.
    pub fn validate(&self) -> Result<(), DefError> {
        for d in self.defs.values() {
            self.check_term(&d.body)?;
        }
        self.check_guarded()?;
        Ok(())
    }

    /// Weak guardedness: the relation "B occurs unguarded in the body of A"
    /// must be acyclic. Undefined constants are ignored here.
    pub fn check_guarded(&self) -> Result<(), GuardednessError> {
        let deps: HashMap<&str, Vec<Arc<str>>> = self
            .defs
            .iter()
            .map(|(k, d)| {
                let mut v: Vec<Arc<str>> = d
                    .body
                    .unguarded_constants()
                    .into_iter()
                    .map(|(a, _)| a)
                    .filter(|a| self.defs.contains_key(a))
                    .collect();
                v.sort();
                v.dedup();
                (&**k, v)
            })
            .collect();

        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Active,
            Done,
        }
        let mut marks: HashMap<&str, Mark> = deps.keys().map(|k| (*k, Mark::Fresh)).collect();

        fn visit<'a>(
            node: &'a str,
            deps: &'a HashMap<&'a str, Vec<Arc<str>>>,
            marks: &mut HashMap<&'a str, Mark>,
            path: &mut Vec<&'a str>,
        ) -> Option<Vec<String>> {
            marks.insert(node, Mark::Active);
            path.push(node);
            for next in &deps[node] {
                let next: &str = next;
                let next = deps.get_key_value(next).map(|(k, _)| *k)?;
                match marks[next] {
                    Mark::Active => {
                        let start = path.iter().position(|p| *p == next).unwrap_or(0);
                        return Some(path[start..].iter().map(|s| s.to_string()).collect());
                    }
                    Mark::Fresh => {
                        if let Some(c) = visit(next, deps, marks, path) {
                            return Some(c);
                        }
                    }
                    Mark::Done => {}
                }
            }
            path.pop();
            marks.insert(node, Mark::Done);
            None
        }

        let mut keys: Vec<&str> = deps.keys().copied().collect();
        keys.sort();
        for k in keys {
            if marks[k] == Mark::Fresh {
                if let Some(cycle) = visit(k, &deps, &mut marks, &mut Vec::new()) {
                    return Err(GuardednessError { cycle });
                }
            }
        }
        Ok(())
    }
}
