//! Early labeled transition semantics with identified Markovian
//! transitions, plus total-rate functions over targets.

use std::collections::BTreeSet;
use std::fmt;

use crate::congruence::{state_key, CanonicalForm};
use crate::syntax::{alpha_equal, DefEnv, Name, NameSupply, Prefix, Rate, Term};

/// One symbol of a transition identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IdStep {
    SumLeft,
    SumRight,
    ParLeft,
    ParRight,
}

impl IdStep {
    fn symbol(self) -> &'static str {
        match self {
            IdStep::SumLeft => "+0",
            IdStep::SumRight => "+1",
            IdStep::ParLeft => "|0",
            IdStep::ParRight => "|1",
        }
    }
}

/// Position of a delay in the term, outermost operator first. Empty for a
/// delay prefix at the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Identifier(pub Vec<IdStep>);

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("ε");
        }
        for s in &self.0 {
            f.write_str(s.symbol())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Tau,
    FreeOutput { subject: Name, object: Name },
    BoundOutput { subject: Name, object: Name },
    Input { subject: Name, object: Name },
    Markov { rate: Rate, id: Identifier },
}

impl Label {
    pub fn bound_names(&self) -> Vec<&Name> {
        match self {
            Label::BoundOutput { object, .. } => vec![object],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Tau => f.write_str("tau"),
            Label::FreeOutput { subject, object } => write!(f, "{subject}<{object}>"),
            Label::BoundOutput { subject, object } => write!(f, "{subject}<({object})>"),
            Label::Input { subject, object } => write!(f, "{subject}({object})"),
            Label::Markov { rate, id } => write!(f, "({rate}, {id})"),
        }
    }
}

/// Internal action. Inputs carry their binder so that instantiation can be
/// deferred until the received name is known.
#[derive(Clone, Debug)]
enum Act {
    Tau,
    Out {
        subject: Name,
        object: Name,
        bound: bool,
    },
    In {
        subject: Name,
        var: Name,
    },
    Markov {
        rate: Rate,
        id: Vec<IdStep>,
    },
}

impl Act {
    fn subject(&self) -> Option<&Name> {
        match self {
            Act::Out { subject, .. } | Act::In { subject, .. } => Some(subject),
            _ => None,
        }
    }

    fn tag(mut self, step: IdStep) -> Act {
        if let Act::Markov { id, .. } = &mut self {
            id.insert(0, step);
        }
        self
    }
}

/// Transitions of a term whose binders are all distinct from each other and
/// from its free names. Bound names never need alpha conversion here.
fn steps(t: &Term, env: &DefEnv, names: &mut NameSupply) -> Vec<(Act, Term)> {
    match t {
        Term::Nil => Vec::new(),
        Term::Prefixed(p, c) => {
            let act = match p {
                Prefix::Tau => Act::Tau,
                Prefix::Output { subject, object } => Act::Out {
                    subject: subject.clone(),
                    object: object.clone(),
                    bound: false,
                },
                Prefix::Input { subject, bound } => Act::In {
                    subject: subject.clone(),
                    var: bound.clone(),
                },
                Prefix::Delay(rate) => Act::Markov {
                    rate: rate.clone(),
                    id: Vec::new(),
                },
                Prefix::SymbolicDelay(_) => return Vec::new(),
            };
            vec![(act, (**c).clone())]
        }
        Term::Sum(l, r) => {
            let mut out: Vec<(Act, Term)> = steps(l, env, names)
                .into_iter()
                .map(|(a, t)| (a.tag(IdStep::SumLeft), t))
                .collect();
            out.extend(
                steps(r, env, names)
                    .into_iter()
                    .map(|(a, t)| (a.tag(IdStep::SumRight), t)),
            );
            out
        }
        Term::Par(l, r) => {
            let left = steps(l, env, names);
            let right = steps(r, env, names);
            let mut out = Vec::new();
            for (a, l2) in &left {
                out.push((
                    a.clone().tag(IdStep::ParLeft),
                    Term::par(l2.clone(), (**r).clone()),
                ));
            }
            for (a, r2) in &right {
                out.push((
                    a.clone().tag(IdStep::ParRight),
                    Term::par((**l).clone(), r2.clone()),
                ));
            }
            for (a, l2) in &left {
                for (b, r2) in &right {
                    if let Some(t) = communicate(a, l2, b, r2, false, names) {
                        out.push((Act::Tau, t));
                    }
                    if let Some(t) = communicate(b, r2, a, l2, true, names) {
                        out.push((Act::Tau, t));
                    }
                }
            }
            out
        }
        Term::Restrict(x, anno, body) => {
            let mut out = Vec::new();
            for (a, b2) in steps(body, env, names) {
                if a.subject() == Some(x) {
                    continue;
                }
                match a {
                    Act::Out {
                        subject,
                        object,
                        bound: false,
                    } if object == *x => {
                        out.push((
                            Act::Out {
                                subject,
                                object,
                                bound: true,
                            },
                            b2,
                        ));
                    }
                    a => out.push((a, Term::restrict(x.clone(), anno.clone(), b2))),
                }
            }
            out
        }
        Term::Const(a, args) => match env.instantiate(a, args, names) {
            Some(body) => {
                let body = body.uniquify(names);
                steps(&body, env, names)
            }
            None => Vec::new(),
        },
    }
}

/// Output `out` meets input `inp`; `swapped` says the output came from the
/// right operand.
fn communicate(
    out: &Act,
    out_target: &Term,
    inp: &Act,
    in_target: &Term,
    swapped: bool,
    names: &mut NameSupply,
) -> Option<Term> {
    let (
        Act::Out {
            subject: x,
            object: y,
            bound,
        },
        Act::In { subject: x2, var },
    ) = (out, inp)
    else {
        return None;
    };
    if x != x2 {
        return None;
    }
    let received = in_target.substitute(&[(var.clone(), y.clone())].into_iter().collect(), names);
    let par = if swapped {
        Term::par(received, out_target.clone())
    } else {
        Term::par(out_target.clone(), received)
    };
    Some(if *bound {
        Term::new_channel(y.clone(), par)
    } else {
        par
    })
}

/// All labeled transitions of `t`. Inputs are instantiated with every free
/// name of `t` and one fresh name.
pub fn labeled_step(t: &Term, env: &DefEnv) -> Vec<(Label, Term)> {
    let mut names = NameSupply::for_context(env, [t]);
    let start = t.uniquify(&mut names);
    let raw = steps(&start, env, &mut names);
    let mut received: Vec<Name> = t
        .free_names()
        .into_iter()
        .filter(Name::is_channel)
        .collect();
    received.push(names.fresh(&Name::channel("w")));
    let mut out = Vec::new();
    for (act, target) in raw {
        match act {
            Act::Tau => out.push((Label::Tau, target)),
            Act::Markov { rate, id } => out.push((
                Label::Markov {
                    rate,
                    id: Identifier(id),
                },
                target,
            )),
            Act::Out {
                subject,
                object,
                bound,
            } => {
                let label = if bound {
                    Label::BoundOutput { subject, object }
                } else {
                    Label::FreeOutput { subject, object }
                };
                out.push((label, target));
            }
            Act::In { subject, var } => {
                for w in &received {
                    let map = [(var.clone(), w.clone())].into_iter().collect();
                    out.push((
                        Label::Input {
                            subject: subject.clone(),
                            object: w.clone(),
                        },
                        target.substitute(&map, &mut names),
                    ));
                }
            }
        }
    }
    out
}

/// The τ and Markovian transitions of `t`, the only ones a closed system
/// performs.
pub fn internal_steps(t: &Term, env: &DefEnv) -> (Vec<Term>, Vec<(Rate, Identifier, Term)>) {
    let mut names = NameSupply::for_context(env, [t]);
    let start = t.uniquify(&mut names);
    let mut taus = Vec::new();
    let mut markov = Vec::new();
    for (act, target) in steps(&start, env, &mut names) {
        match act {
            Act::Tau => taus.push(target),
            Act::Markov { rate, id } => markov.push((rate, Identifier(id), target)),
            _ => {}
        }
    }
    (taus, markov)
}

/// Total rate of the Markovian transitions from `t` to terms alpha-equal to `u`.
pub fn gamma(t: &Term, u: &Term, env: &DefEnv) -> f64 {
    internal_steps(t, env)
        .1
        .iter()
        .filter(|(_, _, target)| alpha_equal(target, u))
        .map(|(r, _, _)| r.value())
        .sum()
}

/// Total rate from `t` into the congruence class `class`.
pub fn gamma_class(t: &Term, class: &CanonicalForm, env: &DefEnv) -> f64 {
    gamma_set(t, &[class.clone()].into_iter().collect(), env)
}

/// Total rate from `t` into any of the given classes.
pub fn gamma_set(t: &Term, targets: &BTreeSet<CanonicalForm>, env: &DefEnv) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    internal_steps(t, env)
        .1
        .iter()
        .filter(|(_, _, target)| state_key(target, env).is_ok_and(|c| targets.contains(&c)))
        .map(|(r, _, _)| r.value())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse, parse_extended_term};

    fn t(s: &str) -> Term {
        parse_extended_term(s).unwrap()
    }

    fn twin_loop() -> (DefEnv, Term) {
        let s = parse("A() := (5).A()  main := (5).A() | (5).A()").unwrap();
        (s.defs, s.main)
    }

    #[test]
    fn twin_loop_transitions() {
        let (env, p) = twin_loop();
        let steps = labeled_step(&p, &env);
        assert_eq!(steps.len(), 2);
        let expect = [("|0", t("A() | (5).A()")), ("|1", t("(5).A() | A()"))];
        for (id, target) in expect {
            assert!(
                steps.iter().any(|(l, u)| matches!(l,
                    Label::Markov { rate, id: i } if rate.as_str() == "5" && i.to_string() == id)
                    && alpha_equal(u, &target)),
                "missing {id}"
            );
        }
    }

    #[test]
    fn tau_axiom() {
        let steps = labeled_step(&t("tau.0"), &DefEnv::new());
        assert_eq!(steps, vec![(Label::Tau, Term::Nil)]);
    }

    #[test]
    fn restricted_channel_communication() {
        let steps = labeled_step(&t("new x in (x<a>.0 | x(z).z<b>.0)"), &DefEnv::new());
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].0, Label::Tau);
        assert!(alpha_equal(&steps[0].1, &t("new x in (0 | a<b>.0)")));
    }

    #[test]
    fn free_channel_labels() {
        let steps = labeled_step(&t("a<b>.0 | a(z).z<c>.0"), &DefEnv::new());
        let labels: Vec<String> = steps.iter().map(|(l, _)| l.to_string()).collect();
        assert!(labels.contains(&"a<b>".to_string()));
        assert!(labels.contains(&"tau".to_string()));
        // early inputs: a, b, c and one fresh name
        assert_eq!(labels.iter().filter(|l| l.starts_with("a(")).count(), 4);
        let tau = steps.iter().find(|(l, _)| *l == Label::Tau).unwrap();
        assert!(alpha_equal(&tau.1, &t("0 | b<c>.0")));
    }

    #[test]
    fn scope_extrusion() {
        let steps = labeled_step(&t("new y in a<y>.y<c>.0 | a(z).z(w).0"), &DefEnv::new());
        let bound = steps
            .iter()
            .find(|(l, _)| matches!(l, Label::BoundOutput { .. }))
            .expect("bound output");
        assert!(matches!(&bound.0, Label::BoundOutput { subject, .. } if subject.id() == "a"));
        let tau = steps.iter().find(|(l, _)| *l == Label::Tau).unwrap();
        assert!(alpha_equal(&tau.1, &t("new y in (y<c>.0 | y(w).0)")));
    }

    #[test]
    fn gamma_examples() {
        let (env, p) = twin_loop();
        assert_eq!(gamma(&p, &t("A() | (5).A()"), &env), 5.0);
        assert_eq!(gamma(&p, &t("(5).A() | A()"), &env), 5.0);
        let class = state_key(&p, &env).unwrap();
        assert_eq!(gamma_class(&p, &class, &env), 10.0);
        assert_eq!(gamma(&t("tau.0"), &Term::Nil, &env), 0.0);
        assert_eq!(gamma(&t("(2).0 + (2).0"), &Term::Nil, &env), 4.0);
    }

    #[test]
    fn gamma_set_examples() {
        let env = DefEnv::new();
        let (penv, p) = twin_loop();
        assert_eq!(gamma_set(&p, &BTreeSet::new(), &penv), 0.0);
        let set = [state_key(&p, &penv).unwrap()].into_iter().collect();
        assert_eq!(gamma_set(&p, &set, &penv), 10.0);
        let set = [
            state_key(&Term::Nil, &env).unwrap(),
            state_key(&t("tau.0"), &env).unwrap(),
        ]
        .into_iter()
        .collect();
        assert_eq!(gamma_set(&t("(2).0 + (3).tau.0"), &set, &env), 5.0);
    }

    #[test]
    fn sum_identifiers() {
        let steps = labeled_step(&t("(2).0 + (2).0"), &DefEnv::new());
        let ids: Vec<String> = steps
            .iter()
            .map(|(l, _)| match l {
                Label::Markov { id, .. } => id.to_string(),
                _ => panic!(),
            })
            .collect();
        assert_eq!(ids, ["+0", "+1"]);
    }

    #[test]
    fn constants_pass_identifiers_through() {
        let s = parse("A() := (1).0 + (2).0  main := A() | A()").unwrap();
        let steps = labeled_step(&s.main, &s.defs);
        let mut ids: Vec<String> = steps.iter().map(|(l, _)| l.to_string()).collect();
        ids.sort();
        assert_eq!(ids, ["(1, |0+0)", "(1, |1+0)", "(2, |0+1)", "(2, |1+1)"]);
    }
}
