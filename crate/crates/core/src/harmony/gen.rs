//! Seeded random generation of guarded specifications and terms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::congruence::CanonicalForm;
use crate::parser::{parse, SpecFile};
use crate::statespace::{explore_while, Semantics};
use crate::syntax::{DefEnv, Definition, Name, NameSupply, Rate, Term};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenParams {
    /// Nesting depth of generated terms; 0 yields `main := 0`.
    pub size: usize,
    /// Upper bound on constants defined per spec.
    pub constants: usize,
    /// Upper bound on unguarded delays in every reachable state.
    pub max_delays: usize,
    /// Generated specs reach at most this many states.
    pub max_states: usize,
    /// Free channel names to draw from.
    pub channels: usize,
    /// Number of independently generated parallel components of `main`.
    pub width: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            size: 3,
            constants: 3,
            max_delays: 6,
            max_states: 200,
            channels: 3,
            width: 1,
        }
    }
}

const RATES: [&str; 5] = ["1", "2", "3", "5", "0.5"];
const CONSTANTS: [&str; 4] = ["A", "B", "C", "D"];
const ATTEMPTS: usize = 1000;
/// Largest term size of an accepted reachable state; growing states make
/// exploration quadratic in the number of components.
const MAX_STATE_SIZE: usize = 80;

/// Random term builder. Binders get globally unique names so generated
/// terms never shadow.
pub struct TermGen<'a, R: Rng> {
    pub rng: &'a mut R,
    /// Constants with their arities; references are allowed unguarded only
    /// to those before `unguarded_limit`.
    pub constants: Vec<(&'static str, usize)>,
    pub unguarded_limit: usize,
    counter: usize,
}

impl<'a, R: Rng> TermGen<'a, R> {
    pub fn new(rng: &'a mut R) -> Self {
        TermGen {
            rng,
            constants: Vec::new(),
            unguarded_limit: 0,
            counter: 0,
        }
    }

    fn fresh(&mut self, base: &str) -> Name {
        self.counter += 1;
        Name::channel(&format!("{base}{}", self.counter))
    }

    fn pick(&mut self, scope: &[Name]) -> Name {
        scope
            .choose(self.rng)
            .expect("scope is never empty")
            .clone()
    }

    /// A process term of at most the given depth.
    pub fn process(&mut self, depth: usize, scope: &mut Vec<Name>, guarded: bool) -> Term {
        let allowed = if guarded {
            self.constants.len()
        } else {
            self.unguarded_limit
        };
        let w_const = if allowed > 0 { 2 } else { 0 };
        if depth == 0 {
            return match self.rng.gen_range(0..3 + w_const) {
                0 | 1 => Term::Nil,
                2 => self.sum(0, scope),
                _ => self.constant(allowed, scope),
            };
        }
        let weights = [1, 5, 2, 1, w_const];
        let total: u32 = weights.iter().sum();
        let mut roll = self.rng.gen_range(0..total);
        let mut choice = 0;
        for (i, w) in weights.iter().enumerate() {
            if roll < *w {
                choice = i;
                break;
            }
            roll -= w;
        }
        match choice {
            0 => Term::Nil,
            1 => self.sum(depth, scope),
            2 => {
                let l = self.process(depth - 1, scope, guarded);
                let r = self.process(depth - 1, scope, guarded);
                Term::par(l, r)
            }
            3 => {
                let x = self.fresh("n");
                scope.push(x.clone());
                let body = self.process(depth - 1, scope, guarded);
                scope.pop();
                Term::new_channel(x, body)
            }
            _ => self.constant(allowed, scope),
        }
    }

    fn constant(&mut self, allowed: usize, scope: &[Name]) -> Term {
        let (name, arity) = self.constants[self.rng.gen_range(0..allowed)];
        let args = (0..arity).map(|_| self.pick(scope)).collect();
        Term::constant(name, args)
    }

    /// A guarded sum with one to three branches.
    pub fn sum(&mut self, depth: usize, scope: &mut Vec<Name>) -> Term {
        let n = [1, 1, 1, 2, 2, 3][self.rng.gen_range(0..6)];
        let mut acc = self.branch(depth, scope);
        for _ in 1..n {
            let b = self.branch(depth, scope);
            acc = Term::sum(acc, b);
        }
        acc
    }

    fn branch(&mut self, depth: usize, scope: &mut Vec<Name>) -> Term {
        let next = depth.saturating_sub(1);
        match self.rng.gen_range(0..8) {
            0 => Term::tau(self.process(next, scope, true)),
            1..=3 => {
                let rate =
                    Rate::parse(RATES.choose(self.rng).expect("non-empty")).expect("valid rate");
                Term::delay(rate, self.process(next, scope, true))
            }
            4 | 5 => {
                let (s, o) = (self.pick(scope), self.pick(scope));
                Term::output(s, o, self.process(next, scope, true))
            }
            _ => {
                let s = self.pick(scope);
                let y = self.fresh("y");
                scope.push(y.clone());
                let cont = self.process(next, scope, true);
                scope.pop();
                Term::input(s, y, cont)
            }
        }
    }
}

fn channels(n: usize) -> Vec<Name> {
    ["a", "b", "c", "d", "e"]
        .iter()
        .take(n.clamp(1, 5))
        .map(|c| Name::channel(c))
        .collect()
}

fn candidate(rng: &mut ChaCha8Rng, params: &GenParams) -> SpecFile {
    let k = rng.gen_range(0..=params.constants.min(CONSTANTS.len()));
    let arities: Vec<usize> = (0..k).map(|_| rng.gen_range(0..=1)).collect();
    let constants: Vec<(&'static str, usize)> =
        CONSTANTS[..k].iter().copied().zip(arities).collect();
    let mut defs = DefEnv::new();
    let mut gen = TermGen::new(rng);
    gen.constants = constants.clone();
    for (i, &(name, arity)) in constants.iter().enumerate() {
        let params_: Vec<Name> = (0..arity)
            .map(|j| Name::channel(&format!("x{j}")))
            .collect();
        let mut scope = channels(params.channels);
        scope.extend(params_.iter().cloned());
        gen.unguarded_limit = i;
        let mut body = gen.process(params.size, &mut scope, false);
        for p in &params_ {
            if !body.is_free(p) {
                body = Term::par(body, Term::output(p.clone(), p.clone(), Term::Nil));
            }
        }
        defs.insert(Definition {
            name: name.into(),
            params: params_,
            body,
        })
        .expect("distinct names");
    }
    gen.unguarded_limit = k;
    let mut scope = channels(params.channels);
    let main = Term::par_all(
        (0..params.width.max(1))
            .map(|_| gen.process(params.size, &mut scope, false))
            .collect::<Vec<_>>(),
    );
    let spec = SpecFile {
        defs,
        main,
        source: Default::default(),
    };
    parse(&spec.to_source()).expect("generated specs print to valid source")
}

fn acceptable(spec: &SpecFile, params: &GenParams) -> bool {
    if spec.defs.check_guarded().is_err() {
        return false;
    }
    let admit = |c: &CanonicalForm| {
        let t = c.repr();
        let mut names = NameSupply::for_context(&spec.defs, [t]);
        t.size() <= MAX_STATE_SIZE
            && t.count_unguarded_delays(&spec.defs, &mut names) <= params.max_delays
    };
    matches!(
        explore_while(spec, Semantics::Reduction, params.max_states, &admit),
        Ok(Some(_))
    )
}

/// A guarded specification determined by `seed`, whose reachable states
/// stay within the bounds of `params`.
pub fn gen_spec(seed: u64, params: &GenParams) -> SpecFile {
    if params.size == 0 {
        return parse("main := 0").expect("valid");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ATTEMPTS {
        let spec = candidate(&mut rng, params);
        if acceptable(&spec, params) {
            return spec;
        }
    }
    parse("main := 0").expect("valid")
}

/// A random constant-free term over the channels `a`..`c`, possibly with
/// stochastic binders, for congruence testing.
pub fn gen_term(rng: &mut impl Rng, depth: usize) -> Term {
    let mut gen = TermGen::new(rng);
    gen.constants = vec![("K", 1)];
    gen.unguarded_limit = 1;
    let mut scope = channels(3);
    gen.process(depth, &mut scope, false)
}
