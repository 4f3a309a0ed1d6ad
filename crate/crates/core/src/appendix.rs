//! Exact checks of the weighting identities for the usual and generalised
//! propensity scores, and of the two counterexamples showing that neither
//! score implies exchangeability given the other.
//!
//! Everything is an exhaustive sum over a finite joint distribution. The
//! counterexamples use rational arithmetic, with the uniform outcome noise
//! cut into the cells induced by its comparison thresholds.

use std::collections::BTreeMap;
use std::fmt::{self, Debug, Display};

use num_rational::Ratio;
use num_traits::{Num, One, Zero};
use rand::Rng;

use crate::error::{Error, Result};

pub type Exact = Ratio<i64>;

/// Probability scalar: `f64` compared within a tolerance, or an exact rational.
pub trait Prob: Clone + PartialEq + PartialOrd + Debug + Display + Num {
    fn to_f64(&self) -> f64;
    fn close(&self, other: &Self, tol: f64) -> bool;
}

impl Prob for f64 {
    fn to_f64(&self) -> f64 {
        *self
    }
    fn close(&self, other: &Self, tol: f64) -> bool {
        (self - other).abs() <= tol
    }
}

impl Prob for Exact {
    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
    fn close(&self, other: &Self, _tol: f64) -> bool {
        self == other
    }
}

fn ratio(n: i64, d: i64) -> Exact {
    Ratio::new(n, d)
}

/// One support point. `r[k]` is true when covariate `k` is observed; `cell`
/// labels the outcome-noise cell when the model has one, else 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom<T> {
    pub w: Vec<u32>,
    pub r: Vec<bool>,
    pub a: u8,
    pub y0: u8,
    pub y1: u8,
    pub cell: u32,
    pub p: T,
}

impl<T> Atom<T> {
    /// Observed covariate data, `None` for a missing entry.
    pub fn v(&self) -> Vec<Option<u32>> {
        self.w.iter().zip(&self.r).map(|(&w, &r)| r.then_some(w)).collect()
    }

    pub fn y(&self) -> u8 {
        if self.a == 1 {
            self.y1
        } else {
            self.y0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint<T> {
    atoms: Vec<Atom<T>>,
}

impl<T: Prob> DiscreteJoint<T> {
    pub fn new(atoms: Vec<Atom<T>>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::InvalidArgument("empty support".into()));
        };
        let dim = first.w.len();
        let mut total = T::zero();
        for at in &atoms {
            if at.w.len() != dim || at.r.len() != dim {
                return Err(Error::InvalidArgument("covariate dimension differs between atoms".into()));
            }
            if at.a > 1 || at.y0 > 1 || at.y1 > 1 {
                return Err(Error::InvalidArgument("exposure and outcomes must be binary".into()));
            }
            if at.p < T::zero() {
                return Err(Error::InvalidArgument(format!("negative probability {}", at.p)));
            }
            total = total + at.p.clone();
        }
        if !total.close(&T::one(), 1e-12) {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[Atom<T>] {
        &self.atoms
    }

    pub fn prob(&self, event: impl Fn(&Atom<T>) -> bool) -> T {
        self.atoms
            .iter()
            .filter(|a| event(a))
            .fold(T::zero(), |s, a| s + a.p.clone())
    }

    pub fn cond(&self, event: impl Fn(&Atom<T>) -> bool, given: impl Fn(&Atom<T>) -> bool) -> T {
        self.prob(|a| given(a) && event(a)) / self.prob(given)
    }

    /// Pr(A = 1 | key) for every key value with positive mass.
    pub fn propensity_by<K: Ord + Clone + Debug>(&self, key: impl Fn(&Atom<T>) -> K) -> Result<BTreeMap<K, T>> {
        let mut mass: BTreeMap<K, (T, T)> = BTreeMap::new();
        for at in &self.atoms {
            let e = mass.entry(key(at)).or_insert((T::zero(), T::zero()));
            if at.a == 1 {
                e.1 = e.1.clone() + at.p.clone();
            } else {
                e.0 = e.0.clone() + at.p.clone();
            }
        }
        let mut out = BTreeMap::new();
        for (k, (p0, p1)) in mass {
            let tot = p0 + p1.clone();
            if tot == T::zero() {
                continue;
            }
            let e = p1 / tot;
            if !(e > T::zero() && e < T::one()) {
                return Err(Error::Positivity(format!("Pr(A=1 | {k:?}) = {e}")));
            }
            out.insert(k, e);
        }
        Ok(out)
    }

    /// Usual propensity score e(w) of each atom.
    pub fn e(&self) -> Result<Vec<T>> {
        let m = self.propensity_by(|a| a.w.clone())?;
        Ok(self.atoms.iter().map(|a| m[&a.w].clone()).collect())
    }

    /// Generalised propensity score e*(v) of each atom.
    pub fn e_star(&self) -> Result<Vec<T>> {
        let m = self.propensity_by(|a| a.v())?;
        Ok(self.atoms.iter().map(|a| m[&a.v()].clone()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub computed: f64,
    pub expected: f64,
    /// Exact or full-precision rendering of computed and expected values.
    pub detail: String,
    pub pass: bool,
}

impl Check {
    fn new<T: Prob>(name: impl Into<String>, computed: &T, expected: &T, tol: f64) -> Self {
        Self {
            name: name.into(),
            computed: computed.to_f64(),
            expected: expected.to_f64(),
            detail: format!("{computed} vs {expected}"),
            pass: computed.close(expected, tol),
        }
    }

    fn flag(name: impl Into<String>, holds: bool) -> Self {
        Self {
            name: name.into(),
            computed: holds as u8 as f64,
            expected: 1.0,
            detail: holds.to_string(),
            pass: holds,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub title: String,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        writeln!(f, "| check | computed | expected | exact | result |")?;
        writeln!(f, "|---|---:|---:|---|---|")?;
        for c in &self.checks {
            writeln!(
                f,
                "| {} | {:.12} | {:.12} | {} | {} |",
                c.name.replace('|', "\\|"),
                c.computed,
                c.expected,
                c.detail,
                if c.pass { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Outcome of the weighting identities for one balancing key (W or V).
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    /// Normaliser and balance identities; these hold for any joint.
    pub identities: Report,
    /// Whether (Y0, Y1) is independent of A given the key, within tolerance.
    pub exchangeable: bool,
    /// Weighted counterfactual laws per (y0, y1).
    pub counterfactual: Report,
}

impl IdentityReport {
    /// Identities hold, and the counterfactual laws agree whenever exchangeability does.
    pub fn passed(&self) -> bool {
        self.identities.passed() && (!self.exchangeable || self.counterfactual.passed())
    }
}

fn weighting_identities<T: Prob, K: Ord + Clone + Debug>(
    j: &DiscreteJoint<T>,
    key: impl Fn(&Atom<T>) -> K,
    label: &str,
    tol: f64,
) -> Result<IdentityReport> {
    let score = j.propensity_by(&key)?;
    let pa = [j.prob(|a| a.a == 0), j.prob(|a| a.a == 1)];
    if pa.iter().any(|p| *p == T::zero()) {
        return Err(Error::Positivity("one exposure arm has no mass".into()));
    }
    let odds = |k: &K| {
        let e = score[k].clone();
        e.clone() / (T::one() - e)
    };
    // Expected unnormalised weight per arm.
    let norm1 = j.prob(|a| a.a == 1) / pa[1].clone();
    let norm0 = j
        .atoms()
        .iter()
        .filter(|a| a.a == 0)
        .fold(T::zero(), |s, a| s + a.p.clone() * odds(&key(a)))
        / pa[0].clone();
    let mut checks = vec![
        Check::new(format!("E[phi*({label},A)|A=1] = 1"), &norm1, &T::one(), tol),
        Check::new(
            format!("E[phi*({label},A)|A=0] = Pr(A=1)/Pr(A=0)"),
            &norm0,
            &(pa[1].clone() / pa[0].clone()),
            tol,
        ),
    ];
    for k in score.keys() {
        let p0 = j.prob(|a| a.a == 0 && key(a) == *k) / pa[0].clone();
        let p1 = j.prob(|a| a.a == 1 && key(a) == *k) / pa[1].clone();
        let lhs = odds(k) / norm0.clone() * p0;
        checks.push(Check::new(
            format!("phi({label}={k:?},0) Pr({label}={k:?}|A=0) = Pr({label}={k:?}|A=1)"),
            &lhs,
            &p1,
            tol,
        ));
    }

    let cells = [(0u8, 0u8), (0, 1), (1, 0), (1, 1)];
    let mut exchangeable = true;
    for k in score.keys() {
        let arm = |arm: u8| j.prob(|a| a.a == arm && key(a) == *k);
        let (m0, m1) = (arm(0), arm(1));
        for &(y0, y1) in &cells {
            let q0 = j.prob(|a| a.a == 0 && key(a) == *k && a.y0 == y0 && a.y1 == y1) / m0.clone();
            let q1 = j.prob(|a| a.a == 1 && key(a) == *k && a.y0 == y0 && a.y1 == y1) / m1.clone();
            exchangeable &= q0.close(&q1, tol);
        }
    }
    let mut cf = Vec::new();
    for &(y0, y1) in &cells {
        let lhs = j
            .atoms()
            .iter()
            .filter(|a| a.a == 0 && a.y0 == y0 && a.y1 == y1)
            .fold(T::zero(), |s, a| s + a.p.clone() * odds(&key(a)))
            / norm0.clone()
            / pa[0].clone();
        let rhs = j.prob(|a| a.a == 1 && a.y0 == y0 && a.y1 == y1) / pa[1].clone() / norm1.clone();
        cf.push(Check::new(
            format!("weighted Pr(Y0={y0},Y1={y1}|A=0) = weighted Pr(Y0={y0},Y1={y1}|A=1)"),
            &lhs,
            &rhs,
            tol,
        ));
    }
    Ok(IdentityReport {
        identities: Report {
            title: format!("weighting identities given {label}"),
            checks,
        },
        exchangeable,
        counterfactual: Report {
            title: format!("counterfactual balance after weighting on {label}"),
            checks: cf,
        },
    })
}

/// Identities for the usual score e(w) and weights phi.
pub fn verify_phi_identities<T: Prob>(j: &DiscreteJoint<T>, tol: f64) -> Result<IdentityReport> {
    weighting_identities(j, |a| a.w.clone(), "W", tol)
}

/// Identities for the generalised score e*(v) and weights gamma.
pub fn verify_gamma_identities<T: Prob>(j: &DiscreteJoint<T>, tol: f64) -> Result<IdentityReport> {
    weighting_identities(j, |a| a.v(), "V", tol)
}

/// Pr(event | A = a, score = s) for both arms and each distinct score value.
pub fn arm_conditionals<T: Prob>(
    j: &DiscreteJoint<T>,
    score: &[T],
    event: impl Fn(&Atom<T>) -> bool,
) -> Vec<(T, [T; 2])> {
    let mut strata: Vec<T> = Vec::new();
    for s in score {
        if !strata.contains(s) {
            strata.push(s.clone());
        }
    }
    strata
        .into_iter()
        .map(|s| {
            let mut out = [T::zero(), T::zero()];
            for (arm, slot) in out.iter_mut().enumerate() {
                let mut num = T::zero();
                let mut den = T::zero();
                for (at, sc) in j.atoms().iter().zip(score) {
                    if *sc == s && at.a as usize == arm {
                        den = den + at.p.clone();
                        if event(at) {
                            num = num + at.p.clone();
                        }
                    }
                }
                *slot = num / den;
            }
            (s, out)
        })
        .collect()
}

/// Whether an event has the same law in both arms within every score stratum.
fn balanced_given<T: Prob>(j: &DiscreteJoint<T>, score: &[T], event: impl Fn(&Atom<T>) -> bool) -> bool {
    arm_conditionals(j, score, event)
        .iter()
        .all(|(_, [p0, p1])| p0 == p1)
}

fn counterfactuals_balanced_given<T: Prob>(j: &DiscreteJoint<T>, score: &[T]) -> bool {
    [(0u8, 0u8), (0, 1), (1, 0), (1, 1)]
        .iter()
        .all(|&(y0, y1)| balanced_given(j, score, |a| a.y0 == y0 && a.y1 == y1))
}

/// Missingness of a binary covariate that depends on the outcome.
#[derive(Debug, Clone)]
pub struct AppendixB {
    pub joint: DiscreteJoint<Exact>,
    pub e_star_missing: Exact,
    pub e_star_observed: Exact,
    /// Pr(eps <= 1/2 | A = a, e*(V) = e*(missing)) by exhaustive summation.
    pub eps_half: [Exact; 2],
    /// The same quantity from the closed-form mixture expression.
    pub eps_half_formula: [Exact; 2],
    pub report: Report,
}

/// Outcome-noise cells for Y = I(eps < (1 + A)/10) plus the event eps <= 1/2.
const B_CELLS: [(i64, i64); 4] = [(0, 1), (1, 2), (2, 5), (5, 10)];

fn b_width(c: usize) -> Exact {
    ratio(B_CELLS[c].1 - B_CELLS[c].0, 10)
}

/// Pr(eps <= u | A = a, Y = y) times the mixture weight, summed over y.
fn b_mixture(u: Exact, a: i64) -> Exact {
    let tenth = ratio(1, 10);
    let mut total = Exact::zero();
    for y in 0..=1i64 {
        let cut = ratio(1 + a, 10);
        let m = if cut < u { cut } else { u };
        let sign = if y == 1 { Exact::one() } else { -Exact::one() };
        let q = Exact::from(1 - y) + sign * m / u;
        let py = tenth * Exact::from((1 + a) * y + (9 - a) * (1 - y));
        let cond = q * u / py;
        let weight = Exact::from((1 + 5 * y) * ((1 + a) * y + (9 - a) * (1 - y))) / Exact::from(15 + 5 * a);
        total += cond * weight;
    }
    total
}

pub fn appendix_b_joint() -> DiscreteJoint<Exact> {
    let half = ratio(1, 2);
    let mut atoms = Vec::new();
    for w in 0..2u32 {
        for a in 0..2u8 {
            for c in 0..B_CELLS.len() {
                // eps < t for t in tenths: cell c lies below t iff its upper end is <= t
                let y0 = (B_CELLS[c].1 <= 1) as u8;
                let y1 = (B_CELLS[c].1 <= 2) as u8;
                let y = if a == 1 { y1 } else { y0 };
                let p_miss = ratio(1, 10) + ratio(y as i64, 2);
                for r in [false, true] {
                    let pr = if r { Exact::one() - p_miss } else { p_miss };
                    atoms.push(Atom {
                        w: vec![w],
                        r: vec![r],
                        a,
                        y0,
                        y1,
                        cell: c as u32,
                        p: half * half * b_width(c) * pr,
                    });
                }
            }
        }
    }
    DiscreteJoint::new(atoms).expect("the model is a distribution")
}

pub fn appendix_b_check() -> AppendixB {
    let j = appendix_b_joint();
    let e = j.e().expect("positivity holds");
    let es = j.e_star().expect("positivity holds");
    let find = |missing: bool| {
        j.atoms()
            .iter()
            .zip(&es)
            .find(|(a, _)| a.r[0] != missing)
            .map(|(_, s)| *s)
            .expect("both patterns occur")
    };
    let e_star_missing = find(true);
    let e_star_observed = find(false);
    let cond = |a: u8| j.cond(|at| at.cell <= 2, |at| at.a == a && !at.r[0]);
    let eps_half = [cond(0), cond(1)];
    let eps_half_formula = [b_mixture(ratio(1, 2), 0), b_mixture(ratio(1, 2), 1)];

    let mut checks = vec![
        Check::new("e*(V) when W is missing", &e_star_missing, &ratio(4, 7), 0.0),
        Check::new("e*(V) when W is observed", &e_star_observed, &ratio(16, 33), 0.0),
    ];
    for w in 0..2u32 {
        let k = j.atoms().iter().position(|a| a.w[0] == w).unwrap();
        checks.push(Check::new(format!("e(w={w})"), &e[k], &ratio(1, 2), 0.0));
    }
    let mut e_star_takes_4_7_only_when_missing = true;
    for (at, s) in j.atoms().iter().zip(&es) {
        e_star_takes_4_7_only_when_missing &= (*s == ratio(4, 7)) == !at.r[0];
    }
    checks.push(Check::flag("e*(V) = 4/7 iff W is missing", e_star_takes_4_7_only_when_missing));
    for a in 0..2 {
        let expected = if a == 0 { ratio(2, 3) } else { ratio(3, 4) };
        checks.push(Check::new(
            format!("Pr(eps<=1/2|A={a},e*(V)=4/7) by summation"),
            &eps_half[a],
            &expected,
            0.0,
        ));
        checks.push(Check::new(
            format!("Pr(eps<=1/2|A={a},e*(V)=4/7) closed form"),
            &eps_half_formula[a],
            &expected,
            0.0,
        ));
    }
    checks.push(Check::flag(
        "W independent of A given e*(V)",
        balanced_given(&j, &es, |a| a.w[0] == 1),
    ));
    checks.push(Check::flag(
        "(Y0,Y1) independent of A given e(W)",
        counterfactuals_balanced_given(&j, &e),
    ));
    checks.push(Check::flag(
        "(Y0,Y1) not independent of A given e*(V)",
        !counterfactuals_balanced_given(&j, &es),
    ));
    AppendixB {
        joint: j,
        e_star_missing,
        e_star_observed,
        eps_half,
        eps_half_formula,
        report: Report {
            title: "Outcome-dependent missingness: balance on e*(V) without exchangeability".into(),
            checks,
        },
    }
}

/// Missingness that precedes exposure and outcome.
#[derive(Debug, Clone)]
pub struct AppendixC {
    pub joint: DiscreteJoint<Exact>,
    pub e_w: [Exact; 2],
    pub e_star_missing: Exact,
    pub e_star_observed: Exact,
    /// Pr(Y0 = 1 | A = a, e*(V)) indexed by [missing stratum, observed stratum][a].
    pub y0_given_e_star: [[Exact; 2]; 2],
    /// Pr(Y0 = 1 | A = a, e(W) = 0.38) by exhaustive summation.
    pub y0_given_e: [Exact; 2],
    /// The same quantity from the closed-form expression.
    pub y0_given_e_formula: [Exact; 2],
    pub report: Report,
}

/// Outcome-noise cells for Y = I(eps < (1 + 2R)/10).
const C_CELLS: [(i64, i64); 3] = [(0, 1), (1, 3), (3, 10)];

pub fn appendix_c_joint() -> DiscreteJoint<Exact> {
    let mut atoms = Vec::new();
    for w in 0..2u32 {
        for r in [false, true] {
            let pr = if r { ratio(9, 10) } else { ratio(1, 10) };
            let ri = r as i64;
            let pa1 = ratio(1 + ri, 5);
            for a in 0..2u8 {
                let pa = if a == 1 { pa1 } else { Exact::one() - pa1 };
                for (c, &(lo, hi)) in C_CELLS.iter().enumerate() {
                    let y = (hi <= 1 + 2 * ri) as u8;
                    atoms.push(Atom {
                        w: vec![w],
                        r: vec![r],
                        a,
                        y0: y,
                        y1: y,
                        cell: c as u32,
                        p: ratio(1, 2) * pr * pa * ratio(hi - lo, 10),
                    });
                }
            }
        }
    }
    DiscreteJoint::new(atoms).expect("the model is a distribution")
}

fn c_formula(a: i32) -> Exact {
    let pow = |base: Exact, k: i32| if k == 1 { base } else { Exact::one() };
    let num = pow(ratio(20, 100), a) * pow(ratio(80, 100), 1 - a) * ratio(1, 100)
        + pow(ratio(40, 100), a) * pow(ratio(60, 100), 1 - a) * ratio(27, 100);
    num / (pow(ratio(38, 100), a) * pow(ratio(62, 100), 1 - a))
}

pub fn appendix_c_check() -> AppendixC {
    let j = appendix_c_joint();
    let e = j.e().expect("positivity holds");
    let es = j.e_star().expect("positivity holds");
    let by_w = |w: u32| {
        let k = j.atoms().iter().position(|a| a.w[0] == w).unwrap();
        e[k]
    };
    let e_w = [by_w(0), by_w(1)];
    let star = |observed: bool| {
        let k = j.atoms().iter().position(|a| a.r[0] == observed).unwrap();
        es[k]
    };
    let (e_star_missing, e_star_observed) = (star(false), star(true));
    let y0_given = |s: Exact, a: u8| {
        let mut num = Exact::zero();
        let mut den = Exact::zero();
        for (at, sc) in j.atoms().iter().zip(&es) {
            if *sc == s && at.a == a {
                den += at.p;
                if at.y0 == 1 {
                    num += at.p;
                }
            }
        }
        num / den
    };
    let y0_given_e_star = [
        [y0_given(e_star_missing, 0), y0_given(e_star_missing, 1)],
        [y0_given(e_star_observed, 0), y0_given(e_star_observed, 1)],
    ];
    let y0_given_e = [
        j.cond(|at| at.y0 == 1, |at| at.a == 0),
        j.cond(|at| at.y0 == 1, |at| at.a == 1),
    ];
    let y0_given_e_formula = [c_formula(0), c_formula(1)];

    let mut checks = Vec::new();
    for w in 0..2 {
        checks.push(Check::new(format!("e(w={w})"), &e_w[w], &ratio(38, 100), 0.0));
    }
    checks.push(Check::new("e*(V) when W is missing", &e_star_missing, &ratio(20, 100), 0.0));
    checks.push(Check::new("e*(V) when W is observed", &e_star_observed, &ratio(40, 100), 0.0));
    for a in 0..2 {
        checks.push(Check::new(
            format!("Pr(Y0=1|A={a},e*(V)=0.20)"),
            &y0_given_e_star[0][a],
            &ratio(1, 10),
            0.0,
        ));
        checks.push(Check::new(
            format!("Pr(Y0=1|A={a},e*(V)=0.40)"),
            &y0_given_e_star[1][a],
            &ratio(3, 10),
            0.0,
        ));
        checks.push(Check::new(
            format!("Pr(Y0=1|A={a},e(W)=0.38) summation = closed form"),
            &y0_given_e[a],
            &y0_given_e_formula[a],
            0.0,
        ));
    }
    checks.push(Check::flag(
        "(Y0,Y1) independent of A given e*(V)",
        counterfactuals_balanced_given(&j, &es),
    ));
    checks.push(Check::flag(
        "Pr(Y0=1|A=a,e(W)=0.38) varies with a",
        y0_given_e[0] != y0_given_e[1],
    ));
    AppendixC {
        joint: j,
        e_w,
        e_star_missing,
        e_star_observed,
        y0_given_e_star,
        y0_given_e,
        y0_given_e_formula,
        report: Report {
            title: "Missingness preceding exposure: exchangeability given e*(V) but not e(W)".into(),
            checks,
        },
    }
}

fn simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

const Y_CELLS: [(u8, u8); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// Random joint over one covariate with `levels` values and a missingness
/// indicator. With `exchangeable`, (Y0, Y1) is independent of A given W.
pub fn random_joint<R: Rng>(rng: &mut R, levels: usize, exchangeable: bool) -> DiscreteJoint<f64> {
    let pw = simplex(rng, levels);
    let mut atoms = Vec::new();
    for (w, &pw) in pw.iter().enumerate() {
        let e = rng.gen_range(0.05..0.95);
        let shared = simplex(rng, 4);
        for a in 0..2u8 {
            let pa = if a == 1 { e } else { 1.0 - e };
            let py = if exchangeable { shared.clone() } else { simplex(rng, 4) };
            for (k, &(y0, y1)) in Y_CELLS.iter().enumerate() {
                let obs = rng.gen_range(0.05..0.95);
                for (r, pr) in [(false, 1.0 - obs), (true, obs)] {
                    atoms.push(Atom {
                        w: vec![w as u32],
                        r: vec![r],
                        a,
                        y0,
                        y1,
                        cell: 0,
                        p: pw * pa * py[k] * pr,
                    });
                }
            }
        }
    }
    DiscreteJoint::new(atoms).expect("product of simplices sums to one")
}

/// Random joint built from the observed data V first, so that with
/// `exchangeable` (Y0, Y1) is independent of A given V. Behind a missing
/// entry W takes any value.
pub fn random_joint_v_first<R: Rng>(rng: &mut R, levels: usize, exchangeable: bool) -> DiscreteJoint<f64> {
    let pv = simplex(rng, levels + 1);
    let mut atoms = Vec::new();
    for (v, &pv) in pv.iter().enumerate() {
        let missing = v == levels;
        let e = rng.gen_range(0.05..0.95);
        let shared = simplex(rng, 4);
        for a in 0..2u8 {
            let pa = if a == 1 { e } else { 1.0 - e };
            let py = if exchangeable { shared.clone() } else { simplex(rng, 4) };
            for (k, &(y0, y1)) in Y_CELLS.iter().enumerate() {
                let hidden = if missing { simplex(rng, levels) } else { vec![1.0] };
                for (h, &ph) in hidden.iter().enumerate() {
                    atoms.push(Atom {
                        w: vec![if missing { h as u32 } else { v as u32 }],
                        r: vec![!missing],
                        a,
                        y0,
                        y1,
                        cell: 0,
                        p: pv * pa * py[k] * ph,
                    });
                }
            }
        }
    }
    DiscreteJoint::new(atoms).expect("product of simplices sums to one")
}
