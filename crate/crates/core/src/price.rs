//! Backward induction on a lattice.
//!
//! Each level is processed center-outward. A center node discounts the
//! trinomial expectation of next-level values. A spanning node combines its
//! inner neighbour's *continuation* value (sibling leg, no time elapses, no
//! discount) with the discounted value of its single time branch:
//!
//! ```text
//! cont(j, k) = p * cont(j, k -/+ 1) + (1 - p) * disc(j, k) * value(j + 1, k +/- 1)
//! ```
//!
//! Early exercise is checked once per node per epoch, after the continuation
//! is known.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lattice::Lattice;

type DiscountFn = Box<dyn Fn(usize, f64) -> f64 + Send + Sync>;
type TerminalFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;
type ExerciseFn = Box<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// One-step discount factor as a function of `(level, quoted value)`.
pub struct DiscountSpec {
    factor: DiscountFn,
}

impl DiscountSpec {
    pub fn none() -> Self {
        Self::custom(|_, _| 1.0)
    }

    /// `exp(-rate * dt)` everywhere.
    pub fn flat(rate: f64, dt: f64) -> Self {
        let d = (-rate * dt).exp();
        Self::custom(move |_, _| d)
    }

    /// Treats the quoted state as a continuously compounded short rate.
    pub fn short_rate(dt: f64) -> Self {
        Self::custom(move |_, r| (-r * dt).exp())
    }

    pub fn custom(f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        DiscountSpec {
            factor: Box::new(f),
        }
    }

    pub fn factor(&self, j: usize, quoted: f64) -> f64 {
        (self.factor)(j, quoted)
    }
}

pub struct PayoffSpec {
    terminal: TerminalFn,
    exercise: Option<ExerciseFn>,
    schedule: Vec<usize>,
}

impl PayoffSpec {
    pub fn european(terminal: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        PayoffSpec {
            terminal: Box::new(terminal),
            exercise: None,
            schedule: Vec::new(),
        }
    }

    /// Adds an exercise payoff `(level, quoted value) -> cash` allowed at the
    /// listed levels.
    pub fn with_exercise(
        mut self,
        exercise: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
        schedule: Vec<usize>,
    ) -> Self {
        self.exercise = Some(Box::new(exercise));
        self.schedule = schedule;
        self
    }

    pub fn call(strike: f64) -> Self {
        Self::european(move |x| (x - strike).max(0.0))
    }

    pub fn put(strike: f64) -> Self {
        Self::european(move |x| (strike - x).max(0.0))
    }

    /// Put that may also be exercised early at `schedule`.
    pub fn american_put(strike: f64, schedule: Vec<usize>) -> Self {
        Self::put(strike).with_exercise(move |_, x| (strike - x).max(0.0), schedule)
    }

    pub fn constant(c: f64) -> Self {
        Self::european(move |_| c)
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn terminal(&self, quoted: f64) -> f64 {
        (self.terminal)(quoted)
    }
}

/// Discount factors for levels `0..levels`, checked to lie in (0, 1].
fn discount_grid(lat: &Lattice, disc: &DiscountSpec) -> Result<Vec<Vec<f64>>> {
    (0..lat.levels())
        .map(|j| {
            let c = j as i64;
            lat.level_values(j)
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = disc.factor(j, lat.quote(x));
                    if f > 0.0 && f <= 1.0 {
                        Ok(f)
                    } else {
                        Err(Error::InvalidDiscount {
                            j,
                            k: i as i64 - c,
                            factor: f,
                        })
                    }
                })
                .collect()
        })
        .collect()
}

/// Continuation values at level `j` given values at level `j + 1`.
fn continuation(lat: &Lattice, j: usize, disc: &[f64], next: &[f64]) -> Vec<f64> {
    let c = j;
    let nc = j + 1;
    let cb = lat.center_branches(j).expect("level in range");
    let mut cont = vec![0.0; 2 * j + 1];
    cont[c] = disc[c] * (cb.p_d * next[nc - 1] + cb.p_n * next[nc] + cb.p_u * next[nc + 1]);
    for k in 1..=j {
        let b = lat.branch(j, k as i64).expect("spanning node");
        cont[c + k] = b.p * cont[c + k - 1] + (1.0 - b.p) * disc[c + k] * next[nc + k + 1];
        let b = lat.branch(j, -(k as i64)).expect("spanning node");
        cont[c - k] = b.p * cont[c - k + 1] + (1.0 - b.p) * disc[c - k] * next[nc - k - 1];
    }
    cont
}

/// Node values and continuation values on every level.
pub(crate) struct Induction {
    /// `value[j][j + k]`, levels `0..=levels`.
    pub value: Vec<Vec<f64>>,
    /// `cont[j][j + k]`, levels `0..levels`.
    pub cont: Vec<Vec<f64>>,
    pub exercised: Vec<(usize, i64)>,
}

/// Runs the sweep. `node(j, idx, cont)` turns a continuation into the node
/// value and reports whether it exercised.
fn induct(
    lat: &Lattice,
    disc: &DiscountSpec,
    terminal: Vec<f64>,
    mut node: impl FnMut(usize, usize, f64) -> Result<(f64, bool)>,
) -> Result<Induction> {
    let n = lat.levels();
    let grid = discount_grid(lat, disc)?;
    let mut value = vec![Vec::new(); n + 1];
    let mut cont = vec![Vec::new(); n];
    let mut exercised = Vec::new();
    value[n] = terminal;
    for j in (0..n).rev() {
        let c = continuation(lat, j, &grid[j], &value[j + 1]);
        let mut v = Vec::with_capacity(c.len());
        for (idx, &cv) in c.iter().enumerate() {
            let (nv, ex) = node(j, idx, cv)?;
            if ex {
                exercised.push((j, idx as i64 - j as i64));
            }
            v.push(nv);
        }
        value[j] = v;
        cont[j] = c;
    }
    exercised.sort_unstable();
    Ok(Induction {
        value,
        cont,
        exercised,
    })
}

fn finite(v: f64, j: usize, idx: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinitePayoff {
            j,
            k: idx as i64 - j as i64,
        })
    }
}

fn terminal_values(lat: &Lattice, payoff: &PayoffSpec) -> Result<Vec<f64>> {
    let n = lat.levels();
    lat.level_values(n)
        .iter()
        .enumerate()
        .map(|(i, &x)| finite(payoff.terminal(lat.quote(x)), n, i))
        .collect()
}

pub fn price_european(lat: &Lattice, payoff: &PayoffSpec, disc: &DiscountSpec) -> Result<f64> {
    let terminal = terminal_values(lat, payoff)?;
    let ind = induct(lat, disc, terminal, |_, _, c| Ok((c, false)))?;
    Ok(ind.value[0][0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmericanResult {
    pub price: f64,
    /// Nodes where exercising beats continuing.
    pub exercise_region: Vec<(usize, i64)>,
}

pub fn price_american(
    lat: &Lattice,
    payoff: &PayoffSpec,
    disc: &DiscountSpec,
) -> Result<AmericanResult> {
    let n = lat.levels();
    if let Some(bad) = payoff.schedule.iter().find(|j| **j > n) {
        return Err(Error::Schedule(format!(
            "exercise level {bad} beyond horizon {n}"
        )));
    }
    let mut allowed = vec![false; n + 1];
    for &j in &payoff.schedule {
        allowed[j] = true;
    }
    let exercise = match (&payoff.exercise, allowed.iter().any(|a| *a)) {
        (Some(f), true) => f,
        (None, true) => {
            return Err(Error::Schedule(
                "exercise schedule given without an exercise payoff".into(),
            ))
        }
        (_, false) => {
            return Ok(AmericanResult {
                price: price_european(lat, payoff, disc)?,
                exercise_region: Vec::new(),
            })
        }
    };

    let mut terminal = terminal_values(lat, payoff)?;
    let mut region = Vec::new();
    if allowed[n] {
        for (i, t) in terminal.iter_mut().enumerate() {
            let ex = finite(exercise(n, lat.quote(lat.level_values(n)[i])), n, i)?;
            if ex > *t {
                *t = ex;
                region.push((n, i as i64 - n as i64));
            }
        }
    }
    let ind = induct(lat, disc, terminal, |j, idx, c| {
        if !allowed[j] {
            return Ok((c, false));
        }
        let ex = finite(exercise(j, lat.quote(lat.level_values(j)[idx])), j, idx)?;
        Ok(if ex > c { (ex, true) } else { (c, false) })
    })?;
    region.extend(ind.exercised);
    region.sort_unstable();
    Ok(AmericanResult {
        price: ind.value[0][0],
        exercise_region: region,
    })
}

/// Cash flows of a fixed-coupon bond maturing at the last lattice level, plus
/// the issuer's call dates.
#[derive(Debug, Clone, PartialEq)]
pub struct BondSchedule {
    /// `(level, amount)`; levels in `1..=levels`.
    pub coupons: Vec<(usize, f64)>,
    pub principal: f64,
    /// `(level, call price)`; levels in `0..=levels`.
    pub calls: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallableResult {
    pub bullet: f64,
    pub option: f64,
    pub callable: f64,
    pub exercise_region: Vec<(usize, i64)>,
}

fn check_schedule(lat: &Lattice, s: &BondSchedule) -> Result<()> {
    let n = lat.levels();
    if !s.principal.is_finite() {
        return Err(Error::Schedule("principal must be finite".into()));
    }
    for &(j, amount) in &s.coupons {
        if j == 0 || j > n {
            return Err(Error::Schedule(format!("coupon level {j} outside 1..={n}")));
        }
        if !amount.is_finite() {
            return Err(Error::Schedule(format!("coupon at level {j} not finite")));
        }
    }
    let mut seen = vec![false; n + 1];
    for &(j, price) in &s.calls {
        if j > n {
            return Err(Error::Schedule(format!(
                "call level {j} beyond horizon {n}"
            )));
        }
        if !(price.is_finite() && price >= 0.0) {
            return Err(Error::Schedule(format!(
                "call price at level {j} must be finite and >= 0"
            )));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::Schedule(format!("duplicate call at level {j}")));
        }
    }
    Ok(())
}

/// Bullet bond value, the issuer's call option on it, and their difference.
///
/// Bullet values are ex-coupon: a node's value excludes the coupon paid at
/// that node, which is also what the issuer compares to the call price.
pub fn price_callable_bond(
    lat: &Lattice,
    schedule: &BondSchedule,
    disc: &DiscountSpec,
) -> Result<CallableResult> {
    check_schedule(lat, schedule)?;
    let n = lat.levels();
    let mut cash = vec![0.0; n + 1];
    for &(j, a) in &schedule.coupons {
        cash[j] += a;
    }
    cash[n] += schedule.principal;

    let bullet = induct(lat, disc, vec![cash[n]; 2 * n + 1], |j, _, c| {
        Ok((c + cash[j], false))
    })?;
    let ex_coupon = |j: usize, idx: usize| {
        if j == n {
            0.0
        } else {
            bullet.cont[j][idx]
        }
    };

    let calls: BTreeMap<usize, f64> = schedule.calls.iter().copied().collect();
    let mut region = Vec::new();
    let terminal = match calls.get(&n) {
        Some(&k) => (0..2 * n + 1)
            .map(|idx| {
                let ex = ex_coupon(n, idx) - k;
                if ex > 0.0 {
                    region.push((n, idx as i64 - n as i64));
                }
                ex.max(0.0)
            })
            .collect(),
        None => vec![0.0; 2 * n + 1],
    };
    let option = induct(lat, disc, terminal, |j, idx, c| {
        Ok(match calls.get(&j) {
            Some(&k) => {
                let ex = ex_coupon(j, idx) - k;
                if ex > c {
                    (ex, true)
                } else {
                    (c, false)
                }
            }
            None => (c, false),
        })
    })?;
    region.extend(option.exercised);
    region.sort_unstable();

    let bullet_price = ex_coupon(0, 0);
    let option_price = option.value[0][0];
    Ok(CallableResult {
        bullet: bullet_price,
        option: option_price,
        callable: bullet_price - option_price,
        exercise_region: region,
    })
}
