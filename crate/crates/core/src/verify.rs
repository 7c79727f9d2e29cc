//! Structural and numerical checks on a built lattice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::lattice::{build_lattice, one_step_distribution, residual, Lattice};
use crate::price::{price_european, DiscountSpec, PayoffSpec};
use crate::process::{make_moment_model, MomentModel, OuSpec};

pub const CLOSURE_TOL: f64 = 1e-12;
pub const MOMENT_TOL: f64 = 1e-8;
pub const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    /// Informational checks are reported but never fail a run.
    pub required: bool,
}

impl Check {
    fn new(name: &'static str, measured: f64, tolerance: f64) -> Self {
        Check {
            name,
            measured,
            tolerance,
            required: true,
        }
    }

    pub fn passed(&self) -> bool {
        !self.required || self.measured <= self.tolerance
    }
}

/// Largest deviation from probability closure: `|sum - 1|` at each node, or
/// how far any single probability leaves `[0, 1]`.
pub fn closure_error(lat: &Lattice) -> f64 {
    let out_of_unit = |p: f64| {
        if p.is_nan() {
            f64::INFINITY
        } else {
            (-p).max(p - 1.0).max(0.0)
        }
    };
    let mut worst = 0.0_f64;
    for j in 0..lat.levels() {
        let c = lat.center_branches(j).expect("level in range");
        let sum = c.p_u + c.p_n + c.p_d;
        worst = worst.max((sum - 1.0).abs());
        for p in [c.p_u, c.p_n, c.p_d] {
            worst = worst.max(out_of_unit(p));
        }
        let ji = j as i64;
        for k in (-ji..=ji).filter(|k| *k != 0) {
            let b = lat.branch(j, k).expect("spanning node");
            worst = worst.max(out_of_unit(b.p));
        }
    }
    worst
}

/// Worst `(mean error, variance error)` of enumerated one-step laws.
pub fn moment_errors(lat: &Lattice, model: &MomentModel) -> (f64, f64) {
    let mut worst = (0.0_f64, 0.0_f64);
    for j in 0..lat.levels() {
        let ji = j as i64;
        for k in -ji..=ji {
            let d = one_step_distribution(lat, j, k).expect("node exists");
            let m = model.mean(j, lat.value(j, k).expect("node exists"));
            let me = (d.mean() - m).abs();
            let ve = (d.variance_about(m) - model.var(j)).abs();
            worst.0 = worst.0.max(if me.is_nan() { f64::INFINITY } else { me });
            worst.1 = worst.1.max(if ve.is_nan() { f64::INFINITY } else { ve });
        }
    }
    worst
}

pub fn check_lattice(lat: &Lattice, model: &MomentModel) -> Vec<Check> {
    let n = lat.levels();
    let mut checks = Vec::new();
    let size_ok = n == model.levels()
        && lat.node_count() == (n + 1) * (n + 1)
        && (0..=n).all(|j| lat.level_values(j).len() == 2 * j + 1);
    checks.push(Check::new("size", if size_ok { 0.0 } else { 1.0 }, 0.0));
    if !size_ok {
        return checks;
    }
    checks.push(Check::new(
        "probability closure",
        closure_error(lat),
        CLOSURE_TOL,
    ));

    let (me, ve) = moment_errors(lat, model);
    checks.push(Check::new("mean matching", me, MOMENT_TOL));
    checks.push(Check::new("variance matching", ve, MOMENT_TOL));

    let mut coherence = 0.0_f64;
    let mut worst_residual = 0.0_f64;
    for j in 0..n {
        let ji = j as i64;
        for k in -ji..=ji {
            let v = lat.value(j, k).expect("node exists");
            let cm = lat.cond_mean(j, k).expect("node exists");
            let d = (cm - model.mean(j, v)).abs();
            coherence = coherence.max(if d.is_nan() { f64::INFINITY } else { d });
            if k != 0 {
                let b = lat.branch(j, k).expect("spanning node");
                if !b.degenerate {
                    let inner = lat.cond_mean(j, k - k.signum()).expect("node exists");
                    let r = residual(b.x, cm, inner, model.var(j)).abs();
                    worst_residual = worst_residual.max(if r.is_nan() { f64::INFINITY } else { r });
                }
            }
        }
    }
    checks.push(Check::new("cond_mean coherence", coherence, 0.0));
    checks.push(Check::new(
        "branch equation residual",
        worst_residual,
        RESIDUAL_TOL,
    ));

    let spawned = (0..n)
        .flat_map(|j| {
            let ji = j as i64;
            (-ji..=ji).filter(|k| *k != 0).map(move |k| (j, k))
        })
        .filter(|&(j, k)| {
            let b = lat.branch(j, k).expect("spanning node");
            b.x != lat.value(j + 1, k + k.signum()).expect("node exists")
        })
        .count();
    checks.push(Check::new("spawned node values", spawned as f64, 0.0));

    let unit = price_european(lat, &PayoffSpec::constant(1.0), &DiscountSpec::none())
        .map(|p| (p - 1.0).abs())
        .unwrap_or(f64::INFINITY);
    checks.push(Check::new("unit payoff rollback", unit, CLOSURE_TOL));

    checks.push(Check {
        name: "ordering violations",
        measured: lat.ordering_violations().len() as f64,
        tolerance: 0.0,
        required: false,
    });
    checks
}

/// A random spec drawn from the ranges used by the randomized sweeps.
pub fn random_spec<R: Rng>(rng: &mut R, max_levels: usize) -> OuSpec {
    OuSpec::new(
        rng.random_range(0.0..=2.0),
        rng.random_range(-0.5..=0.5),
        rng.random_range(0.001..=0.5),
        rng.random_range(-0.5..=0.5),
        rng.random_range(0.05..=1.0),
        rng.random_range(1..=max_levels),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepSummary {
    pub specs: usize,
    pub worst_closure: f64,
    pub worst_mean: f64,
    pub worst_variance: f64,
    /// Specs whose lattice had at least one ordering violation.
    pub unordered_specs: usize,
}

pub fn sweep(count: usize, seed: u64) -> Result<SweepSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SweepSummary {
        specs: count,
        ..Default::default()
    };
    for _ in 0..count {
        let spec = random_spec(&mut rng, 100);
        let model = make_moment_model(&spec)?;
        let lat = build_lattice(&model)?;
        s.worst_closure = s.worst_closure.max(closure_error(&lat));
        let (me, ve) = moment_errors(&lat, &model);
        s.worst_mean = s.worst_mean.max(me);
        s.worst_variance = s.worst_variance.max(ve);
        if !lat.ordering_violations().is_empty() {
            s.unordered_specs += 1;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn healthy_lattice_passes() {
        let model = make_moment_model(&OuSpec::new(0.0, 0.0, 0.2, 0.0, 1.0, 10)).unwrap();
        let lat = build_lattice(&model).unwrap();
        for c in check_lattice(&lat, &model) {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn corrupted_probability_fails_closure() {
        let model = make_moment_model(&OuSpec::new(0.3, 0.0, 0.2, 0.1, 1.0, 5)).unwrap();
        let mut lat = build_lattice(&model).unwrap();
        lat.center[2].p_u += 0.01;
        let first = check_lattice(&lat, &model)
            .into_iter()
            .find(|c| !c.passed())
            .unwrap();
        assert_eq!(first.name, "probability closure");
    }

    #[test]
    fn mismatched_model_fails_size() {
        let model = make_moment_model(&OuSpec::new(0.3, 0.0, 0.2, 0.1, 1.0, 5)).unwrap();
        let other = make_moment_model(&OuSpec::new(0.3, 0.0, 0.2, 0.1, 1.0, 6)).unwrap();
        let lat = build_lattice(&model).unwrap();
        assert!(!check_lattice(&lat, &other)[0].passed());
    }

    #[test]
    fn random_specs_pass_every_required_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2010);
        for _ in 0..60 {
            let model = make_moment_model(&random_spec(&mut rng, 60)).unwrap();
            let lat = build_lattice(&model).unwrap();
            for c in check_lattice(&lat, &model) {
                assert!(c.passed(), "{c:?}");
            }
        }
    }

    #[test]
    fn small_sweep() {
        let s = sweep(20, 3).unwrap();
        assert!(s.worst_closure <= CLOSURE_TOL);
        assert!(s.worst_mean <= MOMENT_TOL && s.worst_variance <= MOMENT_TOL);
    }
}
