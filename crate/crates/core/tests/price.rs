use ou_lattice::verify::random_spec;
use ou_lattice::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn build(spec: &OuSpec) -> Lattice {
    build_lattice(&make_moment_model(spec).unwrap()).unwrap()
}

/// E[max(Z - K, 0)] for Z ~ N(m, v).
fn gaussian_call(m: f64, v: f64, k: f64) -> f64 {
    let s = v.sqrt();
    let d = (m - k) / s;
    let n = Normal::standard();
    (m - k) * n.cdf(d) + s * n.pdf(d)
}

fn call_error(levels: usize) -> f64 {
    let horizon = 2.0;
    let spec = OuSpec::new(0.5, 0.03, 0.01, 0.05, horizon / levels as f64, levels);
    let (m, v) = terminal_moments(&spec, levels).unwrap();
    let strike = m;
    let price = price_european(
        &build(&spec),
        &PayoffSpec::call(strike),
        &DiscountSpec::none(),
    )
    .unwrap();
    let exact = gaussian_call(m, v, strike);
    (price - exact).abs() / exact
}

#[test]
fn european_call_converges_to_gaussian_form() {
    let coarse = call_error(25);
    let fine = call_error(200);
    assert!(fine < 0.01, "relative error {fine}");
    assert!(fine < coarse, "{fine} !< {coarse}");
}

#[test]
fn constant_payoff_reaches_every_node() {
    // Pricing through the exported JSON must not change anything either.
    let lat = build(&OuSpec::new(1.1, 0.2, 0.3, -0.4, 0.3, 40));
    let back = Lattice::from_json(&lat.to_json()).unwrap();
    for l in [&lat, &back] {
        let p = price_european(l, &PayoffSpec::constant(2.5), &DiscountSpec::none()).unwrap();
        assert!((p - 2.5).abs() < 1e-12);
    }
}

/// Least-squares Monte Carlo (cubic polynomial regression on in-the-money
/// paths) over paths sampled from the lattice itself.
fn lsm_put(lat: &Lattice, strike: f64, step_disc: f64, paths: usize) -> f64 {
    let n = lat.levels();
    let samples = sample_paths(lat, 2024, paths);
    let payoff = |x: f64| (strike - x).max(0.0);
    let mut cash: Vec<f64> = samples.iter().map(|p| payoff(p.values[n])).collect();
    for j in (1..n).rev() {
        for c in cash.iter_mut() {
            *c *= step_disc;
        }
        let itm: Vec<usize> = (0..paths)
            .filter(|&i| payoff(samples[i].values[j]) > 0.0)
            .collect();
        if itm.len() < 8 {
            continue;
        }
        let scale = |x: f64| (x - strike) / 0.2;
        let mut ata = [[0.0f64; 5]; 4];
        for &i in &itm {
            let x = scale(samples[i].values[j]);
            let row = [1.0, x, x * x, x * x * x];
            for r in 0..4 {
                for c in 0..4 {
                    ata[r][c] += row[r] * row[c];
                }
                ata[r][4] += row[r] * cash[i];
            }
        }
        let beta = solve4(ata);
        for &i in &itm {
            let x = scale(samples[i].values[j]);
            let cont = beta[0] + x * (beta[1] + x * (beta[2] + x * beta[3]));
            let ex = payoff(samples[i].values[j]);
            if ex > cont {
                cash[i] = ex;
            }
        }
    }
    let mean = cash.iter().sum::<f64>() / paths as f64 * step_disc;
    mean.max(payoff(lat.value(0, 0).unwrap()))
}

fn solve4(mut a: [[f64; 5]; 4]) -> [f64; 4] {
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    [0, 1, 2, 3].map(|r| a[r][4] / a[r][r])
}

#[test]
fn american_put_premium_and_lsm_bound() {
    let (rate, dt, levels, strike) = (0.05, 0.01, 100, 1.1);
    let lat = build(&OuSpec::new(0.0, 0.0, 0.2, 1.0, dt, levels));
    let disc = DiscountSpec::flat(rate, dt);
    let euro = price_european(&lat, &PayoffSpec::put(strike), &disc).unwrap();
    let amer = price_american(
        &lat,
        &PayoffSpec::american_put(strike, (0..=levels).collect()),
        &disc,
    )
    .unwrap();
    assert!(amer.price > euro + 1e-4, "{} vs {}", amer.price, euro);
    assert!(!amer.exercise_region.is_empty());
    let lsm = lsm_put(&lat, strike, (-rate * dt).exp(), 50_000);
    assert!(
        (lsm - amer.price).abs() / amer.price < 0.02,
        "lsm {lsm} vs lattice {}",
        amer.price
    );
}

#[test]
fn empty_schedule_is_european() {
    let lat = build(&OuSpec::new(0.4, 0.05, 0.2, 0.0, 0.25, 30));
    let disc = DiscountSpec::flat(0.03, 0.25);
    let euro = price_european(&lat, &PayoffSpec::put(0.1), &disc).unwrap();
    let amer = price_american(&lat, &PayoffSpec::american_put(0.1, vec![]), &disc).unwrap();
    assert_eq!(amer.price, euro);
    assert!(amer.exercise_region.is_empty());
}

/// Exact callable value by brute force: sample paths, then take the issuer's
/// best call policy at level `call_level` out of every subset of its nodes.
fn enumerated_callable(
    lat: &Lattice,
    coupon: f64,
    principal: f64,
    call_level: usize,
    call_price: f64,
    dt: f64,
    paths: usize,
) -> f64 {
    let n = lat.levels();
    let width = 2 * call_level + 1;
    // per call-level node: summed PV if called there, summed PV if held
    let mut called = vec![0.0; width];
    let mut held = vec![0.0; width];
    let mut before = 0.0;
    for p in sample_paths(lat, 77, paths) {
        let mut df = 1.0;
        let (mut pv_before, mut pv_after, mut df_call) = (0.0, 0.0, 0.0);
        for j in 0..n {
            let r = lat.quote(lat.value(j, p.departure(j)).unwrap());
            df *= (-r * dt).exp();
            let flow = coupon + if j + 1 == n { principal } else { 0.0 };
            if j < call_level {
                pv_before += df * coupon;
                if j + 1 == call_level {
                    df_call = df;
                }
            } else {
                pv_after += df * flow;
            }
        }
        let idx = (p.offsets[call_level] + call_level as i64) as usize;
        called[idx] += df_call * call_price;
        held[idx] += pv_after;
        before += pv_before;
    }
    let total = paths as f64;
    let mut best = f64::INFINITY;
    for policy in 0u32..(1 << width) {
        let mut v = before;
        for i in 0..width {
            v += if policy & (1 << i) != 0 {
                called[i]
            } else {
                held[i]
            };
        }
        best = best.min(v / total);
    }
    best
}

#[test]
fn callable_matches_policy_enumeration() {
    let dt = 0.5;
    let spec = OuSpec::new(0.3, 0.05f64.ln(), 0.2, 0.05f64.ln(), dt, 10).with_log_space(true);
    let lat = build(&spec);
    let schedule = BondSchedule {
        coupons: (1..=10).map(|j| (j, 2.5)).collect(),
        principal: 100.0,
        calls: vec![(5, 100.0)],
    };
    let r = price_callable_bond(&lat, &schedule, &DiscountSpec::short_rate(dt)).unwrap();
    assert!(r.callable > 0.0 && r.callable < r.bullet);
    assert!(r.option > 0.0);
    assert_eq!(r.callable, r.bullet - r.option);
    let oracle = enumerated_callable(&lat, 2.5, 100.0, 5, 100.0, dt, 1_000_000);
    assert!(
        (r.callable - oracle).abs() / oracle < 0.005,
        "lattice {} vs enumeration {}",
        r.callable,
        oracle
    );
}

#[test]
fn schedule_outside_horizon_is_rejected() {
    let lat = build(&OuSpec::new(0.3, 0.0, 0.01, 0.05, 0.5, 4));
    let s = BondSchedule {
        coupons: vec![(5, 1.0)],
        principal: 100.0,
        calls: vec![],
    };
    assert!(matches!(
        price_callable_bond(&lat, &s, &DiscountSpec::flat(0.05, 0.5)),
        Err(Error::Schedule(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn american_dominates_european(seed in any::<u64>(), strike in -0.5f64..0.5) {
        let spec = random_spec(&mut ChaCha8Rng::seed_from_u64(seed), 40);
        let lat = build(&spec);
        let disc = DiscountSpec::flat(0.04, spec.dt);
        let euro = price_european(&lat, &PayoffSpec::put(strike), &disc).unwrap();
        let amer = price_american(
            &lat,
            &PayoffSpec::american_put(strike, (0..=spec.levels).collect()),
            &disc,
        )
        .unwrap();
        prop_assert!(amer.price >= euro - 1e-12 * (1.0 + euro.abs()));
    }

    #[test]
    fn larger_payoff_larger_price(seed in any::<u64>(), strike in -0.5f64..0.5, bump in 0.0f64..0.2) {
        let spec = random_spec(&mut ChaCha8Rng::seed_from_u64(seed), 40);
        let lat = build(&spec);
        let disc = DiscountSpec::flat(0.02, spec.dt);
        let lo = price_european(&lat, &PayoffSpec::call(strike), &disc).unwrap();
        let hi = price_european(&lat, &PayoffSpec::call(strike - bump), &disc).unwrap();
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn callable_identities(seed in any::<u64>(), call in 80.0f64..120.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = random_spec(&mut rng, 30);
        spec.theta = 0.05f64.ln();
        spec.x0 = 0.04f64.ln();
        spec.log_space = true;
        let lat = build(&spec);
        let n = spec.levels;
        let mut s = BondSchedule {
            coupons: (1..=n).map(|j| (j, 1.0)).collect(),
            principal: 100.0,
            calls: vec![],
        };
        let disc = DiscountSpec::short_rate(spec.dt);
        let plain = price_callable_bond(&lat, &s, &disc).unwrap();
        prop_assert_eq!(plain.option, 0.0);
        prop_assert_eq!(plain.callable, plain.bullet);
        s.calls = (n / 2..=n).map(|j| (j, call)).collect();
        let r = price_callable_bond(&lat, &s, &disc).unwrap();
        prop_assert_eq!(r.callable, r.bullet - r.option);
        prop_assert!(r.option >= 0.0 && r.callable <= r.bullet);
        prop_assert_eq!(r.bullet, plain.bullet);
    }
}
