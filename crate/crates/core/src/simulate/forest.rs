//! Correlated sampling through several coefficient lattices.
//!
//! Per step, one vector of correlated normals `z = L e` is drawn, each
//! component is mapped to a uniform through the normal CDF, and each lattice
//! picks its next node by inverse CDF over the current node's one-step law
//! (support sorted by destination value). Each tree keeps its own marginal
//! law; the Gaussian copula only couples the branch choices.

use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;

use super::{path_rng, PathSample};
use crate::error::{Error, Result};
use crate::fmt::sig17;
use crate::lattice::Lattice;

const CORR_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Forest {
    lattices: Vec<Lattice>,
    corr: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
}

impl Forest {
    pub fn new(lattices: Vec<Lattice>, corr: Vec<Vec<f64>>) -> Result<Self> {
        let n = lattices.len();
        if n == 0 {
            return Err(Error::InvalidForest("no lattices".into()));
        }
        let (levels, dt) = (lattices[0].levels(), lattices[0].dt());
        if lattices
            .iter()
            .any(|l| l.levels() != levels || l.dt() != dt)
        {
            return Err(Error::InvalidForest(
                "lattices must share levels and dt".into(),
            ));
        }
        let chol = cholesky_psd(&corr, n)?;
        Ok(Forest {
            lattices,
            corr,
            chol,
        })
    }

    pub fn len(&self) -> usize {
        self.lattices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattices.is_empty()
    }

    pub fn levels(&self) -> usize {
        self.lattices[0].levels()
    }

    pub fn lattices(&self) -> &[Lattice] {
        &self.lattices
    }

    pub fn corr(&self) -> &[Vec<f64>] {
        &self.corr
    }
}

/// Lower-triangular factor of a correlation matrix, allowing rank deficiency.
fn cholesky_psd(a: &[Vec<f64>], n: usize) -> Result<Vec<Vec<f64>>> {
    let bad = |msg: String| Err(Error::InvalidCorrelation(msg));
    if a.len() != n || a.iter().any(|row| row.len() != n) {
        return bad(format!("expected a {n}x{n} matrix"));
    }
    for i in 0..n {
        if (a[i][i] - 1.0).abs() > CORR_TOL {
            return bad(format!("diagonal entry {i} is {}", a[i][i]));
        }
        for j in 0..i {
            if !a[i][j].is_finite() || (a[i][j] - a[j][i]).abs() > CORR_TOL {
                return bad(format!("entries ({i},{j}) and ({j},{i}) differ"));
            }
            if a[i][j].abs() > 1.0 + CORR_TOL {
                return bad(format!("entry ({i},{j}) outside [-1, 1]"));
            }
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -CORR_TOL {
            return bad(format!("not positive semi-definite (pivot {j} = {d:e})"));
        }
        let pivot = if d > CORR_TOL { d.sqrt() } else { 0.0 };
        l[j][j] = pivot;
        for i in j + 1..n {
            let r = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if pivot == 0.0 {
                if r.abs() > 1e-8 {
                    return bad(format!("not positive semi-definite (column {j})"));
                }
            } else {
                l[i][j] = r / pivot;
            }
        }
    }
    Ok(l)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Next offset from `(j, k)` by inverse CDF at `u`.
fn inverse_step(lat: &Lattice, j: usize, k: i64, u: f64, buf: &mut Vec<(i64, f64)>) -> i64 {
    buf.clear();
    lat.transition_into(j, k, buf);
    let next = lat.level_values(j + 1);
    let value = |dest: i64| next[(j as i64 + 1 + dest) as usize];
    buf.sort_by(|a, b| value(a.0).total_cmp(&value(b.0)).then(a.0.cmp(&b.0)));
    let mut cum = 0.0;
    for &(dest, p) in buf.iter() {
        cum += p;
        if u < cum {
            return dest;
        }
    }
    // u within rounding of 1: last point with positive mass
    buf.iter()
        .rev()
        .find(|(_, p)| *p > 0.0)
        .map_or(buf[buf.len() - 1].0, |(d, _)| *d)
}

fn sample_with_id(f: &Forest, seed: u64, path_id: u64) -> Vec<PathSample> {
    let n = f.len();
    let levels = f.levels();
    let mut rng = path_rng(seed, path_id);
    let mut paths: Vec<PathSample> = f
        .lattices
        .iter()
        .map(|lat| PathSample {
            seed,
            path_id,
            offsets: vec![0],
            values: vec![lat.value(0, 0).expect("root")],
        })
        .collect();
    let mut e = vec![0.0; n];
    let mut buf = Vec::new();
    for j in 0..levels {
        for x in e.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        for (i, (lat, path)) in f.lattices.iter().zip(paths.iter_mut()).enumerate() {
            let z: f64 = (0..=i).map(|c| f.chol[i][c] * e[c]).sum();
            let k = *path.offsets.last().expect("non-empty");
            let next = inverse_step(lat, j, k, normal_cdf(z), &mut buf);
            path.offsets.push(next);
            path.values
                .push(lat.value(j + 1, next).expect("reachable node"));
        }
    }
    paths
}

/// One correlated path per tree.
pub fn sample_forest(f: &Forest, seed: u64) -> Vec<PathSample> {
    sample_with_id(f, seed, 0)
}

/// `n` forest draws; `result[path][tree]`.
pub fn sample_forests(f: &Forest, seed: u64, n: usize) -> Vec<Vec<PathSample>> {
    (0..n as u64)
        .map(|id| sample_with_id(f, seed, id))
        .collect()
}

/// CSV with columns `tree_id,seed,path_id,level,offset,value`.
pub fn forest_csv(f: &Forest, draws: &[Vec<PathSample>]) -> String {
    let mut s = String::from("tree_id,seed,path_id,level,offset,value\n");
    for draw in draws {
        for (tree, (lat, p)) in f.lattices.iter().zip(draw).enumerate() {
            for (j, (k, v)) in p.offsets.iter().zip(&p.values).enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    tree,
                    p.seed,
                    p.path_id,
                    j,
                    k,
                    sig17(lat.quote(*v))
                );
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, one_step_distribution};
    use crate::process::{make_moment_model, OuSpec};

    fn build(spec: &OuSpec) -> Lattice {
        build_lattice(&make_moment_model(spec).unwrap()).unwrap()
    }

    #[test]
    fn rejects_bad_correlation() {
        let lat = build(&OuSpec::new(0.1, 0.0, 0.2, 0.0, 1.0, 3));
        let two = || vec![lat.clone(), lat.clone()];
        assert!(Forest::new(two(), vec![vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
        assert!(Forest::new(two(), vec![vec![2.0, 0.0], vec![0.0, 1.0]]).is_err());
        assert!(Forest::new(two(), vec![vec![1.0, 0.0]]).is_err());
        let three = vec![lat.clone(), lat.clone(), lat.clone()];
        let indefinite = vec![
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ];
        assert!(matches!(
            Forest::new(three, indefinite),
            Err(Error::InvalidCorrelation(_))
        ));
        assert!(Forest::new(two(), vec![vec![1.0, 1.0], vec![1.0, 1.0]]).is_ok());
    }

    #[test]
    fn rejects_mismatched_grids() {
        let a = build(&OuSpec::new(0.1, 0.0, 0.2, 0.0, 1.0, 3));
        let b = build(&OuSpec::new(0.1, 0.0, 0.2, 0.0, 1.0, 4));
        let c = build(&OuSpec::new(0.1, 0.0, 0.2, 0.0, 0.5, 3));
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(Forest::new(vec![a.clone(), b], id.clone()).is_err());
        assert!(Forest::new(vec![a, c], id).is_err());
    }

    #[test]
    fn perfect_correlation_gives_identical_paths() {
        let spec = OuSpec::new(0.3, 0.1, 0.2, 0.0, 0.5, 15);
        let f = Forest::new(
            vec![build(&spec), build(&spec)],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        )
        .unwrap();
        for draw in sample_forests(&f, 77, 200) {
            assert_eq!(draw[0].offsets, draw[1].offsets);
        }
    }

    #[test]
    fn inverse_cdf_frequencies() {
        let spec = OuSpec::new(0.5, 0.0, 0.2, 0.3, 0.5, 6);
        let lat = build(&spec);
        let (j, k) = (4, 3);
        let d = one_step_distribution(&lat, j, k).unwrap();
        let n = 200_000;
        let mut buf = Vec::new();
        let mut counts = std::collections::HashMap::new();
        for i in 0..n {
            let u = (i as f64 + 0.5) / n as f64;
            *counts
                .entry(inverse_step(&lat, j, k, u, &mut buf))
                .or_insert(0usize) += 1;
        }
        for (dest, _, p) in d.support {
            let freq = *counts.get(&dest).unwrap_or(&0) as f64 / n as f64;
            assert!(
                (freq - p).abs() < 2.0 / n as f64,
                "dest {dest}: {freq} vs {p}"
            );
        }
    }

    #[test]
    fn seeds_are_deterministic() {
        let spec = OuSpec::new(0.3, 0.1, 0.2, 0.0, 0.5, 8);
        let f = Forest::new(
            vec![build(&spec), build(&spec)],
            vec![vec![1.0, 0.3], vec![0.3, 1.0]],
        )
        .unwrap();
        let a = forest_csv(&f, &sample_forests(&f, 5, 20));
        let b = forest_csv(&f, &sample_forests(&f, 5, 20));
        assert_eq!(a, b);
        assert_ne!(a, forest_csv(&f, &sample_forests(&f, 6, 20)));
    }
}
