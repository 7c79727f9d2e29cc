//! Path sampling through a lattice and through a correlated forest.
//!
//! Every path owns a ChaCha8 stream selected by `(seed, path_id)`, so a path
//! set is reproducible and can be generated in any order.

mod curve;
mod forest;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fmt::sig17;
use crate::lattice::Lattice;

pub use curve::{curve_at, CurveBasis};
pub use forest::{forest_csv, sample_forest, sample_forests, Forest};

/// One realization of the lattice process at levels `0..=levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub seed: u64,
    pub path_id: u64,
    pub offsets: Vec<i64>,
    /// Lattice states (log-states for exponential OU lattices).
    pub values: Vec<f64>,
}

impl PathSample {
    /// Offset at level `j` from which the time transition to `j + 1` left,
    /// after any sibling moves.
    pub fn departure(&self, j: usize) -> i64 {
        let dest = self.offsets[j + 1];
        if dest.abs() <= 1 {
            0
        } else {
            dest - dest.signum()
        }
    }
}

/// The generator behind path `path_id` of `seed`.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// Draws the next-level offset from `(j, k)` by walking sibling branches.
pub fn sample_step<R: Rng>(lat: &Lattice, j: usize, mut k: i64, rng: &mut R) -> i64 {
    loop {
        if k == 0 {
            let c = lat.center_branches(j).expect("level in range");
            let u: f64 = rng.random();
            return if u < c.p_d {
                -1
            } else if u < c.p_d + c.p_n {
                0
            } else {
                1
            };
        }
        let b = lat.branch(j, k).expect("spanning node");
        let u: f64 = rng.random();
        if u < b.p {
            k -= k.signum();
        } else {
            return k + k.signum();
        }
    }
}

fn sample_with_id(lat: &Lattice, seed: u64, path_id: u64) -> PathSample {
    let mut rng = path_rng(seed, path_id);
    let n = lat.levels();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    let mut k = 0i64;
    offsets.push(0);
    values.push(lat.value(0, 0).expect("root"));
    for j in 0..n {
        k = sample_step(lat, j, k, &mut rng);
        offsets.push(k);
        values.push(lat.value(j + 1, k).expect("reachable node"));
    }
    PathSample {
        seed,
        path_id,
        offsets,
        values,
    }
}

pub fn sample_path(lat: &Lattice, seed: u64) -> PathSample {
    sample_with_id(lat, seed, 0)
}

/// `n` paths with ids `0..n`.
pub fn sample_paths(lat: &Lattice, seed: u64, n: usize) -> Vec<PathSample> {
    (0..n as u64)
        .map(|id| sample_with_id(lat, seed, id))
        .collect()
}

/// Sample mean and unbiased sample variance of the states at level `j`.
pub fn empirical_moments(paths: &[PathSample], j: usize) -> Result<(f64, f64)> {
    if paths.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: paths.len(),
        });
    }
    let mut xs = Vec::with_capacity(paths.len());
    for p in paths {
        let v = *p.values.get(j).ok_or(Error::LevelOutOfRange {
            j,
            max: p.values.len() - 1,
        })?;
        xs.push(v);
    }
    Ok(mean_var(&xs))
}

pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// CSV dump with columns `seed,path_id,level,offset,value`; values are quoted
/// (exponentiated for log-space lattices).
pub fn paths_csv(lat: &Lattice, paths: &[PathSample]) -> String {
    let mut s = String::from("seed,path_id,level,offset,value\n");
    for p in paths {
        for (j, (k, v)) in p.offsets.iter().zip(&p.values).enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                p.seed,
                p.path_id,
                j,
                k,
                sig17(lat.quote(*v))
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, one_step_distribution};
    use crate::process::{make_moment_model, terminal_moments, OuSpec};

    fn build(spec: &OuSpec) -> Lattice {
        build_lattice(&make_moment_model(spec).unwrap()).unwrap()
    }

    #[test]
    fn smallest_path() {
        let lat = build(&OuSpec::new(0.3, 0.0, 0.2, 0.1, 1.0, 1));
        let p = sample_path(&lat, 11);
        assert_eq!(p.offsets.len(), 2);
        assert!(p.offsets[1].abs() <= 1);
        assert_eq!(p, sample_path(&lat, 11));
    }

    #[test]
    fn paths_follow_branches() {
        let lat = build(&OuSpec::new(0.6, 0.1, 0.2, -0.2, 0.5, 12));
        for p in sample_paths(&lat, 5, 200) {
            for j in 0..12 {
                let d = one_step_distribution(&lat, j, p.offsets[j]).unwrap();
                let dest = p.offsets[j + 1];
                assert!(d.support.iter().any(|s| s.0 == dest && s.2 > 0.0));
                let dep = p.departure(j);
                // sibling moves only head toward the center
                let k = p.offsets[j];
                assert!(dep == 0 || (dep.signum() == k.signum() && dep.abs() <= k.abs()));
            }
        }
    }

    #[test]
    fn zero_reversion_terminal_moments() {
        let spec = OuSpec::new(0.0, 0.0, 0.2, 0.3, 0.25, 20);
        let lat = build(&spec);
        let paths = sample_paths(&lat, 2024, 100_000);
        let (m, v) = empirical_moments(&paths, 20).unwrap();
        let (em, ev) = terminal_moments(&spec, 20).unwrap();
        let n = paths.len() as f64;
        assert!((m - em).abs() < 4.0 * (ev / n).sqrt(), "mean {m} vs {em}");
        assert!(
            (v - ev).abs() < 4.0 * ev * (2.0 / (n - 1.0)).sqrt(),
            "var {v} vs {ev}"
        );
    }

    #[test]
    fn moments_need_two_paths() {
        let lat = build(&OuSpec::new(0.0, 0.0, 0.2, 0.0, 1.0, 2));
        let one = sample_paths(&lat, 1, 1);
        assert_eq!(
            empirical_moments(&one, 1),
            Err(Error::InsufficientSamples { needed: 2, got: 1 })
        );
        let p = sample_path(&lat, 3);
        let (m, v) = empirical_moments(&[p.clone(), p.clone()], 2).unwrap();
        assert_eq!(m, p.values[2]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn csv_rows() {
        let lat = build(&OuSpec::new(0.1, 0.0, 0.2, 0.0, 1.0, 3));
        let csv = paths_csv(&lat, &sample_paths(&lat, 9, 10));
        assert_eq!(csv.lines().count(), 1 + 40);
    }
}
