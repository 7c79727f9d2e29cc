//! The recombining tree.
//!
//! Level `j` holds nodes at offsets `-j..=j` around the center path. Only the
//! center node branches trinomially in time; a node at offset `k > 0` has one
//! time branch to `(j + 1, k + 1)` and a sibling branch to `(j, k - 1)` taken
//! with probability `p`. Offsets below the center mirror this. Following the
//! sibling chain to the center realizes the node's full transition law.

mod export;
mod solve;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::MomentModel;

pub use export::ExportFormat;
pub use solve::{bracket, residual, solve_branch_equation, BranchSolve};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Center,
    SpanningAbove,
    SpanningBelow,
}

impl NodeKind {
    pub fn of_offset(k: i64) -> Self {
        match k.signum() {
            0 => NodeKind::Center,
            1 => NodeKind::SpanningAbove,
            _ => NodeKind::SpanningBelow,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Center => "center",
            NodeKind::SpanningAbove => "spanning-above",
            NodeKind::SpanningBelow => "spanning-below",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeNode {
    pub j: usize,
    pub k: i64,
    pub value: f64,
    /// Conditional mean of the next-level state; `None` on the last level.
    pub cond_mean: Option<f64>,
    pub kind: NodeKind,
}

/// Trinomial branch probabilities out of a center node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterBranches {
    pub p_u: f64,
    pub p_n: f64,
    pub p_d: f64,
    /// Conditional mean minus the middle child's value.
    pub eta: f64,
}

impl CenterBranches {
    /// Moment-matching probabilities for a mean offset `eta` on a grid of
    /// spacing `sqrt(3 v)`.
    pub fn from_offset(eta: f64, v: f64) -> Self {
        let s = v.sqrt();
        let quad = eta * eta / (6.0 * s * s);
        let lin = eta / (2.0 * SQRT_3 * s);
        CenterBranches {
            p_u: 1.0 / 6.0 + quad + lin,
            p_n: 2.0 / 3.0 - 2.0 * quad,
            p_d: 1.0 / 6.0 + quad - lin,
            eta,
        }
    }
}

/// Stage-one output: the center path and its branch probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterPath {
    /// Center value per level, `levels + 1` entries.
    pub values: Vec<f64>,
    /// Grid spacing of level `j + 1`, one entry per transition.
    pub dx: Vec<f64>,
    pub branches: Vec<CenterBranches>,
}

pub fn build_center_path(model: &MomentModel) -> Result<CenterPath> {
    let n = model.levels();
    let mut values = Vec::with_capacity(n + 1);
    let mut dx = Vec::with_capacity(n);
    let mut branches = Vec::with_capacity(n);
    values.push(model.x0());
    for j in 0..n {
        let m = model.mean(j, values[j]);
        let v = model.var(j);
        if !m.is_finite() || !v.is_finite() {
            return Err(Error::NonFiniteMoment { j });
        }
        if v <= 0.0 {
            return Err(Error::NonPositiveVariance(v));
        }
        let step = (3.0 * v).sqrt();
        // f64::round breaks ties away from zero.
        let h = (m / step).round();
        let center = h * step;
        values.push(center);
        dx.push(step);
        branches.push(CenterBranches::from_offset(m - center, v));
    }
    Ok(CenterPath {
        values,
        dx,
        branches,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Fail with [`Error::Ordering`] when solved node values are not strictly
    /// increasing in the offset.
    pub require_ordered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub(crate) levels: usize,
    pub(crate) dt: f64,
    pub(crate) log_space: bool,
    pub(crate) dx: Vec<f64>,
    pub(crate) values: Vec<Vec<f64>>,
    /// Conditional means for levels `0..levels`.
    pub(crate) cond_mean: Vec<Vec<f64>>,
    pub(crate) center: Vec<CenterBranches>,
    /// `above[j][k - 1]` is the solve for node `(j, k)`, `k >= 1`.
    pub(crate) above: Vec<Vec<BranchSolve>>,
    /// `below[j][k - 1]` is the solve for node `(j, -k)`.
    pub(crate) below: Vec<Vec<BranchSolve>>,
}

pub fn build_lattice(model: &MomentModel) -> Result<Lattice> {
    build_lattice_with(model, BuildOptions::default())
}

pub fn build_lattice_with(model: &MomentModel, opts: BuildOptions) -> Result<Lattice> {
    let path = build_center_path(model)?;
    let n = model.levels();
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut cond_mean = Vec::with_capacity(n);
    let mut above = Vec::with_capacity(n);
    let mut below = Vec::with_capacity(n);
    values.push(vec![model.x0()]);

    for j in 0..n {
        let cur = &values[j];
        let v = model.var(j);
        let means: Vec<f64> = cur.iter().map(|&x| model.mean(j, x)).collect();
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFiniteMoment { j });
        }

        let c = j;
        let next_c = j + 1;
        let step = path.dx[j];
        let mut next = vec![0.0; 2 * j + 3];
        next[next_c] = path.values[j + 1];
        next[next_c - 1] = next[next_c] - step;
        next[next_c + 1] = next[next_c] + step;

        let mut up = Vec::with_capacity(j);
        let mut down = Vec::with_capacity(j);
        for k in 1..=j {
            let b = solve_branch_equation(means[c + k], means[c + k - 1], v)
                .map_err(|e| at_level(e, j))?;
            next[next_c + k + 1] = b.x;
            up.push(b);

            let b = solve_branch_equation(means[c - k], means[c - k + 1], v)
                .map_err(|e| at_level(e, j))?;
            next[next_c - k - 1] = b.x;
            down.push(b);
        }

        if opts.require_ordered {
            if let Some(k) = first_unordered(&next) {
                return Err(Error::Ordering { j: j + 1, k });
            }
        }
        cond_mean.push(means);
        above.push(up);
        below.push(down);
        values.push(next);
    }

    Ok(Lattice {
        levels: n,
        dt: model.dt(),
        log_space: model.log_space(),
        dx: path.dx,
        values,
        cond_mean,
        center: path.branches,
        above,
        below,
    })
}

fn at_level(e: Error, j: usize) -> Error {
    match e {
        Error::NonFiniteMoment { .. } => Error::NonFiniteMoment { j },
        other => other,
    }
}

/// Offset of the first node whose value does not exceed its lower neighbour.
fn first_unordered(level: &[f64]) -> Option<i64> {
    let c = (level.len() / 2) as i64;
    level
        .windows(2)
        .position(|w| !(w[0] < w[1]))
        .map(|i| i as i64 + 1 - c)
}

impl Lattice {
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn log_space(&self) -> bool {
        self.log_space
    }

    /// Grid spacing of level `j + 1` (one entry per transition).
    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn node_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// State values of level `j`, ordered by offset `-j..=j`.
    pub fn level_values(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn contains(&self, j: usize, k: i64) -> bool {
        j <= self.levels && k.unsigned_abs() as usize <= j
    }

    fn check(&self, j: usize, k: i64) -> Result<()> {
        if self.contains(j, k) {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange { j, k })
        }
    }

    pub fn value(&self, j: usize, k: i64) -> Option<f64> {
        self.contains(j, k)
            .then(|| self.values[j][(j as i64 + k) as usize])
    }

    pub fn cond_mean(&self, j: usize, k: i64) -> Option<f64> {
        (self.contains(j, k) && j < self.levels).then(|| self.cond_mean[j][(j as i64 + k) as usize])
    }

    pub fn node(&self, j: usize, k: i64) -> Option<LatticeNode> {
        Some(LatticeNode {
            j,
            k,
            value: self.value(j, k)?,
            cond_mean: self.cond_mean(j, k),
            kind: NodeKind::of_offset(k),
        })
    }

    pub fn nodes(&self) -> impl Iterator<Item = LatticeNode> + '_ {
        (0..=self.levels).flat_map(move |j| {
            let j_i = j as i64;
            (-j_i..=j_i).map(move |k| self.node(j, k).expect("in range"))
        })
    }

    /// Center-node branch probabilities for the transition out of level `j`.
    pub fn center_branches(&self, j: usize) -> Option<&CenterBranches> {
        self.center.get(j)
    }

    /// Sibling solve for spanning node `(j, k)`, `k != 0`, `j < levels`.
    pub fn branch(&self, j: usize, k: i64) -> Option<&BranchSolve> {
        if j >= self.levels || k == 0 {
            return None;
        }
        let idx = k.unsigned_abs() as usize - 1;
        if k > 0 {
            self.above[j].get(idx)
        } else {
            self.below[j].get(idx)
        }
    }

    pub fn quote(&self, state: f64) -> f64 {
        if self.log_space {
            state.exp()
        } else {
            state
        }
    }

    /// Nodes `(j, k)` whose value is not strictly above `(j, k - 1)`.
    pub fn ordering_violations(&self) -> Vec<(usize, i64)> {
        let mut out = Vec::new();
        for (j, level) in self.values.iter().enumerate() {
            let c = j as i64;
            for (i, w) in level.windows(2).enumerate() {
                if !(w[0] < w[1]) {
                    out.push((j, i as i64 + 1 - c));
                }
            }
        }
        out
    }

    /// Appends `(destination offset, probability)` for the one-step law of
    /// node `(j, k)`, walking the sibling chain to the center. Destinations
    /// come out in chain order: outermost spawned node first, center children
    /// last as down, middle, up.
    pub(crate) fn transition_into(&self, j: usize, k: i64, out: &mut Vec<(i64, f64)>) {
        let dir = k.signum();
        let mut weight = 1.0;
        let mut cur = k;
        while cur != 0 {
            let b = self.branch(j, cur).expect("spanning node");
            out.push((cur + dir, weight * (1.0 - b.p)));
            weight *= b.p;
            cur -= dir;
        }
        let c = &self.center[j];
        out.push((-1, weight * c.p_d));
        out.push((0, weight * c.p_n));
        out.push((1, weight * c.p_u));
    }
}

/// Discrete one-step law of a node over next-level nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStep {
    pub j: usize,
    pub k: i64,
    /// `(offset at level j + 1, value, probability)` sorted by value.
    pub support: Vec<(i64, f64, f64)>,
}

impl OneStep {
    pub fn total(&self) -> f64 {
        self.support.iter().map(|s| s.2).sum()
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|s| s.1 * s.2).sum()
    }

    /// Variance about `center` (pass the mean for the central moment).
    pub fn variance_about(&self, center: f64) -> f64 {
        self.support
            .iter()
            .map(|s| s.2 * (s.1 - center).powi(2))
            .sum()
    }

    pub fn variance(&self) -> f64 {
        self.variance_about(self.mean())
    }
}

pub fn one_step_distribution(lat: &Lattice, j: usize, k: i64) -> Result<OneStep> {
    lat.check(j, k)?;
    if j >= lat.levels {
        return Err(Error::NodeOutOfRange { j, k });
    }
    let mut raw = Vec::with_capacity(k.unsigned_abs() as usize + 3);
    lat.transition_into(j, k, &mut raw);
    let next = &lat.values[j + 1];
    let mut support: Vec<(i64, f64, f64)> = raw
        .into_iter()
        .map(|(dest, p)| (dest, next[(j as i64 + 1 + dest) as usize], p))
        .collect();
    support.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(OneStep { j, k, support })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{make_moment_model, OuSpec};

    fn lattice(spec: &OuSpec) -> Lattice {
        build_lattice(&make_moment_model(spec).unwrap()).unwrap()
    }

    #[test]
    fn symmetric_walk_center_path() {
        let spec = OuSpec::new(0.0, 0.0, 0.2, 0.0, 1.0, 6);
        let path = build_center_path(&make_moment_model(&spec).unwrap()).unwrap();
        for (v, b) in path.values.iter().zip(&path.branches) {
            assert_eq!(*v, 0.0);
            assert_eq!(b.eta, 0.0);
            assert!((b.p_u - 1.0 / 6.0).abs() < 1e-15);
            assert!((b.p_n - 2.0 / 3.0).abs() < 1e-15);
            assert!((b.p_d - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn worst_rounding_probabilities() {
        let v = 0.37_f64;
        let dx = (3.0 * v).sqrt();
        let b = CenterBranches::from_offset(dx / 2.0, v);
        assert!((b.p_d - 1.0 / 24.0).abs() < 1e-15);
        assert!((b.p_u - 13.0 / 24.0).abs() < 1e-15);
        assert!((b.p_n - 5.0 / 12.0).abs() < 1e-15);
        assert!((b.p_u + b.p_n + b.p_d - 1.0).abs() < 1e-15);
        // enumerate the 3-point law about the middle child
        let mean = dx * (b.p_u - b.p_d);
        let var = dx * dx * (b.p_u + b.p_d) - mean * mean;
        assert!((mean - dx / 2.0).abs() < 1e-15);
        assert!((var - v).abs() < 1e-15);
    }

    #[test]
    fn center_moments_match_model() {
        let spec = OuSpec::new(0.5, 0.03, 0.01, 0.05, 0.25, 4);
        let model = make_moment_model(&spec).unwrap();
        let path = build_center_path(&model).unwrap();
        for j in 0..4 {
            let m = model.mean(j, path.values[j]);
            let b = path.branches[j];
            let h = path.values[j + 1];
            let dx = path.dx[j];
            let pts = [(h - dx, b.p_d), (h, b.p_n), (h + dx, b.p_u)];
            let mean: f64 = pts.iter().map(|(x, p)| x * p).sum();
            let var: f64 = pts.iter().map(|(x, p)| p * (x - m).powi(2)).sum();
            assert!((mean - m).abs() < 1e-12);
            assert!((var - model.var(j)).abs() < 1e-12);
            assert!(b.eta.abs() <= dx / 2.0 + 1e-15);
        }
    }

    #[test]
    fn smallest_tree() {
        let lat = lattice(&OuSpec::new(0.2, 0.0, 0.3, 0.1, 1.0, 1));
        assert_eq!(lat.node_count(), 4);
        assert!(lat.above[0].is_empty() && lat.below[0].is_empty());
    }

    #[test]
    fn counts_nodes() {
        let lat = lattice(&OuSpec::new(0.7, 0.02, 0.15, 0.05, 0.1, 50));
        assert_eq!(lat.node_count(), 51 * 51);
        for j in 0..=50 {
            assert_eq!(lat.level_values(j).len(), 2 * j + 1);
        }
    }

    #[test]
    fn mirror_symmetry_without_reversion() {
        let lat = lattice(&OuSpec::new(0.0, 0.0, 0.25, 0.0, 0.5, 3));
        for j in 0..=3usize {
            for k in 1..=j as i64 {
                let up = lat.value(j, k).unwrap();
                let dn = lat.value(j, -k).unwrap();
                assert!((up + dn).abs() < 1e-10);
                if j < 3 {
                    let pu = lat.branch(j, k).unwrap().p;
                    let pd = lat.branch(j, -k).unwrap().p;
                    assert!((pu - pd).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn one_step_support_sizes() {
        let lat = lattice(&OuSpec::new(0.3, 0.0, 0.2, 0.1, 0.5, 5));
        assert_eq!(one_step_distribution(&lat, 2, 0).unwrap().support.len(), 3);
        let d = one_step_distribution(&lat, 2, 1).unwrap();
        assert_eq!(d.support.len(), 4);
        assert!((d.mean() - lat.cond_mean(2, 1).unwrap()).abs() < 1e-10);
        assert!((d.total() - 1.0).abs() < 1e-12);
        assert!(one_step_distribution(&lat, 5, 0).is_err());
        assert!(one_step_distribution(&lat, 2, 3).is_err());
    }

    #[test]
    fn mixture_variance_on_deep_tree() {
        let spec = OuSpec::new(0.9, -0.1, 0.3, 0.4, 0.2, 30);
        let model = make_moment_model(&spec).unwrap();
        let lat = build_lattice(&model).unwrap();
        for j in 0..30usize {
            for k in -(j as i64)..=j as i64 {
                let d = one_step_distribution(&lat, j, k).unwrap();
                let m = lat.cond_mean(j, k).unwrap();
                assert!((d.mean() - m).abs() < 1e-10, "mean at ({j},{k})");
                assert!(
                    (d.variance_about(m) - model.var(j)).abs() < 1e-8,
                    "var at ({j},{k})"
                );
            }
        }
    }

    #[test]
    fn strict_build_reports_ordering() {
        let spec = OuSpec::new(0.5, 0.03, 0.01, 0.05, 0.25, 4);
        let model = make_moment_model(&spec).unwrap();
        let lat = build_lattice(&model).unwrap();
        let strict = build_lattice_with(
            &model,
            BuildOptions {
                require_ordered: true,
            },
        );
        match lat.ordering_violations().first() {
            Some(&(j, k)) => assert_eq!(strict, Err(Error::Ordering { j, k })),
            None => assert!(strict.is_ok()),
        }
        let sym = make_moment_model(&OuSpec::new(0.0, 0.0, 0.2, 0.0, 1.0, 20)).unwrap();
        assert!(build_lattice_with(
            &sym,
            BuildOptions {
                require_ordered: true
            }
        )
        .is_ok());
    }

    #[test]
    fn cond_mean_cache_is_coherent() {
        let spec = OuSpec::new(0.4, 0.1, 0.2, -0.3, 0.5, 8);
        let model = make_moment_model(&spec).unwrap();
        let lat = build_lattice(&model).unwrap();
        for node in lat.nodes() {
            match node.cond_mean {
                Some(m) => assert_eq!(m, model.mean(node.j, node.value)),
                None => assert_eq!(node.j, 8),
            }
            assert_eq!(node.kind == NodeKind::Center, node.k == 0);
        }
    }
}
