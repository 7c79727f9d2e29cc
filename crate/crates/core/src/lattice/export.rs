//! JSON, Graphviz DOT and CSV renderings of a built lattice.
//!
//! DOT edge colours: black for center branches, blue for spanning (time)
//! branches, green for sibling moves down toward the center and red for
//! sibling moves up toward it.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Deserialize;

use super::{BranchSolve, CenterBranches, Lattice, NodeKind};
use crate::error::{Error, Result};
use crate::fmt::sig17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "dot" => Ok(ExportFormat::Dot),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

fn opt17(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), sig17)
}

fn push_array(s: &mut String, rows: &[String]) {
    if rows.is_empty() {
        s.push_str("[],\n");
    } else {
        s.push_str("[\n");
        s.push_str(&rows.join(",\n"));
        s.push_str("\n  ],\n");
    }
}

impl Lattice {
    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Json => self.to_json(),
            ExportFormat::Dot => self.to_dot(),
            ExportFormat::Csv => self.to_csv(),
        }
    }

    /// JSON dump with a fixed key order and 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        let _ = writeln!(s, "  \"levels\": {},", self.levels);
        let dx: Vec<String> = self.dx.iter().map(|v| sig17(*v)).collect();
        let _ = writeln!(s, "  \"dx\": [{}],", dx.join(", "));

        s.push_str("  \"nodes\": ");
        let nodes: Vec<String> = self
            .nodes()
            .map(|n| {
                format!(
                    "    {{\"j\": {}, \"k\": {}, \"value\": {}, \"cond_mean\": {}, \"kind\": \"{}\"}}",
                    n.j,
                    n.k,
                    sig17(n.value),
                    opt17(n.cond_mean),
                    n.kind.as_str()
                )
            })
            .collect();
        push_array(&mut s, &nodes);

        s.push_str("  \"center_branches\": ");
        let center: Vec<String> = self
            .center
            .iter()
            .enumerate()
            .map(|(j, c)| {
                format!(
                    "    {{\"j\": {}, \"pu\": {}, \"pn\": {}, \"pd\": {}}}",
                    j,
                    sig17(c.p_u),
                    sig17(c.p_n),
                    sig17(c.p_d)
                )
            })
            .collect();
        push_array(&mut s, &center);

        s.push_str("  \"spanning\": ");
        let mut spans = Vec::new();
        for j in 0..self.levels {
            let ji = j as i64;
            for k in (-ji..=ji).filter(|k| *k != 0) {
                let b = self.branch(j, k).expect("spanning node");
                spans.push(format!(
                    "    {{\"j\": {}, \"k\": {}, \"p_sibling\": {}, \"span_value\": {}, \"degenerate\": {}}}",
                    j,
                    k,
                    sig17(b.p),
                    sig17(b.x),
                    b.degenerate
                ));
            }
        }
        push_array(&mut s, &spans);
        let _ = writeln!(s, "  \"dt\": {},", sig17(self.dt));
        let _ = writeln!(s, "  \"log_space\": {}", self.log_space);
        s.push_str("}\n");
        s
    }

    pub fn to_dot(&self) -> String {
        let mut s =
            String::from("digraph lattice {\n  rankdir=LR;\n  node [shape=circle, fontsize=8];\n");
        for n in self.nodes() {
            let _ = writeln!(
                s,
                "  \"n_{}_{}\" [label=\"{:.4}\"];",
                n.j,
                n.k,
                self.quote(n.value)
            );
        }
        for j in 0..self.levels {
            let c = &self.center[j];
            for (dk, p) in [(-1i64, c.p_d), (0, c.p_n), (1, c.p_u)] {
                let _ = writeln!(
                    s,
                    "  \"n_{j}_0\" -> \"n_{}_{dk}\" [color=black, label=\"{p:.3}\"];",
                    j + 1
                );
            }
            let ji = j as i64;
            for k in (-ji..=ji).filter(|k| *k != 0) {
                let b = self.branch(j, k).expect("spanning node");
                let dir = k.signum();
                let _ = writeln!(
                    s,
                    "  \"n_{j}_{k}\" -> \"n_{}_{}\" [color=blue, label=\"{:.3}\"];",
                    j + 1,
                    k + dir,
                    1.0 - b.p
                );
                let color = if k > 0 { "green" } else { "red" };
                let _ = writeln!(
                    s,
                    "  \"n_{j}_{k}\" -> \"n_{j}_{}\" [color={color}, label=\"{:.3}\"];",
                    k - dir,
                    b.p
                );
            }
        }
        s.push_str("}\n");
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("j,k,kind,value,cond_mean,pu,pn,pd,p_sibling,span_value\n");
        for n in self.nodes() {
            let (c, b) = if n.j < self.levels {
                (
                    (n.k == 0).then(|| self.center[n.j]),
                    self.branch(n.j, n.k).copied(),
                )
            } else {
                (None, None)
            };
            let f = |v: Option<f64>| v.map(sig17).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                n.j,
                n.k,
                n.kind.as_str(),
                sig17(n.value),
                f(n.cond_mean),
                f(c.map(|c| c.p_u)),
                f(c.map(|c| c.p_n)),
                f(c.map(|c| c.p_d)),
                f(b.map(|b| b.p)),
                f(b.map(|b| b.x)),
            );
        }
        s
    }

    /// Rebuilds a lattice from [`Lattice::to_json`] output.
    pub fn from_json(text: &str) -> Result<Lattice> {
        let doc: JsonLattice =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let n = doc.levels;
        if n == 0 {
            return Err(Error::Parse("levels must be >= 1".into()));
        }
        if doc.dx.len() != n {
            return Err(Error::Parse(format!("expected {n} dx entries")));
        }
        if doc.center_branches.len() != n {
            return Err(Error::Parse(format!("expected {n} center branch entries")));
        }

        let mut values: Vec<Vec<f64>> = (0..=n).map(|j| vec![f64::NAN; 2 * j + 1]).collect();
        let mut cond_mean: Vec<Vec<f64>> = (0..n).map(|j| vec![f64::NAN; 2 * j + 1]).collect();
        let mut seen = 0usize;
        for node in &doc.nodes {
            if node.j > n || node.k.unsigned_abs() as usize > node.j {
                return Err(Error::Parse(format!(
                    "node ({}, {}) out of range",
                    node.j, node.k
                )));
            }
            if node.kind != NodeKind::of_offset(node.k) {
                return Err(Error::Parse(format!(
                    "node ({}, {}) has wrong kind",
                    node.j, node.k
                )));
            }
            let idx = (node.j as i64 + node.k) as usize;
            values[node.j][idx] = node.value;
            match (node.j < n, node.cond_mean) {
                (true, Some(m)) => cond_mean[node.j][idx] = m,
                (false, None) => {}
                _ => {
                    return Err(Error::Parse(format!(
                        "node ({}, {}) has misplaced cond_mean",
                        node.j, node.k
                    )))
                }
            }
            seen += 1;
        }
        if seen != (n + 1) * (n + 1) || values.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Parse("node set incomplete or duplicated".into()));
        }

        let mut center = vec![None; n];
        for c in &doc.center_branches {
            let slot = center
                .get_mut(c.j)
                .ok_or_else(|| Error::Parse(format!("center branch at level {}", c.j)))?;
            let eta = if c.j < n {
                cond_mean[c.j][c.j] - values[c.j + 1][c.j + 1]
            } else {
                f64::NAN
            };
            *slot = Some(CenterBranches {
                p_u: c.pu,
                p_n: c.pn,
                p_d: c.pd,
                eta,
            });
        }
        let center: Vec<CenterBranches> = center
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Parse("missing center branches".into()))?;

        let mut above: Vec<Vec<Option<BranchSolve>>> = (0..n).map(|j| vec![None; j]).collect();
        let mut below: Vec<Vec<Option<BranchSolve>>> = (0..n).map(|j| vec![None; j]).collect();
        for sp in &doc.spanning {
            if sp.j >= n || sp.k == 0 || sp.k.unsigned_abs() as usize > sp.j {
                return Err(Error::Parse(format!(
                    "spanning ({}, {}) out of range",
                    sp.j, sp.k
                )));
            }
            let b = BranchSolve {
                x: sp.span_value,
                p: sp.p_sibling,
                degenerate: sp.degenerate,
            };
            let idx = sp.k.unsigned_abs() as usize - 1;
            if sp.k > 0 {
                above[sp.j][idx] = Some(b);
            } else {
                below[sp.j][idx] = Some(b);
            }
        }
        let collect = |v: Vec<Vec<Option<BranchSolve>>>| -> Result<Vec<Vec<BranchSolve>>> {
            v.into_iter()
                .map(|lvl| lvl.into_iter().collect::<Option<Vec<_>>>())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Parse("missing spanning entries".into()))
        };

        Ok(Lattice {
            levels: n,
            dt: doc.dt,
            log_space: doc.log_space,
            dx: doc.dx,
            values,
            cond_mean,
            center,
            above: collect(above)?,
            below: collect(below)?,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonLattice {
    levels: usize,
    dx: Vec<f64>,
    nodes: Vec<JsonNode>,
    center_branches: Vec<JsonCenter>,
    spanning: Vec<JsonSpan>,
    dt: f64,
    log_space: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonNode {
    j: usize,
    k: i64,
    value: f64,
    cond_mean: Option<f64>,
    kind: NodeKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonCenter {
    j: usize,
    pu: f64,
    pn: f64,
    pd: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonSpan {
    j: usize,
    k: i64,
    p_sibling: f64,
    span_value: f64,
    degenerate: bool,
}
