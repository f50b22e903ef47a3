//! Loopy min-sum belief propagation with damping.
//!
//! Messages live on the factor-to-variable edges of the binary factors;
//! unary costs are folded into each variable's local cost. Updates are
//! synchronous, so the result does not depend on factor order beyond
//! summation rounding. On a forest the fixed point is exact.

use serde::{Deserialize, Serialize};

use super::{FactorGraph, Grounding};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpParams {
    pub max_iters: usize,
    /// Weight kept from the previous message.
    pub damping: f64,
    pub tol: f64,
}

impl Default for BpParams {
    fn default() -> Self {
        BpParams {
            max_iters: 100,
            damping: 0.5,
            tol: 1e-6,
        }
    }
}

fn normalize(m: &mut [f64]) {
    let min = m.iter().copied().fold(f64::INFINITY, f64::min);
    m.iter_mut().for_each(|v| *v -= min);
}

fn beliefs(fg: &FactorGraph, local: &[Vec<f64>], to_s: &[Vec<f64>], to_o: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut b = local.to_vec();
    for (f, bf) in fg.binaries().iter().enumerate() {
        b[bf.subject].iter_mut().zip(&to_s[f]).for_each(|(x, m)| *x += m);
        b[bf.object].iter_mut().zip(&to_o[f]).for_each(|(x, m)| *x += m);
    }
    b
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

pub fn map_inference_bp(fg: &FactorGraph, params: &BpParams) -> Grounding {
    let vars = fg.variables();
    let mut local: Vec<Vec<f64>> = vars.iter().map(|v| vec![0.0; v.domain]).collect();
    for u in fg.unaries() {
        local[u.variable].iter_mut().zip(u.costs()).for_each(|(x, c)| *x += c);
    }
    let bins = fg.binaries();
    let mut to_s: Vec<Vec<f64>> = bins.iter().map(|b| vec![0.0; vars[b.subject].domain]).collect();
    let mut to_o: Vec<Vec<f64>> = bins.iter().map(|b| vec![0.0; vars[b.object].domain]).collect();

    let mut converged = bins.is_empty();
    let mut iterations = 0;
    if !converged {
        for it in 1..=params.max_iters {
            iterations = it;
            let bel = beliefs(fg, &local, &to_s, &to_o);
            let mut delta = 0.0f64;
            let mut next_s = Vec::with_capacity(bins.len());
            let mut next_o = Vec::with_capacity(bins.len());
            for (f, b) in bins.iter().enumerate() {
                let (ds, d_o) = (vars[b.subject].domain, vars[b.object].domain);
                let costs = b.costs();
                let in_s: Vec<f64> = bel[b.subject].iter().zip(&to_s[f]).map(|(x, m)| x - m).collect();
                let in_o: Vec<f64> = bel[b.object].iter().zip(&to_o[f]).map(|(x, m)| x - m).collect();

                let mut ms = vec![f64::INFINITY; ds];
                let mut mo = vec![f64::INFINITY; d_o];
                for i in 0..ds {
                    let row = &costs[i * d_o..(i + 1) * d_o];
                    for j in 0..d_o {
                        ms[i] = ms[i].min(row[j] + in_o[j]);
                        mo[j] = mo[j].min(row[j] + in_s[i]);
                    }
                }
                normalize(&mut ms);
                normalize(&mut mo);
                for (new, old) in ms.iter_mut().zip(&to_s[f]).chain(mo.iter_mut().zip(&to_o[f])) {
                    *new = params.damping * old + (1.0 - params.damping) * *new;
                    delta = delta.max((*new - old).abs());
                }
                next_s.push(ms);
                next_o.push(mo);
            }
            to_s = next_s;
            to_o = next_o;
            if delta < params.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("belief propagation stopped after {iterations} iterations without converging");
        }
    }
    let bel = beliefs(fg, &local, &to_s, &to_o);
    let assignment = bel.iter().map(|b| argmin(b)).collect();
    Grounding::from_assignment(fg, assignment, converged, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::tests::unary_graph;
    use crate::inference::{energy, map_inference_exact, UnaryKind, Variable};
    use crate::rng::substream;
    use rand::Rng;

    fn random_graph(seed: u64, domains: &[usize], edges: &[(usize, usize)]) -> FactorGraph {
        let mut rng = substream(seed, "bp-test");
        let vars = domains
            .iter()
            .enumerate()
            .map(|(i, &d)| Variable { node_id: i as u32, domain: d })
            .collect();
        let unaries = domains
            .iter()
            .enumerate()
            .map(|(i, &d)| (i, UnaryKind::Object(format!("c{i}")), (0..d).map(|_| rng.random::<f64>()).collect()))
            .collect();
        let binaries = edges
            .iter()
            .map(|&(s, o)| {
                let n = domains[s] * domains[o];
                (s, o, "r".to_string(), (0..n).map(|_| rng.random::<f64>()).collect())
            })
            .collect();
        FactorGraph::new(vars, unaries, binaries).unwrap()
    }

    #[test]
    fn unary_only_needs_no_iterations() {
        let g = map_inference_bp(&unary_graph(vec![0.2, 0.9, 0.5]), &BpParams::default());
        assert_eq!(g.assignment, vec![1]);
        assert!(g.converged);
        assert_eq!(g.iterations, 0);
    }

    #[test]
    fn exact_on_trees() {
        let shapes: [(&[usize], &[(usize, usize)]); 4] = [
            (&[4, 5], &[(0, 1)]),
            (&[3, 4, 5], &[(0, 1), (2, 1)]),
            (&[4, 4, 4, 4], &[(0, 1), (0, 2), (0, 3)]),
            (&[3, 3, 3, 3, 3], &[(0, 1), (1, 2), (2, 3), (3, 4)]),
        ];
        for seed in 0..25 {
            for (domains, edges) in shapes {
                let fg = random_graph(seed, domains, edges);
                assert!(fg.is_tree());
                let bp = map_inference_bp(&fg, &BpParams::default());
                let ex = map_inference_exact(&fg).unwrap();
                assert!(bp.converged);
                assert!(
                    (bp.energy - ex.energy).abs() <= 1e-9,
                    "seed {seed} {domains:?}: {} vs {}",
                    bp.energy,
                    ex.energy
                );
            }
        }
    }

    #[test]
    fn loopy_graph_returns_valid_assignment() {
        let fg = random_graph(9, &[4, 4, 4], &[(0, 1), (1, 2), (2, 0)]);
        let g = map_inference_bp(&fg, &BpParams::default());
        assert_eq!(g.energy, energy(&fg, &g.assignment).unwrap());
        assert!(g.iterations <= 100);
    }

    #[test]
    fn uniform_factors_pick_first_candidate() {
        let fg = FactorGraph::new(
            vec![Variable { node_id: 0, domain: 3 }, Variable { node_id: 1, domain: 3 }],
            vec![(0, UnaryKind::Object("a".into()), vec![0.5; 3])],
            vec![(0, 1, "r".into(), vec![0.5; 9])],
        )
        .unwrap();
        let g = map_inference_bp(&fg, &BpParams::default());
        assert_eq!(g.assignment, vec![0, 0]);
        assert!(g.converged);
    }
}
