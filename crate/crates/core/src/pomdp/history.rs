use std::collections::BTreeMap;

use super::{belief_update, Belief, History, Pomdp, PomdpError, Result};

/// Default cap on the number of history nodes an oracle may create.
pub const DEFAULT_NODE_BUDGET: usize = 2_000_000;

/// Branches with probability at or below this are treated as unreachable.
const REACH_TOL: f64 = 1e-13;

/// Action values within this of the maximum count as greedy.
const ARGMAX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug)]
struct Node {
    parent: Option<NodeId>,
    action: usize,
    obs: usize,
    depth: usize,
    prob: f64,
    belief: Vec<(usize, f64)>,
    children: Vec<Vec<(usize, NodeId)>>,
}

/// Every history reachable with positive probability up to `max_depth`
/// actions, with its belief. Each node is reached from its parent by one
/// `(a, o)` edge, so any history is located by walking its steps.
#[derive(Clone, Debug)]
pub struct HistoryTree {
    n_states: usize,
    max_depth: usize,
    roots: Vec<(usize, NodeId)>,
    nodes: Vec<Node>,
}

impl HistoryTree {
    pub fn build(pomdp: &Pomdp, max_depth: usize, budget: usize) -> Result<Self> {
        let mut tree = Self {
            n_states: pomdp.n_states(),
            max_depth,
            roots: Vec::new(),
            nodes: Vec::new(),
        };
        for o in 0..pomdp.n_obs() {
            let weights: Vec<(usize, f64)> = (0..pomdp.n_states())
                .map(|s| (s, pomdp.b0()[s] * pomdp.o0(s, o)))
                .filter(|&(_, w)| w > 0.0)
                .collect();
            let z: f64 = weights.iter().map(|(_, w)| w).sum();
            if z > REACH_TOL {
                let id = tree.push(pomdp, None, 0, o, 0, z, normalize(weights, z), budget)?;
                tree.roots.push((o, id));
            }
        }
        let mut frontier: Vec<NodeId> = tree.roots.iter().map(|&(_, id)| id).collect();
        let mut pred = vec![0.0; pomdp.n_states()];
        for depth in 0..max_depth {
            let mut next = Vec::new();
            for id in frontier {
                for a in 0..pomdp.n_actions() {
                    let mut touched = Vec::new();
                    for &(s, p) in &tree.nodes[id.0].belief {
                        for &(s2, t) in pomdp.successors(s, a) {
                            if pred[s2] == 0.0 {
                                touched.push(s2);
                            }
                            pred[s2] += p * t;
                        }
                    }
                    touched.sort_unstable();
                    let mut by_obs: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
                    for &s2 in &touched {
                        let p = std::mem::take(&mut pred[s2]);
                        for &(o, q) in pomdp.emissions(a, s2) {
                            by_obs.entry(o).or_default().push((s2, p * q));
                        }
                    }
                    for (o, weights) in by_obs {
                        let z: f64 = weights.iter().map(|(_, w)| w).sum();
                        if z > REACH_TOL {
                            let child = tree.push(pomdp, Some(id), a, o, depth + 1, z, normalize(weights, z), budget)?;
                            tree.nodes[id.0].children[a].push((o, child));
                            next.push(child);
                        }
                    }
                }
            }
            frontier = next;
        }
        Ok(tree)
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        pomdp: &Pomdp,
        parent: Option<NodeId>,
        action: usize,
        obs: usize,
        depth: usize,
        prob: f64,
        belief: Vec<(usize, f64)>,
        budget: usize,
    ) -> Result<NodeId> {
        if self.nodes.len() >= budget {
            return Err(PomdpError::NodeBudget {
                nodes: self.nodes.len(),
                budget,
                depth,
            });
        }
        self.nodes.push(Node {
            parent,
            action,
            obs,
            depth,
            prob,
            belief,
            children: vec![Vec::new(); pomdp.n_actions()],
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Nodes in breadth-first order, parents before children.
    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn roots(&self) -> &[(usize, NodeId)] {
        &self.roots
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.nodes[id.0].depth
    }

    /// `Pr(o | parent, a)` for the edge into `id`, or `Pr(o₀)` at a root.
    pub fn edge_prob(&self, id: NodeId) -> f64 {
        self.nodes[id.0].prob
    }

    /// Nonzero `(s, Pr(s | h))` pairs, sorted by state.
    pub fn sparse_belief(&self, id: NodeId) -> &[(usize, f64)] {
        &self.nodes[id.0].belief
    }

    pub fn belief(&self, id: NodeId) -> Belief {
        let mut probs = vec![0.0; self.n_states];
        for &(s, p) in &self.nodes[id.0].belief {
            probs[s] = p;
        }
        Belief::new(probs)
    }

    /// Reachable `(o, child)` pairs after action `a`, sorted by observation.
    pub fn children(&self, id: NodeId, a: usize) -> &[(usize, NodeId)] {
        &self.nodes[id.0].children[a]
    }

    pub fn child(&self, id: NodeId, a: usize, o: usize) -> Option<NodeId> {
        let kids = self.nodes[id.0].children.get(a)?;
        kids.binary_search_by_key(&o, |&(ob, _)| ob).ok().map(|i| kids[i].1)
    }

    pub fn history(&self, id: NodeId) -> History {
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut cur = Some(id);
        while let Some(n) = cur {
            let node = &self.nodes[n.0];
            obs.push(node.obs);
            if node.parent.is_some() {
                actions.push(node.action);
            }
            cur = node.parent;
        }
        obs.reverse();
        actions.reverse();
        History::from_parts(obs, actions).expect("tree paths alternate")
    }

    pub fn find(&self, h: &History) -> Option<NodeId> {
        let root = self.roots.binary_search_by_key(&h.observations()[0], |&(o, _)| o).ok()?;
        let mut id = self.roots[root].1;
        for (a, o) in h.steps() {
            id = self.child(id, a, o)?;
        }
        Some(id)
    }

    /// `R̄(h, a) = Σ_s Pr(s | h) R(s, a)`.
    pub fn expected_reward(&self, pomdp: &Pomdp, id: NodeId, a: usize) -> f64 {
        self.nodes[id.0].belief.iter().map(|&(s, p)| p * pomdp.r(s, a)).sum()
    }
}

fn normalize(mut w: Vec<(usize, f64)>, z: f64) -> Vec<(usize, f64)> {
    w.iter_mut().for_each(|(_, p)| *p /= z);
    w
}

/// The fully observable MDP over histories: `T̄(h, a, hao) = Pr(o | h, a)`,
/// zero for any other successor, and `R̄(h, a) = E_{s|h} R(s, a)`.
#[derive(Clone, Copy, Debug)]
pub struct HistoryMdp<'a> {
    pomdp: &'a Pomdp,
}

pub fn history_mdp(pomdp: &Pomdp) -> HistoryMdp<'_> {
    HistoryMdp { pomdp }
}

impl HistoryMdp<'_> {
    pub fn transition(&self, h: &History, a: usize, next: &History) -> Result<f64> {
        if next.len() != h.len() + 1
            || next.actions()[h.len()] != a
            || next.actions()[..h.len()] != *h.actions()
            || next.observations()[..=h.len()] != *h.observations()
        {
            return Ok(0.0);
        }
        let b = self.pomdp.belief_of(h)?;
        self.pomdp.observation_prob(&b, a, next.last_obs())
    }

    pub fn reward(&self, h: &History, a: usize) -> Result<f64> {
        self.pomdp.check_action(a)?;
        let b = self.pomdp.belief_of(h)?;
        Ok(b.probs().iter().enumerate().map(|(s, p)| p * self.pomdp.r(s, a)).sum())
    }

    /// Successor histories with positive probability, with that probability.
    pub fn successors(&self, h: &History, a: usize) -> Result<Vec<(History, f64)>> {
        let b = self.pomdp.belief_of(h)?;
        let mut out = Vec::new();
        for o in 0..self.pomdp.n_obs() {
            let p = self.pomdp.observation_prob(&b, a, o)?;
            if p > REACH_TOL {
                out.push((h.extended(a, o), p));
            }
        }
        Ok(out)
    }

    pub fn belief(&self, h: &History) -> Result<Belief> {
        self.pomdp.belief_of(h)
    }

    pub fn update(&self, b: &Belief, a: usize, o: usize) -> Result<Belief> {
        belief_update(self.pomdp, b, a, o)
    }
}

/// Optimal finite-horizon action values over the reachable history tree:
/// `Q_H ≡ 0` and `Q_t(h, a) = R̄(h, a) + γ Σ_o Pr(o | h, a) max_a' Q_{t+1}(hao, a')`.
#[derive(Clone, Debug)]
pub struct QTable {
    tree: HistoryTree,
    horizon: usize,
    discount: f64,
    q: Vec<Vec<f64>>,
    v: Vec<f64>,
}

pub fn exact_q(pomdp: &Pomdp, horizon: usize, budget: usize) -> Result<QTable> {
    let tree = HistoryTree::build(pomdp, horizon.saturating_sub(1), budget)?;
    let na = pomdp.n_actions();
    let mut q = vec![vec![0.0; na]; tree.len()];
    let mut v = vec![0.0; tree.len()];
    if horizon > 0 {
        for id in tree.ids().collect::<Vec<_>>().into_iter().rev() {
            let row: Vec<f64> = (0..na)
                .map(|a| {
                    let future: f64 = tree.children(id, a).iter().map(|&(_, c)| tree.edge_prob(c) * v[c.0]).sum();
                    tree.expected_reward(pomdp, id, a) + pomdp.discount() * future
                })
                .collect();
            v[id.0] = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            q[id.0] = row;
        }
    }
    Ok(QTable {
        tree,
        horizon,
        discount: pomdp.discount(),
        q,
        v,
    })
}

impl QTable {
    pub fn tree(&self) -> &HistoryTree {
        &self.tree
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn q(&self, id: NodeId) -> &[f64] {
        &self.q[id.0]
    }

    pub fn v(&self, id: NodeId) -> f64 {
        self.v[id.0]
    }

    /// All actions whose value is within 1e-9 of the best.
    pub fn argmax(&self, id: NodeId) -> Vec<usize> {
        let best = self.v[id.0];
        (0..self.q[id.0].len())
            .filter(|&a| self.q[id.0][a] >= best - ARGMAX_TOL)
            .collect()
    }

    pub fn lookup(&self, h: &History) -> Option<NodeId> {
        self.tree.find(h)
    }

    /// Lowest-index greedy action, or `None` when `h` is beyond the table.
    pub fn greedy_action(&self, h: &History) -> Option<usize> {
        self.lookup(h).map(|id| self.argmax(id)[0])
    }

    /// `|Q(h, a) − (R̄ + γ Σ Pr(o) V(hao))|` recomputed from the children.
    pub fn bellman_residual(&self, pomdp: &Pomdp, id: NodeId) -> f64 {
        if self.horizon == 0 {
            return self.q[id.0].iter().fold(0.0, |m, x| m.max(x.abs()));
        }
        (0..pomdp.n_actions())
            .map(|a| {
                let next: f64 = self
                    .tree
                    .children(id, a)
                    .iter()
                    .map(|&(_, c)| {
                        let vc = self.q[c.0].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        self.tree.edge_prob(c) * vc
                    })
                    .sum();
                (self.q[id.0][a] - self.tree.expected_reward(pomdp, id, a) - self.discount * next).abs()
            })
            .fold(0.0, f64::max)
    }
}
