//! Explicit finite POMDPs, group actions on them, and exact History-MDP
//! oracles for checking belief and Q-function invariance.

mod binding;
mod history;
mod random;
mod text;
mod verify;

pub use binding::{act_on_history, GroupActionBinding};
pub use history::{exact_q, history_mdp, HistoryMdp, HistoryTree, NodeId, QTable, DEFAULT_NODE_BUDGET};
pub use random::{random_pomdp, random_symmetric_pomdp, regular_orbit_binding};
pub use text::{read_binding, read_pomdp, write_binding, write_pomdp};
pub use verify::{
    check_invariance, verify_lemma1, verify_theorem1, Condition, InvarianceReport, Lemma1Report, Lemma1Witness,
    Theorem1Report, Theorem1Witness, Violation,
};

use std::fmt;

use thiserror::Error;

use crate::group::GroupError;

/// Row sums of stochastic tables must match 1 to this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PomdpError {
    #[error("table `{table}` has {actual} entries, expected {expected}")]
    Shape {
        table: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("table `{table}` row {row} sums to {sum}")]
    NotStochastic { table: &'static str, row: String, sum: f64 },
    #[error("table `{table}` has a negative or non-finite entry at {row}")]
    BadEntry { table: &'static str, row: String },
    #[error("discount {0} is outside [0, 1)")]
    Discount(f64),
    #[error("{kind} index {index} out of range (size {size})")]
    Index {
        kind: &'static str,
        index: usize,
        size: usize,
    },
    #[error("observation {observation} has zero probability after action {action}")]
    ImpossibleObservation { action: usize, observation: usize },
    #[error("observation {0} has zero probability at the first step")]
    ImpossibleInitialObservation(usize),
    #[error("invalid group binding: {0}")]
    Binding(String),
    #[error("history tree needs more than {budget} nodes (stopped at {nodes} while expanding depth {depth})")]
    NodeBudget { nodes: usize, budget: usize, depth: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Group(#[from] GroupError),
}

pub type Result<T> = std::result::Result<T, PomdpError>;

/// Raw dense tables, indexed row-major:
/// `t[(s·|A| + a)·|S| + s']`, `r[s·|A| + a]`, `o[(a·|S| + s')·|Ω| + o]`,
/// `o0[s·|Ω| + o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PomdpTables {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_obs: usize,
    pub b0: Vec<f64>,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub o: Vec<f64>,
    pub o0: Vec<f64>,
    pub discount: f64,
}

impl PomdpTables {
    pub fn zeros(n_states: usize, n_actions: usize, n_obs: usize, discount: f64) -> Self {
        Self {
            n_states,
            n_actions,
            n_obs,
            b0: vec![0.0; n_states],
            t: vec![0.0; n_states * n_actions * n_states],
            r: vec![0.0; n_states * n_actions],
            o: vec![0.0; n_actions * n_states * n_obs],
            o0: vec![0.0; n_states * n_obs],
            discount,
        }
    }

    pub fn t_index(&self, s: usize, a: usize, s2: usize) -> usize {
        (s * self.n_actions + a) * self.n_states + s2
    }

    pub fn r_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn o_index(&self, a: usize, s2: usize, o: usize) -> usize {
        (a * self.n_states + s2) * self.n_obs + o
    }

    pub fn o0_index(&self, s: usize, o: usize) -> usize {
        s * self.n_obs + o
    }
}

/// A validated finite POMDP `(S, A, Ω, b₀, T, R, O, O₀, γ)`, with sparse row
/// views of `T` and `O` for enumeration.
#[derive(Clone, Debug)]
pub struct Pomdp {
    tables: PomdpTables,
    t_rows: Vec<Vec<(usize, f64)>>,
    o_rows: Vec<Vec<(usize, f64)>>,
}

impl Pomdp {
    pub fn new(tables: PomdpTables) -> Result<Self> {
        let (ns, na, no) = (tables.n_states, tables.n_actions, tables.n_obs);
        check_len("b0", &tables.b0, ns)?;
        check_len("T", &tables.t, ns * na * ns)?;
        check_len("R", &tables.r, ns * na)?;
        check_len("O", &tables.o, na * ns * no)?;
        check_len("O0", &tables.o0, ns * no)?;
        if !(0.0..1.0).contains(&tables.discount) {
            return Err(PomdpError::Discount(tables.discount));
        }
        if let Some(i) = tables.r.iter().position(|x| !x.is_finite()) {
            return Err(PomdpError::BadEntry {
                table: "R",
                row: format!("s={} a={}", i / na, i % na),
            });
        }
        check_distribution("b0", &tables.b0, "initial".into())?;
        for s in 0..ns {
            for a in 0..na {
                let i = tables.t_index(s, a, 0);
                check_distribution("T", &tables.t[i..i + ns], format!("s={s} a={a}"))?;
            }
            let i = tables.o0_index(s, 0);
            check_distribution("O0", &tables.o0[i..i + no], format!("s={s}"))?;
        }
        for a in 0..na {
            for s2 in 0..ns {
                let i = tables.o_index(a, s2, 0);
                check_distribution("O", &tables.o[i..i + no], format!("a={a} s'={s2}"))?;
            }
        }
        let sparse = |row: &[f64]| -> Vec<(usize, f64)> {
            row.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, &p)| (i, p)).collect()
        };
        let t_rows = tables.t.chunks(ns).map(sparse).collect();
        let o_rows = tables.o.chunks(no.max(1)).map(sparse).collect();
        Ok(Self { tables, t_rows, o_rows })
    }

    pub fn tables(&self) -> &PomdpTables {
        &self.tables
    }

    pub fn into_tables(self) -> PomdpTables {
        self.tables
    }

    pub fn n_states(&self) -> usize {
        self.tables.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.tables.n_actions
    }

    pub fn n_obs(&self) -> usize {
        self.tables.n_obs
    }

    pub fn discount(&self) -> f64 {
        self.tables.discount
    }

    pub fn b0(&self) -> &[f64] {
        &self.tables.b0
    }

    pub fn t(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.tables.t[self.tables.t_index(s, a, s2)]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.tables.r[self.tables.r_index(s, a)]
    }

    pub fn o(&self, a: usize, s2: usize, o: usize) -> f64 {
        self.tables.o[self.tables.o_index(a, s2, o)]
    }

    pub fn o0(&self, s: usize, o: usize) -> f64 {
        self.tables.o0[self.tables.o0_index(s, o)]
    }

    /// Nonzero `(s', p)` entries of `T(s, a, ·)`.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.t_rows[s * self.tables.n_actions + a]
    }

    /// Nonzero `(o, p)` entries of `O(a, s', ·)`.
    pub fn emissions(&self, a: usize, s2: usize) -> &[(usize, f64)] {
        &self.o_rows[a * self.tables.n_states + s2]
    }

    pub fn check_action(&self, a: usize) -> Result<()> {
        check_index("action", a, self.n_actions())
    }

    pub fn check_obs(&self, o: usize) -> Result<()> {
        check_index("observation", o, self.n_obs())
    }

    pub fn check_state(&self, s: usize) -> Result<()> {
        check_index("state", s, self.n_states())
    }

    /// `Pr(s | o₀) ∝ b₀(s) O₀(s, o₀)`.
    pub fn initial_belief(&self, o: usize) -> Result<Belief> {
        self.check_obs(o)?;
        let w: Vec<f64> = (0..self.n_states()).map(|s| self.b0()[s] * self.o0(s, o)).collect();
        Belief::normalized(w).ok_or(PomdpError::ImpossibleInitialObservation(o))
    }

    /// `Pr(s' | b, a) = Σ_s b(s) T(s, a, s')`.
    pub fn predict(&self, b: &Belief, a: usize) -> Result<Vec<f64>> {
        self.check_action(a)?;
        let mut pred = vec![0.0; self.n_states()];
        for (s, &p) in b.probs().iter().enumerate() {
            if p > 0.0 {
                for &(s2, t) in self.successors(s, a) {
                    pred[s2] += p * t;
                }
            }
        }
        Ok(pred)
    }

    /// `Pr(o | b, a)`.
    pub fn observation_prob(&self, b: &Belief, a: usize, o: usize) -> Result<f64> {
        self.check_obs(o)?;
        let pred = self.predict(b, a)?;
        Ok(pred.iter().enumerate().map(|(s2, p)| p * self.o(a, s2, o)).sum())
    }

    /// Belief after a whole history, by iterated updates.
    pub fn belief_of(&self, h: &History) -> Result<Belief> {
        let mut b = self.initial_belief(h.observations()[0])?;
        for (a, o) in h.steps() {
            b = belief_update(self, &b, a, o)?;
        }
        Ok(b)
    }
}

fn check_len(table: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(PomdpError::Shape {
            table,
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

fn check_distribution(table: &'static str, row: &[f64], label: String) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(PomdpError::BadEntry { table, row: label });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(PomdpError::NotStochastic { table, row: label, sum });
    }
    Ok(())
}

fn check_index(kind: &'static str, index: usize, size: usize) -> Result<()> {
    if index >= size {
        return Err(PomdpError::Index { kind, index, size });
    }
    Ok(())
}

/// A distribution over states.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    /// Normalizes nonnegative weights; `None` when they sum to zero.
    pub fn normalized(mut w: Vec<f64>) -> Option<Self> {
        let z: f64 = w.iter().sum();
        if z <= 0.0 || !z.is_finite() {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= z);
        Some(Self { probs: w })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, s: usize) -> f64 {
        self.probs[s]
    }

    pub fn max_abs_diff(&self, other: &Belief) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// `Pr(s' | h a o) ∝ Σ_s Pr(s | h) T(s, a, s') O(a, s', o)`.
pub fn belief_update(pomdp: &Pomdp, b: &Belief, a: usize, o: usize) -> Result<Belief> {
    pomdp.check_obs(o)?;
    let pred = pomdp.predict(b, a)?;
    let w = pred.iter().enumerate().map(|(s2, p)| p * pomdp.o(a, s2, o)).collect();
    Belief::normalized(w).ok_or(PomdpError::ImpossibleObservation { action: a, observation: o })
}

/// An action-observation sequence `(o₀, a₀, o₁, …, a_{t−1}, o_t)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct History {
    obs: Vec<usize>,
    actions: Vec<usize>,
}

impl History {
    pub fn initial(o: usize) -> Self {
        Self {
            obs: vec![o],
            actions: Vec::new(),
        }
    }

    /// Builds a history from its parts; `obs` must be one longer than `actions`.
    pub fn from_parts(obs: Vec<usize>, actions: Vec<usize>) -> Option<Self> {
        (obs.len() == actions.len() + 1).then_some(Self { obs, actions })
    }

    pub fn push(&mut self, a: usize, o: usize) {
        self.actions.push(a);
        self.obs.push(o);
    }

    pub fn extended(&self, a: usize, o: usize) -> Self {
        let mut h = self.clone();
        h.push(a, o);
        h
    }

    /// Number of actions taken.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observations(&self) -> &[usize] {
        &self.obs
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn last_obs(&self) -> usize {
        *self.obs.last().expect("history has an initial observation")
    }

    /// `(a_k, o_{k+1})` pairs in order.
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.actions.iter().copied().zip(self.obs[1..].iter().copied())
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "o{}", self.obs[0])?;
        for (a, o) in self.steps() {
            write!(f, " a{a} o{o}")?;
        }
        Ok(())
    }
}
