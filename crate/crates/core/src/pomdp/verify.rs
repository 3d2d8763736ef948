use std::fmt;

use super::{exact_q, GroupActionBinding, History, HistoryTree, Pomdp, Result};
use crate::group::Element;

/// Table entries must agree with their g-images to this tolerance.
pub const INVARIANCE_TOL: f64 = 1e-12;
pub const LEMMA1_TOL: f64 = 1e-12;
pub const THEOREM1_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Condition {
    /// `T(gs, ga, gs') = T(s, a, s')`
    Transition,
    /// `R(gs, ga) = R(s, a)`
    Reward,
    /// `O(ga, gs', go) = O(a, s', o)`
    Observation,
    /// `O₀(gs, go) = O₀(s, o)`
    InitialObservation,
    /// `b₀(gs) = b₀(s)`
    InitialBelief,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Transition => "T",
            Condition::Reward => "R",
            Condition::Observation => "O",
            Condition::InitialObservation => "O0",
            Condition::InitialBelief => "b0",
        })
    }
}

/// One table entry that differs from its image: `indices` are the original
/// tuple in the table's own index order.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub condition: Condition,
    pub element: Element,
    pub indices: Vec<usize>,
    pub value: f64,
    pub image_value: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
        write!(
            f,
            "{}({}) = {} but its image under g={} has {}",
            self.condition,
            idx.join(", "),
            self.value,
            self.element,
            self.image_value
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceReport {
    pub group: String,
    pub checked: usize,
    pub violations: Vec<Violation>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_deviation(&self) -> f64 {
        self.violations
            .iter()
            .fold(0.0, |m, v| m.max((v.value - v.image_value).abs()))
    }

    pub fn count(&self, condition: Condition) -> usize {
        self.violations.iter().filter(|v| v.condition == condition).count()
    }

    pub fn summary_line(&self) -> String {
        format!(
            "invariance pass={} group={} checked={} violations={} max_deviation={:e}",
            self.passed(),
            self.group,
            self.checked,
            self.violations.len(),
            self.max_deviation()
        )
    }
}

impl fmt::Display for InvarianceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.summary_line())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Exhaustively compares every entry of `T`, `R`, `O`, `O₀` and `b₀` with its
/// image under every group element.
pub fn check_invariance(pomdp: &Pomdp, binding: &GroupActionBinding) -> Result<InvarianceReport> {
    binding.check_sizes(pomdp)?;
    let (ns, na, no) = (pomdp.n_states(), pomdp.n_actions(), pomdp.n_obs());
    let mut report = InvarianceReport {
        group: binding.group().to_string(),
        checked: 0,
        violations: Vec::new(),
    };
    let mut compare = |condition, element, indices: Vec<usize>, value: f64, image_value: f64| {
        report.checked += 1;
        if (value - image_value).abs() > INVARIANCE_TOL {
            report.violations.push(Violation {
                condition,
                element,
                indices,
                value,
                image_value,
            });
        }
    };
    for g in binding.group().elements() {
        let (sm, am, om) = (binding.state_map(g), binding.action_map(g), binding.obs_map(g));
        for s in 0..ns {
            compare(Condition::InitialBelief, g, vec![s], pomdp.b0()[s], pomdp.b0()[sm[s]]);
            for o in 0..no {
                compare(Condition::InitialObservation, g, vec![s, o], pomdp.o0(s, o), pomdp.o0(sm[s], om[o]));
            }
            for a in 0..na {
                compare(Condition::Reward, g, vec![s, a], pomdp.r(s, a), pomdp.r(sm[s], am[a]));
                for s2 in 0..ns {
                    compare(
                        Condition::Transition,
                        g,
                        vec![s, a, s2],
                        pomdp.t(s, a, s2),
                        pomdp.t(sm[s], am[a], sm[s2]),
                    );
                }
            }
        }
        for a in 0..na {
            for s2 in 0..ns {
                for o in 0..no {
                    compare(Condition::Observation, g, vec![a, s2, o], pomdp.o(a, s2, o), pomdp.o(am[a], sm[s2], om[o]));
                }
            }
        }
    }
    Ok(report)
}

/// Where belief invariance fails: `state` is `None` when `g·h` is not even
/// reachable although `h` is.
#[derive(Clone, Debug, PartialEq)]
pub struct Lemma1Witness {
    pub history: History,
    pub element: Element,
    pub state: Option<usize>,
    pub belief: f64,
    pub image_belief: f64,
}

impl fmt::Display for Lemma1Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.state {
            Some(s) => write!(
                f,
                "h = [{}], g = {}, s = {}: Pr(s|h) = {} but Pr(gs|gh) = {}",
                self.history, self.element, s, self.belief, self.image_belief
            ),
            None => write!(f, "h = [{}] is reachable but g·h is not for g = {}", self.history, self.element),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lemma1Report {
    pub depth: usize,
    pub histories: usize,
    pub comparisons: usize,
    pub max_deviation: f64,
    pub missing: usize,
    pub witness: Option<Lemma1Witness>,
}

impl Lemma1Report {
    pub fn passed(&self) -> bool {
        self.missing == 0 && self.max_deviation < LEMMA1_TOL
    }

    pub fn summary_line(&self) -> String {
        format!(
            "lemma1 pass={} depth={} histories={} comparisons={} missing_images={} max_deviation={:e}",
            self.passed(),
            self.depth,
            self.histories,
            self.comparisons,
            self.missing,
            self.max_deviation
        )
    }
}

impl fmt::Display for Lemma1Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.summary_line())?;
        if let Some(w) = &self.witness {
            writeln!(f, "  worst: {w}")?;
        }
        Ok(())
    }
}

/// Compares `Pr(s | h)` with `Pr(g·s | g·h)` for every reachable history up
/// to `depth` actions and every group element.
pub fn verify_lemma1(pomdp: &Pomdp, binding: &GroupActionBinding, depth: usize, budget: usize) -> Result<Lemma1Report> {
    binding.check_sizes(pomdp)?;
    let tree = HistoryTree::build(pomdp, depth, budget)?;
    let mut report = Lemma1Report {
        depth,
        histories: tree.len(),
        comparisons: 0,
        max_deviation: 0.0,
        missing: 0,
        witness: None,
    };
    for id in tree.ids() {
        let h = tree.history(id);
        let b = tree.belief(id);
        for g in binding.group().elements() {
            let gh = binding.act_on_history(g, &h);
            report.comparisons += 1;
            let Some(gid) = tree.find(&gh) else {
                if report.missing == 0 {
                    report.witness = Some(Lemma1Witness {
                        history: h.clone(),
                        element: g,
                        state: None,
                        belief: 0.0,
                        image_belief: 0.0,
                    });
                }
                report.missing += 1;
                continue;
            };
            let gb = tree.belief(gid);
            for s in 0..pomdp.n_states() {
                let dev = (gb.get(binding.state(g, s)) - b.get(s)).abs();
                if dev > report.max_deviation {
                    report.max_deviation = dev;
                    if report.missing == 0 {
                        report.witness = Some(Lemma1Witness {
                            history: h.clone(),
                            element: g,
                            state: Some(s),
                            belief: b.get(s),
                            image_belief: gb.get(binding.state(g, s)),
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Where Q-invariance fails; `image_q` is `None` when `g·h` is unreachable.
#[derive(Clone, Debug, PartialEq)]
pub struct Theorem1Witness {
    pub history: History,
    pub action: usize,
    pub element: Element,
    pub q: f64,
    pub image_q: Option<f64>,
}

impl fmt::Display for Theorem1Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.image_q {
            Some(gq) => write!(
                f,
                "h = [{}], a = {}, g = {}: Q*(h, a) = {} but Q*(gh, ga) = {}",
                self.history, self.action, self.element, self.q, gq
            ),
            None => write!(f, "h = [{}] is reachable but g·h is not for g = {}", self.history, self.element),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem1Report {
    pub horizon: usize,
    pub discount: f64,
    pub histories: usize,
    pub pairs: usize,
    pub max_q_deviation: f64,
    pub max_v_deviation: f64,
    pub missing: usize,
    pub argmax_mismatches: usize,
    pub witness: Option<Theorem1Witness>,
    /// History, element, `argmax Q*(gh, ·)` and `g·argmax Q*(h, ·)`.
    pub argmax_witness: Option<(History, Element, Vec<usize>, Vec<usize>)>,
}

impl Theorem1Report {
    pub fn passed(&self) -> bool {
        self.missing == 0 && self.argmax_mismatches == 0 && self.max_q_deviation < THEOREM1_TOL
    }

    pub fn summary_line(&self) -> String {
        format!(
            "theorem1 pass={} horizon={} discount={} histories={} pairs={} missing_images={} argmax_mismatches={} max_q_deviation={:e} max_v_deviation={:e}",
            self.passed(),
            self.horizon,
            self.discount,
            self.histories,
            self.pairs,
            self.missing,
            self.argmax_mismatches,
            self.max_q_deviation,
            self.max_v_deviation
        )
    }
}

impl fmt::Display for Theorem1Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.summary_line())?;
        if let Some(w) = &self.witness {
            writeln!(f, "  worst: {w}")?;
        }
        if let Some((h, g, image, mapped)) = &self.argmax_witness {
            writeln!(f, "  argmax: h = [{h}], g = {g}: argmax Q*(gh, ·) = {image:?} but g·argmax Q*(h, ·) = {mapped:?}")?;
        }
        Ok(())
    }
}

/// Solves the history MDP to `horizon` and compares `Q*(gh, ga)` with
/// `Q*(h, a)`, `V*(gh)` with `V*(h)`, and greedy argmax sets, for every
/// reachable `(h, a)` and group element.
pub fn verify_theorem1(pomdp: &Pomdp, binding: &GroupActionBinding, horizon: usize, budget: usize) -> Result<Theorem1Report> {
    binding.check_sizes(pomdp)?;
    let q = exact_q(pomdp, horizon, budget)?;
    let tree = q.tree();
    let mut report = Theorem1Report {
        horizon,
        discount: pomdp.discount(),
        histories: tree.len(),
        pairs: 0,
        max_q_deviation: 0.0,
        max_v_deviation: 0.0,
        missing: 0,
        argmax_mismatches: 0,
        witness: None,
        argmax_witness: None,
    };
    for id in tree.ids() {
        let h = tree.history(id);
        let best = q.argmax(id);
        for g in binding.group().elements() {
            let gh = binding.act_on_history(g, &h);
            let Some(gid) = tree.find(&gh) else {
                if report.missing == 0 {
                    report.witness = Some(Theorem1Witness {
                        history: h.clone(),
                        action: 0,
                        element: g,
                        q: q.q(id)[0],
                        image_q: None,
                    });
                }
                report.missing += 1;
                continue;
            };
            for a in 0..pomdp.n_actions() {
                report.pairs += 1;
                let (qa, gqa) = (q.q(id)[a], q.q(gid)[binding.action(g, a)]);
                let dev = (gqa - qa).abs();
                if dev > report.max_q_deviation {
                    report.max_q_deviation = dev;
                    if report.missing == 0 {
                        report.witness = Some(Theorem1Witness {
                            history: h.clone(),
                            action: a,
                            element: g,
                            q: qa,
                            image_q: Some(gqa),
                        });
                    }
                }
            }
            report.max_v_deviation = report.max_v_deviation.max((q.v(gid) - q.v(id)).abs());
            let mut mapped: Vec<usize> = best.iter().map(|&a| binding.action(g, a)).collect();
            mapped.sort_unstable();
            let image = q.argmax(gid);
            if image != mapped {
                if report.argmax_witness.is_none() {
                    report.argmax_witness = Some((h.clone(), g, image, mapped));
                }
                report.argmax_mismatches += 1;
            }
        }
    }
    Ok(report)
}
