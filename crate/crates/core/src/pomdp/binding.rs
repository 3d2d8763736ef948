use super::{History, Pomdp, PomdpError, Result};
use crate::group::{Element, Group};

/// A group acting on the state, action and observation sets of a POMDP by
/// permutations, one per group element.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupActionBinding {
    group: Group,
    states: Vec<Vec<usize>>,
    actions: Vec<Vec<usize>>,
    observations: Vec<Vec<usize>>,
}

impl GroupActionBinding {
    /// `maps[k]` is the permutation for element `k`; checked to be bijections
    /// that compose like the group.
    pub fn new(
        group: Group,
        states: Vec<Vec<usize>>,
        actions: Vec<Vec<usize>>,
        observations: Vec<Vec<usize>>,
    ) -> Result<Self> {
        for (kind, maps) in [("state", &states), ("action", &actions), ("observation", &observations)] {
            validate(&group, kind, maps)?;
        }
        Ok(Self {
            group,
            states,
            actions,
            observations,
        })
    }

    /// Builds every map as a power of the generator's permutation. Both
    /// supported group families are cyclic, so this covers all elements.
    pub fn from_generator(
        group: Group,
        state_gen: Vec<usize>,
        action_gen: Vec<usize>,
        obs_gen: Vec<usize>,
    ) -> Result<Self> {
        let powers = |gen: Vec<usize>| -> Vec<Vec<usize>> {
            let mut maps = vec![(0..gen.len()).collect::<Vec<_>>()];
            for k in 1..group.order() {
                let prev: &Vec<usize> = &maps[k - 1];
                maps.push(prev.iter().map(|&x| gen.get(x).copied().unwrap_or(usize::MAX)).collect());
            }
            maps
        };
        let (s, a, o) = (powers(state_gen), powers(action_gen), powers(obs_gen));
        Self::new(group, s, a, o)
    }

    /// The one-element group acting by identities.
    pub fn trivial(n_states: usize, n_actions: usize, n_obs: usize) -> Self {
        let id = |n: usize| vec![(0..n).collect::<Vec<_>>()];
        Self {
            group: Group::cyclic(1).expect("order 1 is valid"),
            states: id(n_states),
            actions: id(n_actions),
            observations: id(n_obs),
        }
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn n_states(&self) -> usize {
        self.states[0].len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions[0].len()
    }

    pub fn n_obs(&self) -> usize {
        self.observations[0].len()
    }

    pub fn state(&self, g: Element, s: usize) -> usize {
        self.states[g.index()][s]
    }

    pub fn action(&self, g: Element, a: usize) -> usize {
        self.actions[g.index()][a]
    }

    pub fn obs(&self, g: Element, o: usize) -> usize {
        self.observations[g.index()][o]
    }

    pub fn state_map(&self, g: Element) -> &[usize] {
        &self.states[g.index()]
    }

    pub fn action_map(&self, g: Element) -> &[usize] {
        &self.actions[g.index()]
    }

    pub fn obs_map(&self, g: Element) -> &[usize] {
        &self.observations[g.index()]
    }

    pub fn check_sizes(&self, pomdp: &Pomdp) -> Result<()> {
        let ours = (self.n_states(), self.n_actions(), self.n_obs());
        let theirs = (pomdp.n_states(), pomdp.n_actions(), pomdp.n_obs());
        if ours != theirs {
            return Err(PomdpError::Binding(format!(
                "binding acts on (|S|, |A|, |Ω|) = {ours:?} but the POMDP has {theirs:?}"
            )));
        }
        Ok(())
    }

    pub fn act_on_history(&self, g: Element, h: &History) -> History {
        let obs = h.observations().iter().map(|&o| self.obs(g, o)).collect();
        let actions = h.actions().iter().map(|&a| self.action(g, a)).collect();
        History::from_parts(obs, actions).expect("mapping preserves the alternation")
    }
}

pub fn act_on_history(binding: &GroupActionBinding, g: Element, h: &History) -> History {
    binding.act_on_history(g, h)
}

fn validate(group: &Group, kind: &str, maps: &[Vec<usize>]) -> Result<()> {
    if maps.len() != group.order() {
        return Err(PomdpError::Binding(format!(
            "{} {kind} maps for a group of order {}",
            maps.len(),
            group.order()
        )));
    }
    let n = maps[0].len();
    for (k, m) in maps.iter().enumerate() {
        let mut seen = vec![false; n];
        if m.len() != n || m.iter().any(|&x| x >= n || std::mem::replace(&mut seen[x], true)) {
            return Err(PomdpError::Binding(format!("{kind} map of element {k} is not a permutation of 0..{n}")));
        }
    }
    if maps[group.identity().index()].iter().enumerate().any(|(i, &x)| i != x) {
        return Err(PomdpError::Binding(format!("identity moves some {kind}")));
    }
    for g in group.elements() {
        for h in group.elements() {
            let gh = group.compose(g, h).index();
            if (0..n).any(|x| maps[gh][x] != maps[g.index()][maps[h.index()][x]]) {
                return Err(PomdpError::Binding(format!(
                    "{kind} maps do not compose: map({g}·{h}) ≠ map({g})∘map({h})"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c4_on_four() -> GroupActionBinding {
        let g = Group::cyclic(4).unwrap();
        GroupActionBinding::from_generator(g, vec![1, 2, 3, 0], vec![1, 2, 3, 0], vec![0, 1]).unwrap()
    }

    #[test]
    fn generator_powers_compose() {
        let b = c4_on_four();
        assert_eq!(b.state_map(Element(2)), &[2, 3, 0, 1]);
        assert_eq!(b.obs_map(Element(3)), &[0, 1]);
    }

    #[test]
    fn non_bijection_is_rejected() {
        let g = Group::reflection();
        let err = GroupActionBinding::new(g, vec![vec![0, 1], vec![0, 0]], vec![vec![0], vec![0]], vec![vec![0], vec![0]]);
        assert!(matches!(err, Err(PomdpError::Binding(_))));
    }

    #[test]
    fn wrong_order_generator_is_rejected() {
        // a 3-cycle is not an action of C4
        let g = Group::cyclic(4).unwrap();
        let err = GroupActionBinding::from_generator(g, vec![1, 2, 0], vec![0], vec![0]);
        assert!(matches!(err, Err(PomdpError::Binding(_))));
    }

    #[test]
    fn history_action_round_trips() {
        let b = c4_on_four();
        let mut h = History::initial(1);
        h.push(0, 0);
        h.push(3, 1);
        assert_eq!(b.act_on_history(Element(0), &h), h);
        let gh = b.act_on_history(Element(1), &h);
        assert_eq!(gh.actions(), &[1, 0]);
        assert_eq!(b.act_on_history(Element(3), &gh), h);
    }
}
