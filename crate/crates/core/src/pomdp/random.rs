use rand::Rng;

use super::{GroupActionBinding, Pomdp, PomdpTables, Result};
use crate::group::{Element, Group};

fn random_row(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() })
        .collect();
    if row.iter().all(|&x| x == 0.0) {
        row[rng.random_range(0..n)] = 1.0;
    }
    let z: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= z);
    row
}

/// Random tables with roughly 30% structural zeros per row.
pub fn random_pomdp(n_states: usize, n_actions: usize, n_obs: usize, discount: f64, rng: &mut impl Rng) -> Pomdp {
    let mut t = PomdpTables::zeros(n_states, n_actions, n_obs, discount);
    t.b0 = random_row(n_states, rng);
    t.t = (0..n_states * n_actions).flat_map(|_| random_row(n_states, rng)).collect();
    t.r = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
    t.o = (0..n_actions * n_states).flat_map(|_| random_row(n_obs, rng)).collect();
    t.o0 = (0..n_states).flat_map(|_| random_row(n_obs, rng)).collect();
    Pomdp::new(t).expect("random rows are normalized")
}

/// `group` acting on each set as a number of regular orbits followed by
/// fixed points; each pair is `(regular orbits, fixed points)`.
pub fn regular_orbit_binding(
    group: &Group,
    states: (usize, usize),
    actions: (usize, usize),
    obs: (usize, usize),
) -> Result<GroupActionBinding> {
    let n = group.order();
    let maps = |(orbits, fixed): (usize, usize)| -> Vec<Vec<usize>> {
        group
            .elements()
            .map(|g| {
                (0..orbits * n)
                    .map(|x| (x / n) * n + group.compose(g, Element(x % n)).index())
                    .chain(orbits * n..orbits * n + fixed)
                    .collect()
            })
            .collect()
    };
    GroupActionBinding::new(group.clone(), maps(states), maps(actions), maps(obs))
}

/// Random tables averaged over the group orbit of every index tuple, which
/// makes them exactly invariant under `binding`. Orbit members are summed in
/// a fixed order so all of them receive bit-identical values.
pub fn random_symmetric_pomdp(binding: &GroupActionBinding, discount: f64, rng: &mut impl Rng) -> Pomdp {
    let (ns, na, no) = (binding.n_states(), binding.n_actions(), binding.n_obs());
    let raw = random_pomdp(ns, na, no, discount, rng).into_tables();
    let group = binding.group().clone();
    let mut t = raw.clone();
    let average = |images: &mut Vec<usize>, table: &[f64]| -> f64 {
        images.sort_unstable();
        images.iter().map(|&i| table[i]).sum::<f64>() / images.len() as f64
    };
    for s in 0..ns {
        let mut imgs: Vec<usize> = group.elements().map(|g| binding.state(g, s)).collect();
        t.b0[s] = average(&mut imgs, &raw.b0);
        for a in 0..na {
            let mut imgs: Vec<usize> = group
                .elements()
                .map(|g| raw.r_index(binding.state(g, s), binding.action(g, a)))
                .collect();
            t.r[raw.r_index(s, a)] = average(&mut imgs, &raw.r);
            for s2 in 0..ns {
                let mut imgs: Vec<usize> = group
                    .elements()
                    .map(|g| raw.t_index(binding.state(g, s), binding.action(g, a), binding.state(g, s2)))
                    .collect();
                t.t[raw.t_index(s, a, s2)] = average(&mut imgs, &raw.t);
            }
        }
        for o in 0..no {
            let mut imgs: Vec<usize> = group
                .elements()
                .map(|g| raw.o0_index(binding.state(g, s), binding.obs(g, o)))
                .collect();
            t.o0[raw.o0_index(s, o)] = average(&mut imgs, &raw.o0);
            for a in 0..na {
                let mut imgs: Vec<usize> = group
                    .elements()
                    .map(|g| raw.o_index(binding.action(g, a), binding.state(g, s), binding.obs(g, o)))
                    .collect();
                t.o[raw.o_index(a, s, o)] = average(&mut imgs, &raw.o);
            }
        }
    }
    Pomdp::new(t).expect("averaging preserves stochasticity")
}
