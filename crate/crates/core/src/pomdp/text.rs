//! Plain-text table format.
//!
//! ```text
//! pomdp v1
//! states 2
//! actions 1
//! observations 1
//! discount 0.99
//! b0 0 0.5
//! T 0 0 1 1
//! R 0 0 -0.5
//! O 0 1 0 1
//! O0 0 0 1
//! ```
//!
//! After the four header lines, each line is one nonzero entry: `b0 s p`,
//! `T s a s' p`, `R s a r`, `O a s' o p` or `O0 s o p`. Blank lines and lines
//! starting with `#` are ignored. Bindings use
//!
//! ```text
//! binding v1
//! group c4
//! state 1 <permutation of 0..|S|>
//! action 1 <permutation of 0..|A|>
//! observation 1 <permutation of 0..|Ω|>
//! ```
//!
//! with one line per non-identity element and kind.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{GroupActionBinding, Pomdp, PomdpError, PomdpTables, Result};
use crate::group::{Group, GroupKind};

pub fn write_pomdp(pomdp: &Pomdp) -> String {
    let t = pomdp.tables();
    let mut out = String::new();
    let _ = writeln!(out, "pomdp v1");
    let _ = writeln!(out, "states {}", t.n_states);
    let _ = writeln!(out, "actions {}", t.n_actions);
    let _ = writeln!(out, "observations {}", t.n_obs);
    let _ = writeln!(out, "discount {}", t.discount);
    for (s, &p) in t.b0.iter().enumerate().filter(|(_, p)| **p != 0.0) {
        let _ = writeln!(out, "b0 {s} {p}");
    }
    for s in 0..t.n_states {
        for a in 0..t.n_actions {
            for s2 in 0..t.n_states {
                let p = t.t[t.t_index(s, a, s2)];
                if p != 0.0 {
                    let _ = writeln!(out, "T {s} {a} {s2} {p}");
                }
            }
        }
    }
    for s in 0..t.n_states {
        for a in 0..t.n_actions {
            let r = t.r[t.r_index(s, a)];
            if r != 0.0 {
                let _ = writeln!(out, "R {s} {a} {r}");
            }
        }
    }
    for a in 0..t.n_actions {
        for s2 in 0..t.n_states {
            for o in 0..t.n_obs {
                let p = t.o[t.o_index(a, s2, o)];
                if p != 0.0 {
                    let _ = writeln!(out, "O {a} {s2} {o} {p}");
                }
            }
        }
    }
    for s in 0..t.n_states {
        for o in 0..t.n_obs {
            let p = t.o0[t.o0_index(s, o)];
            if p != 0.0 {
                let _ = writeln!(out, "O0 {s} {o} {p}");
            }
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
        }
    }

    /// Next non-blank, non-comment line as `(line number, fields)`.
    fn next_fields(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            let line = line.trim();
            if !line.is_empty() && !line.starts_with('#') {
                return Some((i + 1, line.split_whitespace().collect()));
            }
        }
        None
    }

    fn header(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.next_fields() {
            Some((n, f)) if f.first() == Some(&key) => Ok((n, f)),
            Some((n, f)) => Err(parse_err(n, format!("expected `{key}`, found `{}`", f.join(" ")))),
            None => Err(parse_err(0, format!("missing `{key}` line"))),
        }
    }
}

fn parse_err(line: usize, message: String) -> PomdpError {
    PomdpError::Parse { line, message }
}

fn field<T: FromStr>(line: usize, fields: &[&str], i: usize) -> Result<T> {
    let raw = fields
        .get(i)
        .ok_or_else(|| parse_err(line, format!("expected at least {} fields", i + 1)))?;
    raw.parse()
        .map_err(|_| parse_err(line, format!("cannot parse `{raw}`")))
}

fn bounded(line: usize, fields: &[&str], i: usize, size: usize, what: &str) -> Result<usize> {
    let x: usize = field(line, fields, i)?;
    if x >= size {
        return Err(parse_err(line, format!("{what} {x} out of range (size {size})")));
    }
    Ok(x)
}

pub fn read_pomdp(text: &str) -> Result<Pomdp> {
    let mut lines = Lines::new(text);
    let (n, f) = lines.header("pomdp")?;
    if f.get(1) != Some(&"v1") {
        return Err(parse_err(n, "unsupported version; expected `pomdp v1`".into()));
    }
    let (n, f) = lines.header("states")?;
    let ns: usize = field(n, &f, 1)?;
    let (n, f) = lines.header("actions")?;
    let na: usize = field(n, &f, 1)?;
    let (n, f) = lines.header("observations")?;
    let no: usize = field(n, &f, 1)?;
    let (n, f) = lines.header("discount")?;
    let discount: f64 = field(n, &f, 1)?;
    let mut t = PomdpTables::zeros(ns, na, no, discount);
    while let Some((n, f)) = lines.next_fields() {
        let arity = |k: usize| -> Result<()> {
            if f.len() != k {
                return Err(parse_err(n, format!("`{}` takes {} fields, found {}", f[0], k - 1, f.len() - 1)));
            }
            Ok(())
        };
        match f[0] {
            "b0" => {
                arity(3)?;
                t.b0[bounded(n, &f, 1, ns, "state")?] = field(n, &f, 2)?;
            }
            "T" => {
                arity(5)?;
                let i = t.t_index(
                    bounded(n, &f, 1, ns, "state")?,
                    bounded(n, &f, 2, na, "action")?,
                    bounded(n, &f, 3, ns, "state")?,
                );
                t.t[i] = field(n, &f, 4)?;
            }
            "R" => {
                arity(4)?;
                let i = t.r_index(bounded(n, &f, 1, ns, "state")?, bounded(n, &f, 2, na, "action")?);
                t.r[i] = field(n, &f, 3)?;
            }
            "O" => {
                arity(5)?;
                let i = t.o_index(
                    bounded(n, &f, 1, na, "action")?,
                    bounded(n, &f, 2, ns, "state")?,
                    bounded(n, &f, 3, no, "observation")?,
                );
                t.o[i] = field(n, &f, 4)?;
            }
            "O0" => {
                arity(4)?;
                let i = t.o0_index(bounded(n, &f, 1, ns, "state")?, bounded(n, &f, 2, no, "observation")?);
                t.o0[i] = field(n, &f, 3)?;
            }
            other => return Err(parse_err(n, format!("unknown entry kind `{other}`"))),
        }
    }
    Pomdp::new(t)
}

fn group_name(group: &Group) -> String {
    match group.kind() {
        GroupKind::Cyclic(n) => format!("c{n}"),
        GroupKind::Reflection => "flip".into(),
    }
}

fn parse_group(line: usize, name: &str) -> Result<Group> {
    if name == "flip" {
        return Ok(Group::reflection());
    }
    let n = name
        .strip_prefix('c')
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| parse_err(line, format!("unknown group `{name}`")))?;
    Ok(Group::cyclic(n)?)
}

pub fn write_binding(binding: &GroupActionBinding) -> String {
    let mut out = format!("binding v1\ngroup {}\n", group_name(binding.group()));
    for g in binding.group().elements().skip(1) {
        for (kind, map) in [
            ("state", binding.state_map(g)),
            ("action", binding.action_map(g)),
            ("observation", binding.obs_map(g)),
        ] {
            let perm: Vec<String> = map.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{kind} {} {}", g.index(), perm.join(" "));
        }
    }
    out
}

pub fn read_binding(text: &str) -> Result<GroupActionBinding> {
    let mut lines = Lines::new(text);
    let (n, f) = lines.header("binding")?;
    if f.get(1) != Some(&"v1") {
        return Err(parse_err(n, "unsupported version; expected `binding v1`".into()));
    }
    let (n, f) = lines.header("group")?;
    let group = parse_group(n, f.get(1).copied().unwrap_or(""))?;
    let order = group.order();
    let mut maps: [Vec<Option<Vec<usize>>>; 3] = [vec![None; order], vec![None; order], vec![None; order]];
    while let Some((n, f)) = lines.next_fields() {
        let slot = match f[0] {
            "state" => 0,
            "action" => 1,
            "observation" => 2,
            other => return Err(parse_err(n, format!("unknown map kind `{other}`"))),
        };
        let g = bounded(n, &f, 1, order, "element")?;
        let perm = f[2..]
            .iter()
            .map(|x| x.parse().map_err(|_| parse_err(n, format!("cannot parse `{x}`"))))
            .collect::<Result<Vec<usize>>>()?;
        maps[slot][g] = Some(perm);
    }
    let [states, actions, obs] = maps.map(|m| {
        let size = m.iter().flatten().map(Vec::len).next().unwrap_or(0);
        let mut full: Vec<Vec<usize>> = Vec::with_capacity(order);
        for (k, p) in m.into_iter().enumerate() {
            full.push(p.unwrap_or_else(|| if k == 0 { (0..size).collect() } else { Vec::new() }));
        }
        full
    });
    GroupActionBinding::new(group, states, actions, obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::{random_pomdp, random_symmetric_pomdp, regular_orbit_binding};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pomdp_round_trips_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = random_pomdp(5, 3, 4, 0.95, &mut rng);
        let q = read_pomdp(&write_pomdp(&p)).unwrap();
        assert_eq!(p.tables(), q.tables());
    }

    #[test]
    fn binding_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = regular_orbit_binding(&Group::cyclic(4).unwrap(), (1, 2), (1, 0), (2, 1)).unwrap();
        let _ = random_symmetric_pomdp(&b, 0.9, &mut rng);
        assert_eq!(read_binding(&write_binding(&b)).unwrap(), b);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "pomdp v1\nstates 1\nactions 1\nobservations 1\ndiscount 0.5\n# comment\nT 0 0 3 1\n";
        let err = read_pomdp(text).unwrap_err();
        assert!(matches!(err, PomdpError::Parse { line: 7, .. }), "{err}");
        let err = read_pomdp("pomdp v2\n").unwrap_err();
        assert!(matches!(err, PomdpError::Parse { line: 1, .. }));
        // parsed but not stochastic
        let text = "pomdp v1\nstates 1\nactions 1\nobservations 1\ndiscount 0.5\nb0 0 1\nT 0 0 0 1\nO 0 0 0 1\n";
        assert!(matches!(read_pomdp(text), Err(PomdpError::NotStochastic { table: "O0", .. })));
    }

    #[test]
    fn documented_example_parses() {
        let text = "pomdp v1\nstates 2\nactions 1\nobservations 1\ndiscount 0.99\nb0 0 0.5\nb0 1 0.5\nT 0 0 1 1\nT 1 0 1 1\nR 0 0 -0.5\nO 0 0 0 1\nO 0 1 0 1\nO0 0 0 1\nO0 1 0 1\n";
        let p = read_pomdp(text).unwrap();
        assert_eq!(p.r(0, 0), -0.5);
        assert_eq!(p.t(0, 0, 1), 1.0);
    }
}
