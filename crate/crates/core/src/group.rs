//! Finite symmetry groups, their matrix representations, and the combined
//! pixel-wise + channel-wise action on feature fields.
//!
//! Two group families are supported: the cyclic rotation groups `C_n` and the
//! two-element reflection group. Elements are plain integers with precomputed
//! composition and inverse tables; element `0` is always the identity. For
//! `C_n`, element `k` is the counter-clockwise rotation by `2πk/n`.
//!
//! A [`FeatureField`] stores `dim × spatial` values in channel-major order.
//! Acting with `g` first moves every spatial sample to its rotated position
//! and then mixes the channels with `ρ(g)`, i.e. `g·x = ρ(g)(ρ_f(g)⁻¹ x)`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("group order must be positive, got {0}")]
    InvalidOrder(usize),
    #[error("element {element} is not in a group of order {order}")]
    UnknownElement { element: usize, order: usize },
    #[error("cannot form a direct sum of zero representations")]
    EmptySum,
    #[error("representations act on different groups ({0} vs {1})")]
    GroupMismatch(String, String),
    #[error("unsupported representation: {0}")]
    UnsupportedRepresentation(String),
    #[error("unsupported spatial action: {0}")]
    UnsupportedSpatialAction(String),
    #[error("feature field has {actual} values, expected {expected}")]
    FieldSize { expected: usize, actual: usize },
}

pub type Result<T> = std::result::Result<T, GroupError>;

/// A group element, stored as its index in the owning group's tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(pub usize);

impl Element {
    pub const IDENTITY: Element = Element(0);

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    /// `C_n`: `n` planar rotations.
    Cyclic(usize),
    /// The reflection group `{e, flip}`; the flip negates the x axis.
    Reflection,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    kind: GroupKind,
    order: usize,
    table: Vec<usize>,
    inverses: Vec<usize>,
}

impl Group {
    pub fn new(kind: GroupKind) -> Result<Self> {
        let order = match kind {
            GroupKind::Cyclic(0) => return Err(GroupError::InvalidOrder(0)),
            GroupKind::Cyclic(n) => n,
            GroupKind::Reflection => 2,
        };
        let mut table = vec![0; order * order];
        for a in 0..order {
            for b in 0..order {
                table[a * order + b] = match kind {
                    GroupKind::Cyclic(n) => (a + b) % n,
                    GroupKind::Reflection => a ^ b,
                };
            }
        }
        let inverses = (0..order)
            .map(|a| (0..order).find(|&b| table[a * order + b] == 0).unwrap())
            .collect();
        Ok(Self {
            kind,
            order,
            table,
            inverses,
        })
    }

    pub fn cyclic(n: usize) -> Result<Self> {
        Self::new(GroupKind::Cyclic(n))
    }

    pub fn reflection() -> Self {
        Self::new(GroupKind::Reflection).expect("reflection group is always valid")
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> Element {
        Element::IDENTITY
    }

    pub fn elements(&self) -> impl Iterator<Item = Element> + Clone {
        (0..self.order).map(Element)
    }

    /// Smallest non-identity generator (the identity for the trivial group).
    pub fn generator(&self) -> Element {
        Element(if self.order > 1 { 1 } else { 0 })
    }

    pub fn contains(&self, g: Element) -> bool {
        g.0 < self.order
    }

    pub fn check(&self, g: Element) -> Result<Element> {
        if self.contains(g) {
            Ok(g)
        } else {
            Err(GroupError::UnknownElement {
                element: g.0,
                order: self.order,
            })
        }
    }

    /// `a·b`, i.e. apply `b` first and then `a`.
    pub fn compose(&self, a: Element, b: Element) -> Element {
        Element(self.table[a.0 * self.order + b.0])
    }

    pub fn inverse(&self, g: Element) -> Element {
        Element(self.inverses[g.0])
    }

    /// Rotation angle of a cyclic element in radians.
    pub fn angle(&self, g: Element) -> f64 {
        match self.kind {
            GroupKind::Cyclic(n) => 2.0 * PI * g.0 as f64 / n as f64,
            GroupKind::Reflection => 0.0,
        }
    }

    /// Number of 90° counter-clockwise turns if `g` is an exact quarter-turn multiple.
    pub fn quarter_turns(&self, g: Element) -> Option<usize> {
        match self.kind {
            GroupKind::Cyclic(n) if (4 * g.0) % n == 0 => Some(4 * g.0 / n),
            _ => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            GroupKind::Cyclic(n) => write!(f, "C{n}"),
            GroupKind::Reflection => write!(f, "flip"),
        }
    }
}

pub fn make_group(kind: GroupKind) -> Result<Group> {
    Group::new(kind)
}

#[derive(Clone, Debug, PartialEq)]
pub enum RepKind {
    Trivial,
    Standard,
    Sign,
    Regular,
    /// Permutation of the cells of an `height × width` grid.
    GridPermutation { height: usize, width: usize },
    DirectSum(Vec<Representation>),
    Tensor(Box<Representation>, Box<Representation>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    group: Group,
    kind: RepKind,
    dim: usize,
}

impl Representation {
    pub fn trivial(group: &Group) -> Self {
        Self {
            group: group.clone(),
            kind: RepKind::Trivial,
            dim: 1,
        }
    }

    /// Rotation matrices for `C_n`; the x-axis flip `diag(-1, 1)` for reflections.
    pub fn standard(group: &Group) -> Self {
        Self {
            group: group.clone(),
            kind: RepKind::Standard,
            dim: 2,
        }
    }

    /// One-dimensional `±1` representation; needs a reflection group or an even cyclic group.
    pub fn sign(group: &Group) -> Result<Self> {
        match group.kind() {
            GroupKind::Cyclic(n) if n % 2 == 1 => Err(GroupError::UnsupportedRepresentation(
                format!("sign representation needs an even order, {group} has order {n}"),
            )),
            _ => Ok(Self {
                group: group.clone(),
                kind: RepKind::Sign,
                dim: 1,
            }),
        }
    }

    /// Permutes `|G|` coordinates: element `h` maps coordinate `i` to `h·i`.
    pub fn regular(group: &Group) -> Self {
        Self {
            group: group.clone(),
            kind: RepKind::Regular,
            dim: group.order(),
        }
    }

    pub fn grid(group: &Group, height: usize, width: usize) -> Result<Self> {
        // validates that every element acts exactly on the grid
        for g in group.elements() {
            grid_permutation(group, g, height, width)?;
        }
        Ok(Self {
            group: group.clone(),
            kind: RepKind::GridPermutation { height, width },
            dim: height * width,
        })
    }

    pub fn direct_sum(reps: &[Representation]) -> Result<Self> {
        let first = reps.first().ok_or(GroupError::EmptySum)?;
        for r in &reps[1..] {
            if r.group != first.group {
                return Err(GroupError::GroupMismatch(
                    first.group.to_string(),
                    r.group.to_string(),
                ));
            }
        }
        Ok(Self {
            group: first.group.clone(),
            dim: reps.iter().map(|r| r.dim).sum(),
            kind: RepKind::DirectSum(reps.to_vec()),
        })
    }

    /// `count` copies of `rep`.
    pub fn multiple(rep: &Representation, count: usize) -> Result<Self> {
        Self::direct_sum(&vec![rep.clone(); count])
    }

    /// Kronecker product; coordinate `(i, j)` lives at `i * b.dim + j`.
    pub fn tensor(a: &Representation, b: &Representation) -> Result<Self> {
        if a.group != b.group {
            return Err(GroupError::GroupMismatch(
                a.group.to_string(),
                b.group.to_string(),
            ));
        }
        Ok(Self {
            group: a.group.clone(),
            dim: a.dim * b.dim,
            kind: RepKind::Tensor(Box::new(a.clone()), Box::new(b.clone())),
        })
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn kind(&self) -> &RepKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self, g: Element) -> Result<DMatrix<f64>> {
        self.group.check(g)?;
        Ok(self.matrix_unchecked(g))
    }

    fn matrix_unchecked(&self, g: Element) -> DMatrix<f64> {
        match &self.kind {
            RepKind::Trivial => DMatrix::identity(1, 1),
            RepKind::Standard => match self.group.kind() {
                GroupKind::Cyclic(_) => {
                    let (s, c) = self.group.angle(g).sin_cos();
                    // snap to exact values so quarter turns are exact permutations
                    let (s, c) = (snap(s), snap(c));
                    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
                }
                GroupKind::Reflection => {
                    let x = if g.0 == 0 { 1.0 } else { -1.0 };
                    DMatrix::from_row_slice(2, 2, &[x, 0.0, 0.0, 1.0])
                }
            },
            RepKind::Sign => {
                let v = if g.0 % 2 == 0 { 1.0 } else { -1.0 };
                DMatrix::from_element(1, 1, v)
            }
            RepKind::Regular => {
                let n = self.dim;
                let mut m = DMatrix::zeros(n, n);
                for i in 0..n {
                    let j = self.group.compose(g, Element(i)).0;
                    m[(j, i)] = 1.0;
                }
                m
            }
            RepKind::GridPermutation { height, width } => {
                let perm = grid_permutation(&self.group, g, *height, *width)
                    .expect("grid support validated at construction");
                let n = self.dim;
                let mut m = DMatrix::zeros(n, n);
                for (src, &dst) in perm.iter().enumerate() {
                    m[(dst, src)] = 1.0;
                }
                m
            }
            RepKind::DirectSum(reps) => {
                let mut m = DMatrix::zeros(self.dim, self.dim);
                let mut off = 0;
                for r in reps {
                    let block = r.matrix_unchecked(g);
                    m.view_mut((off, off), (r.dim, r.dim)).copy_from(&block);
                    off += r.dim;
                }
                m
            }
            RepKind::Tensor(a, b) => a.matrix_unchecked(g).kronecker(&b.matrix_unchecked(g)),
        }
    }

    /// Flattened non-sum components with their coordinate offsets.
    pub fn leaves(&self) -> Vec<(usize, &Representation)> {
        let mut out = Vec::new();
        self.collect_leaves(0, &mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, offset: usize, out: &mut Vec<(usize, &'a Representation)>) {
        match &self.kind {
            RepKind::DirectSum(reps) => {
                let mut off = offset;
                for r in reps {
                    r.collect_leaves(off, out);
                    off += r.dim;
                }
            }
            _ => out.push((offset, self)),
        }
    }

    /// True when every component acts by permuting coordinates, so pointwise
    /// nonlinearities commute with the action.
    pub fn supports_pointwise(&self) -> bool {
        self.leaves().iter().all(|(_, r)| match &r.kind {
            RepKind::Trivial | RepKind::Regular | RepKind::GridPermutation { .. } => true,
            RepKind::Tensor(a, b) => a.supports_pointwise() && b.supports_pointwise(),
            _ => false,
        })
    }

    /// Short label such as `2ρ_r` or `ρ_s+ρ_t`.
    pub fn label(&self) -> String {
        match &self.kind {
            RepKind::Trivial => "trivial".into(),
            RepKind::Standard => "standard".into(),
            RepKind::Sign => "sign".into(),
            RepKind::Regular => "regular".into(),
            RepKind::GridPermutation { height, width } => format!("grid{height}x{width}"),
            RepKind::Tensor(a, b) => format!("({})⊗({})", a.label(), b.label()),
            RepKind::DirectSum(reps) => {
                let mut parts: Vec<String> = Vec::new();
                let mut i = 0;
                while i < reps.len() {
                    let mut j = i;
                    while j < reps.len() && reps[j] == reps[i] {
                        j += 1;
                    }
                    let l = reps[i].label();
                    parts.push(if j - i > 1 { format!("{}×{l}", j - i) } else { l });
                    i = j;
                }
                parts.join("+")
            }
        }
    }
}

pub fn rep_matrix(rep: &Representation, g: Element) -> Result<DMatrix<f64>> {
    rep.matrix(g)
}

pub fn direct_sum(reps: &[Representation]) -> Result<Representation> {
    Representation::direct_sum(reps)
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-12 {
        r
    } else {
        x
    }
}

/// Destination index of every cell of an `height × width` grid (row-major,
/// row 0 on top) under `g`. Rotations are counter-clockwise about the grid center.
pub fn grid_permutation(
    group: &Group,
    g: Element,
    height: usize,
    width: usize,
) -> Result<Vec<usize>> {
    group.check(g)?;
    let cells = height * width;
    let map = |f: &dyn Fn(usize, usize) -> (usize, usize)| -> Vec<usize> {
        (0..cells)
            .map(|i| {
                let (r, c) = f(i / width, i % width);
                r * width + c
            })
            .collect()
    };
    match group.kind() {
        GroupKind::Reflection => Ok(if g.0 == 0 {
            (0..cells).collect()
        } else {
            map(&|r, c| (r, width - 1 - c))
        }),
        GroupKind::Cyclic(n) => {
            if n == 1 || g.0 == 0 {
                return Ok((0..cells).collect());
            }
            if n != 2 && n != 4 {
                return Err(GroupError::UnsupportedSpatialAction(format!(
                    "C{n} has no exact action on a pixel grid"
                )));
            }
            let turns = group.quarter_turns(g).expect("C2/C4 elements are quarter turns");
            if turns % 2 == 1 && height != width {
                return Err(GroupError::UnsupportedSpatialAction(format!(
                    "90° rotation of a non-square {height}x{width} grid"
                )));
            }
            let n = height;
            Ok(match turns {
                1 => map(&|r, c| (n - 1 - c, r)),
                2 => map(&|r, c| (height - 1 - r, width - 1 - c)),
                3 => map(&|r, c| (c, n - 1 - r)),
                _ => unreachable!(),
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spatial {
    Scalar,
    Grid { height: usize, width: usize },
}

impl Spatial {
    pub fn size(self) -> usize {
        match self {
            Spatial::Scalar => 1,
            Spatial::Grid { height, width } => height * width,
        }
    }
}

/// Values of a field over a spatial domain, channel-major:
/// `values[c * spatial.size() + p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    rep: Representation,
    spatial: Spatial,
    values: Vec<f64>,
}

impl FeatureField {
    pub fn new(rep: Representation, spatial: Spatial, values: Vec<f64>) -> Result<Self> {
        let expected = rep.dim() * spatial.size();
        if values.len() != expected {
            return Err(GroupError::FieldSize {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self {
            rep,
            spatial,
            values,
        })
    }

    pub fn scalar(rep: Representation, values: Vec<f64>) -> Result<Self> {
        Self::new(rep, Spatial::Scalar, values)
    }

    pub fn zeros(rep: Representation, spatial: Spatial) -> Self {
        let n = rep.dim() * spatial.size();
        Self {
            rep,
            spatial,
            values: vec![0.0; n],
        }
    }

    pub fn rep(&self) -> &Representation {
        &self.rep
    }

    pub fn spatial(&self) -> Spatial {
        self.spatial
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs_diff(&self, other: &FeatureField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `g·x = ρ(g)(ρ_f(g)⁻¹ x)`.
    pub fn act(&self, g: Element) -> Result<FeatureField> {
        let group = self.rep.group();
        let m = self.rep.matrix(g)?;
        let size = self.spatial.size();
        let perm: Vec<usize> = match self.spatial {
            Spatial::Scalar => vec![0],
            Spatial::Grid { height, width } => grid_permutation(group, g, height, width)?,
        };
        let dim = self.rep.dim();
        let mut out = vec![0.0; self.values.len()];
        for c in 0..dim {
            for c2 in 0..dim {
                let w = m[(c, c2)];
                if w == 0.0 {
                    continue;
                }
                for p in 0..size {
                    out[c * size + perm[p]] += w * self.values[c2 * size + p];
                }
            }
        }
        Ok(FeatureField {
            rep: self.rep.clone(),
            spatial: self.spatial,
            values: out,
        })
    }
}

pub fn act_on_field(g: Element, field: &FeatureField) -> Result<FeatureField> {
    field.act(g)
}

/// Applies `rep(g)` to a plain coordinate vector.
pub fn act_on_vector(rep: &Representation, g: Element, v: &[f64]) -> Result<Vec<f64>> {
    Ok(FeatureField::scalar(rep.clone(), v.to_vec())?.act(g)?.into_values())
}

/// Representation description as it appears in config files:
/// `"regular"` or `["trivial", "sign"]` for a direct sum.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RepSpec {
    Single(String),
    Sum(Vec<String>),
}

impl RepSpec {
    pub fn build(&self, group: &Group) -> Result<Representation> {
        let one = |name: &str| -> Result<Representation> {
            match name {
                "trivial" => Ok(Representation::trivial(group)),
                "standard" => Ok(Representation::standard(group)),
                "sign" => Representation::sign(group),
                "regular" => Ok(Representation::regular(group)),
                other => Err(GroupError::UnsupportedRepresentation(format!(
                    "unknown representation name `{other}`"
                ))),
            }
        };
        match self {
            RepSpec::Single(name) => one(name),
            RepSpec::Sum(names) => {
                let reps = names.iter().map(|n| one(n)).collect::<Result<Vec<_>>>()?;
                Representation::direct_sum(&reps)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_reps(group: &Group) -> Vec<Representation> {
        let mut reps = vec![
            Representation::trivial(group),
            Representation::standard(group),
            Representation::regular(group),
        ];
        if let Ok(s) = Representation::sign(group) {
            reps.push(s.clone());
            reps.push(Representation::direct_sum(&[s, Representation::trivial(group)]).unwrap());
        }
        if let Ok(g) = Representation::grid(group, 3, 3) {
            reps.push(g);
        }
        reps
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    #[test]
    fn cyclic_four_has_quarter_turns() {
        let g = Group::cyclic(4).unwrap();
        assert_eq!(g.order(), 4);
        let angles: Vec<f64> = g.elements().map(|e| g.angle(e)).collect();
        for (k, a) in angles.iter().enumerate() {
            assert!((a - k as f64 * PI / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn trivial_group_has_only_identity() {
        let g = Group::cyclic(1).unwrap();
        assert_eq!(g.elements().collect::<Vec<_>>(), vec![Element(0)]);
        assert_eq!(g.compose(Element(0), Element(0)), Element(0));
    }

    #[test]
    fn zero_order_is_rejected() {
        assert_eq!(Group::cyclic(0), Err(GroupError::InvalidOrder(0)));
    }

    #[test]
    fn c8_table_is_a_group() {
        let g = Group::cyclic(8).unwrap();
        for a in g.elements() {
            assert_eq!(g.compose(a, Element(0)), a);
            assert_eq!(g.compose(Element(0), a), a);
            assert_eq!(g.compose(a, g.inverse(a)), Element(0));
            for b in g.elements() {
                let ab = g.compose(a, b);
                assert!(g.contains(ab));
                for c in g.elements() {
                    assert_eq!(g.compose(ab, c), g.compose(a, g.compose(b, c)));
                }
            }
        }
    }

    #[test]
    fn regular_c4_generator_is_cyclic_shift() {
        let g = Group::cyclic(4).unwrap();
        let m = Representation::regular(&g).matrix(Element(1)).unwrap();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(4, 4, &[
            0.0, 0.0, 0.0, 1.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
        ]);
        assert_eq!(m, expected);
    }

    #[test]
    fn standard_c4_quarter_turn() {
        let g = Group::cyclic(4).unwrap();
        let m = Representation::standard(&g).matrix(Element(1)).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
    }

    #[test]
    fn unknown_element_is_rejected() {
        let g = Group::cyclic(4).unwrap();
        let err = Representation::regular(&g).matrix(Element(4)).unwrap_err();
        assert_eq!(err, GroupError::UnknownElement { element: 4, order: 4 });
    }

    #[test]
    fn direct_sum_trivial_sign() {
        let g = Group::reflection();
        let rep = direct_sum(&[Representation::trivial(&g), Representation::sign(&g).unwrap()])
            .unwrap();
        let m = rep.matrix(Element(1)).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        assert_eq!(direct_sum(&[]), Err(GroupError::EmptySum));
    }

    #[test]
    fn direct_sum_rejects_mixed_groups() {
        let a = Representation::trivial(&Group::reflection());
        let b = Representation::trivial(&Group::cyclic(4).unwrap());
        assert!(matches!(
            direct_sum(&[a, b]),
            Err(GroupError::GroupMismatch(_, _))
        ));
    }

    #[test]
    fn regular_plus_regular_is_block_diagonal() {
        let g = Group::cyclic(4).unwrap();
        let r = Representation::regular(&g);
        let sum = Representation::multiple(&r, 2).unwrap();
        assert_eq!(sum.dim(), 8);
        for e in g.elements() {
            let m = sum.matrix(e).unwrap();
            let block = r.matrix(e).unwrap();
            assert_eq!(m.view((0, 0), (4, 4)), block);
            assert_eq!(m.view((4, 4), (4, 4)), block);
            assert!(m.view((0, 4), (4, 4)).iter().all(|&x| x == 0.0));
            assert!(m.view((4, 0), (4, 4)).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn homomorphism_identity_inverse_for_all_reps() {
        for group in [Group::cyclic(4).unwrap(), Group::reflection(), Group::cyclic(8).unwrap()] {
            for rep in all_reps(&group) {
                let id = rep.matrix(group.identity()).unwrap();
                assert_eq!(id, DMatrix::identity(rep.dim(), rep.dim()));
                for a in group.elements() {
                    let ma = rep.matrix(a).unwrap();
                    let inv = rep.matrix(group.inverse(a)).unwrap();
                    assert!(max_abs(&(&ma * &inv - &id)) < 1e-12);
                    for b in group.elements() {
                        let lhs = rep.matrix(group.compose(a, b)).unwrap();
                        let rhs = &ma * rep.matrix(b).unwrap();
                        assert!(max_abs(&(lhs - rhs)) < 1e-12, "{} {a} {b}", rep.label());
                    }
                }
            }
        }
    }

    #[test]
    fn regular_power_n_is_identity() {
        for n in 1..=8 {
            let g = Group::cyclic(n).unwrap();
            let m = Representation::regular(&g).matrix(g.generator()).unwrap();
            let mut acc = DMatrix::identity(n, n);
            for _ in 0..n {
                acc = &m * acc;
            }
            assert_eq!(acc, DMatrix::identity(n, n));
        }
    }

    #[test]
    fn quarter_turn_rotates_pixels_only() {
        let g = Group::cyclic(4).unwrap();
        let values: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let field = FeatureField::new(
            Representation::trivial(&g),
            Spatial::Grid { height: 3, width: 3 },
            values,
        )
        .unwrap();
        let rotated = act_on_field(Element(1), &field).unwrap();
        // 0 1 2      2 5 8
        // 3 4 5  ->  1 4 7
        // 6 7 8      0 3 6
        assert_eq!(
            rotated.values(),
            &[2.0, 5.0, 8.0, 1.0, 4.0, 7.0, 0.0, 3.0, 6.0]
        );
        let mut sorted = rotated.values().to_vec();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, field.values());
    }

    #[test]
    fn regular_c2_swaps_channels() {
        let g = Group::cyclic(2).unwrap();
        let field = FeatureField::scalar(Representation::regular(&g), vec![3.0, -1.0]).unwrap();
        assert_eq!(field.act(Element(1)).unwrap().values(), &[-1.0, 3.0]);
        assert_eq!(field.act(Element(0)).unwrap(), field);
    }

    #[test]
    fn non_square_rotation_is_rejected() {
        let g = Group::cyclic(4).unwrap();
        let field = FeatureField::zeros(
            Representation::trivial(&g),
            Spatial::Grid { height: 2, width: 3 },
        );
        assert!(matches!(
            field.act(Element(1)),
            Err(GroupError::UnsupportedSpatialAction(_))
        ));
        assert!(matches!(
            Representation::grid(&Group::cyclic(3).unwrap(), 3, 3),
            Err(GroupError::UnsupportedSpatialAction(_))
        ));
    }

    #[test]
    fn rep_spec_parses_sums() {
        let g = Group::reflection();
        let spec: RepSpec = serde::Deserialize::deserialize(
            serde::de::value::SeqDeserializer::<_, serde::de::value::Error>::new(
                vec!["trivial", "sign"].into_iter(),
            ),
        )
        .unwrap();
        assert_eq!(spec.build(&g).unwrap().dim(), 2);
        assert!(RepSpec::Single("bogus".into()).build(&g).is_err());
    }

    fn field_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        // (group selector, grid size, values for a regular⊕trivial 2-channel grid)
        (0usize..2, 1usize..6).prop_flat_map(|(gi, n)| {
            let dim = if gi == 0 { 5 } else { 3 };
            (
                Just(gi),
                Just(n),
                proptest::collection::vec(-10.0f64..10.0, dim * n * n),
            )
        })
    }

    proptest! {
        #[test]
        fn action_composes((gi, n, values) in field_strategy()) {
            let group = if gi == 0 { Group::cyclic(4).unwrap() } else { Group::reflection() };
            let rep = direct_sum(&[Representation::regular(&group), Representation::trivial(&group)]).unwrap();
            let field = FeatureField::new(rep, Spatial::Grid { height: n, width: n }, values).unwrap();
            for g in group.elements() {
                for h in group.elements() {
                    let lhs = field.act(h).unwrap().act(g).unwrap();
                    let rhs = field.act(group.compose(g, h)).unwrap();
                    prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
                }
            }
        }
    }
}
