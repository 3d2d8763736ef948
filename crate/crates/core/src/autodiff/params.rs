use std::fmt::Write as _;

use super::{AutodiffError, Matrix, Result};

/// First line of every checkpoint file.
pub const CHECKPOINT_HEADER: &str = "equipomdp-params v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Param {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

/// Named, shaped parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> Result<ParamId> {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(AutodiffError::Checkpoint(format!(
                "parameter name `{name}` must be non-empty without whitespace"
            )));
        }
        if self.params.iter().any(|p| p.name == name) {
            return Err(AutodiffError::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        if values.len() != rows * cols {
            return Err(AutodiffError::Shape {
                op: "param",
                lhs: (rows, cols),
                rhs: (values.len(), 1),
            });
        }
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            values,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let p = &self.params[id.0];
        (p.rows, p.cols)
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].values
    }

    pub fn matrix(&self, id: ParamId) -> Matrix {
        let p = &self.params[id.0];
        Matrix::new(p.rows, p.cols, p.values.clone())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Plain-text checkpoint:
    ///
    /// ```text
    /// equipomdp-params v1
    /// <count>
    /// param <name> <rows> <cols>
    /// <values separated by spaces>
    /// ```
    ///
    /// Values use the shortest round-trip decimal form, so save/load is exact.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_HEADER}").unwrap();
        writeln!(s, "{}", self.params.len()).unwrap();
        for p in &self.params {
            writeln!(s, "param {} {} {}", p.name, p.rows, p.cols).unwrap();
            let line: Vec<String> = p.values.iter().map(|v| format!("{v:?}")).collect();
            writeln!(s, "{}", line.join(" ")).unwrap();
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: String| AutodiffError::Checkpoint(msg);
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CHECKPOINT_HEADER => {}
            other => return Err(bad(format!("unexpected header {other:?}"))),
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| bad("missing parameter count".into()))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let head = lines.next().ok_or_else(|| bad("truncated checkpoint".into()))?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            let [tag, name, rows, cols] = parts[..] else {
                return Err(bad(format!("malformed parameter line `{head}`")));
            };
            if tag != "param" {
                return Err(bad(format!("malformed parameter line `{head}`")));
            }
            let rows: usize = rows.parse().map_err(|_| bad(format!("bad rows in `{head}`")))?;
            let cols: usize = cols.parse().map_err(|_| bad(format!("bad cols in `{head}`")))?;
            let body = lines.next().unwrap_or("");
            let values = body
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            store.add(name, rows, cols, values)?;
        }
        Ok(store)
    }

    /// Copies values from `other`, which must have the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "checkpoint has {} parameters, network has {}",
                other.params.len(),
                self.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || (dst.rows, dst.cols) != (src.rows, src.cols) {
                return Err(AutodiffError::Checkpoint(format!(
                    "parameter `{}` {}x{} does not match `{}` {}x{}",
                    src.name, src.rows, src.cols, dst.name, dst.rows, dst.cols
                )));
            }
            dst.values.clone_from(&src.values);
        }
        Ok(())
    }
}

/// One gradient buffer per parameter of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(store: &ParamStore) -> Self {
        Self {
            grads: store.params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_slice()))
    }

    pub fn norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}
