//! Central-difference checks for the tape's backward rules.

use std::sync::Arc;

use super::{ConvGeometry, Matrix, Result, SparseMatrix, Tape, Var};

/// Worst per-entry relative error between the tape gradient of the scalar
/// `f(x)` at `x0` and central differences with step `eps`.
///
/// Entries are compared as `|a − fd| / max(1, |a|, |fd|)`.
pub fn finite_difference_error(f: impl Fn(&Tape, Var) -> Result<Var>, x0: &Matrix, eps: f64) -> Result<f64> {
    let tape = Tape::new();
    let x = tape.constant(x0.clone());
    let y = f(&tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads
        .wrt(x)
        .cloned()
        .unwrap_or_else(|| Matrix::zeros(x0.rows(), x0.cols()));
    let mut worst: f64 = 0.0;
    for i in 0..x0.len() {
        let eval = |delta: f64| -> Result<f64> {
            let mut xp = x0.clone();
            xp.data_mut()[i] += delta;
            let t = Tape::new();
            let v = t.constant(xp);
            let out = f(&t, v)?;
            Ok(t.value(out).item())
        };
        let fd = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - fd).abs() / 1f64.max(a.abs()).max(fd.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Deterministic matrix with entries in [-1, 1).
pub(crate) fn sample_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..rows * cols)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    Matrix::new(rows, cols, data)
}

type Check = (&'static str, Box<dyn Fn(&Tape, Var) -> Result<Var>>, Matrix);

/// Runs [`finite_difference_error`] on a small scalar loss built around each
/// primitive (both operands where it matters) and returns the error per case.
pub fn primitive_gradient_errors() -> Result<Vec<(&'static str, f64)>> {
    let w = sample_matrix(3, 4, 1);
    let bias = sample_matrix(3, 1, 2);
    let other = sample_matrix(4, 2, 3);
    let geom = ConvGeometry {
        in_channels: 2,
        out_channels: 3,
        height: 5,
        width: 5,
        kernel: 3,
        padding: 1,
        stride: 2,
    };
    let kernel = sample_matrix(3, geom.kernel_cols(), 20);
    let image = sample_matrix(geom.input_len(), 2, 21);
    let checks: Vec<Check> = vec![
        ("matmul", Box::new(move |t: &Tape, x| {
            let wv = t.constant(w.clone());
            Ok(t.sum(t.tanh(t.matmul(wv, x)?)))
        }), sample_matrix(4, 2, 4)),
        ("matmul-rhs", Box::new(move |t: &Tape, x| {
            let o = t.constant(other.clone());
            Ok(t.sum(t.sigmoid(t.matmul(x, o)?)))
        }), sample_matrix(3, 4, 5)),
        ("add-broadcast", Box::new(move |t: &Tape, x| {
            let b = t.constant(bias.clone());
            let y = t.add(x, b)?;
            Ok(t.sum(t.hadamard(y, y)?))
        }), sample_matrix(3, 5, 6)),
        ("sub-broadcast-operand", Box::new(|t: &Tape, b| {
            let x = t.constant(sample_matrix(3, 4, 7));
            let y = t.sub(x, b)?;
            Ok(t.mean(t.hadamard(y, y)?))
        }), sample_matrix(3, 1, 8)),
        ("scale-exp", Box::new(|t: &Tape, x| Ok(t.sum(t.exp(t.scale(x, 0.7))))), sample_matrix(2, 3, 9)),
        ("relu", Box::new(|t: &Tape, x| {
            let y = t.relu(x);
            Ok(t.sum(t.hadamard(y, y)?))
        }), sample_matrix(4, 3, 10)),
        ("log-softmax-gather", Box::new(|t: &Tape, x| {
            let l = t.log_softmax(x);
            Ok(t.mean(t.gather(l, &[0, 2, 1])?))
        }), sample_matrix(3, 3, 11)),
        ("entropy", Box::new(|t: &Tape, x| {
            let l = t.log_softmax(x);
            let p = t.exp(l);
            Ok(t.scale(t.sum(t.hadamard(p, l)?), -1.0))
        }), sample_matrix(4, 2, 12)),
        ("concat-slice", Box::new(|t: &Tape, x| {
            let top = t.slice_rows(x, 0, 2)?;
            let bottom = t.slice_rows(x, 2, 2)?;
            let c = t.concat(&[t.tanh(bottom), t.sigmoid(top), x])?;
            Ok(t.sum(t.hadamard(c, c)?))
        }), sample_matrix(4, 3, 13)),
        ("reshape", Box::new(|t: &Tape, x| {
            let r = t.reshape(x, 2, 3)?;
            let v = t.constant(sample_matrix(3, 1, 14));
            Ok(t.sum(t.tanh(t.matmul(r, v)?)))
        }), sample_matrix(6, 1, 15)),
        ("sparse-linear", Box::new(|t: &Tape, x| {
            let s = Arc::new(SparseMatrix::new(3, 4, vec![(0, 0, 1.5), (1, 3, -2.0), (2, 1, 0.5), (2, 2, 1.0), (0, 3, 0.25)]));
            let y = t.sparse_linear(&s, x)?;
            Ok(t.sum(t.tanh(y)))
        }), sample_matrix(4, 2, 16)),
        ("conv2d-input", Box::new({
            let kernel = kernel.clone();
            move |t: &Tape, x| {
                let k = t.constant(kernel.clone());
                Ok(t.sum(t.tanh(t.conv2d(x, k, geom)?)))
            }
        }), image.clone()),
        ("conv2d-kernel", Box::new(move |t: &Tape, k| {
            let x = t.constant(image.clone());
            Ok(t.sum(t.tanh(t.conv2d(x, k, geom)?)))
        }), kernel),
    ];
    checks
        .into_iter()
        .map(|(name, f, x0)| Ok((name, finite_difference_error(f, &x0, 1e-5)?)))
        .collect()
}
