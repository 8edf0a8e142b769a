//! Dense matrix exponential and eigenvalue helpers.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

// Degree-13 Padé coefficients and the matching scaling threshold (Higham 2005).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring around a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegratorFailure(
            "matrix exponential of a non-finite matrix".into(),
        ));
    }
    let norm = norm1(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-s);
    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let v_inner = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::IntegratorFailure("singular Padé denominator".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegratorFailure(
            "matrix exponential overflowed".into(),
        ));
    }
    Ok(r)
}

/// All eigenvalues of a real square matrix, via the real Schur form.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let schur = a
        .clone()
        .try_schur(1e-15, 10_000)
        .ok_or_else(|| Error::EigenFailure("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Eigenvalues of a generator with the (single) zero eigenvalue removed.
pub fn nonzero_generator_eigenvalues(l: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let mut ev = eigenvalues(l)?;
    let zero = ev
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::EigenFailure("empty spectrum".into()))?;
    ev.remove(zero);
    Ok(ev)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Err(Error::EigenFailure("empty matrix".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(1e-15, 10_000)
        .ok_or_else(|| Error::EigenFailure("symmetric eigensolver did not converge".into()))?;
    Ok(eig.eigenvalues.min())
}
